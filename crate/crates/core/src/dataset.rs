//! Phase-indexed feature-map datasets.
//!
//! On disk a dataset is a directory holding `manifest.json` and one
//! `phase_NNN.bifm` file per phase. Each `.bifm` file is:
//!
//! ```text
//! "BIFM"  u16 version  u32 record_count
//! record_count x { u16 id_len, id (UTF-8), u8 ndim, ndim x u32 dim, f32 payload }
//! ```
//!
//! All integers and floats are little-endian. Values are stored as f32 and
//! widened to f64 on load.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::Space;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BIFM_MAGIC: &[u8; 4] = b"BIFM";
pub const BIFM_VERSION: u16 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// One module output for one sample at one training phase.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub sample_id: String,
    pub phase: u32,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub module_tag: String,
    pub space: Space,
    pub shape: Vec<usize>,
    pub phases: Vec<u32>,
    pub sample_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    pub module_tag: String,
    pub space: Space,
    /// Per-sample shape: `[C, H, W]` for 3d, `[Cam, C, H, W]` for 2d.
    pub shape: Vec<usize>,
    /// Phase index -> feature maps sorted by sample id.
    phases: BTreeMap<u32, Vec<FeatureMap>>,
}

pub fn check_space_shape(space: Space, shape: &[usize]) -> Result<()> {
    let want = match space {
        Space::Bev => 3,
        Space::Image => 4,
    };
    if shape.len() != want || shape.contains(&0) {
        return Err(Error::Config(format!(
            "{space} features need a {want}-axis shape with positive dims, got {shape:?}"
        )));
    }
    Ok(())
}

impl FeatureDataset {
    pub fn new(module_tag: impl Into<String>, space: Space, shape: Vec<usize>) -> Result<Self> {
        check_space_shape(space, &shape)?;
        Ok(Self {
            module_tag: module_tag.into(),
            space,
            shape,
            phases: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, map: FeatureMap) -> Result<()> {
        map.tensor
            .expect_shape(&format!("feature map {} phase {}", map.sample_id, map.phase), &self.shape)?;
        let list = self.phases.entry(map.phase).or_default();
        match list.binary_search_by(|m| m.sample_id.as_str().cmp(&map.sample_id)) {
            Ok(_) => Err(Error::DuplicateKey(format!(
                "feature map ({}, phase {})",
                map.sample_id, map.phase
            ))),
            Err(pos) => {
                list.insert(pos, map);
                Ok(())
            }
        }
    }

    pub fn phases(&self) -> Vec<u32> {
        self.phases.keys().copied().collect()
    }

    pub fn phase(&self, phase: u32) -> &[FeatureMap] {
        self.phases.get(&phase).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureMap> {
        self.phases.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.phases.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_ids(&self) -> BTreeSet<String> {
        self.iter().map(|m| m.sample_id.clone()).collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: MANIFEST_VERSION,
            module_tag: self.module_tag.clone(),
            space: self.space,
            shape: self.shape.clone(),
            phases: self.phases(),
            sample_ids: self.sample_ids().into_iter().collect(),
        }
    }
}

pub fn phase_file_name(phase: u32) -> String {
    format!("phase_{phase:03}.bifm")
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn write_phase_file(path: &Path, maps: &[FeatureMap]) -> Result<()> {
    let file = fs::File::create(path).map_err(Error::io(path))?;
    let mut out = BufWriter::new(file);
    let count = u32::try_from(maps.len()).map_err(|_| format_err(path, "too many records"))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(BIFM_MAGIC);
    buf.extend_from_slice(&BIFM_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for m in maps {
        let id = m.sample_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| format_err(path, "sample id longer than 65535 bytes"))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        let shape = m.tensor.shape();
        buf.push(u8::try_from(shape.len()).map_err(|_| format_err(path, "too many dims"))?);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| format_err(path, "dimension exceeds u32"))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &v in m.tensor.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf).map_err(Error::io(path))?;
        buf.clear();
    }
    out.flush().map_err(Error::io(path))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Reads one phase file. Records come back in file order.
pub fn read_phase_file(path: &Path, phase: u32) -> Result<Vec<FeatureMap>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(Error::io(path))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    if cur.take(4)? != BIFM_MAGIC {
        return Err(format_err(path, "bad magic, expected BIFM"));
    }
    let version = cur.u16()?;
    if version != BIFM_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut maps = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = cur.u16()? as usize;
        let sample_id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|_| format_err(path, "sample id is not UTF-8"))?
            .to_string();
        let ndim = cur.u8()? as usize;
        let shape = (0..ndim).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = cur.take(n * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| e.context(format!("record {sample_id}")))?;
        maps.push(FeatureMap { sample_id, phase, tensor });
    }
    if cur.pos != bytes.len() {
        return Err(format_err(path, "trailing bytes after last record"));
    }
    Ok(maps)
}

pub fn write_dataset(dir: impl AsRef<Path>, ds: &FeatureDataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&ds.manifest()).map_err(Error::json(&manifest_path))?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(Error::io(&manifest_path))?;
    for phase in ds.phases() {
        write_phase_file(&dir.join(phase_file_name(phase)), ds.phase(phase))?;
    }
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path: PathBuf = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(Error::json(&path))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(format_err(&path, format!("unsupported manifest version {}", manifest.version)));
    }
    check_space_shape(manifest.space, &manifest.shape)?;
    Ok(manifest)
}

/// Loads a dataset directory. Every phase must hold exactly the manifest's
/// sample ids, each with the manifest's shape.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<FeatureDataset> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let expected: BTreeSet<&str> = manifest.sample_ids.iter().map(String::as_str).collect();
    if expected.len() != manifest.sample_ids.len() {
        return Err(Error::DuplicateKey("sample id listed twice in manifest".into()));
    }
    let mut ds = FeatureDataset::new(&manifest.module_tag, manifest.space, manifest.shape.clone())?;
    for &phase in &manifest.phases {
        let path = dir.join(phase_file_name(phase));
        let maps = read_phase_file(&path, phase)?;
        let got: BTreeSet<&str> = maps.iter().map(|m| m.sample_id.as_str()).collect();
        let missing: Vec<String> = expected.difference(&got).map(|s| s.to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::missing(format!("features in phase {phase}"), missing));
        }
        let extra: Vec<String> = got.difference(&expected).map(|s| s.to_string()).collect();
        if !extra.is_empty() {
            return Err(Error::missing(format!("manifest entries for phase {phase} records"), extra));
        }
        for m in maps {
            ds.insert(m)?;
        }
    }
    Ok(ds)
}
