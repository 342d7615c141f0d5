//! GT representations: a signed feature-hashing text embedder and the JSON
//! Lines interchange format for externally computed embeddings.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::digest::fnv1a64;
use crate::error::{Error, Result};
use crate::gt::{text_serialize_2d, text_serialize_3d, GtScene};
use crate::tensor::Tensor;

/// Width of the shared representation space.
pub const REPR_DIM: usize = 768;

/// Model name recorded for vectors produced by [`HashEmbedder`].
pub const HASH_MODEL_NAME: &str = "builtin-hash";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Space {
    /// Perspective view: one row per camera.
    #[serde(rename = "2d")]
    Image,
    /// BEV: a single row.
    #[serde(rename = "3d")]
    Bev,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Image => "2d",
            Space::Bev => "3d",
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d" => Ok(Space::Image),
            "3d" => Ok(Space::Bev),
            other => Err(Error::Config(format!("unknown space {other:?}, expected 2d or 3d"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingSource {
    BuiltinHash,
    External,
    /// Produced by the feature-map encoder.
    Encoder,
}

/// A `K × dim` stack of vectors for one sample in one space.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub sample_id: String,
    pub space: Space,
    pub source: EmbeddingSource,
    pub model: String,
    vectors: Tensor,
}

impl Representation {
    pub fn new(
        sample_id: impl Into<String>,
        space: Space,
        source: EmbeddingSource,
        model: impl Into<String>,
        vectors: Tensor,
    ) -> Result<Self> {
        if vectors.shape().len() != 2 {
            return Err(Error::shape("representation [K, dim]", &[0, 0], vectors.shape()));
        }
        if space == Space::Bev && vectors.shape()[0] != 1 {
            return Err(Error::shape("3d representation", &[1, vectors.shape()[1]], vectors.shape()));
        }
        Ok(Self {
            sample_id: sample_id.into(),
            space,
            source,
            model: model.into(),
            vectors,
        })
    }

    pub fn rows(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.vectors.data()[k * d..(k + 1) * d]
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Signed feature hashing: each token's FNV-1a hash picks a bucket
/// (`hash % dim`) and a sign (top bit clear: +1, set: -1). The summed vector is
/// L2-normalized.
pub fn hash_embed(text: &str, dim: usize) -> Result<Vec<f64>> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::DegenerateText(text.to_string()));
    }
    let mut v = vec![0.0; dim];
    for tok in &tokens {
        let h = fnv1a64(tok.as_bytes());
        let bucket = (h % dim as u64) as usize;
        v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every token cancelled out against another in the same bucket
        return Err(Error::DegenerateText(text.to_string()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Maps sentences to fixed-width vectors.
pub trait TextEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
    fn model_name(&self) -> &str;
    fn source(&self) -> EmbeddingSource;
}

#[derive(Clone, Copy, Debug)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: REPR_DIM }
    }
}

impl TextEmbedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        hash_embed(text, self.dim)
    }

    fn model_name(&self) -> &str {
        HASH_MODEL_NAME
    }

    fn source(&self) -> EmbeddingSource {
        EmbeddingSource::BuiltinHash
    }
}

/// Embeds a scene's sentence(s): one row for 3d, one row per camera for 2d.
pub fn embed_scene(scene: &GtScene, space: Space, provider: &dyn TextEmbedder) -> Result<Representation> {
    let texts = match space {
        Space::Bev => vec![text_serialize_3d(scene)],
        Space::Image => (0..scene.cameras)
            .map(|c| text_serialize_2d(scene, c))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut data = Vec::new();
    let mut dim = 0;
    for text in &texts {
        let v = provider
            .embed(text)
            .map_err(|e| e.context(format!("embedding sample {}", scene.sample_id)))?;
        dim = v.len();
        data.extend(v);
    }
    let vectors = Tensor::new(vec![texts.len(), dim], data)?;
    Representation::new(&scene.sample_id, space, provider.source(), provider.model_name(), vectors)
}

/// GT representations keyed by sample id, all in one space.
pub type RepresentationMap = BTreeMap<String, Representation>;

pub fn embed_scenes(scenes: &[GtScene], space: Space, provider: &dyn TextEmbedder) -> Result<RepresentationMap> {
    scenes
        .iter()
        .map(|s| Ok((s.sample_id.clone(), embed_scene(s, space, provider)?)))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct InterchangeRecord {
    sample_id: String,
    space: Space,
    model: String,
    vectors: Vec<Vec<f64>>,
}

/// Writes the JSON Lines interchange file, sorted by (sample_id, space).
/// Floats use the shortest representation that round-trips exactly.
pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    reps: impl IntoIterator<Item = &'a Representation>,
) -> Result<()> {
    let path = path.as_ref();
    let mut reps: Vec<&Representation> = reps.into_iter().collect();
    reps.sort_by(|a, b| (&a.sample_id, a.space).cmp(&(&b.sample_id, b.space)));
    let file = fs::File::create(path).map_err(Error::io(path))?;
    let mut out = BufWriter::new(file);
    for rep in reps {
        let record = InterchangeRecord {
            sample_id: rep.sample_id.clone(),
            space: rep.space,
            model: rep.model.clone(),
            vectors: (0..rep.rows()).map(|k| rep.row(k).to_vec()).collect(),
        };
        serde_json::to_writer(&mut out, &record).map_err(Error::json(path))?;
        out.write_all(b"\n").map_err(Error::io(path))?;
    }
    out.flush().map_err(Error::io(path))
}

/// Loads an interchange file into a map keyed by `(sample_id, space)`.
pub fn load_external_embeddings(path: impl AsRef<Path>) -> Result<BTreeMap<(String, Space), Representation>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(Error::io(path))?;
    let mut map = BTreeMap::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InterchangeRecord = serde_json::from_str(&line).map_err(|e| Error::InvalidRecord {
            index,
            field: e.to_string().split('`').nth(1).unwrap_or("<record>").to_string(),
            message: e.to_string(),
        })?;
        if rec.vectors.is_empty() {
            return Err(Error::InvalidRecord {
                index,
                field: "vectors".into(),
                message: format!("sample {} has no vectors", rec.sample_id),
            });
        }
        let mut data = Vec::with_capacity(rec.vectors.len() * REPR_DIM);
        for row in &rec.vectors {
            if row.len() != REPR_DIM {
                return Err(Error::EmbeddingDimension {
                    sample_id: rec.sample_id.clone(),
                    expected: REPR_DIM,
                    actual: row.len(),
                });
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::DegenerateVector {
                    context: format!("embedding row of sample {}", rec.sample_id),
                    norm: 0.0,
                    eps: 0.0,
                });
            }
            data.extend_from_slice(row);
        }
        let source = if rec.model == HASH_MODEL_NAME {
            EmbeddingSource::BuiltinHash
        } else {
            EmbeddingSource::External
        };
        let vectors = Tensor::new(vec![rec.vectors.len(), REPR_DIM], data)?;
        let rep = Representation::new(&rec.sample_id, rec.space, source, rec.model, vectors)
            .map_err(|e| e.context(format!("record {index}")))?;
        let key = (rec.sample_id, rec.space);
        if map.contains_key(&key) {
            return Err(Error::DuplicateKey(format!("embedding ({}, {})", key.0, key.1)));
        }
        map.insert(key, rep);
    }
    Ok(map)
}

/// Selects the representations of one space from a loaded interchange map.
pub fn select_space(map: BTreeMap<(String, Space), Representation>, space: Space) -> RepresentationMap {
    map.into_iter()
        .filter(|((_, s), _)| *s == space)
        .map(|((id, _), rep)| (id, rep))
        .collect()
}
