//! Ground-truth scene annotations and their JSON file format.

mod text;

pub use text::{text_serialize_2d, text_serialize_3d};

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CAMERAS: usize = 6;

/// An obstacle in the ego/BEV frame. Positions and sizes in meters, yaw in
/// radians within (-pi, pi], velocity in m/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub category: String,
}

/// A perspective-view box on one camera, in normalized image coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub camera_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub bw: f64,
    pub bh: f64,
    pub category: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtScene {
    pub sample_id: String,
    #[serde(default = "default_cameras")]
    pub cameras: usize,
    #[serde(default)]
    pub boxes3d: Vec<Box3D>,
    #[serde(default)]
    pub boxes2d: Vec<Box2D>,
}

fn default_cameras() -> usize {
    DEFAULT_CAMERAS
}

type FieldError = (String, String);

fn finite(field: String, v: f64) -> Result<(), FieldError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err((field, format!("value {v} is not finite")))
    }
}

impl Box3D {
    fn validate(&self, prefix: &str) -> Result<(), FieldError> {
        for (name, v) in [
            ("x", self.x),
            ("y", self.y),
            ("z", self.z),
            ("l", self.l),
            ("w", self.w),
            ("h", self.h),
            ("yaw", self.yaw),
            ("vx", self.vx),
            ("vy", self.vy),
        ] {
            finite(format!("{prefix}.{name}"), v)?;
        }
        for (name, v) in [("l", self.l), ("w", self.w), ("h", self.h)] {
            if v <= 0.0 {
                return Err((format!("{prefix}.{name}"), format!("size {v} must be positive")));
            }
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err((
                format!("{prefix}.yaw"),
                format!("value {} outside (-pi, pi]", self.yaw),
            ));
        }
        if self.category.is_empty() {
            return Err((format!("{prefix}.category"), "empty category".into()));
        }
        Ok(())
    }
}

impl Box2D {
    fn validate(&self, prefix: &str, cameras: usize) -> Result<(), FieldError> {
        if self.camera_id >= cameras {
            return Err((
                format!("{prefix}.camera_id"),
                format!("camera {} out of range for {cameras} cameras", self.camera_id),
            ));
        }
        for (name, v) in [("cx", self.cx), ("cy", self.cy), ("bw", self.bw), ("bh", self.bh)] {
            if !(0.0..=1.0).contains(&v) {
                return Err((format!("{prefix}.{name}"), format!("value {v} outside [0, 1]")));
            }
        }
        for (name, v) in [("bw", self.bw), ("bh", self.bh)] {
            if v <= 0.0 {
                return Err((format!("{prefix}.{name}"), format!("size {v} must be positive")));
            }
        }
        if self.category.is_empty() {
            return Err((format!("{prefix}.category"), "empty category".into()));
        }
        Ok(())
    }
}

impl GtScene {
    pub fn new(sample_id: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            cameras: DEFAULT_CAMERAS,
            boxes3d: Vec::new(),
            boxes2d: Vec::new(),
        }
    }

    /// Checks every field invariant, returning the offending field path.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.sample_id.is_empty() {
            return Err(("sample_id".into(), "empty sample id".into()));
        }
        if self.cameras == 0 {
            return Err(("cameras".into(), "camera count must be positive".into()));
        }
        for (i, b) in self.boxes3d.iter().enumerate() {
            b.validate(&format!("boxes3d[{i}]"))?;
        }
        for (i, b) in self.boxes2d.iter().enumerate() {
            b.validate(&format!("boxes2d[{i}]"), self.cameras)?;
        }
        Ok(())
    }
}

/// Validates a list of scenes: field invariants and unique sample ids.
pub fn validate_scenes(scenes: &[GtScene]) -> Result<()> {
    let mut seen = HashSet::new();
    for (index, scene) in scenes.iter().enumerate() {
        scene
            .validate()
            .map_err(|(field, message)| Error::InvalidRecord { index, field, message })?;
        if !seen.insert(scene.sample_id.as_str()) {
            return Err(Error::DuplicateKey(format!("sample_id {:?} (record {index})", scene.sample_id)));
        }
    }
    Ok(())
}

pub fn parse_gt_str(text: &str, path: &Path) -> Result<Vec<GtScene>> {
    let records: Vec<serde_json::Value> = serde_json::from_str(text).map_err(Error::json(path))?;
    let mut scenes = Vec::with_capacity(records.len());
    for (index, record) in records.into_iter().enumerate() {
        let scene: GtScene = serde_json::from_value(record).map_err(|e| Error::InvalidRecord {
            index,
            field: serde_field(&e),
            message: e.to_string(),
        })?;
        scenes.push(scene);
    }
    validate_scenes(&scenes)?;
    Ok(scenes)
}

/// Pulls the backtick-quoted field name out of a serde error, if present.
fn serde_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`').nth(1).unwrap_or("<record>").to_string()
}

pub fn parse_gt_file(path: impl AsRef<Path>) -> Result<Vec<GtScene>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_gt_str(&text, path)
}

pub fn write_gt_file(path: impl AsRef<Path>, scenes: &[GtScene]) -> Result<()> {
    let path = path.as_ref();
    validate_scenes(scenes)?;
    let mut text = serde_json::to_string_pretty(scenes).map_err(Error::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}
