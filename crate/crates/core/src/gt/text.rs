//! Deterministic sentence templates for scene annotations.
//!
//! 3D objects: `{category} at ({x:.1}, {y:.1}, {z:.1}), size ({l:.1}, {w:.1}, {h:.1}),
//! yaw {yaw:.2}, velocity ({vx:.1}, {vy:.1}).` sorted by category, x, y.
//! 2D boxes: `{category} at ({cx:.3}, {cy:.3}), size ({bw:.3}, {bh:.3}).` sorted by
//! category, cx, cy. Both are prefixed with `There are {n} objects.`
//! Remaining fields break ties so the output never depends on input order.

use std::cmp::Ordering;
use std::fmt::Write;

use super::{Box2D, Box3D, GtScene};
use crate::error::{Error, Result};

fn cmp_keys(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn key3(b: &Box3D) -> [f64; 9] {
    [b.x, b.y, b.z, b.l, b.w, b.h, b.yaw, b.vx, b.vy]
}

fn key2(b: &Box2D) -> [f64; 4] {
    [b.cx, b.cy, b.bw, b.bh]
}

fn header(n: usize) -> String {
    format!("There are {n} objects.")
}

pub fn text_serialize_3d(scene: &GtScene) -> String {
    let mut boxes: Vec<&Box3D> = scene.boxes3d.iter().collect();
    boxes.sort_by(|a, b| a.category.cmp(&b.category).then_with(|| cmp_keys(&key3(a), &key3(b))));
    let mut out = header(boxes.len());
    for b in boxes {
        write!(
            out,
            " {} at ({:.1}, {:.1}, {:.1}), size ({:.1}, {:.1}, {:.1}), yaw {:.2}, velocity ({:.1}, {:.1}).",
            b.category, b.x, b.y, b.z, b.l, b.w, b.h, b.yaw, b.vx, b.vy
        )
        .unwrap();
    }
    out
}

pub fn text_serialize_2d(scene: &GtScene, camera_id: usize) -> Result<String> {
    if camera_id >= scene.cameras {
        return Err(Error::InvalidRecord {
            index: camera_id,
            field: "camera_id".into(),
            message: format!(
                "camera {camera_id} out of range for scene {} with {} cameras",
                scene.sample_id, scene.cameras
            ),
        });
    }
    let mut boxes: Vec<&Box2D> = scene.boxes2d.iter().filter(|b| b.camera_id == camera_id).collect();
    boxes.sort_by(|a, b| a.category.cmp(&b.category).then_with(|| cmp_keys(&key2(a), &key2(b))));
    let mut out = header(boxes.len());
    for b in boxes {
        write!(
            out,
            " {} at ({:.3}, {:.3}), size ({:.3}, {:.3}).",
            b.category, b.cx, b.cy, b.bw, b.bh
        )
        .unwrap();
    }
    Ok(out)
}
