//! Synthetic scenes, phase-indexed features with a controllable maturity
//! schedule, and surrogate metric series.
//!
//! Each sample gets a target tensor `T_s`: its centered GT representation
//! pushed through a fixed random projection and scaled to unit RMS. The
//! phase-`p` feature is `a_p * T_s + (1 - a_p) * eps + sigma * eta` with
//! unit-RMS Gaussian noise `eps` (shaped like a target, see [`gen_features`])
//! and `eta` (white), so GT information grows with the schedule `a_p`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureDataset, FeatureMap};
use crate::embedding::{embed_scene, HashEmbedder, Representation, RepresentationMap, Space};
use crate::error::{Error, Result};
use crate::gt::{Box2D, Box3D, GtScene};
use crate::scoring::MetricSeries;
use crate::tensor::{dot, Tensor};

pub const CATEGORIES: [&str; 10] = [
    "barrier",
    "bicycle",
    "bus",
    "car",
    "construction_vehicle",
    "motorcycle",
    "pedestrian",
    "traffic_cone",
    "trailer",
    "truck",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_phases: usize,
    pub bev_shape: [usize; 3],
    /// `[Cam, C, H, W]`; `Cam` also sets the scenes' camera count.
    pub image_shape: [usize; 4],
    /// Maturity per phase, strictly increasing in [0, 1]. `None` means linear from 0 to 1.
    pub schedule: Option<Vec<f64>>,
    pub noise_sigma: f64,
    pub map_range: [f64; 2],
    pub nds_range: [f64; 2],
    /// Half-width of the uniform jitter added to each metric value.
    pub metric_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 48,
            n_phases: 8,
            bev_shape: [32, 8, 8],
            image_shape: [2, 32, 6, 8],
            schedule: None,
            noise_sigma: 0.1,
            map_range: [0.10, 0.40],
            nds_range: [0.15, 0.50],
            metric_jitter: 0.005,
        }
    }
}

impl SynthConfig {
    /// The maturity schedule, validated.
    pub fn alphas(&self) -> Result<Vec<f64>> {
        let alphas = match &self.schedule {
            Some(s) => s.clone(),
            None if self.n_phases == 1 => vec![1.0],
            None => (0..self.n_phases)
                .map(|p| p as f64 / (self.n_phases - 1) as f64)
                .collect(),
        };
        if alphas.len() != self.n_phases || self.n_phases == 0 {
            return Err(Error::Config(format!(
                "schedule has {} entries for {} phases",
                alphas.len(),
                self.n_phases
            )));
        }
        if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) || alphas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("schedule must be strictly increasing within [0, 1]".into()));
        }
        Ok(alphas)
    }

    pub fn validate(&self) -> Result<()> {
        self.alphas()?;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        if self.bev_shape.contains(&0) || self.image_shape.contains(&0) {
            return Err(Error::Config("feature shapes must have positive dims".into()));
        }
        if !(self.metric_jitter.is_finite() && self.metric_jitter >= 0.0) {
            return Err(Error::Config("metric jitter must be >= 0".into()));
        }
        Ok(())
    }

    pub fn feature_shape(&self, space: Space) -> Vec<usize> {
        match space {
            Space::Bev => self.bev_shape.to_vec(),
            Space::Image => self.image_shape.to_vec(),
        }
    }

    /// Phase indices, starting at 1.
    pub fn phases(&self) -> Vec<u32> {
        (1..=self.n_phases as u32).collect()
    }
}

/// Per-(sample, phase, stream) RNG, independent of generation order.
fn derived_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    // splitmix64 finalizer over each part
    let mut h = seed;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

const STREAM_SCENE: u64 = 1;
const STREAM_PROJECTION: u64 = 2;
const STREAM_SIGNAL_NOISE: u64 = 3;
const STREAM_EXTRA_NOISE: u64 = 4;
const STREAM_METRICS: u64 = 5;
const STREAM_DISTRACTORS: u64 = 6;

/// Lower bound on the distractor pool behind the phase noise.
const MIN_DISTRACTORS: usize = 8;

pub fn sample_id(index: usize) -> String {
    format!("sample-{index:04}")
}

pub fn gen_scenes(config: &SynthConfig, seed: u64) -> Vec<GtScene> {
    let cameras = config.image_shape[0];
    (0..config.n_samples)
        .map(|i| {
            let mut rng = derived_rng(seed, &[STREAM_SCENE, i as u64]);
            let mut scene = GtScene::new(sample_id(i));
            scene.cameras = cameras;
            let n = rng.random_range(1..=6);
            for _ in 0..n {
                let category = CATEGORIES[rng.random_range(0..CATEGORIES.len())].to_string();
                let x: f64 = rng.random_range(-40.0..40.0);
                let y: f64 = rng.random_range(-40.0..40.0);
                let mut yaw: f64 = rng.random_range(-PI..PI);
                if yaw <= -PI {
                    yaw = PI;
                }
                let b = Box3D {
                    x,
                    y,
                    z: rng.random_range(-2.0..1.0),
                    l: rng.random_range(0.5..12.0),
                    w: rng.random_range(0.5..3.0),
                    h: rng.random_range(0.8..4.0),
                    yaw,
                    vx: rng.random_range(-10.0..10.0),
                    vy: rng.random_range(-10.0..10.0),
                    category: category.clone(),
                };
                // the camera whose azimuth sector contains the object
                let sector = ((y.atan2(x) + PI) / (2.0 * PI) * cameras as f64) as usize;
                scene.boxes2d.push(Box2D {
                    camera_id: sector.min(cameras - 1),
                    cx: rng.random_range(0.05..0.95),
                    cy: rng.random_range(0.05..0.95),
                    bw: rng.random_range(0.02..0.3),
                    bh: rng.random_range(0.02..0.3),
                    category,
                });
                scene.boxes3d.push(b);
            }
            scene
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn scale_to_unit_rms(v: &mut [f64]) {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    if rms > 0.0 {
        v.iter_mut().for_each(|x| *x /= rms);
    }
}

/// Projects every GT row of `rep`, minus `mean`, into one view-major target.
fn project(rep: &Representation, mean: &[f64], projection: &[f64], view_len: usize) -> Vec<f64> {
    let dim = rep.dim();
    let mut out = vec![0.0; rep.rows() * view_len];
    for c in 0..rep.rows() {
        let r: Vec<f64> = rep.row(c).iter().zip(&mean[c * dim..]).map(|(v, m)| v - m).collect();
        for (j, t) in out[c * view_len..(c + 1) * view_len].iter_mut().enumerate() {
            *t = dot(&projection[j * dim..(j + 1) * dim], &r);
        }
    }
    out
}

/// Builds the feature dataset for every phase of the schedule.
///
/// Hash embeddings of templated sentences share most of their mass, so raw
/// projections would make every target nearly the same tensor. Targets are
/// therefore projected after subtracting the mean GT row of a pool of
/// distractor scenes drawn from the same generator.
///
/// The noise `eps` is a Gaussian combination of the distractors' targets: it
/// is independent of the dataset's GT but statistically indistinguishable
/// from a target, so an immature feature looks like some other scene rather
/// than like white noise the encoder could filter out by its spectrum.
pub fn gen_features(
    config: &SynthConfig,
    space: Space,
    module_tag: &str,
    scenes: &[GtScene],
    gt_reps: &RepresentationMap,
    seed: u64,
) -> Result<FeatureDataset> {
    config.validate()?;
    let alphas = config.alphas()?;
    let shape = config.feature_shape(space);
    let (views, view_len) = match space {
        Space::Bev => (1, shape.iter().product::<usize>()),
        Space::Image => (shape[0], shape[1..].iter().product::<usize>()),
    };
    let missing: Vec<String> = scenes
        .iter()
        .filter(|s| !gt_reps.contains_key(&s.sample_id))
        .map(|s| s.sample_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::missing("GT representation", missing));
    }
    let mut ds = FeatureDataset::new(module_tag, space, shape.clone())?;
    if scenes.is_empty() {
        return Ok(ds);
    }
    let reps: Vec<&Representation> = scenes.iter().map(|s| &gt_reps[&s.sample_id]).collect();
    let dim = reps[0].dim();
    if let Some(bad) = reps.iter().find(|r| r.rows() != views || r.dim() != dim) {
        return Err(Error::shape(
            format!("GT representation of {}", bad.sample_id),
            &[views, dim],
            bad.vectors().shape(),
        ));
    }

    let distractor_cfg = SynthConfig { n_samples: scenes.len().max(MIN_DISTRACTORS), ..config.clone() };
    let distractor_seed = derived_rng(seed, &[STREAM_DISTRACTORS]).random::<u64>();
    let distractor_scenes = gen_scenes(&distractor_cfg, distractor_seed);
    let distractors: Vec<Representation> = distractor_scenes
        .iter()
        .map(|s| embed_scene(s, space, &HashEmbedder { dim }))
        .collect::<Result<_>>()?;

    // the distractors' mean stands in for the population mean; using the
    // dataset's own would leak its GT into the noise
    let mut mean = vec![0.0; views * dim];
    for r in &distractors {
        for (m, v) in mean.iter_mut().zip(r.vectors().data()) {
            *m += v / distractors.len() as f64;
        }
    }
    let projection = gaussian(&mut derived_rng(seed, &[STREAM_PROJECTION]), view_len * dim);
    let unit = |mut v: Vec<f64>| {
        scale_to_unit_rms(&mut v);
        v
    };
    let distractor_targets: Vec<Vec<f64>> =
        distractors.iter().map(|r| unit(project(r, &mean, &projection, view_len))).collect();

    let total = views * view_len;
    for (index, (scene, rep)) in scenes.iter().zip(&reps).enumerate() {
        let target = unit(project(rep, &mean, &projection, view_len));
        for (p, &alpha) in alphas.iter().enumerate() {
            let noise_rng = &mut derived_rng(seed, &[STREAM_SIGNAL_NOISE, index as u64, p as u64]);
            let weights = gaussian(noise_rng, distractor_targets.len());
            let mut eps = vec![0.0; total];
            for (w, t) in weights.iter().zip(&distractor_targets) {
                eps.iter_mut().zip(t).for_each(|(e, v)| *e += w * v);
            }
            scale_to_unit_rms(&mut eps);
            let mut data: Vec<f64> = target.iter().zip(&eps).map(|(t, e)| alpha * t + (1.0 - alpha) * e).collect();
            if config.noise_sigma > 0.0 {
                let mut eta = gaussian(&mut derived_rng(seed, &[STREAM_EXTRA_NOISE, index as u64, p as u64]), total);
                scale_to_unit_rms(&mut eta);
                data.iter_mut().zip(&eta).for_each(|(d, n)| *d += config.noise_sigma * n);
            }
            ds.insert(FeatureMap {
                sample_id: scene.sample_id.clone(),
                phase: p as u32 + 1,
                tensor: Tensor::new(shape.clone(), data)?,
            })?;
        }
    }
    Ok(ds)
}

/// Surrogate mAP and NDS series: affine in the schedule plus uniform jitter.
pub fn gen_metric_series(config: &SynthConfig, seed: u64) -> Result<[MetricSeries; 2]> {
    let alphas = config.alphas()?;
    let mut rng = derived_rng(seed, &[STREAM_METRICS]);
    let series = |name: &str, [lo, hi]: [f64; 2], rng: &mut ChaCha8Rng| MetricSeries {
        name: name.to_string(),
        values: alphas
            .iter()
            .enumerate()
            .map(|(p, a)| {
                let jitter = if config.metric_jitter > 0.0 {
                    rng.random_range(-config.metric_jitter..config.metric_jitter)
                } else {
                    0.0
                };
                (p as u32 + 1, lo + (hi - lo) * a + jitter)
            })
            .collect(),
    };
    let map = series("mAP", config.map_range, &mut rng);
    let nds = series("NDS", config.nds_range, &mut rng);
    Ok([map, nds])
}
