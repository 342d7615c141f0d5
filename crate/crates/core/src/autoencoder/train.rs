//! Two-stage training: reconstruction only, then reconstruction plus alignment.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::AEConfig;
use super::model::sample_loss_and_grad;
use super::params::{init_params, AEParams};
use crate::dataset::FeatureMap;
use crate::embedding::RepresentationMap;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    fn salt(self) -> u64 {
        match self {
            Stage::Stage1 => 0x5354_4147_4531,
            Stage::Stage2 => 0x5354_4147_4532,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub lr: f64,
    pub recon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub align: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |e| e.stage == stage)
    }
}

/// `lr_t = base / 2 * (1 + cos(pi * t / epochs))`, annealing towards zero.
pub fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs == 0 {
        return base;
    }
    0.5 * base * (1.0 + (PI * epoch as f64 / epochs as f64).cos())
}

/// Plain minibatch gradient descent with an optional momentum term.
struct Sgd {
    momentum: f64,
    velocity: Option<AEParams>,
}

impl Sgd {
    fn new(momentum: f64) -> Self {
        Self { momentum, velocity: None }
    }

    fn step(&mut self, params: &mut AEParams, grads: &AEParams, lr: f64) -> Result<()> {
        if self.momentum == 0.0 {
            for (p, g) in params.blobs_mut().zip(grads.blobs()) {
                p.axpy(-lr, g)?;
            }
            return Ok(());
        }
        let vel = self.velocity.get_or_insert_with(|| {
            let mut v = grads.clone();
            v.blobs_mut().for_each(|t| t.fill(0.0));
            v
        });
        for ((p, v), g) in params.blobs_mut().zip(vel.blobs_mut()).zip(grads.blobs()) {
            v.scale(self.momentum);
            v.axpy(1.0, g)?;
            p.axpy(-lr, v)?;
        }
        Ok(())
    }
}

fn check_dataset(config: &AEConfig, dataset: &[&FeatureMap]) -> Result<()> {
    let Some(first) = dataset.first() else {
        return Err(Error::Config("training dataset is empty".into()));
    };
    let shape = first.tensor.shape();
    for m in dataset {
        m.tensor
            .expect_shape(&format!("training sample {} phase {}", m.sample_id, m.phase), shape)?;
    }
    super::model::views(config, &first.tensor)?;
    Ok(())
}

fn run_stage(
    config: &AEConfig,
    mut params: AEParams,
    dataset: &[&FeatureMap],
    gt_reps: Option<&RepresentationMap>,
    stage: Stage,
) -> Result<(AEParams, TrainReport)> {
    let (epochs, base_lr) = match stage {
        Stage::Stage1 => (config.stage1_epochs, config.stage1_lr),
        Stage::Stage2 => (config.stage2_epochs, config.stage2_lr),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ stage.salt());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut opt = Sgd::new(config.momentum);
    let mut grads = AEParams::zeros(config);
    let mut report = TrainReport::default();

    for epoch in 0..epochs {
        let lr = cosine_lr(base_lr, epoch, epochs);
        order.shuffle(&mut rng);
        let (mut recon_sum, mut align_sum) = (0.0, 0.0);
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            grads.blobs_mut().for_each(|t| t.fill(0.0));
            let mut batch_total = 0.0;
            for &i in batch {
                let m = dataset[i];
                let gt = gt_reps.map(|reps| &reps[&m.sample_id]);
                let loss = sample_loss_and_grad(config, &params, &m.sample_id, &m.tensor, gt, &mut grads)
                    .map_err(|e| e.context(format!("{} epoch {epoch} batch {batch_idx}", stage.name())))?;
                if let Some(a) = loss.align {
                    debug_assert!((-1e-12..=2.0 + 1e-12).contains(&a));
                    align_sum += a;
                }
                recon_sum += loss.recon;
                batch_total += loss.total();
            }
            if !batch_total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: stage.name().into(),
                    epoch,
                    batch: batch_idx,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            grads.blobs_mut().for_each(|t| t.scale(scale));
            opt.step(&mut params, &grads, lr)?;
        }
        let n = dataset.len() as f64;
        let recon = recon_sum / n;
        let align = gt_reps.map(|_| align_sum / n);
        report.epochs.push(EpochRecord {
            stage,
            epoch,
            lr,
            recon,
            align,
            total: recon + align.unwrap_or(0.0),
        });
    }
    Ok((params, report))
}

/// Stage 1: minimize reconstruction MSE from a fresh initialization.
pub fn train_stage1(config: &AEConfig, dataset: &[&FeatureMap]) -> Result<(AEParams, TrainReport)> {
    config.validate()?;
    check_dataset(config, dataset)?;
    let params = init_params(config)?;
    run_stage(config, params, dataset, None, Stage::Stage1)
}

/// Stage 2: continue from `init`, minimizing reconstruction plus `1 - S`.
pub fn train_stage2(
    config: &AEConfig,
    init: AEParams,
    dataset: &[&FeatureMap],
    gt_reps: &RepresentationMap,
) -> Result<(AEParams, TrainReport)> {
    config.validate()?;
    init.check_shapes(config)?;
    check_dataset(config, dataset)?;
    let mut missing: Vec<String> = dataset
        .iter()
        .filter(|m| !gt_reps.contains_key(&m.sample_id))
        .map(|m| m.sample_id.clone())
        .collect();
    missing.dedup();
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::missing("GT representation", missing));
    }
    run_stage(config, init, dataset, Some(gt_reps), Stage::Stage2)
}

pub fn train_two_stage(
    config: &AEConfig,
    dataset: &[&FeatureMap],
    gt_reps: &RepresentationMap,
) -> Result<(AEParams, TrainReport)> {
    let (params, mut report) = train_stage1(config, dataset)?;
    let (params, stage2) = train_stage2(config, params, dataset, gt_reps)?;
    report.epochs.extend(stage2.epochs);
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::AeSettings;
    use crate::embedding::{EmbeddingSource, Representation, Space};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn data(n: usize, shape: &[usize], seed: u64) -> Vec<FeatureMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let len = shape.iter().product();
                FeatureMap {
                    sample_id: format!("s{i:02}"),
                    phase: 1,
                    tensor: Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .unwrap(),
                }
            })
            .collect()
    }

    fn small(stage1_epochs: usize, lr: f64) -> AEConfig {
        let s = AeSettings {
            latent_dim: 16,
            hidden_channels: Some([8, 8, 8]),
            stage1_epochs,
            stage1_lr: lr,
            stage2_epochs: 3,
            stage2_lr: lr,
            batch_size: 4,
            momentum: 0.9,
        };
        AEConfig::build([4, 6, 6], &s, 17).unwrap()
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 12), 1e-3);
        assert!(cosine_lr(1e-3, 11, 12) < 0.05 * 1e-3);
        assert!(cosine_lr(1.0, 6, 12) - 0.5 < 1e-12);
    }

    #[test]
    fn report_records_schedule() {
        let maps = data(6, &[4, 6, 6], 1);
        let refs: Vec<&FeatureMap> = maps.iter().collect();
        let cfg = small(12, 0.01);
        let (_, report) = train_stage1(&cfg, &refs).unwrap();
        assert_eq!(report.epochs.len(), 12);
        assert_eq!(report.epochs[0].lr, 0.01);
        assert!(report.epochs[11].lr < 0.05 * 0.01);
        assert!(report.epochs.iter().all(|e| e.align.is_none() && e.recon.is_finite()));
    }

    #[test]
    fn deterministic() {
        let maps = data(5, &[4, 6, 6], 2);
        let refs: Vec<&FeatureMap> = maps.iter().collect();
        let cfg = small(4, 0.01);
        let a = train_stage1(&cfg, &refs).unwrap();
        let b = train_stage1(&cfg, &refs).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn stage2_requires_every_gt() {
        let maps = data(3, &[4, 6, 6], 3);
        let refs: Vec<&FeatureMap> = maps.iter().collect();
        let cfg = small(1, 0.01);
        let mut reps = RepresentationMap::new();
        for m in &maps[..2] {
            let v = Tensor::filled(&[1, 16], 1.0);
            reps.insert(
                m.sample_id.clone(),
                Representation::new(&m.sample_id, Space::Bev, EmbeddingSource::BuiltinHash, "m", v).unwrap(),
            );
        }
        let params = init_params(&cfg).unwrap();
        match train_stage2(&cfg, params, &refs, &reps).unwrap_err() {
            Error::MissingSamples { ids, .. } => assert_eq!(ids, vec!["s02".to_string()]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn stage2_align_loss_in_range() {
        let maps = data(4, &[4, 6, 6], 4);
        let refs: Vec<&FeatureMap> = maps.iter().collect();
        let cfg = small(2, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reps: RepresentationMap = maps
            .iter()
            .map(|m| {
                let v = Tensor::new(vec![1, 16], (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let r = Representation::new(&m.sample_id, Space::Bev, EmbeddingSource::BuiltinHash, "m", v).unwrap();
                (m.sample_id.clone(), r)
            })
            .collect();
        let (_, report) = train_two_stage(&cfg, &refs, &reps).unwrap();
        let s2: Vec<&EpochRecord> = report.stage(Stage::Stage2).collect();
        assert_eq!(s2.len(), 3);
        for e in s2 {
            let a = e.align.unwrap();
            assert!((0.0..=2.0).contains(&a));
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train_stage1(&small(1, 0.01), &[]).is_err());
    }

    #[test]
    fn exploding_lr_reports_non_finite() {
        let maps = data(4, &[4, 6, 6], 6);
        let refs: Vec<&FeatureMap> = maps.iter().collect();
        let cfg = small(50, 1e6);
        let err = train_stage1(&cfg, &refs).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    }
}
