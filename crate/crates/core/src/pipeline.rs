//! End-to-end orchestration: synthetic generation, GT embedding, two-stage
//! training, per-phase scoring and metric correlation. Each command reads and
//! writes files under the output directory so runs can be resumed or split.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::{encode, read_checkpoint, train_two_stage, write_checkpoint, AEConfig, AeSettings, TrainReport};
use crate::dataset::{read_dataset, write_dataset, FeatureDataset, FeatureMap};
use crate::embedding::{
    embed_scenes, load_external_embeddings, select_space, write_embeddings, EmbeddingSource, HashEmbedder,
    RepresentationMap, Space,
};
use crate::error::{Error, Result};
use crate::gt::{parse_gt_file, write_gt_file};
use crate::scoring::{
    aggregate_phases, build_report, read_json, read_metric_csv, similarity_score, write_json, write_metric_csv,
    write_report_csv, write_scores_csv, ReportMeta, SampleScore, SeriesReport, SimilaritySeries,
};
use crate::synthetic::{gen_features, gen_metric_series, gen_scenes, SynthConfig};

pub const GT_FILE: &str = "gt.json";
pub const FEATURES_DIR: &str = "features";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.aeck";
pub const AE_CONFIG_FILE: &str = "ae_config.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const SERIES_FILE: &str = "similarity_series.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const LOCK_FILE: &str = ".lock";

/// Value of `embeddings` that computes GT representations in memory.
pub const BUILTIN_EMBEDDINGS: &str = "builtin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out: PathBuf,
    /// Inputs default to the matching file under `out`.
    pub gt: Option<PathBuf>,
    pub features: Option<PathBuf>,
    /// Interchange file path, or `"builtin"` to embed GT text in memory.
    pub embeddings: Option<String>,
    pub metrics: Option<PathBuf>,
    /// Extra feature datasets pooled into training.
    pub pool_features: Vec<PathBuf>,
    pub module_tag: String,
    pub space: Space,
    pub seed: Option<u64>,
    /// Whether `run-all` starts by generating a synthetic dataset.
    pub synthetic: bool,
    pub ae: AeSettings,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            gt: None,
            features: None,
            embeddings: None,
            metrics: None,
            pool_features: Vec::new(),
            module_tag: "synthetic".into(),
            space: Space::Bev,
            seed: None,
            synthetic: true,
            ae: desk_scale_settings(),
            synth: SynthConfig::default(),
        }
    }
}

/// Training settings sized for the small synthetic feature shapes.
///
/// The reconstruction gradient is divided by the element count, so plain
/// gradient descent at the large-scale learning rates barely moves these
/// networks; the rates here are tuned for 32x8x8 inputs and 24 samples.
pub fn desk_scale_settings() -> AeSettings {
    AeSettings {
        hidden_channels: Some([64, 64, 64]),
        stage1_epochs: 30,
        stage1_lr: 0.5,
        stage2_epochs: 30,
        stage2_lr: 0.03,
        batch_size: 4,
        momentum: 0.9,
        ..AeSettings::default()
    }
}

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    fn seed(&self, command: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(format!("`{command}` requires an explicit seed")))
    }

    pub fn gt_path(&self) -> PathBuf {
        self.gt.clone().unwrap_or_else(|| self.out.join(GT_FILE))
    }

    pub fn features_path(&self) -> PathBuf {
        self.features.clone().unwrap_or_else(|| self.out.join(FEATURES_DIR))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.metrics.clone().unwrap_or_else(|| self.out.join(METRICS_FILE))
    }

    /// `None` means builtin in-memory embedding.
    pub fn embeddings_path(&self) -> Option<PathBuf> {
        match self.embeddings.as_deref() {
            Some(BUILTIN_EMBEDDINGS) => None,
            Some(p) => Some(PathBuf::from(p)),
            None => Some(self.out.join(EMBEDDINGS_FILE)),
        }
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(Error::io(out))?;
        let path = out.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(out.to_path_buf())),
            Err(e) => Err(Error::io(&path)(e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Scores plus the provenance needed to build the final report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub space: Space,
    pub embedding_source: EmbeddingSource,
    pub embedding_model: String,
    pub config_digest: u64,
    pub series: SimilaritySeries,
}

fn gen_synth_inner(cfg: &PipelineConfig) -> Result<()> {
    let seed = cfg.seed("gen-synth")?;
    cfg.synth.validate()?;
    let scenes = gen_scenes(&cfg.synth, seed);
    let reps = embed_scenes(&scenes, cfg.space, &HashEmbedder::default())?;
    let ds = gen_features(&cfg.synth, cfg.space, &cfg.module_tag, &scenes, &reps, seed)?;
    let metrics = gen_metric_series(&cfg.synth, seed)?;
    write_gt_file(cfg.gt_path(), &scenes)?;
    write_dataset(cfg.features_path(), &ds)?;
    write_metric_csv(cfg.metrics_path(), &metrics)
}

fn embed_inner(cfg: &PipelineConfig) -> Result<()> {
    let scenes = parse_gt_file(cfg.gt_path())?;
    let reps = embed_scenes(&scenes, cfg.space, &HashEmbedder::default())?;
    let path = cfg.embeddings_path().unwrap_or_else(|| cfg.out.join(EMBEDDINGS_FILE));
    write_embeddings(path, reps.values())
}

/// GT representations for the configured space, from file or computed in memory.
pub fn load_gt_reps(cfg: &PipelineConfig) -> Result<RepresentationMap> {
    match cfg.embeddings_path() {
        Some(path) => Ok(select_space(load_external_embeddings(path)?, cfg.space)),
        None => {
            let scenes = parse_gt_file(cfg.gt_path())?;
            embed_scenes(&scenes, cfg.space, &HashEmbedder::default())
        }
    }
}

fn check_coverage(features: &BTreeSet<String>, reps: &RepresentationMap) -> Result<()> {
    let no_gt: Vec<String> = features.iter().filter(|id| !reps.contains_key(*id)).cloned().collect();
    if !no_gt.is_empty() {
        return Err(Error::missing("GT representation", no_gt));
    }
    let no_features: Vec<String> = reps.keys().filter(|id| !features.contains(*id)).cloned().collect();
    if !no_features.is_empty() {
        return Err(Error::missing("feature maps", no_features));
    }
    Ok(())
}

fn load_space_dataset(path: &Path, space: Space) -> Result<FeatureDataset> {
    let ds = read_dataset(path)?;
    if ds.space != space {
        return Err(Error::Config(format!(
            "dataset {} holds {} features but the pipeline is configured for {space}",
            path.display(),
            ds.space
        )));
    }
    Ok(ds)
}

fn view_shape(ds: &FeatureDataset) -> [usize; 3] {
    let s = &ds.shape;
    let n = s.len();
    [s[n - 3], s[n - 2], s[n - 1]]
}

fn train_inner(cfg: &PipelineConfig) -> Result<(AEConfig, TrainReport)> {
    let seed = cfg.seed("train")?;
    let mut datasets = vec![load_space_dataset(&cfg.features_path(), cfg.space)?];
    for p in &cfg.pool_features {
        datasets.push(load_space_dataset(p, cfg.space)?);
    }
    let shape = datasets[0].shape.clone();
    if let Some(bad) = datasets.iter().find(|d| d.shape != shape) {
        return Err(Error::shape("pooled dataset", &shape, &bad.shape));
    }
    let reps = load_gt_reps(cfg)?;
    let ids: BTreeSet<String> = datasets.iter().flat_map(FeatureDataset::sample_ids).collect();
    check_coverage(&ids, &reps)?;

    let config = AEConfig::build(view_shape(&datasets[0]), &cfg.ae, seed)?;
    let samples: Vec<&FeatureMap> = datasets.iter().flat_map(FeatureDataset::iter).collect();
    let (params, report) = train_two_stage(&config, &samples, &reps)?;
    write_checkpoint(cfg.out.join(CHECKPOINT_FILE), &config, &params)?;
    write_json(cfg.out.join(AE_CONFIG_FILE), &config)?;
    write_json(cfg.out.join(TRAIN_REPORT_FILE), &report)?;
    Ok((config, report))
}

fn score_inner(cfg: &PipelineConfig) -> Result<ScoreOutput> {
    let saved: AEConfig = read_json(cfg.out.join(AE_CONFIG_FILE))?;
    let ds = load_space_dataset(&cfg.features_path(), cfg.space)?;
    // rebuild against this dataset's shape: a different shape changes the digest
    let config = AEConfig::build(view_shape(&ds), &saved.settings(), saved.seed)?;
    let params = read_checkpoint(cfg.out.join(CHECKPOINT_FILE), &config)?;
    let reps = load_gt_reps(cfg)?;
    check_coverage(&ds.sample_ids(), &reps)?;

    let mut scores = Vec::with_capacity(ds.len());
    for m in ds.iter() {
        let fm = encode(&config, &params, &m.sample_id, ds.space, &m.tensor)?;
        let score = similarity_score(&fm, &reps[&m.sample_id])
            .map_err(|e| e.context(format!("scoring phase {}", m.phase)))?;
        scores.push(SampleScore {
            sample_id: m.sample_id.clone(),
            phase: m.phase,
            score,
        });
    }
    let series = aggregate_phases(&ds.module_tag, &scores, &ds.phases())?;
    let first = reps.values().next().expect("coverage check guarantees reps");
    let out = ScoreOutput {
        space: ds.space,
        embedding_source: first.source,
        embedding_model: first.model.clone(),
        config_digest: config.digest(),
        series,
    };
    write_scores_csv(cfg.out.join(SCORES_FILE), &scores)?;
    write_json(cfg.out.join(SERIES_FILE), &out)?;
    Ok(out)
}

fn correlate_inner(cfg: &PipelineConfig) -> Result<SeriesReport> {
    let scored: ScoreOutput = read_json(cfg.out.join(SERIES_FILE))?;
    let metrics = read_metric_csv(cfg.metrics_path())?;
    let meta = ReportMeta {
        space: scored.space,
        embedding_source: scored.embedding_source,
        embedding_model: scored.embedding_model.clone(),
        config_digest: scored.config_digest,
    };
    let report = build_report(&scored.series, &metrics, &meta)?;
    write_json(cfg.out.join(REPORT_FILE), &report)?;
    let order: Vec<String> = metrics.iter().map(|m| m.name.clone()).collect();
    write_report_csv(cfg.out.join(REPORT_CSV_FILE), &report, &order)?;
    Ok(report)
}

/// Writes a synthetic GT file, feature dataset and metric CSV.
pub fn cmd_gen_synth(cfg: &PipelineConfig) -> Result<()> {
    let _lock = OutputLock::acquire(&cfg.out)?;
    gen_synth_inner(cfg)
}

/// Writes the embedding interchange file for the GT file using the builtin embedder.
pub fn cmd_embed(cfg: &PipelineConfig) -> Result<()> {
    let _lock = OutputLock::acquire(&cfg.out)?;
    embed_inner(cfg)
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<(AEConfig, TrainReport)> {
    let _lock = OutputLock::acquire(&cfg.out)?;
    train_inner(cfg)
}

pub fn cmd_score(cfg: &PipelineConfig) -> Result<ScoreOutput> {
    let _lock = OutputLock::acquire(&cfg.out)?;
    score_inner(cfg)
}

pub fn cmd_correlate(cfg: &PipelineConfig) -> Result<SeriesReport> {
    let _lock = OutputLock::acquire(&cfg.out)?;
    correlate_inner(cfg)
}

/// Optional synthetic generation, then embed, train, score and correlate.
pub fn cmd_run_all(cfg: &PipelineConfig) -> Result<SeriesReport> {
    let _lock = OutputLock::acquire(&cfg.out)?;
    if cfg.synthetic {
        gen_synth_inner(cfg)?;
    }
    if cfg.embeddings.is_none() {
        embed_inner(cfg)?;
    }
    train_inner(cfg)?;
    score_inner(cfg)?;
    correlate_inner(cfg)
}
