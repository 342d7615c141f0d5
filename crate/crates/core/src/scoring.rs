//! Similarity scores, per-phase aggregation and Pearson correlation against
//! detection-metric series.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSource, Representation};
use crate::error::{Error, Result};
use crate::tensor::cosine_sim;

/// Standard deviations at or below this make a series unusable for correlation.
pub const STD_EPS: f64 = 1e-12;

/// Cosine similarity of two representations: the single-row cosine for 3d,
/// the unweighted mean of per-camera cosines for 2d.
pub fn similarity_score(r_fm: &Representation, r_gt: &Representation) -> Result<f64> {
    if r_fm.space != r_gt.space {
        return Err(Error::Config(format!(
            "sample {}: cannot compare {} and {} representations",
            r_fm.sample_id, r_fm.space, r_gt.space
        )));
    }
    if r_fm.vectors().shape() != r_gt.vectors().shape() {
        return Err(Error::shape(
            format!("representations of sample {}", r_fm.sample_id),
            r_gt.vectors().shape(),
            r_fm.vectors().shape(),
        ));
    }
    let mut sum = 0.0;
    for k in 0..r_fm.rows() {
        sum += cosine_sim(r_fm.row(k), r_gt.row(k)).map_err(|e| match e {
            Error::DegenerateVector { context, norm, eps } => Error::DegenerateVector {
                context: format!("sample {}, camera {k}, {context}", r_fm.sample_id),
                norm,
                eps,
            },
            other => other,
        })?;
    }
    Ok(sum / r_fm.rows() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub phase: u32,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseScore {
    pub phase: u32,
    pub mean_score: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySeries {
    pub module_tag: String,
    pub phase_scores: Vec<PhaseScore>,
}

impl SimilaritySeries {
    pub fn phases(&self) -> Vec<u32> {
        self.phase_scores.iter().map(|p| p.phase).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.phase_scores.iter().map(|p| p.mean_score).collect()
    }
}

/// Arithmetic mean per phase, summing samples in sorted id order. Every phase
/// in `phases` must have at least one score; scores for unlisted phases are an error.
pub fn aggregate_phases(module_tag: &str, scores: &[SampleScore], phases: &[u32]) -> Result<SimilaritySeries> {
    let mut by_phase: BTreeMap<u32, BTreeMap<&str, f64>> = phases.iter().map(|&p| (p, BTreeMap::new())).collect();
    for s in scores {
        let bucket = by_phase
            .get_mut(&s.phase)
            .ok_or_else(|| Error::PhaseMismatch(format!("score for unexpected phase {}", s.phase)))?;
        if bucket.insert(&s.sample_id, s.score).is_some() {
            return Err(Error::DuplicateKey(format!("score ({}, phase {})", s.sample_id, s.phase)));
        }
    }
    let mut phase_scores = Vec::with_capacity(by_phase.len());
    for (phase, bucket) in by_phase {
        if bucket.is_empty() {
            return Err(Error::EmptyPhase(phase));
        }
        let sum: f64 = bucket.values().sum();
        phase_scores.push(PhaseScore {
            phase,
            mean_score: sum / bucket.len() as f64,
            count: bucket.len(),
        });
    }
    Ok(SimilaritySeries {
        module_tag: module_tag.to_string(),
        phase_scores,
    })
}

/// Pearson correlation from population moments, computed in two passes and
/// clamped to [-1, 1].
pub fn pearson(s: &[f64], m: &[f64]) -> Result<f64> {
    if s.len() != m.len() {
        return Err(Error::PhaseMismatch(format!(
            "series lengths differ: {} vs {}",
            s.len(),
            m.len()
        )));
    }
    if s.len() < 2 {
        return Err(Error::Config(format!("correlation needs at least 2 points, got {}", s.len())));
    }
    if s.iter().chain(m).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("series value".into()));
    }
    let n = s.len() as f64;
    let mean_s = s.iter().sum::<f64>() / n;
    let mean_m = m.iter().sum::<f64>() / n;
    let (mut cov, mut var_s, mut var_m) = (0.0, 0.0, 0.0);
    for (a, b) in s.iter().zip(m) {
        let (da, db) = (a - mean_s, b - mean_m);
        cov += da * db;
        var_s += da * da;
        var_m += db * db;
    }
    let (std_s, std_m) = ((var_s / n).sqrt(), (var_m / n).sqrt());
    if std_s <= STD_EPS {
        return Err(Error::ZeroVariance {
            context: "first series".into(),
            std: std_s,
        });
    }
    if std_m <= STD_EPS {
        return Err(Error::ZeroVariance {
            context: "second series".into(),
            std: std_m,
        });
    }
    Ok(((cov / n) / (std_s * std_m)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub values: Vec<(u32, f64)>,
}

impl MetricSeries {
    pub fn phases(&self) -> Vec<u32> {
        self.values.iter().map(|v| v.0).collect()
    }
}

/// Reads a `phase,<metric>,...` CSV (normally `phase,mAP,NDS`) into one series
/// per metric column.
pub fn read_metric_csv(path: impl AsRef<Path>) -> Result<Vec<MetricSeries>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.get(0) != Some("phase") || headers.len() < 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "header must start with `phase` followed by metric columns".into(),
        });
    }
    let mut series: Vec<MetricSeries> = headers
        .iter()
        .skip(1)
        .map(|name| MetricSeries {
            name: name.to_string(),
            values: Vec::new(),
        })
        .collect();
    let mut seen = BTreeSet::new();
    for (index, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let field = |col: usize| -> Result<&str> {
            row.get(col).ok_or_else(|| Error::InvalidRecord {
                index,
                field: headers[col].to_string(),
                message: "missing value".into(),
            })
        };
        let phase: u32 = field(0)?.parse().map_err(|_| Error::InvalidRecord {
            index,
            field: "phase".into(),
            message: format!("not a phase index: {:?}", row.get(0)),
        })?;
        if !seen.insert(phase) {
            return Err(Error::DuplicateKey(format!("metric phase {phase}")));
        }
        for (col, s) in series.iter_mut().enumerate() {
            let raw = field(col + 1)?;
            let value: f64 = raw.parse().map_err(|_| Error::InvalidRecord {
                index,
                field: s.name.clone(),
                message: format!("not a number: {raw:?}"),
            })?;
            s.values.push((phase, value));
        }
    }
    for s in &mut series {
        s.values.sort_by_key(|v| v.0);
    }
    Ok(series)
}

pub fn write_metric_csv(path: impl AsRef<Path>, series: &[MetricSeries]) -> Result<()> {
    let path = path.as_ref();
    let phases = series.first().map(MetricSeries::phases).unwrap_or_default();
    if series.iter().any(|s| s.phases() != phases) {
        return Err(Error::PhaseMismatch("metric series cover different phases".into()));
    }
    let mut out = String::from("phase");
    for s in series {
        out.push(',');
        out.push_str(&s.name);
    }
    out.push('\n');
    for (i, phase) in phases.iter().enumerate() {
        out.push_str(&phase.to_string());
        for s in series {
            out.push(',');
            out.push_str(&s.values[i].1.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(Error::io(path))
}

/// Provenance carried into the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub space: crate::embedding::Space,
    pub embedding_source: EmbeddingSource,
    pub embedding_model: String,
    pub config_digest: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub module_tag: String,
    pub space: crate::embedding::Space,
    pub phases: Vec<u32>,
    pub mean_scores: Vec<f64>,
    pub sample_counts: Vec<usize>,
    pub rho: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, Vec<f64>>,
    /// How a multi-row (2d) representation collapses to one score.
    pub aggregation: String,
    pub embedding_source: EmbeddingSource,
    pub embedding_model: String,
    /// Hex-encoded 64-bit digest of the autoencoder config.
    pub config_digest: String,
}

pub const AGGREGATION_3D: &str = "cosine";
pub const AGGREGATION_2D: &str = "mean-of-camera-cosines";

pub fn build_report(series: &SimilaritySeries, metrics: &[MetricSeries], meta: &ReportMeta) -> Result<SeriesReport> {
    let phases = series.phases();
    let means = series.means();
    let mut rho = BTreeMap::new();
    let mut metric_values = BTreeMap::new();
    for m in metrics {
        if m.phases() != phases {
            return Err(Error::PhaseMismatch(format!(
                "similarity series has {} phases {:?}, metric {} has {} phases {:?}",
                phases.len(),
                phases,
                m.name,
                m.values.len(),
                m.phases()
            )));
        }
        let values: Vec<f64> = m.values.iter().map(|v| v.1).collect();
        let r = pearson(&means, &values).map_err(|e| e.context(format!("correlating with {}", m.name)))?;
        rho.insert(m.name.clone(), r);
        metric_values.insert(m.name.clone(), values);
    }
    Ok(SeriesReport {
        module_tag: series.module_tag.clone(),
        space: meta.space,
        phases,
        mean_scores: means,
        sample_counts: series.phase_scores.iter().map(|p| p.count).collect(),
        rho,
        metrics: metric_values,
        aggregation: match meta.space {
            crate::embedding::Space::Bev => AGGREGATION_3D,
            crate::embedding::Space::Image => AGGREGATION_2D,
        }
        .to_string(),
        embedding_source: meta.embedding_source,
        embedding_model: meta.embedding_model.clone(),
        config_digest: format!("{:016x}", meta.config_digest),
    })
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

/// Flat `phase,mean_score,<metrics...>` table for plotting.
pub fn write_report_csv(path: impl AsRef<Path>, report: &SeriesReport, metric_order: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("phase,mean_score");
    for name in metric_order {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, phase) in report.phases.iter().enumerate() {
        out.push_str(&format!("{phase},{}", report.mean_scores[i]));
        for name in metric_order {
            out.push(',');
            out.push_str(&report.metrics[name][i].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(Error::io(path))
}

pub fn write_scores_csv(path: impl AsRef<Path>, scores: &[SampleScore]) -> Result<()> {
    let path = path.as_ref();
    let mut sorted: Vec<&SampleScore> = scores.iter().collect();
    sorted.sort_by(|a, b| (a.phase, &a.sample_id).cmp(&(b.phase, &b.sample_id)));
    let mut out = String::from("sample_id,phase,score\n");
    for s in sorted {
        out.push_str(&format!("{},{},{}\n", s.sample_id, s.phase, s.score));
    }
    fs::write(path, out).map_err(Error::io(path))
}
