use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::methods::Method;
use super::ExperimentConfig;
use crate::divergence::DivergenceSummary;
use crate::error::{Error, Result};
use crate::subspace::DimPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub per_repeat_accuracy: Vec<f64>,
    /// Rows are true target classes, columns predicted classes, both in
    /// `class_ids` order; summed over repeats.
    pub confusion: Vec<Vec<u64>>,
    pub class_ids: Vec<u32>,
    /// C selected by cross-validation in each repeat (SVM methods only).
    pub chosen_c: Vec<f64>,
    pub chosen_dim: Option<usize>,
    pub wall_time_s: f64,
}

impl MethodResult {
    pub fn new(
        method: Method,
        per_repeat_accuracy: Vec<f64>,
        confusion: Vec<Vec<u64>>,
        class_ids: Vec<u32>,
        chosen_c: Vec<f64>,
        chosen_dim: Option<usize>,
        wall_time_s: f64,
    ) -> Self {
        let n = per_repeat_accuracy.len() as f64;
        let mean = per_repeat_accuracy.iter().sum::<f64>() / n;
        let std = (per_repeat_accuracy.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            method,
            mean_accuracy: mean,
            std_accuracy: std,
            per_repeat_accuracy,
            confusion,
            class_ids,
            chosen_c,
            chosen_dim,
            wall_time_s,
        }
    }

    /// Most frequently selected C, smaller on ties.
    pub fn modal_c(&self) -> Option<f64> {
        let mut cs = self.chosen_c.clone();
        cs.sort_by(f64::total_cmp);
        let mut best: Option<(f64, usize)> = None;
        for group in cs.chunk_by(|a, b| a == b) {
            if best.is_none_or(|(_, n)| group.len() > n) {
                best = Some((group[0], group.len()));
            }
        }
        best.map(|(c, _)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub source: String,
    pub target: String,
    pub n_source: usize,
    pub n_target: usize,
    /// Subspace dimension used by the SA methods.
    pub dim: Option<usize>,
    pub subspace_divergence_before: Option<f64>,
    pub subspace_divergence_after: Option<f64>,
    pub kernel_max_asymmetry: Option<f64>,
    pub kernel_min_eigenvalue: Option<f64>,
    pub hdh_raw_features: Option<DivergenceSummary>,
    pub hdh_aligned: Option<DivergenceSummary>,
    pub methods: Vec<MethodResult>,
    pub wall_time_s: f64,
}

impl PairReport {
    pub fn method(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub repeats: usize,
    pub methods: Vec<Method>,
    pub dim_policy: DimPolicy,
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub knn_k: usize,
    pub baseline2_variance: f64,
    pub hdh_split_fraction: f64,
    pub hdh_seeds: usize,
    pub rng_seed: u64,
}

impl ReportSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            repeats: cfg.repeats,
            methods: cfg.methods.clone(),
            dim_policy: cfg.dim_policy,
            c_grid: cfg.cv.c_grid.clone(),
            folds: cfg.cv.folds,
            knn_k: cfg.knn_k,
            baseline2_variance: cfg.baseline2_variance,
            hdh_split_fraction: cfg.hdh.split_fraction,
            hdh_seeds: if cfg.hdh.enabled { cfg.hdh.seeds } else { 0 },
            rng_seed: cfg.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub settings: ReportSettings,
    pub pairs: Vec<PairReport>,
}

pub const CSV_HEADER: &str =
    "source,target,method,mean_accuracy,std_accuracy,hdh_raw_features,hdh_aligned,chosen_d,chosen_c,repeats";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per (pair, method).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for p in &self.pairs {
            for m in &p.methods {
                let row = [
                    csv_field(&p.source),
                    csv_field(&p.target),
                    m.method.to_string(),
                    m.mean_accuracy.to_string(),
                    m.std_accuracy.to_string(),
                    opt(p.hdh_raw_features.as_ref().map(|h| h.mean)),
                    opt(p.hdh_aligned.as_ref().map(|h| h.mean)),
                    opt(m.chosen_dim),
                    opt(m.modal_c()),
                    m.per_repeat_accuracy.len().to_string(),
                ];
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }
}

/// Writes the report to `path`. For CSV, `path` receives the table; for JSON
/// the full nested structure. Returns the written path.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv(),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
