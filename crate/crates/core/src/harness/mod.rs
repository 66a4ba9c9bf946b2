//! Experiment protocol: every ordered (source, target) pair of domains runs
//! each requested method for a number of repeats; accuracies, confusion
//! matrices and divergence estimates are collected into one report.
//!
//! Target labels never reach an adaptation or training stage. The prediction
//! phase ([`predict_pair`]) only sees the target feature rows; labels are
//! read afterwards by [`score_pair`].

pub mod methods;
pub mod report;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use methods::{adapt, run_method, Adaptation, Method, MethodInputs, MethodOutput, SaKernels};
pub use report::{emit_report, ExperimentReport, MethodResult, PairReport, ReportFormat, ReportSettings};

use crate::classifiers::CvConfig;
use crate::divergence::{estimate_hdh, estimate_hdh_in_subspaces, repeat_estimates, DivergenceSummary};
use crate::error::{Error, Result};
use crate::signal_io::{build_dataset, DatasetManifest};
use crate::spectrum::{featurize, FeatureMatrix};
use crate::subspace::DimPolicy;
use crate::synth::{generate_domain, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdhConfig {
    pub enabled: bool,
    pub split_fraction: f64,
    /// Number of random splits averaged per estimate.
    pub seeds: usize,
}

impl Default for HdhConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            split_fraction: 0.5,
            seeds: 10,
        }
    }
}

/// Where one domain's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    Manifest {
        #[serde(default)]
        name: Option<String>,
        path: PathBuf,
    },
    Synth {
        name: String,
        #[serde(default)]
        spec: SynthSpec,
        rpm: f64,
        per_class: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub domains: Vec<DomainSpec>,
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub dim_policy: DimPolicy,
    pub cv: CvConfig,
    pub knn_k: usize,
    pub baseline2_variance: f64,
    pub hdh: HdhConfig,
    pub fft_len: Option<usize>,
    pub rng_seed: u64,
    pub output: Option<PathBuf>,
    pub format: ReportFormat,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domains: Vec::new(),
            methods: Method::ALL.to_vec(),
            repeats: 20,
            dim_policy: DimPolicy::default(),
            cv: CvConfig::default(),
            knn_k: 1,
            baseline2_variance: 0.9,
            hdh: HdhConfig::default(),
            fft_len: None,
            rng_seed: 0,
            output: None,
            format: ReportFormat::Json,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::from(e).context(format!("config {}", path.display())))?;
        // Manifest paths in the config are relative to the config file.
        if let Some(base) = path.parent() {
            for d in &mut cfg.domains {
                if let DomainSpec::Manifest { path: p, .. } = d {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        if !(self.baseline2_variance > 0.0 && self.baseline2_variance <= 1.0) {
            return Err(Error::Config(format!(
                "baseline2_variance must be in (0, 1], got {}",
                self.baseline2_variance
            )));
        }
        if self.hdh.enabled && (!(self.hdh.split_fraction > 0.0 && self.hdh.split_fraction < 1.0) || self.hdh.seeds == 0) {
            return Err(Error::Config("hdh needs split_fraction in (0, 1) and at least one seed".into()));
        }
        self.cv.validate()
    }

    fn uses_sa(&self) -> bool {
        self.methods.iter().any(|m| matches!(m, Method::NnSa | Method::SvmSa)) || self.hdh.enabled
    }
}

/// A named, featurized dataset.
#[derive(Debug, Clone)]
pub struct Domain {
    pub name: String,
    pub features: FeatureMatrix,
}

/// Loads or generates every domain listed in the config and featurizes it.
pub fn load_domains(config: &ExperimentConfig) -> Result<Vec<Domain>> {
    config
        .domains
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let (name, segments) = match spec {
                DomainSpec::Manifest { name, path } => {
                    let manifest = DatasetManifest::load(path)?;
                    let name = name.clone().unwrap_or_else(|| manifest.name.clone());
                    (name, build_dataset(&manifest)?)
                }
                DomainSpec::Synth {
                    name,
                    spec,
                    rpm,
                    per_class,
                } => (name.clone(), generate_domain(spec, *rpm, *per_class, i as u64)?),
            };
            let features = featurize(&segments, config.fft_len).map_err(|e| e.context(format!("domain {name}")))?;
            Ok(Domain { name, features })
        })
        .collect()
}

pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Label-free output of the adaptation and training stages for one pair.
#[derive(Debug, Clone)]
pub struct PairPredictions {
    pub dim: Option<usize>,
    pub subspace_divergence_before: Option<f64>,
    pub subspace_divergence_after: Option<f64>,
    pub kernel_max_asymmetry: Option<f64>,
    pub kernel_min_eigenvalue: Option<f64>,
    pub hdh_raw_features: Option<DivergenceSummary>,
    pub hdh_aligned: Option<DivergenceSummary>,
    /// Per method: one output per repeat, plus the wall time in seconds.
    pub methods: Vec<(Method, Vec<MethodOutput>, f64)>,
}

/// Runs every configured method using source labels and target features only.
pub fn predict_pair(source: &FeatureMatrix, target_rows: &DMatrix<f64>, config: &ExperimentConfig, seed: u64) -> Result<PairPredictions> {
    config.validate()?;
    let xs = source.rows();
    let xt = target_rows;
    if xs.ncols() != xt.ncols() {
        return Err(Error::Config(format!(
            "source dimension {} differs from target dimension {}",
            xs.ncols(),
            xt.ncols()
        )));
    }
    let source_labels = source.label_ids().map_err(|e| e.context("source domain"))?;

    let adaptation = if config.uses_sa() {
        Some(adapt(xs, xt, config.dim_policy)?)
    } else {
        None
    };
    let kernels = match &adaptation {
        Some(a) if config.methods.iter().any(|m| matches!(m, Method::NnSa | Method::SvmSa)) => {
            Some(SaKernels::new(xs, xt, a)?)
        }
        _ => None,
    };

    let (hdh_raw_features, hdh_aligned) = match (&adaptation, config.hdh.enabled) {
        (Some(a), true) => {
            let seeds: Vec<u64> = (0..config.hdh.seeds as u64).map(|i| derive_seed(seed, 0xD1, i)).collect();
            let f = config.hdh.split_fraction;
            let raw = repeat_estimates(&seeds, |s| estimate_hdh(xs, xt, f, s))?;
            let aligned = repeat_estimates(&seeds, |s| {
                estimate_hdh_in_subspaces(xs, xt, &a.source, &a.target, &a.alignment, f, s)
            })?;
            (Some(raw), Some(aligned))
        }
        _ => (None, None),
    };

    let inputs = MethodInputs {
        xs,
        source_labels: &source_labels,
        xt,
        adaptation: adaptation.as_ref(),
        kernels: kernels.as_ref(),
        knn_k: config.knn_k,
        baseline2_variance: config.baseline2_variance,
    };

    let methods = config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outputs = if method.is_stochastic() {
                (0..config.repeats)
                    .into_par_iter()
                    .map(|r| {
                        let cv = CvConfig {
                            rng_seed: derive_seed(seed, 0xC5, r as u64),
                            ..config.cv.clone()
                        };
                        run_method(method, &inputs, &cv)
                    })
                    .collect::<Result<Vec<_>>>()
            } else {
                run_method(method, &inputs, &config.cv).map(|o| vec![o; config.repeats])
            }
            .map_err(|e| e.context(format!("method {method}")))?;
            Ok((method, outputs, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PairPredictions {
        dim: adaptation.as_ref().map(|a| a.dim),
        subspace_divergence_before: adaptation.as_ref().map(|a| a.divergence_before),
        subspace_divergence_after: adaptation.as_ref().map(|a| a.divergence_after),
        kernel_max_asymmetry: kernels.as_ref().map(|k| k.max_asymmetry),
        kernel_min_eigenvalue: kernels.as_ref().and_then(|k| k.min_eigenvalue),
        hdh_raw_features,
        hdh_aligned,
        methods,
    })
}

/// Scores label-free predictions against the target labels.
pub fn score_pair(
    source: &Domain,
    target: &Domain,
    predictions: PairPredictions,
    wall_time_s: f64,
) -> Result<PairReport> {
    let target_labels = target
        .features
        .label_ids()
        .map_err(|_| Error::Scoring(format!("target domain {} has no labels", target.name)))?;
    let source_labels = source.features.label_ids()?;
    let source_classes: BTreeSet<u32> = source_labels.iter().copied().collect();
    if let Some(bad) = target_labels.iter().find(|l| !source_classes.contains(l)) {
        return Err(Error::Scoring(format!(
            "label-set mismatch: target class {bad} of {} does not occur in source {}",
            target.name, source.name
        )));
    }
    let class_ids: Vec<u32> = source_classes.into_iter().collect();
    let slot = |c: u32| class_ids.binary_search(&c).expect("known class");

    let methods = predictions
        .methods
        .into_iter()
        .map(|(method, outputs, wall)| {
            let mut confusion = vec![vec![0u64; class_ids.len()]; class_ids.len()];
            let per_repeat: Vec<f64> = outputs
                .iter()
                .map(|o| {
                    let mut correct = 0usize;
                    for (&p, &t) in o.predictions.iter().zip(&target_labels) {
                        confusion[slot(t)][slot(p)] += 1;
                        correct += usize::from(p == t);
                    }
                    correct as f64 / target_labels.len() as f64
                })
                .collect();
            MethodResult::new(
                method,
                per_repeat,
                confusion,
                class_ids.clone(),
                outputs.iter().filter_map(|o| o.chosen_c).collect(),
                outputs.first().and_then(|o| o.chosen_dim),
                wall,
            )
        })
        .collect();

    Ok(PairReport {
        source: source.name.clone(),
        target: target.name.clone(),
        n_source: source.features.n(),
        n_target: target.features.n(),
        dim: predictions.dim,
        subspace_divergence_before: predictions.subspace_divergence_before,
        subspace_divergence_after: predictions.subspace_divergence_after,
        kernel_max_asymmetry: predictions.kernel_max_asymmetry,
        kernel_min_eigenvalue: predictions.kernel_min_eigenvalue,
        hdh_raw_features: predictions.hdh_raw_features,
        hdh_aligned: predictions.hdh_aligned,
        methods,
        wall_time_s,
    })
}

fn run_pair_seeded(source: &Domain, target: &Domain, config: &ExperimentConfig, seed: u64) -> Result<PairReport> {
    let start = Instant::now();
    // Only the feature rows of the target cross this boundary.
    let predictions = predict_pair(&source.features, target.features.rows(), config, seed)?;
    score_pair(source, target, predictions, start.elapsed().as_secs_f64())
}

/// Runs all configured methods for one source→target pair.
pub fn run_pair(source: &Domain, target: &Domain, config: &ExperimentConfig) -> Result<PairReport> {
    run_pair_seeded(source, target, config, config.rng_seed)
}

/// All ordered pairs of distinct domains.
pub fn run_grid(domains: &[Domain], config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if domains.len() < 2 {
        return Err(Error::Config(format!("need at least 2 domains, got {}", domains.len())));
    }
    let pairs: Vec<(usize, usize)> = (0..domains.len())
        .flat_map(|s| (0..domains.len()).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect();
    let work = || {
        pairs
            .par_iter()
            .map(|&(s, t)| {
                let seed = derive_seed(config.rng_seed, s as u64, t as u64);
                run_pair_seeded(&domains[s], &domains[t], config, seed)
                    .map_err(|e| e.context(format!("pair {} -> {}", domains[s].name, domains[t].name)))
            })
            .collect::<Result<Vec<_>>>()
    };
    let pairs = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    Ok(ExperimentReport {
        settings: ReportSettings::from_config(config),
        pairs,
    })
}
