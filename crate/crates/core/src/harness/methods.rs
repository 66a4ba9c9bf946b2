//! The five compared methods, run on target features only.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classifiers::svm::{indefiniteness, svm_predict, svm_train};
use crate::classifiers::{baseline1_nn, baseline2_joint_pca_nn, cross_validate_c, knn_predict, svm_na, CvConfig};
use crate::error::{Error, Result};
use crate::subspace::{
    align, alignment_residual, cross_kernel, pca_fit_full, select_dim, source_kernel, subspace_divergence,
    AlignmentMatrix, DimPolicy, Subspace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline1,
    Baseline2,
    SvmNa,
    NnSa,
    SvmSa,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Baseline1,
        Method::Baseline2,
        Method::SvmNa,
        Method::NnSa,
        Method::SvmSa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline1 => "baseline1",
            Method::Baseline2 => "baseline2",
            Method::SvmNa => "svm_na",
            Method::NnSa => "nn_sa",
            Method::SvmSa => "svm_sa",
        }
    }

    /// Whether the method draws on the per-repeat seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Method::SvmNa | Method::SvmSa)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Fitted source/target subspaces and their alignment.
#[derive(Debug, Clone)]
pub struct Adaptation {
    pub source: Subspace,
    pub target: Subspace,
    pub alignment: AlignmentMatrix,
    pub dim: usize,
    /// `‖Z_S − Z_T‖²_F` before alignment.
    pub divergence_before: f64,
    /// `‖Z_S·M* − Z_T‖²_F` after alignment.
    pub divergence_after: f64,
}

/// Fits both domain subspaces, picks d and aligns source to target.
pub fn adapt(xs: &DMatrix<f64>, xt: &DMatrix<f64>, policy: DimPolicy) -> Result<Adaptation> {
    let full_s = pca_fit_full(xs).map_err(|e| e.context("source PCA"))?;
    let full_t = pca_fit_full(xt).map_err(|e| e.context("target PCA"))?;
    let dim = select_dim(&full_s.eigenvalues, &full_t.eigenvalues, policy)?;
    let source = full_s.truncate(dim)?;
    let target = full_t.truncate(dim)?;
    let alignment = align(&source, &target)?;
    Ok(Adaptation {
        divergence_before: subspace_divergence(&source, &target)?,
        divergence_after: alignment_residual(&source, &target, &alignment)?,
        source,
        target,
        alignment,
        dim,
    })
}

/// Precomputed SA kernels for one source/target pair.
#[derive(Debug, Clone)]
pub struct SaKernels {
    pub train: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub max_asymmetry: f64,
    pub min_eigenvalue: Option<f64>,
}

impl SaKernels {
    pub fn new(xs: &DMatrix<f64>, xt: &DMatrix<f64>, a: &Adaptation) -> Result<Self> {
        let train = source_kernel(xs, &a.source, &a.target, &a.alignment)?;
        let cross = cross_kernel(xs, xt, &a.source, &a.target, &a.alignment)?;
        let min_eigenvalue = indefiniteness(&train.values);
        if let Some(v) = min_eigenvalue {
            log::warn!("SA training kernel is indefinite (min eigenvalue {v:.3e})");
        }
        Ok(Self {
            train: train.values,
            cross,
            max_asymmetry: train.max_asymmetry,
            min_eigenvalue,
        })
    }
}

/// Predictions of one method on one repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub predictions: Vec<u32>,
    pub chosen_c: Option<f64>,
    pub chosen_dim: Option<usize>,
}

pub fn nn_sa(kernels: &SaKernels, source_labels: &[u32], k: usize) -> Result<Vec<u32>> {
    knn_predict(&kernels.cross, source_labels, k)
}

pub fn svm_sa(kernels: &SaKernels, source_labels: &[u32], cv: &CvConfig) -> Result<(Vec<u32>, f64)> {
    let best = cross_validate_c(&kernels.train, source_labels, cv)?;
    let model = svm_train(&kernels.train, source_labels, best.best_c, cv.tol)?;
    Ok((svm_predict(&model, &kernels.cross)?, best.best_c))
}

/// Everything a method may need. Target labels are deliberately absent.
pub struct MethodInputs<'a> {
    pub xs: &'a DMatrix<f64>,
    pub source_labels: &'a [u32],
    pub xt: &'a DMatrix<f64>,
    pub adaptation: Option<&'a Adaptation>,
    pub kernels: Option<&'a SaKernels>,
    pub knn_k: usize,
    pub baseline2_variance: f64,
}

pub fn run_method(method: Method, inputs: &MethodInputs<'_>, cv: &CvConfig) -> Result<MethodOutput> {
    let needs_sa = || {
        inputs
            .kernels
            .zip(inputs.adaptation)
            .ok_or_else(|| Error::Config(format!("{method} needs a fitted adaptation")))
    };
    Ok(match method {
        Method::Baseline1 => MethodOutput {
            predictions: baseline1_nn(inputs.xs, inputs.source_labels, inputs.xt)?,
            chosen_c: None,
            chosen_dim: None,
        },
        Method::Baseline2 => {
            let out = baseline2_joint_pca_nn(inputs.xs, inputs.source_labels, inputs.xt, inputs.baseline2_variance)?;
            MethodOutput {
                predictions: out.predictions,
                chosen_c: None,
                chosen_dim: Some(out.dim),
            }
        }
        Method::SvmNa => {
            let out = svm_na(inputs.xs, inputs.source_labels, inputs.xt, cv)?;
            MethodOutput {
                predictions: out.predictions,
                chosen_c: Some(out.c),
                chosen_dim: None,
            }
        }
        Method::NnSa => {
            let (k, a) = needs_sa()?;
            MethodOutput {
                predictions: nn_sa(k, inputs.source_labels, inputs.knn_k)?,
                chosen_c: None,
                chosen_dim: Some(a.dim),
            }
        }
        Method::SvmSa => {
            let (k, a) = needs_sa()?;
            let (predictions, c) = svm_sa(k, inputs.source_labels, cv)?;
            MethodOutput {
                predictions,
                chosen_c: Some(c),
                chosen_dim: Some(a.dim),
            }
        }
    })
}
