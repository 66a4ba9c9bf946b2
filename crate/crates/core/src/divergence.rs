//! Proxy HΔH divergence between two domains.
//!
//! Source rows get pseudo-label 0 and target rows pseudo-label 1. Each domain
//! is split at random into a train and a test part, a linear SVM (C = 1) is
//! trained to tell the domains apart, and its test error `err` gives the
//! estimate `2·(1 − 2·err)`, clamped to `[0, 2]`. Zero means the domains are
//! indistinguishable to a linear classifier, two means fully separable.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::svm::{svm_predict, svm_train_with, SvmParams};
use crate::error::{Error, Result};
use crate::subspace::{project_source, AlignmentMatrix, Subspace};

const DISCRIMINATOR_C: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub classifier_test_error: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub rng_seed: u64,
}

/// Mean and spread of estimates over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSummary {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl DivergenceSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            std,
            per_seed: values,
        }
    }
}

fn split_domain(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Divergence estimate from rows of the two domains in a shared space.
pub fn estimate_hdh(
    xs: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    split_fraction: f64,
    rng_seed: u64,
) -> Result<DivergenceEstimate> {
    if xs.nrows() < 2 || xt.nrows() < 2 {
        return Err(Error::InsufficientData(format!(
            "each domain needs at least 2 rows (source {}, target {})",
            xs.nrows(),
            xt.nrows()
        )));
    }
    if xs.ncols() != xt.ncols() {
        return Err(Error::Config(format!(
            "source dimension {} differs from target dimension {}",
            xs.ncols(),
            xt.ncols()
        )));
    }
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must be in (0, 1), got {split_fraction}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (s_train, s_test) = split_domain(xs.nrows(), split_fraction, &mut rng);
    let (t_train, t_test) = split_domain(xt.nrows(), split_fraction, &mut rng);

    let gather = |src: &[usize], tgt: &[usize]| {
        let mut m = DMatrix::zeros(src.len() + tgt.len(), xs.ncols());
        for (r, &i) in src.iter().enumerate() {
            m.set_row(r, &xs.row(i));
        }
        for (r, &i) in tgt.iter().enumerate() {
            m.set_row(src.len() + r, &xt.row(i));
        }
        let labels: Vec<u32> = std::iter::repeat_n(0, src.len())
            .chain(std::iter::repeat_n(1, tgt.len()))
            .collect();
        (m, labels)
    };
    let (train, train_labels) = gather(&s_train, &t_train);
    let (test, test_labels) = gather(&s_test, &t_test);

    let kernel = &train * train.transpose();
    let cross = &train * test.transpose();
    let model = svm_train_with(&kernel, &train_labels, &SvmParams::new(DISCRIMINATOR_C, 1e-3))?;
    let pred = svm_predict(&model, &cross)?;
    let wrong = pred.iter().zip(&test_labels).filter(|(p, l)| p != l).count();
    let err = wrong as f64 / test_labels.len() as f64;

    Ok(DivergenceEstimate {
        value: (2.0 * (1.0 - 2.0 * err)).clamp(0.0, 2.0),
        classifier_test_error: err,
        n_train: train_labels.len(),
        n_test: test_labels.len(),
        rng_seed,
    })
}

/// Divergence after mapping source rows through `Z_S·M` and target rows
/// through `Z_T`, each centred by its own domain mean.
pub fn estimate_hdh_in_subspaces(
    xs: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    zs: &Subspace,
    zt: &Subspace,
    m: &AlignmentMatrix,
    split_fraction: f64,
    rng_seed: u64,
) -> Result<DivergenceEstimate> {
    if zs.basis.shape() != zt.basis.shape() {
        return Err(Error::Config(format!(
            "subspace shapes differ: {:?} vs {:?}",
            zs.basis.shape(),
            zt.basis.shape()
        )));
    }
    let ps = project_source(xs, zs, m)?;
    let pt = zt.project(xt)?;
    estimate_hdh(&ps, &pt, split_fraction, rng_seed)
}

/// Runs `estimate` once per seed and summarises the values.
pub fn repeat_estimates<F>(seeds: &[u64], estimate: F) -> Result<DivergenceSummary>
where
    F: Fn(u64) -> Result<DivergenceEstimate> + Sync,
{
    let values = seeds
        .par_iter()
        .map(|&s| estimate(s).map(|e| e.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(DivergenceSummary::from_values(values))
}
