//! Comparison methods that do not align subspaces.

use nalgebra::DMatrix;

use super::cv::{cross_validate_c, CvConfig};
use super::svm::{svm_predict, svm_train};
use crate::error::{Error, Result};
use crate::subspace::{pca_fit_full, variance_dim};

fn check_inputs(xs: &DMatrix<f64>, labels: &[u32], xt: &DMatrix<f64>) -> Result<()> {
    if xs.nrows() == 0 {
        return Err(Error::EmptyInput("source domain has no rows".into()));
    }
    if labels.len() != xs.nrows() {
        return Err(Error::Config(format!(
            "{} labels for {} source rows",
            labels.len(),
            xs.nrows()
        )));
    }
    if xs.ncols() != xt.ncols() {
        return Err(Error::Config(format!(
            "source dimension {} differs from target dimension {}",
            xs.ncols(),
            xt.ncols()
        )));
    }
    Ok(())
}

/// Euclidean 1-NN of each target row among the source rows; the lowest
/// source index wins exact ties.
pub fn nearest_neighbor(xs: &DMatrix<f64>, labels: &[u32], xt: &DMatrix<f64>) -> Result<Vec<u32>> {
    check_inputs(xs, labels, xt)?;
    let dots = xs * xt.transpose();
    let src_sq: Vec<f64> = xs.row_iter().map(|r| r.norm_squared()).collect();
    Ok((0..xt.nrows())
        .map(|j| {
            let t_sq = xt.row(j).norm_squared();
            let mut best = (0, f64::INFINITY);
            for (i, s_sq) in src_sq.iter().enumerate() {
                let d = s_sq + t_sq - 2.0 * dots[(i, j)];
                if d < best.1 {
                    best = (i, d);
                }
            }
            labels[best.0]
        })
        .collect())
}

/// 1-NN in the raw feature space.
pub fn baseline1_nn(xs: &DMatrix<f64>, labels: &[u32], xt: &DMatrix<f64>) -> Result<Vec<u32>> {
    nearest_neighbor(xs, labels, xt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointPcaPrediction {
    pub predictions: Vec<u32>,
    /// Number of joint principal components retained.
    pub dim: usize,
}

/// 1-NN after projecting both domains onto one PCA subspace fitted to their
/// union, keeping the fewest components that reach `variance_fraction`.
pub fn baseline2_joint_pca_nn(
    xs: &DMatrix<f64>,
    labels: &[u32],
    xt: &DMatrix<f64>,
    variance_fraction: f64,
) -> Result<JointPcaPrediction> {
    check_inputs(xs, labels, xt)?;
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "variance fraction must be in (0, 1], got {variance_fraction}"
        )));
    }
    let mut joint = DMatrix::zeros(xs.nrows() + xt.nrows(), xs.ncols());
    joint.rows_mut(0, xs.nrows()).copy_from(xs);
    joint.rows_mut(xs.nrows(), xt.nrows()).copy_from(xt);
    let full = pca_fit_full(&joint)?;
    let dim = variance_dim(&full.eigenvalues, variance_fraction);
    let z = full.truncate(dim)?;
    let ps = z.project(xs)?;
    let pt = z.project(xt)?;
    Ok(JointPcaPrediction {
        predictions: nearest_neighbor(&ps, labels, &pt)?,
        dim,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmPrediction {
    pub predictions: Vec<u32>,
    pub c: f64,
    pub cv_accuracy: f64,
}

/// Linear-kernel SVM on raw features with cross-validated C.
pub fn svm_na(xs: &DMatrix<f64>, labels: &[u32], xt: &DMatrix<f64>, config: &CvConfig) -> Result<SvmPrediction> {
    check_inputs(xs, labels, xt)?;
    let kernel = xs * xs.transpose();
    let cross = xs * xt.transpose();
    let cv = cross_validate_c(&kernel, labels, config)?;
    let model = svm_train(&kernel, labels, cv.best_c, config.tol)?;
    Ok(SvmPrediction {
        predictions: svm_predict(&model, &cross)?,
        c: cv.best_c,
        cv_accuracy: cv.best_accuracy,
    })
}
