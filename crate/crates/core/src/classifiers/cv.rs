use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::{svm_predict, svm_train_with, SvmParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub rng_seed: u64,
    pub tol: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            c_grid: (-3..=4).map(|e| 10f64.powi(e)).collect(),
            folds: 5,
            rng_seed: 0,
            tol: 1e-3,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() {
            return Err(Error::Config("C grid is empty".into()));
        }
        if let Some(c) = self.c_grid.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::Config(format!("C grid value {c} is not positive")));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best_c: f64,
    pub best_accuracy: f64,
    /// `(C, mean fold accuracy)`; `None` when a fold failed to converge.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Assigns each row to a fold, class by class after a seeded shuffle.
pub fn stratified_folds(labels: &[u32], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let smallest = by_class.values().map(Vec::len).min().unwrap_or(0);
    if folds < 2 || folds > smallest {
        return Err(Error::Config(format!(
            "{folds} folds infeasible: smallest class has {smallest} rows"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        for (pos, &row) in rows.iter().enumerate() {
            assignment[row] = pos % folds;
        }
    }
    Ok(assignment)
}

fn submatrix(k: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| k[(rows[a], cols[b])])
}

/// Mean stratified k-fold accuracy for a single C.
pub fn cv_accuracy(kernel: &DMatrix<f64>, labels: &[u32], assignment: &[usize], folds: usize, params: &SvmParams) -> Result<f64> {
    let mut total = 0.0;
    for f in 0..folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != f).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
        let train_labels: Vec<u32> = train.iter().map(|&i| labels[i]).collect();
        let model = svm_train_with(&submatrix(kernel, &train, &train), &train_labels, params)?;
        let pred = svm_predict(&model, &submatrix(kernel, &train, &test))?;
        let correct = pred.iter().zip(&test).filter(|(p, &i)| **p == labels[i]).count();
        total += correct as f64 / test.len() as f64;
    }
    Ok(total / folds as f64)
}

/// Picks the grid C with the highest mean CV accuracy, smaller C on ties.
pub fn cross_validate_c(kernel: &DMatrix<f64>, labels: &[u32], config: &CvConfig) -> Result<CvOutcome> {
    config.validate()?;
    if kernel.shape() != (labels.len(), labels.len()) {
        return Err(Error::Config(format!(
            "kernel is {:?} but there are {} labels",
            kernel.shape(),
            labels.len()
        )));
    }
    let assignment = stratified_folds(labels, config.folds, config.rng_seed)?;
    let mut grid = config.c_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let scores: Vec<(f64, Option<f64>)> = grid
        .par_iter()
        .map(|&c| {
            let params = SvmParams::new(c, config.tol);
            match cv_accuracy(kernel, labels, &assignment, config.folds, &params) {
                Ok(acc) => Ok((c, Some(acc))),
                Err(e) if matches!(e.root(), Error::NonConvergence { .. }) => {
                    log::warn!("C = {c} skipped in cross-validation: {e}");
                    Ok((c, None))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, f64)> = None;
    for &(c, acc) in &scores {
        if let Some(acc) = acc {
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((c, acc));
            }
        }
    }
    let (best_c, best_accuracy) = best.ok_or_else(|| Error::NonConvergence {
        iterations: SvmParams::default().max_iter,
        gap: f64::NAN,
    })?;
    Ok(CvOutcome {
        best_c,
        best_accuracy,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, Vec<u32>) {
        let pts: Vec<[f64; 2]> = (0..10)
            .map(|i| {
                let s = if i < 5 { 3.0 } else { -3.0 };
                [s + 0.1 * i as f64, s - 0.05 * i as f64]
            })
            .collect();
        let k = DMatrix::from_fn(10, 10, |i, j| pts[i][0] * pts[j][0] + pts[i][1] * pts[j][1]);
        (k, (0..10).map(|i| u32::from(i >= 5)).collect())
    }

    #[test]
    fn default_grid_is_decades() {
        let g = CvConfig::default().c_grid;
        assert_eq!(g.len(), 8);
        assert!((g[0] - 1e-3).abs() < 1e-18 && (g[7] - 1e4).abs() < 1e-9);
    }

    #[test]
    fn singleton_grid() {
        let (k, l) = toy();
        let cfg = CvConfig { c_grid: vec![0.5], ..Default::default() };
        assert_eq!(cross_validate_c(&k, &l, &cfg).unwrap().best_c, 0.5);
    }

    #[test]
    fn ties_pick_smallest_c_and_separable_reaches_full_accuracy() {
        let (k, l) = toy();
        let out = cross_validate_c(&k, &l, &CvConfig::default()).unwrap();
        assert_eq!(out.best_accuracy, 1.0);
        // every C separates this data, so the smallest wins
        assert!(out.scores.iter().all(|(_, a)| *a == Some(1.0)));
        assert_eq!(out.best_c, 1e-3);
        // verify directly
        let folds = stratified_folds(&l, 5, 0).unwrap();
        let acc = cv_accuracy(&k, &l, &folds, 5, &SvmParams::new(out.best_c, 1e-3)).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn folds_are_stratified_and_deterministic() {
        let labels: Vec<u32> = (0..40).map(|i| i % 4).collect();
        let a = stratified_folds(&labels, 5, 9).unwrap();
        assert_eq!(a, stratified_folds(&labels, 5, 9).unwrap());
        for f in 0..5 {
            for c in 0..4 {
                let n = (0..40).filter(|&i| a[i] == f && labels[i] == c).count();
                assert_eq!(n, 2);
            }
        }
    }

    #[test]
    fn infeasible_folds() {
        let (k, l) = toy();
        let cfg = CvConfig { folds: 6, ..Default::default() };
        assert_eq!(cross_validate_c(&k, &l, &cfg).unwrap_err().kind(), "config");
    }
}
