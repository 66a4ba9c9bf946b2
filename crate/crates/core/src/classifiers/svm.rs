//! C-SVC on a precomputed kernel.
//!
//! Each pair of classes gets its own binary machine (one-vs-one). A binary
//! machine solves the soft-margin dual
//!
//! ```text
//! min_α  ½ αᵀQα − Σα    s.t.  0 ≤ α_i ≤ C,  Σ y_i α_i = 0,   Q_ij = y_i y_j K_ij
//! ```
//!
//! with SMO: two multipliers are updated per step, picked by maximal violation
//! for the first and by second-order gain for the second. The loop stops once
//! the maximal KKT violation `m(α) − M(α)` drops below `tol`. Non-positive
//! curvature along the chosen pair is replaced by a small constant so that
//! indefinite kernels still make progress.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

impl SvmParams {
    pub fn new(c: f64, tol: f64) -> Self {
        Self {
            c,
            tol,
            ..Self::default()
        }
    }
}

/// One binary sub-problem of the one-vs-one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    /// Class mapped to `y = +1`.
    pub positive: u32,
    /// Class mapped to `y = −1`.
    pub negative: u32,
    /// Training rows participating in this sub-problem.
    pub indices: Vec<usize>,
    #[serde(skip)]
    pub alpha: Vec<f64>,
    #[serde(skip)]
    pub y: Vec<f64>,
    /// Decision value is `Σ y_i α_i K(i, x) + bias`.
    pub bias: f64,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_gap: f64,
}

impl BinaryMachine {
    pub fn decision(&self, cross: &DMatrix<f64>, col: usize) -> f64 {
        self.indices
            .iter()
            .zip(self.alpha.iter().zip(&self.y))
            .filter(|(_, (a, _))| **a != 0.0)
            .map(|(&i, (a, y))| a * y * cross[(i, col)])
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSvm {
    /// Sorted class ids.
    pub classes: Vec<u32>,
    pub c: f64,
    pub tol: f64,
    pub n_train: usize,
    pub kernel_fingerprint: u64,
    pub machines: Vec<BinaryMachine>,
}

/// Raw solution of one binary dual problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Offset `ρ`; the decision function is `Σ y_i α_i K_i· − ρ`.
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_gap: f64,
}

/// Solves the binary dual for kernel `k` and labels `y ∈ {±1}`.
pub fn solve_binary(k: &DMatrix<f64>, y: &[f64], params: &SvmParams) -> Result<DualSolution> {
    let n = y.len();
    debug_assert_eq!(k.shape(), (n, n));
    let c = params.c;
    let mut alpha = vec![0.0; n];
    // G = Qα − 1
    let mut grad = vec![-1.0; n];
    let qd: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();

    let mut iterations = 0;
    let mut gap;
    loop {
        let (sel, g) = select_working_set(k, y, &alpha, &grad, &qd, c);
        gap = g;
        let Some((i, j)) = sel.filter(|_| gap >= params.tol) else {
            break;
        };
        if iterations >= params.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                gap,
            });
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kij = k[(i, j)];
        if y[i] != y[j] {
            let quad = positive_or_tau(qd[i] + qd[j] + 2.0 * y[i] * y[j] * kij);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = positive_or_tau(qd[i] + qd[j] - 2.0 * y[i] * y[j] * kij);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[(t, i)] * di + y[j] * k[(t, j)] * dj);
        }
    }

    let rho = compute_rho(y, &alpha, &grad, c);
    // ½αᵀQα − Σα = ½ Σ α_i (G_i − 1)
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    Ok(DualSolution {
        alpha,
        rho,
        objective,
        iterations,
        kkt_gap: gap,
    })
}

fn positive_or_tau(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        TAU
    }
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Returns the working pair (if any) and the current violation `m(α) − M(α)`.
fn select_working_set(
    k: &DMatrix<f64>,
    y: &[f64],
    alpha: &[f64],
    grad: &[f64],
    qd: &[f64],
    c: f64,
) -> (Option<(usize, usize)>, f64) {
    let n = y.len();
    let mut gmax = f64::NEG_INFINITY;
    let mut i_sel = None;
    for t in 0..n {
        if in_up(y[t], alpha[t], c) {
            let v = -y[t] * grad[t];
            if v >= gmax {
                gmax = v;
                i_sel = Some(t);
            }
        }
    }
    let mut gmin_neg = f64::NEG_INFINITY;
    let mut j_sel = None;
    let mut best_obj = f64::INFINITY;
    if let Some(i) = i_sel {
        for t in 0..n {
            if !in_low(y[t], alpha[t], c) {
                continue;
            }
            let v = y[t] * grad[t];
            gmin_neg = gmin_neg.max(v);
            let grad_diff = gmax + v;
            if grad_diff > 0.0 {
                let quad = positive_or_tau(qd[i] + qd[t] - 2.0 * k[(i, t)]);
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= best_obj {
                    best_obj = obj;
                    j_sel = Some(t);
                }
            }
        }
    }
    let gap = if i_sel.is_some() && gmin_neg.is_finite() {
        gmax + gmin_neg
    } else {
        0.0
    };
    (i_sel.zip(j_sel), gap)
}

fn compute_rho(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut sum_free = 0.0;
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// Maximal KKT violation `m(α) − M(α)` of a dual point, recomputed from
/// scratch. Zero or negative means optimal.
pub fn kkt_violation(k: &DMatrix<f64>, y: &[f64], alpha: &[f64], c: f64) -> f64 {
    let n = y.len();
    let grad: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| y[i] * y[j] * k[(i, j)] * alpha[j])
                .sum::<f64>()
                - 1.0
        })
        .collect();
    let up = (0..n)
        .filter(|&t| in_up(y[t], alpha[t], c))
        .map(|t| -y[t] * grad[t])
        .fold(f64::NEG_INFINITY, f64::max);
    let low = (0..n)
        .filter(|&t| in_low(y[t], alpha[t], c))
        .map(|t| -y[t] * grad[t])
        .fold(f64::INFINITY, f64::min);
    if up.is_finite() && low.is_finite() {
        up - low
    } else {
        0.0
    }
}

/// `½ αᵀQα − Σα`.
pub fn dual_objective(k: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[(i, j)];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

fn check_symmetric(kernel: &DMatrix<f64>) -> Result<()> {
    let n = kernel.nrows();
    if kernel.ncols() != n {
        return Err(Error::Precondition(format!(
            "kernel must be square, got {:?}",
            kernel.shape()
        )));
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (kernel[(i, j)], kernel[(j, i)]);
            if (a - b).abs() > 1e-8 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::Precondition(format!(
                    "kernel is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

fn fingerprint(kernel: &DMatrix<f64>) -> u64 {
    // FNV-1a over the raw bits.
    let mut h: u64 = 0xcbf29ce484222325;
    for v in kernel.iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

pub fn svm_train(kernel: &DMatrix<f64>, labels: &[u32], c: f64, tol: f64) -> Result<TrainedSvm> {
    svm_train_with(kernel, labels, &SvmParams::new(c, tol))
}

/// Trains one-vs-one machines on a symmetric precomputed kernel.
pub fn svm_train_with(kernel: &DMatrix<f64>, labels: &[u32], params: &SvmParams) -> Result<TrainedSvm> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "SVM needs at least 2 training rows, got {n}"
        )));
    }
    if kernel.shape() != (n, n) {
        return Err(Error::Config(format!(
            "kernel is {:?} but there are {n} labels",
            kernel.shape()
        )));
    }
    if !(params.c > 0.0 && params.c.is_finite()) || !(params.tol > 0.0) {
        return Err(Error::Config(format!(
            "C and tol must be positive, got C={} tol={}",
            params.c, params.tol
        )));
    }
    check_symmetric(kernel)?;
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Degenerate(format!(
            "training labels contain a single class ({})",
            classes[0]
        )));
    }

    let pairs: Vec<(u32, u32)> = classes
        .iter()
        .enumerate()
        .flat_map(|(a, &p)| classes[a + 1..].iter().map(move |&q| (p, q)))
        .collect();

    let machines = pairs
        .par_iter()
        .map(|&(pos, neg)| {
            let indices: Vec<usize> = (0..n).filter(|&i| labels[i] == pos || labels[i] == neg).collect();
            let y: Vec<f64> = indices
                .iter()
                .map(|&i| if labels[i] == pos { 1.0 } else { -1.0 })
                .collect();
            let sub = DMatrix::from_fn(indices.len(), indices.len(), |a, b| kernel[(indices[a], indices[b])]);
            let sol = solve_binary(&sub, &y, params)
                .map_err(|e| e.context(format!("classes {pos} vs {neg}")))?;
            Ok(BinaryMachine {
                positive: pos,
                negative: neg,
                indices,
                alpha: sol.alpha,
                y,
                bias: -sol.rho,
                objective: sol.objective,
                iterations: sol.iterations,
                kkt_gap: sol.kkt_gap,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TrainedSvm {
        classes,
        c: params.c,
        tol: params.tol,
        n_train: n,
        kernel_fingerprint: fingerprint(kernel),
        machines,
    })
}

/// One-vs-one vote per target column of an n_train×n_T cross kernel.
///
/// Vote ties go to the class with the largest summed |decision value| over
/// the contests it won, then to the smaller class id.
pub fn svm_predict(model: &TrainedSvm, cross: &DMatrix<f64>) -> Result<Vec<u32>> {
    if cross.nrows() != model.n_train {
        return Err(Error::Config(format!(
            "cross kernel has {} rows, model was trained on {}",
            cross.nrows(),
            model.n_train
        )));
    }
    let nc = model.classes.len();
    let slot = |c: u32| model.classes.binary_search(&c).expect("class of model");
    Ok((0..cross.ncols())
        .map(|col| {
            let mut votes = vec![0usize; nc];
            let mut strength = vec![0.0f64; nc];
            for m in &model.machines {
                let f = m.decision(cross, col);
                let winner = if f > 0.0 { m.positive } else { m.negative };
                votes[slot(winner)] += 1;
                strength[slot(winner)] += f.abs();
            }
            let best = (0..nc)
                .max_by(|&a, &b| {
                    votes[a]
                        .cmp(&votes[b])
                        .then(strength[a].total_cmp(&strength[b]))
                        .then(b.cmp(&a))
                })
                .expect("at least two classes");
            model.classes[best]
        })
        .collect())
}

/// Smallest eigenvalue of a symmetric kernel.
pub fn kernel_min_eigenvalue(kernel: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(kernel.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Returns the minimum eigenvalue when it is below `−1e-6·trace/n`.
pub fn indefiniteness(kernel: &DMatrix<f64>) -> Option<f64> {
    let n = kernel.nrows();
    if n == 0 {
        return None;
    }
    let min = kernel_min_eigenvalue(kernel);
    let threshold = -1e-6 * kernel.trace().abs() / n as f64;
    (min < threshold).then_some(min)
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    classes: Vec<u32>,
    c: f64,
    tol: f64,
    n_train: usize,
    kernel_fingerprint: u64,
    machines: Vec<BinaryMachine>,
}

impl TrainedSvm {
    /// JSON header line (class pairs, C, biases, training indices) followed
    /// by the signed dual coefficients `y_i α_i` of every machine as f64.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = ModelHeader {
            classes: self.classes.clone(),
            c: self.c,
            tol: self.tol,
            n_train: self.n_train,
            kernel_fingerprint: self.kernel_fingerprint,
            machines: self.machines.clone(),
        };
        let mut buf = serde_json::to_vec(&header)?;
        buf.push(b'\n');
        for m in &self.machines {
            for (a, y) in m.alpha.iter().zip(&m.y) {
                buf.extend_from_slice(&(a * y).to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut line = Vec::new();
        reader
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::io(path, e))?;
        let header: ModelHeader = serde_json::from_slice(&line)?;
        let mut payload = Vec::new();
        reader
            .read_to_end(&mut payload)
            .map_err(|e| Error::io(path, e))?;
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let expected: usize = header.machines.iter().map(|m| m.indices.len()).sum();
        if payload.len() != expected * 8 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                location: Location::Byte(line.len() as u64),
                message: format!("expected {expected} dual coefficients"),
            });
        }
        let mut machines = header.machines;
        for m in &mut machines {
            let coef: Vec<f64> = values.by_ref().take(m.indices.len()).collect();
            m.y = coef.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
            m.alpha = coef.iter().map(|v| v.abs()).collect();
        }
        Ok(TrainedSvm {
            classes: header.classes,
            c: header.c,
            tol: header.tol,
            n_train: header.n_train,
            kernel_fingerprint: header.kernel_fingerprint,
            machines,
        })
    }
}
