//! PCA subspaces and subspace alignment.
//!
//! Each domain is summarised by the top-`d` principal directions of its
//! mean-centred feature rows. The source basis `Z_S` is mapped onto the target
//! basis `Z_T` by the closed-form minimiser of `‖Z_S·M − Z_T‖²_F`, which is
//! `M* = Z_Sᵀ·Z_T` because `Z_S` has orthonormal columns. Source rows are then
//! compared with target rows through `Z_A = Z_S·M*`:
//!
//! ```text
//! Sim(X_S, X_T) = (X_S − μ_S)·Z_A · ((X_T − μ_T)·Z_T)ᵀ
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};

/// Eigenvalues at or below `RANK_RTOL × λ_max` are treated as zero.
const RANK_RTOL: f64 = 1e-10;

/// Orthonormal PCA basis of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    /// D×d, orthonormal columns sorted by decreasing eigenvalue.
    pub basis: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Column means used to centre rows before projection.
    pub mean: DVector<f64>,
}

impl Subspace {
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Keeps the leading `d` components.
    pub fn truncate(&self, d: usize) -> Result<Subspace> {
        if d == 0 || d > self.dim() {
            return Err(Error::Config(format!(
                "cannot truncate a {}-dimensional subspace to {d}",
                self.dim()
            )));
        }
        Ok(Subspace {
            basis: self.basis.columns(0, d).into_owned(),
            eigenvalues: self.eigenvalues[..d].to_vec(),
            mean: self.mean.clone(),
        })
    }

    /// `(x − mean)·basis`, one projected row per input row.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.project_with(x, &self.basis)
    }

    fn project_with(&self, x: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.ambient_dim() {
            return Err(Error::Config(format!(
                "feature dimension {} does not match subspace dimension {}",
                x.ncols(),
                self.ambient_dim()
            )));
        }
        Ok(center(x, &self.mean) * basis)
    }

    /// Largest deviation of `basisᵀ·basis` from the identity, Frobenius norm.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.basis.transpose() * &self.basis;
        (g - DMatrix::identity(self.dim(), self.dim())).norm()
    }

    /// Writes a JSON header line followed by the row-major f64 basis.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = SubspaceHeader {
            ambient_dim: self.ambient_dim(),
            dim: self.dim(),
            eigenvalues: self.eigenvalues.clone(),
            mean: self.mean.iter().copied().collect(),
        };
        let mut buf = serde_json::to_vec(&header)?;
        buf.push(b'\n');
        for i in 0..self.ambient_dim() {
            for j in 0..self.dim() {
                buf.extend_from_slice(&self.basis[(i, j)].to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Subspace> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut line = Vec::new();
        reader
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::io(path, e))?;
        let header: SubspaceHeader = serde_json::from_slice(&line)?;
        let mut payload = Vec::new();
        reader
            .read_to_end(&mut payload)
            .map_err(|e| Error::io(path, e))?;
        let expected = header.ambient_dim * header.dim * 8;
        if payload.len() != expected || header.eigenvalues.len() != header.dim || header.mean.len() != header.ambient_dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                location: Location::Byte(line.len() as u64),
                message: format!("payload has {} bytes, expected {expected}", payload.len()),
            });
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Subspace {
            basis: DMatrix::from_row_slice(header.ambient_dim, header.dim, &values),
            eigenvalues: header.eigenvalues,
            mean: DVector::from_vec(header.mean),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SubspaceHeader {
    #[serde(rename = "D")]
    ambient_dim: usize,
    #[serde(rename = "d")]
    dim: usize,
    eigenvalues: Vec<f64>,
    mean: Vec<f64>,
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    c
}

/// Eigenpairs of a symmetric matrix, sorted by decreasing eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Flips each column so that its largest-magnitude entry is positive.
fn fix_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, v) } else { best });
        if pivot.1 < 0.0 {
            col.neg_mut();
        }
    }
}

/// Fits every principal component the data supports numerically, up to
/// `min(n − 1, D)`.
pub fn pca_fit_full(x: &DMatrix<f64>) -> Result<Subspace> {
    let (n, dim) = x.shape();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    let mean = column_means(x);
    let xc = center(x, &mean);
    let denom = (n - 1) as f64;
    let cap = (n - 1).min(dim);

    // Covariance route for tall data, Gram route when D exceeds n.
    let (values, mut basis) = if dim <= n {
        let cov = (xc.transpose() * &xc) / denom;
        sorted_eigen(cov)
    } else {
        let gram = (&xc * xc.transpose()) / denom;
        let (values, u) = sorted_eigen(gram);
        let lmax = values.first().copied().unwrap_or(0.0).max(0.0);
        let keep = values
            .iter()
            .take(cap)
            .take_while(|&&v| v > RANK_RTOL * lmax && v > 0.0)
            .count();
        let mut basis = DMatrix::zeros(dim, keep);
        for k in 0..keep {
            let v = xc.transpose() * u.column(k);
            let norm = v.norm();
            basis.set_column(k, &(v / norm));
        }
        (values, basis)
    };

    let lmax = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank = values
        .iter()
        .take(cap)
        .take_while(|&&v| v > RANK_RTOL * lmax && v > 0.0)
        .count()
        .min(basis.ncols());
    if rank == 0 {
        return Err(Error::Rank {
            requested: 1,
            achievable: 0,
        });
    }
    basis = basis.columns(0, rank).into_owned();
    fix_signs(&mut basis);
    Ok(Subspace {
        basis,
        eigenvalues: values[..rank].to_vec(),
        mean,
    })
}

/// Top-`d` PCA subspace of the rows of `x`.
pub fn pca_fit(x: &DMatrix<f64>, d: usize) -> Result<Subspace> {
    let (n, dim) = x.shape();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    let max_d = (n - 1).min(dim);
    if d == 0 || d > max_d {
        return Err(Error::Config(format!(
            "subspace dimension {d} outside 1..={max_d} for {n}×{dim} data"
        )));
    }
    let full = pca_fit_full(x).map_err(|e| match e {
        Error::Rank { achievable, .. } => Error::Rank {
            requested: d,
            achievable,
        },
        other => other,
    })?;
    if full.dim() < d {
        return Err(Error::Rank {
            requested: d,
            achievable: full.dim(),
        });
    }
    full.truncate(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimPolicy {
    Fixed(usize),
    /// Smallest d at which both domains reach this cumulative variance fraction.
    Variance(f64),
}

impl Default for DimPolicy {
    fn default() -> Self {
        DimPolicy::Fixed(30)
    }
}

/// Smallest d whose leading eigenvalues explain `fraction` of the spectrum.
pub(crate) fn variance_dim(eigvals: &[f64], fraction: f64) -> usize {
    let total: f64 = eigvals.iter().sum();
    let mut acc = 0.0;
    for (i, v) in eigvals.iter().enumerate() {
        acc += v;
        if acc / total >= fraction - 1e-12 {
            return i + 1;
        }
    }
    eigvals.len()
}

/// Chooses the common subspace dimension for a source/target pair.
pub fn select_dim(eigvals_s: &[f64], eigvals_t: &[f64], policy: DimPolicy) -> Result<usize> {
    if eigvals_s.is_empty() || eigvals_t.is_empty() {
        return Err(Error::EmptyInput("eigenvalue spectrum is empty".into()));
    }
    let common = eigvals_s.len().min(eigvals_t.len());
    match policy {
        DimPolicy::Fixed(d) => {
            if d == 0 {
                return Err(Error::Config("fixed dimension must be positive".into()));
            }
            Ok(d.min(common))
        }
        DimPolicy::Variance(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "variance fraction must be in (0, 1], got {f}"
                )));
            }
            let d = variance_dim(eigvals_s, f).max(variance_dim(eigvals_t, f));
            Ok(d.min(common))
        }
    }
}

fn check_pair(zs: &Subspace, zt: &Subspace) -> Result<()> {
    if zs.basis.shape() != zt.basis.shape() {
        return Err(Error::Config(format!(
            "subspace shapes differ: {:?} vs {:?}",
            zs.basis.shape(),
            zt.basis.shape()
        )));
    }
    Ok(())
}

/// `‖Z_S − Z_T‖²_F`.
pub fn subspace_divergence(zs: &Subspace, zt: &Subspace) -> Result<f64> {
    check_pair(zs, zt)?;
    Ok((&zs.basis - &zt.basis).norm_squared())
}

/// d×d matrix mapping the source basis onto the target basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix {
    pub m: DMatrix<f64>,
}

/// Closed-form subspace alignment `M* = Z_Sᵀ·Z_T`.
pub fn align(zs: &Subspace, zt: &Subspace) -> Result<AlignmentMatrix> {
    check_pair(zs, zt)?;
    Ok(AlignmentMatrix {
        m: zs.basis.transpose() * &zt.basis,
    })
}

/// `F(M) = ‖Z_S·M − Z_T‖²_F`.
pub fn alignment_residual(zs: &Subspace, zt: &Subspace, m: &AlignmentMatrix) -> Result<f64> {
    check_pair(zs, zt)?;
    if m.m.shape() != (zs.dim(), zs.dim()) {
        return Err(Error::Config(format!(
            "alignment matrix is {:?}, expected {}×{}",
            m.m.shape(),
            zs.dim(),
            zs.dim()
        )));
    }
    Ok((&zs.basis * &m.m - &zt.basis).norm_squared())
}

/// Aligned source basis `Z_A = Z_S·M`.
pub fn aligned_basis(zs: &Subspace, m: &AlignmentMatrix) -> Result<DMatrix<f64>> {
    if m.m.shape() != (zs.dim(), zs.dim()) {
        return Err(Error::Config(format!(
            "alignment matrix is {:?}, expected {}×{}",
            m.m.shape(),
            zs.dim(),
            zs.dim()
        )));
    }
    Ok(&zs.basis * &m.m)
}

/// Source rows projected into the aligned subspace, `(X_S − μ_S)·Z_S·M`.
pub fn project_source(xs: &DMatrix<f64>, zs: &Subspace, m: &AlignmentMatrix) -> Result<DMatrix<f64>> {
    let za = aligned_basis(zs, m)?;
    zs.project_with(xs, &za)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    /// n_S×n_T.
    pub values: DMatrix<f64>,
    pub row_ids: Vec<usize>,
    pub col_ids: Vec<usize>,
}

/// Source-vs-target similarity through the aligned subspace.
pub fn similarity(
    xs: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    zs: &Subspace,
    zt: &Subspace,
    m: &AlignmentMatrix,
) -> Result<SimilarityMatrix> {
    let values = cross_kernel(xs, xt, zs, zt, m)?;
    Ok(SimilarityMatrix {
        row_ids: (0..values.nrows()).collect(),
        col_ids: (0..values.ncols()).collect(),
        values,
    })
}

/// `(X_S − μ_S)·Z_A · ((X_T − μ_T)·Z_T)ᵀ`, n_S×n_T.
pub fn cross_kernel(
    xs: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    zs: &Subspace,
    zt: &Subspace,
    m: &AlignmentMatrix,
) -> Result<DMatrix<f64>> {
    check_pair(zs, zt)?;
    let ps = project_source(xs, zs, m)?;
    let pt = zt.project(xt)?;
    Ok(ps * pt.transpose())
}

/// Symmetrized source training kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceKernel {
    pub values: DMatrix<f64>,
    /// `max |K − Kᵀ|` before symmetrization.
    pub max_asymmetry: f64,
}

/// Threshold above which kernel asymmetry is worth reporting.
pub const ASYMMETRY_REPORT_THRESHOLD: f64 = 1e-6;

/// `(K + Kᵀ)/2` with `K = (X_S − μ_S)·Z_A · ((X_S − μ_S)·Z_T)ᵀ`.
pub fn source_kernel(
    xs: &DMatrix<f64>,
    zs: &Subspace,
    zt: &Subspace,
    m: &AlignmentMatrix,
) -> Result<SourceKernel> {
    check_pair(zs, zt)?;
    let za = aligned_basis(zs, m)?;
    let left = zs.project_with(xs, &za)?;
    let right = zs.project_with(xs, &zt.basis)?;
    let k = left * right.transpose();
    let n = k.nrows();
    let mut values = DMatrix::zeros(n, n);
    let mut max_asymmetry = 0.0f64;
    for i in 0..n {
        values[(i, i)] = k[(i, i)];
        for j in 0..i {
            max_asymmetry = max_asymmetry.max((k[(i, j)] - k[(j, i)]).abs());
            let s = 0.5 * (k[(i, j)] + k[(j, i)]);
            values[(i, j)] = s;
            values[(j, i)] = s;
        }
    }
    if max_asymmetry > ASYMMETRY_REPORT_THRESHOLD {
        log::debug!("source kernel asymmetry {max_asymmetry:.3e} removed by symmetrization");
    }
    Ok(SourceKernel {
        values,
        max_asymmetry,
    })
}
