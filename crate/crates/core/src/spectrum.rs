//! FFT amplitude features.
//!
//! Each segment is zero-padded to a power-of-two length, transformed, and the
//! one-sided magnitude spectrum divided by the original segment length. The
//! spectrum is then z-normalized so every feature vector has zero mean and
//! unit population standard deviation.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};
use crate::signal_io::{FaultLabel, SegmentSet};

const DEGENERATE_STD: f64 = 1e-15;

/// Smallest power of two that is at least `len`.
pub fn default_fft_len(len: usize) -> usize {
    len.max(1).next_power_of_two()
}

/// Plans one FFT size and reuses it across segments.
#[derive(Clone)]
pub struct SpectrumExtractor {
    fft_len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectrumExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumExtractor")
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl SpectrumExtractor {
    pub fn new(fft_len: usize) -> Result<Self> {
        if fft_len == 0 || !fft_len.is_power_of_two() {
            return Err(Error::Config(format!(
                "fft_len must be a power of two, got {fft_len}"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(fft_len);
        Ok(Self { fft_len, fft })
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    /// Number of one-sided bins, `fft_len / 2 + 1`.
    pub fn output_len(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub fn amplitudes(&self, segment: &[f64]) -> Result<Vec<f64>> {
        let len = segment.len();
        if len == 0 {
            return Err(Error::EmptyInput("segment has no samples".into()));
        }
        if self.fft_len < len {
            return Err(Error::Config(format!(
                "fft_len {} is shorter than the segment ({len})",
                self.fft_len
            )));
        }
        let mut buf: Vec<Complex<f64>> = segment
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.fft_len)
            .collect();
        self.fft.process(&mut buf);
        let scale = 1.0 / len as f64;
        Ok(buf[..self.output_len()]
            .iter()
            .map(|c| c.norm() * scale)
            .collect())
    }
}

/// One-sided FFT magnitudes of `segment`, scaled by `1 / segment.len()`.
///
/// `fft_len` defaults to the next power of two at or above the segment length.
pub fn fft_amplitudes(segment: &[f64], fft_len: Option<usize>) -> Result<Vec<f64>> {
    let n = fft_len.unwrap_or_else(|| default_fft_len(segment.len()));
    SpectrumExtractor::new(n)?.amplitudes(segment)
}

/// `(v - mean) / std` with the population standard deviation.
pub fn z_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::Degenerate(format!(
            "z-normalization needs at least 2 values, got {}",
            v.len()
        )));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= DEGENERATE_STD) {
        return Err(Error::Degenerate(format!(
            "vector has zero standard deviation ({std:e})"
        )));
    }
    Ok(v.iter().map(|x| (x - mean) / std).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub fft_len: usize,
    pub segment_len: usize,
    pub sampling_rate_hz: f64,
}

/// n×D matrix of feature vectors, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: DMatrix<f64>,
    labels: Option<Vec<FaultLabel>>,
    pub meta: Option<FeatureMeta>,
}

impl FeatureMatrix {
    pub fn new(rows: DMatrix<f64>, labels: Option<Vec<FaultLabel>>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::EmptyInput("feature matrix has no rows or columns".into()));
        }
        if let Some(l) = &labels {
            if l.len() != rows.nrows() {
                return Err(Error::Precondition(format!(
                    "{} labels for {} rows",
                    l.len(),
                    rows.nrows()
                )));
            }
        }
        Ok(Self {
            rows,
            labels,
            meta: None,
        })
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn labels(&self) -> Option<&[FaultLabel]> {
        self.labels.as_deref()
    }

    /// Class ids of every row, or an error when the matrix is unlabeled.
    pub fn label_ids(&self) -> Result<Vec<u32>> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|x| x.class_id).collect())
            .ok_or_else(|| Error::Precondition("feature matrix carries no labels".into()))
    }

    pub fn without_labels(&self) -> Self {
        Self {
            rows: self.rows.clone(),
            labels: None,
            meta: self.meta.clone(),
        }
    }

    pub fn with_labels(mut self, labels: Vec<FaultLabel>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Precondition(format!(
                "{} labels for {} rows",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Writes the binary cache: `FMX1` magic, D and n as u64, a label flag
    /// byte, row-major f64 values, then (if labeled) u32 label ids followed by
    /// a name table of `(id u32, byte length u32, utf-8 name)` records.
    pub fn write_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(21 + self.n() * self.dim() * 8);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n() as u64).to_le_bytes());
        buf.push(u8::from(self.labels.is_some()));
        for i in 0..self.n() {
            for j in 0..self.dim() {
                buf.extend_from_slice(&self.rows[(i, j)].to_le_bytes());
            }
        }
        if let Some(labels) = &self.labels {
            for l in labels {
                buf.extend_from_slice(&l.class_id.to_le_bytes());
            }
            let mut names: Vec<&FaultLabel> = labels.iter().collect();
            names.sort();
            names.dedup();
            buf.extend_from_slice(&(names.len() as u32).to_le_bytes());
            for l in names {
                buf.extend_from_slice(&l.class_id.to_le_bytes());
                buf.extend_from_slice(&(l.class_name.len() as u32).to_le_bytes());
                buf.extend_from_slice(l.class_name.as_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { path, bytes: &bytes, pos: 0 };
        if cur.take(4)? != CACHE_MAGIC {
            return Err(cur.error("bad magic"));
        }
        let dim = cur.u64()? as usize;
        let n = cur.u64()? as usize;
        let labeled = match cur.take(1)?[0] {
            0 => false,
            1 => true,
            _ => return Err(cur.error("bad label flag")),
        };
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            data.push(f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")));
        }
        let rows = DMatrix::from_row_slice(n, dim, &data);
        let labels = if labeled {
            let ids: Vec<u32> = (0..n).map(|_| cur.u32()).collect::<Result<_>>()?;
            let count = cur.u32()?;
            let mut names = std::collections::BTreeMap::new();
            for _ in 0..count {
                let id = cur.u32()?;
                let len = cur.u32()? as usize;
                let name = std::str::from_utf8(cur.take(len)?)
                    .map_err(|_| cur.error("label name is not UTF-8"))?
                    .to_owned();
                names.insert(id, name);
            }
            Some(
                ids.into_iter()
                    .map(|id| FaultLabel::new(id, names.get(&id).cloned().unwrap_or_default()))
                    .collect(),
            )
        } else {
            None
        };
        if cur.pos != bytes.len() {
            return Err(cur.error("trailing bytes"));
        }
        Self::new(rows, labels)
    }
}

const CACHE_MAGIC: &[u8; 4] = b"FMX1";

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.error("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn error(&self, message: &str) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            location: Location::Byte(self.pos as u64),
            message: message.into(),
        }
    }
}

/// Turns every segment into a z-normalized amplitude spectrum.
pub fn featurize(segments: &SegmentSet, fft_len: Option<usize>) -> Result<FeatureMatrix> {
    let first = segments
        .segments
        .first()
        .ok_or_else(|| Error::EmptyInput("no segments to featurize".into()))?;
    let len = first.len();
    if let Some((i, s)) = segments.segments.iter().enumerate().find(|(_, s)| s.len() != len) {
        return Err(Error::Precondition(format!(
            "segment {i} has length {} but segment 0 has length {len}",
            s.len()
        )));
    }
    let extractor = SpectrumExtractor::new(fft_len.unwrap_or_else(|| default_fft_len(len)))?;
    let dim = extractor.output_len();

    let rows: Vec<Vec<f64>> = segments
        .segments
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let amps = extractor.amplitudes(s)?;
            z_normalize(&amps).map_err(|e| e.context(format!("row {i}")))
        })
        .collect::<Result<_>>()?;

    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let mut fm = FeatureMatrix::new(
        DMatrix::from_row_slice(segments.len(), dim, &flat),
        Some(segments.labels.clone()),
    )?;
    fm.meta = Some(FeatureMeta {
        fft_len: extractor.fft_len(),
        segment_len: len,
        sampling_rate_hz: segments.sampling_rate_hz,
    });
    Ok(fm)
}
