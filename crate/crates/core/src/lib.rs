//! Rolling-bearing fault diagnosis across working conditions.
//!
//! Vibration segments become z-normalized FFT amplitude vectors; each domain
//! (working condition) is summarised by a PCA subspace; the labeled source
//! subspace is aligned onto the unlabeled target subspace in closed form; and
//! target samples are classified through the aligned similarity, either by
//! nearest neighbour or by an SVM on the precomputed kernel. A proxy HΔH
//! divergence estimator measures how far apart the domains are before and
//! after alignment.
//!
//! Module map:
//!
//! * [`signal_io`]: raw records, segmentation, dataset manifests
//! * [`spectrum`]: FFT amplitude features and [`spectrum::FeatureMatrix`]
//! * [`subspace`]: PCA, dimension selection, alignment, similarity kernels
//! * [`classifiers`]: k-NN, precomputed-kernel SVM, C selection, baselines
//! * [`divergence`]: proxy HΔH estimates
//! * [`synth`]: synthetic vibration generator
//! * [`harness`]: experiment runner and reports

pub mod classifiers;
pub mod divergence;
pub mod error;
pub mod harness;
pub mod signal_io;
pub mod spectrum;
pub mod subspace;
pub mod synth;

pub use error::{Error, Result};
