//! Decision layer: similarity k-NN, precomputed-kernel SVM with
//! cross-validated C, and the non-adaptive baselines.

pub mod baselines;
pub mod cv;
pub mod knn;
pub mod svm;

use std::io::Write;
use std::path::Path;

pub use baselines::{baseline1_nn, baseline2_joint_pca_nn, nearest_neighbor, svm_na, JointPcaPrediction, SvmPrediction};
pub use cv::{cross_validate_c, stratified_folds, CvConfig, CvOutcome};
pub use knn::knn_predict;
pub use svm::{svm_predict, svm_train, svm_train_with, BinaryMachine, SvmParams, TrainedSvm};

use crate::error::{Error, Result};

/// Writes `sample_index,predicted_class_id` rows with a header line.
pub fn write_predictions_csv(path: impl AsRef<Path>, predictions: &[u32]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("sample_index,predicted_class_id\n");
    for (i, p) in predictions.iter().enumerate() {
        out.push_str(&format!("{i},{p}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
