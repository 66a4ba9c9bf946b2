use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// k-NN over a source×target similarity matrix: larger values are closer.
///
/// For every target column the `k` most similar source rows vote. When two
/// classes tie on votes the class owning the single most similar neighbour
/// among them wins. Equal similarities are ordered by source index.
pub fn knn_predict(similarity: &DMatrix<f64>, source_labels: &[u32], k: usize) -> Result<Vec<u32>> {
    let n_s = similarity.nrows();
    if source_labels.len() != n_s {
        return Err(Error::Config(format!(
            "{} source labels for {n_s} similarity rows",
            source_labels.len()
        )));
    }
    if k == 0 || k > n_s {
        return Err(Error::Config(format!("k = {k} outside 1..={n_s}")));
    }
    Ok(similarity
        .column_iter()
        .map(|col| {
            let mut order: Vec<usize> = (0..n_s).collect();
            order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            vote(order[..k].iter().map(|&i| source_labels[i]))
        })
        .collect())
}

/// Majority vote over labels given in decreasing closeness; ties go to the
/// class that appears first.
pub(crate) fn vote(ranked: impl Iterator<Item = u32>) -> u32 {
    // class -> (votes, rank of first occurrence)
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (rank, label) in ranked.enumerate() {
        tally.entry(label).or_insert((0, rank)).0 += 1;
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(label, _)| label)
        .expect("k >= 1")
}
