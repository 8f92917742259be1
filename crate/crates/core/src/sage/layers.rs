use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SimilarityGraph;
use crate::ingest::Label;
use crate::linalg::Matrix;

/// What a node with no neighbors aggregates to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsolatedPolicy {
    #[default]
    Zero,
    #[serde(rename = "self")]
    SelfFeatures,
}

impl std::str::FromStr for IsolatedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(IsolatedPolicy::Zero),
            "self" => Ok(IsolatedPolicy::SelfFeatures),
            other => Err(Error::Config(format!("unknown isolated-node policy `{other}`"))),
        }
    }
}

/// Mean of neighbor feature rows; isolated nodes follow `policy`.
pub fn aggregate_neighbors(
    g: &SimilarityGraph,
    features: &Matrix,
    policy: IsolatedPolicy,
) -> Result<Matrix> {
    if g.n() != features.rows() {
        return Err(Error::Dimension {
            expected: g.n(),
            got: features.rows(),
        });
    }
    let mut out = Matrix::zeros(features.rows(), features.cols());
    for i in 0..g.n() {
        let nbrs = g.neighbors(i);
        let row = out.row_mut(i);
        if nbrs.is_empty() {
            if policy == IsolatedPolicy::SelfFeatures {
                row.copy_from_slice(features.row(i));
            }
            continue;
        }
        for &j in nbrs {
            for (o, v) in row.iter_mut().zip(features.row(j)) {
                *o += v;
            }
        }
        let k = nbrs.len() as f64;
        row.iter_mut().for_each(|o| *o /= k);
    }
    Ok(out)
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Smallest probability fed to `ln`.
pub const LOG_FLOOR: f64 = 1e-300;

/// Mean categorical cross-entropy over the masked nodes.
pub fn cross_entropy(probs: &Matrix, labels: &[Label], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut total = 0.0;
    for &i in mask {
        let c = labels[i].index();
        total -= probs.get(i, c).max(LOG_FLOOR).ln();
    }
    Ok(total / mask.len() as f64)
}

/// Argmax per row; ties go to the lower class index (human).
pub fn argmax_rows(z: &Matrix) -> Vec<usize> {
    z.iter_rows()
        .map(|r| {
            let mut best = 0;
            for (c, &v) in r.iter().enumerate().skip(1) {
                if v > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
