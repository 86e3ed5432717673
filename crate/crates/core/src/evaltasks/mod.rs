//! Evaluation pipelines: property prediction, outlier detection and clustering.

mod clustering;
mod outliers;

pub use clustering::{
    affinity_propagation, clu, format_augmentation, mclu, parse_augmentation, quantile, write_augmentation,
    AffinityConfig, AugmentFormat, AugmentLine, Clustering, FacetClustering, MCluResult, Preference,
    TIE_NOISE,
};
pub use outliers::{
    build_benchmark, build_outlier_benchmark, check_instance, detect_outliers_multi, detect_outliers_single,
    evaluate_outliers, exact_match, read_benchmark, write_benchmark, OutlierInstance, OutlierPrediction,
    OutlierStrategy, PropertyDB, PropertyScore, INSTANCE_SIZE, N_OUTLIERS, N_POSITIVES, RETRY_BUDGET,
};

use serde::Serialize;

use crate::corpus::LabeledPair;
use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::objectives::LossMode;
use crate::training::predict_pairs;

/// Precision, recall and F1 of the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Thresholds `scores` and scores them against `labels`; any 0/0 is taken as 0.
pub fn prf_from_predictions(scores: &[f64], labels: &[bool], threshold: f64) -> Prf {
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (s, &l) in scores.iter().zip(labels) {
        match (*s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fnn);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// F1 of property prediction on `test` at `threshold`.
pub fn eval_f1(
    params: &EncoderParams,
    test: &[LabeledPair],
    mode: LossMode,
    threshold: f64,
    mask_eps: f64,
) -> Result<Prf> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set is empty".into()));
    }
    let probs = predict_pairs(params, test, mode, mask_eps)?;
    let labels: Vec<bool> = test.iter().map(|p| p.label).collect();
    Ok(prf_from_predictions(&probs, &labels, threshold))
}
