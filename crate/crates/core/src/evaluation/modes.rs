use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::models::ValidatedClassifier;

/// Histogram of predicted modes among generated samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub modes_covered: usize,
    pub histogram: Vec<u64>,
    pub kl_to_uniform: f64,
    pub samples: usize,
}

impl ModeReport {
    /// Report for already-predicted mode ids in `0..modes`.
    pub fn from_predictions(pred: &[u32], modes: usize) -> Result<Self> {
        if modes == 0 || pred.is_empty() {
            return Err(invalid("mode report needs at least one mode and one sample"));
        }
        let mut histogram = vec![0u64; modes];
        for &p in pred {
            let slot = histogram
                .get_mut(p as usize)
                .ok_or_else(|| invalid(format!("predicted mode {p} outside 0..{modes}")))?;
            *slot += 1;
        }
        Ok(Self {
            modes_covered: histogram.iter().filter(|&&c| c > 0).count(),
            kl_to_uniform: kl_to_uniform(&histogram),
            histogram,
            samples: pred.len(),
        })
    }
}

/// `sum p log(p K)` over non-empty bins of a count histogram with K bins.
pub fn kl_to_uniform(histogram: &[u64]) -> f64 {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let k = histogram.len() as f64;
    let kl: f64 = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * (p * k).ln()
        })
        .sum();
    kl.max(0.0)
}

/// Classify `n` samples and histogram the predictions over `modes` bins.
/// Refuses to report when the classifier missed its accuracy gate.
pub fn count_modes(samples: &[f32], n: usize, classifier: &ValidatedClassifier, modes: usize) -> Result<ModeReport> {
    let clf = classifier.require_gate()?;
    if n < modes {
        return Err(invalid(format!("{n} samples cannot cover {modes} modes")));
    }
    ModeReport::from_predictions(&clf.predict(samples, n)?, modes)
}
