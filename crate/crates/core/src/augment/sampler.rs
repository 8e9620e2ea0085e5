use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::rng::Rng;

/// Per-cycle sampling probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerWeights {
    probs: Vec<f64>,
}

impl SamplerWeights {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Probability of drawing one cycle of each class so that every nonempty
/// class carries mass `1 / K`, `K` the number of nonempty classes. Empty
/// classes get 0.
pub fn per_cycle_probability(counts: &[usize]) -> Result<Vec<f64>, AugmentError> {
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present == 0 {
        return Err(AugmentError::NoSamples);
    }
    Ok(counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                1.0 / (present as f64 * c as f64)
            }
        })
        .collect())
}

/// Class-balancing weights for a pool whose `i`-th cycle has class index
/// `classes[i]`.
pub fn class_weights(classes: &[usize]) -> Result<SamplerWeights, AugmentError> {
    let n_classes = classes.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0; n_classes];
    for &c in classes {
        counts[c] += 1;
    }
    let p = per_cycle_probability(&counts)?;
    Ok(SamplerWeights {
        probs: classes.iter().map(|&c| p[c]).collect(),
    })
}

/// `n` i.i.d. indices drawn from `weights`.
pub fn weighted_sample(weights: &SamplerWeights, rng: &mut Rng, n: usize) -> Vec<usize> {
    let dist = WeightedIndex::new(&weights.probs).expect("sampler weights are positive and finite");
    (0..n).map(|_| dist.sample(rng)).collect()
}
