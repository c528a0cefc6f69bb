//! Static mixtures used by the explore-only and exploit-only baselines.
//!
//! Unnormalized weights are 1-scaled per auxiliary arm and `M * max(aux)` for
//! the target, then the whole vector is renormalized. With `K = 35, M = 5`
//! and equal auxiliary weights this gives 1/40 per auxiliary arm and 5/40 for
//! the target.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::exp3::sample_index;
use crate::error::{FladError, Result};

/// Where one example of a mixture batch is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Target,
    Aux(usize),
}

/// A normalized sampling distribution over the target and every auxiliary arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub target_weight: f64,
    pub aux_weights: Vec<f64>,
}

impl MixtureWeights {
    fn normalized(target: f64, aux: Vec<f64>) -> Self {
        let total = target + aux.iter().sum::<f64>();
        Self {
            target_weight: target / total,
            aux_weights: aux.into_iter().map(|w| w / total).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Source {
        let mut probs = Vec::with_capacity(self.aux_weights.len() + 1);
        probs.push(self.target_weight);
        probs.extend_from_slice(&self.aux_weights);
        match sample_index(&probs, rng) {
            0 => Source::Target,
            i => Source::Aux(i - 1),
        }
    }
}

/// Equal auxiliary weights; target weight `M / K` before normalization.
pub fn uniform_mixture(k: usize, m: f64) -> Result<MixtureWeights> {
    if k == 0 {
        return Err(FladError::InvalidConfig("mixture needs at least one arm".into()));
    }
    check_ratio(m)?;
    let w = 1.0 / k as f64;
    Ok(MixtureWeights::normalized(m * w, vec![w; k]))
}

/// Auxiliary weights `exp(alignment / temperature)`; target weight `M * max`.
pub fn gibbs_mixture(alignments: &[f64], temperature: f64, m: f64) -> Result<MixtureWeights> {
    if alignments.is_empty() {
        return Err(FladError::InvalidConfig("mixture needs at least one arm".into()));
    }
    if !(temperature > 0.0) {
        return Err(FladError::OutOfRange(format!(
            "temperature {temperature} must be positive"
        )));
    }
    check_ratio(m)?;
    let scaled: Vec<f64> = alignments.iter().map(|a| a / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Shifted so the largest weight is exactly 1.
    let aux: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    Ok(MixtureWeights::normalized(m, aux))
}

fn check_ratio(m: f64) -> Result<()> {
    if m >= 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(FladError::OutOfRange(format!("mixing ratio {m} must be >= 0")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_examples() {
        let w = uniform_mixture(35, 5.0).unwrap();
        assert!((w.target_weight - 5.0 / 40.0).abs() < 1e-15);
        assert!(w.aux_weights.iter().all(|x| (x - 1.0 / 40.0).abs() < 1e-15));

        let w = uniform_mixture(4, 0.0).unwrap();
        assert_eq!(w.target_weight, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..10_000).all(|_| w.sample(&mut rng) != Source::Target));

        let w = uniform_mixture(1, 1.0).unwrap();
        assert_eq!((w.target_weight, w.aux_weights[0]), (0.5, 0.5));
        assert!(uniform_mixture(0, 1.0).is_err());
    }

    #[test]
    fn gibbs_examples() {
        let w = gibbs_mixture(&[0.3; 35], 1.0, 5.0).unwrap();
        assert!((w.target_weight - 5.0 / 40.0).abs() < 1e-15);
        assert!(w.aux_weights.iter().all(|x| (x - 1.0 / 40.0).abs() < 1e-15));

        let w = gibbs_mixture(&[0.9, -0.4, 0.1], 1e15, 0.0).unwrap();
        assert!(w.aux_weights.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
        let w = gibbs_mixture(&[0.9, -0.4, 0.1], f64::INFINITY, 0.0).unwrap();
        assert!(w.aux_weights.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));

        let w = gibbs_mixture(&[0.9, 0.1, 0.0, -0.2], 0.1, 1.0).unwrap();
        let aux_mass: f64 = w.aux_weights.iter().sum();
        assert!(w.aux_weights[0] / aux_mass > 0.99);

        assert!(gibbs_mixture(&[0.1], 0.0, 1.0).is_err());
        assert!(gibbs_mixture(&[0.1], 1.0, -1.0).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        let w = gibbs_mixture(&[0.5, -0.5, 0.25, 0.0], 0.7, 10.0).unwrap();
        let total = w.target_weight + w.aux_weights.iter().sum::<f64>();
        assert!((total - 1.0).abs() < 1e-12);
        // target is M times the largest auxiliary weight
        let max = w.aux_weights.iter().copied().fold(0.0, f64::max);
        assert!((w.target_weight - 10.0 * max).abs() < 1e-12);
    }
}
