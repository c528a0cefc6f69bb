//! Read-only gradient probes: pre-training alignments and reward histograms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::MlpModel;
use crate::rewards::{compute_reward, RewardKind};
use crate::tasks::{sample_batch, sample_without_replacement, SyntheticSuite};

/// Reward of each arm's large-sample gradient against the target train gradient, on head slices.
///
/// Uses `min(init_sample, size)` examples per arm; the whole dataset, in
/// order, when `init_sample` covers it.
pub fn precompute_alignments<R: Rng + ?Sized>(
    model: &MlpModel,
    suite: &SyntheticSuite,
    init_sample: usize,
    kind: RewardKind,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let target = model.backward(&suite.split.train)?;
    suite
        .aux
        .iter()
        .map(|arm| {
            let grad = if init_sample >= arm.data.len() {
                model.backward(&arm.data)?
            } else {
                model.backward(&sample_without_replacement(&arm.data, init_sample, rng)?)?
            };
            Ok(compute_reward(kind, &grad.head, &target.head)?.value)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmHistogram {
    pub arm: usize,
    /// `bins + 1` edges spanning the reward's range.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    /// Model-update index the probe was taken at.
    pub update: usize,
    pub reward: RewardKind,
    pub arms: Vec<ArmHistogram>,
}

/// Histograms of per-micro-batch rewards for every arm against the current
/// target gradient. Draws `max(1, sample_size / micro_batch)` micro-batches
/// per arm and shares them across `kinds`. The model is not modified.
pub fn probe_reward_distributions<R: Rng + ?Sized>(
    model: &MlpModel,
    suite: &SyntheticSuite,
    sample_size: usize,
    micro_batch: usize,
    kinds: &[RewardKind],
    bins: usize,
    rng: &mut R,
) -> Result<Vec<ProbeSet>> {
    let target = model.backward(&suite.split.train)?;
    let batches = (sample_size / micro_batch.max(1)).max(1);
    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(suite.num_aux()); kinds.len()];
    for arm in &suite.aux {
        let mut per_kind = vec![Vec::with_capacity(batches); kinds.len()];
        for _ in 0..batches {
            let grad = model.backward(&sample_batch(&arm.data, micro_batch, rng)?)?;
            for (k, kind) in kinds.iter().enumerate() {
                per_kind[k].push(compute_reward(*kind, &grad.head, &target.head)?.value);
            }
        }
        for (k, v) in per_kind.into_iter().enumerate() {
            values[k].push(v);
        }
    }
    Ok(kinds
        .iter()
        .zip(values)
        .map(|(&kind, arms)| ProbeSet {
            update: 0,
            reward: kind,
            arms: arms
                .iter()
                .enumerate()
                .map(|(arm, v)| histogram(arm, v, kind.range(), bins))
                .collect(),
        })
        .collect())
}

fn histogram(arm: usize, values: &[f64], (lo, hi): (f64, f64), bins: usize) -> ArmHistogram {
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    ArmHistogram {
        arm,
        edges,
        counts,
        mean: values.iter().sum::<f64>() / values.len() as f64,
        samples: values.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_cover_range() {
        let h = histogram(3, &[-1.0, -0.99, 0.0, 0.5, 1.0], (-1.0, 1.0), 4);
        assert_eq!(h.edges, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(h.counts, vec![2, 0, 1, 2]);
        assert_eq!(h.samples, 5);
        assert!((h.mean - (-0.49 / 5.0)).abs() < 1e-15);
    }
}
