//! Non-bandit training loops: target-only, mixture baselines and loss scaling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trainer::{drive, empty_record, Trainer};
use super::{ArmReward, PolicyKind, PolicySnapshot, RunResult, TrainConfig, UpdateGradients};
use crate::error::{FladError, Result};
use crate::model::Batch;
use crate::policies::{gibbs_mixture, uniform_mixture, Source};
use crate::rewards::{compute_reward, RewardKind};
use crate::seed;
use crate::tasks::{sample_batch, SyntheticSuite};

/// Plain fine-tuning on the few-shot train partition.
pub fn run_target_only<R: Rng + ?Sized>(
    config: &TrainConfig,
    suite: &SyntheticSuite,
    _rng: &mut R,
) -> Result<RunResult> {
    let mut trainer = Trainer::new(config, suite)?;
    drive(&mut trainer, |tr, update| {
        let mut record = empty_record(update);
        let target = tr.backward(&suite.split.train)?;
        if !target.loss.is_finite() {
            return Err(FladError::NonFinite("target loss"));
        }
        record.target_loss = target.loss;
        let (before, after) = tr.apply_update(&target.full)?;
        if config.log_gradients {
            record.gradients = Some(UpdateGradients {
                target: target.full,
                aux: Vec::new(),
                params_before: before,
                params_after: after,
            });
        }
        Ok(record)
    })?;
    Ok(trainer.into_result(PolicyKind::TargetOnly, None))
}

/// Explore-only (uniform) and exploit-only (Gibbs over pre-training
/// alignments) multitask training.
///
/// Each update draws `G` micro-batches; every example's source is sampled
/// from the fixed mixture, the target source being the few-shot train
/// partition. The step is the mean-loss gradient over all `G * micro_batch`
/// examples, i.e. the average of the micro-batch gradients.
pub fn run_mixture_baseline<R: Rng + ?Sized>(
    config: &TrainConfig,
    suite: &SyntheticSuite,
    rng: &mut R,
) -> Result<RunResult> {
    let k = suite.num_aux();
    let mut trainer = Trainer::new(config, suite)?;
    let weights = match config.policy {
        PolicyKind::ExploreOnly => uniform_mixture(k, config.mix_ratio)?,
        PolicyKind::ExploitOnly => {
            let mut align_rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "init-align"));
            let alignments = trainer.initial_alignments(&mut align_rng)?;
            gibbs_mixture(&alignments, config.temperature, config.mix_ratio)?
        }
        other => {
            return Err(FladError::InvalidConfig(format!(
                "run_mixture_baseline does not train {other}"
            )))
        }
    };
    let snapshot = PolicySnapshot::Mixture {
        target_weight: weights.target_weight,
        aux_weights: weights.aux_weights.clone(),
    };

    drive(&mut trainer, |tr, update| {
        let mut record = empty_record(update);
        let mut step = tr.zero_full();
        let mut loss = 0.0;
        let share = 1.0 / config.accum_steps as f64;
        for _ in 0..config.accum_steps {
            let mut batch = Batch::empty(suite.feature_dim);
            for _ in 0..config.micro_batch {
                let pool = match weights.sample(rng) {
                    Source::Target => {
                        record.target_draws += 1;
                        &suite.split.train
                    }
                    Source::Aux(arm) => {
                        record.arms.push(arm);
                        tr.pull_counts[arm] += 1;
                        &suite.aux[arm].data
                    }
                };
                let i = rng.random_range(0..pool.len());
                batch.push(pool.row(i), pool.label(i));
            }
            let grad = tr.backward(&batch)?;
            loss += grad.loss;
            step.add_scaled(&grad.full, share)?;
        }
        if !loss.is_finite() {
            return Err(FladError::NonFinite("mixture loss"));
        }
        tr.target_draws += record.target_draws as u64;
        record.target_loss = tr.model.loss(&suite.split.train)?;
        let (before, after) = tr.apply_update(&step)?;
        record.policy = snapshot.clone();
        if config.log_gradients {
            record.gradients = Some(UpdateGradients {
                target: tr.zero_full(),
                aux: Vec::new(),
                params_before: before,
                params_after: after,
            });
        }
        Ok(record)
    })?;
    Ok(trainer.into_result(config.policy, None))
}

/// Uniform arm sampling with each auxiliary micro-batch loss scaled by its
/// reward against the target gradient: `max(0, GA)` (or raw GA when clamping
/// is off) or GMS. The target loss is not scaled.
pub fn run_loss_scaling<R: Rng + ?Sized>(
    config: &TrainConfig,
    suite: &SyntheticSuite,
    rng: &mut R,
) -> Result<RunResult> {
    let kind = match config.policy {
        PolicyKind::LossScalingGa => RewardKind::Ga,
        PolicyKind::LossScalingGms => RewardKind::Gms,
        other => {
            return Err(FladError::InvalidConfig(format!(
                "run_loss_scaling does not train {other}"
            )))
        }
    };
    let k = suite.num_aux();
    if k == 0 {
        return Err(FladError::InvalidConfig("loss scaling needs auxiliary arms".into()));
    }
    let mut trainer = Trainer::new(config, suite)?;
    drive(&mut trainer, |tr, update| {
        let mut record = empty_record(update);
        let target = tr.backward(&suite.split.train)?;
        if !target.loss.is_finite() {
            return Err(FladError::NonFinite("target loss"));
        }
        record.target_loss = target.loss;
        let mut step = target.full.clone();
        let mut scaled = Vec::new();
        for _ in 0..config.accum_steps {
            let arm = rng.random_range(0..k);
            let batch = sample_batch(&suite.aux[arm].data, config.micro_batch, rng)?;
            let grad = tr.backward(&batch)?;
            let reward = compute_reward(kind, &grad.head, &target.head)?;
            let scale = if kind == RewardKind::Ga && config.clamp_loss_scale {
                reward.value.max(0.0)
            } else {
                reward.value
            };
            let contribution = grad.full.scaled(scale);
            step.add_scaled(&contribution, 1.0)?;
            tr.pull_counts[arm] += 1;
            record.arms.push(arm);
            record.rewards.push(ArmReward { arm, reward });
            if config.log_gradients {
                scaled.push((arm, contribution));
            }
        }
        let (before, after) = tr.apply_update(&step)?;
        if config.log_gradients {
            record.gradients = Some(UpdateGradients {
                target: target.full,
                aux: scaled,
                params_before: before,
                params_after: after,
            });
        }
        Ok(record)
    })?;
    Ok(trainer.into_result(config.policy, Some(kind)))
}
