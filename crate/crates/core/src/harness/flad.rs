use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trainer::{drive, empty_record, Trainer};
use super::{ArmReward, PolicyKind, PolicySnapshot, RunResult, TrainConfig, UpdateGradients};
use crate::error::{FladError, Result};
use crate::policies::{Exp3State, Ucb1State};
use crate::rewards::{compute_reward, GradientVector};
use crate::seed;
use crate::tasks::{sample_batch, SyntheticSuite};

enum Learner {
    /// A single arm: nothing to learn, always arm 0.
    Single,
    Exp3(Exp3State),
    Ucb1(Ucb1State),
}

impl Learner {
    fn select<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        match self {
            Learner::Single => 0,
            Learner::Exp3(s) => s.sample(rng),
            Learner::Ucb1(s) => s.select(),
        }
    }

    fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        match self {
            Learner::Single => Ok(()),
            Learner::Exp3(s) => s.update(arm, reward),
            Learner::Ucb1(s) => s.update(arm, reward),
        }
    }
}

/// EXP3-FLAD / UCB1-FLAD training loop.
///
/// Per model update: `G` rounds of select arm, sample a micro-batch and
/// accumulate its gradient; then the target gradient over the whole few-shot
/// train partition; then one SGD step along `grad_T + sum_a grad_a`; then one
/// reward and policy update per arm with a nonzero accumulated gradient,
/// computed from head slices of the pre-update gradients.
pub fn run_flad<R: Rng + ?Sized>(
    config: &TrainConfig,
    suite: &SyntheticSuite,
    rng: &mut R,
) -> Result<RunResult> {
    let k = suite.num_aux();
    if k == 0 {
        return Err(FladError::InvalidConfig("bandit methods need auxiliary arms".into()));
    }
    let mut trainer = Trainer::new(config, suite)?;
    let mut learner = match config.policy {
        PolicyKind::Exp3 if k >= 2 => {
            Learner::Exp3(Exp3State::with_scale(k, config.gibbs_scale)?)
        }
        PolicyKind::Ucb1 if k >= 2 => {
            let mut align_rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "init-align"));
            let alignments = trainer.initial_alignments(&mut align_rng)?;
            Learner::Ucb1(Ucb1State::init(&alignments, config.beta)?)
        }
        PolicyKind::Exp3 | PolicyKind::Ucb1 => Learner::Single,
        other => {
            return Err(FladError::InvalidConfig(format!(
                "run_flad does not train {other}"
            )))
        }
    };

    drive(&mut trainer, |tr, update| {
        let mut record = empty_record(update);
        let window_index = match &mut learner {
            Learner::Exp3(s) => {
                s.distribution();
                None
            }
            Learner::Ucb1(s) => Some(s.index()),
            Learner::Single => None,
        };

        let mut per_arm: BTreeMap<usize, GradientVector> = BTreeMap::new();
        let mut aux_total = tr.zero_full();
        for _ in 0..config.accum_steps {
            let arm = learner.select(rng);
            let batch = sample_batch(&suite.aux[arm].data, config.micro_batch, rng)?;
            let grad = tr.backward(&batch)?;
            aux_total.add_scaled(&grad.full, 1.0)?;
            per_arm
                .entry(arm)
                .or_insert_with(|| tr.zero_full())
                .add_scaled(&grad.full, 1.0)?;
            tr.pull_counts[arm] += 1;
            record.arms.push(arm);
        }

        let target = tr.backward(&suite.split.train)?;
        if !target.loss.is_finite() {
            return Err(FladError::NonFinite("target loss"));
        }
        record.target_loss = target.loss;
        let mut step = target.full.clone();
        step.add_scaled(&aux_total, 1.0)?;
        let (before, after) = tr.apply_update(&step)?;

        for (&arm, acc) in &per_arm {
            if acc.is_zero() {
                continue;
            }
            let reward = compute_reward(config.reward, &tr.head_of(acc)?, &target.head)?;
            learner.update(arm, reward.value)?;
            record.rewards.push(ArmReward { arm, reward });
        }

        record.policy = match &mut learner {
            Learner::Exp3(s) => {
                let snap = PolicySnapshot::Exp3 {
                    pi: s.last_pi().to_vec(),
                    epsilon: s.epsilon(),
                    estimates: s.estimates().to_vec(),
                };
                s.end_turn();
                snap
            }
            Learner::Ucb1(s) => PolicySnapshot::Ucb1 {
                index: window_index.unwrap_or_default(),
                estimates: s.estimates().to_vec(),
                counts: s.counts().to_vec(),
            },
            Learner::Single => PolicySnapshot::Static,
        };
        if config.log_gradients {
            record.gradients = Some(UpdateGradients {
                target: target.full,
                aux: per_arm.into_iter().collect(),
                params_before: before,
                params_after: after,
            });
        }
        Ok(record)
    })?;

    Ok(trainer.into_result(config.policy, Some(config.reward)))
}
