//! Training loops for the bandit methods and every baseline, with telemetry.
//!
//! One model update consumes `G` auxiliary micro-batches (or, for the
//! target-only baseline, none) plus the whole few-shot train partition. The
//! few-shot validation partition is evaluated after every update and drives
//! early stopping on validation loss. Held-out target accuracy is measured at
//! each new best checkpoint and reported as the run's accuracy.

mod baselines;
mod flad;
mod probe;
mod trainer;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{run_loss_scaling, run_mixture_baseline, run_target_only};
pub use flad::run_flad;
pub use probe::{precompute_alignments, probe_reward_distributions, ArmHistogram, ProbeSet};

use crate::error::{FladError, Result};
use crate::model::MlpModel;
use crate::policies::GibbsScale;
use crate::rewards::{GradientVector, Reward, RewardKind};
use crate::tasks::SyntheticSuite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Exp3,
    Ucb1,
    ExploreOnly,
    ExploitOnly,
    LossScalingGa,
    LossScalingGms,
    TargetOnly,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Exp3,
        PolicyKind::Ucb1,
        PolicyKind::ExploreOnly,
        PolicyKind::ExploitOnly,
        PolicyKind::LossScalingGa,
        PolicyKind::LossScalingGms,
        PolicyKind::TargetOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Exp3 => "exp3",
            PolicyKind::Ucb1 => "ucb1",
            PolicyKind::ExploreOnly => "explore_only",
            PolicyKind::ExploitOnly => "exploit_only",
            PolicyKind::LossScalingGa => "loss_scaling_ga",
            PolicyKind::LossScalingGms => "loss_scaling_gms",
            PolicyKind::TargetOnly => "target_only",
        }
    }

    /// Whether the configured reward kind changes what this method does.
    pub fn uses_reward(self) -> bool {
        matches!(self, PolicyKind::Exp3 | PolicyKind::Ucb1)
    }

    /// The reward a method effectively uses, if any.
    pub fn effective_reward(self, configured: RewardKind) -> Option<RewardKind> {
        match self {
            PolicyKind::Exp3 | PolicyKind::Ucb1 => Some(configured),
            PolicyKind::LossScalingGa => Some(RewardKind::Ga),
            PolicyKind::LossScalingGms => Some(RewardKind::Gms),
            _ => None,
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = FladError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| {
                FladError::InvalidConfig(format!(
                    "unknown policy `{s}` (expected one of {})",
                    PolicyKind::ALL.map(|p| p.name()).join(", ")
                ))
            })
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub policy: PolicyKind,
    pub reward: RewardKind,
    /// Auxiliary micro-batches per model update (`G`).
    pub accum_steps: usize,
    pub micro_batch: usize,
    pub lr: f64,
    pub max_steps: usize,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    /// UCB1 reward smoothing factor.
    pub beta: f64,
    /// Target mixing ratio `M` for the mixture baselines.
    pub mix_ratio: f64,
    /// Gibbs temperature for exploit-only.
    pub temperature: f64,
    /// Examples per arm for the pre-training alignment estimate.
    pub init_sample: usize,
    /// Updates between reward-distribution probes; 0 disables probing.
    pub probe_interval: usize,
    /// Auxiliary examples per arm per probe.
    pub probe_sample: usize,
    pub probe_bins: usize,
    pub probe_rewards: Vec<RewardKind>,
    pub hidden: usize,
    /// Seed for model initialization and probe sampling.
    pub seed: u64,
    pub gibbs_scale: GibbsScale,
    /// Clamp negative GA loss scales at 0.
    pub clamp_loss_scale: bool,
    /// Keep every update's target and per-arm gradients in the records.
    pub log_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Ucb1,
            reward: RewardKind::Agg,
            accum_steps: 16,
            micro_batch: 8,
            lr: 0.02,
            max_steps: 10_000,
            patience: 300,
            beta: 0.9,
            mix_ratio: 1.0,
            temperature: 1.0,
            init_sample: 1000,
            probe_interval: 100,
            probe_sample: 5000,
            probe_bins: 20,
            probe_rewards: vec![RewardKind::Ga, RewardKind::Gms],
            hidden: 16,
            seed: 0,
            gibbs_scale: GibbsScale::PreviousRate,
            clamp_loss_scale: true,
            log_gradients: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("accum_steps", self.accum_steps),
            ("micro_batch", self.micro_batch),
            ("patience", self.patience),
            ("init_sample", self.init_sample),
            ("hidden", self.hidden),
            ("probe_bins", self.probe_bins),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(FladError::InvalidConfig(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FladError::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(FladError::InvalidConfig(format!("beta {} not in (0, 1]", self.beta)));
        }
        if !(self.mix_ratio >= 0.0 && self.mix_ratio.is_finite()) {
            return Err(FladError::InvalidConfig(format!(
                "mixing ratio {} must be >= 0",
                self.mix_ratio
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(FladError::InvalidConfig(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.probe_interval > 0 && self.probe_sample == 0 {
            return Err(FladError::InvalidConfig("probe_sample must be positive".into()));
        }
        Ok(())
    }
}

/// What the policy looked like during one update window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySnapshot {
    /// Sampling distribution used for the window, exploration rate of the
    /// turn, and importance-weighted estimates after the update.
    Exp3 {
        pi: Vec<f64>,
        epsilon: f64,
        estimates: Vec<f64>,
    },
    /// Indices at the start of the window and EMA estimates after the update.
    Ucb1 {
        index: Vec<f64>,
        estimates: Vec<f64>,
        counts: Vec<u64>,
    },
    Mixture {
        target_weight: f64,
        aux_weights: Vec<f64>,
    },
    /// Uniform sampling (loss scaling) or no auxiliary data.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReward {
    pub arm: usize,
    pub reward: Reward,
}

/// Gradients behind one update, kept only with `log_gradients`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateGradients {
    pub target: GradientVector,
    /// Gradient contributed by each arm, after any loss scaling.
    pub aux: Vec<(usize, GradientVector)>,
    pub params_before: Vec<f64>,
    pub params_after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnRecord {
    /// 1-based model-update index.
    pub update: usize,
    /// Auxiliary arm of every draw in the window, in draw order.
    pub arms: Vec<usize>,
    /// Draws that came from the target data (mixture baselines only).
    pub target_draws: usize,
    pub rewards: Vec<ArmReward>,
    pub policy: PolicySnapshot,
    pub target_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Held-out accuracy, measured only when this update set a new best.
    pub heldout_acc: Option<f64>,
    /// Backward passes spent on this update.
    pub backward_passes: u64,
    pub gradients: Option<UpdateGradients>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub policy: PolicyKind,
    pub reward: Option<RewardKind>,
    pub num_aux: usize,
    pub updates: usize,
    /// Update index of the best validation loss (0 = initial model).
    pub convergence_step: usize,
    pub best_val_loss: f64,
    pub best_val_acc: f64,
    /// Held-out target accuracy of the best checkpoint.
    pub heldout_acc: f64,
    /// Evaluation of the initial model (update 0).
    pub initial_val_loss: f64,
    pub initial_val_acc: f64,
    pub initial_heldout_acc: f64,
    pub records: Vec<TurnRecord>,
    pub pull_counts: Vec<u64>,
    pub target_draws: u64,
    /// Pull share per auxiliary arm; sums to 1 whenever any arm was pulled.
    pub sampling_distribution: Vec<f64>,
    pub probes: Vec<ProbeSet>,
    /// Alignments estimated before training (UCB1 and exploit-only).
    pub initial_alignments: Option<Vec<f64>>,
    pub init_backward_passes: u64,
    /// Set when a non-finite loss or gradient ended the run early.
    pub aborted: Option<String>,
    /// Best checkpoint.
    pub model: MlpModel,
}

impl RunResult {
    /// `(1/T) sum_t eps_t` over the logged EXP3 exploration rates.
    pub fn mean_exploration_floor(&self) -> Option<f64> {
        let eps: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| match &r.policy {
                PolicySnapshot::Exp3 { epsilon, .. } => Some(*epsilon),
                _ => None,
            })
            .collect();
        if eps.is_empty() {
            None
        } else {
            Some(eps.iter().sum::<f64>() / eps.len() as f64)
        }
    }
}

/// Outcome of replaying early stopping over a validation-loss history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    /// Index of the evaluation that triggered the stop, if any.
    pub stop_at: Option<usize>,
    /// Earliest index of the minimum loss seen up to the stop.
    pub best: usize,
}

/// Stops once `patience` consecutive evaluations fail to strictly improve on the best loss.
pub fn early_stop_check(history: &[f64], patience: usize) -> StopDecision {
    let mut stopper = EarlyStopper::new(patience);
    for (i, &loss) in history.iter().enumerate() {
        if stopper.observe(loss) {
            return StopDecision {
                stop_at: Some(i),
                best: stopper.best_index(),
            };
        }
    }
    StopDecision {
        stop_at: None,
        best: stopper.best_index(),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EarlyStopper {
    patience: usize,
    best: f64,
    best_index: usize,
    seen: usize,
    stale: usize,
}

impl EarlyStopper {
    pub(crate) fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: f64::INFINITY,
            best_index: 0,
            seen: 0,
            stale: 0,
        }
    }

    /// Records one evaluation; returns true when training should stop.
    pub(crate) fn observe(&mut self, loss: f64) -> bool {
        let index = self.seen;
        self.seen += 1;
        if loss < self.best {
            self.best = loss;
            self.best_index = index;
            self.stale = 0;
            false
        } else {
            self.stale += 1;
            self.stale >= self.patience
        }
    }

    pub(crate) fn best_index(&self) -> usize {
        self.best_index
    }

    pub(crate) fn improved_last(&self) -> bool {
        self.seen > 0 && self.best_index == self.seen - 1
    }
}

/// Runs whichever training loop `config.policy` names.
pub fn run<R: Rng + ?Sized>(config: &TrainConfig, suite: &SyntheticSuite, rng: &mut R) -> Result<RunResult> {
    match config.policy {
        PolicyKind::Exp3 | PolicyKind::Ucb1 => run_flad(config, suite, rng),
        PolicyKind::ExploreOnly | PolicyKind::ExploitOnly => run_mixture_baseline(config, suite, rng),
        PolicyKind::LossScalingGa | PolicyKind::LossScalingGms => run_loss_scaling(config, suite, rng),
        PolicyKind::TargetOnly => run_target_only(config, suite, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_examples() {
        let d = early_stop_check(&[1.0, 0.9, 0.95, 0.96, 0.97], 3);
        assert_eq!(d, StopDecision { stop_at: Some(4), best: 1 });

        let d = early_stop_check(&[0.5, 0.5, 0.5], 1);
        assert_eq!(d, StopDecision { stop_at: Some(1), best: 0 });

        let improving: Vec<f64> = (0..50).map(|i| 1.0 / (i + 1) as f64).collect();
        let d = early_stop_check(&improving, 1);
        assert_eq!(d, StopDecision { stop_at: None, best: 49 });
    }

    #[test]
    fn early_stop_ties_keep_earliest() {
        let d = early_stop_check(&[1.0, 0.4, 0.4, 0.6], 5);
        assert_eq!(d, StopDecision { stop_at: None, best: 1 });
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert_eq!("loss-scaling-ga".parse::<PolicyKind>().unwrap(), PolicyKind::LossScalingGa);
        assert!("thompson".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { beta: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { accum_steps: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { temperature: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
