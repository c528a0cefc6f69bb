//! Bookkeeping shared by every training loop: backward-pass counting,
//! validation, early stopping, best-checkpoint tracking and probes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::probe::{probe_reward_distributions, ProbeSet};
use super::{EarlyStopper, PolicyKind, RunResult, TrainConfig, TurnRecord};
use crate::error::{FladError, Result};
use crate::model::{Batch, GradientBundle, MlpModel};
use crate::rewards::{GradientVector, Partition, RewardKind};
use crate::seed;
use crate::tasks::SyntheticSuite;

pub(crate) struct Trainer<'a> {
    pub cfg: &'a TrainConfig,
    pub suite: &'a SyntheticSuite,
    pub model: MlpModel,
    backward_calls: u64,
    window_start: u64,
    stopper: EarlyStopper,
    best_model: MlpModel,
    best_val: (f64, f64),
    best_heldout: f64,
    initial: (f64, f64, f64),
    records: Vec<TurnRecord>,
    probes: Vec<ProbeSet>,
    pub pull_counts: Vec<u64>,
    pub target_draws: u64,
    pub init_backward_passes: u64,
    pub initial_alignments: Option<Vec<f64>>,
    aborted: Option<String>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, suite: &'a SyntheticSuite) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "model-init"));
        let model = MlpModel::init(suite.feature_dim, cfg.hidden, suite.class_count, &mut init_rng);
        let mut t = Self {
            cfg,
            suite,
            best_model: model.clone(),
            model,
            backward_calls: 0,
            window_start: 0,
            stopper: EarlyStopper::new(cfg.patience),
            best_val: (f64::INFINITY, 0.0),
            best_heldout: 0.0,
            initial: (0.0, 0.0, 0.0),
            records: Vec::new(),
            probes: Vec::new(),
            pull_counts: vec![0; suite.num_aux()],
            target_draws: 0,
            init_backward_passes: 0,
            initial_alignments: None,
            aborted: None,
        };
        // update 0: the initial model
        let (loss, acc) = t.model.evaluate(&suite.split.validation)?;
        t.stopper.observe(loss);
        t.best_val = (loss, acc);
        t.best_heldout = t.model.evaluate(&suite.heldout)?.1;
        t.initial = (loss, acc, t.best_heldout);
        t.probe_if_due(0)?;
        Ok(t)
    }

    /// Counted backward pass through the current model.
    pub fn backward(&mut self, batch: &Batch) -> Result<GradientBundle> {
        self.backward_calls += 1;
        self.model.backward(batch)
    }

    /// Large-sample alignments of every arm at the initial model.
    pub fn initial_alignments<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        let a = super::probe::precompute_alignments(
            &self.model,
            self.suite,
            self.cfg.init_sample,
            RewardKind::Ga,
            rng,
        )?;
        self.init_backward_passes += self.suite.num_aux() as u64 + 1;
        self.initial_alignments = Some(a.clone());
        Ok(a)
    }

    pub fn zero_full(&self) -> GradientVector {
        GradientVector::zeros(self.model.num_params(), Partition::Full)
    }

    pub fn head_of(&self, full: &GradientVector) -> Result<GradientVector> {
        GradientVector::new(full.values()[self.model.head_offset()..].to_vec(), Partition::Head)
    }

    /// Applies `-lr * grad` and logs what the update looked like.
    pub fn apply_update(&mut self, grad: &GradientVector) -> Result<(Vec<f64>, Vec<f64>)> {
        let before = self.model.params().to_vec();
        self.model.sgd_step(grad, self.cfg.lr)?;
        Ok((before, self.model.params().to_vec()))
    }

    /// Evaluates validation, tracks the best checkpoint, stores the record and
    /// runs any due probe. Returns true when early stopping fires.
    pub fn finish_update(&mut self, mut record: TurnRecord) -> Result<bool> {
        record.backward_passes = self.backward_calls - self.window_start;
        self.window_start = self.backward_calls;

        let (val_loss, val_acc) = self.model.evaluate(&self.suite.split.validation)?;
        if !val_loss.is_finite() {
            return Err(FladError::NonFinite("validation loss"));
        }
        record.val_loss = val_loss;
        record.val_acc = val_acc;
        let stop = self.stopper.observe(val_loss);
        if self.stopper.improved_last() {
            let heldout = self.model.evaluate(&self.suite.heldout)?.1;
            record.heldout_acc = Some(heldout);
            self.best_model = self.model.clone();
            self.best_val = (val_loss, val_acc);
            self.best_heldout = heldout;
        }
        let update = record.update;
        self.records.push(record);
        self.probe_if_due(update)?;
        Ok(stop)
    }

    fn probe_if_due(&mut self, update: usize) -> Result<()> {
        let interval = self.cfg.probe_interval;
        if interval == 0 || !update.is_multiple_of(interval) || self.suite.num_aux() == 0 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_index(
            seed::derive(self.cfg.seed, "probe"),
            update as u64,
        ));
        let sets = probe_reward_distributions(
            &self.model,
            self.suite,
            self.cfg.probe_sample,
            self.cfg.micro_batch,
            &self.cfg.probe_rewards,
            self.cfg.probe_bins,
            &mut rng,
        )?;
        self.probes.extend(sets.into_iter().map(|mut s| {
            s.update = update;
            s
        }));
        Ok(())
    }

    /// Ends the run after a non-finite loss or gradient, keeping what was logged.
    pub fn abort(&mut self, err: &FladError) {
        self.aborted = Some(format!(
            "aborted after {} updates: {err}",
            self.records.len()
        ));
    }

    pub fn into_result(self, policy: PolicyKind, reward: Option<RewardKind>) -> RunResult {
        let total: u64 = self.pull_counts.iter().sum();
        let sampling_distribution = self
            .pull_counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        RunResult {
            policy,
            reward,
            num_aux: self.suite.num_aux(),
            updates: self.records.len(),
            convergence_step: self.stopper.best_index(),
            best_val_loss: self.best_val.0,
            best_val_acc: self.best_val.1,
            heldout_acc: self.best_heldout,
            initial_val_loss: self.initial.0,
            initial_val_acc: self.initial.1,
            initial_heldout_acc: self.initial.2,
            records: self.records,
            pull_counts: self.pull_counts,
            target_draws: self.target_draws,
            sampling_distribution,
            probes: self.probes,
            initial_alignments: self.initial_alignments,
            init_backward_passes: self.init_backward_passes,
            aborted: self.aborted,
            model: self.best_model,
        }
    }
}

/// Runs `body` once per update until it reports a stop, `max_steps` is hit, or
/// a non-finite value aborts the run. Other errors propagate.
pub(crate) fn drive<F>(trainer: &mut Trainer<'_>, mut body: F) -> Result<()>
where
    F: FnMut(&mut Trainer<'_>, usize) -> Result<TurnRecord>,
{
    for update in 1..=trainer.cfg.max_steps {
        let step = body(trainer, update).and_then(|record| trainer.finish_update(record));
        match step {
            Ok(true) => break,
            Ok(false) => {}
            Err(e @ FladError::NonFinite(_)) => {
                trainer.abort(&e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

pub(crate) fn empty_record(update: usize) -> TurnRecord {
    TurnRecord {
        update,
        arms: Vec::new(),
        target_draws: 0,
        rewards: Vec::new(),
        policy: super::PolicySnapshot::Static,
        target_loss: 0.0,
        val_loss: 0.0,
        val_acc: 0.0,
        heldout_acc: None,
        backward_passes: 0,
        gradients: None,
    }
}
