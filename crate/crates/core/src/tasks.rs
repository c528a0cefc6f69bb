//! Synthetic task suites with controlled relatedness.
//!
//! Every task is labelled by a linear teacher `argmax(W x)` over standard
//! normal features. Auxiliary teachers are built by rotating the target
//! teacher (flattened) towards a random orthogonal direction so that their
//! cosine with it equals the requested relatedness. Label noise `p` replaces
//! a label with a uniformly random class with probability `2p`, so `p = 0.5`
//! leaves no information in the labels and, for two classes, `p` is exactly
//! the flip probability.
//!
//! Each arm is generated from its own seed derived from the suite seed and
//! the arm index, so a suite of `K` arms is a prefix of any larger suite built
//! from the same spec list.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FladError, Result};
use crate::model::Batch;
use crate::seed;

pub const SUITE_SCHEMA: &str = "flad-suite";
pub const SUITE_VERSION: u32 = 1;

/// Few-shot size used by the default benchmark.
pub const DEFAULT_FEW_SHOT: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    /// Target cosine between this task's teacher and the target teacher.
    pub relatedness: f64,
    pub label_noise: f64,
    pub size: usize,
}

impl TaskSpec {
    pub fn new(id: usize, relatedness: f64, label_noise: f64, size: usize) -> Self {
        Self {
            id,
            relatedness,
            label_noise,
            size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.relatedness) {
            return Err(FladError::OutOfRange(format!(
                "task {}: relatedness {} not in [-1, 1]",
                self.id, self.relatedness
            )));
        }
        if !(0.0..=0.5).contains(&self.label_noise) {
            return Err(FladError::OutOfRange(format!(
                "task {}: label noise {} not in [0, 0.5]",
                self.id, self.label_noise
            )));
        }
        if self.size == 0 {
            return Err(FladError::EmptyDataset);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxDataset {
    pub spec: TaskSpec,
    /// Realized cosine between this teacher and the target teacher.
    pub teacher_cosine: f64,
    pub teacher: Vec<f64>,
    pub data: Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub train: Batch,
    pub validation: Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSuite {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub feature_dim: usize,
    pub class_count: usize,
    pub target_spec: TaskSpec,
    pub target_teacher: Vec<f64>,
    pub split: FewShotSplit,
    /// Target examples outside the few-shot split, used only for reporting.
    pub heldout: Batch,
    pub aux: Vec<AuxDataset>,
}

impl SyntheticSuite {
    pub fn num_aux(&self) -> usize {
        self.aux.len()
    }

    /// The same suite restricted to its first `k` auxiliary arms.
    pub fn with_arms(&self, k: usize) -> Result<SyntheticSuite> {
        if k > self.aux.len() {
            return Err(FladError::InvalidConfig(format!(
                "suite has {} auxiliary arms, {k} requested",
                self.aux.len()
            )));
        }
        let mut out = self.clone();
        out.aux.truncate(k);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| FladError::SuiteFormat(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SyntheticSuite> {
        let text = std::fs::read_to_string(path)?;
        let suite: SyntheticSuite =
            serde_json::from_str(&text).map_err(|e| FladError::SuiteFormat(e.to_string()))?;
        suite.validate()?;
        Ok(suite)
    }

    /// Checks shapes and schema after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SUITE_SCHEMA || self.version != SUITE_VERSION {
            return Err(FladError::SuiteFormat(format!(
                "unsupported schema {} v{}",
                self.schema, self.version
            )));
        }
        let batches = [&self.split.train, &self.split.validation, &self.heldout]
            .into_iter()
            .chain(self.aux.iter().map(|a| &a.data));
        for b in batches {
            if b.features() != self.feature_dim {
                return Err(FladError::SuiteFormat("feature dimension mismatch".into()));
            }
            if b.labels().iter().any(|&y| y >= self.class_count) {
                return Err(FladError::SuiteFormat("label out of range".into()));
            }
        }
        if self.split.train.len() != self.split.validation.len() || self.split.train.is_empty() {
            return Err(FladError::SuiteFormat("unbalanced few-shot split".into()));
        }
        Ok(())
    }
}

/// Arm specs of the default benchmark, in blocks of ten arms: one helpful
/// (0.95 relatedness, 0.05 noise), three neutral (0.3, 0.2) and six
/// adversarial (-0.5 or 0, 0.4). The first 20 are the default suite.
pub fn benchmark_specs(k: usize) -> Vec<TaskSpec> {
    const BLOCK: [(f64, f64); 10] = [
        (0.95, 0.05),
        (0.3, 0.2),
        (-0.5, 0.4),
        (0.0, 0.4),
        (0.3, 0.2),
        (-0.5, 0.4),
        (0.0, 0.4),
        (0.3, 0.2),
        (-0.5, 0.4),
        (0.0, 0.4),
    ];
    (0..k)
        .map(|i| {
            let (rel, noise) = BLOCK[i % BLOCK.len()];
            TaskSpec::new(i, rel, noise, 2000)
        })
        .collect()
}

pub fn benchmark_target_spec() -> TaskSpec {
    TaskSpec::new(usize::MAX, 1.0, 0.0, 2000)
}

/// Builds the default benchmark suite with `k` auxiliary arms.
pub fn benchmark_suite(k: usize, seed: u64) -> Result<SyntheticSuite> {
    generate_suite(
        &benchmark_specs(k),
        &benchmark_target_spec(),
        32,
        4,
        DEFAULT_FEW_SHOT,
        seed,
    )
}

/// Generates a target task with a few-shot split plus one dataset per spec.
pub fn generate_suite(
    specs: &[TaskSpec],
    target_spec: &TaskSpec,
    feature_dim: usize,
    class_count: usize,
    few_shot: usize,
    seed: u64,
) -> Result<SyntheticSuite> {
    if class_count < 2 || feature_dim < class_count {
        return Err(FladError::InvalidConfig(format!(
            "need feature_dim >= class_count >= 2, got {feature_dim} and {class_count}"
        )));
    }
    target_spec.validate()?;
    for s in specs {
        s.validate()?;
    }

    let teacher_len = feature_dim * class_count;
    let mut target_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "target"));
    let target_teacher = normal_vec(&mut target_rng, teacher_len);
    let pool = label_examples(&target_teacher, target_spec, feature_dim, class_count, &mut target_rng);
    let (split, heldout) = split_few_shot(&pool, few_shot, &mut target_rng)?;

    let aux_root = seed::derive(seed, "aux");
    let aux = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_index(aux_root, i as u64));
            let teacher = rotate_towards(&target_teacher, spec.relatedness, &mut rng);
            let teacher_cosine = cosine(&teacher, &target_teacher);
            let data = label_examples(&teacher, spec, feature_dim, class_count, &mut rng);
            AuxDataset {
                spec: spec.clone(),
                teacher_cosine,
                teacher,
                data,
            }
        })
        .collect();

    Ok(SyntheticSuite {
        schema: SUITE_SCHEMA.to_string(),
        version: SUITE_VERSION,
        seed,
        feature_dim,
        class_count,
        target_spec: target_spec.clone(),
        target_teacher,
        split,
        heldout,
        aux,
    })
}

/// Uniform draw of `size` rows with replacement.
pub fn sample_batch<R: Rng + ?Sized>(dataset: &Batch, size: usize, rng: &mut R) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(FladError::EmptyDataset);
    }
    if size == 0 {
        return Err(FladError::InvalidConfig("batch size must be positive".into()));
    }
    let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..dataset.len())).collect();
    Ok(dataset.gather(&idx))
}

/// Draw of `min(size, len)` distinct rows in random order.
pub fn sample_without_replacement<R: Rng + ?Sized>(
    dataset: &Batch,
    size: usize,
    rng: &mut R,
) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(FladError::EmptyDataset);
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    let (chosen, _) = idx.partial_shuffle(rng, size.min(dataset.len()));
    Ok(dataset.gather(chosen))
}

/// Takes `n_total` random rows and halves them into train and validation.
/// The remaining rows are returned as a held-out set.
pub fn split_few_shot<R: Rng + ?Sized>(
    pool: &Batch,
    n_total: usize,
    rng: &mut R,
) -> Result<(FewShotSplit, Batch)> {
    if n_total == 0 || !n_total.is_multiple_of(2) {
        return Err(FladError::InvalidConfig(format!(
            "few-shot size must be positive and even, got {n_total}"
        )));
    }
    if n_total > pool.len() {
        return Err(FladError::InvalidConfig(format!(
            "few-shot size {n_total} exceeds {} available examples",
            pool.len()
        )));
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    let half = n_total / 2;
    let split = FewShotSplit {
        train: pool.gather(&idx[..half]),
        validation: pool.gather(&idx[half..n_total]),
    };
    Ok((split, pool.gather(&idx[n_total..])))
}

/// Fraction of rows whose label equals the teacher's argmax.
pub fn teacher_accuracy(teacher: &[f64], data: &Batch, class_count: usize) -> f64 {
    let correct = (0..data.len())
        .filter(|&i| teacher_label(teacher, data.row(i), class_count) == data.label(i))
        .count();
    correct as f64 / data.len() as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `|t| (rho t_hat + sqrt(1 - rho^2) u_hat)` with `u_hat` a random unit vector orthogonal to `t`.
fn rotate_towards<R: Rng + ?Sized>(target: &[f64], rho: f64, rng: &mut R) -> Vec<f64> {
    let t_norm = norm(target);
    let t_hat: Vec<f64> = target.iter().map(|x| x / t_norm).collect();
    let mut u = normal_vec(rng, target.len());
    let proj: f64 = u.iter().zip(&t_hat).map(|(a, b)| a * b).sum();
    for (ui, ti) in u.iter_mut().zip(&t_hat) {
        *ui -= proj * ti;
    }
    let u_norm = norm(&u);
    let ortho = (1.0 - rho * rho).max(0.0).sqrt();
    t_hat
        .iter()
        .zip(&u)
        .map(|(t, u)| t_norm * (rho * t + ortho * u / u_norm))
        .collect()
}

fn teacher_label(teacher: &[f64], x: &[f64], class_count: usize) -> usize {
    let d = x.len();
    let logits: Vec<f64> = (0..class_count)
        .map(|c| teacher[c * d..(c + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum())
        .collect();
    crate::policies::argmax(&logits)
}

fn label_examples<R: Rng + ?Sized>(
    teacher: &[f64],
    spec: &TaskSpec,
    feature_dim: usize,
    class_count: usize,
    rng: &mut R,
) -> Batch {
    let resample = (2.0 * spec.label_noise).min(1.0);
    let mut out = Batch::empty(feature_dim);
    let mut row = vec![0.0; feature_dim];
    for _ in 0..spec.size {
        row.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        let mut y = teacher_label(teacher, &row, class_count);
        if rng.random::<f64>() < resample {
            y = rng.random_range(0..class_count);
        }
        out.push(&row, y);
    }
    out
}
