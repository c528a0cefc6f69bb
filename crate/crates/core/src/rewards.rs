//! Gradient-based reward signals.
//!
//! All three rewards compare an auxiliary-batch gradient against the target
//! gradient over the same parameter partition. They are pure functions.

use serde::{Deserialize, Serialize};

use crate::error::{FladError, Result};

/// Which slice of the parameter vector a gradient covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Every model parameter, in canonical order.
    Full,
    /// The output layer only.
    Head,
}

/// A flat gradient over one named parameter partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    values: Vec<f64>,
    partition: Partition,
}

impl GradientVector {
    /// Wraps `values`, rejecting NaN or infinite entries.
    pub fn new(values: Vec<f64>, partition: Partition) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FladError::NonFinite("gradient vector"));
        }
        Ok(Self { values, partition })
    }

    pub fn zeros(len: usize, partition: Partition) -> Self {
        Self {
            values: vec![0.0; len],
            partition,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &GradientVector) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientVector, scale: f64) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scaled(&self, scale: f64) -> GradientVector {
        GradientVector {
            values: self.values.iter().map(|v| v * scale).collect(),
            partition: self.partition,
        }
    }

    pub fn check_compatible(&self, other: &GradientVector) -> Result<()> {
        if self.partition != other.partition {
            return Err(FladError::IncompatibleGradients(format!(
                "partition {:?} vs {:?}",
                self.partition, other.partition
            )));
        }
        if self.values.len() != other.values.len() {
            return Err(FladError::IncompatibleGradients(format!(
                "length {} vs {}",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }
}

/// The three reward functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Cosine similarity of the two gradients.
    Ga,
    /// Gradient magnitude similarity.
    Gms,
    /// `(1 + GA) / 2 + GMS`.
    Agg,
}

impl RewardKind {
    pub const ALL: [RewardKind; 3] = [RewardKind::Ga, RewardKind::Gms, RewardKind::Agg];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Ga => "ga",
            RewardKind::Gms => "gms",
            RewardKind::Agg => "agg",
        }
    }

    /// Closed range of values the reward can take.
    pub fn range(self) -> (f64, f64) {
        match self {
            RewardKind::Ga => (-1.0, 1.0),
            RewardKind::Gms => (0.0, 1.0),
            RewardKind::Agg => (0.0, 2.0),
        }
    }
}

impl std::str::FromStr for RewardKind {
    type Err = FladError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ga" => Ok(RewardKind::Ga),
            "gms" => Ok(RewardKind::Gms),
            "agg" => Ok(RewardKind::Agg),
            other => Err(FladError::InvalidConfig(format!(
                "unknown reward kind `{other}` (expected ga, gms or agg)"
            ))),
        }
    }
}

impl std::fmt::Display for RewardKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A reward value plus whether a zero-norm gradient forced the neutral value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
    pub degenerate: bool,
}

impl Reward {
    fn regular(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn degenerate() -> Self {
        Self {
            value: 0.0,
            degenerate: true,
        }
    }
}

/// Cosine similarity between `aux` and `target`, clamped to `[-1, 1]`.
///
/// A zero-norm vector on either side yields 0 with `degenerate` set.
pub fn gradient_alignment(aux: &GradientVector, target: &GradientVector) -> Result<Reward> {
    let dot = aux.dot(target)?;
    let na = aux.norm();
    let nt = target.norm();
    if na == 0.0 || nt == 0.0 {
        return Ok(Reward::degenerate());
    }
    Ok(Reward::regular((dot / (na * nt)).clamp(-1.0, 1.0)))
}

/// `2|a||t| / (|a|^2 + |t|^2)`: 1 at equal magnitudes, tending to 0 as they diverge.
///
/// Both norms zero yields 0 with `degenerate` set.
pub fn gradient_magnitude_similarity(
    aux: &GradientVector,
    target: &GradientVector,
) -> Result<Reward> {
    aux.check_compatible(target)?;
    let na = aux.norm();
    let nt = target.norm();
    let denom = na * na + nt * nt;
    if denom == 0.0 {
        return Ok(Reward::degenerate());
    }
    Ok(Reward::regular((2.0 * na * nt / denom).clamp(0.0, 1.0)))
}

/// `(1 + r_ga) / 2 + r_gms`. Inputs outside their ranges are rejected.
pub fn aggregate_reward(r_ga: f64, r_gms: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&r_ga) {
        return Err(FladError::OutOfRange(format!("GA reward {r_ga} not in [-1, 1]")));
    }
    if !(0.0..=1.0).contains(&r_gms) {
        return Err(FladError::OutOfRange(format!("GMS reward {r_gms} not in [0, 1]")));
    }
    Ok((1.0 + r_ga) / 2.0 + r_gms)
}

/// Dispatch on `kind`. AGG computes both components from the same pair.
pub fn compute_reward(
    kind: RewardKind,
    aux: &GradientVector,
    target: &GradientVector,
) -> Result<Reward> {
    match kind {
        RewardKind::Ga => gradient_alignment(aux, target),
        RewardKind::Gms => gradient_magnitude_similarity(aux, target),
        RewardKind::Agg => {
            let ga = gradient_alignment(aux, target)?;
            let gms = gradient_magnitude_similarity(aux, target)?;
            Ok(Reward {
                value: aggregate_reward(ga.value, gms.value)?,
                degenerate: ga.degenerate || gms.degenerate,
            })
        }
    }
}
