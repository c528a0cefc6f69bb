//! EXP3 with a decaying exploration rate and importance-weighted rewards.
//!
//! The sampling distribution at turn `t` mixes a Gibbs distribution over the
//! cumulative importance-weighted rewards with a uniform floor:
//!
//! ```text
//! eps_t   = min(1/K, sqrt(ln K / (K t)))
//! pi_t(a) = (1 - K eps_t) * softmax(eps_{t-1} * R_hat)(a) + eps_t
//! R_hat_a += R_a / pi_t(a)        (only for arms played this turn)
//! ```
//!
//! One turn is one model update. Every draw inside an accumulation window
//! uses the distribution computed at the start of that window, and the
//! importance weights divide by that same distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FladError, Result};

/// Which exploration rate scales the Gibbs exponent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GibbsScale {
    /// `exp(eps_{t-1} * R_hat)`.
    #[default]
    PreviousRate,
    /// `exp(eps_t * R_hat)`, i.e. the classic `exp(gamma * R_hat / K)` with `gamma = K eps_t`.
    CurrentRate,
}

/// `min(1/K, sqrt(ln K / (K t)))`. Requires `K >= 2` and `t >= 1`.
pub fn exploration_rate(k: usize, t: u64) -> Result<f64> {
    if k < 2 {
        return Err(FladError::InvalidConfig(format!(
            "EXP3 exploration rate needs at least 2 arms, got {k}"
        )));
    }
    if t == 0 {
        return Err(FladError::InvalidConfig("turn counter starts at 1".into()));
    }
    let kf = k as f64;
    Ok((1.0 / kf).min((kf.ln() / (kf * t as f64)).sqrt()))
}

/// Per-arm EXP3 learner state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp3State {
    k: usize,
    t: u64,
    hat_r: Vec<f64>,
    eps_prev: f64,
    eps_current: f64,
    last_pi: Vec<f64>,
    scale: GibbsScale,
}

impl Exp3State {
    /// Fresh state: `t = 1`, every estimate 1.0, `eps_0 = 1/K`.
    pub fn new(k: usize) -> Result<Self> {
        Self::with_scale(k, GibbsScale::default())
    }

    pub fn with_scale(k: usize, scale: GibbsScale) -> Result<Self> {
        let eps0 = 1.0 / k as f64;
        let eps1 = exploration_rate(k, 1)?;
        Ok(Self {
            k,
            t: 1,
            hat_r: vec![1.0; k],
            eps_prev: eps0,
            eps_current: eps1,
            last_pi: vec![eps0; k],
            scale,
        })
    }

    /// Builds a state with explicit estimates, mostly for tests and replay.
    pub fn from_parts(k: usize, t: u64, hat_r: Vec<f64>, eps_prev: f64) -> Result<Self> {
        if hat_r.len() != k {
            return Err(FladError::PolicyState(format!(
                "{} estimates for {k} arms",
                hat_r.len()
            )));
        }
        if hat_r.iter().any(|r| !r.is_finite()) {
            return Err(FladError::NonFinite("EXP3 estimates"));
        }
        let eps_current = exploration_rate(k, t)?;
        Ok(Self {
            k,
            t,
            hat_r,
            eps_prev,
            eps_current,
            last_pi: vec![1.0 / k as f64; k],
            scale: GibbsScale::default(),
        })
    }

    pub fn arms(&self) -> usize {
        self.k
    }

    pub fn turn(&self) -> u64 {
        self.t
    }

    pub fn estimates(&self) -> &[f64] {
        &self.hat_r
    }

    /// Distribution from the most recent [`Exp3State::distribution`] call.
    pub fn last_pi(&self) -> &[f64] {
        &self.last_pi
    }

    /// Exploration rate of the current turn.
    pub fn epsilon(&self) -> f64 {
        self.eps_current
    }

    pub fn epsilon_prev(&self) -> f64 {
        self.eps_prev
    }

    /// Computes `pi_t`, caches it as `last_pi` and returns it.
    pub fn distribution(&mut self) -> &[f64] {
        let eps = self.eps_current;
        let temp = match self.scale {
            GibbsScale::PreviousRate => self.eps_prev,
            GibbsScale::CurrentRate => eps,
        };
        let logits: Vec<f64> = self.hat_r.iter().map(|r| temp * r).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let gibbs_mass = (1.0 - self.k as f64 * eps).max(0.0);
        for (p, w) in self.last_pi.iter_mut().zip(&weights) {
            *p = gibbs_mass * w / total + eps;
        }
        &self.last_pi
    }

    /// Draws an arm from `last_pi`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.last_pi, rng)
    }

    /// Adds `reward / last_pi[arm]` to the chosen arm's estimate.
    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        let p = *self
            .last_pi
            .get(arm)
            .ok_or_else(|| FladError::PolicyState(format!("arm {arm} out of range")))?;
        if p <= 0.0 {
            return Err(FladError::PolicyState(format!(
                "arm {arm} has zero sampling probability"
            )));
        }
        if !reward.is_finite() {
            return Err(FladError::NonFinite("EXP3 reward"));
        }
        self.hat_r[arm] += reward / p;
        Ok(())
    }

    /// Closes the current turn: `eps_{t-1} <- eps_t`, `t <- t + 1`.
    pub fn end_turn(&mut self) {
        self.eps_prev = self.eps_current;
        self.t += 1;
        self.eps_current = exploration_rate(self.k, self.t).expect("k >= 2 checked at construction");
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the cumulative sum a hair below 1.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exploration_rate_examples() {
        let e = exploration_rate(35, 1).unwrap();
        assert_eq!(e, 1.0 / 35.0);
        assert!((35f64.ln() / 35.0).sqrt() > 1.0 / 35.0);
        let e = exploration_rate(35, 200).unwrap();
        assert!((e - (35f64.ln() / 7000.0).sqrt()).abs() < 1e-15);
        // mpmath, 30 digits
        assert!((e - 0.022_536_789_166_317_794).abs() < 1e-15);
        assert!(exploration_rate(2, 1_000_000_000).unwrap() < 1e-4);
        assert!(exploration_rate(1, 1).is_err());
        assert!(exploration_rate(3, 0).is_err());
    }

    #[test]
    fn exploration_rate_non_increasing() {
        for k in [2, 5, 35] {
            let mut prev = f64::INFINITY;
            for t in 1..2000 {
                let e = exploration_rate(k, t).unwrap();
                assert!(e <= prev);
                prev = e;
            }
        }
    }

    #[test]
    fn equal_estimates_give_uniform() {
        let mut s = Exp3State::from_parts(7, 50, vec![3.5; 7], 0.1).unwrap();
        for p in s.distribution() {
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }
        let mut s = Exp3State::new(35).unwrap();
        for p in s.distribution() {
            assert!((p - 1.0 / 35.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_arm_worked_example() {
        // eps_t = 0.1 needs ln2/(2t) = 0.01 -> t = 50 ln 2, not an integer; set the
        // rates directly instead.
        let mut s = Exp3State::from_parts(2, 1, vec![10.0, 0.0], 0.1).unwrap();
        s.eps_current = 0.1;
        let pi = s.distribution().to_vec();
        let e = std::f64::consts::E;
        let want0 = 0.8 * e / (e + 1.0) + 0.1;
        assert!((pi[0] - want0).abs() < 1e-15);
        // mpmath, 30 digits
        assert!((pi[0] - 0.684_846_862_904_003_9).abs() < 1e-15);
        assert!((pi[1] - 0.315_153_137_095_996_1).abs() < 1e-15);
    }

    #[test]
    fn huge_estimates_do_not_overflow() {
        let mut s = Exp3State::from_parts(3, 10, vec![1e6, 2e6, 0.0], 0.3).unwrap();
        let pi = s.distribution().to_vec();
        assert!(pi.iter().all(|p| p.is_finite()));
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn update_is_importance_weighted() {
        let mut s = Exp3State::new(4).unwrap();
        s.distribution();
        assert_eq!(s.last_pi()[2], 0.25);
        s.update(2, 0.5).unwrap();
        assert_eq!(s.estimates(), &[1.0, 1.0, 3.0, 1.0]);
        s.update(1, 0.0).unwrap();
        assert_eq!(s.estimates(), &[1.0, 1.0, 3.0, 1.0]);
        assert!(s.update(9, 1.0).is_err());
    }

    #[test]
    fn update_rejects_zero_probability() {
        let mut s = Exp3State::new(2).unwrap();
        s.last_pi = vec![1.0, 0.0];
        assert!(s.update(1, 1.0).is_err());
    }

    #[test]
    fn point_mass_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probs = [0.0, 0.0, 0.0, 1.0];
        for _ in 0..100 {
            assert_eq!(sample_index(&probs, &mut rng), 3);
        }
    }

    #[test]
    fn sampling_reproducible() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_index(&[0.25; 4], &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
    }

    #[test]
    fn end_turn_shifts_rates() {
        let mut s = Exp3State::new(20).unwrap();
        let e1 = s.epsilon();
        s.end_turn();
        assert_eq!(s.turn(), 2);
        assert_eq!(s.epsilon_prev(), e1);
        assert_eq!(s.epsilon(), exploration_rate(20, 2).unwrap());
    }
}
