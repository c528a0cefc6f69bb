//! UCB1 with an exponential moving average of rewards.
//!
//! Estimates start from large-sample gradient alignments and every arm counts
//! as pulled once, so the `n_a = 0` branch of the index only fires for states
//! built by hand.

use serde::{Deserialize, Serialize};

use crate::error::{FladError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ucb1State {
    t: u64,
    n: Vec<u64>,
    hat_r: Vec<f64>,
    beta: f64,
}

impl Ucb1State {
    /// Initializes from one alignment per arm: `R_hat = alignments`, `n = 1`, `t = 1`.
    pub fn init(alignments: &[f64], beta: f64) -> Result<Self> {
        if alignments.is_empty() {
            return Err(FladError::PolicyState("UCB1 needs at least one arm".into()));
        }
        if let Some(a) = alignments.iter().find(|a| !(-1.0..=1.0).contains(*a)) {
            return Err(FladError::OutOfRange(format!("alignment {a} not in [-1, 1]")));
        }
        check_beta(beta)?;
        Ok(Self {
            t: 1,
            n: vec![1; alignments.len()],
            hat_r: alignments.to_vec(),
            beta,
        })
    }

    /// Builds a state with explicit counts, mostly for tests and replay.
    pub fn from_parts(t: u64, n: Vec<u64>, hat_r: Vec<f64>, beta: f64) -> Result<Self> {
        if n.len() != hat_r.len() || n.is_empty() {
            return Err(FladError::PolicyState(format!(
                "{} counts for {} estimates",
                n.len(),
                hat_r.len()
            )));
        }
        if t == 0 {
            return Err(FladError::PolicyState("turn counter starts at 1".into()));
        }
        check_beta(beta)?;
        Ok(Self { t, n, hat_r, beta })
    }

    pub fn arms(&self) -> usize {
        self.n.len()
    }

    pub fn turn(&self) -> u64 {
        self.t
    }

    pub fn counts(&self) -> &[u64] {
        &self.n
    }

    pub fn estimates(&self) -> &[f64] {
        &self.hat_r
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `R_hat_a + sqrt(2 ln t / n_a)`, or `+inf` for an unpulled arm.
    pub fn index(&self) -> Vec<f64> {
        let log_t = (self.t as f64).ln();
        self.hat_r
            .iter()
            .zip(&self.n)
            .map(|(&r, &n)| {
                if n == 0 {
                    f64::INFINITY
                } else {
                    r + (2.0 * log_t / n as f64).sqrt()
                }
            })
            .collect()
    }

    /// Picks the arm of largest index (lowest id on ties), then advances `n_a` and `t`.
    pub fn select(&mut self) -> usize {
        let arm = argmax(&self.index());
        self.n[arm] += 1;
        self.t += 1;
        arm
    }

    /// `R_hat_a <- (1 - beta) R_hat_a + beta r`.
    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(FladError::NonFinite("UCB1 reward"));
        }
        let r = self
            .hat_r
            .get_mut(arm)
            .ok_or_else(|| FladError::PolicyState(format!("arm {arm} out of range")))?;
        *r = (1.0 - self.beta) * *r + self.beta * reward;
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(FladError::OutOfRange(format!("beta {beta} not in (0, 1]")))
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_copies_alignments() {
        let s = Ucb1State::init(&[0.9, -0.2, 0.0], 0.9).unwrap();
        assert_eq!(s.estimates(), &[0.9, -0.2, 0.0]);
        assert_eq!(s.counts(), &[1, 1, 1]);
        assert_eq!(s.turn(), 1);
        assert!(Ucb1State::init(&[], 0.9).is_err());
        assert!(Ucb1State::init(&[1.5], 0.9).is_err());
        assert!(Ucb1State::init(&[0.0], 1.5).is_err());
        assert!(Ucb1State::init(&[0.0], 0.0).is_err());
    }

    #[test]
    fn index_examples() {
        let s = Ucb1State::from_parts(8, vec![2, 0], vec![0.5, 0.1], 0.9).unwrap();
        let idx = s.index();
        assert!((idx[0] - (0.5 + 8f64.ln().sqrt())).abs() < 1e-15);
        // mpmath, 30 digits
        assert!((idx[0] - 1.942_026_886_600_883).abs() < 1e-15);
        assert_eq!(idx[1], f64::INFINITY);

        let s = Ucb1State::from_parts(1, vec![1], vec![0.37], 0.9).unwrap();
        assert_eq!(s.index(), vec![0.37]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[f64::INFINITY, f64::INFINITY]), 0);
        // exhaustive two-arm check over a small grid
        let grid = [-1.0, 0.0, 0.5, 2.0];
        for &a in &grid {
            for &b in &grid {
                let want = if b > a { 1 } else { 0 };
                assert_eq!(argmax(&[a, b]), want);
            }
        }
    }

    #[test]
    fn select_prefers_unpulled_and_advances() {
        let mut s = Ucb1State::from_parts(5, vec![3, 0, 4], vec![10.0, -5.0, 3.0], 0.9).unwrap();
        assert_eq!(s.select(), 1);
        assert_eq!(s.counts(), &[3, 1, 4]);
        assert_eq!(s.turn(), 6);
    }

    #[test]
    fn ema_update() {
        let mut s = Ucb1State::init(&[0.5, 0.5], 0.9).unwrap();
        s.update(0, 1.0).unwrap();
        assert!((s.estimates()[0] - 0.95).abs() < 1e-15);
        assert_eq!(s.estimates()[1], 0.5);

        let mut s = Ucb1State::init(&[0.2], 1.0).unwrap();
        s.update(0, 0.77).unwrap();
        assert_eq!(s.estimates()[0], 0.77);

        let mut s = Ucb1State::init(&[0.25], 0.9).unwrap();
        s.update(0, 0.25).unwrap();
        assert_eq!(s.estimates()[0], 0.25);
    }
}
