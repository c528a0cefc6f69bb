//! Bandit learners and static mixture samplers.

pub mod exp3;
pub mod mixture;
pub mod ucb1;

pub use exp3::{exploration_rate, sample_index, Exp3State, GibbsScale};
pub use mixture::{gibbs_mixture, uniform_mixture, MixtureWeights, Source};
pub use ucb1::{argmax, Ucb1State};

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exp3_state(k: usize, t: u64, hat_r: Vec<f64>, eps_prev: f64) -> Exp3State {
        Exp3State::from_parts(k, t, hat_r, eps_prev).unwrap()
    }

    proptest! {
        #[test]
        fn exp3_floor_and_normalization(
            hat_r in prop::collection::vec(-1e4f64..1e4, 2..40),
            t in 1u64..100_000,
            eps_prev in 0.0f64..0.5,
        ) {
            let k = hat_r.len();
            let mut s = exp3_state(k, t, hat_r, eps_prev);
            let eps = s.epsilon();
            let pi = s.distribution().to_vec();
            prop_assert!(pi.iter().all(|&p| p >= eps));
            prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn exp3_shift_invariance(
            hat_r in prop::collection::vec(-50f64..50.0, 2..20),
            shift in -1e3f64..1e3,
            t in 1u64..10_000,
        ) {
            let k = hat_r.len();
            let shifted: Vec<f64> = hat_r.iter().map(|r| r + shift).collect();
            let mut a = exp3_state(k, t, hat_r, 0.05);
            let mut b = exp3_state(k, t, shifted, 0.05);
            for (x, y) in a.distribution().iter().zip(b.distribution()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn exp3_update_touches_only_played_arm(
            hat_r in prop::collection::vec(-10f64..10.0, 2..10),
            arm_seed in any::<usize>(),
            reward in 0.0f64..2.0,
        ) {
            let k = hat_r.len();
            let arm = arm_seed % k;
            let mut s = exp3_state(k, 3, hat_r.clone(), 0.1);
            let p = s.distribution()[arm];
            s.update(arm, reward).unwrap();
            for (i, (&before, &after)) in hat_r.iter().zip(s.estimates()).enumerate() {
                if i == arm {
                    prop_assert!((after - (before + reward / p)).abs() < 1e-12);
                } else {
                    prop_assert_eq!(before, after);
                }
            }
        }

        #[test]
        fn ucb1_index_monotone(
            r in -1f64..1.0,
            dr in 0.0f64..1.0,
            n in 1u64..1000,
            dn in 1u64..1000,
            t in 1u64..100_000,
            dt in 1u64..1000,
        ) {
            let idx = |t, n, r| Ucb1State::from_parts(t, vec![n], vec![r], 0.9).unwrap().index()[0];
            prop_assert!(idx(t, n, r + dr) >= idx(t, n, r));
            prop_assert!(idx(t, n + dn, r) <= idx(t, n, r));
            prop_assert!(idx(t + dt, n, r) >= idx(t, n, r));
        }

        #[test]
        fn argmax_positive_scale_invariant(
            v in prop::collection::vec(-1e3f64..1e3, 1..30),
            c in 1e-3f64..1e3,
        ) {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let i = argmax(&v);
            prop_assert!(v.iter().all(|&x| x <= v[i]));
            prop_assert_eq!(argmax(&scaled), i);
        }

        #[test]
        fn mixture_target_ratio(
            alignments in prop::collection::vec(-1f64..1.0, 1..50),
            temperature in 0.05f64..5.0,
            m in 0.0f64..10.0,
        ) {
            let w = gibbs_mixture(&alignments, temperature, m).unwrap();
            let max = w.aux_weights.iter().copied().fold(0.0, f64::max);
            prop_assert!((w.target_weight - m * max).abs() < 1e-12);
            let total = w.target_weight + w.aux_weights.iter().sum::<f64>();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exp3_importance_weights_unbiased() {
        // Bernoulli arms; the per-episode increment of hat_R[a] is 1{a played} r / pi(a).
        let means = [0.2, 0.5, 0.9];
        let mut base = exp3_state(3, 40, vec![5.0, 1.0, -2.0], 0.2);
        base.distribution();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let episodes = 100_000;
        let mut sum = [0.0; 3];
        let mut sum_sq = [0.0; 3];
        for _ in 0..episodes {
            let mut s = base.clone();
            let arm = s.sample(&mut rng);
            let r = if rng.random::<f64>() < means[arm] { 1.0 } else { 0.0 };
            s.update(arm, r).unwrap();
            for a in 0..3 {
                let inc = s.estimates()[a] - base.estimates()[a];
                sum[a] += inc;
                sum_sq[a] += inc * inc;
            }
        }
        let n = episodes as f64;
        for a in 0..3 {
            let mean = sum[a] / n;
            let var = sum_sq[a] / n - mean * mean;
            let se = (var / n).sqrt();
            assert!((mean - means[a]).abs() <= 2.0 * se, "arm {a}: {mean} vs {} (se {se})", means[a]);
        }
    }

    #[test]
    fn exp3_sampling_frequencies() {
        let mut s = exp3_state(4, 7, vec![3.0, 0.0, -1.0, 8.0], 0.3);
        let pi = s.distribution().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 1_000_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[s.sample(&mut rng)] += 1;
        }
        for a in 0..4 {
            let freq = counts[a] as f64 / draws as f64;
            assert!((freq - pi[a]).abs() < 0.005, "arm {a}: {freq} vs {}", pi[a]);
        }
    }

    #[test]
    fn ucb1_select_is_deterministic() {
        let run = || {
            let mut s = Ucb1State::init(&[0.3, 0.1, 0.25, -0.4], 0.9).unwrap();
            (0..200)
                .map(|i| {
                    let arm = s.select();
                    s.update(arm, ((i * 7 + arm) % 5) as f64 / 5.0).unwrap();
                    arm
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ucb1_coverage_never_drops_below_one() {
        let mut s = Ucb1State::init(&[0.9, -0.9, 0.0], 0.9).unwrap();
        for _ in 0..500 {
            let arm = s.select();
            s.update(arm, 0.5).unwrap();
            assert!(s.counts().iter().all(|&n| n >= 1));
        }
        assert_eq!(s.counts().iter().sum::<u64>(), 503);
    }
}
