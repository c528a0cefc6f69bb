//! Two-layer tanh classifier with hand-derived gradients.
//!
//! Parameters live in one flat vector in canonical order `(W1, b1, W2, b2)`,
//! row-major. The output layer `(W2, b2)` is the "head" partition used for
//! rewards.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FladError, Result};
use crate::rewards::{GradientVector, Partition};

const PROB_FLOOR: f64 = 1e-12;

/// Row-major examples with integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    features: usize,
    x: Vec<f64>,
    y: Vec<usize>,
}

impl Batch {
    pub fn new(features: usize, x: Vec<f64>, y: Vec<usize>) -> Result<Self> {
        if features == 0 {
            return Err(FladError::DimensionMismatch("zero feature dimension".into()));
        }
        if x.len() != features * y.len() {
            return Err(FladError::DimensionMismatch(format!(
                "{} feature values for {} examples of dimension {features}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { features, x, y })
    }

    pub fn empty(features: usize) -> Self {
        Self {
            features,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.y[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn push(&mut self, row: &[f64], label: usize) {
        debug_assert_eq!(row.len(), self.features);
        self.x.extend_from_slice(row);
        self.y.push(label);
    }

    /// Copies the rows at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let mut out = Batch {
            features: self.features,
            x: Vec::with_capacity(indices.len() * self.features),
            y: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            out.push(self.row(i), self.y[i]);
        }
        out
    }

    /// Concatenates `other` onto `self`.
    pub fn extend(&mut self, other: &Batch) {
        self.x.extend_from_slice(&other.x);
        self.y.extend_from_slice(&other.y);
    }
}

/// Full gradient plus its head slice, and the loss it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub full: GradientVector,
    pub head: GradientVector,
    pub loss: f64,
}

/// Row-major class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    pub classes: usize,
    pub values: Vec<f64>,
}

impl Probabilities {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.classes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    input: usize,
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

impl MlpModel {
    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        let n = hidden * input + hidden + classes * hidden + classes;
        Self {
            input,
            hidden,
            classes,
            params: vec![0.0; n],
        }
    }

    /// Per-layer uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(input, hidden, classes);
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let head_start = m.head_offset();
        for (i, p) in m.params.iter_mut().enumerate() {
            let a = if i < head_start { a1 } else { a2 };
            *p = rng.random_range(-a..=a);
        }
        m
    }

    /// Builds a model from an explicit flat parameter vector.
    pub fn from_params(input: usize, hidden: usize, classes: usize, params: Vec<f64>) -> Result<Self> {
        let m = Self::zeros(input, hidden, classes);
        if params.len() != m.params.len() {
            return Err(FladError::DimensionMismatch(format!(
                "{} parameters, expected {}",
                params.len(),
                m.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(FladError::NonFinite("model parameters"));
        }
        Ok(Self { params, ..m })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Offset of `W2` in the flat parameter vector.
    pub fn head_offset(&self) -> usize {
        self.hidden * self.input + self.hidden
    }

    pub fn head_len(&self) -> usize {
        self.classes * self.hidden + self.classes
    }

    fn w1(&self) -> &[f64] {
        &self.params[..self.hidden * self.input]
    }

    fn b1(&self) -> &[f64] {
        let s = self.hidden * self.input;
        &self.params[s..s + self.hidden]
    }

    fn w2(&self) -> &[f64] {
        let s = self.head_offset();
        &self.params[s..s + self.classes * self.hidden]
    }

    fn b2(&self) -> &[f64] {
        let s = self.head_offset() + self.classes * self.hidden;
        &self.params[s..]
    }

    fn check_input(&self, features: usize) -> Result<()> {
        if features != self.input {
            return Err(FladError::DimensionMismatch(format!(
                "input has {features} features, model expects {}",
                self.input
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        self.check_input(batch.features())?;
        if batch.is_empty() {
            return Err(FladError::EmptyDataset);
        }
        if let Some(&y) = batch.labels().iter().find(|&&y| y >= self.classes) {
            return Err(FladError::DimensionMismatch(format!(
                "label {y} with {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    /// Hidden activations and class probabilities for one example.
    fn forward_row(&self, x: &[f64], hidden: &mut [f64], probs: &mut [f64]) {
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        for (j, h) in hidden.iter_mut().enumerate() {
            let w = &w1[j * self.input..(j + 1) * self.input];
            let z: f64 = b1[j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            *h = z.tanh();
        }
        for (c, p) in probs.iter_mut().enumerate() {
            let w = &w2[c * self.hidden..(c + 1) * self.hidden];
            *p = b2[c] + w.iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
        softmax_in_place(probs);
    }

    /// Class probabilities for every row of `x`.
    pub fn forward(&self, x: &Batch) -> Result<Probabilities> {
        self.check_input(x.features())?;
        let mut hidden = vec![0.0; self.hidden];
        let mut values = vec![0.0; x.len() * self.classes];
        for i in 0..x.len() {
            let out = &mut values[i * self.classes..(i + 1) * self.classes];
            self.forward_row(x.row(i), &mut hidden, out);
        }
        Ok(Probabilities {
            classes: self.classes,
            values,
        })
    }

    /// Mean cross-entropy, with probabilities floored at 1e-12.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let probs = self.forward(batch)?;
        Ok(mean_cross_entropy(&probs, batch.labels()))
    }

    /// Mean loss and fraction of rows whose argmax matches the label.
    pub fn evaluate(&self, batch: &Batch) -> Result<(f64, f64)> {
        self.check_batch(batch)?;
        let probs = self.forward(batch)?;
        let correct = (0..batch.len())
            .filter(|&i| crate::policies::argmax(probs.row(i)) == batch.label(i))
            .count();
        Ok((
            mean_cross_entropy(&probs, batch.labels()),
            correct as f64 / batch.len() as f64,
        ))
    }

    /// Exact gradient of the mean cross-entropy.
    pub fn backward(&self, batch: &Batch) -> Result<GradientBundle> {
        self.check_batch(batch)?;
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut hidden = vec![0.0; self.hidden];
        let mut probs = vec![0.0; self.classes];
        let mut dhidden = vec![0.0; self.hidden];
        let mut loss = 0.0;

        let w1_len = self.hidden * self.input;
        let head = self.head_offset();
        let w2_len = self.classes * self.hidden;
        let w2 = self.w2();

        for i in 0..batch.len() {
            let x = batch.row(i);
            let y = batch.label(i);
            self.forward_row(x, &mut hidden, &mut probs);
            loss -= probs[y].max(PROB_FLOOR).ln();

            // d loss / d logits = p - onehot(y)
            dhidden.iter_mut().for_each(|d| *d = 0.0);
            for c in 0..self.classes {
                let dz = (probs[c] - if c == y { 1.0 } else { 0.0 }) / n;
                let row = head + c * self.hidden;
                for j in 0..self.hidden {
                    grad[row + j] += dz * hidden[j];
                    dhidden[j] += dz * w2[c * self.hidden + j];
                }
                grad[head + w2_len + c] += dz;
            }
            for j in 0..self.hidden {
                let dz = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                let row = j * self.input;
                for (k, xk) in x.iter().enumerate() {
                    grad[row + k] += dz * xk;
                }
                grad[w1_len + j] += dz;
            }
        }

        let head_vals = grad[head..].to_vec();
        Ok(GradientBundle {
            full: GradientVector::new(grad, Partition::Full)?,
            head: GradientVector::new(head_vals, Partition::Head)?,
            loss: loss / n,
        })
    }

    /// `theta <- theta - lr * grad`. Rejects non-finite or mis-shaped gradients.
    pub fn sgd_step(&mut self, grad: &GradientVector, lr: f64) -> Result<()> {
        if grad.partition() != Partition::Full || grad.len() != self.params.len() {
            return Err(FladError::IncompatibleGradients(format!(
                "SGD needs a full gradient of length {}, got {:?} of length {}",
                self.params.len(),
                grad.partition(),
                grad.len()
            )));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(FladError::OutOfRange(format!("learning rate {lr}")));
        }
        if grad.values().iter().any(|g| !g.is_finite()) {
            return Err(FladError::NonFinite("SGD gradient"));
        }
        for (p, g) in self.params.iter_mut().zip(grad.values()) {
            *p -= lr * g;
        }
        Ok(())
    }

    /// Central finite differences of [`MlpModel::loss`], one parameter at a time.
    pub fn numerical_gradient(&self, batch: &Batch, step: f64) -> Result<GradientVector> {
        if !(step > 0.0) {
            return Err(FladError::OutOfRange(format!("finite-difference step {step}")));
        }
        let mut probe = self.clone();
        let mut grad = Vec::with_capacity(self.params.len());
        for i in 0..self.params.len() {
            let orig = probe.params[i];
            probe.params[i] = orig + step;
            let up = probe.loss(batch)?;
            probe.params[i] = orig - step;
            let down = probe.loss(batch)?;
            probe.params[i] = orig;
            grad.push((up - down) / (2.0 * step));
        }
        GradientVector::new(grad, Partition::Full)
    }
}

/// The `(W2, b2)` slice of a bundle.
pub fn head_gradient(bundle: &GradientBundle) -> &GradientVector {
    &bundle.head
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

fn mean_cross_entropy(probs: &Probabilities, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.row(i)[y].max(PROB_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> Batch {
        let x: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        Batch::new(d, x, y).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::zeros(3, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = random_batch(&mut rng, 6, 3, 5);
        let p = m.forward(&b).unwrap();
        assert!(p.values.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!((m.loss(&b).unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn forced_logits_saturate() {
        // hidden=1 with tanh(0)=0, so logits are just b2.
        let mut params = vec![0.0; 1 + 1 + 2 + 2];
        params[4] = 10.0;
        params[5] = -10.0;
        let m = MlpModel::from_params(1, 1, 2, params).unwrap();
        let p = m.forward(&Batch::new(1, vec![0.3], vec![0]).unwrap()).unwrap();
        let want = 1.0 / (1.0 + (-20f64).exp());
        assert!((p.values[0] - want).abs() < 1e-15);
        assert!((p.values[1] - 2.061e-9).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = MlpModel::init(4, 6, 3, &mut rng);
        let row = [0.1, -0.7, 2.0, 0.4];
        let b = Batch::new(4, row.repeat(5), vec![0; 5]).unwrap();
        let p = m.forward(&b).unwrap();
        for i in 1..5 {
            assert_eq!(p.row(i), p.row(0));
        }
    }

    #[test]
    fn loss_of_fixed_confidence() {
        // logits (ln 0.8, ln 0.2) give p(correct)=0.8
        let params = vec![0.0, 0.0, 0.0, 0.0, 0.8f64.ln(), 0.2f64.ln()];
        let m = MlpModel::from_params(1, 1, 2, params).unwrap();
        let b = Batch::new(1, vec![1.0, -2.0, 3.0], vec![0, 0, 0]).unwrap();
        assert!((m.loss(&b).unwrap() - 0.22314355131420976).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_near_zero_loss() {
        let params = vec![0.0, 0.0, 0.0, 0.0, 50.0, -50.0];
        let m = MlpModel::from_params(1, 1, 2, params).unwrap();
        let b = Batch::new(1, vec![1.0], vec![0]).unwrap();
        assert!(m.loss(&b).unwrap() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = MlpModel::zeros(3, 2, 2);
        let b = Batch::new(4, vec![0.0; 4], vec![0]).unwrap();
        assert!(m.forward(&b).is_err());
        let b = Batch::new(3, vec![0.0; 3], vec![2]).unwrap();
        assert!(m.loss(&b).is_err());
        assert!(Batch::new(3, vec![0.0; 4], vec![0]).is_err());
    }

    #[test]
    fn head_slice_matches_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = MlpModel::init(5, 8, 4, &mut rng);
        let b = random_batch(&mut rng, 7, 5, 4);
        let g = m.backward(&b).unwrap();
        assert_eq!(head_gradient(&g).len(), 36);
        assert_eq!(head_gradient(&g).values(), &g.full.values()[m.head_offset()..]);
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = MlpModel::init(3, 4, 3, &mut rng);
        let b = random_batch(&mut rng, 5, 3, 3);
        let mut twice = b.clone();
        twice.extend(&b);
        let g1 = m.backward(&b).unwrap();
        let g2 = m.backward(&twice).unwrap();
        for (a, c) in g1.full.values().iter().zip(g2.full.values()) {
            assert!((a - c).abs() < 1e-14);
        }
    }

    #[test]
    fn bias_gradient_closed_form() {
        // Zero inputs and zero W1/b1 make hidden = 0, so d/d b2 = mean(p - onehot(y)).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = MlpModel::init(3, 4, 3, &mut rng);
        let off = m.head_offset();
        for p in &mut m.params[..off] {
            *p = 0.0;
        }
        let b = Batch::new(3, vec![0.0; 9], vec![0, 2, 2]).unwrap();
        let g = m.backward(&b).unwrap();
        let p = m.forward(&b).unwrap();
        let b2_grad = &g.full.values()[m.num_params() - 3..];
        for c in 0..3 {
            let want: f64 = (0..3)
                .map(|i| p.row(i)[c] - if b.label(i) == c { 1.0 } else { 0.0 })
                .sum::<f64>()
                / 3.0;
            assert!((b2_grad[c] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_step_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = MlpModel::init(2, 3, 2, &mut rng);
        let before = m.clone();
        let b = random_batch(&mut rng, 4, 2, 2);
        let g = m.backward(&b).unwrap();
        m.sgd_step(&g.full, 0.0).unwrap();
        assert_eq!(m, before);

        let bad = GradientVector::zeros(3, Partition::Full);
        assert!(m.sgd_step(&bad, 0.1).is_err());
        assert!(m.sgd_step(&g.head, 0.1).is_err());
    }

    #[test]
    fn sgd_scalar_arithmetic() {
        // Only b2[0] moves: 1.0 - 0.1 * 0.5.
        let mut m = MlpModel::from_params(1, 1, 1, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let g = GradientVector::new(vec![0.0, 0.0, 0.0, 0.5], Partition::Full).unwrap();
        m.sgd_step(&g, 0.1).unwrap();
        assert_eq!(m.params()[3], 0.95);
    }

    #[test]
    fn numerical_gradient_constant_parameter() {
        // Inputs are zero, so W1 cannot affect the loss.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = MlpModel::init(2, 3, 2, &mut rng);
        let b = Batch::new(2, vec![0.0; 4], vec![0, 1]).unwrap();
        let g = m.numerical_gradient(&b, 1e-5).unwrap();
        assert!(g.values()[..6].iter().all(|v| v.abs() < 1e-8));
        assert!(m.numerical_gradient(&b, 0.0).is_err());
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpModel::init(16, 4, 3, &mut rng);
        let off = m.head_offset();
        assert!(m.params()[..off].iter().all(|p| p.abs() <= 0.25));
        assert!(m.params()[off..].iter().all(|p| p.abs() <= 0.5));
    }

    fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        diff / scale.max(1e-12)
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let d = 2 + seed as usize % 4;
            let h = 3 + seed as usize % 5;
            let c = 2 + seed as usize % 3;
            let m = MlpModel::init(d, h, c, &mut rng);
            let b = random_batch(&mut rng, 1 + seed as usize, d, c);
            let analytic = m.backward(&b).unwrap();
            let numeric = m.numerical_gradient(&b, 1e-5).unwrap();
            let err = relative_error(analytic.full.values(), numeric.values());
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
            for (a, n) in analytic.full.values().iter().zip(numeric.values()) {
                assert!((a - n).abs() <= 1e-4 * a.abs().max(n.abs()) + 1e-8);
            }
            assert!((analytic.loss - m.loss(&b).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let m = MlpModel::init(3, 5, 3, &mut rng);
        let b = random_batch(&mut rng, 6, 3, 3);
        let analytic = m.backward(&b).unwrap();
        let err = |step: f64| {
            let n = m.numerical_gradient(&b, step).unwrap();
            relative_error(analytic.full.values(), n.values())
        };
        let ratio = err(2e-2) / err(1e-2);
        assert!((3.0..5.0).contains(&ratio), "halving the step divided the error by {ratio}");
    }

    #[test]
    fn head_reward_differs_from_full_reward() {
        use crate::rewards::gradient_alignment;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = MlpModel::init(4, 6, 3, &mut rng);
        let a = m.backward(&random_batch(&mut rng, 8, 4, 3)).unwrap();
        let t = m.backward(&random_batch(&mut rng, 8, 4, 3)).unwrap();
        let head = gradient_alignment(&a.head, &t.head).unwrap().value;
        let full = gradient_alignment(&a.full, &t.full).unwrap().value;
        assert!((head - full).abs() > 1e-6);
    }

    #[test]
    fn sgd_descends_on_separable_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let label = i % 2;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            x.push(sign * (1.0 + rng.random::<f64>()));
            x.push(rng.random::<f64>() - 0.5);
            y.push(label);
        }
        let b = Batch::new(2, x, y).unwrap();
        let mut m = MlpModel::init(2, 4, 2, &mut rng);
        let initial = m.loss(&b).unwrap();
        for _ in 0..100 {
            let g = m.backward(&b).unwrap();
            m.sgd_step(&g.full, 0.05).unwrap();
        }
        assert!(m.loss(&b).unwrap() < initial);
        assert_eq!(m.evaluate(&b).unwrap().1, 1.0);
    }
}
