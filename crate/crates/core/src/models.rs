//! Softmax classifiers with analytic cross-entropy gradients.
//!
//! Both models keep every weight and bias in one flat [`ParameterVector`].
//! Weight matrices are stored input-major (`W[j * outputs + o]`) so that a
//! zero input feature, very common for image data, can be skipped entirely
//! in both the forward and the backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_batch, Batch, Dataset};
use crate::{Error, ParameterVector, Result, RngStream};

/// Probabilities are clamped to this floor before taking the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    LogisticRegression,
    /// One hidden ReLU layer of the given width.
    Mlp { hidden: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub inputs: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn logistic(inputs: usize, classes: usize) -> Self {
        Self { kind: ModelKind::LogisticRegression, inputs, classes }
    }

    pub fn mlp(inputs: usize, hidden: usize, classes: usize) -> Self {
        Self { kind: ModelKind::Mlp { hidden }, inputs, classes }
    }

    /// `(q + 1) L` for logistic regression, `(q + 1) h + (h + 1) L` for the MLP.
    pub fn param_count(&self) -> usize {
        let (q, l) = (self.inputs, self.classes);
        match self.kind {
            ModelKind::LogisticRegression => (q + 1) * l,
            ModelKind::Mlp { hidden: h } => (q + 1) * h + (h + 1) * l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.classes < 2 {
            return Err(Error::config(format!("invalid model shape: q={}, L={}", self.inputs, self.classes)));
        }
        if let ModelKind::Mlp { hidden: 0 } = self.kind {
            return Err(Error::config("MLP hidden width must be positive"));
        }
        Ok(())
    }

    /// Initial global model: zeros for logistic regression, Glorot-uniform
    /// weights with zero biases for the MLP.
    pub fn init(&self, rng: &mut RngStream) -> ParameterVector {
        let mut params = vec![0.0; self.param_count()];
        if let ModelKind::Mlp { hidden: h } = self.kind {
            let (q, l) = (self.inputs, self.classes);
            let r1 = (6.0 / (q + h) as f64).sqrt();
            for w in &mut params[..q * h] {
                *w = rng.random_range(-r1..r1);
            }
            let off2 = q * h + h;
            let r2 = (6.0 / (h + l) as f64).sqrt();
            for w in &mut params[off2..off2 + h * l] {
                *w = rng.random_range(-r2..r2);
            }
        }
        ParameterVector::from_raw(params)
    }

    fn check_params(&self, params: &ParameterVector) -> Result<()> {
        params.check_dim(self.param_count())
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.inputs {
            return Err(Error::DimensionMismatch { expected: self.inputs, got: row.len() });
        }
        Ok(())
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.num_features() != self.inputs {
            return Err(Error::DimensionMismatch { expected: self.inputs, got: data.num_features() });
        }
        if data.classes() != self.classes {
            return Err(Error::config(format!(
                "dataset has {} classes, model expects {}",
                data.classes(),
                self.classes
            )));
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        match self.kind {
            ModelKind::LogisticRegression => 0,
            ModelKind::Mlp { hidden } => hidden,
        }
    }

    /// Writes the logits for `row` into `logits`; for the MLP the
    /// pre-activations of the hidden layer are left in `hidden`.
    fn forward(&self, params: &[f64], row: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let (q, l) = (self.inputs, self.classes);
        match self.kind {
            ModelKind::LogisticRegression => {
                logits.copy_from_slice(&params[q * l..]);
                for (j, &x) in row.iter().enumerate() {
                    if x != 0.0 {
                        axpy(x, &params[j * l..(j + 1) * l], logits);
                    }
                }
            }
            ModelKind::Mlp { hidden: h } => {
                let off2 = q * h + h;
                hidden.copy_from_slice(&params[q * h..off2]);
                for (j, &x) in row.iter().enumerate() {
                    if x != 0.0 {
                        axpy(x, &params[j * h..(j + 1) * h], hidden);
                    }
                }
                logits.copy_from_slice(&params[off2 + h * l..]);
                for (k, &z) in hidden.iter().enumerate() {
                    if z > 0.0 {
                        axpy(z, &params[off2 + k * l..off2 + (k + 1) * l], logits);
                    }
                }
            }
        }
    }

    /// Accumulates `scale * d(CE)/d(params)` for one instance, given the
    /// output error `delta = p - onehot(y)`.
    fn backward(&self, params: &[f64], row: &[f64], hidden: &[f64], delta: &[f64], scale: f64, grad: &mut [f64]) {
        let (q, l) = (self.inputs, self.classes);
        match self.kind {
            ModelKind::LogisticRegression => {
                for (j, &x) in row.iter().enumerate() {
                    if x != 0.0 {
                        axpy(scale * x, delta, &mut grad[j * l..(j + 1) * l]);
                    }
                }
                axpy(scale, delta, &mut grad[q * l..]);
            }
            ModelKind::Mlp { hidden: h } => {
                let off2 = q * h + h;
                let off3 = off2 + h * l;
                let mut dz = vec![0.0; h];
                for k in 0..h {
                    let z = hidden[k];
                    if z > 0.0 {
                        let w2 = &params[off2 + k * l..off2 + (k + 1) * l];
                        dz[k] = w2.iter().zip(delta).map(|(w, d)| w * d).sum::<f64>() * scale;
                        axpy(scale * z, delta, &mut grad[off2 + k * l..off2 + (k + 1) * l]);
                    }
                }
                axpy(scale, delta, &mut grad[off3..]);
                for (j, &x) in row.iter().enumerate() {
                    if x != 0.0 {
                        axpy(x, &dz, &mut grad[j * h..(j + 1) * h]);
                    }
                }
                axpy(1.0, &dz, &mut grad[q * h..off2]);
            }
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// In-place numerically stable softmax.
fn softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_proba(spec: &ModelSpec, params: &ParameterVector, row: &[f64]) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_row(row)?;
    let mut hidden = vec![0.0; spec.hidden()];
    let mut out = vec![0.0; spec.classes];
    spec.forward(params, row, &mut hidden, &mut out);
    softmax(&mut out);
    Ok(out)
}

/// Mean clamped cross-entropy and argmax error rate of one model on a
/// dataset, computed in a single pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub error_rate: f64,
}

pub fn evaluate(spec: &ModelSpec, params: &ParameterVector, data: &Dataset) -> Result<Evaluation> {
    evaluate_rows(spec, params, data, None)
}

fn evaluate_rows(spec: &ModelSpec, params: &ParameterVector, data: &Dataset, rows: Option<&[usize]>) -> Result<Evaluation> {
    spec.check_params(params)?;
    spec.check_dataset(data)?;
    let n = rows.map_or(data.len(), <[usize]>::len);
    if n == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    let mut hidden = vec![0.0; spec.hidden()];
    let mut out = vec![0.0; spec.classes];
    let mut total_loss = 0.0;
    let mut wrong = 0usize;
    for k in 0..n {
        let i = rows.map_or(k, |r| r[k]);
        spec.forward(params, data.row(i), &mut hidden, &mut out);
        let y = data.label(i);
        if argmax(&out) != y {
            wrong += 1;
        }
        softmax(&mut out);
        total_loss -= out[y].max(PROBABILITY_FLOOR).ln();
    }
    Ok(Evaluation { loss: total_loss / n as f64, error_rate: wrong as f64 / n as f64 })
}

/// Fraction of rows whose argmax class differs from the label.
pub fn error_rate(spec: &ModelSpec, params: &ParameterVector, data: &Dataset) -> Result<f64> {
    Ok(evaluate(spec, params, data)?.error_rate)
}

/// Anything a worker can run local SGD on.
pub trait LocalObjective {
    /// Dataset rows owned by the device.
    fn shard(&self) -> &[usize];

    /// Gradient of the mean batch loss at `params`.
    fn batch_gradient(&self, params: &ParameterVector, batch: &Batch) -> Result<ParameterVector>;
}

/// Cross-entropy objective of one model over a device shard.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub spec: ModelSpec,
    pub data: &'a Dataset,
    pub shard: &'a [usize],
}

impl<'a> Objective<'a> {
    pub fn new(spec: ModelSpec, data: &'a Dataset, shard: &'a [usize]) -> Result<Self> {
        spec.check_dataset(data)?;
        if let Some(&bad) = shard.iter().find(|&&i| i >= data.len()) {
            return Err(Error::config(format!("shard index {bad} out of range")));
        }
        Ok(Self { spec, data, shard })
    }
}

impl LocalObjective for Objective<'_> {
    fn shard(&self) -> &[usize] {
        self.shard
    }

    fn batch_gradient(&self, params: &ParameterVector, batch: &Batch) -> Result<ParameterVector> {
        gradient(self, params, batch)
    }
}

/// Mean clamped cross-entropy over the objective's shard.
pub fn loss(objective: &Objective<'_>, params: &ParameterVector) -> Result<f64> {
    if objective.shard.is_empty() {
        return Err(Error::Empty("device shard"));
    }
    Ok(evaluate_rows(&objective.spec, params, objective.data, Some(objective.shard))?.loss)
}

/// Analytic gradient of the mean cross-entropy over `batch`.
pub fn gradient(objective: &Objective<'_>, params: &ParameterVector, batch: &Batch) -> Result<ParameterVector> {
    let spec = &objective.spec;
    spec.check_params(params)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut grad = vec![0.0; spec.param_count()];
    let mut hidden = vec![0.0; spec.hidden()];
    let mut out = vec![0.0; spec.classes];
    let scale = 1.0 / batch.len() as f64;
    for &i in &batch.indices {
        let row = objective.data.row(i);
        spec.forward(params, row, &mut hidden, &mut out);
        softmax(&mut out);
        out[objective.data.label(i)] -= 1.0;
        spec.backward(params, row, &hidden, &out, scale, &mut grad);
    }
    Ok(ParameterVector::from_raw(grad))
}

/// `rounds` steps of SGD from `global`, each on a freshly sampled batch.
pub fn local_update<O: LocalObjective + ?Sized>(
    objective: &O,
    global: &ParameterVector,
    learning_rate: f64,
    rounds: usize,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<ParameterVector> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::config(format!("learning rate must be finite and non-negative, got {learning_rate}")));
    }
    if rounds == 0 {
        return Err(Error::config("local rounds must be at least 1"));
    }
    let mut w = global.clone();
    for _ in 0..rounds {
        let batch = sample_batch(objective.shard(), batch_size, rng)?;
        let g = objective.batch_gradient(&w, &batch)?;
        g.check_dim(w.dim())?;
        for (wi, gi) in w.as_mut_slice().iter_mut().zip(g.iter()) {
            *wi -= learning_rate * gi;
        }
    }
    if !w.is_finite() {
        return Err(Error::NonFinite(w.iter().position(|v| !v.is_finite()).unwrap_or(0)));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn tiny_dataset() -> Dataset {
        let features = vec![0.5, -1.0, 0.0, 2.0, 1.5, 0.25, -0.75, 0.0, 1.0, 1.0, 0.0, -0.5];
        Dataset::new(features, 2, vec![0, 2, 1, 0, 2, 1], 3).unwrap()
    }

    fn random_params(spec: &ModelSpec, rng: &mut RngStream) -> ParameterVector {
        ParameterVector::new((0..spec.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(ModelSpec::logistic(784, 10).param_count(), 7850);
        assert_eq!(ModelSpec::mlp(30, 8, 2).param_count(), 31 * 8 + 9 * 2);
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let spec = ModelSpec::logistic(3, 4);
        let p = predict_proba(&spec, &ParameterVector::zeros(spec.param_count()), &[1.0, 2.0, 3.0]).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let spec = ModelSpec::logistic(1, 2);
        let p = predict_proba(&spec, &ParameterVector::zeros(4), &[0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_shift_invariance() {
        // LR with q = 1 and a zero feature: logits equal the biases
        let spec = ModelSpec::logistic(1, 3);
        let base = ParameterVector::new(vec![0.0, 0.0, 0.0, 0.3, -1.2, 2.0]).unwrap();
        let shifted = ParameterVector::new(vec![0.0, 0.0, 0.0, 5.3, 3.8, 7.0]).unwrap();
        let a = predict_proba(&spec, &base, &[0.0]).unwrap();
        let b = predict_proba(&spec, &shifted, &[0.0]).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
            assert!(*x > 0.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = ModelSpec::logistic(2, 2);
        assert!(predict_proba(&spec, &ParameterVector::zeros(5), &[0.0, 0.0]).is_err());
        assert!(predict_proba(&spec, &ParameterVector::zeros(6), &[0.0]).is_err());
    }

    #[test]
    fn zero_params_loss_is_ln_l() {
        let data = tiny_dataset();
        let spec = ModelSpec::logistic(2, 3);
        let shard: Vec<usize> = (0..data.len()).collect();
        let obj = Objective::new(spec, &data, &shard).unwrap();
        let l = loss(&obj, &ParameterVector::zeros(spec.param_count())).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        let empty: Vec<usize> = vec![];
        assert!(loss(&Objective::new(spec, &data, &empty).unwrap(), &ParameterVector::zeros(9)).is_err());
    }

    #[test]
    fn confident_correct_predictions_have_zero_loss() {
        // q = 1 with zero features, huge bias on the only label present
        let data = Dataset::new(vec![0.0; 3], 1, vec![1, 1, 1], 2).unwrap();
        let spec = ModelSpec::logistic(1, 2);
        let params = ParameterVector::new(vec![0.0, 0.0, -400.0, 400.0]).unwrap();
        let shard = [0, 1, 2];
        let l = loss(&Objective::new(spec, &data, &shard).unwrap(), &params).unwrap();
        assert!(l.abs() < 1e-9);
        // the clamp keeps the opposite case finite
        let wrong = ParameterVector::new(vec![0.0, 0.0, 400.0, -400.0]).unwrap();
        let l = loss(&Objective::new(spec, &data, &shard).unwrap(), &wrong).unwrap();
        assert!((l - (-PROBABILITY_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn loss_matches_naive_summation() {
        let data = tiny_dataset();
        let mut rng = RngStream::new(3, "params");
        for spec in [ModelSpec::logistic(2, 3), ModelSpec::mlp(2, 4, 3)] {
            let params = random_params(&spec, &mut rng);
            let shard = [0, 2, 3, 5];
            let got = loss(&Objective::new(spec, &data, &shard).unwrap(), &params).unwrap();
            let mut naive = 0.0;
            for &i in &shard {
                let p = predict_proba(&spec, &params, data.row(i)).unwrap();
                naive += -p[data.label(i)].max(1e-12).ln();
            }
            naive /= shard.len() as f64;
            assert!((got - naive).abs() < 1e-12, "{got} vs {naive}");
        }
    }

    #[test]
    fn duplicated_instance_batch_equals_single() {
        let data = tiny_dataset();
        let spec = ModelSpec::mlp(2, 3, 3);
        let params = random_params(&spec, &mut RngStream::new(8, "params"));
        let shard: Vec<usize> = (0..data.len()).collect();
        let obj = Objective::new(spec, &data, &shard).unwrap();
        let single = gradient(&obj, &params, &Batch { indices: vec![4] }).unwrap();
        let triple = gradient(&obj, &params, &Batch { indices: vec![4, 4, 4] }).unwrap();
        for (a, b) in single.iter().zip(triple.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(gradient(&obj, &params, &Batch { indices: vec![] }).is_err());
    }

    struct ConstantGradient {
        shard: Vec<usize>,
        grad: ParameterVector,
    }

    impl LocalObjective for ConstantGradient {
        fn shard(&self) -> &[usize] {
            &self.shard
        }

        fn batch_gradient(&self, _: &ParameterVector, _: &Batch) -> Result<ParameterVector> {
            Ok(self.grad.clone())
        }
    }

    #[test]
    fn one_explicit_step() {
        let obj = ConstantGradient { shard: vec![0], grad: ParameterVector::new(vec![2.0]).unwrap() };
        let w = ParameterVector::zeros(1);
        let out = local_update(&obj, &w, 0.1, 1, 1, &mut RngStream::new(0, "sgd")).unwrap();
        assert!((out[0] + 0.2).abs() < 1e-15);
        let same = local_update(&obj, &w, 0.0, 3, 1, &mut RngStream::new(0, "sgd")).unwrap();
        assert_eq!(same, w);
        assert!(local_update(&obj, &w, 0.1, 0, 1, &mut RngStream::new(0, "sgd")).is_err());
    }

    #[test]
    fn two_rounds_equal_two_manual_steps() {
        let data = tiny_dataset();
        let spec = ModelSpec::logistic(2, 3);
        let shard: Vec<usize> = (0..data.len()).collect();
        let obj = Objective::new(spec, &data, &shard).unwrap();
        let w0 = random_params(&spec, &mut RngStream::new(1, "params"));
        let two = local_update(&obj, &w0, 0.3, 2, 2, &mut RngStream::new(5, "sgd")).unwrap();

        let mut rng = RngStream::new(5, "sgd");
        let mut w = w0.clone();
        for _ in 0..2 {
            let batch = sample_batch(&shard, 2, &mut rng).unwrap();
            let g = gradient(&obj, &w, &batch).unwrap();
            w = w.add_scaled(-0.3, &g).unwrap();
        }
        assert_eq!(two, w);
    }

    #[test]
    fn error_rate_tie_break_and_oracle() {
        let data = Dataset::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], 1, vec![0, 1, 1, 0, 1], 2).unwrap();
        let spec = ModelSpec::logistic(1, 2);
        // all logits tie -> class 0 predicted everywhere
        let e = error_rate(&spec, &ParameterVector::zeros(4), &data).unwrap();
        assert_eq!(e, 3.0 / 5.0);

        let mut rng = RngStream::new(2, "params");
        let tiny = tiny_dataset();
        let spec = ModelSpec::mlp(2, 5, 3);
        let params = random_params(&spec, &mut rng);
        let mut wrong = 0;
        for i in 0..tiny.len() {
            let p = predict_proba(&spec, &params, tiny.row(i)).unwrap();
            let mut best = 0;
            for l in 1..p.len() {
                if p[l] > p[best] {
                    best = l;
                }
            }
            wrong += usize::from(best != tiny.label(i));
        }
        assert_eq!(error_rate(&spec, &params, &tiny).unwrap(), wrong as f64 / tiny.len() as f64);
        let empty = tiny.subset(&[]);
        assert!(error_rate(&spec, &params, &empty).is_err());
    }

    #[test]
    fn full_batch_descent_decreases_convex_loss() {
        let blobs = synth_blobs(3, 20, 4, 0.6, &mut RngStream::new(4, "blobs")).unwrap();
        let data = blobs.dataset;
        let spec = ModelSpec::logistic(4, 3);
        let shard: Vec<usize> = (0..data.len()).collect();
        let obj = Objective::new(spec, &data, &shard).unwrap();
        let batch = Batch { indices: shard.clone() };
        let mut w = ParameterVector::zeros(spec.param_count());
        let mut prev = loss(&obj, &w).unwrap();
        for _ in 0..100 {
            let g = gradient(&obj, &w, &batch).unwrap();
            w = w.add_scaled(-0.1, &g).unwrap();
            let cur = loss(&obj, &w).unwrap();
            assert!(cur <= prev + 1e-15, "{cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn sgd_fits_separable_blobs() {
        let data = synth_blobs(2, 100, 2, 0.05, &mut RngStream::new(6, "blobs")).unwrap().dataset;
        let spec = ModelSpec::logistic(2, 2);
        let shard: Vec<usize> = (0..data.len()).collect();
        let obj = Objective::new(spec, &data, &shard).unwrap();
        let mut rng = RngStream::new(6, "sgd");
        let w = local_update(&obj, &ParameterVector::zeros(6), 0.5, 200, 16, &mut rng).unwrap();
        assert!(error_rate(&spec, &w, &data).unwrap() < 0.05);

        // stationarity after long full-batch training on the separable set
        let full = Batch { indices: shard.clone() };
        let g = gradient(&obj, &w, &full).unwrap();
        let mut w2 = w;
        for _ in 0..20000 {
            let g = gradient(&obj, &w2, &full).unwrap();
            w2 = w2.add_scaled(-2.0, &g).unwrap();
        }
        let g2 = gradient(&obj, &w2, &full).unwrap();
        assert!(g2.norm() < g.norm());
        assert!(g2.norm() < 1e-3, "gradient norm {}", g2.norm());
    }
}
