//! The two predictors: logistic regression and a 1-hidden-layer ReLU MLP with
//! a softmax head, plus the RMSProp training loop and analytic input
//! gradients.
//!
//! Both model kinds share one artifact type. For logistic regression `w1` is
//! the C×d logit weight matrix and the internal representation equals the
//! logits; for the MLP the representation is the pre-ReLU first-layer output.
//! All arithmetic is in f64 and every random draw is seeded, so training is
//! bitwise reproducible.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seeding;
use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "lr")]
    LogisticRegression,
    #[serde(rename = "mlp")]
    Mlp,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(ModelKind::LogisticRegression),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::InvalidParameter(format!(
                "model kind must be lr or mlp, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_val_accuracy: f64,
    /// 1-based epoch whose weights were kept; `None` when never trained.
    pub best_epoch: Option<usize>,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        TrainingMeta {
            epochs_run: 0,
            best_val_accuracy: 0.0,
            best_epoch: None,
        }
    }
}

/// Weights and metadata of a trained (or freshly initialized) predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub kind: ModelKind,
    /// MLP: h×d first-layer weights. LR: C×d logit weights.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// MLP only: C×h output weights.
    pub w2: Option<Array2<f64>>,
    pub b2: Option<Array1<f64>>,
    /// Row count of `w1` (the hidden width for MLP, C for LR).
    pub hidden_width: usize,
    pub seed: u64,
    pub training_meta: TrainingMeta,
}

/// One forward pass: pre-activation embedding, logits, probabilities, label.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Pre-ReLU first-layer output (equals `logits` for LR).
    pub hidden_pre: Array1<f64>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
    pub predicted: usize,
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut exps = logits.mapv(|z| (z - m).exp());
    let sum: f64 = exps.sum();
    exps.mapv_inplace(|e| e / sum);
    exps
}

fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ModelArtifact {
    /// Fresh weights, uniform in `(−1/√fan_in, +1/√fan_in)`, drawn from `seed`
    /// in a fixed order (w1 row-major, b1, w2 row-major, b2).
    pub fn init(kind: ModelKind, d: usize, classes: usize, hidden_width: usize, seed: u64) -> Self {
        let mut rng = seeding::rng_from(seed);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| -> Array2<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
        };
        match kind {
            ModelKind::LogisticRegression => {
                let w1 = draw(classes, d, d);
                let b1 = draw(classes, 1, d).column(0).to_owned();
                ModelArtifact {
                    kind,
                    w1,
                    b1,
                    w2: None,
                    b2: None,
                    hidden_width: classes,
                    seed,
                    training_meta: TrainingMeta::default(),
                }
            }
            ModelKind::Mlp => {
                let w1 = draw(hidden_width, d, d);
                let b1 = draw(hidden_width, 1, d).column(0).to_owned();
                let w2 = draw(classes, hidden_width, hidden_width);
                let b2 = draw(classes, 1, hidden_width).column(0).to_owned();
                ModelArtifact {
                    kind,
                    w1,
                    b1,
                    w2: Some(w2),
                    b2: Some(b2),
                    hidden_width,
                    seed,
                    training_meta: TrainingMeta::default(),
                }
            }
        }
    }

    pub fn d(&self) -> usize {
        self.w1.ncols()
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            ModelKind::LogisticRegression => self.w1.nrows(),
            ModelKind::Mlp => self.w2.as_ref().map_or(0, |w| w.nrows()),
        }
    }

    fn check_input(&self, x: ArrayView1<'_, f64>) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.classes() {
            return Err(Error::LabelOutOfRange {
                label: target,
                classes: self.classes(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let hidden_pre = self.w1.dot(&x) + &self.b1;
        let logits = match self.kind {
            ModelKind::LogisticRegression => hidden_pre.clone(),
            ModelKind::Mlp => {
                let hidden = hidden_pre.mapv(|v| v.max(0.0));
                self.w2.as_ref().expect("mlp has w2").dot(&hidden)
                    + self.b2.as_ref().expect("mlp has b2")
            }
        };
        let probs = softmax(&logits);
        let predicted = argmax(&probs);
        Ok(ForwardTrace {
            hidden_pre,
            logits,
            probs,
            predicted,
        })
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        Ok(self.forward(x)?.predicted)
    }

    /// Softmax probability of `class` at `x`.
    pub fn probability(&self, x: ArrayView1<'_, f64>, class: usize) -> Result<f64> {
        self.check_target(class)?;
        Ok(self.forward(x)?.probs[class])
    }

    /// Logit of `target` at `x`, the scoring function the metrics are
    /// defined on.
    pub fn logit(&self, x: ArrayView1<'_, f64>, target: usize) -> Result<f64> {
        self.check_target(target)?;
        Ok(self.forward(x)?.logits[target])
    }

    /// Internal representation: pre-ReLU first-layer output for the MLP,
    /// pre-softmax logits for LR.
    pub fn representation(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        Ok(self.w1.dot(&x) + &self.b1)
    }

    /// Exact analytic gradient of `logits[target]` with respect to `x`.
    /// ReLU'(0) is taken as 0.
    pub fn input_gradient(&self, x: ArrayView1<'_, f64>, target: usize) -> Result<Array1<f64>> {
        self.check_input(x)?;
        self.check_target(target)?;
        match self.kind {
            ModelKind::LogisticRegression => Ok(self.w1.row(target).to_owned()),
            ModelKind::Mlp => {
                let hidden_pre = self.w1.dot(&x) + &self.b1;
                let w2_row = self.w2.as_ref().expect("mlp has w2").row(target);
                let mut gated = w2_row.to_owned();
                for (g, &pre) in gated.iter_mut().zip(hidden_pre.iter()) {
                    if pre <= 0.0 {
                        *g = 0.0;
                    }
                }
                Ok(self.w1.t().dot(&gated))
            }
        }
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        if ds.n() == 0 {
            return Err(Error::EmptySplit("accuracy"));
        }
        let mut hits = 0usize;
        for i in 0..ds.n() {
            if self.predict(ds.x.row(i))? == ds.y[i] {
                hits += 1;
            }
        }
        Ok(hits as f64 / ds.n() as f64)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = ModelFile::from(self);
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<ModelArtifact> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        file.try_into()
    }
}

/// Training hyperparameters (RMSProp).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            batch_size: 32,
            epochs: 100,
            rmsprop_decay: 0.99,
            rmsprop_epsilon: 1e-8,
        }
    }
}

struct Gradients {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Option<Array2<f64>>,
    b2: Option<Array1<f64>>,
}

struct RmsProp {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Option<Array2<f64>>,
    b2: Option<Array1<f64>>,
    decay: f64,
    epsilon: f64,
    lr: f64,
}

impl RmsProp {
    fn new(model: &ModelArtifact, cfg: &TrainConfig) -> Self {
        RmsProp {
            w1: Array2::zeros(model.w1.raw_dim()),
            b1: Array1::zeros(model.b1.raw_dim()),
            w2: model.w2.as_ref().map(|w| Array2::zeros(w.raw_dim())),
            b2: model.b2.as_ref().map(|b| Array1::zeros(b.raw_dim())),
            decay: cfg.rmsprop_decay,
            epsilon: cfg.rmsprop_epsilon,
            lr: cfg.learning_rate,
        }
    }

    fn step_inplace(
        cache: &mut f64,
        param: &mut f64,
        grad: f64,
        decay: f64,
        eps: f64,
        lr: f64,
    ) {
        *cache = decay * *cache + (1.0 - decay) * grad * grad;
        *param -= lr * grad / (cache.sqrt() + eps);
    }

    fn apply(&mut self, model: &mut ModelArtifact, grads: &Gradients) {
        let (d, e, lr) = (self.decay, self.epsilon, self.lr);
        for ((c, p), &g) in self.w1.iter_mut().zip(model.w1.iter_mut()).zip(grads.w1.iter()) {
            Self::step_inplace(c, p, g, d, e, lr);
        }
        for ((c, p), &g) in self.b1.iter_mut().zip(model.b1.iter_mut()).zip(grads.b1.iter()) {
            Self::step_inplace(c, p, g, d, e, lr);
        }
        if let (Some(cw2), Some(w2), Some(gw2)) =
            (self.w2.as_mut(), model.w2.as_mut(), grads.w2.as_ref())
        {
            for ((c, p), &g) in cw2.iter_mut().zip(w2.iter_mut()).zip(gw2.iter()) {
                Self::step_inplace(c, p, g, d, e, lr);
            }
        }
        if let (Some(cb2), Some(b2), Some(gb2)) =
            (self.b2.as_mut(), model.b2.as_mut(), grads.b2.as_ref())
        {
            for ((c, p), &g) in cb2.iter_mut().zip(b2.iter_mut()).zip(gb2.iter()) {
                Self::step_inplace(c, p, g, d, e, lr);
            }
        }
    }
}

/// Mean cross-entropy loss and parameter gradients over one batch.
fn batch_loss_and_grads(model: &ModelArtifact, ds: &Dataset, batch: &[usize]) -> (f64, Gradients) {
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = Gradients {
        w1: Array2::zeros(model.w1.raw_dim()),
        b1: Array1::zeros(model.b1.raw_dim()),
        w2: model.w2.as_ref().map(|w| Array2::zeros(w.raw_dim())),
        b2: model.b2.as_ref().map(|b| Array1::zeros(b.raw_dim())),
    };
    for &i in batch {
        let x = ds.x.row(i);
        let label = ds.y[i];
        let hidden_pre = model.w1.dot(&x) + &model.b1;
        let (logits, hidden) = match model.kind {
            ModelKind::LogisticRegression => (hidden_pre.clone(), None),
            ModelKind::Mlp => {
                let hidden = hidden_pre.mapv(|v| v.max(0.0));
                let logits = model.w2.as_ref().expect("mlp has w2").dot(&hidden)
                    + model.b2.as_ref().expect("mlp has b2");
                (logits, Some(hidden))
            }
        };
        // -ln softmax(logits)[label], computed via log-sum-exp.
        let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        loss += (lse - logits[label]) * scale;

        let mut dlogits = softmax(&logits);
        dlogits[label] -= 1.0;
        dlogits *= scale;
        match model.kind {
            ModelKind::LogisticRegression => {
                for (c, &dz) in dlogits.iter().enumerate() {
                    for (j, &xj) in x.iter().enumerate() {
                        grads.w1[[c, j]] += dz * xj;
                    }
                    grads.b1[c] += dz;
                }
            }
            ModelKind::Mlp => {
                let hidden = hidden.expect("mlp stored hidden");
                let w2 = model.w2.as_ref().expect("mlp has w2");
                let gw2 = grads.w2.as_mut().expect("mlp grad w2");
                let gb2 = grads.b2.as_mut().expect("mlp grad b2");
                for (c, &dz) in dlogits.iter().enumerate() {
                    for (j, &hj) in hidden.iter().enumerate() {
                        gw2[[c, j]] += dz * hj;
                    }
                    gb2[c] += dz;
                }
                // Backprop through ReLU: dh_j = (Σ_c dz_c · w2[c,j]) · 1[pre_j > 0]
                let mut dhidden = w2.t().dot(&dlogits);
                for (dh, &pre) in dhidden.iter_mut().zip(hidden_pre.iter()) {
                    if pre <= 0.0 {
                        *dh = 0.0;
                    }
                }
                for (j, &dh) in dhidden.iter().enumerate() {
                    for (k, &xk) in x.iter().enumerate() {
                        grads.w1[[j, k]] += dh * xk;
                    }
                    grads.b1[j] += dh;
                }
            }
        }
    }
    (loss, grads)
}

/// Trains with RMSProp and keeps the weights from the epoch with the highest
/// validation accuracy (earliest epoch on ties). `epochs = 0` returns the
/// initialization unchanged.
pub fn train(
    init: ModelArtifact,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<ModelArtifact> {
    if train_ds.n() == 0 {
        return Err(Error::EmptySplit("train"));
    }
    if val_ds.n() == 0 {
        return Err(Error::EmptySplit("val"));
    }
    let classes = init.classes();
    for &label in train_ds.y.iter().chain(val_ds.y.iter()) {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }

    let mut model = init;
    let mut optimizer = RmsProp::new(&model, cfg);
    let mut best: Option<(f64, usize, ModelArtifact)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_ds.n()).collect();
        order.shuffle(&mut seeding::rng_from(seeding::derive_seed(
            model.seed,
            "shuffle",
            epoch as u64,
        )));
        for (batch_idx, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let (loss, grads) = batch_loss_and_grads(&model, train_ds, batch);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            optimizer.apply(&mut model, &grads);
        }
        let val_acc = model.accuracy(val_ds)?;
        let improved = best.as_ref().map_or(true, |(acc, _, _)| val_acc > *acc);
        if improved {
            best = Some((val_acc, epoch, model.clone()));
        }
    }

    match best {
        Some((acc, epoch, mut kept)) => {
            kept.training_meta = TrainingMeta {
                epochs_run: cfg.epochs,
                best_val_accuracy: acc,
                best_epoch: Some(epoch),
            };
            Ok(kept)
        }
        None => Ok(model), // epochs == 0
    }
}

/// Central finite differences of a scalar function, the gradient test oracle.
pub fn finite_diff_of<F: Fn(ArrayView1<'_, f64>) -> f64>(
    f: F,
    x: ArrayView1<'_, f64>,
    step: f64,
) -> Array1<f64> {
    let mut grad = Array1::zeros(x.len());
    let mut probe = x.to_owned();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(probe.view());
        probe[i] = orig - step;
        let minus = f(probe.view());
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Central finite differences of `logits[target]` per coordinate.
pub fn finite_diff_gradient(
    model: &ModelArtifact,
    x: ArrayView1<'_, f64>,
    target: usize,
    step: f64,
) -> Result<Array1<f64>> {
    if step <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "finite difference step must be positive, got {step}"
        )));
    }
    model.check_input(x)?;
    model.check_target(target)?;
    Ok(finite_diff_of(
        |z| model.forward(z).expect("shape fixed").logits[target],
        x,
        step,
    ))
}

/// Serialized form: shapes plus row-major weight arrays.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    kind: ModelKind,
    d: usize,
    classes: usize,
    hidden_width: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w2: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b2: Option<Vec<f64>>,
    seed: u64,
    training_meta: TrainingMeta,
}

impl From<&ModelArtifact> for ModelFile {
    fn from(m: &ModelArtifact) -> Self {
        ModelFile {
            kind: m.kind,
            d: m.d(),
            classes: m.classes(),
            hidden_width: m.hidden_width,
            w1: m.w1.iter().copied().collect(),
            b1: m.b1.to_vec(),
            w2: m.w2.as_ref().map(|w| w.iter().copied().collect()),
            b2: m.b2.as_ref().map(|b| b.to_vec()),
            seed: m.seed,
            training_meta: m.training_meta.clone(),
        }
    }
}

impl TryFrom<ModelFile> for ModelArtifact {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<ModelArtifact> {
        let rows1 = match f.kind {
            ModelKind::LogisticRegression => f.classes,
            ModelKind::Mlp => f.hidden_width,
        };
        if rows1 != f.hidden_width {
            return Err(Error::BadModelShapes(format!(
                "hidden_width {} does not match first-layer rows {}",
                f.hidden_width, rows1
            )));
        }
        if f.w1.len() != rows1 * f.d || f.b1.len() != rows1 {
            return Err(Error::BadModelShapes(format!(
                "first layer expects {}x{} weights and {} biases, got {} and {}",
                rows1,
                f.d,
                rows1,
                f.w1.len(),
                f.b1.len()
            )));
        }
        let w1 = Array2::from_shape_vec((rows1, f.d), f.w1)
            .map_err(|e| Error::BadModelShapes(e.to_string()))?;
        let b1 = Array1::from_vec(f.b1);
        let (w2, b2) = match f.kind {
            ModelKind::LogisticRegression => {
                if f.w2.is_some() || f.b2.is_some() {
                    return Err(Error::BadModelShapes(
                        "logistic regression must not carry a second layer".into(),
                    ));
                }
                (None, None)
            }
            ModelKind::Mlp => {
                let w2_raw = f
                    .w2
                    .ok_or_else(|| Error::BadModelShapes("mlp is missing w2".into()))?;
                let b2_raw = f
                    .b2
                    .ok_or_else(|| Error::BadModelShapes("mlp is missing b2".into()))?;
                if w2_raw.len() != f.classes * f.hidden_width || b2_raw.len() != f.classes {
                    return Err(Error::BadModelShapes(format!(
                        "second layer expects {}x{} weights and {} biases, got {} and {}",
                        f.classes,
                        f.hidden_width,
                        f.classes,
                        w2_raw.len(),
                        b2_raw.len()
                    )));
                }
                let w2 = Array2::from_shape_vec((f.classes, f.hidden_width), w2_raw)
                    .map_err(|e| Error::BadModelShapes(e.to_string()))?;
                (Some(w2), Some(Array1::from_vec(b2_raw)))
            }
        };
        let artifact = ModelArtifact {
            kind: f.kind,
            w1,
            b1,
            w2,
            b2,
            hidden_width: f.hidden_width,
            seed: f.seed,
            training_meta: f.training_meta,
        };
        let finite = artifact.w1.iter().all(|v| v.is_finite())
            && artifact.b1.iter().all(|v| v.is_finite())
            && artifact.w2.as_ref().map_or(true, |w| w.iter().all(|v| v.is_finite()))
            && artifact.b2.as_ref().map_or(true, |b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::BadModelShapes("non-finite weight entries".into()));
        }
        Ok(artifact)
    }
}

/// Helpers for building fixed-weight models in tests and fixtures.
pub mod fixtures {
    use super::*;

    /// LR with explicit weights; rows of `w` are per-class logit weights.
    pub fn lr_with_weights(w: Array2<f64>, b: Array1<f64>) -> ModelArtifact {
        let hidden_width = w.nrows();
        ModelArtifact {
            kind: ModelKind::LogisticRegression,
            w1: w,
            b1: b,
            w2: None,
            b2: None,
            hidden_width,
            seed: 0,
            training_meta: TrainingMeta::default(),
        }
    }

    /// MLP with explicit weights.
    pub fn mlp_with_weights(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    ) -> ModelArtifact {
        let hidden_width = w1.nrows();
        ModelArtifact {
            kind: ModelKind::Mlp,
            w1,
            b1,
            w2: Some(w2),
            b2: Some(b2),
            hidden_width,
            seed: 0,
            training_meta: TrainingMeta::default(),
        }
    }

    /// MLP whose output is constant (zero second layer plus fixed biases).
    pub fn constant_output_mlp(d: usize, hidden: usize, logits: Array1<f64>) -> ModelArtifact {
        let classes = logits.len();
        mlp_with_weights(
            Array2::zeros((hidden, d)),
            Array1::zeros(hidden),
            Array2::zeros((classes, hidden)),
            logits,
        )
    }

    /// MLP whose first layer is the identity (representation equals input).
    pub fn identity_first_layer_mlp(d: usize, w2: Array2<f64>, b2: Array1<f64>) -> ModelArtifact {
        mlp_with_weights(Array2::eye(d), Array1::zeros(d), w2, b2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, split, Standardizer};
    use ndarray::array;

    #[test]
    fn lr_forward_matches_hand_sigmoid() {
        // Margin w·x = 1 against a zero second row: p₀ = σ(1).
        let model = fixtures::lr_with_weights(array![[1.0, -1.0], [0.0, 0.0]], array![0.0, 0.0]);
        let trace = model.forward(array![2.0, 1.0].view()).unwrap();
        assert_eq!(trace.logits[0] - trace.logits[1], 1.0);
        assert!((trace.probs[0] - 0.7310585786300049).abs() < 1e-12);
        assert_eq!(trace.predicted, 0);
    }

    #[test]
    fn zero_weight_mlp_is_uniform() {
        let model = fixtures::constant_output_mlp(3, 4, array![0.0, 0.0]);
        let trace = model.forward(array![1.0, -2.0, 0.5].view()).unwrap();
        assert!((trace.probs[0] - 0.5).abs() < 1e-15);
        assert!((trace.probs[1] - 0.5).abs() < 1e-15);
        assert_eq!(trace.predicted, 0, "ties break to the lowest index");
    }

    #[test]
    fn prediction_invariant_under_logit_shift() {
        let base = fixtures::lr_with_weights(array![[0.3, -0.2], [0.1, 0.4]], array![0.1, -0.2]);
        let shifted = fixtures::lr_with_weights(
            array![[0.3, -0.2], [0.1, 0.4]],
            array![0.1 + 5.0, -0.2 + 5.0],
        );
        for x in [array![1.0, 2.0], array![-0.3, 0.8], array![4.0, -4.0]] {
            assert_eq!(
                base.predict(x.view()).unwrap(),
                shifted.predict(x.view()).unwrap()
            );
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = seeding::rng_from(99);
        for _ in 0..200 {
            let model = ModelArtifact::init(ModelKind::Mlp, 4, 3, 8, rng.gen());
            let x = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0..3.0));
            let trace = model.forward(x.view()).unwrap();
            assert!((trace.probs.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lr_gradient_is_weight_row() {
        let model = fixtures::lr_with_weights(array![[3.0, -2.0], [0.5, 0.5]], array![0.0, 1.0]);
        let g = model.input_gradient(array![10.0, -7.0].view(), 0).unwrap();
        assert_eq!(g, array![3.0, -2.0]);
        let g1 = model.input_gradient(array![1.0, 1.0].view(), 1).unwrap();
        assert_eq!(g1, array![0.5, 0.5]);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = seeding::rng_from(2024);
        let mut checked = 0;
        while checked < 30 {
            let model = ModelArtifact::init(ModelKind::Mlp, 5, 2, 12, rng.gen());
            let x = Array1::from_shape_fn(5, |_| rng.gen_range(-2.0..2.0));
            let pre = model.representation(x.view()).unwrap();
            if pre.iter().any(|v| v.abs() < 1e-6) {
                continue; // kink guard
            }
            let target = rng.gen_range(0..2);
            let analytic = model.input_gradient(x.view(), target).unwrap();
            let numeric = finite_diff_gradient(&model, x.view(), target, 1e-5).unwrap();
            for (a, f) in analytic.iter().zip(numeric.iter()) {
                let rel = (a - f).abs() / f.abs().max(1e-8);
                assert!(rel < 1e-4, "analytic {a} vs numeric {f}");
            }
            checked += 1;
        }
    }

    #[test]
    fn dead_relu_region_has_zero_gradient() {
        // b1 = -10 with small weights keeps every unit inactive near the origin.
        let model = fixtures::mlp_with_weights(
            array![[0.1, 0.1], [0.2, -0.1]],
            array![-10.0, -10.0],
            array![[1.0, 1.0], [0.5, -0.5]],
            array![0.0, 0.0],
        );
        let g = model.input_gradient(array![0.5, -0.5].view(), 0).unwrap();
        assert_eq!(g, array![0.0, 0.0]);
    }

    #[test]
    fn finite_diff_on_quadratic_scorer() {
        let g = finite_diff_of(|x| x[0] * x[0], array![1.0].view(), 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_error_shrinks_quadratically() {
        // Smooth surrogate (softplus-like) so the convergence order is clean.
        let f = |x: ArrayView1<'_, f64>| (1.0 + (x[0] + 0.3 * x[1]).exp()).ln();
        let x = array![0.4, -0.2];
        let exact = {
            let s = (x[0] + 0.3 * x[1]).exp();
            let base = s / (1.0 + s);
            array![base, 0.3 * base]
        };
        let err = |step: f64| {
            let g = finite_diff_of(f, x.view(), step);
            (g[0] - exact[0]).abs().max((g[1] - exact[1]).abs())
        };
        let e1 = err(1e-3);
        let e2 = err(5e-4);
        let ratio = e1 / e2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "halving the step should cut the error ~4x, got {ratio}"
        );
    }

    #[test]
    fn representation_of_lr_equals_logits() {
        let model = fixtures::lr_with_weights(array![[1.0, 2.0], [-1.0, 0.5]], array![0.3, -0.3]);
        let x = array![0.7, -1.1];
        let trace = model.forward(x.view()).unwrap();
        assert_eq!(model.representation(x.view()).unwrap(), trace.logits);
    }

    #[test]
    fn identity_first_layer_returns_input() {
        let model =
            fixtures::identity_first_layer_mlp(2, array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0]);
        let x = array![0.25, -4.0];
        assert_eq!(model.representation(x.view()).unwrap(), x);
    }

    fn standardized_blob_splits(seed: u64) -> (Dataset, Dataset, Dataset) {
        let ds = make_blobs(500, 4.0, 0.6, seed).unwrap();
        let (tr, va, te) = split(&ds, (0.8, 0.1, 0.1), seed).unwrap();
        let st = Standardizer::fit(&tr).unwrap();
        (
            st.transform(&tr).unwrap(),
            st.transform(&va).unwrap(),
            st.transform(&te).unwrap(),
        )
    }

    #[test]
    fn training_separable_blobs_reaches_perfect_validation() {
        let (tr, va, _) = standardized_blob_splits(5);
        let init = ModelArtifact::init(ModelKind::LogisticRegression, 2, 2, 0, 5);
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let model = train(init, &tr, &va, &cfg).unwrap();
        assert_eq!(model.training_meta.best_val_accuracy, 1.0);
        assert!(model.training_meta.best_epoch.is_some());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (tr, va, _) = standardized_blob_splits(6);
        let init = ModelArtifact::init(ModelKind::Mlp, 2, 2, 8, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(init.clone(), &tr, &va, &cfg).unwrap();
        assert_eq!(out.w1, init.w1);
        assert_eq!(out.training_meta.best_epoch, None);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (tr, va, _) = standardized_blob_splits(7);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(ModelArtifact::init(ModelKind::Mlp, 2, 2, 16, 3), &tr, &va, &cfg).unwrap();
        let b = train(ModelArtifact::init(ModelKind::Mlp, 2, 2, 16, 3), &tr, &va, &cfg).unwrap();
        assert_eq!(a.w1, b.w1);
        assert_eq!(a.b1, b.b1);
        assert_eq!(a.w2, b.w2);
        assert_eq!(a.b2, b.b2);
        assert_eq!(a.training_meta, b.training_meta);
    }

    #[test]
    fn model_json_round_trip_validates_shapes() {
        let dir = std::env::temp_dir().join(format!("relstab-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        let model = ModelArtifact::init(ModelKind::Mlp, 3, 2, 5, 42);
        model.save_json(&path).unwrap();
        let back = ModelArtifact::load_json(&path).unwrap();
        assert_eq!(model, back);

        // Corrupt a shape and expect a validation failure.
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        v["hidden_width"] = serde_json::json!(6);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(
            ModelArtifact::load_json(&path),
            Err(Error::BadModelShapes(_))
        ));
    }
}
