//! Linear softmax head over per-frame features, its training loop, and the
//! two clip-level decision rules.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureSequence;
use crate::fsutil::{write_atomic, Reader};

pub const MODEL_MAGIC: &[u8; 4] = b"SMH1";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("feature dimension {got} does not match head dimension {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("invalid head: {0}")]
    InvalidHead(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("class {0} has no training samples but balanced weights were requested")]
    MissingClass(usize),
    #[error("training sample has label {label} but the head has {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize },
    #[error("empty sequence")]
    Empty,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest count; ties go to the lowest index.
pub fn argmax_count(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// `K x (dim + 1)` weight matrix, row-major; the last column is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    k: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl SoftmaxHead {
    pub fn new(k: usize, dim: usize, weights: Vec<f64>) -> Result<Self, ClassifierError> {
        if k < 2 {
            return Err(ClassifierError::InvalidHead(format!("need at least 2 classes, got {k}")));
        }
        if weights.len() != k * (dim + 1) {
            return Err(ClassifierError::InvalidHead(format!(
                "{} weights for {k} classes of dimension {dim}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ClassifierError::InvalidHead("non-finite weight".into()));
        }
        Ok(Self { k, dim, weights })
    }

    pub fn zeros(k: usize, dim: usize) -> Result<Self, ClassifierError> {
        Self::new(k, dim, vec![0.0; k * (dim + 1)])
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Flattened parameters, class-major: `weights[j * (dim + 1) + i]`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let s = self.dim + 1;
        &self.weights[j * s..(j + 1) * s]
    }

    fn check_dim(&self, got: usize) -> Result<(), ClassifierError> {
        if got != self.dim {
            return Err(ClassifierError::Dimension {
                got,
                expected: self.dim,
            });
        }
        Ok(())
    }

    /// `W [f; 1]`. Panics on dimension mismatch; see [`Self::predict`] for
    /// the checked path.
    pub fn logits<T: Copy + Into<f64>>(&self, f: &[T]) -> Vec<f64> {
        assert_eq!(f.len(), self.dim, "feature dimension mismatch");
        (0..self.k)
            .map(|j| {
                let row = self.row(j);
                let dot: f64 = row[..self.dim].iter().zip(f).map(|(&w, &x)| w * x.into()).sum();
                dot + row[self.dim]
            })
            .collect()
    }

    /// Class probabilities for one frame.
    pub fn predict<T: Copy + Into<f64>>(&self, f: &[T]) -> Result<Vec<f64>, ClassifierError> {
        self.check_dim(f.len())?;
        Ok(softmax(&self.logits(f)))
    }

    /// Per-frame probabilities for a whole sequence.
    pub fn predict_sequence(&self, seq: &FeatureSequence) -> Result<Vec<Vec<f64>>, ClassifierError> {
        self.check_dim(seq.dim)?;
        Ok(seq.rows().map(|r| softmax(&self.logits(r))).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.weights.len() * 8);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        let (head, rest) = Self::read_prefix(bytes)?;
        if rest != 0 {
            return Err(ClassifierError::Format(format!("{rest} trailing bytes")));
        }
        Ok(head)
    }

    /// Parses a head from the start of `bytes`, returning it with the
    /// number of bytes left over.
    pub(crate) fn read_prefix(bytes: &[u8]) -> Result<(Self, usize), ClassifierError> {
        let fmt = |m: &str| ClassifierError::Format(m.to_string());
        let mut r = Reader::new(bytes);
        if r.take(4) != Some(MODEL_MAGIC.as_slice()) {
            return Err(fmt("bad magic, expected SMH1"));
        }
        let version = r.u32().ok_or_else(|| fmt("truncated header"))?;
        if version != MODEL_VERSION {
            return Err(ClassifierError::Format(format!("unsupported model version {version}")));
        }
        let k = r.u32().ok_or_else(|| fmt("truncated header"))? as usize;
        let dim = r.u32().ok_or_else(|| fmt("truncated header"))? as usize;
        let n = k * (dim + 1);
        if r.remaining() < n * 8 {
            return Err(fmt("truncated weights"));
        }
        let weights = (0..n).map(|_| r.f64().unwrap()).collect();
        Ok((Self::new(k, dim, weights)?, r.remaining()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// How per-frame predictions become one clip label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipRule {
    /// Most frequent per-frame argmax.
    Mode,
    /// Argmax of the summed per-frame probabilities.
    Accumulated,
}

impl ClipRule {
    pub fn decide(self, probs: &[Vec<f64>]) -> Result<usize, ClassifierError> {
        let k = probs.first().ok_or(ClassifierError::Empty)?.len();
        match self {
            ClipRule::Mode => {
                let mut votes = vec![0usize; k];
                for p in probs {
                    votes[argmax(p)] += 1;
                }
                Ok(argmax_count(&votes))
            }
            ClipRule::Accumulated => {
                let mut acc = vec![0.0; k];
                for p in probs {
                    for (a, &v) in acc.iter_mut().zip(p) {
                        *a += v;
                    }
                }
                Ok(argmax(&acc))
            }
        }
    }
}

impl std::str::FromStr for ClipRule {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mode" => Ok(ClipRule::Mode),
            "accum" | "accumulated" | "prob" => Ok(ClipRule::Accumulated),
            other => Err(ClassifierError::Config(format!("unknown clip rule '{other}'"))),
        }
    }
}

pub fn predict_clip_mode(head: &SoftmaxHead, seq: &FeatureSequence) -> Result<usize, ClassifierError> {
    ClipRule::Mode.decide(&head.predict_sequence(seq)?)
}

pub fn predict_clip_accumulated(head: &SoftmaxHead, seq: &FeatureSequence) -> Result<usize, ClassifierError> {
    ClipRule::Accumulated.decide(&head.predict_sequence(seq)?)
}

/// Per-class loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeights {
    #[default]
    Uniform,
    /// Proportional to the inverse class frequency, normalized to mean 1
    /// over classes.
    Balanced,
    Explicit(Vec<f64>),
}

/// Balanced weights for per-class sample counts.
pub fn balanced_weights(counts: &[usize]) -> Result<Vec<f64>, ClassifierError> {
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(ClassifierError::MissingClass(j));
    }
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    Ok(inv.into_iter().map(|w| w / mean).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub class_weights: ClassWeights,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Standard deviation of the Gaussian weight initialization, as a
    /// multiple of `1 / sqrt(dim + 1)`. Biases start at zero.
    pub init_scale: f64,
    /// Parallel gradient reduction. Faster, but results may differ in the
    /// last bits between runs.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            epochs: 50,
            batch_size: 256,
            seed: 0,
            class_weights: ClassWeights::Uniform,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_scale: 1.0,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.weight_decay >= 0.0) || !(self.init_scale >= 0.0) {
            return bad("weight_decay and init_scale must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("moment decay rates must lie in [0, 1) and epsilon > 0");
        }
        Ok(())
    }
}

/// Labeled frames flattened into one design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub dim: usize,
    /// `n x dim`, row-major.
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Samples {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    /// Every frame of every sequence, labeled with its clip's label.
    /// Sequences without a label are rejected.
    pub fn from_sequences(seqs: &[FeatureSequence]) -> Result<Self, ClassifierError> {
        let dim = seqs.first().map_or(0, |s| s.dim);
        let mut out = Self::new(dim);
        for s in seqs {
            if s.dim != dim {
                return Err(ClassifierError::Dimension { got: s.dim, expected: dim });
            }
            let label = s
                .label
                .ok_or_else(|| ClassifierError::Config(format!("training clip '{}' has no label", s.clip_id)))?;
            for row in s.rows() {
                out.push(row, label);
            }
        }
        Ok(out)
    }

    pub fn push<T: Copy + Into<f64>>(&mut self, row: &[T], label: usize) {
        debug_assert_eq!(row.len(), self.dim);
        self.x.extend(row.iter().map(|&v| v.into()));
        self.y.push(label);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.x[n * self.dim..(n + 1) * self.dim]
    }

    pub fn class_counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for &y in &self.y {
            counts[y] += 1;
        }
        counts
    }

    pub fn accuracy(&self, head: &SoftmaxHead) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let correct = (0..self.len()).filter(|&n| argmax(&head.logits(self.row(n))) == self.y[n]).count();
        correct as f64 / self.len() as f64
    }
}

/// Weighted mean cross-entropy over `batch` and its gradient with respect
/// to the flattened head parameters:
/// `L = (1/B) sum_n c_{y_n} * -log p_{n, y_n}`.
pub fn loss_and_gradient(
    head: &SoftmaxHead,
    samples: &Samples,
    batch: &[usize],
    class_weights: &[f64],
    parallel: bool,
) -> (f64, Vec<f64>) {
    let (k, d) = (head.k, head.dim);
    let stride = d + 1;
    let accumulate = |(mut loss, mut grad): (f64, Vec<f64>), &n: &usize| {
        let f = samples.row(n);
        let y = samples.y[n];
        let c = class_weights[y];
        let p = softmax(&head.logits(f));
        // Clamp underflow to zero, but let NaN through so divergence shows.
        let py = if p[y] == 0.0 { f64::MIN_POSITIVE } else { p[y] };
        loss += -c * py.ln();
        for j in 0..k {
            let r = c * (p[j] - if j == y { 1.0 } else { 0.0 });
            if r == 0.0 {
                continue;
            }
            let g = &mut grad[j * stride..(j + 1) * stride];
            for (gi, &fi) in g[..d].iter_mut().zip(f) {
                *gi += r * fi;
            }
            g[d] += r;
        }
        (loss, grad)
    };

    let (loss, mut grad) = if parallel {
        batch
            .par_iter()
            .fold(|| (0.0, vec![0.0; k * stride]), accumulate)
            .reduce(
                || (0.0, vec![0.0; k * stride]),
                |(la, mut ga), (lb, gb)| {
                    for (a, b) in ga.iter_mut().zip(gb) {
                        *a += b;
                    }
                    (la + lb, ga)
                },
            )
    } else {
        batch.iter().fold((0.0, vec![0.0; k * stride]), accumulate)
    };

    let scale = 1.0 / batch.len().max(1) as f64;
    for g in &mut grad {
        *g *= scale;
    }
    (loss * scale, grad)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: SoftmaxHead,
    pub log: Vec<EpochLog>,
}

/// Training log as CSV: `epoch,loss,train_acc,val_acc`.
pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,train_acc,val_acc\n");
    for e in log {
        let val = e.val_acc.map(|v| format!("{v:.6}")).unwrap_or_default();
        out.push_str(&format!("{},{:.8},{:.6},{}\n", e.epoch, e.loss, e.train_acc, val));
    }
    out
}

fn resolve_class_weights(cfg: &TrainConfig, samples: &Samples, k: usize) -> Result<Vec<f64>, ClassifierError> {
    match &cfg.class_weights {
        ClassWeights::Uniform => Ok(vec![1.0; k]),
        ClassWeights::Balanced => balanced_weights(&samples.class_counts(k)),
        ClassWeights::Explicit(w) if w.len() == k && w.iter().all(|v| v.is_finite() && *v >= 0.0) => Ok(w.clone()),
        ClassWeights::Explicit(w) => Err(ClassifierError::Config(format!(
            "explicit class weights need {k} non-negative values, got {}",
            w.len()
        ))),
    }
}

/// Fits a `k`-class head with mini-batch AdamW (bias-corrected moments,
/// decoupled weight decay). Deterministic for a given seed unless
/// `cfg.parallel` is set.
pub fn train_samples(
    samples: &Samples,
    k: usize,
    cfg: &TrainConfig,
    validation: Option<&Samples>,
) -> Result<TrainOutcome, ClassifierError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(ClassifierError::Config("no training samples".into()));
    }
    if let Some(&label) = samples.y.iter().find(|&&y| y >= k) {
        return Err(ClassifierError::Label { label, classes: k });
    }
    let class_weights = resolve_class_weights(cfg, samples, k)?;
    let d = samples.dim;
    let stride = d + 1;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = cfg.init_scale / (stride as f64).sqrt();
    let mut weights = vec![0.0; k * stride];
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("finite std");
        for j in 0..k {
            for i in 0..d {
                weights[j * stride + i] = normal.sample(&mut rng);
            }
        }
    }
    let mut head = SoftmaxHead::new(k, d, weights)?;

    let mut m = vec![0.0; head.weights.len()];
    let mut v = vec![0.0; head.weights.len()];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = loss_and_gradient(&head, samples, batch, &class_weights, cfg.parallel);
            if !loss.is_finite() {
                return Err(ClassifierError::Diverged { epoch });
            }
            epoch_loss += loss * batch.len() as f64;

            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for (i, w) in head.weights.iter_mut().enumerate() {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * *w);
            }
        }
        let loss = epoch_loss / samples.len() as f64;
        if !loss.is_finite() || head.weights.iter().any(|w| !w.is_finite()) {
            return Err(ClassifierError::Diverged { epoch });
        }
        log.push(EpochLog {
            epoch,
            loss,
            train_acc: samples.accuracy(&head),
            val_acc: validation.map(|s| s.accuracy(&head)),
        });
    }
    Ok(TrainOutcome { head, log })
}

/// [`train_samples`] over labeled feature sequences.
pub fn train(data: &[FeatureSequence], k: usize, cfg: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    train_samples(&Samples::from_sequences(data)?, k, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(rows: &[&[f32]]) -> FeatureSequence {
        let dim = rows[0].len();
        FeatureSequence::new(dim, rows.concat(), "c", None).unwrap()
    }

    #[test]
    fn zero_weights_uniform() {
        let head = SoftmaxHead::zeros(4, 3).unwrap();
        let p = head.predict(&[1.0f64, -2.0, 3.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn stable_softmax_large_logit() {
        let p = softmax(&[1000.0, 0.0, 0.0]);
        assert_eq!(p[0], 1.0);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[0.3, -1.2, 2.5]);
        let b = softmax(&[100.3, 98.8, 102.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let head = SoftmaxHead::zeros(2, 3).unwrap();
        assert!(matches!(head.predict(&[1.0f64]), Err(ClassifierError::Dimension { got: 1, expected: 3 })));
        assert!(SoftmaxHead::zeros(1, 3).is_err());
    }

    /// Head whose logits equal the (one-hot-ish) input features.
    fn identity_head(k: usize) -> SoftmaxHead {
        let mut w = vec![0.0; k * (k + 1)];
        for j in 0..k {
            w[j * (k + 1) + j] = 1.0;
        }
        SoftmaxHead::new(k, k, w).unwrap()
    }

    #[test]
    fn clip_rules() {
        let head = identity_head(8);
        let onehot = |j: usize| {
            let mut v = [0.0f32; 8];
            v[j] = 5.0;
            v
        };
        let s = seq(&[&onehot(3), &onehot(3), &onehot(7)]);
        assert_eq!(predict_clip_mode(&head, &s).unwrap(), 3);
        let s = seq(&[&onehot(1), &onehot(4)]);
        assert_eq!(predict_clip_mode(&head, &s).unwrap(), 1);
        let s = seq(&[&onehot(5), &onehot(5), &onehot(5)]);
        assert_eq!(predict_clip_mode(&head, &s).unwrap(), 5);
        assert_eq!(predict_clip_accumulated(&head, &s).unwrap(), 5);
    }

    #[test]
    fn mode_and_accumulated_differ() {
        let probs = vec![vec![0.6, 0.4], vec![0.1, 0.9]];
        assert_eq!(ClipRule::Accumulated.decide(&probs).unwrap(), 1);
        assert_eq!(ClipRule::Mode.decide(&probs).unwrap(), 0);
        let single = vec![vec![0.2, 0.5, 0.3]];
        assert_eq!(ClipRule::Accumulated.decide(&single).unwrap(), 1);
        assert!(matches!(ClipRule::Mode.decide(&[]), Err(ClassifierError::Empty)));
    }

    #[test]
    fn balanced_weight_formula() {
        let w = balanced_weights(&[90, 10]).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-12 && (w[1] - 1.8).abs() < 1e-12);
        assert!((w[1] / w[0] - 9.0).abs() < 1e-12);
        assert!(matches!(balanced_weights(&[3, 0]), Err(ClassifierError::MissingClass(1))));
    }

    fn toy_separable() -> Samples {
        let mut s = Samples::new(2);
        for i in 0..20 {
            let o = i as f64 * 0.05;
            s.push(&[1.0 + o, 0.5 - o], 0);
            s.push(&[-1.0 - o, -0.5 + o], 1);
        }
        s
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let cfg = TrainConfig {
            epochs: 200,
            ..Default::default()
        };
        let out = train_samples(&toy_separable(), 2, &cfg, None).unwrap();
        assert_eq!(out.log.last().unwrap().train_acc, 1.0);
        assert_eq!(out.log.len(), 200);
    }

    #[test]
    fn same_seed_bit_identical() {
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 7,
            seed: 42,
            ..Default::default()
        };
        let a = train_samples(&toy_separable(), 2, &cfg, None).unwrap().head;
        let b = train_samples(&toy_separable(), 2, &cfg, None).unwrap().head;
        assert_eq!(
            a.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
            b.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn balanced_requires_every_class() {
        let cfg = TrainConfig {
            class_weights: ClassWeights::Balanced,
            ..Default::default()
        };
        assert!(matches!(train_samples(&toy_separable(), 3, &cfg, None), Err(ClassifierError::MissingClass(2))));
    }

    #[test]
    fn divergence_reported_with_epoch() {
        let mut s = Samples::new(1);
        s.push(&[1.0], 0);
        s.push(&[-1.0], 1);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 10,
            ..Default::default()
        };
        let err = train_samples(&s, 2, &cfg, None).unwrap_err();
        assert!(matches!(err, ClassifierError::Diverged { epoch } if (1..=3).contains(&epoch)), "{err:?}");
    }

    #[test]
    fn single_step_opposes_gradient() {
        let mut s = Samples::new(3);
        s.push(&[0.5, -1.0, 2.0], 1);
        let cfg = TrainConfig {
            epochs: 1,
            weight_decay: 0.0,
            init_scale: 0.0,
            ..Default::default()
        };
        let start = SoftmaxHead::zeros(3, 3).unwrap();
        let (_, grad) = loss_and_gradient(&start, &s, &[0], &[1.0; 3], false);
        let after = train_samples(&s, 3, &cfg, None).unwrap().head;
        for (g, w) in grad.iter().zip(after.weights()) {
            if *g != 0.0 {
                assert_eq!(w.signum(), -g.signum());
            }
        }
    }

    #[test]
    fn model_file_round_trip() {
        let head = SoftmaxHead::new(2, 1, vec![0.5, -1.0, 2.0, 3.25]).unwrap();
        let bytes = head.to_bytes();
        assert_eq!(SoftmaxHead::from_bytes(&bytes).unwrap(), head);
        assert!(SoftmaxHead::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 9;
        assert!(SoftmaxHead::from_bytes(&v2).is_err());
    }

    #[test]
    fn log_csv_layout() {
        let log = vec![EpochLog {
            epoch: 1,
            loss: 0.5,
            train_acc: 0.75,
            val_acc: None,
        }];
        assert_eq!(training_log_csv(&log), "epoch,loss,train_acc,val_acc\n1,0.50000000,0.750000,\n");
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    proptest! {
        #[test]
        fn predictions_in_simplex(k in 2usize..6, d in 1usize..6, seed in any::<u64>(), scale in 0.0f64..50.0) {
            let mut s = seed;
            let w = (0..k * (d + 1)).map(|_| lcg(&mut s) * scale).collect();
            let head = SoftmaxHead::new(k, d, w).unwrap();
            let f: Vec<f64> = (0..d).map(|_| lcg(&mut s) * scale).collect();
            let p = head.predict(&f).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn gradient_matches_finite_differences(k in 2usize..=5, d in 1usize..=10, seed in any::<u64>()) {
            let mut s = seed;
            let w = (0..k * (d + 1)).map(|_| lcg(&mut s)).collect();
            let head = SoftmaxHead::new(k, d, w).unwrap();
            let mut samples = Samples::new(d);
            for n in 0..20 {
                let f: Vec<f64> = (0..d).map(|_| lcg(&mut s) * 2.0).collect();
                samples.push(&f, n % k);
            }
            let cw: Vec<f64> = (0..k).map(|j| 0.5 + j as f64 * 0.25).collect();
            let batch: Vec<usize> = (0..20).collect();
            let (_, grad) = loss_and_gradient(&head, &samples, &batch, &cw, false);
            let h = 1e-5;
            for i in 0..grad.len() {
                let mut plus = head.clone();
                plus.weights[i] += h;
                let mut minus = head.clone();
                minus.weights[i] -= h;
                let lp = loss_and_gradient(&plus, &samples, &batch, &cw, false).0;
                let lm = loss_and_gradient(&minus, &samples, &batch, &cw, false).0;
                let fd = (lp - lm) / (2.0 * h);
                let tol = 1e-4 * grad[i].abs().max(fd.abs()).max(1e-3);
                prop_assert!((fd - grad[i]).abs() <= tol, "param {}: fd {} vs analytic {}", i, fd, grad[i]);
            }
        }

        #[test]
        fn mode_equals_accumulated_when_unanimous(k in 2usize..6, n in 1usize..8, winner in 0usize..6, seed in any::<u64>()) {
            let winner = winner % k;
            let mut s = seed;
            let probs: Vec<Vec<f64>> = (0..n).map(|_| {
                let mut logits: Vec<f64> = (0..k).map(|_| lcg(&mut s)).collect();
                logits[winner] = 2.0;
                softmax(&logits)
            }).collect();
            prop_assert_eq!(ClipRule::Mode.decide(&probs).unwrap(), winner);
            prop_assert_eq!(ClipRule::Accumulated.decide(&probs).unwrap(), winner);
        }
    }
}
