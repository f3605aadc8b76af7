//! Shallow logistic-regression quality classifier over hashed n-grams.
//!
//! The model is fit by plain SGD from zero initialization, one example at a
//! time, in a seeded shuffle per epoch. Given the same documents and
//! [`TrainConfig`] the weights are bit-identical across runs and machines.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus_io::Document;
use crate::error::{Error, Result};
use crate::features::{featurize, FeatureConfig, FeatureVector};
use crate::rng::derive_seed;

pub const MODEL_MAGIC: &[u8; 8] = b"PSIEVE1\0";

/// Margins are clamped to this magnitude so the sigmoid never rounds to
/// exactly 0 or 1 in f64.
pub const MARGIN_CLAMP: f64 = 35.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            learning_rate: 0.1,
            seed: 0,
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be a positive number"));
        }
        Ok(())
    }
}

/// Provenance of a trained model. Class sizes are not part of the on-disk
/// format, so they are `None` after [`load_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
    pub n_pos: Option<u64>,
    pub n_neg: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    cfg: FeatureConfig,
    weights: Vec<f64>,
    bias: f64,
    positive_label: String,
    negative_label: String,
    train_meta: TrainMeta,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-MARGIN_CLAMP, MARGIN_CLAMP);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl LinearModel {
    /// Builds a model from explicit parameters. `weights.len()` must equal
    /// `cfg.buckets`.
    pub fn from_parts(cfg: FeatureConfig, weights: Vec<f64>, bias: f64) -> Result<Self> {
        cfg.validate()?;
        if weights.len() as u64 != cfg.buckets {
            return Err(Error::invalid(format!(
                "expected {} weights, got {}",
                cfg.buckets,
                weights.len()
            )));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(LinearModel {
            cfg,
            weights,
            bias,
            positive_label: "positive".into(),
            negative_label: "negative".into(),
            train_meta: TrainMeta {
                epochs: 0,
                learning_rate: 0.0,
                seed: 0,
                n_pos: None,
                n_neg: None,
            },
        })
    }

    pub fn zeros(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        Self::from_parts(cfg, vec![0.0; cfg.buckets as usize], 0.0)
    }

    pub fn with_labels(mut self, positive: impl Into<String>, negative: impl Into<String>) -> Self {
        self.positive_label = positive.into();
        self.negative_label = negative.into();
        self
    }

    pub fn cfg(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn positive_label(&self) -> &str {
        &self.positive_label
    }

    pub fn negative_label(&self) -> &str {
        &self.negative_label
    }

    pub fn train_meta(&self) -> &TrainMeta {
        &self.train_meta
    }

    /// Raw linear margin `w·x + b`, accumulated in ascending bucket order.
    pub fn margin(&self, x: &FeatureVector) -> f64 {
        x.iter()
            .fold(self.bias, |acc, (j, c)| acc + self.weights[j] * f64::from(c))
    }

    pub fn score_features(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.margin(x))
    }

    pub fn score_text(&self, text: &str) -> f64 {
        self.score_features(&featurize(text, &self.cfg))
    }

    /// Probability that `doc` belongs to the positive class; always in (0, 1).
    pub fn score(&self, doc: &Document) -> f64 {
        self.score_text(&doc.text)
    }

    /// Logistic loss of one example.
    pub fn example_loss(&self, x: &FeatureVector, positive: bool) -> f64 {
        let m = self.margin(x);
        if positive {
            softplus(-m)
        } else {
            softplus(m)
        }
    }

    /// Gradient of [`Self::example_loss`]: `(σ(m) − y)·x` for the weights and
    /// `σ(m) − y` for the bias.
    pub fn example_gradient(&self, x: &FeatureVector, positive: bool) -> (Vec<(usize, f64)>, f64) {
        let y = if positive { 1.0 } else { 0.0 };
        let residual = self.score_features(x) - y;
        let grad_w = x.iter().map(|(j, c)| (j, residual * f64::from(c))).collect();
        (grad_w, residual)
    }

    /// Mean logistic loss over both classes.
    pub fn mean_loss(&self, positives: &[Document], negatives: &[Document]) -> f64 {
        let n = positives.len() + negatives.len();
        if n == 0 {
            return 0.0;
        }
        let sum: f64 = positives
            .iter()
            .map(|d| self.example_loss(&featurize(&d.text, &self.cfg), true))
            .chain(
                negatives
                    .iter()
                    .map(|d| self.example_loss(&featurize(&d.text, &self.cfg), false)),
            )
            .sum();
        sum / n as f64
    }

    fn sgd_step(&mut self, x: &FeatureVector, positive: bool, lr: f64) {
        let y = if positive { 1.0 } else { 0.0 };
        let step = lr * (y - self.score_features(x));
        for (j, c) in x.iter() {
            self.weights[j] += step * f64::from(c);
        }
        self.bias += step;
    }
}

/// Fits a positive-vs-negative classifier.
///
/// Examples are interleaved (pos 0, neg 0, pos 1, neg 1, ...) and then each
/// epoch visits them in a ChaCha8 shuffle keyed by `(seed, epoch)`.
pub fn train(positives: &[Document], negatives: &[Document], tc: &TrainConfig) -> Result<LinearModel> {
    tc.validate()?;
    if positives.is_empty() {
        return Err(Error::EmptyTrainingClass("positive"));
    }
    if negatives.is_empty() {
        return Err(Error::EmptyTrainingClass("negative"));
    }
    let cfg = tc.features;
    let featurize_all = |docs: &[Document]| -> Vec<FeatureVector> {
        docs.par_iter().map(|d| featurize(&d.text, &cfg)).collect()
    };
    let pos = featurize_all(positives);
    let neg = featurize_all(negatives);

    let mut examples: Vec<(&FeatureVector, bool)> = Vec::with_capacity(pos.len() + neg.len());
    for i in 0..pos.len().max(neg.len()) {
        if let Some(x) = pos.get(i) {
            examples.push((x, true));
        }
        if let Some(x) = neg.get(i) {
            examples.push((x, false));
        }
    }

    let mut model = LinearModel::zeros(cfg)?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..tc.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, u64::from(epoch)));
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, label) = examples[i];
            model.sgd_step(x, label, tc.learning_rate);
        }
    }
    model.train_meta = TrainMeta {
        epochs: tc.epochs,
        learning_rate: tc.learning_rate,
        seed: tc.seed,
        n_pos: Some(positives.len() as u64),
        n_neg: Some(negatives.len() as u64),
    };
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub n: u64,
}

/// Accuracy with threshold 0.5; a score of exactly 0.5 counts as negative.
pub fn evaluate(model: &LinearModel, positives: &[Document], negatives: &[Document]) -> Result<Evaluation> {
    let n = positives.len() + negatives.len();
    if n == 0 {
        return Err(Error::invalid("cannot evaluate on zero documents"));
    }
    let correct_pos = positives.par_iter().filter(|d| model.score(d) > 0.5).count();
    let correct_neg = negatives.par_iter().filter(|d| model.score(d) <= 0.5).count();
    Ok(Evaluation {
        accuracy: (correct_pos + correct_neg) as f64 / n as f64,
        n: n as u64,
    })
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

/// Binary model image: magic, little-endian header
/// `(ngram_order u32, buckets u64, epochs u32, learning_rate f64, seed u64)`,
/// bias f64, `buckets` f64 weights, then the positive and negative labels
/// each as a u32 byte length followed by UTF-8.
pub fn encode_model(model: &LinearModel) -> Vec<u8> {
    let mut buf = Vec::with_capacity(48 + model.weights.len() * 8);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&model.cfg.ngram_order.to_le_bytes());
    buf.extend_from_slice(&model.cfg.buckets.to_le_bytes());
    buf.extend_from_slice(&model.train_meta.epochs.to_le_bytes());
    buf.extend_from_slice(&model.train_meta.learning_rate.to_le_bytes());
    buf.extend_from_slice(&model.train_meta.seed.to_le_bytes());
    buf.extend_from_slice(&model.bias.to_le_bytes());
    for w in &model.weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    put_str(&mut buf, &model.positive_label);
    put_str(&mut buf, &model.negative_label);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated while reading {what}"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        self.array(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, String> {
        self.array(what).map(u64::from_le_bytes)
    }

    fn f64(&mut self, what: &str) -> std::result::Result<f64, String> {
        self.array(what).map(f64::from_le_bytes)
    }

    fn string(&mut self, what: &str) -> std::result::Result<String, String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| format!("{what} is not UTF-8"))
    }
}

fn decode_body(bytes: &[u8]) -> std::result::Result<LinearModel, String> {
    let mut cur = Cursor { bytes, pos: MODEL_MAGIC.len() };
    let ngram_order = cur.u32("ngram_order")?;
    let buckets = cur.u64("buckets")?;
    let cfg = FeatureConfig { ngram_order, buckets };
    cfg.validate().map_err(|e| e.to_string())?;
    let epochs = cur.u32("epochs")?;
    let learning_rate = cur.f64("learning_rate")?;
    let seed = cur.u64("seed")?;
    let bias = cur.f64("bias")?;
    let weight_bytes = usize::try_from(buckets)
        .ok()
        .and_then(|b| b.checked_mul(8))
        .ok_or("bucket count too large")?;
    let raw = cur.take(weight_bytes, "weights")?;
    let weights: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let positive_label = cur.string("positive label")?;
    let negative_label = cur.string("negative label")?;
    if cur.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
    }
    if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err("non-finite parameter".into());
    }
    Ok(LinearModel {
        cfg,
        weights,
        bias,
        positive_label,
        negative_label,
        train_meta: TrainMeta {
            epochs,
            learning_rate,
            seed,
            n_pos: None,
            n_neg: None,
        },
    })
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<LinearModel> {
    let magic_len = MODEL_MAGIC.len().min(bytes.len());
    if bytes[..magic_len] != MODEL_MAGIC[..magic_len] {
        return Err(Error::NotAModel { path: path.to_path_buf() });
    }
    if bytes.len() < MODEL_MAGIC.len() {
        return Err(Error::CorruptModel {
            path: path.to_path_buf(),
            reason: "truncated header".into(),
        });
    }
    decode_body(bytes).map_err(|reason| Error::CorruptModel {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn save_model(model: &LinearModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinearModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(text: &str, n: usize) -> Vec<Document> {
        (0..n).map(|i| Document::new(i as u64, text, "t")).collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            features: FeatureConfig::new(2, 1 << 12).unwrap(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_phrases() {
        let pos = docs("alpha alpha alpha", 200);
        let neg = docs("beta beta beta", 200);
        let model = train(&pos, &neg, &small_cfg()).unwrap();
        let ev = evaluate(&model, &pos[..10], &neg[..10]).unwrap();
        assert_eq!(ev.accuracy, 1.0);
        assert!(model.score_text("alpha alpha alpha") > 0.9);
        assert!(model.score_text("beta beta beta") < 0.1);
        assert_eq!(model.train_meta().n_pos, Some(200));
    }

    #[test]
    fn training_is_deterministic() {
        let pos = docs("alpha gamma", 50);
        let neg = docs("beta gamma", 70);
        let a = train(&pos, &neg, &small_cfg()).unwrap();
        let b = train(&pos, &neg, &small_cfg()).unwrap();
        assert_eq!(encode_model(&a), encode_model(&b));
    }

    #[test]
    fn different_seeds_shuffle_differently() {
        let pos: Vec<_> = (0..40).map(|i| Document::new(i, format!("p{i} common"), "t")).collect();
        let neg: Vec<_> = (0..40).map(|i| Document::new(i, format!("n{i} common"), "t")).collect();
        let a = train(&pos, &neg, &small_cfg()).unwrap();
        let b = train(&pos, &neg, &TrainConfig { seed: 9, ..small_cfg() }).unwrap();
        assert_ne!(a.weights(), b.weights());
    }

    #[test]
    fn empty_class_rejected() {
        let pos = docs("a", 3);
        let err = train(&pos, &[], &small_cfg()).unwrap_err();
        assert!(err.to_string().contains("empty training class"));
        assert!(train(&[], &pos, &small_cfg()).is_err());
    }

    #[test]
    fn empty_text_scores_sigmoid_bias() {
        let cfg = FeatureConfig::new(1, 8).unwrap();
        let m = LinearModel::from_parts(cfg, vec![1.0; 8], 0.7).unwrap();
        assert_eq!(m.score_text(""), sigmoid(0.7));
    }

    #[test]
    fn score_stays_open_interval() {
        let cfg = FeatureConfig::new(1, 4).unwrap();
        let hi = LinearModel::from_parts(cfg, vec![1e6; 4], 1e6).unwrap();
        let lo = LinearModel::from_parts(cfg, vec![-1e6; 4], -1e6).unwrap();
        let s_hi = hi.score_text("x y z");
        let s_lo = lo.score_text("x y z");
        assert!(s_hi < 1.0 && s_hi > 0.5);
        assert!(s_lo > 0.0 && s_lo < 0.5);
    }

    #[test]
    fn zero_model_predicts_negative() {
        let m = LinearModel::zeros(FeatureConfig::new(1, 16).unwrap()).unwrap();
        let ev = evaluate(&m, &docs("a", 3), &docs("b", 5)).unwrap();
        assert_eq!(ev.accuracy, 5.0 / 8.0);
        assert_eq!(ev.n, 8);
    }

    #[test]
    fn single_positive_document() {
        // bias chosen so the empty-text score is 0.6
        let bias = (0.6f64 / 0.4).ln();
        let m = LinearModel::from_parts(FeatureConfig::new(1, 4).unwrap(), vec![0.0; 4], bias).unwrap();
        assert!((m.score_text("") - 0.6).abs() < 1e-12);
        let ev = evaluate(&m, &docs("", 1), &[]).unwrap();
        assert_eq!((ev.accuracy, ev.n), (1.0, 1));
    }

    #[test]
    fn evaluate_needs_documents() {
        let m = LinearModel::zeros(FeatureConfig::new(1, 4).unwrap()).unwrap();
        assert!(evaluate(&m, &[], &[]).is_err());
    }

    #[test]
    fn training_lowers_loss() {
        let pos: Vec<_> = (0..60).map(|i| Document::new(i, format!("good w{} fine", i % 7), "t")).collect();
        let neg: Vec<_> = (0..60).map(|i| Document::new(i, format!("bad w{} junk", i % 5), "t")).collect();
        let tc = small_cfg();
        let zero = LinearModel::zeros(tc.features).unwrap();
        let model = train(&pos, &neg, &tc).unwrap();
        assert!(model.mean_loss(&pos, &neg) < zero.mean_loss(&pos, &neg));
        assert!((zero.mean_loss(&pos, &neg) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn score_monotone_in_positive_features() {
        let cfg = FeatureConfig::new(1, 64).unwrap();
        let weights: Vec<f64> = (0..64).map(|i| (i as f64 - 32.0) / 10.0).collect();
        let m = LinearModel::from_parts(cfg, weights, -0.3).unwrap();
        let mut x: FeatureVector = [(3, 2), (40, 1)].into_iter().collect();
        let mut prev = m.score_features(&x);
        for j in [33usize, 50, 63, 33] {
            x.add(j, 1);
            let next = m.score_features(&x);
            assert!(next >= prev);
            prev = next;
        }
    }

    #[test]
    fn round_trip_bytes() {
        let pos = docs("alpha", 10);
        let neg = docs("beta", 10);
        let m = train(&pos, &neg, &small_cfg()).unwrap().with_labels("hq", "raw");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        save_model(&m, &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back.weights(), m.weights());
        assert_eq!(back.bias().to_bits(), m.bias().to_bits());
        assert_eq!(back.positive_label(), "hq");
        assert_eq!(back.negative_label(), "raw");
        assert_eq!(back.train_meta().epochs, 5);
        assert_eq!(back.train_meta().n_pos, None);
        assert_eq!(encode_model(&back), encode_model(&m));
    }

    #[test]
    fn header_layout() {
        let m = LinearModel::zeros(FeatureConfig::new(3, 2).unwrap()).unwrap().with_labels("p", "nn");
        let b = encode_model(&m);
        assert_eq!(&b[..8], b"PSIEVE1\0");
        assert_eq!(&b[8..12], &3u32.to_le_bytes());
        assert_eq!(&b[12..20], &2u64.to_le_bytes());
        // magic + header(32) + bias + 2 weights + labels(4+1, 4+2)
        assert_eq!(b.len(), 8 + 32 + 8 + 16 + 5 + 6);
        assert_eq!(&b[64..69], b"\x01\x00\x00\x00p");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let m = LinearModel::zeros(FeatureConfig::new(1, 16).unwrap()).unwrap();
        let bytes = encode_model(&m);
        let p = Path::new("m.bin");
        for cut in [3, 8, 20, 60, bytes.len() - 1] {
            let err = decode_model(&bytes[..cut], p).unwrap_err();
            assert!(matches!(err, Error::CorruptModel { .. }), "cut {cut}: {err}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra, p).is_err());
    }

    #[test]
    fn magic_mismatch_is_not_a_model() {
        let err = decode_model(b"GARBAGE!and more", Path::new("x.bin")).unwrap_err();
        assert_eq!(err.to_string(), "x.bin: not a model file");
        assert!(matches!(decode_model(b"", Path::new("x")).unwrap_err(), Error::CorruptModel { .. }));
    }

    #[test]
    fn huge_bucket_count_does_not_allocate() {
        let mut b = encode_model(&LinearModel::zeros(FeatureConfig::new(1, 2).unwrap()).unwrap());
        b[12..20].copy_from_slice(&(u64::MAX / 4).to_le_bytes());
        assert!(decode_model(&b, Path::new("m")).is_err());
    }
}
