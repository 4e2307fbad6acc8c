//! Linear softmax probe over concept activations. Generates class
//! candidates and reference top-N accuracies.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ActivationRecord, Candidate, CandidateSet, ClassRoster, Split};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub use_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            betas: (0.9, 0.999),
            epsilon: 1e-8,
            batch_size: 256,
            seed: 0,
            use_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Step size for `epoch` under cosine annealing from `learning_rate`
    /// down to zero over `epochs`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let t = epoch as f64 / self.epochs as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Single linear layer `softmax(W c + b)` with a class-name roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ProbeModel<F> {
    pub class_names: ClassRoster,
    pub n_concepts: usize,
    /// Row-major, `class_names.len()` rows by `n_concepts` columns.
    pub weights: Vec<F>,
    pub biases: Vec<F>,
    pub trained_on: String,
    pub seed: u64,
    pub config: TrainConfig,
}

/// Cross-entropy loss and its gradient for one batch.
#[derive(Debug, Clone)]
pub struct LossGradient<F> {
    pub loss: F,
    pub weights: Vec<F>,
    pub biases: Vec<F>,
}

impl<F: Scalar> ProbeModel<F> {
    /// All-zero model; mostly useful for tests and hand-built probes.
    pub fn zeros(class_names: ClassRoster, n_concepts: usize) -> Self {
        let m = class_names.len();
        Self {
            class_names,
            n_concepts,
            weights: vec![F::zero(); m * n_concepts],
            biases: vec![F::zero(); m],
            trained_on: String::new(),
            seed: 0,
            config: TrainConfig::default(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn check_len(&self, activations: &[F]) -> Result<()> {
        if activations.len() != self.n_concepts {
            return Err(Error::LengthMismatch {
                expected: self.n_concepts,
                actual: activations.len(),
            });
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if self
            .weights
            .iter()
            .chain(&self.biases)
            .any(|w| !w.is_finite())
        {
            return Err(Error::Dataset("probe has non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn logits(&self, activations: &[F]) -> Result<Vec<F>> {
        self.check_len(activations)?;
        Ok(self.logits_unchecked(activations))
    }

    fn logits_unchecked(&self, activations: &[F]) -> Vec<F> {
        self.weights
            .chunks(self.n_concepts.max(1))
            .take(self.n_classes())
            .zip(&self.biases)
            .map(|(row, &b)| {
                row.iter()
                    .zip(activations)
                    .map(|(&w, &x)| w * x)
                    .sum::<F>()
                    + b
            })
            .collect()
    }

    /// Softmax class probabilities in roster order.
    pub fn predict_scores(&self, activations: &[F]) -> Result<Vec<F>> {
        Ok(softmax(&self.logits(activations)?))
    }

    pub fn top_n_candidates(&self, activations: &[F], n: usize) -> Result<CandidateSet> {
        if n == 0 {
            return Err(Error::Config("need at least one candidate".into()));
        }
        let probs = self.predict_scores(activations)?;
        Ok(candidates_from_scores(&probs, &self.class_names, n))
    }

    /// Fraction of records whose label is among the top-`n` candidates.
    pub fn top_n_accuracy(&self, records: &[ActivationRecord<F>], n: usize) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::Empty("records"));
        }
        let mut hits = 0usize;
        for r in records {
            if self.top_n_candidates(&r.activations, n)?.contains(&r.label) {
                hits += 1;
            }
        }
        Ok(hits as f64 / records.len() as f64)
    }

    /// Mean softmax cross-entropy over `batch` and its gradient with
    /// respect to weights and biases. `batch` pairs activations with a
    /// roster index.
    pub fn loss_and_gradient(&self, batch: &[(&[F], usize)]) -> Result<LossGradient<F>> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let m = self.n_classes();
        let n = self.n_concepts;
        let mut grad_w = vec![F::zero(); m * n];
        let mut grad_b = vec![F::zero(); m];
        let mut loss = F::zero();
        let scale = F::one() / F::of(batch.len() as f64);
        for &(x, label) in batch {
            self.check_len(x)?;
            if label >= m {
                return Err(Error::UnknownClass(format!("index {label}")));
            }
            let logits = self.logits_unchecked(x);
            let probs = softmax(&logits);
            loss = loss - log_softmax_at(&logits, label);
            for (k, &p) in probs.iter().enumerate() {
                let delta = (p - if k == label { F::one() } else { F::zero() }) * scale;
                grad_b[k] = grad_b[k] + delta;
                for (g, &xi) in grad_w[k * n..(k + 1) * n].iter_mut().zip(x) {
                    *g = *g + delta * xi;
                }
            }
        }
        Ok(LossGradient {
            loss: loss * scale,
            weights: grad_w,
            biases: grad_b,
        })
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("probe serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        let m = model.class_names.len();
        if model.weights.len() != m * model.n_concepts || model.biases.len() != m {
            return Err(Error::Dataset(format!(
                "probe shape mismatch: {} weights, {} biases for {m} classes x {} concepts",
                model.weights.len(),
                model.biases.len(),
                model.n_concepts
            )));
        }
        model.check_finite()?;
        Ok(model)
    }
}

pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at<F: Scalar>(logits: &[F], k: usize) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<F>().ln() + max;
    logits[k] - lse
}

/// Top-`n` classes by score, descending, ties to the lower roster index.
pub fn candidates_from_scores<F: Scalar>(scores: &[F], roster: &ClassRoster, n: usize) -> CandidateSet {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let list = idx
        .into_iter()
        .take(n)
        .map(|i| Candidate {
            class_name: roster.names()[i].clone(),
            score: scores[i].as_f64(),
        })
        .collect();
    CandidateSet::new(list).expect("sorted scores form a valid candidate set")
}

/// Hex SHA-256 over record ids, labels and activations, in order.
pub fn dataset_fingerprint<F: Scalar>(records: &[ActivationRecord<F>]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(r.example_id.as_bytes());
        h.update([0]);
        h.update(r.label.as_bytes());
        h.update([0]);
        for a in &r.activations {
            h.update(a.as_f64().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

struct AdamW<F> {
    m: Vec<F>,
    v: Vec<F>,
    step: i32,
}

impl<F: Scalar> AdamW<F> {
    fn new(len: usize) -> Self {
        Self {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [F], grads: &[F], lr: f64, cfg: &TrainConfig, decay: bool) {
        self.step += 1;
        let (b1, b2) = cfg.betas;
        let bc1 = 1.0 - b1.powi(self.step);
        let bc2 = 1.0 - b2.powi(self.step);
        let (b1, b2) = (F::of(b1), F::of(b2));
        let lr = F::of(lr);
        let eps = F::of(cfg.epsilon);
        let wd = F::of(cfg.weight_decay);
        let (bc1, bc2) = (F::of(bc1), F::of(bc2));
        for i in 0..params.len() {
            let g = grads[i];
            if decay {
                params[i] = params[i] - lr * wd * params[i];
            }
            self.m[i] = b1 * self.m[i] + (F::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (F::one() - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Trains a probe on `train` records. Deterministic in record order and
/// `config.seed`.
pub fn train_probe<F: Scalar>(
    train: &[ActivationRecord<F>],
    roster: &ClassRoster,
    config: &TrainConfig,
) -> Result<ProbeModel<F>> {
    config.validate()?;
    let first = train.first().ok_or(Error::Empty("training set"))?;
    let n = first.activations.len();
    if n == 0 {
        return Err(Error::Dataset("records have no activations".into()));
    }
    let mut labelled = Vec::with_capacity(train.len());
    let mut seen = vec![false; roster.len()];
    for r in train {
        if r.split != Split::Train {
            return Err(Error::Dataset(format!(
                "record `{}` is in split {}, expected train",
                r.example_id, r.split
            )));
        }
        if r.activations.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: r.activations.len(),
            });
        }
        let k = roster
            .index_of(&r.label)
            .ok_or_else(|| Error::UnknownClass(r.label.clone()))?;
        seen[k] = true;
        labelled.push((r.activations.as_slice(), k));
    }
    for (k, s) in seen.iter().enumerate() {
        if !s {
            log::warn!("class `{}` has no training records", roster.names()[k]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let m = roster.len();
    let bound = 1.0 / (n as f64).sqrt();
    let mut model = ProbeModel::<F>::zeros(roster.clone(), n);
    for w in model.weights.iter_mut() {
        *w = F::of(rng.gen_range(-bound..bound));
    }
    if config.use_bias {
        for b in model.biases.iter_mut() {
            *b = F::of(rng.gen_range(-bound..bound));
        }
    }
    model.seed = config.seed;
    model.config = config.clone();
    model.trained_on = dataset_fingerprint(train);

    let mut opt_w = AdamW::new(m * n);
    let mut opt_b = AdamW::new(m);
    let mut order: Vec<usize> = (0..labelled.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[F], usize)> = chunk.iter().map(|&i| labelled[i]).collect();
            let grad = model.loss_and_gradient(&batch)?;
            opt_w.update(&mut model.weights, &grad.weights, lr, config, true);
            if config.use_bias {
                opt_b.update(&mut model.biases, &grad.biases, lr, config, true);
            }
        }
    }
    model.check_finite()?;
    Ok(model)
}

/// Seeded per-class sample of `shots` train records (all of a class when it
/// has fewer), in original record order.
pub fn few_shot_subset<F: Scalar>(
    train: &[ActivationRecord<F>],
    roster: &ClassRoster,
    shots: usize,
    seed: u64,
) -> Vec<ActivationRecord<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; train.len()];
    for class in roster.names() {
        let pool: Vec<usize> = train
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.label == class)
            .map(|(i, _)| i)
            .collect();
        for &i in pool.choose_multiple(&mut rng, shots) {
            keep[i] = true;
        }
    }
    train
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: usize, acts: Vec<f64>, label: &str) -> ActivationRecord<f64> {
        ActivationRecord {
            example_id: format!("e{id}"),
            split: Split::Train,
            activations: acts,
            label: label.into(),
            gt_concepts: None,
        }
    }

    /// The default step size only moves weights by about 0.03 over 50
    /// one-batch epochs, less than the init range, so small fixtures train
    /// with a larger one.
    fn small_data_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 16,
            ..TrainConfig::default()
        }
    }

    fn two_class() -> (Vec<ActivationRecord<f64>>, ClassRoster) {
        let mut v = Vec::new();
        for i in 0..20 {
            v.push(rec(i, vec![1.0, 0.0], "A"));
            v.push(rec(100 + i, vec![0.0, 1.0], "B"));
        }
        (v, ClassRoster::new(["A", "B"]).unwrap())
    }

    #[test]
    fn separable_two_class_reaches_full_train_accuracy() {
        let (data, roster) = two_class();
        let model = train_probe(&data, &roster, &small_data_config()).unwrap();
        assert_eq!(model.config.epochs, 50);
        assert_eq!(model.top_n_accuracy(&data, 1).unwrap(), 1.0);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (data, roster) = two_class();
        let cfg = TrainConfig {
            seed: 7,
            ..TrainConfig::default()
        };
        let a = train_probe(&data, &roster, &cfg).unwrap();
        let b = train_probe(&data, &roster, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = train_probe(&data, &roster, &TrainConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn single_class_data_dominates() {
        let roster = ClassRoster::new(["A", "B", "C"]).unwrap();
        let data: Vec<_> = (0..30)
            .map(|i| rec(i, vec![(i % 3) as f64 / 2.0, 0.5], "A"))
            .collect();
        let model = train_probe(&data, &roster, &small_data_config()).unwrap();
        for x in [[0.0, 0.0], [1.0, 1.0], [0.3, 0.9]] {
            let p = model.predict_scores(&x).unwrap();
            assert!(p[0] > 1.0 / 3.0, "{p:?}");
        }
    }

    #[test]
    fn training_errors() {
        let roster = ClassRoster::new(["A"]).unwrap();
        assert!(matches!(
            train_probe::<f64>(&[], &roster, &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            train_probe(&[rec(0, vec![1.0], "Z")], &roster, &TrainConfig::default()),
            Err(Error::UnknownClass(_))
        ));
        let mut val = rec(0, vec![1.0], "A");
        val.split = Split::Val;
        assert!(train_probe(&[val], &roster, &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train_probe(&[rec(0, vec![1.0], "A")], &roster, &bad).is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let roster = ClassRoster::new(["a", "b", "c", "d"]).unwrap();
        let m = ProbeModel::<f64>::zeros(roster, 3);
        assert_eq!(m.predict_scores(&[0.3, 0.1, 0.9]).unwrap(), vec![0.25; 4]);
        assert!(m.predict_scores(&[0.3]).is_err());
    }

    #[test]
    fn closed_form_softmax() {
        let roster = ClassRoster::new(["a", "b"]).unwrap();
        let mut m = ProbeModel::<f64>::zeros(roster, 1);
        m.biases = vec![2f64.ln(), 0.0];
        let p = m.predict_scores(&[0.4]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn top_n_tie_breaks_by_roster_index() {
        let roster = ClassRoster::new(["a", "b", "c"]).unwrap();
        let scores = [0.4, 0.4, 0.2];
        let c = candidates_from_scores(&scores, &roster, 2);
        assert_eq!(c.names().collect::<Vec<_>>(), ["a", "b"]);
        let c = candidates_from_scores(&[0.2, 0.4, 0.4], &roster, 5);
        assert_eq!(c.names().collect::<Vec<_>>(), ["b", "c", "a"]);
    }

    #[test]
    fn top_n_at_roster_size_is_perfect() {
        let (data, roster) = two_class();
        let model = train_probe(
            &data,
            &roster,
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert_eq!(model.top_n_accuracy(&data, 2).unwrap(), 1.0);
        assert!(model.top_n_accuracy(&[], 1).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let (data, roster) = two_class();
        let model = train_probe(&data, &roster, &TrainConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.json");
        model.save(&path).unwrap();
        let back = ProbeModel::<f64>::load(&path).unwrap();
        assert_eq!(back.fingerprint(), model.fingerprint());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 1e-3);
        assert!(cfg.learning_rate_at(25) - 5e-4 < 1e-12);
        assert!(cfg.learning_rate_at(49) > 0.0);
    }

    #[test]
    fn few_shot_subset_sizes() {
        let (data, roster) = two_class();
        let one = few_shot_subset(&data, &roster, 1, 3);
        assert_eq!(one.len(), 2);
        let many = few_shot_subset(&data, &roster, 50, 3);
        assert_eq!(many.len(), data.len());
        assert_eq!(
            few_shot_subset(&data, &roster, 2, 9),
            few_shot_subset(&data, &roster, 2, 9)
        );
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(
            w in proptest::collection::vec(-5.0f64..5.0, 12),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
            x in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let mut m = ProbeModel::<f64>::zeros(ClassRoster::new(["a", "b", "c"]).unwrap(), 4);
            m.weights = w;
            m.biases = b;
            let p = m.predict_scores(&x).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }

        #[test]
        fn logit_shift_keeps_ordering(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..8),
            shift in -50.0f64..50.0,
            n in 1usize..8,
        ) {
            let roster = ClassRoster::new((0..scores.len()).map(|i| format!("c{i}"))).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let a = candidates_from_scores(&softmax(&scores), &roster, n);
            let b = candidates_from_scores(&softmax(&shifted), &roster, n);
            prop_assert_eq!(a.names().collect::<Vec<_>>(), b.names().collect::<Vec<_>>());
        }
    }
}
