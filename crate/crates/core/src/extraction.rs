//! Reading concept semantics off activation vectors: thresholded decoding on
//! the supervised path, cosine scoring plus top-n selection on the
//! unsupervised path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConceptBank, ConceptPath, SemanticSet};
use crate::scalar::Scalar;
use crate::text::normalize;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TOP_SEMANTICS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Image,
    Concept,
}

/// Ingested embedding rows keyed by id. Rows keep file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<F> {
    dim: usize,
    kind: EmbeddingKind,
    ids: Vec<String>,
    rows: BTreeMap<String, Vec<F>>,
}

impl<F: Scalar> EmbeddingTable<F> {
    /// Builds a table, rejecting ragged rows, duplicate ids, non-finite
    /// entries and zero-norm vectors.
    pub fn new<I>(kind: EmbeddingKind, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<F>)>,
    {
        let mut dim = None;
        let mut ids = Vec::new();
        let mut map = BTreeMap::new();
        for (id, v) in rows {
            let d = *dim.get_or_insert(v.len());
            if d == 0 {
                return Err(Error::Dataset(format!("embedding `{id}` is empty")));
            }
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Dataset(format!("embedding `{id}` has non-finite entries")));
            }
            if norm(&v) == F::zero() {
                return Err(Error::ZeroNorm(id));
            }
            if map.insert(id.clone(), v).is_some() {
                return Err(Error::Dataset(format!("duplicate embedding id `{id}`")));
            }
            ids.push(id);
        }
        let dim = dim.ok_or(Error::Empty("embedding table"))?;
        Ok(Self {
            dim,
            kind,
            ids,
            rows: map,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[F]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Reorders concept rows to bank order. Every bank text must appear
    /// exactly once as an id, matched after whitespace normalization.
    pub fn aligned_to(&self, bank: &ConceptBank) -> Result<Vec<Vec<F>>> {
        let mut by_key: BTreeMap<String, &Vec<F>> = BTreeMap::new();
        for (id, v) in &self.rows {
            if by_key.insert(normalize(id), v).is_some() {
                return Err(Error::Dataset(format!(
                    "embedding ids collide after normalization: `{id}`"
                )));
            }
        }
        if by_key.len() != bank.len() {
            return Err(Error::Dataset(format!(
                "concept embedding table has {} rows, bank has {} concepts",
                by_key.len(),
                bank.len()
            )));
        }
        bank.concepts()
            .iter()
            .map(|c| {
                by_key
                    .get(&normalize(&c.text))
                    .map(|v| (*v).clone())
                    .ok_or_else(|| {
                        Error::Dataset(format!("no embedding for concept `{}`", c.text))
                    })
            })
            .collect()
    }
}

fn norm<F: Scalar>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).sum::<F>().sqrt()
}

/// Concepts whose activation is strictly above `threshold`, in concept id
/// order, weighted by their activation.
pub fn decode_supervised<F: Scalar>(
    activations: &[F],
    bank: &ConceptBank,
    threshold: F,
) -> Result<SemanticSet> {
    if activations.len() != bank.len() {
        return Err(Error::LengthMismatch {
            expected: bank.len(),
            actual: activations.len(),
        });
    }
    let mut out = SemanticSet::new();
    for (c, &a) in bank.concepts().iter().zip(activations) {
        if a > threshold {
            out.push_decoded(&c.text, a.as_f64());
        }
    }
    Ok(out)
}

/// Cosine similarity of `image` against each concept row, clamped to
/// `[-1, 1]`.
pub fn cosine_activations<F: Scalar>(image: &[F], concepts: &[Vec<F>]) -> Result<Vec<F>> {
    let image_norm = norm(image);
    if image_norm == F::zero() {
        return Err(Error::ZeroNorm("image".into()));
    }
    concepts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.len() != image.len() {
                return Err(Error::DimensionMismatch {
                    expected: image.len(),
                    actual: t.len(),
                });
            }
            let t_norm = norm(t);
            if t_norm == F::zero() {
                return Err(Error::ZeroNorm(format!("concept {i}")));
            }
            let dot: F = image.iter().zip(t).map(|(&a, &b)| a * b).sum();
            let cos = dot / (image_norm * t_norm);
            Ok(cos.max(-F::one()).min(F::one()))
        })
        .collect()
}

/// Concept indices ordered by descending activation, ties to the lower id.
pub fn rank_concepts<F: Scalar>(activations: &[F]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..activations.len()).collect();
    idx.sort_by(|&a, &b| {
        activations[b]
            .partial_cmp(&activations[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// The `n` highest-activation concepts, descending, weighted by activation.
pub fn top_semantics<F: Scalar>(
    activations: &[F],
    bank: &ConceptBank,
    n: usize,
) -> Result<SemanticSet> {
    if n == 0 {
        return Err(Error::Config("top_semantics needs n >= 1".into()));
    }
    if activations.len() != bank.len() {
        return Err(Error::LengthMismatch {
            expected: bank.len(),
            actual: activations.len(),
        });
    }
    let mut out = SemanticSet::new();
    for i in rank_concepts(activations).into_iter().take(n) {
        out.push_decoded(&bank.concepts()[i].text, activations[i].as_f64());
    }
    Ok(out)
}

/// How semantics are read off an activation vector for a given path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticsRule {
    pub path: ConceptPath,
    pub threshold: f64,
    pub top_n: usize,
}

impl Default for SemanticsRule {
    fn default() -> Self {
        Self::for_path(ConceptPath::Supervised)
    }
}

impl SemanticsRule {
    pub fn for_path(path: ConceptPath) -> Self {
        Self {
            path,
            threshold: DEFAULT_THRESHOLD,
            top_n: DEFAULT_TOP_SEMANTICS,
        }
    }

    pub fn extract<F: Scalar>(&self, activations: &[F], bank: &ConceptBank) -> Result<SemanticSet> {
        match self.path {
            ConceptPath::Supervised => decode_supervised(activations, bank, F::of(self.threshold)),
            ConceptPath::Unsupervised => top_semantics(activations, bank, self.top_n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abc() -> ConceptBank {
        ConceptBank::new("t", ["a", "b", "c"]).unwrap()
    }

    fn texts(s: &SemanticSet) -> Vec<&str> {
        s.texts().collect()
    }

    #[test]
    fn decode_extremes() {
        let b = abc();
        assert!(decode_supervised(&[0.0, 0.0, 0.0], &b, 0.5).unwrap().is_empty());
        assert_eq!(texts(&decode_supervised(&[1.0, 1.0, 1.0], &b, 0.5).unwrap()), ["a", "b", "c"]);
    }

    #[test]
    fn decode_excludes_exact_threshold() {
        let s = decode_supervised(&[0.7, 0.5, 0.3], &abc(), 0.5).unwrap();
        assert_eq!(texts(&s), ["a"]);
        assert_eq!(s.entries()[0].weight, Some(0.7));
    }

    #[test]
    fn decode_length_mismatch() {
        assert!(matches!(
            decode_supervised(&[0.7, 0.5], &abc(), 0.5),
            Err(Error::LengthMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn cosine_examples() {
        let c = cosine_activations::<f64>(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]])
            .unwrap();
        assert!((c[0] - 1.0).abs() < 1e-9);
        assert!(c[1].abs() < 1e-9);
        assert!((c[2] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_activations(&[1.0, 0.0], &[vec![1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_activations(&[0.0, 0.0], &[vec![1.0, 0.0]]),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn table_rejects_zero_norm_and_ragged() {
        let t = EmbeddingTable::new(EmbeddingKind::Image, [("x".to_string(), vec![0.0f64, 0.0])]);
        assert!(matches!(t, Err(Error::ZeroNorm(_))));
        let t = EmbeddingTable::new(
            EmbeddingKind::Image,
            [("x".to_string(), vec![1.0f64, 0.0]), ("y".to_string(), vec![1.0])],
        );
        assert!(matches!(t, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn table_aligns_by_normalized_text() {
        let bank = ConceptBank::new("t", ["Red Wing", "blue tail"]).unwrap();
        let t = EmbeddingTable::new(
            EmbeddingKind::Concept,
            [
                ("Blue  Tail".to_string(), vec![0.0f64, 1.0]),
                ("red wing".to_string(), vec![1.0, 0.0]),
            ],
        )
        .unwrap();
        let rows = t.aligned_to(&bank).unwrap();
        assert_eq!(rows, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let short = EmbeddingTable::new(EmbeddingKind::Concept, [("red wing".to_string(), vec![1.0f64])])
            .unwrap();
        assert!(short.aligned_to(&bank).is_err());
    }

    #[test]
    fn top_semantics_examples() {
        let b = abc();
        assert_eq!(texts(&top_semantics(&[0.1, 0.9, 0.5], &b, 1).unwrap()), ["b"]);
        assert_eq!(texts(&top_semantics(&[0.5, 0.5, 0.1], &b, 1).unwrap()), ["a"]);
        assert_eq!(texts(&top_semantics(&[0.1, 0.9, 0.5], &b, 10).unwrap()), ["b", "c", "a"]);
        assert!(top_semantics(&[0.1, 0.9, 0.5], &b, 0).is_err());
    }

    fn bank_of(n: usize) -> ConceptBank {
        ConceptBank::new("p", (0..n).map(|i| format!("c{i}"))).unwrap()
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant(
            v in proptest::collection::vec(-10.0f64..10.0, 4),
            t in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 1..6),
            alpha in 1e-3f64..1e3,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
            prop_assume!(t.iter().all(|r| r.iter().any(|x| x.abs() > 1e-6)));
            let base = cosine_activations(&v, &t).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * alpha).collect();
            let other = cosine_activations(&scaled, &t).unwrap();
            for (a, b) in base.iter().zip(&other) {
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(a));
            }
        }

        #[test]
        fn decode_is_monotone(
            acts in proptest::collection::vec(0.0f64..=1.0, 1..12),
            bump_at in 0usize..12,
            bump in 0.0f64..1.0,
        ) {
            let bank = bank_of(acts.len());
            let before = decode_supervised(&acts, &bank, 0.5).unwrap();
            let mut raised = acts.clone();
            let i = bump_at % acts.len();
            raised[i] = (raised[i] + bump).min(1.0);
            let after = decode_supervised(&raised, &bank, 0.5).unwrap();
            for t in before.texts() {
                prop_assert!(after.contains(t));
            }
        }

        #[test]
        fn top_semantics_matches_full_sort(
            acts in proptest::collection::vec(-1.0f64..=1.0, 1..15),
            n in 1usize..20,
        ) {
            let bank = bank_of(acts.len());
            let out = top_semantics(&acts, &bank, n).unwrap();
            prop_assert_eq!(out.len(), n.min(acts.len()));
            let mut sorted = acts.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let got: Vec<f64> = out.entries().iter().map(|e| e.weight.unwrap()).collect();
            prop_assert_eq!(got, sorted[..n.min(acts.len())].to_vec());
        }
    }
}
