//! Seeded synthetic datasets where every class owns a disjoint block of
//! concepts. Used by tests, demos and the CLI's `--synthetic` mode.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::knowledge::{render_associated, PriorTable};
use crate::model::{ActivationRecord, ClassPrior, ClassRoster, ConceptBank, PriorSource, Split};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub concepts_per_class: usize,
    /// Probability of flipping each ground-truth bit in the observed
    /// activations.
    pub noise: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            concepts_per_class: 4,
            noise: 0.1,
            train_per_class: 20,
            val_per_class: 4,
            test_per_class: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData<F> {
    pub bank: ConceptBank,
    pub roster: ClassRoster,
    pub records: Vec<ActivationRecord<F>>,
    /// Each class's true concept ids.
    pub class_concepts: Vec<Vec<usize>>,
}

pub fn class_name(k: usize) -> String {
    format!("species {k:02}")
}

pub fn concept_text(id: usize) -> String {
    format!("trait {id:03}")
}

impl<F: Scalar> SyntheticData<F> {
    /// Concept `k * per + j` belongs to class `k`. A record's ground truth
    /// is its class block; observed activations are the (possibly flipped)
    /// bits pushed to 0.05..0.45 or 0.55..0.95.
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        let n = spec.classes * spec.concepts_per_class;
        let bank = ConceptBank::with_groups(
            "synthetic",
            (0..n).map(|i| {
                (
                    concept_text(i),
                    Some(format!("group {:02}", i / spec.concepts_per_class)),
                )
            }),
        )?;
        let roster = ClassRoster::new((0..spec.classes).map(class_name))?;
        let class_concepts: Vec<Vec<usize>> = (0..spec.classes)
            .map(|k| (k * spec.concepts_per_class..(k + 1) * spec.concepts_per_class).collect())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut records = Vec::new();
        for (split, count) in [
            (Split::Train, spec.train_per_class),
            (Split::Val, spec.val_per_class),
            (Split::Test, spec.test_per_class),
        ] {
            for i in 0..count {
                for k in 0..spec.classes {
                    let gt: Vec<bool> = (0..n).map(|c| c / spec.concepts_per_class == k).collect();
                    let activations = gt
                        .iter()
                        .map(|&bit| {
                            let on = bit ^ (rng.gen::<f64>() < spec.noise);
                            let jitter = rng.gen_range(0.05..0.45);
                            F::of(if on { 0.5 + jitter } else { 0.5 - jitter })
                        })
                        .collect();
                    records.push(ActivationRecord {
                        example_id: format!("{split}-{k:02}-{i:03}"),
                        split,
                        activations,
                        label: class_name(k),
                        gt_concepts: Some(gt),
                    });
                }
            }
        }
        Ok(Self {
            bank,
            roster,
            records,
            class_concepts,
        })
    }

    pub fn split(&self, split: Split) -> Vec<ActivationRecord<F>> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }

    /// Priors listing each class's true concepts.
    pub fn true_priors(&self) -> PriorTable {
        let priors = self
            .class_concepts
            .iter()
            .enumerate()
            .map(|(k, ids)| {
                let concepts: Vec<String> = ids.iter().map(|&i| concept_text(i)).collect();
                let name = class_name(k);
                ClassPrior {
                    description: render_associated(&name, &concepts),
                    class_name: name,
                    concepts,
                    source: PriorSource::ClassLevel,
                }
            })
            .collect();
        PriorTable::new(priors, PriorSource::ClassLevel, 0.5)
    }
}
