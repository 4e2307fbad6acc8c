//! Few-shot demonstration selection and class concept priors.

use std::collections::BTreeMap;
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::SemanticsRule;
use crate::model::{
    ActivationRecord, CandidateSet, ClassPrior, ClassRoster, ConceptBank, PriorSource, SemanticSet,
    Split,
};
use crate::probe::ProbeModel;
use crate::scalar::Scalar;
use crate::text::{join_list, normalize};

pub const DEFAULT_INSTRUCTION: &str = "Answer the image class based on the concepts.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub example_id: String,
    pub semantics: SemanticSet,
    pub class_name: String,
    /// The probe's top class for this shot, when hints are enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub instruction: String,
    pub shots: Vec<Shot>,
    pub n_candidates: usize,
    pub k_per_class: usize,
    pub seed: u64,
    pub include_probe_hint: bool,
}

impl DemonstrationSet {
    /// Instruction only, no shots.
    pub fn zero_shot(instruction: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            shots: Vec::new(),
            n_candidates: 0,
            k_per_class: 0,
            seed: 0,
            include_probe_hint: false,
        }
    }
}

/// Parameters for [`select_demonstrations`].
#[derive(Debug, Clone)]
pub struct DemoRequest<'a, F> {
    pub k: usize,
    pub seed: u64,
    pub instruction: &'a str,
    pub rule: SemanticsRule,
    /// When set, each shot carries this probe's top prediction.
    pub hint_probe: Option<&'a ProbeModel<F>>,
}

/// For each candidate class in order, samples up to `k` of its validation
/// records without replacement and pairs their extracted semantics with
/// the class label.
pub fn select_demonstrations<F: Scalar>(
    candidates: &CandidateSet,
    val_records: &[ActivationRecord<F>],
    bank: &ConceptBank,
    roster: &ClassRoster,
    req: &DemoRequest<'_, F>,
) -> Result<DemonstrationSet> {
    if let Some(bad) = val_records.iter().find(|r| r.split != Split::Val) {
        return Err(Error::Dataset(format!(
            "demonstration pool record `{}` is in split {}",
            bad.example_id, bad.split
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut shots = Vec::new();
    for class in candidates.names() {
        if !roster.contains(class) {
            return Err(Error::UnknownClass(class.to_string()));
        }
        if req.k == 0 {
            continue;
        }
        let pool: Vec<&ActivationRecord<F>> =
            val_records.iter().filter(|r| r.label == class).collect();
        if pool.len() < req.k {
            log::warn!(
                "class `{class}` has {} validation records, fewer than k={}",
                pool.len(),
                req.k
            );
        }
        for r in pool.choose_multiple(&mut rng, req.k) {
            let probe_hint = match req.hint_probe {
                Some(p) => p
                    .top_n_candidates(&r.activations, 1)?
                    .top()
                    .map(|c| c.class_name.clone()),
                None => None,
            };
            shots.push(Shot {
                example_id: r.example_id.clone(),
                semantics: req.rule.extract(&r.activations, bank)?,
                class_name: r.label.clone(),
                probe_hint,
            });
        }
    }
    Ok(DemonstrationSet {
        instruction: req.instruction.to_string(),
        shots,
        n_candidates: candidates.len(),
        k_per_class: req.k,
        seed: req.seed,
        include_probe_hint: req.hint_probe.is_some(),
    })
}

/// Class priors keyed by class name, kept in roster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTable {
    priors: Vec<ClassPrior>,
    pub construction: PriorSource,
    pub threshold: f64,
}

impl PriorTable {
    pub fn new(priors: Vec<ClassPrior>, construction: PriorSource, threshold: f64) -> Self {
        Self {
            priors,
            construction,
            threshold,
        }
    }

    pub fn get(&self, class_name: &str) -> Option<&ClassPrior> {
        self.priors.iter().find(|p| p.class_name == class_name)
    }

    pub fn priors(&self) -> &[ClassPrior] {
        &self.priors
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    /// The priors of the candidate classes, in candidate order.
    pub fn restrict(&self, candidates: &CandidateSet) -> Result<PriorTable> {
        let priors = candidates
            .names()
            .map(|c| {
                self.get(c)
                    .cloned()
                    .ok_or_else(|| Error::MissingPrior(c.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PriorTable {
            priors,
            construction: self.construction,
            threshold: self.threshold,
        })
    }

    pub fn covers(&self, roster: &ClassRoster) -> Result<()> {
        for c in roster.names() {
            if self.get(c).is_none() {
                return Err(Error::MissingPrior(c.clone()));
            }
        }
        Ok(())
    }

    /// `{class: description}` as JSON.
    pub fn to_json(&self) -> serde_json::Value {
        let map: BTreeMap<&str, &str> = self
            .priors
            .iter()
            .map(|p| (p.class_name.as_str(), p.description.as_str()))
            .collect();
        serde_json::to_value(map).expect("string map serializes")
    }

    /// Reads a `{class: description}` map. Values may also be objects
    /// `{"description": .., "concepts": [..]}`. For bare strings, the
    /// concept list is recovered as the bank texts the description contains.
    pub fn from_json_reader<R: Read>(
        reader: R,
        roster: &ClassRoster,
        bank: Option<&ConceptBank>,
    ) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Entry {
            Text(String),
            Full {
                description: String,
                #[serde(default)]
                concepts: Vec<String>,
            },
        }
        let raw: BTreeMap<String, Entry> = serde_json::from_reader(reader)?;
        let mut priors = Vec::new();
        for class in roster.names() {
            let Some(entry) = raw.get(class) else {
                continue;
            };
            let (description, concepts) = match entry {
                Entry::Full {
                    description,
                    concepts,
                } => (description.clone(), concepts.clone()),
                Entry::Text(d) => {
                    let concepts = bank.map(|b| mentioned_concepts(d, b)).unwrap_or_default();
                    (d.clone(), concepts)
                }
            };
            if description.trim().is_empty() {
                return Err(Error::Dataset(format!("empty prior for class `{class}`")));
            }
            priors.push(ClassPrior {
                class_name: class.clone(),
                description,
                concepts,
                source: PriorSource::ExternalText,
            });
        }
        if let Some(unknown) = raw.keys().find(|k| !roster.contains(k)) {
            return Err(Error::UnknownClass(unknown.clone()));
        }
        Ok(Self::new(priors, PriorSource::ExternalText, 0.5))
    }
}

fn mentioned_concepts(description: &str, bank: &ConceptBank) -> Vec<String> {
    let hay = normalize(description);
    bank.concepts()
        .iter()
        .filter(|c| hay.contains(&normalize(&c.text)))
        .map(|c| c.text.clone())
        .collect()
}

pub fn render_usually_has(class_name: &str, concepts: &[String]) -> String {
    format!("{class_name} usually has: {}", join_list(concepts))
}

pub fn render_associated(class_name: &str, concepts: &[String]) -> String {
    format!(
        "{class_name} is usually associated with concepts including: {}",
        join_list(concepts)
    )
}

fn records_by_class<'a, F: Scalar>(
    records: &'a [ActivationRecord<F>],
    roster: &ClassRoster,
) -> Result<Vec<Vec<&'a ActivationRecord<F>>>> {
    let mut out = vec![Vec::new(); roster.len()];
    for r in records {
        let k = roster
            .index_of(&r.label)
            .ok_or_else(|| Error::UnknownClass(r.label.clone()))?;
        out[k].push(r);
    }
    for (k, rs) in out.iter().enumerate() {
        if rs.is_empty() {
            return Err(Error::MissingClassRecords(roster.names()[k].clone()));
        }
    }
    Ok(out)
}

/// Per-class count of records with each ground-truth concept set.
fn gt_counts<F: Scalar>(
    records: &[&ActivationRecord<F>],
    bank: &ConceptBank,
) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; bank.len()];
    for r in records {
        let gt = r
            .gt_concepts
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(r.example_id.clone()))?;
        if gt.len() != bank.len() {
            return Err(Error::LengthMismatch {
                expected: bank.len(),
                actual: gt.len(),
            });
        }
        for (c, &bit) in counts.iter_mut().zip(gt) {
            *c += usize::from(bit);
        }
    }
    Ok(counts)
}

/// Concepts whose ground-truth frequency within the class strictly
/// exceeds `threshold`, listed in concept id order.
pub fn build_prior_avg_concept<F: Scalar>(
    train: &[ActivationRecord<F>],
    bank: &ConceptBank,
    roster: &ClassRoster,
    threshold: f64,
) -> Result<PriorTable> {
    let grouped = records_by_class(train, roster)?;
    let mut priors = Vec::new();
    for (class, records) in roster.names().iter().zip(&grouped) {
        let counts = gt_counts(records, bank)?;
        let n = records.len() as f64;
        let concepts: Vec<String> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c as f64 / n > threshold)
            .map(|(i, _)| bank.concepts()[i].text.clone())
            .collect();
        priors.push(ClassPrior {
            class_name: class.clone(),
            description: render_usually_has(class, &concepts),
            concepts,
            source: PriorSource::AvgConcept,
        });
    }
    Ok(PriorTable::new(priors, PriorSource::AvgConcept, threshold))
}

/// For each class and concept group, the modal concept: "mostly" when its
/// frequency exceeds one half, otherwise annotated with its percentage.
pub fn build_prior_group_frequency<F: Scalar>(
    train: &[ActivationRecord<F>],
    bank: &ConceptBank,
    roster: &ClassRoster,
) -> Result<PriorTable> {
    let groups = bank.groups()?;
    let grouped = records_by_class(train, roster)?;
    let mut priors = Vec::new();
    for (class, records) in roster.names().iter().zip(&grouped) {
        let counts = gt_counts(records, bank)?;
        let n = records.len();
        let mut parts = Vec::new();
        let mut concepts = Vec::new();
        for (group, ids) in &groups {
            // ids are ascending, so the first maximum is the lowest id
            let modal = ids
                .iter()
                .copied()
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if counts[b] >= counts[i] => Some(b),
                    _ => Some(i),
                })
                .expect("groups are non-empty");
            let text = &bank.concepts()[modal].text;
            let count = counts[modal];
            if 2 * count > n {
                parts.push(format!("{group} is mostly {text}"));
            } else {
                let pct = (count * 100 + n / 2) / n;
                parts.push(format!("{group} is {text} ({pct}%)"));
            }
            concepts.push(text.clone());
        }
        priors.push(ClassPrior {
            class_name: class.clone(),
            description: format!("for {class}: {}", parts.join(", ")),
            concepts,
            source: PriorSource::GroupFrequency,
        });
    }
    Ok(PriorTable::new(priors, PriorSource::GroupFrequency, 0.5))
}

/// The `top_k` concepts that most often appear in the extracted semantics
/// of a class's validation records, most frequent first, ties to the
/// lower concept id.
pub fn build_prior_top_frequency<F: Scalar>(
    val: &[ActivationRecord<F>],
    bank: &ConceptBank,
    roster: &ClassRoster,
    top_k: usize,
    membership: &SemanticsRule,
) -> Result<PriorTable> {
    let grouped = records_by_class(val, roster)?;
    let mut priors = Vec::new();
    for (class, records) in roster.names().iter().zip(&grouped) {
        let mut counts = vec![0usize; bank.len()];
        for r in records {
            for text in membership.extract(&r.activations, bank)?.texts() {
                let id = bank.find(text).expect("extracted texts come from the bank");
                counts[id] += 1;
            }
        }
        let mut ids: Vec<usize> = (0..bank.len()).filter(|&i| counts[i] > 0).collect();
        ids.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        ids.truncate(top_k);
        let concepts: Vec<String> = ids.iter().map(|&i| bank.concepts()[i].text.clone()).collect();
        priors.push(ClassPrior {
            class_name: class.clone(),
            description: render_associated(class, &concepts),
            concepts,
            source: PriorSource::TopFrequency,
        });
    }
    Ok(PriorTable::new(priors, PriorSource::TopFrequency, 0.5))
}

/// Class-level concept bits, one row per class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassConceptTable {
    pub rows: BTreeMap<String, Vec<bool>>,
}

impl ClassConceptTable {
    /// Parses `class,bit,bit,...` rows. A first row starting with `class`
    /// is treated as a header.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let Some(class) = rec.get(0) else { continue };
            if i == 0 && class.eq_ignore_ascii_case("class") {
                continue;
            }
            let bits = rec
                .iter()
                .skip(1)
                .map(|b| match b {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::Dataset(format!(
                        "class table row {}: bit `{other}` is not 0 or 1",
                        i + 1
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.insert(class.to_string(), bits);
        }
        Ok(Self { rows })
    }
}

/// Priors taken directly from class-level concept annotations.
pub fn build_prior_class_level(
    table: &ClassConceptTable,
    bank: &ConceptBank,
    roster: &ClassRoster,
) -> Result<PriorTable> {
    let mut priors = Vec::new();
    for class in roster.names() {
        let row = table
            .rows
            .get(class)
            .ok_or_else(|| Error::MissingPrior(class.clone()))?;
        if row.len() != bank.len() {
            return Err(Error::LengthMismatch {
                expected: bank.len(),
                actual: row.len(),
            });
        }
        let concepts: Vec<String> = row
            .iter()
            .zip(bank.concepts())
            .filter(|(&b, _)| b)
            .map(|(_, c)| c.text.clone())
            .collect();
        priors.push(ClassPrior {
            class_name: class.clone(),
            description: render_associated(class, &concepts),
            concepts,
            source: PriorSource::ClassLevel,
        });
    }
    Ok(PriorTable::new(priors, PriorSource::ClassLevel, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Candidate;

    fn gt_rec(id: &str, label: &str, bits: &[u8]) -> ActivationRecord<f64> {
        ActivationRecord {
            example_id: id.into(),
            split: Split::Train,
            activations: bits.iter().map(|&b| b as f64).collect(),
            label: label.into(),
            gt_concepts: Some(bits.iter().map(|&b| b == 1).collect()),
        }
    }

    fn val_rec(id: &str, label: &str, acts: Vec<f64>) -> ActivationRecord<f64> {
        ActivationRecord {
            example_id: id.into(),
            split: Split::Val,
            activations: acts,
            label: label.into(),
            gt_concepts: None,
        }
    }

    fn cands(names: &[&str]) -> CandidateSet {
        CandidateSet::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| Candidate {
                    class_name: n.to_string(),
                    score: 1.0 - i as f64 * 0.1,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn avg_concept_thresholds_strictly() {
        let bank = ConceptBank::new("b", ["all", "half", "three", "none"]).unwrap();
        let roster = ClassRoster::new(["X"]).unwrap();
        let rows = [
            gt_rec("0", "X", &[1, 1, 1, 0]),
            gt_rec("1", "X", &[1, 1, 1, 0]),
            gt_rec("2", "X", &[1, 0, 1, 0]),
            gt_rec("3", "X", &[1, 0, 0, 0]),
        ];
        let t = build_prior_avg_concept(&rows, &bank, &roster, 0.5).unwrap();
        let p = t.get("X").unwrap();
        assert_eq!(p.concepts, ["all", "three"]);
        assert_eq!(p.description, "X usually has: all, three");
    }

    #[test]
    fn avg_concept_missing_class_errors() {
        let bank = ConceptBank::new("b", ["a"]).unwrap();
        let roster = ClassRoster::new(["X", "Y"]).unwrap();
        let rows = [gt_rec("0", "X", &[1])];
        assert!(matches!(
            build_prior_avg_concept(&rows, &bank, &roster, 0.5),
            Err(Error::MissingClassRecords(c)) if c == "Y"
        ));
    }

    fn pbc_bank() -> ConceptBank {
        let g = |t: &str, g: &str| (t.to_string(), Some(g.to_string()));
        ConceptBank::with_groups(
            "pbc",
            [
                g("small", "cell_size"),
                g("big", "cell_size"),
                g("round", "cell_shape"),
                g("oval", "cell_shape"),
                g("irregular", "cell_shape"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn group_frequency_qualifiers() {
        let bank = pbc_bank();
        let roster = ClassRoster::new(["Lymphocyte"]).unwrap();
        let mut rows = Vec::new();
        // cell_size: small in all 20; cell_shape: round 8, oval 7, irregular 5
        for i in 0..20 {
            let shape = if i < 8 {
                [1, 0, 0]
            } else if i < 15 {
                [0, 1, 0]
            } else {
                [0, 0, 1]
            };
            rows.push(gt_rec(&i.to_string(), "Lymphocyte", &[1, 0, shape[0], shape[1], shape[2]]));
        }
        let t = build_prior_group_frequency(&rows, &bank, &roster).unwrap();
        assert_eq!(
            t.get("Lymphocyte").unwrap().description,
            "for Lymphocyte: cell_size is mostly small, cell_shape is round (40%)"
        );
    }

    #[test]
    fn group_frequency_majority_is_mostly() {
        let bank = pbc_bank();
        let roster = ClassRoster::new(["B"]).unwrap();
        let rows: Vec<_> = (0..10)
            .map(|i| {
                let (s, b) = if i < 6 { (1, 0) } else { (0, 1) };
                gt_rec(&i.to_string(), "B", &[s, b, 1, 0, 0])
            })
            .collect();
        let t = build_prior_group_frequency(&rows, &bank, &roster).unwrap();
        assert!(t
            .get("B")
            .unwrap()
            .description
            .starts_with("for B: cell_size is mostly small"));
        let ungrouped = ConceptBank::new("x", ["a"]).unwrap();
        assert!(matches!(
            build_prior_group_frequency(&[gt_rec("0", "B", &[1])], &ungrouped, &roster),
            Err(Error::UngroupedConcept(_))
        ));
    }

    #[test]
    fn top_frequency_single_record_is_verbatim() {
        let bank = ConceptBank::new("b", (0..12).map(|i| format!("c{i}"))).unwrap();
        let roster = ClassRoster::new(["X"]).unwrap();
        let acts: Vec<f64> = (0..12).map(|i| (i as f64) / 12.0).collect();
        let rule = SemanticsRule::for_path(crate::model::ConceptPath::Unsupervised);
        let t = build_prior_top_frequency(&[val_rec("v", "X", acts.clone())], &bank, &roster, 10, &rule)
            .unwrap();
        let expected: Vec<String> = rule.extract(&acts, &bank).unwrap().texts().map(String::from).collect();
        let mut got = t.get("X").unwrap().concepts.clone();
        let mut exp_sorted = expected.clone();
        got.sort();
        exp_sorted.sort();
        assert_eq!(got, exp_sorted);
    }

    #[test]
    fn class_level_rendering() {
        let bank = ConceptBank::new("awa", ["furry", "big", "stripes"]).unwrap();
        let roster = ClassRoster::new(["antelope", "mole"]).unwrap();
        let table =
            ClassConceptTable::from_csv_reader("class,furry,big,stripes\nantelope,1,1,0\nmole,0,0,0\n".as_bytes())
                .unwrap();
        let t = build_prior_class_level(&table, &bank, &roster).unwrap();
        assert_eq!(
            t.get("antelope").unwrap().description,
            "antelope is usually associated with concepts including: furry, big"
        );
        assert_eq!(
            t.get("mole").unwrap().description,
            "mole is usually associated with concepts including: "
        );
        let missing = ClassConceptTable::from_csv_reader("antelope,1,1,0\n".as_bytes()).unwrap();
        assert!(build_prior_class_level(&missing, &bank, &roster).is_err());
    }

    #[test]
    fn demonstrations_zero_shot_and_layout() {
        let bank = ConceptBank::new("b", ["a", "b"]).unwrap();
        let roster = ClassRoster::new(["X", "Y", "Z"]).unwrap();
        let mut val = Vec::new();
        for i in 0..5 {
            val.push(val_rec(&format!("x{i}"), "X", vec![0.9, 0.1]));
            val.push(val_rec(&format!("y{i}"), "Y", vec![0.1, 0.9]));
        }
        let req = DemoRequest::<f64> {
            k: 0,
            seed: 1,
            instruction: DEFAULT_INSTRUCTION,
            rule: SemanticsRule::default(),
            hint_probe: None,
        };
        let d = select_demonstrations(&cands(&["Y", "X"]), &val, &bank, &roster, &req).unwrap();
        assert!(d.shots.is_empty());
        assert_eq!(d.instruction, DEFAULT_INSTRUCTION);

        let req = DemoRequest { k: 2, ..req };
        let d = select_demonstrations(&cands(&["Y", "X"]), &val, &bank, &roster, &req).unwrap();
        let labels: Vec<_> = d.shots.iter().map(|s| s.class_name.as_str()).collect();
        assert_eq!(labels, ["Y", "Y", "X", "X"]);
        let again = select_demonstrations(&cands(&["Y", "X"]), &val, &bank, &roster, &req).unwrap();
        assert_eq!(d, again);

        // pool smaller than k: take what exists
        let d = select_demonstrations(&cands(&["Z", "X"]), &val, &bank, &roster, &req).unwrap();
        assert_eq!(d.shots.len(), 2);

        assert!(matches!(
            select_demonstrations(&cands(&["Q"]), &val, &bank, &roster, &req),
            Err(Error::UnknownClass(_))
        ));
        let mut leaky = val.clone();
        leaky[0].split = Split::Test;
        assert!(select_demonstrations(&cands(&["X"]), &leaky, &bank, &roster, &req).is_err());
    }

    #[test]
    fn prior_json_round_trip() {
        let bank = ConceptBank::new("b", ["hooked bill", "grey underparts", "red"]).unwrap();
        let roster = ClassRoster::new(["albatross"]).unwrap();
        let rows = [gt_rec("0", "albatross", &[1, 1, 0])];
        let t = build_prior_avg_concept(&rows, &bank, &roster, 0.5).unwrap();
        let json = serde_json::to_string(&t.to_json()).unwrap();
        assert_eq!(json, r#"{"albatross":"albatross usually has: hooked bill, grey underparts"}"#);
        let back = PriorTable::from_json_reader(json.as_bytes(), &roster, Some(&bank)).unwrap();
        assert_eq!(back.get("albatross").unwrap().concepts, ["hooked bill", "grey underparts"]);
        let unknown = r#"{"penguin":"x"}"#;
        assert!(PriorTable::from_json_reader(unknown.as_bytes(), &roster, None).is_err());
    }

    #[test]
    fn restrict_follows_candidate_order() {
        let bank = ConceptBank::new("b", ["a"]).unwrap();
        let roster = ClassRoster::new(["X", "Y"]).unwrap();
        let rows = [gt_rec("0", "X", &[1]), gt_rec("1", "Y", &[0])];
        let t = build_prior_avg_concept(&rows, &bank, &roster, 0.5).unwrap();
        let r = t.restrict(&cands(&["Y", "X"])).unwrap();
        let names: Vec<_> = r.priors().iter().map(|p| p.class_name.as_str()).collect();
        assert_eq!(names, ["Y", "X"]);
        assert!(t.restrict(&cands(&["Z"])).is_err());
    }
}
