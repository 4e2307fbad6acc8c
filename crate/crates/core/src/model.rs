//! Shared domain types: concept banks, activation records, semantic sets,
//! candidate sets, class priors and interactive session state.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::normalize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

/// Ordered concept vocabulary. Concept ids are list positions and define the
/// index space of every activation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBank", into = "RawBank")]
pub struct ConceptBank {
    name: String,
    concepts: Vec<Concept>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawBank {
    #[serde(default)]
    name: String,
    concepts: Vec<RawConcept>,
}

#[derive(Serialize, Deserialize)]
struct RawConcept {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<String>,
}

impl TryFrom<RawBank> for ConceptBank {
    type Error = Error;

    fn try_from(raw: RawBank) -> Result<Self> {
        ConceptBank::with_groups(
            raw.name,
            raw.concepts.into_iter().map(|c| (c.text, c.group)),
        )
    }
}

impl From<ConceptBank> for RawBank {
    fn from(bank: ConceptBank) -> Self {
        RawBank {
            name: bank.name,
            concepts: bank
                .concepts
                .into_iter()
                .map(|c| RawConcept {
                    text: c.text,
                    group: c.group,
                })
                .collect(),
        }
    }
}

impl ConceptBank {
    pub fn new<I, S>(name: impl Into<String>, texts: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_groups(name, texts.into_iter().map(|t| (t.into(), None)))
    }

    pub fn with_groups<I>(name: impl Into<String>, concepts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Option<String>)>,
    {
        let mut lookup = HashMap::new();
        let mut list = Vec::new();
        for (id, (text, group)) in concepts.into_iter().enumerate() {
            let key = normalize(&text);
            if key.is_empty() {
                return Err(Error::InvalidBank(format!("concept {id} has empty text")));
            }
            if lookup.insert(key, id).is_some() {
                return Err(Error::InvalidBank(format!("duplicate concept text `{text}`")));
            }
            list.push(Concept { id, text, group });
        }
        if list.is_empty() {
            return Err(Error::InvalidBank("bank has no concepts".into()));
        }
        Ok(Self {
            name: name.into(),
            concepts: list,
            lookup,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn text(&self, id: usize) -> Option<&str> {
        self.concepts.get(id).map(|c| c.text.as_str())
    }

    /// Looks a concept up by whitespace/case-normalized text.
    pub fn find(&self, text: &str) -> Option<usize> {
        self.lookup.get(&normalize(text)).copied()
    }

    /// Concept groups in order of first appearance, each with its member ids
    /// in concept id order. Fails if any concept lacks a group tag.
    pub fn groups(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        for c in &self.concepts {
            let group = c
                .group
                .as_ref()
                .ok_or_else(|| Error::UngroupedConcept(c.text.clone()))?;
            match order.iter_mut().find(|(g, _)| g == group) {
                Some((_, ids)) => ids.push(c.id),
                None => order.push((group.clone(), vec![c.id])),
            }
        }
        Ok(order)
    }

    pub fn has_groups(&self) -> bool {
        self.concepts.iter().all(|c| c.group.is_some())
    }

    /// The bank restricted to its first `n` concepts.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidBank(format!(
                "prefix of {n} concepts from a bank of {}",
                self.len()
            )));
        }
        Self::with_groups(
            format!("{}[..{n}]", self.name),
            self.concepts[..n]
                .iter()
                .map(|c| (c.text.clone(), c.group.clone())),
        )
    }
}

/// Which kind of concept extractor produced the activations. Determines the
/// valid activation range and how semantics are read off a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConceptPath {
    /// Probabilities from a trained concept predictor, in `[0, 1]`.
    #[default]
    Supervised,
    /// Image/text cosine similarities, in `[-1, 1]`.
    Unsupervised,
}

impl ConceptPath {
    pub fn range(self) -> (f64, f64) {
        match self {
            ConceptPath::Supervised => (0.0, 1.0),
            ConceptPath::Unsupervised => (-1.0, 1.0),
        }
    }

    pub fn contains(self, value: f64) -> bool {
        let (lo, hi) = self.range();
        (lo..=hi).contains(&value)
    }
}

impl std::str::FromStr for ConceptPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Self::Supervised),
            "unsupervised" => Ok(Self::Unsupervised),
            other => Err(Error::Config(format!("unknown concept path `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ActivationRecord<F> {
    pub example_id: String,
    pub split: Split,
    pub activations: Vec<F>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "bits")]
    pub gt_concepts: Option<Vec<bool>>,
}

mod bits {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<bool>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|bits| bits.iter().map(|&b| u8::from(b)).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<bool>>, D::Error> {
        let raw: Option<Vec<u8>> = Option::deserialize(d)?;
        raw.map(|bits| {
            bits.into_iter()
                .map(|b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(serde::de::Error::custom(format!(
                        "concept bit must be 0 or 1, got {other}"
                    ))),
                })
                .collect()
        })
        .transpose()
    }
}

/// Class names in roster order, with a name-to-index map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassRoster {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for ClassRoster {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        ClassRoster::new(names)
    }
}

impl From<ClassRoster> for Vec<String> {
    fn from(r: ClassRoster) -> Self {
        r.names
    }
}

impl ClassRoster {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Empty("class roster"));
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(Error::Dataset(format!("class {i} has an empty name")));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate class `{n}`")));
            }
        }
        Ok(Self { names, index })
    }

    /// Roster of the distinct labels in order of first appearance.
    pub fn from_labels<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> Result<Self> {
        let mut seen = Vec::<String>::new();
        for l in labels {
            if !seen.iter().any(|s| s == l) {
                seen.push(l.to_string());
            }
        }
        Self::new(seen)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Decoded,
    UserAdded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticEntry {
    pub text: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

/// Concept semantics the language classifier reasons over, plus the texts
/// an intervention has suppressed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SemanticSet {
    entries: Vec<SemanticEntry>,
    #[serde(default)]
    removed: Vec<String>,
}

impl SemanticSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push_decoded(&mut self, text: &str, weight: f64) {
        debug_assert!(!self.contains(text));
        self.entries.push(SemanticEntry {
            text: text.to_string(),
            provenance: Provenance::Decoded,
            weight: Some(weight),
        });
    }

    pub fn entries(&self) -> &[SemanticEntry] {
        &self.entries
    }

    pub fn removed(&self) -> &[String] {
        &self.removed
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.text.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, text: &str) -> bool {
        let key = normalize(text);
        self.entries.iter().any(|e| normalize(&e.text) == key)
    }

    pub fn is_removed(&self, text: &str) -> bool {
        let key = normalize(text);
        self.removed.iter().any(|r| normalize(r) == key)
    }

    /// Adds a user-supplied concept. Re-adding a previously removed text
    /// lifts the removal.
    pub fn add_user(&mut self, text: &str) -> Result<()> {
        if normalize(text).is_empty() {
            return Err(Error::InvalidIntervention("empty concept text".into()));
        }
        if self.contains(text) {
            return Err(Error::InvalidIntervention(format!(
                "concept `{text}` is already present"
            )));
        }
        let key = normalize(text);
        self.removed.retain(|r| normalize(r) != key);
        self.entries.push(SemanticEntry {
            text: text.to_string(),
            provenance: Provenance::UserAdded,
            weight: None,
        });
        Ok(())
    }

    /// Suppresses a concept. Returns whether it was present.
    pub fn remove(&mut self, text: &str) -> bool {
        let key = normalize(text);
        let before = self.entries.len();
        self.entries.retain(|e| normalize(&e.text) != key);
        if !self.is_removed(text) {
            self.removed.push(text.to_string());
        }
        before != self.entries.len()
    }

    /// Replaces the decoded entries with `decoded`, keeping this set's
    /// removals and user-added entries.
    pub fn rebase(&self, decoded: SemanticSet) -> SemanticSet {
        let mut next = SemanticSet {
            entries: Vec::new(),
            removed: self.removed.clone(),
        };
        for e in decoded.entries {
            if !next.is_removed(&e.text) {
                next.entries.push(e);
            }
        }
        for e in &self.entries {
            if e.provenance == Provenance::UserAdded && !next.contains(&e.text) {
                next.entries.push(e.clone());
            }
        }
        next
    }

    pub(crate) fn check_invariants(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .all(|e| seen.insert(normalize(&e.text)) && !self.is_removed(&e.text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub class_name: String,
    pub score: f64,
}

/// Top-N class candidates in non-increasing score order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Candidate>", into = "Vec<Candidate>")]
pub struct CandidateSet {
    candidates: Vec<Candidate>,
}

impl TryFrom<Vec<Candidate>> for CandidateSet {
    type Error = Error;

    fn try_from(v: Vec<Candidate>) -> Result<Self> {
        CandidateSet::new(v)
    }
}

impl From<CandidateSet> for Vec<Candidate> {
    fn from(c: CandidateSet) -> Self {
        c.candidates
    }
}

impl CandidateSet {
    pub fn new(candidates: Vec<Candidate>) -> Result<Self> {
        for pair in candidates.windows(2) {
            if pair[1].score > pair[0].score {
                return Err(Error::Dataset(format!(
                    "candidate scores increase from `{}` to `{}`",
                    pair[0].class_name, pair[1].class_name
                )));
            }
        }
        for (i, c) in candidates.iter().enumerate() {
            if candidates[..i].iter().any(|p| p.class_name == c.class_name) {
                return Err(Error::Dataset(format!("duplicate candidate `{}`", c.class_name)));
            }
        }
        Ok(Self { candidates })
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.class_name.as_str())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, class_name: &str) -> bool {
        self.candidates.iter().any(|c| c.class_name == class_name)
    }

    pub fn rank_of(&self, class_name: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c.class_name == class_name)
    }

    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    AvgConcept,
    ClassLevel,
    GroupFrequency,
    TopFrequency,
    ExternalText,
}

/// Per-class description of typical concepts.
///
/// `concepts` lists the concept texts the description mentions; the stub
/// backend scores overlap against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub class_name: String,
    pub description: String,
    #[serde(default)]
    pub concepts: Vec<String>,
    pub source: PriorSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterventionAction {
    SetScore { concept_id: usize, value: f64 },
    CorrectText { text: String },
    AddConcept { text: String },
    RemoveConcept { text: String },
    StrategyGuidance { text: String },
    ExternalDescription { text: String },
}

impl InterventionAction {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::SetScore { .. } => "set_score",
            Self::CorrectText { .. } => "correct_text",
            Self::AddConcept { .. } => "add_concept",
            Self::RemoveConcept { .. } => "remove_concept",
            Self::StrategyGuidance { .. } => "strategy_guidance",
            Self::ExternalDescription { .. } => "external_description",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_name: Option<String>,
    pub raw: String,
    pub parse_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<String>,
}

/// One interactive prediction episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct SessionState<F> {
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_id: Option<String>,
    pub activations: Vec<F>,
    pub semantics: SemanticSet,
    pub candidates: CandidateSet,
    /// Conversation turns carried into later prompts. Append-only.
    pub history: Vec<ChatMessage>,
    pub intervention_log: Vec<InterventionAction>,
    pub last_prediction: Option<Prediction>,
    /// Exact messages sent on the last classification, followed by the reply.
    #[serde(default)]
    pub last_transcript: Vec<ChatMessage>,
}

impl<F: Scalar> SessionState<F> {
    pub fn new(
        session_id: impl Into<String>,
        activations: Vec<F>,
        semantics: SemanticSet,
        candidates: CandidateSet,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            example_id: None,
            activations,
            semantics,
            candidates,
            history: Vec::new(),
            intervention_log: Vec::new(),
            last_prediction: None,
            last_transcript: Vec::new(),
        }
    }

    pub fn semantics_consistent(&self) -> bool {
        self.semantics.check_invariants()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    LengthMismatch { expected: usize, actual: usize },
    OutOfRange { concept_id: usize, value: f64 },
    NonFinite { concept_id: usize },
    UnknownLabel { label: String },
    GtLengthMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub example_id: String,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::LengthMismatch { expected, actual } => write!(
                f,
                "{}: activations length {actual}, expected {expected}",
                self.example_id
            ),
            ViolationKind::OutOfRange { concept_id, value } => write!(
                f,
                "{}: concept {concept_id} activation {value} out of range",
                self.example_id
            ),
            ViolationKind::NonFinite { concept_id } => {
                write!(f, "{}: concept {concept_id} activation is not finite", self.example_id)
            }
            ViolationKind::UnknownLabel { label } => {
                write!(f, "{}: label `{label}` not in roster", self.example_id)
            }
            ViolationKind::GtLengthMismatch { expected, actual } => write!(
                f,
                "{}: gt_concepts length {actual}, expected {expected}",
                self.example_id
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scans records for length mismatches, activations outside the path's
/// range and labels missing from the roster.
pub fn validate_dataset<F: Scalar>(
    bank: &ConceptBank,
    records: &[ActivationRecord<F>],
    roster: &ClassRoster,
    path: ConceptPath,
) -> ValidationReport {
    let mut violations = Vec::new();
    let n = bank.len();
    for r in records {
        let mut push = |kind| {
            violations.push(Violation {
                example_id: r.example_id.clone(),
                kind,
            })
        };
        if r.activations.len() != n {
            push(ViolationKind::LengthMismatch {
                expected: n,
                actual: r.activations.len(),
            });
        } else {
            for (concept_id, &a) in r.activations.iter().enumerate() {
                let v = a.as_f64();
                if !v.is_finite() {
                    push(ViolationKind::NonFinite { concept_id });
                } else if !path.contains(v) {
                    push(ViolationKind::OutOfRange { concept_id, value: v });
                }
            }
        }
        if let Some(gt) = &r.gt_concepts {
            if gt.len() != n {
                push(ViolationKind::GtLengthMismatch {
                    expected: n,
                    actual: gt.len(),
                });
            }
        }
        if !roster.contains(&r.label) {
            push(ViolationKind::UnknownLabel {
                label: r.label.clone(),
            });
        }
    }
    ValidationReport { violations }
}

/// A validated bank, roster and record collection.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    pub bank: ConceptBank,
    pub roster: ClassRoster,
    pub path: ConceptPath,
    pub records: Vec<ActivationRecord<F>>,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(
        bank: ConceptBank,
        roster: ClassRoster,
        path: ConceptPath,
        records: Vec<ActivationRecord<F>>,
    ) -> Result<Self> {
        let report = validate_dataset(&bank, &records, &roster, path);
        if !report.is_valid() {
            return Err(Error::Validation(report));
        }
        Ok(Self {
            bank,
            roster,
            path,
            records,
        })
    }

    pub fn split(&self, split: Split) -> Vec<ActivationRecord<F>> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .cloned()
            .collect()
    }

    pub fn find(&self, example_id: &str) -> Option<&ActivationRecord<F>> {
        self.records.iter().find(|r| r.example_id == example_id)
    }

    /// Records per class label, in roster order.
    pub fn by_class(&self, split: Split) -> BTreeMap<usize, Vec<&ActivationRecord<F>>> {
        let mut out: BTreeMap<usize, Vec<_>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.split == split) {
            if let Some(i) = self.roster.index_of(&r.label) {
                out.entry(i).or_default().push(r);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank3() -> ConceptBank {
        ConceptBank::new("t", ["a", "b", "c"]).unwrap()
    }

    fn rec(id: &str, acts: Vec<f64>, label: &str) -> ActivationRecord<f64> {
        ActivationRecord {
            example_id: id.into(),
            split: Split::Test,
            activations: acts,
            label: label.into(),
            gt_concepts: None,
        }
    }

    #[test]
    fn bank_rejects_duplicates_after_normalization() {
        let err = ConceptBank::new("t", ["Red  Wing", "red wing"]).unwrap_err();
        assert!(matches!(err, Error::InvalidBank(_)));
        assert!(ConceptBank::new("t", Vec::<String>::new()).is_err());
        assert!(ConceptBank::new("t", ["  "]).is_err());
    }

    #[test]
    fn bank_find_is_normalized_and_display_preserved() {
        let b = ConceptBank::new("t", ["Hooked  Bill", "grey"]).unwrap();
        assert_eq!(b.find("hooked bill"), Some(0));
        assert_eq!(b.text(0), Some("Hooked  Bill"));
    }

    #[test]
    fn well_formed_dataset_has_empty_report() {
        let roster = ClassRoster::new(["x", "y"]).unwrap();
        let r = validate_dataset(
            &bank3(),
            &[rec("e0", vec![0.1, 0.5, 1.0], "x")],
            &roster,
            ConceptPath::Supervised,
        );
        assert!(r.is_valid());
    }

    #[test]
    fn length_mismatch_reported_once() {
        let roster = ClassRoster::new(["x"]).unwrap();
        let r = validate_dataset(
            &bank3(),
            &[rec("e0", vec![0.1, 0.5], "x")],
            &roster,
            ConceptPath::Supervised,
        );
        assert_eq!(r.violations.len(), 1);
        assert_eq!(
            r.violations[0].kind,
            ViolationKind::LengthMismatch {
                expected: 3,
                actual: 2
            }
        );
    }

    #[test]
    fn range_violation_names_record_and_concept() {
        let roster = ClassRoster::new(["x"]).unwrap();
        let records = [rec("e7", vec![0.0, 1.2, 0.3], "x")];
        let r = validate_dataset(&bank3(), &records, &roster, ConceptPath::Supervised);
        // direct scan: only index 1 leaves [0, 1]
        let expected: Vec<usize> = records[0]
            .activations
            .iter()
            .enumerate()
            .filter(|(_, v)| !(0.0..=1.0).contains(*v))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(expected, vec![1]);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].example_id, "e7");
        assert_eq!(
            r.violations[0].kind,
            ViolationKind::OutOfRange {
                concept_id: 1,
                value: 1.2
            }
        );
        // the same vector is fine on the cosine path
        let r = validate_dataset(&bank3(), &records, &roster, ConceptPath::Unsupervised);
        assert_eq!(r.violations.len(), 1);
        let ok = [rec("e8", vec![-0.5, 1.0, 0.3], "x")];
        assert!(validate_dataset(&bank3(), &ok, &roster, ConceptPath::Unsupervised).is_valid());
    }

    #[test]
    fn unknown_label_reported() {
        let roster = ClassRoster::new(["x"]).unwrap();
        let r = validate_dataset(
            &bank3(),
            &[rec("e0", vec![0.0; 3], "z")],
            &roster,
            ConceptPath::Supervised,
        );
        assert_eq!(
            r.violations[0].kind,
            ViolationKind::UnknownLabel { label: "z".into() }
        );
    }

    #[test]
    fn candidate_set_rejects_increasing_scores() {
        let c = |n: &str, s| Candidate {
            class_name: n.into(),
            score: s,
        };
        assert!(CandidateSet::new(vec![c("a", 0.2), c("b", 0.5)]).is_err());
        assert!(CandidateSet::new(vec![c("a", 0.5), c("a", 0.2)]).is_err());
        assert!(CandidateSet::new(vec![c("a", 0.5), c("b", 0.5)]).is_ok());
    }

    #[test]
    fn semantic_set_removal_and_readd() {
        let mut s = SemanticSet::new();
        s.push_decoded("forest", 0.9);
        assert!(s.remove("Forest"));
        assert!(!s.contains("forest"));
        assert!(s.is_removed("forest"));
        assert!(s.check_invariants());
        s.add_user("forest").unwrap();
        assert!(!s.is_removed("forest"));
        assert!(s.add_user(" FOREST ").is_err());
        assert!(s.check_invariants());
    }

    #[test]
    fn rebase_keeps_user_entries_and_removals() {
        let mut s = SemanticSet::new();
        s.push_decoded("a", 0.9);
        s.push_decoded("b", 0.8);
        s.remove("b");
        s.add_user("crest").unwrap();
        let mut fresh = SemanticSet::new();
        fresh.push_decoded("b", 0.7);
        fresh.push_decoded("c", 0.6);
        let next = s.rebase(fresh);
        let texts: Vec<_> = next.texts().collect();
        assert_eq!(texts, ["c", "crest"]);
        assert!(next.check_invariants());
    }

    #[test]
    fn record_json_shape() {
        let line = r#"{"example_id":"e1","split":"val","activations":[0.2,0.9],"label":"x","gt_concepts":[0,1]}"#;
        let r: ActivationRecord<f64> = serde_json::from_str(line).unwrap();
        assert_eq!(r.gt_concepts, Some(vec![false, true]));
        assert_eq!(serde_json::to_string(&r).unwrap(), line);
        let bad = r#"{"example_id":"e1","split":"val","activations":[],"label":"x","gt_concepts":[2]}"#;
        assert!(serde_json::from_str::<ActivationRecord<f64>>(bad).is_err());
    }

    #[test]
    fn groups_in_first_appearance_order() {
        let b = ConceptBank::with_groups(
            "g",
            [
                ("small".to_string(), Some("cell_size".to_string())),
                ("round".to_string(), Some("cell_shape".to_string())),
                ("big".to_string(), Some("cell_size".to_string())),
            ],
        )
        .unwrap();
        let g = b.groups().unwrap();
        assert_eq!(g[0], ("cell_size".to_string(), vec![0, 2]));
        assert_eq!(g[1], ("cell_shape".to_string(), vec![1]));
        assert!(bank3().groups().is_err());
    }
}
