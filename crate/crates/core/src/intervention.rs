//! Numerical, conversational and automated interventions on a session, and
//! the batch intervention curves built on them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::classifier::{parse_response, Backend, CompletionRequest};
use crate::error::{BackendError, Error, Result};
use crate::extraction::rank_concepts;
use crate::model::{
    ActivationRecord, ChatMessage, ClassRoster, ConceptBank, InterventionAction, Prediction, Role,
    SessionState,
};
use crate::pipeline::Pipeline;
use crate::probe::ProbeModel;
use crate::scalar::Scalar;
use crate::text::normalize;

pub const EXTERNAL_PREFIX: &str = "In addition, we also know that";
pub const EXTERNAL_SUFFIX: &str =
    "Answer again by considering the previous message and the new information.";

/// Wraps an external class description in the re-query template.
pub fn external_description_prompt(description: &str) -> String {
    let body = description.trim().trim_end_matches('.');
    format!("{EXTERNAL_PREFIX} {body}. {EXTERNAL_SUFFIX}")
}

/// The user turn an action adds to the conversation.
pub fn intervention_message(action: &InterventionAction) -> Option<String> {
    match action {
        InterventionAction::SetScore { .. } => None,
        InterventionAction::CorrectText { text } | InterventionAction::StrategyGuidance { text } => {
            Some(text.clone())
        }
        InterventionAction::AddConcept { text } => {
            Some(format!("The image also has the concept: {text}."))
        }
        InterventionAction::RemoveConcept { text } => {
            Some(format!("Ignore the concept {text} during analysis."))
        }
        InterventionAction::ExternalDescription { text } => Some(external_description_prompt(text)),
    }
}

/// Overwrites concept activations, then recomputes semantics and
/// candidates. History is left alone; each edit is logged.
pub fn apply_numerical<F: Scalar>(
    session: &mut SessionState<F>,
    edits: &[(usize, f64)],
    pipeline: &Pipeline<F>,
) -> Result<()> {
    let (lo, hi) = pipeline.config.rule.path.range();
    for &(concept_id, value) in edits {
        if concept_id >= session.activations.len() {
            return Err(Error::UnknownConcept(concept_id));
        }
        if !(lo..=hi).contains(&value) {
            return Err(Error::OutOfRange {
                concept_id,
                value,
                min: lo,
                max: hi,
            });
        }
    }
    for &(concept_id, value) in edits {
        session.activations[concept_id] = F::of(value);
        session
            .intervention_log
            .push(InterventionAction::SetScore { concept_id, value });
    }
    let decoded = pipeline.semantics(&session.activations)?;
    session.semantics = session.semantics.rebase(decoded);
    session.candidates = pipeline.candidates(&session.activations)?;
    debug_assert!(session.semantics_consistent());
    Ok(())
}

/// Applies a language-level intervention and re-classifies. The session
/// is only updated if the whole step succeeds.
pub fn apply_conversational<F: Scalar, B: Backend + ?Sized>(
    session: &mut SessionState<F>,
    action: InterventionAction,
    pipeline: &Pipeline<F>,
    backend: &B,
) -> Result<Prediction> {
    if session.last_prediction.is_none() {
        return Err(Error::InvalidIntervention(
            "session has no prediction to intervene on".into(),
        ));
    }
    let mut next = session.clone();
    match &action {
        InterventionAction::SetScore { .. } => {
            return Err(Error::InvalidIntervention(
                "set_score is a numerical intervention".into(),
            ))
        }
        InterventionAction::AddConcept { text } => next.semantics.add_user(text)?,
        InterventionAction::RemoveConcept { text } => {
            if !next.semantics.remove(text) {
                log::warn!("removed concept `{text}` was not among the current semantics");
            }
        }
        InterventionAction::CorrectText { text }
        | InterventionAction::StrategyGuidance { text }
        | InterventionAction::ExternalDescription { text } => {
            if text.trim().is_empty() {
                return Err(Error::InvalidIntervention("empty intervention text".into()));
            }
        }
    }
    let message = intervention_message(&action).expect("conversational actions carry text");
    next.history.push(ChatMessage::user(message));
    next.intervention_log.push(action);
    let prediction = pipeline.predict(&mut next, backend)?;
    debug_assert!(next.semantics_consistent());
    *session = next;
    Ok(prediction)
}

/// Replaces class names in free text with generic terms before the text is
/// shown to the classifier.
#[derive(Debug, Clone)]
pub struct ClassMasking {
    patterns: Vec<(Regex, String)>,
}

impl ClassMasking {
    /// `terms` maps class names to their replacement. Names match
    /// case-insensitively, with spaces, hyphens and underscores
    /// interchangeable.
    pub fn new(terms: &BTreeMap<String, String>) -> Result<Self> {
        let mut entries: Vec<(&String, &String)> = terms.iter().collect();
        // longer names first so "Common Yellowthroat" wins over "Yellowthroat"
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));
        let mut patterns = Vec::new();
        for (name, term) in entries {
            let parts: Vec<String> = name
                .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
                .filter(|p| !p.is_empty())
                .map(regex::escape)
                .collect();
            if parts.is_empty() {
                continue;
            }
            let re = RegexBuilder::new(&parts.join(r"[\s_\-]+"))
                .case_insensitive(true)
                .build()
                .map_err(|e| Error::Config(format!("bad mask for `{name}`: {e}")))?;
            if re.is_match(term) {
                return Err(Error::Config(format!(
                    "mask term `{term}` contains the class name `{name}`"
                )));
            }
            patterns.push((re, term.clone()));
        }
        Ok(Self { patterns })
    }

    /// The same generic term for every roster class.
    pub fn uniform(roster: &ClassRoster, term: &str) -> Result<Self> {
        Self::new(
            &roster
                .names()
                .iter()
                .map(|n| (n.clone(), term.to_string()))
                .collect(),
        )
    }

    pub fn apply(&self, text: &str) -> String {
        let mut out = text.to_string();
        // a replacement can splice a new occurrence together; iterate to a fixpoint
        for _ in 0..8 {
            let mut changed = false;
            for (re, term) in &self.patterns {
                if re.is_match(&out) {
                    out = re.replace_all(&out, term.as_str()).into_owned();
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        out
    }
}

/// Masks class names in `description` and injects it as an external
/// knowledge turn.
pub fn apply_external_description<F: Scalar, B: Backend + ?Sized>(
    session: &mut SessionState<F>,
    description: &str,
    masking: &ClassMasking,
    pipeline: &Pipeline<F>,
    backend: &B,
) -> Result<Prediction> {
    if description.trim().is_empty() {
        return Err(Error::InvalidIntervention("empty description".into()));
    }
    apply_conversational(
        session,
        InterventionAction::ExternalDescription {
            text: masking.apply(description),
        },
        pipeline,
        backend,
    )
}

pub const ASSISTANT_INSTRUCTION: &str = "You help a concept-based image classifier reach the \
correct class. Given its conversation, its predicted concepts and the ground-truth class, choose \
exactly one edit: emphasize a predicted concept, remove a predicted concept, or augment the \
concepts with one known concept of the ground-truth class. Reply as <action: emphasize|remove|augment> \
<concept: concept text>.";

#[derive(Debug, Clone, PartialEq)]
pub struct AssistantContext {
    pub gt_label: String,
    pub gt_prior: Vec<String>,
    pub current: Vec<String>,
    /// Top activated concepts with their activation.
    pub pool: Vec<(String, f64)>,
    pub prediction: Option<String>,
    pub history: Vec<ChatMessage>,
}

impl AssistantContext {
    pub fn render(&self) -> Vec<ChatMessage> {
        let mut s = String::new();
        s.push_str(&format!("Ground-truth class: {}\n", self.gt_label));
        s.push_str(&format!(
            "Current prediction: {}\n",
            self.prediction.as_deref().unwrap_or("(none)")
        ));
        s.push_str(&format!("Known concepts of {}:\n", self.gt_label));
        for c in &self.gt_prior {
            s.push_str(&format!("- {c}\n"));
        }
        s.push_str("Current concepts:\n");
        for c in &self.current {
            s.push_str(&format!("- {c}\n"));
        }
        s.push_str("Top predicted concepts:\n");
        for (c, w) in &self.pool {
            s.push_str(&format!("- [{w:.4}] {c}\n"));
        }
        s.push_str("Conversation so far:\n");
        for m in &self.history {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            s.push_str(&format!("{role}: {}\n", m.content.replace('\n', " ")));
        }
        vec![ChatMessage::system(ASSISTANT_INSTRUCTION), ChatMessage::user(s)]
    }

    /// Inverse of [`render`](Self::render) for the user message.
    pub fn parse(text: &str) -> Option<Self> {
        let mut gt_label = None;
        let mut prediction = None;
        let mut gt_prior = Vec::new();
        let mut current = Vec::new();
        let mut pool = Vec::new();
        let mut section = "";
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("Ground-truth class: ") {
                gt_label = Some(rest.to_string());
            } else if let Some(rest) = line.strip_prefix("Current prediction: ") {
                prediction = (rest != "(none)").then(|| rest.to_string());
            } else if line.starts_with("Known concepts of ") {
                section = "prior";
            } else if line == "Current concepts:" {
                section = "current";
            } else if line == "Top predicted concepts:" {
                section = "pool";
            } else if line == "Conversation so far:" {
                section = "history";
            } else if let Some(item) = line.strip_prefix("- ") {
                match section {
                    "prior" => gt_prior.push(item.to_string()),
                    "current" => current.push(item.to_string()),
                    "pool" => {
                        let (w, c) = item.strip_prefix('[')?.split_once("] ")?;
                        pool.push((c.to_string(), w.parse().ok()?));
                    }
                    _ => {}
                }
            }
        }
        Some(Self {
            gt_label: gt_label?,
            gt_prior,
            current,
            pool,
            prediction,
            history: Vec::new(),
        })
    }
}

/// Deterministic assistant: augments with missing ground-truth concepts,
/// then removes predicted concepts foreign to the ground truth, then
/// emphasizes ground-truth concepts.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedAssistant;

impl Backend for ScriptedAssistant {
    fn complete(&self, request: &CompletionRequest<'_>) -> std::result::Result<String, BackendError> {
        let user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| BackendError::Malformed("no user message".into()))?;
        let ctx = AssistantContext::parse(&user.content)
            .ok_or_else(|| BackendError::Malformed("unrecognized assistant prompt".into()))?;
        let has = |list: &[String], t: &str| list.iter().any(|c| normalize(c) == normalize(t));
        let pick = if let Some(c) = ctx.gt_prior.iter().find(|c| !has(&ctx.current, c)) {
            ("augment", c.clone())
        } else if let Some((c, _)) = ctx
            .pool
            .iter()
            .find(|(c, _)| has(&ctx.current, c) && !has(&ctx.gt_prior, c))
        {
            ("remove", c.clone())
        } else if let Some((c, _)) = ctx.pool.iter().find(|(c, _)| has(&ctx.gt_prior, c)) {
            ("emphasize", c.clone())
        } else {
            return Ok("<action: none> <concept: >".into());
        };
        Ok(format!("<action: {}> <concept: {}>", pick.0, pick.1))
    }

    fn name(&self) -> &str {
        "scripted-assistant"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    pub action: Option<InterventionAction>,
    pub assistant_raw: String,
    pub predicted: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoOutcome {
    pub initial_prediction: Option<String>,
    pub initially_correct: bool,
    pub steps: Vec<TrajectoryStep>,
}

impl AutoOutcome {
    /// Whether the session was correct after `k` interventions.
    pub fn correct_after(&self, k: usize) -> bool {
        if self.initially_correct {
            return true;
        }
        self.steps.iter().take(k).any(|s| s.correct)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AutoSettings {
    pub budget: usize,
    pub top_pool: usize,
    pub candidate_n: usize,
}

impl Default for AutoSettings {
    fn default() -> Self {
        Self {
            budget: 5,
            top_pool: 20,
            candidate_n: 10,
        }
    }
}

fn parse_assistant_action(
    raw: &str,
    ctx: &AssistantContext,
) -> Option<InterventionAction> {
    let parsed_action = crate::classifier::parse_response(&raw.replace("<action", "<answer"));
    let verb = normalize(parsed_action.answer.as_deref()?);
    let concept = raw_tag(raw, "concept")?;
    let has = |list: &[String], t: &str| list.iter().any(|c| normalize(c) == normalize(t));
    let in_pool = ctx.pool.iter().any(|(c, _)| normalize(c) == normalize(&concept));
    match verb.as_str() {
        "emphasize" if in_pool => Some(InterventionAction::StrategyGuidance {
            text: format!("Pay particular attention to the concept {concept}."),
        }),
        "remove" if in_pool => Some(InterventionAction::RemoveConcept { text: concept }),
        "augment" if has(&ctx.gt_prior, &concept) && !has(&ctx.current, &concept) => {
            Some(InterventionAction::AddConcept { text: concept })
        }
        _ => None,
    }
}

fn raw_tag(raw: &str, tag: &str) -> Option<String> {
    let swapped = raw.replace(&format!("<{tag}"), "<answer").replace("<action", "<ignored");
    parse_response(&swapped).answer
}

/// Lets an assistant model edit one concept per step until the session
/// predicts `gt_label` or the budget runs out.
pub fn run_auto_intervention<F, B, A>(
    session: &mut SessionState<F>,
    pipeline: &Pipeline<F>,
    backend: &B,
    assistant: &A,
    gt_label: &str,
    settings: AutoSettings,
) -> Result<AutoOutcome>
where
    F: Scalar,
    B: Backend + ?Sized,
    A: Backend + ?Sized,
{
    if !pipeline.roster().contains(gt_label) {
        return Err(Error::UnknownClass(gt_label.to_string()));
    }
    let pipeline = pipeline.with_config(crate::pipeline::PipelineConfig {
        n_candidates: settings.candidate_n.max(1),
        ..pipeline.config.clone()
    });
    if session.candidates.len() != settings.candidate_n.min(pipeline.roster().len()) {
        session.candidates = pipeline.candidates(&session.activations)?;
    }
    if session.last_prediction.is_none() {
        pipeline.predict(session, backend)?;
    }
    let initial = session
        .last_prediction
        .as_ref()
        .and_then(|p| p.class_name.clone());
    let initially_correct = initial.as_deref() == Some(gt_label);
    let mut outcome = AutoOutcome {
        initial_prediction: initial,
        initially_correct,
        steps: Vec::new(),
    };
    if initially_correct {
        return Ok(outcome);
    }
    let gt_prior = pipeline
        .priors()
        .and_then(|p| p.get(gt_label))
        .map(|p| p.concepts.clone())
        .unwrap_or_default();
    let bank = pipeline.bank();
    let generation = pipeline.config.generation.for_intervention();
    for step in 1..=settings.budget {
        let pool: Vec<(String, f64)> = rank_concepts(&session.activations)
            .into_iter()
            .take(settings.top_pool)
            .filter(|&i| !session.semantics.is_removed(&bank.concepts()[i].text))
            .map(|i| (bank.concepts()[i].text.clone(), session.activations[i].as_f64()))
            .collect();
        let ctx = AssistantContext {
            gt_label: gt_label.to_string(),
            gt_prior: gt_prior.clone(),
            current: session.semantics.texts().map(String::from).collect(),
            pool,
            prediction: session
                .last_prediction
                .as_ref()
                .and_then(|p| p.class_name.clone()),
            history: session.history.clone(),
        };
        let messages = ctx.render();
        let raw = assistant.complete(&CompletionRequest {
            messages: &messages,
            generation: &generation,
            bundle: None,
        })?;
        let action = parse_assistant_action(&raw, &ctx);
        let (predicted, applied) = match action.clone() {
            Some(a) => {
                let p = apply_conversational(session, a, &pipeline, backend)?;
                (p.class_name, true)
            }
            None => {
                log::warn!("step {step}: assistant reply is not a valid action: {raw}");
                (
                    session
                        .last_prediction
                        .as_ref()
                        .and_then(|p| p.class_name.clone()),
                    false,
                )
            }
        };
        let correct = applied && predicted.as_deref() == Some(gt_label);
        outcome.steps.push(TrajectoryStep {
            step,
            action,
            assistant_raw: raw,
            predicted,
            correct,
        });
        if correct {
            break;
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub accuracy: f64,
}

/// Number of units corrected at `ratio` out of `total`.
pub fn units_at(ratio: f64, total: usize) -> usize {
    let raw = ratio * total as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Accuracy as a growing, nested share of each record's concepts (or
/// concept groups) is replaced by ground truth.
pub fn ratio_intervention_curve<F: Scalar, B: Backend + ?Sized>(
    records: &[ActivationRecord<F>],
    pipeline: &Pipeline<F>,
    backend: &B,
    ratios: &[f64],
    seed: u64,
    groups: Option<&[(String, Vec<usize>)]>,
) -> Result<Vec<CurvePoint>> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("ratio {r} outside [0, 1]")));
    }
    let n = pipeline.bank().len();
    let units: Vec<Vec<usize>> = match groups {
        Some(g) => g.iter().map(|(_, ids)| ids.clone()).collect(),
        None => (0..n).map(|i| vec![i]).collect(),
    };
    let (lo, hi) = pipeline.config.rule.path.range();
    let mut correct = vec![0usize; ratios.len()];
    for (idx, r) in records.iter().enumerate() {
        let gt = r
            .gt_concepts
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(r.example_id.clone()))?;
        if gt.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: gt.len(),
            });
        }
        let mut order: Vec<usize> = (0..units.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
        order.shuffle(&mut rng);
        for (slot, &ratio) in ratios.iter().enumerate() {
            let mut acts = r.activations.clone();
            for &u in &order[..units_at(ratio, units.len())] {
                for &i in &units[u] {
                    acts[i] = F::of(if gt[i] { hi } else { lo });
                }
            }
            let out = pipeline.classify_activations(&acts, backend, None)?;
            if out.predicted.as_deref() == Some(r.label.as_str()) {
                correct[slot] += 1;
            }
        }
    }
    Ok(ratios
        .iter()
        .zip(correct)
        .map(|(&x, c)| CurvePoint {
            x,
            accuracy: c as f64 / records.len() as f64,
        })
        .collect())
}

/// Accuracy after each batch of new concepts is offered. Index 0 is the
/// accuracy before any batch. Only batch concepts that are set in a
/// record's ground truth are added to its semantics.
pub fn new_concept_steps<F: Scalar, B: Backend + ?Sized>(
    records: &[ActivationRecord<F>],
    subset: &Pipeline<F>,
    full_bank: &ConceptBank,
    batches: &[Vec<usize>],
    backend: &B,
) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    for b in batches.iter().flatten() {
        if *b >= full_bank.len() {
            return Err(Error::UnknownConcept(*b));
        }
    }
    let prefix = subset.bank().len();
    let mut correct = vec![0usize; batches.len() + 1];
    for r in records {
        let gt = r
            .gt_concepts
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(r.example_id.clone()))?;
        let mut session = subset.new_session(r.example_id.clone(), r.activations[..prefix].to_vec())?;
        subset.predict(&mut session, backend)?;
        let hit = |s: &SessionState<F>| {
            s.last_prediction
                .as_ref()
                .and_then(|p| p.class_name.as_deref())
                == Some(r.label.as_str())
        };
        correct[0] += usize::from(hit(&session));
        for (j, batch) in batches.iter().enumerate() {
            for &c in batch.iter().filter(|&&c| gt.get(c).copied().unwrap_or(false)) {
                let text = &full_bank.concepts()[c].text;
                if !session.semantics.contains(text) {
                    apply_conversational(
                        &mut session,
                        InterventionAction::AddConcept { text: text.clone() },
                        subset,
                        backend,
                    )?;
                }
            }
            correct[j + 1] += usize::from(hit(&session));
        }
    }
    Ok(correct
        .into_iter()
        .map(|c| c as f64 / records.len() as f64)
        .collect())
}

/// A probe trained on the first `n_concepts` concepts of the bank.
#[derive(Debug, Clone)]
pub struct SubsetProbe<F> {
    pub n_concepts: usize,
    pub probe: ProbeModel<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompleteRow {
    pub start_concepts: usize,
    /// (concepts available, accuracy), starting at `start_concepts`.
    pub points: Vec<(usize, f64)>,
}

/// Runs [`new_concept_steps`] from each subset probe, adding the remaining
/// concepts in consecutive batches of `batch_size`.
pub fn incomplete_concept_intervention<F: Scalar, B: Backend + ?Sized>(
    records: &[ActivationRecord<F>],
    full: &Pipeline<F>,
    family: &[SubsetProbe<F>],
    batch_size: usize,
    backend: &B,
) -> Result<Vec<IncompleteRow>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let total = full.bank().len();
    let mut rows = Vec::new();
    for sp in family {
        let bank = full.bank().prefix(sp.n_concepts)?;
        let val: Vec<_> = full
            .val_records()
            .iter()
            .map(|r| ActivationRecord {
                activations: r.activations[..sp.n_concepts].to_vec(),
                gt_concepts: r.gt_concepts.as_ref().map(|g| g[..sp.n_concepts].to_vec()),
                ..r.clone()
            })
            .collect();
        let subset = Pipeline::new(
            bank,
            full.roster().clone(),
            sp.probe.clone(),
            full.priors().cloned(),
            val,
            full.config.clone(),
        )?;
        let batches: Vec<Vec<usize>> = (sp.n_concepts..total)
            .step_by(batch_size)
            .map(|s| (s..(s + batch_size).min(total)).collect())
            .collect();
        let acc = new_concept_steps(records, &subset, full.bank(), &batches, backend)?;
        let mut points = vec![(sp.n_concepts, acc[0])];
        for (b, a) in batches.iter().zip(&acc[1..]) {
            points.push((*b.last().expect("non-empty batch") + 1, *a));
        }
        rows.push(IncompleteRow {
            start_concepts: sp.n_concepts,
            points,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn external_template() {
        let t = external_description_prompt("the bird has a hooked bill.");
        assert!(t.starts_with("In addition, we also know that the bird has a hooked bill."));
        assert!(t.ends_with(EXTERNAL_SUFFIX));
    }

    #[test]
    fn masking_replaces_flexibly() {
        let roster = ClassRoster::new(["Black-footed Albatross", "Yellowthroat", "Common Yellowthroat"]).unwrap();
        let m = ClassMasking::uniform(&roster, "the bird").unwrap();
        assert_eq!(
            m.apply("The black footed albatross is large; a Common_Yellowthroat is not."),
            "The the bird is large; a the bird is not."
        );
        assert_eq!(m.apply("nothing to hide"), "nothing to hide");
        let bad = BTreeMap::from([("Bird".to_string(), "the bird".to_string())]);
        assert!(ClassMasking::new(&bad).is_err());
    }

    #[test]
    fn units_rounding() {
        assert_eq!(units_at(0.0, 112), 0);
        assert_eq!(units_at(1.0, 112), 112);
        assert_eq!(units_at(0.3, 10), 3);
        assert_eq!(units_at(0.25, 3), 1);
    }

    #[test]
    fn assistant_context_round_trip() {
        let ctx = AssistantContext {
            gt_label: "Crested Auklet".into(),
            gt_prior: vec!["crest".into(), "small".into()],
            current: vec!["black".into()],
            pool: vec![("black".into(), 0.91), ("grey".into(), 0.2)],
            prediction: Some("Least Auklet".into()),
            history: vec![ChatMessage::assistant("<answer: Least Auklet>")],
        };
        let msgs = ctx.render();
        let back = AssistantContext::parse(&msgs[1].content).unwrap();
        assert_eq!(back.gt_label, ctx.gt_label);
        assert_eq!(back.gt_prior, ctx.gt_prior);
        assert_eq!(back.current, ctx.current);
        assert_eq!(back.pool, ctx.pool);
        assert_eq!(back.prediction, ctx.prediction);
    }

    #[test]
    fn action_parsing_validates_against_context() {
        let ctx = AssistantContext {
            gt_label: "A".into(),
            gt_prior: vec!["crest".into()],
            current: vec!["black".into()],
            pool: vec![("black".into(), 0.9)],
            prediction: None,
            history: vec![],
        };
        assert_eq!(
            parse_assistant_action("<action: augment> <concept: crest>", &ctx),
            Some(InterventionAction::AddConcept { text: "crest".into() })
        );
        assert_eq!(
            parse_assistant_action("<action: Remove> <concept: black>", &ctx),
            Some(InterventionAction::RemoveConcept { text: "black".into() })
        );
        assert!(matches!(
            parse_assistant_action("<action: emphasize> <concept: black>", &ctx),
            Some(InterventionAction::StrategyGuidance { .. })
        ));
        assert_eq!(parse_assistant_action("<action: augment> <concept: black>", &ctx), None);
        assert_eq!(parse_assistant_action("<action: remove> <concept: crest>", &ctx), None);
        assert_eq!(parse_assistant_action("whatever", &ctx), None);
    }
}
