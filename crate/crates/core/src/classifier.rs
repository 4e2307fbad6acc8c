//! Prompt rendering, backend dispatch, response parsing and answer matching.

use std::collections::HashSet;
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BackendError, Error, Result};
use crate::knowledge::{DemonstrationSet, PriorTable};
use crate::model::{CandidateSet, ChatMessage, Role, SemanticSet};
use crate::text::{contains_phrase, join_list, normalize};

pub const DEFAULT_CHAR_CAP: usize = 32_768;
pub const DEFAULT_MAX_LENGTH: usize = 8192;
pub const INTERVENTION_MAX_LENGTH: usize = 10_240;

pub const FORMAT_CLAUSE: &str = "The answer format is <analysis: ...> <answer: class name>, \
and the answer must be one of the class candidates.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub max_length: usize,
    pub do_sample: bool,
    pub top_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub model_name: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_length: DEFAULT_MAX_LENGTH,
            do_sample: true,
            top_k: 10,
            temperature: None,
            model_name: "stub".into(),
        }
    }
}

impl GenerationParams {
    /// Same parameters with the longer context used once interventions
    /// start accumulating turns.
    pub fn for_intervention(&self) -> Self {
        Self {
            max_length: self.max_length.max(INTERVENTION_MAX_LENGTH),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be >= 1".into()));
        }
        if self.do_sample && self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1 when sampling".into()));
        }
        Ok(())
    }
}

/// Everything the language classifier conditions on for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub demonstrations: DemonstrationSet,
    /// Restricted to the candidate classes, in candidate order.
    pub priors: Option<PriorTable>,
    pub query_semantics: SemanticSet,
    pub candidates: CandidateSet,
    pub history: Vec<ChatMessage>,
    pub generation: GenerationParams,
    pub char_cap: usize,
}

impl PromptBundle {
    pub fn new(
        demonstrations: DemonstrationSet,
        priors: Option<PriorTable>,
        query_semantics: SemanticSet,
        candidates: CandidateSet,
    ) -> Self {
        Self {
            demonstrations,
            priors,
            query_semantics,
            candidates,
            history: Vec::new(),
            generation: GenerationParams::default(),
            char_cap: DEFAULT_CHAR_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        if self.candidates.is_empty() {
            return Err(Error::Empty("candidates"));
        }
        if let Some(p) = &self.priors {
            let prior_names: Vec<&str> = p.priors().iter().map(|p| p.class_name.as_str()).collect();
            let cand_names: Vec<&str> = self.candidates.names().collect();
            if prior_names != cand_names {
                return Err(Error::Config(
                    "priors must cover exactly the candidate classes".into(),
                ));
            }
        }
        Ok(())
    }
}

pub fn render_concepts(semantics: &SemanticSet) -> String {
    if semantics.is_empty() {
        "Concepts: (none)".to_string()
    } else {
        let texts: Vec<&str> = semantics.texts().collect();
        format!("Concepts: {}", join_list(&texts))
    }
}

pub fn render_answer(analysis: &str, class_name: &str) -> String {
    format!("<analysis: {analysis}> <answer: {class_name}>")
}

fn render_query(bundle: &PromptBundle) -> String {
    let names: Vec<&str> = bundle.candidates.names().collect();
    format!(
        "{}\nClass candidates: {}\nWhich class does the image belong to?",
        render_concepts(&bundle.query_semantics),
        names.join("; ")
    )
}

/// Renders the bundle as chat messages: system instruction, demonstration
/// user/assistant pairs, one priors message, history, then the query.
pub fn render_messages(bundle: &PromptBundle) -> Result<Vec<ChatMessage>> {
    bundle.validate()?;
    let cap = bundle.char_cap;
    let mut used = 0usize;
    let mut out = Vec::new();
    let mut push = |section: &'static str, msg: ChatMessage| -> Result<()> {
        used += msg.content.chars().count();
        if used > cap {
            return Err(Error::Oversize { section, cap });
        }
        out.push(msg);
        Ok(())
    };

    push(
        "system",
        ChatMessage::system(format!("{} {FORMAT_CLAUSE}", bundle.demonstrations.instruction)),
    )?;
    for shot in &bundle.demonstrations.shots {
        let mut user = render_concepts(&shot.semantics);
        if let Some(hint) = &shot.probe_hint {
            user.push_str(&format!("\nBaseline prediction: {hint}"));
        }
        push("demonstrations", ChatMessage::user(user))?;
        push(
            "demonstrations",
            ChatMessage::assistant(render_answer(
                &format!("the concepts match {}", shot.class_name),
                &shot.class_name,
            )),
        )?;
    }
    if let Some(priors) = &bundle.priors {
        let lines: Vec<&str> = priors.priors().iter().map(|p| p.description.as_str()).collect();
        push(
            "priors",
            ChatMessage::user(format!(
                "Prior knowledge about the class candidates:\n{}",
                lines.join("\n")
            )),
        )?;
    }
    for m in &bundle.history {
        push("history", m.clone())?;
    }
    push("query", ChatMessage::user(render_query(bundle)))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub analysis: Option<String>,
    pub answer: Option<String>,
    pub raw: String,
    pub parse_ok: bool,
}

/// Content of every well-formed `<tag: ...>` in `raw`, in order. The
/// content runs to the `>` that balances the opening `<`.
fn tag_contents<'a>(raw: &'a str, tag: &str) -> Vec<&'a str> {
    let bytes = raw.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < bytes.len() && bytes[j].is_ascii_whitespace() {
            j += 1;
        }
        let name_end = j + tag.len();
        if name_end > bytes.len() || !bytes[j..name_end].eq_ignore_ascii_case(tag.as_bytes()) {
            i += 1;
            continue;
        }
        let mut k = name_end;
        while k < bytes.len() && bytes[k].is_ascii_whitespace() {
            k += 1;
        }
        if k >= bytes.len() || bytes[k] != b':' {
            i += 1;
            continue;
        }
        let start = k + 1;
        let mut depth = 1usize;
        let mut end = None;
        for (off, &b) in bytes[start..].iter().enumerate() {
            match b {
                b'<' => depth += 1,
                b'>' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + off);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(e) = end {
            found.push(&raw[start..e]);
        }
        i += 1;
    }
    found
}

fn last_tag(raw: &str, tag: &str) -> Option<String> {
    tag_contents(raw, tag)
        .into_iter()
        .rev()
        .map(str::trim)
        .find(|s| !s.is_empty())
        .map(str::to_string)
}

/// Extracts the last `<answer: ...>` and `<analysis: ...>` tags.
pub fn parse_response(raw: &str) -> ParsedResponse {
    let answer = last_tag(raw, "answer");
    ParsedResponse {
        analysis: last_tag(raw, "analysis"),
        parse_ok: answer.is_some(),
        answer,
        raw: raw.to_string(),
    }
}

/// The candidate whose normalized name is contained in the normalized
/// answer. Longer names win over shorter ones, then better probe rank.
pub fn match_answer(answer: &str, candidates: &CandidateSet) -> Option<String> {
    let hay = normalize(answer);
    if hay.is_empty() {
        return None;
    }
    let mut best: Option<(usize, &str)> = None;
    for name in candidates.names() {
        let needle = normalize(name);
        if needle.is_empty() || !hay.contains(&needle) {
            continue;
        }
        let len = needle.chars().count();
        if best.map_or(true, |(l, _)| len > l) {
            best = Some((len, name));
        }
    }
    best.map(|(_, n)| n.to_string())
}

pub struct CompletionRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub generation: &'a GenerationParams,
    /// The structured bundle behind `messages`, when there is one.
    pub bundle: Option<&'a PromptBundle>,
}

/// A chat completion provider: a remote endpoint or a deterministic stub.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError>;

    fn name(&self) -> &str {
        "backend"
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Per-candidate stub scores in candidate order.
pub fn stub_scores(bundle: &PromptBundle) -> Result<Vec<i64>> {
    let priors = bundle
        .priors
        .as_ref()
        .ok_or_else(|| Error::MissingPrior("<all candidates>".into()))?;
    let query: HashSet<String> = bundle.query_semantics.texts().map(normalize).collect();
    let removed: HashSet<String> = bundle
        .query_semantics
        .removed()
        .iter()
        .map(|r| normalize(r))
        .collect();
    let guidance: Vec<String> = bundle
        .history
        .iter()
        .filter(|m| m.role == Role::User)
        .map(|m| normalize(&m.content))
        .collect();
    bundle
        .candidates
        .names()
        .map(|name| {
            let prior = priors
                .get(name)
                .ok_or_else(|| Error::MissingPrior(name.to_string()))?;
            let concepts: HashSet<String> = prior.concepts.iter().map(|c| normalize(c)).collect();
            let overlap = concepts.intersection(&query).count() as i64;
            let penalty = concepts.intersection(&removed).count() as i64;
            let key = normalize(name);
            let bonus = guidance.iter().filter(|g| contains_phrase(g, &key)).count() as i64;
            Ok(overlap - penalty + bonus)
        })
        .collect()
}

/// Deterministic stand-in for a language model: answers with the candidate
/// whose prior concepts best overlap the query semantics.
pub fn stub_classify(bundle: &PromptBundle) -> Result<String> {
    let scores = stub_scores(bundle)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let name = &bundle.candidates.candidates()[best].class_name;
    let listed: Vec<String> = scores.iter().map(i64::to_string).collect();
    Ok(render_answer(&format!("overlap=[{}]", listed.join(", ")), name))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StubBackend;

impl Backend for StubBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let bundle = request
            .bundle
            .ok_or_else(|| BackendError::Unsupported("stub backend needs a prompt bundle".into()))?;
        stub_classify(bundle).map_err(|e| BackendError::Unsupported(e.to_string()))
    }

    fn name(&self) -> &str {
        "stub"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOutcome {
    pub parsed: ParsedResponse,
    pub predicted: Option<String>,
    /// Messages sent to the backend.
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub bundle_digest: String,
    pub raw: String,
    pub parsed: ParsedResponse,
    pub predicted: Option<String>,
    pub latency_ms: u64,
}

/// JSON Lines sink for classification calls.
pub struct TranscriptLog {
    sink: Mutex<Box<dyn Write + Send>>,
}

impl TranscriptLog {
    pub fn new<W: Write + Send + 'static>(sink: W) -> Self {
        Self {
            sink: Mutex::new(Box::new(sink)),
        }
    }

    pub fn record(&self, entry: &TranscriptEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        let mut sink = self.sink.lock().expect("transcript lock poisoned");
        sink.write_all(&line)?;
        sink.flush()?;
        Ok(())
    }
}

pub fn messages_digest(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Renders, queries the backend, parses the reply and matches it to a
/// candidate.
pub fn classify<B: Backend + ?Sized>(
    bundle: &PromptBundle,
    backend: &B,
    log: Option<&TranscriptLog>,
) -> Result<ClassifyOutcome> {
    let messages = render_messages(bundle)?;
    let started = Instant::now();
    let raw = backend.complete(&CompletionRequest {
        messages: &messages,
        generation: &bundle.generation,
        bundle: Some(bundle),
    })?;
    let parsed = parse_response(&raw);
    let predicted = parsed
        .answer
        .as_deref()
        .and_then(|a| match_answer(a, &bundle.candidates));
    if let Some(log) = log {
        log.record(&TranscriptEntry {
            bundle_digest: messages_digest(&messages),
            raw,
            parsed: parsed.clone(),
            predicted: predicted.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
        })?;
    }
    Ok(ClassifyOutcome {
        parsed,
        predicted,
        messages,
    })
}
