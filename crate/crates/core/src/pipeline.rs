//! End-to-end prediction: activations to semantics and candidates, then a
//! prompt bundle for the language classifier.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{classify, Backend, ClassifyOutcome, GenerationParams, PromptBundle, TranscriptLog, DEFAULT_CHAR_CAP};
use crate::error::{Error, Result};
use crate::extraction::SemanticsRule;
use crate::knowledge::{select_demonstrations, DemoRequest, DemonstrationSet, PriorTable, DEFAULT_INSTRUCTION};
use crate::model::{
    ActivationRecord, CandidateSet, ChatMessage, ClassRoster, ConceptBank, Prediction, SemanticSet,
    SessionState, Split,
};
use crate::probe::ProbeModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub n_candidates: usize,
    pub k_shots: usize,
    /// Seed for demonstration sampling.
    pub seed: u64,
    pub use_priors: bool,
    pub include_probe_hint: bool,
    pub instruction: String,
    pub rule: SemanticsRule,
    pub generation: GenerationParams,
    pub char_cap: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_candidates: 2,
            k_shots: 2,
            seed: 0,
            use_priors: true,
            include_probe_hint: false,
            instruction: DEFAULT_INSTRUCTION.to_string(),
            rule: SemanticsRule::default(),
            generation: GenerationParams::default(),
            char_cap: DEFAULT_CHAR_CAP,
        }
    }
}

#[derive(Debug)]
struct Shared<F> {
    bank: ConceptBank,
    roster: ClassRoster,
    probe: ProbeModel<F>,
    priors: Option<PriorTable>,
    val: Vec<ActivationRecord<F>>,
}

/// Immutable model state plus per-run settings. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct Pipeline<F> {
    shared: Arc<Shared<F>>,
    pub config: PipelineConfig,
}

impl<F: Scalar> Pipeline<F> {
    pub fn new(
        bank: ConceptBank,
        roster: ClassRoster,
        probe: ProbeModel<F>,
        priors: Option<PriorTable>,
        val: Vec<ActivationRecord<F>>,
        config: PipelineConfig,
    ) -> Result<Self> {
        if probe.n_concepts != bank.len() {
            return Err(Error::LengthMismatch {
                expected: bank.len(),
                actual: probe.n_concepts,
            });
        }
        if probe.class_names != roster {
            return Err(Error::Config("probe roster differs from dataset roster".into()));
        }
        if config.n_candidates == 0 {
            return Err(Error::Config("n_candidates must be >= 1".into()));
        }
        if let Some(p) = &priors {
            p.covers(&roster)?;
        }
        let val: Vec<_> = val.into_iter().filter(|r| r.split == Split::Val).collect();
        Ok(Self {
            shared: Arc::new(Shared {
                bank,
                roster,
                probe,
                priors,
                val,
            }),
            config,
        })
    }

    pub fn with_config(&self, config: PipelineConfig) -> Self {
        Self {
            shared: Arc::clone(&self.shared),
            config,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        self.with_config(PipelineConfig {
            seed,
            ..self.config.clone()
        })
    }

    pub fn with_probe(&self, probe: ProbeModel<F>) -> Result<Self> {
        Self::new(
            self.shared.bank.clone(),
            self.shared.roster.clone(),
            probe,
            self.shared.priors.clone(),
            self.shared.val.clone(),
            self.config.clone(),
        )
    }

    pub fn bank(&self) -> &ConceptBank {
        &self.shared.bank
    }

    pub fn roster(&self) -> &ClassRoster {
        &self.shared.roster
    }

    pub fn probe(&self) -> &ProbeModel<F> {
        &self.shared.probe
    }

    pub fn priors(&self) -> Option<&PriorTable> {
        self.shared.priors.as_ref()
    }

    pub fn val_records(&self) -> &[ActivationRecord<F>] {
        &self.shared.val
    }

    pub fn semantics(&self, activations: &[F]) -> Result<SemanticSet> {
        self.config.rule.extract(activations, &self.shared.bank)
    }

    pub fn candidates(&self, activations: &[F]) -> Result<CandidateSet> {
        self.shared
            .probe
            .top_n_candidates(activations, self.config.n_candidates)
    }

    pub fn demonstrations(&self, candidates: &CandidateSet) -> Result<DemonstrationSet> {
        select_demonstrations(
            candidates,
            &self.shared.val,
            &self.shared.bank,
            &self.shared.roster,
            &DemoRequest {
                k: self.config.k_shots,
                seed: self.config.seed,
                instruction: &self.config.instruction,
                rule: self.config.rule,
                hint_probe: self
                    .config
                    .include_probe_hint
                    .then_some(&self.shared.probe),
            },
        )
    }

    pub fn bundle(
        &self,
        semantics: SemanticSet,
        candidates: CandidateSet,
        history: Vec<ChatMessage>,
        intervention_mode: bool,
    ) -> Result<PromptBundle> {
        let demonstrations = self.demonstrations(&candidates)?;
        let priors = match (&self.shared.priors, self.config.use_priors) {
            (Some(p), true) => Some(p.restrict(&candidates)?),
            _ => None,
        };
        let mut bundle = PromptBundle::new(demonstrations, priors, semantics, candidates);
        bundle.history = history;
        bundle.char_cap = self.config.char_cap;
        bundle.generation = if intervention_mode {
            self.config.generation.for_intervention()
        } else {
            self.config.generation.clone()
        };
        Ok(bundle)
    }

    /// One-shot prediction straight from an activation vector.
    pub fn classify_activations<B: Backend + ?Sized>(
        &self,
        activations: &[F],
        backend: &B,
        log: Option<&TranscriptLog>,
    ) -> Result<ClassifyOutcome> {
        let bundle = self.bundle(
            self.semantics(activations)?,
            self.candidates(activations)?,
            Vec::new(),
            false,
        )?;
        classify(&bundle, backend, log)
    }

    /// Fresh session with semantics and candidates computed; no model call.
    pub fn new_session(&self, session_id: impl Into<String>, activations: Vec<F>) -> Result<SessionState<F>> {
        if activations.len() != self.shared.bank.len() {
            return Err(Error::LengthMismatch {
                expected: self.shared.bank.len(),
                actual: activations.len(),
            });
        }
        let (lo, hi) = self.config.rule.path.range();
        for (i, a) in activations.iter().enumerate() {
            let v = a.as_f64();
            if !(lo..=hi).contains(&v) {
                return Err(Error::OutOfRange {
                    concept_id: i,
                    value: v,
                    min: lo,
                    max: hi,
                });
            }
        }
        let semantics = self.semantics(&activations)?;
        let candidates = self.candidates(&activations)?;
        Ok(SessionState::new(session_id, activations, semantics, candidates))
    }

    /// Classifies the session's current state and appends the reply to its
    /// history.
    pub fn predict<B: Backend + ?Sized>(
        &self,
        session: &mut SessionState<F>,
        backend: &B,
    ) -> Result<Prediction> {
        let bundle = self.bundle(
            session.semantics.clone(),
            session.candidates.clone(),
            session.history.clone(),
            !session.intervention_log.is_empty(),
        )?;
        let outcome = classify(&bundle, backend, None)?;
        let prediction = Prediction {
            class_name: outcome.predicted,
            raw: outcome.parsed.raw.clone(),
            parse_ok: outcome.parsed.parse_ok,
            analysis: outcome.parsed.analysis,
        };
        let reply = ChatMessage::assistant(outcome.parsed.raw);
        session.history.push(reply.clone());
        session.last_transcript = outcome.messages;
        session.last_transcript.push(reply);
        session.last_prediction = Some(prediction.clone());
        Ok(prediction)
    }
}
