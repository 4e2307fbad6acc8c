//! Concept-bottleneck classification where the label predictor is a
//! language model reading decoded concept text.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below fix it to `f64`, which the service and CLI use.

pub mod classifier;
pub mod error;
pub mod eval;
pub mod extraction;
pub mod intervention;
pub mod io;
pub mod knowledge;
pub mod model;
pub mod pipeline;
pub mod probe;
pub mod scalar;
pub mod synthetic;
pub mod text;

pub use classifier::{
    classify, match_answer, parse_response, render_messages, Backend, CompletionRequest,
    GenerationParams, ParsedResponse, PromptBundle, StubBackend, TranscriptLog,
};
pub use error::{BackendError, Error, Result};
pub use extraction::{
    cosine_activations, decode_supervised, top_semantics, EmbeddingKind, EmbeddingTable,
    SemanticsRule,
};
pub use knowledge::{DemonstrationSet, PriorTable};
pub use model::{
    ActivationRecord, CandidateSet, ChatMessage, ClassPrior, ClassRoster, ConceptBank,
    ConceptPath, Dataset, InterventionAction, Prediction, Role, SemanticSet, SessionState, Split,
};
pub use pipeline::{Pipeline, PipelineConfig};
pub use probe::{train_probe, ProbeModel, TrainConfig};
pub use scalar::Scalar;

pub type ActivationRecordF64 = ActivationRecord<f64>;
pub type DatasetF64 = Dataset<f64>;
pub type EmbeddingTableF64 = EmbeddingTable<f64>;
pub type PipelineF64 = Pipeline<f64>;
pub type ProbeModelF64 = ProbeModel<f64>;
pub type SessionStateF64 = SessionState<f64>;

pub type ActivationRecordF32 = ActivationRecord<f32>;
pub type PipelineF32 = Pipeline<f32>;
pub type ProbeModelF32 = ProbeModel<f32>;
pub type SessionStateF32 = SessionState<f32>;
