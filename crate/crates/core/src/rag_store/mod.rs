//! Demonstration database: embedding, retrieval and the augmentation gate.

pub mod embed;
pub mod gate;
pub mod retrieve;
pub mod similarity;
pub mod store;

pub use embed::{embed, Embedding, EMBEDDING_DIM};
pub use gate::{augmentation_gate, GateDecision, GateError, GateOutcome, GateThresholds, Scorer};
pub use retrieve::{rank, retrieve, top_k, Ranked, Retrieved, RetrieveError, Selection};
pub use similarity::{object_similarity, sequence_similarity, SimilarityScores};
pub use store::{
    PlanRecord, RecordStatus, RecordStore, SharedStore, StoreError, Verdict, Vote, SCHEMA_VERSION,
};
