//! Human-in-the-loop plan curation over HTTP: create tasks, plan with and
//! without a demonstration, edit stages, vote and commit to the record store.

pub mod http;
pub mod service;

pub use http::{router, API_SCHEMA_VERSION};
pub use service::{
    AnnotationTask, Clock, FixedClock, ModelProvider, PlanMode, Service, ServiceConfig, ServiceError,
    SessionSlot, SystemClock, TranscriptProvider, NO_DEMONSTRATION,
};
