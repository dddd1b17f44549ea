//! Self-augmentation gate: a verified task joins the database only when it
//! is dissimilar to every record already there on both metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::similarity::{object_similarity, sequence_similarity, SimilarityScores};
use super::store::{PlanRecord, RecordStatus, RecordStore, StoreError};
use crate::meta_action::validate_chain;
use crate::model::{ConversationModel, Message, ModelError, TurnKind};
use crate::par::{self, Parallelism};
use crate::planner::{render, Templates};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub object: f64,
    pub sequence: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            object: 0.6,
            sequence: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Add,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub id: u64,
    pub scores: SimilarityScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub decision: GateDecision,
    /// Id of the newly added record on `Add`.
    pub record_id: Option<u64>,
    pub scores: Vec<ScoredRecord>,
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("candidate status is {0:?}, only verified tasks can be committed")]
    NotVerified(RecordStatus),
    #[error("candidate plan is not a valid chain: {0}")]
    InvalidPlan(String),
    #[error("similarity model: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// How the two similarity metrics are obtained.
pub enum Scorer<'m> {
    /// Jaccard over relevant objects, normalized edit distance over plan lines.
    Deterministic(Parallelism),
    /// Ask a conversation model for both numbers.
    Model {
        model: &'m mut dyn ConversationModel,
        templates: Templates,
    },
}

pub fn deterministic_scores(a: &PlanRecord, b: &PlanRecord) -> SimilarityScores {
    SimilarityScores {
        object_similarity: object_similarity(&a.relevant_objects, &b.relevant_objects),
        sequence_similarity: sequence_similarity(&a.plan, &b.plan),
    }
}

/// Parse `objects <x> sequence <y>`; both must lie in `[0, 1]`.
pub fn parse_model_scores(reply: &str) -> Result<SimilarityScores, ModelError> {
    let bad = || ModelError::BadResponse(format!("expected \"objects <x> sequence <y>\", got {reply:?}"));
    let words: Vec<String> = reply
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c == ':' || c == ',' || c == ';').to_lowercase())
        .collect();
    let value_after = |key: &str| -> Option<f64> {
        let i = words.iter().position(|w| w == key)?;
        let v: f64 = words.get(i + 1)?.parse().ok()?;
        (0.0..=1.0).contains(&v).then_some(v)
    };
    Ok(SimilarityScores {
        object_similarity: value_after("objects").ok_or_else(bad)?,
        sequence_similarity: value_after("sequence").ok_or_else(bad)?,
    })
}

fn join_objects(r: &PlanRecord) -> String {
    r.relevant_objects.iter().cloned().collect::<Vec<_>>().join(", ")
}

pub fn score_all(
    candidate: &PlanRecord,
    existing: &[PlanRecord],
    scorer: &mut Scorer<'_>,
) -> Result<Vec<ScoredRecord>, ModelError> {
    match scorer {
        Scorer::Deterministic(mode) => Ok(par::map(existing, *mode, |r| ScoredRecord {
            id: r.id,
            scores: deterministic_scores(candidate, r),
        })),
        Scorer::Model { model, templates } => existing
            .iter()
            .map(|r| {
                let prompt = render(
                    templates.score_similarity,
                    &[
                        ("objects_a", &join_objects(candidate)),
                        ("plan_a", &candidate.plan.to_text()),
                        ("objects_b", &join_objects(r)),
                        ("plan_b", &r.plan.to_text()),
                    ],
                );
                let conversation = [Message::system(templates.system), Message::user(prompt)];
                let reply = model.reply(TurnKind::ScoreSimilarity, &conversation)?;
                Ok(ScoredRecord {
                    id: r.id,
                    scores: parse_model_scores(&reply)?,
                })
            })
            .collect(),
    }
}

/// `Add` iff every record scores strictly below both thresholds.
pub fn decide(scores: &[ScoredRecord], thresholds: &GateThresholds) -> GateDecision {
    let novel = scores.iter().all(|s| {
        s.scores.object_similarity < thresholds.object
            && s.scores.sequence_similarity < thresholds.sequence
    });
    if novel {
        GateDecision::Add
    } else {
        GateDecision::Skip
    }
}

/// Check the candidate, score it against the whole store and append it on `Add`.
pub fn augmentation_gate(
    candidate: PlanRecord,
    store: &mut RecordStore,
    thresholds: &GateThresholds,
    scorer: &mut Scorer<'_>,
) -> Result<GateOutcome, GateError> {
    if candidate.status != RecordStatus::Verified {
        return Err(GateError::NotVerified(candidate.status));
    }
    let first_pre = candidate
        .plan
        .actions
        .first()
        .map(|a| a.pre)
        .ok_or_else(|| GateError::InvalidPlan("empty plan".into()))?;
    let report = validate_chain(&candidate.plan, first_pre)
        .map_err(|e| GateError::InvalidPlan(e.to_string()))?;
    if !report.is_ok() {
        return Err(GateError::InvalidPlan(report.to_string()));
    }
    let scores = score_all(&candidate, store.records(), scorer)?;
    let decision = decide(&scores, thresholds);
    let record_id = match decision {
        GateDecision::Add => Some(store.insert(candidate)?),
        GateDecision::Skip => None,
    };
    Ok(GateOutcome {
        decision,
        record_id,
        scores,
    })
}
