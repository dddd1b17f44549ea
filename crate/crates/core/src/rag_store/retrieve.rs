//! Top-k retrieval over verified demonstrations, with a model-made final pick.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::Embedding;
use super::store::{PlanRecord, RecordStore};
use crate::model::{parse_choice, ConversationModel, Message, ModelError, TurnKind};
use crate::par::{self, Parallelism};
use crate::planner::{render, Templates};
use crate::scene::SceneGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    /// Only one candidate, so the model was not asked.
    Single,
    /// 1-based rank named by the model.
    Picked { rank: usize },
    /// The reply named nothing inside the top-k; rank 1 was used.
    OutOfRange { reply: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub record: PlanRecord,
    pub top_k: Vec<Ranked>,
    pub selection: Selection,
}

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// All verified records by descending cosine, ties by ascending id.
pub fn rank(store: &RecordStore, query: &Embedding, mode: Parallelism) -> Vec<Ranked> {
    let verified: Vec<&PlanRecord> = store.verified().collect();
    let mut ranked = par::map(&verified, mode, |r| Ranked {
        id: r.id,
        score: query.cosine(&r.embedding),
    });
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    ranked
}

pub fn top_k(
    store: &RecordStore,
    query: &Embedding,
    k: usize,
    mode: Parallelism,
) -> Result<Vec<Ranked>, RetrieveError> {
    if k == 0 {
        return Err(RetrieveError::ZeroK);
    }
    let mut ranked = rank(store, query, mode);
    ranked.truncate(k);
    Ok(ranked)
}

pub fn selection_prompt(
    templates: &Templates,
    instruction: &str,
    scene: &SceneGraph,
    store: &RecordStore,
    top: &[Ranked],
) -> String {
    let candidates = top
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let rec = store.get(r.id).expect("ranked ids come from the store");
            format!("{}. \"{}\" (similarity {:.3})", i + 1, rec.instruction, r.score)
        })
        .collect::<Vec<_>>()
        .join("\n");
    render(
        templates.select_demo,
        &[
            ("instruction", instruction),
            ("scene", &scene.to_prompt_text()),
            ("candidates", &candidates),
        ],
    )
}

/// Rank, cut to `k`, and let the model choose one. `None` when the store has
/// no verified records.
#[allow(clippy::too_many_arguments)]
pub fn retrieve(
    store: &RecordStore,
    query: &Embedding,
    k: usize,
    instruction: &str,
    scene: &SceneGraph,
    model: &mut dyn ConversationModel,
    templates: &Templates,
    mode: Parallelism,
) -> Result<Option<Retrieved>, RetrieveError> {
    let top = top_k(store, query, k, mode)?;
    if top.is_empty() {
        return Ok(None);
    }
    let (index, selection) = if top.len() == 1 {
        (0, Selection::Single)
    } else {
        let conversation = [
            Message::system(templates.system),
            Message::user(selection_prompt(templates, instruction, scene, store, &top)),
        ];
        let reply = model.reply(TurnKind::SelectDemo, &conversation)?;
        match parse_choice(&reply) {
            Some(rank) if (1..=top.len()).contains(&rank) => (rank - 1, Selection::Picked { rank }),
            _ => (0, Selection::OutOfRange { reply }),
        }
    };
    let record = store
        .get(top[index].id)
        .expect("ranked ids come from the store")
        .clone();
    Ok(Some(Retrieved {
        record,
        top_k: top,
        selection,
    }))
}
