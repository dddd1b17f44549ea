//! Conversation-model contract shared by the planner, the retriever and the
//! executor, plus the adapters that implement it.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scene::SceneGraph;

#[cfg(feature = "live")]
pub mod live;
pub mod scripted;

pub use scripted::{ScriptedModel, Transcript, TranscriptError, TranscriptRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// One conversation message. Assistant messages never carry a scene payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MessageRepr")]
pub struct Message {
    role: Role,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    scene_payload: Option<SceneGraph>,
}

#[derive(Deserialize)]
struct MessageRepr {
    role: Role,
    text: String,
    #[serde(default)]
    scene_payload: Option<SceneGraph>,
}

impl TryFrom<MessageRepr> for Message {
    type Error = String;

    fn try_from(r: MessageRepr) -> Result<Self, Self::Error> {
        if r.role == Role::Assistant && r.scene_payload.is_some() {
            return Err("assistant messages cannot carry a scene payload".into());
        }
        Ok(Message {
            role: r.role,
            text: r.text,
            scene_payload: r.scene_payload,
        })
    }
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
            scene_payload: None,
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            scene_payload: None,
        }
    }

    pub fn user_with_scene(text: impl Into<String>, scene: SceneGraph) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            scene_payload: Some(scene),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
            scene_payload: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn scene_payload(&self) -> Option<&SceneGraph> {
        self.scene_payload.as_ref()
    }

    pub(crate) fn set_text(&mut self, text: impl Into<String>) {
        self.text = text.into();
    }
}

/// The kind of reply being requested. Scripted transcripts are keyed by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TurnKind {
    /// Planner stage 1..=5.
    Stage(u8),
    Repair,
    SelectDemo,
    SelectCandidate,
    PoseHint,
    ScoreSimilarity,
}

impl TurnKind {
    /// Turns the scripted adapter may answer with an empty reply when the
    /// transcript has nothing for them.
    pub fn is_optional(self) -> bool {
        matches!(self, TurnKind::PoseHint)
    }
}

impl fmt::Display for TurnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TurnKind::Stage(n) => write!(f, "stage {n}"),
            TurnKind::Repair => f.write_str("repair"),
            TurnKind::SelectDemo => f.write_str("select_demo"),
            TurnKind::SelectCandidate => f.write_str("select_candidate"),
            TurnKind::PoseHint => f.write_str("pose_hint"),
            TurnKind::ScoreSimilarity => f.write_str("score_similarity"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TurnKindRepr {
    Stage(u8),
    Named(String),
}

impl Serialize for TurnKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            TurnKind::Stage(n) => TurnKindRepr::Stage(n),
            other => TurnKindRepr::Named(other.to_string()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TurnKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match TurnKindRepr::deserialize(d)? {
            TurnKindRepr::Stage(n @ 1..=5) => Ok(TurnKind::Stage(n)),
            TurnKindRepr::Stage(n) => Err(D::Error::custom(format!("stage {n} outside 1..=5"))),
            TurnKindRepr::Named(s) => match s.as_str() {
                "repair" => Ok(TurnKind::Repair),
                "select_demo" => Ok(TurnKind::SelectDemo),
                "select_candidate" => Ok(TurnKind::SelectCandidate),
                "pose_hint" => Ok(TurnKind::PoseHint),
                "score_similarity" => Ok(TurnKind::ScoreSimilarity),
                other => Err(D::Error::custom(format!("unknown turn kind {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("transcript has no reply left for {turn}")]
    Exhausted { turn: TurnKind },
    #[error("model transport failure: {0}")]
    Transport(String),
    #[error("malformed model response: {0}")]
    BadResponse(String),
}

/// A conversation model: given the conversation so far, produce one
/// assistant reply for the requested turn.
pub trait ConversationModel: Send {
    fn tag(&self) -> &str;

    fn reply(&mut self, turn: TurnKind, conversation: &[Message]) -> Result<String, ModelError>;
}

impl<M: ConversationModel + ?Sized> ConversationModel for Box<M> {
    fn tag(&self) -> &str {
        (**self).tag()
    }

    fn reply(&mut self, turn: TurnKind, conversation: &[Message]) -> Result<String, ModelError> {
        (**self).reply(turn, conversation)
    }
}

/// First unsigned integer in a reply, e.g. `"Candidate 3."` -> 3.
pub fn parse_choice(reply: &str) -> Option<usize> {
    let start = reply.find(|c: char| c.is_ascii_digit())?;
    let digits: String = reply[start..]
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    digits.parse().ok()
}

/// Hex SHA-256 over the roles, texts and scene payloads of a conversation.
pub fn conversation_digest(conversation: &[Message]) -> String {
    let mut h = Sha256::new();
    for m in conversation {
        h.update(m.role.as_str().as_bytes());
        h.update([0u8]);
        h.update(m.text.as_bytes());
        h.update([0u8]);
        if let Some(scene) = &m.scene_payload {
            h.update(serde_json::to_vec(scene).unwrap_or_default());
        }
        h.update([0xffu8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A stored conversation (prompts and replies) replayed as an in-context
/// demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCache {
    pub messages: Vec<Message>,
    pub model_tag: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("prompt cache message {index} has role {found}, expected {expected}")]
pub struct CacheShapeError {
    pub index: usize,
    pub found: &'static str,
    pub expected: &'static str,
}

impl PromptCache {
    pub fn new(
        messages: Vec<Message>,
        model_tag: impl Into<String>,
        created_at: DateTime<Utc>,
    ) -> Result<Self, CacheShapeError> {
        let cache = Self {
            messages,
            model_tag: model_tag.into(),
            created_at,
        };
        cache.check_shape()?;
        Ok(cache)
    }

    /// Leading system messages, then strictly alternating user/assistant.
    pub fn check_shape(&self) -> Result<(), CacheShapeError> {
        let lead = self
            .messages
            .iter()
            .take_while(|m| m.role == Role::System)
            .count();
        for (offset, m) in self.messages[lead..].iter().enumerate() {
            let expected = if offset % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return Err(CacheShapeError {
                    index: lead + offset,
                    found: m.role.as_str(),
                    expected: expected.as_str(),
                });
            }
        }
        Ok(())
    }

    /// The dialogue rounds without leading system messages.
    pub fn dialogue(&self) -> &[Message] {
        let lead = self
            .messages
            .iter()
            .take_while(|m| m.role == Role::System)
            .count();
        &self.messages[lead..]
    }
}
