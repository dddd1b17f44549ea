//! Transcript-replay model.
//!
//! A transcript is a list of `{stage, reply}` records, optionally pinned to a
//! conversation digest and optionally marked `repeat`. For each request the
//! adapter answers with the first unconsumed record whose `stage` matches the
//! requested turn and whose digest (when present) equals the digest of the
//! conversation so far. Non-repeat records are consumed; repeat records stay
//! available. The file format is versioned:
//!
//! ```json
//! { "version": 1, "model_tag": "scripted", "records": [
//!     { "stage": 1, "reply": "..." },
//!     { "stage": "select_candidate", "reply": "0", "repeat": true }
//! ] }
//! ```
//!
//! A bare JSON array of records is accepted as version 1.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{conversation_digest, ConversationModel, Message, ModelError, TurnKind};

pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub stage: TurnKind,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeat: bool,
}

impl TranscriptRecord {
    pub fn new(stage: TurnKind, reply: impl Into<String>) -> Self {
        Self {
            stage,
            reply: reply.into(),
            digest: None,
            repeat: false,
        }
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub version: u32,
    #[serde(default = "default_tag")]
    pub model_tag: String,
    pub records: Vec<TranscriptRecord>,
}

fn default_tag() -> String {
    "scripted".into()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TranscriptFile {
    Full(Transcript),
    Bare(Vec<TranscriptRecord>),
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("reading transcript {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("decoding transcript {path}: {source}")]
    Decode {
        path: String,
        source: serde_json::Error,
    },
    #[error("transcript {path} has unsupported version {version}")]
    Version { path: String, version: u32 },
}

impl Transcript {
    pub fn new(records: Vec<TranscriptRecord>) -> Self {
        Self {
            version: TRANSCRIPT_VERSION,
            model_tag: default_tag(),
            records,
        }
    }

    pub fn from_json(path: &str, text: &str) -> Result<Self, TranscriptError> {
        let parsed: TranscriptFile =
            serde_json::from_str(text).map_err(|source| TranscriptError::Decode {
                path: path.to_string(),
                source,
            })?;
        let t = match parsed {
            TranscriptFile::Full(t) => t,
            TranscriptFile::Bare(records) => Transcript::new(records),
        };
        if t.version != TRANSCRIPT_VERSION {
            return Err(TranscriptError::Version {
                path: path.to_string(),
                version: t.version,
            });
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| TranscriptError::Io {
            path: display.clone(),
            source,
        })?;
        Self::from_json(&display, &text)
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedModel {
    transcript: Transcript,
    consumed: Vec<bool>,
}

impl ScriptedModel {
    pub fn new(transcript: Transcript) -> Self {
        let consumed = vec![false; transcript.records.len()];
        Self {
            transcript,
            consumed,
        }
    }

    pub fn from_records(records: Vec<TranscriptRecord>) -> Self {
        Self::new(Transcript::new(records))
    }

    /// Fresh adapter over the same transcript (all records unconsumed).
    pub fn rewound(&self) -> Self {
        Self::new(self.transcript.clone())
    }

    pub fn remaining(&self, turn: TurnKind) -> usize {
        self.transcript
            .records
            .iter()
            .zip(&self.consumed)
            .filter(|(r, used)| r.stage == turn && !**used)
            .count()
    }
}

impl ConversationModel for ScriptedModel {
    fn tag(&self) -> &str {
        &self.transcript.model_tag
    }

    fn reply(&mut self, turn: TurnKind, conversation: &[Message]) -> Result<String, ModelError> {
        let mut digest: Option<String> = None;
        for (i, record) in self.transcript.records.iter().enumerate() {
            if record.stage != turn || self.consumed[i] {
                continue;
            }
            if let Some(want) = &record.digest {
                let have = digest.get_or_insert_with(|| conversation_digest(conversation));
                if want != have {
                    continue;
                }
            }
            if !record.repeat {
                self.consumed[i] = true;
            }
            return Ok(record.reply.clone());
        }
        if turn.is_optional() {
            Ok(String::new())
        } else {
            Err(ModelError::Exhausted { turn })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replays_in_order_and_consumes() {
        let mut m = ScriptedModel::from_records(vec![
            TranscriptRecord::new(TurnKind::Stage(1), "a"),
            TranscriptRecord::new(TurnKind::Stage(2), "b"),
            TranscriptRecord::new(TurnKind::Stage(1), "c"),
        ]);
        assert_eq!(m.reply(TurnKind::Stage(1), &[]).unwrap(), "a");
        assert_eq!(m.reply(TurnKind::Stage(1), &[]).unwrap(), "c");
        assert_eq!(m.reply(TurnKind::Stage(2), &[]).unwrap(), "b");
        assert_eq!(
            m.reply(TurnKind::Stage(1), &[]),
            Err(ModelError::Exhausted {
                turn: TurnKind::Stage(1)
            })
        );
    }

    #[test]
    fn repeat_and_optional() {
        let mut m = ScriptedModel::from_records(vec![
            TranscriptRecord::new(TurnKind::SelectCandidate, "0").repeating()
        ]);
        for _ in 0..5 {
            assert_eq!(m.reply(TurnKind::SelectCandidate, &[]).unwrap(), "0");
        }
        assert_eq!(m.reply(TurnKind::PoseHint, &[]).unwrap(), "");
    }

    #[test]
    fn digest_pinning() {
        let conv = [Message::user("hello")];
        let mut pinned = TranscriptRecord::new(TurnKind::Stage(1), "pinned");
        pinned.digest = Some(conversation_digest(&conv));
        let mut m = ScriptedModel::from_records(vec![
            pinned,
            TranscriptRecord::new(TurnKind::Stage(1), "fallback"),
        ]);
        assert_eq!(
            m.reply(TurnKind::Stage(1), &[Message::user("other")]).unwrap(),
            "fallback"
        );
        assert_eq!(m.reply(TurnKind::Stage(1), &conv).unwrap(), "pinned");
    }

    #[test]
    fn file_formats() {
        let full = r#"{"version":1,"records":[{"stage":"repair","reply":"x"}]}"#;
        let t = Transcript::from_json("t", full).unwrap();
        assert_eq!(t.model_tag, "scripted");
        assert_eq!(t.records[0].stage, TurnKind::Repair);
        let bare = r#"[{"stage":5,"reply":"y","repeat":true}]"#;
        assert!(Transcript::from_json("t", bare).unwrap().records[0].repeat);
        let v2 = r#"{"version":2,"records":[]}"#;
        assert!(matches!(
            Transcript::from_json("t", v2),
            Err(TranscriptError::Version { version: 2, .. })
        ));
    }
}
