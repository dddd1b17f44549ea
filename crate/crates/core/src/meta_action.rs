//! The meta-action language.
//!
//! A meta-action is one planned step of the form
//! `<pre gripper>, <motion>, <preposition>, <object>, <post gripper>`,
//! for example `opened, move to, front on, burger, closed`. The object slot
//! may be empty (`closed, move to, up, , closed`), in which case the step is
//! relative to the previous end-effector position.
//!
//! Parsing is tolerant (case-insensitive, synonym table, free whitespace),
//! serialization is canonical (lowercase, `", "` separators).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of comma-separated fields in a serialized meta-action.
pub const FIELD_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GripperState {
    #[serde(rename = "opened", alias = "open")]
    Open,
    #[serde(rename = "closed", alias = "close")]
    Close,
}

impl GripperState {
    pub const ALL: [GripperState; 2] = [GripperState::Open, GripperState::Close];

    pub fn as_str(self) -> &'static str {
        match self {
            GripperState::Open => "opened",
            GripperState::Close => "closed",
        }
    }

    fn from_word(word: &str) -> Option<Self> {
        match word {
            "opened" | "open" => Some(GripperState::Open),
            "closed" | "close" => Some(GripperState::Close),
            _ => None,
        }
    }
}

impl fmt::Display for GripperState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MotionKind {
    #[serde(rename = "move to", alias = "move")]
    Move,
    #[serde(rename = "rotate to", alias = "rotate")]
    Rotate,
}

impl MotionKind {
    pub const ALL: [MotionKind; 2] = [MotionKind::Move, MotionKind::Rotate];

    pub fn as_str(self) -> &'static str {
        match self {
            MotionKind::Move => "move to",
            MotionKind::Rotate => "rotate to",
        }
    }

    fn from_word(word: &str) -> Option<Self> {
        match word {
            "move to" | "move" => Some(MotionKind::Move),
            "rotate to" | "rotate" => Some(MotionKind::Rotate),
            _ => None,
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Closed preposition vocabulary of the location description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preposition {
    #[serde(rename = "above")]
    Above,
    #[serde(rename = "on")]
    On,
    #[serde(rename = "front on")]
    FrontOn,
    #[serde(rename = "behind")]
    Behind,
    #[serde(rename = "left of")]
    LeftOf,
    #[serde(rename = "right of")]
    RightOf,
    #[serde(rename = "into")]
    Into,
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "down")]
    Down,
    #[serde(rename = "forward")]
    Forward,
    #[serde(rename = "backward")]
    Backward,
}

impl Preposition {
    pub const ALL: [Preposition; 11] = [
        Preposition::Above,
        Preposition::On,
        Preposition::FrontOn,
        Preposition::Behind,
        Preposition::LeftOf,
        Preposition::RightOf,
        Preposition::Into,
        Preposition::Up,
        Preposition::Down,
        Preposition::Forward,
        Preposition::Backward,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preposition::Above => "above",
            Preposition::On => "on",
            Preposition::FrontOn => "front on",
            Preposition::Behind => "behind",
            Preposition::LeftOf => "left of",
            Preposition::RightOf => "right of",
            Preposition::Into => "into",
            Preposition::Up => "up",
            Preposition::Down => "down",
            Preposition::Forward => "forward",
            Preposition::Backward => "backward",
        }
    }

    fn from_word(word: &str) -> Option<Self> {
        Preposition::ALL.into_iter().find(|p| p.as_str() == word)
    }
}

impl fmt::Display for Preposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Textual goal of a step: a preposition and an optional object reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocationDescription {
    pub preposition: Preposition,
    #[serde(rename = "object")]
    pub object_ref: Option<String>,
}

impl LocationDescription {
    pub fn new(preposition: Preposition, object_ref: Option<&str>) -> Self {
        Self {
            preposition,
            object_ref: object_ref.map(normalize_words),
        }
    }

    pub fn relative(preposition: Preposition) -> Self {
        Self {
            preposition,
            object_ref: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "MetaActionRecord", into = "MetaActionRecord")]
pub struct MetaAction {
    pub pre: GripperState,
    pub motion: MotionKind,
    pub location: LocationDescription,
    pub post: GripperState,
}

impl MetaAction {
    pub fn new(
        pre: GripperState,
        motion: MotionKind,
        location: LocationDescription,
        post: GripperState,
    ) -> Self {
        Self {
            pre,
            motion,
            location,
            post,
        }
    }

    /// Canonical single-line form.
    pub fn serialize(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MetaAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {}, {}, {}, {}",
            self.pre,
            self.motion,
            self.location.preposition,
            self.location.object_ref.as_deref().unwrap_or(""),
            self.post
        )
    }
}

impl FromStr for MetaAction {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Flat JSON shape used by the store and the HTTP API.
#[derive(Serialize, Deserialize)]
struct MetaActionRecord {
    pre: GripperState,
    motion: MotionKind,
    preposition: Preposition,
    object: Option<String>,
    post: GripperState,
}

impl From<MetaAction> for MetaActionRecord {
    fn from(a: MetaAction) -> Self {
        Self {
            pre: a.pre,
            motion: a.motion,
            preposition: a.location.preposition,
            object: a.location.object_ref,
            post: a.post,
        }
    }
}

impl TryFrom<MetaActionRecord> for MetaAction {
    type Error = ParseError;

    fn try_from(r: MetaActionRecord) -> Result<Self, Self::Error> {
        let object_ref = match r.object {
            None => None,
            Some(raw) => parse_object(&raw, 0)?,
        };
        Ok(MetaAction {
            pre: r.pre,
            motion: r.motion,
            location: LocationDescription {
                preposition: r.preposition,
                object_ref,
            },
            post: r.post,
        })
    }
}

/// Structured parse failure. Columns are 1-based character offsets into the line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unknown gripper word {token:?} at column {column}")]
    UnknownGripperWord { token: String, column: usize },
    #[error("unknown motion word {token:?} at column {column}")]
    UnknownMotionWord { token: String, column: usize },
    #[error("unknown preposition {token:?} at column {column}")]
    UnknownPreposition { token: String, column: usize },
    #[error("expected {FIELD_COUNT} comma-separated fields, found {found} (column {column})")]
    FieldCountMismatch { found: usize, column: usize },
    #[error("invalid object name {token:?} at column {column}")]
    InvalidObjectName { token: String, column: usize },
}

impl ParseError {
    pub fn column(&self) -> usize {
        match self {
            ParseError::UnknownGripperWord { column, .. }
            | ParseError::UnknownMotionWord { column, .. }
            | ParseError::UnknownPreposition { column, .. }
            | ParseError::FieldCountMismatch { column, .. }
            | ParseError::InvalidObjectName { column, .. } => *column,
        }
    }
}

/// Lowercase and collapse internal whitespace runs to one space.
fn normalize_words(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_object(raw: &str, column: usize) -> Result<Option<String>, ParseError> {
    if raw.chars().any(char::is_control) {
        return Err(ParseError::InvalidObjectName {
            token: raw.trim().to_string(),
            column,
        });
    }
    let name = normalize_words(raw);
    Ok(if name.is_empty() { None } else { Some(name) })
}

/// Parse one meta-action line.
pub fn parse(text: &str) -> Result<MetaAction, ParseError> {
    let line = text
        .strip_suffix('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .unwrap_or(text);

    // (field text, 1-based column of its first non-blank char)
    let mut fields: Vec<(&str, usize)> = Vec::with_capacity(FIELD_COUNT);
    let mut start_char = 0usize;
    for piece in line.split(',') {
        let lead = piece.chars().take_while(|c| c.is_whitespace()).count();
        fields.push((piece, start_char + lead + 1));
        start_char += piece.chars().count() + 1;
    }

    if fields.len() != FIELD_COUNT {
        let column = if fields.len() > FIELD_COUNT {
            fields[FIELD_COUNT].1
        } else {
            line.chars().count() + 1
        };
        return Err(ParseError::FieldCountMismatch {
            found: fields.len(),
            column,
        });
    }

    let word = |i: usize| normalize_words(fields[i].0);

    let pre_word = word(0);
    let pre = GripperState::from_word(&pre_word).ok_or(ParseError::UnknownGripperWord {
        token: pre_word,
        column: fields[0].1,
    })?;
    let motion_word = word(1);
    let motion = MotionKind::from_word(&motion_word).ok_or(ParseError::UnknownMotionWord {
        token: motion_word,
        column: fields[1].1,
    })?;
    let prep_word = word(2);
    let preposition =
        Preposition::from_word(&prep_word).ok_or(ParseError::UnknownPreposition {
            token: prep_word,
            column: fields[2].1,
        })?;
    let object_ref = parse_object(fields[3].0, fields[3].1)?;
    let post_word = word(4);
    let post = GripperState::from_word(&post_word).ok_or(ParseError::UnknownGripperWord {
        token: post_word,
        column: fields[4].1,
    })?;

    Ok(MetaAction {
        pre,
        motion,
        location: LocationDescription {
            preposition,
            object_ref,
        },
        post,
    })
}

/// Canonical serialization; `parse(&serialize(a)) == a` for every valid `a`.
pub fn serialize(action: &MetaAction) -> String {
    action.to_string()
}

/// An ordered chain of meta-actions for one task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Plan {
    pub task_id: String,
    pub actions: Vec<MetaAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {error}")]
pub struct PlanTextError {
    /// 1-based line number within the text block.
    pub line: usize,
    pub error: ParseError,
}

impl Plan {
    pub fn new(task_id: impl Into<String>, actions: Vec<MetaAction>) -> Self {
        Self {
            task_id: task_id.into(),
            actions,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// One canonical meta-action per line, newline-terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for a in &self.actions {
            out.push_str(&a.to_string());
            out.push('\n');
        }
        out
    }

    /// Parse a text block, one meta-action per line; blank lines are skipped.
    pub fn from_text(task_id: impl Into<String>, text: &str) -> Result<Self, PlanTextError> {
        let mut actions = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let action = parse(line).map_err(|error| PlanTextError { line: i + 1, error })?;
            actions.push(action);
        }
        Ok(Plan::new(task_id, actions))
    }

    pub fn lines(&self) -> Vec<String> {
        self.actions.iter().map(ToString::to_string).collect()
    }
}

/// The first adjacent pair whose gripper states fail to link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkBreak {
    /// Index of the action whose `pre` disagrees with the previous `post`.
    pub index: usize,
    pub previous_post: GripperState,
    pub pre: GripperState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainReport {
    /// `Some(actual)` when `actions[0].pre` differs from the declared initial state.
    pub initial_mismatch: Option<GripperState>,
    pub first_break: Option<LinkBreak>,
}

impl ChainReport {
    pub fn is_ok(&self) -> bool {
        self.initial_mismatch.is_none() && self.first_break.is_none()
    }
}

impl fmt::Display for ChainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let mut sep = "";
        if let Some(actual) = self.initial_mismatch {
            write!(
                f,
                "action 0 starts {actual} but the gripper is initially {}",
                actual.flip()
            )?;
            sep = "; ";
        }
        if let Some(b) = self.first_break {
            write!(
                f,
                "{sep}linkage broken at index {}: previous post={} vs pre={}",
                b.index, b.previous_post, b.pre
            )?;
        }
        Ok(())
    }
}

impl GripperState {
    pub fn flip(self) -> Self {
        match self {
            GripperState::Open => GripperState::Close,
            GripperState::Close => GripperState::Open,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("plan has no actions")]
    EmptyPlan,
}

/// Check gripper-state linkage: `actions[i].post == actions[i + 1].pre` and
/// `actions[0].pre == initial`.
pub fn validate_chain(plan: &Plan, initial: GripperState) -> Result<ChainReport, ChainError> {
    let first = plan.actions.first().ok_or(ChainError::EmptyPlan)?;
    let initial_mismatch = (first.pre != initial).then_some(first.pre);
    let first_break = plan
        .actions
        .windows(2)
        .enumerate()
        .find(|(_, w)| w[0].post != w[1].pre)
        .map(|(i, w)| LinkBreak {
            index: i + 1,
            previous_post: w[0].post,
            pre: w[1].pre,
        });
    Ok(ChainReport {
        initial_mismatch,
        first_break,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    CloseGripper,
    OpenGripper,
    Hold,
}

pub fn gripper_command(pre: GripperState, post: GripperState) -> GripperCommand {
    match (pre, post) {
        (GripperState::Open, GripperState::Close) => GripperCommand::CloseGripper,
        (GripperState::Close, GripperState::Open) => GripperCommand::OpenGripper,
        _ => GripperCommand::Hold,
    }
}
