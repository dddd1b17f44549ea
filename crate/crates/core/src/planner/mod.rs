//! Five-stage chain-of-thought planning conversation.
//!
//! Stages: (1) describe the scenario, (2) list task-relevant objects,
//! (3) write natural-language steps, (4) check and revise the steps,
//! (5) emit meta-actions. A retrieved demonstration's prompt cache, when
//! given, is replayed as an extra dialogue round ahead of stage 1. The
//! stage-5 block is parsed and chain-validated; a chain violation gets one
//! repair round before the session is marked failed.

pub mod templates;

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meta_action::{
    validate_chain, ChainReport, GripperState, MetaAction, ParseError, Plan,
};
use crate::model::{ConversationModel, Message, PromptCache, Role, TurnKind};
use crate::scene::SceneGraph;
pub use templates::{render, Templates, TEMPLATE_VERSION};

pub const STAGE_COUNT: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannerConfig {
    pub initial_gripper: GripperState,
    pub templates: Templates,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            initial_gripper: GripperState::Open,
            templates: templates::V1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTurn {
    pub turn: TurnKind,
    pub prompt: Message,
    pub reply: Message,
    #[serde(default)]
    pub stale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Revised,
    Unstated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Model,
    StageFormat,
    PlanParse,
    ChainValidation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFailure {
    pub stage: TurnKind,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningSession {
    pub task_id: String,
    pub instruction: String,
    pub scene: SceneGraph,
    pub icl_demo: Option<PromptCache>,
    pub initial_gripper: GripperState,
    pub model_tag: String,
    pub system: Message,
    pub turns: Vec<StageTurn>,
    pub verdict: Option<Verdict>,
    pub final_plan: Option<Plan>,
    pub failure: Option<SessionFailure>,
    /// Bumped on every edit; used for optimistic concurrency by the API.
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlannerError {
    #[error("instruction is empty")]
    EmptyInstruction,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("stage {0} has not completed")]
pub struct StageIncomplete(pub u8);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StageParseError {
    #[error("reply contains no fenced meta-action block")]
    NoFencedBlock,
    #[error("meta-action block is empty")]
    EmptyBlock,
    #[error("meta-action line {line}: {error}")]
    Line { line: usize, error: ParseError },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("stage {0} is outside 1..=5")]
    NoSuchStage(u8),
    #[error("stage {0} was never reached in this session")]
    StageMissing(u8),
    #[error("invalid meta-action text: {0}")]
    InvalidMetaActionText(StageParseError),
    #[error("meta-action chain rejected: {0}")]
    ChainRejected(ChainReport),
}

impl EditError {
    /// Line (for parse errors) or action index (for chain errors) to point at.
    pub fn location(&self) -> Option<usize> {
        match self {
            EditError::InvalidMetaActionText(StageParseError::Line { line, .. }) => Some(*line),
            EditError::ChainRejected(report) => Some(
                report
                    .first_break
                    .map(|b| b.index)
                    .unwrap_or(0),
            ),
            _ => None,
        }
    }
}

impl PlanningSession {
    pub fn stage_turn(&self, stage: u8) -> Option<&StageTurn> {
        self.turns.iter().find(|t| t.turn == TurnKind::Stage(stage))
    }

    pub fn stage_reply(&self, stage: u8) -> Option<&str> {
        self.stage_turn(stage).map(|t| t.reply.text())
    }

    pub fn repair_reply(&self) -> Option<&str> {
        self.turns
            .iter()
            .find(|t| t.turn == TurnKind::Repair)
            .map(|t| t.reply.text())
    }

    /// Number of the five planner stages that produced a reply.
    pub fn stages_run(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| matches!(t.turn, TurnKind::Stage(_)))
            .count()
    }

    pub fn is_success(&self) -> bool {
        self.final_plan.is_some()
    }

    /// Everything the model saw, demonstration included.
    pub fn conversation(&self) -> Vec<Message> {
        let mut out = vec![self.system.clone()];
        if let Some(demo) = &self.icl_demo {
            out.extend(demo.dialogue().iter().cloned());
        }
        for t in &self.turns {
            out.push(t.prompt.clone());
            out.push(t.reply.clone());
        }
        out
    }

    /// This session's own conversation, for storage as a demonstration.
    pub fn prompt_cache(&self, created_at: DateTime<Utc>) -> PromptCache {
        let mut messages = vec![self.system.clone()];
        for t in &self.turns {
            messages.push(t.prompt.clone());
            messages.push(t.reply.clone());
        }
        PromptCache {
            messages,
            model_tag: self.model_tag.clone(),
            created_at,
        }
    }

    fn fail(&mut self, stage: TurnKind, kind: FailureKind, message: impl Into<String>) {
        self.failure = Some(SessionFailure {
            stage,
            kind,
            message: message.into(),
        });
    }

    /// Replace the output of `stage`. Later stages become stale; a stage-5
    /// edit is parsed and chain-validated before it is accepted.
    pub fn edit_stage(&mut self, stage: u8, text: &str) -> Result<(), EditError> {
        if !(1..=STAGE_COUNT).contains(&stage) {
            return Err(EditError::NoSuchStage(stage));
        }
        let pos = self
            .turns
            .iter()
            .position(|t| t.turn == TurnKind::Stage(stage))
            .ok_or(EditError::StageMissing(stage))?;

        if stage == STAGE_COUNT {
            let actions = parse_meta_text(text).map_err(EditError::InvalidMetaActionText)?;
            let plan = Plan::new(self.task_id.clone(), actions);
            let report = validate_chain(&plan, self.initial_gripper)
                .map_err(|_| EditError::InvalidMetaActionText(StageParseError::EmptyBlock))?;
            if !report.is_ok() {
                return Err(EditError::ChainRejected(report));
            }
            self.turns.retain(|t| t.turn != TurnKind::Repair);
            let turn = &mut self.turns[pos];
            turn.reply.set_text(text);
            turn.stale = false;
            self.final_plan = Some(plan);
            self.failure = None;
        } else {
            self.turns[pos].reply.set_text(text);
            self.turns[pos].stale = false;
            for t in &mut self.turns {
                let downstream = match t.turn {
                    TurnKind::Stage(n) => n > stage,
                    TurnKind::Repair => true,
                    _ => false,
                };
                if downstream {
                    t.stale = true;
                }
            }
            if stage == 4 {
                self.verdict = Some(parse_verdict(text));
            }
            self.final_plan = None;
        }
        self.version += 1;
        Ok(())
    }

    /// Stages currently marked stale.
    pub fn stale_stages(&self) -> Vec<u8> {
        self.turns
            .iter()
            .filter_map(|t| match (t.turn, t.stale) {
                (TurnKind::Stage(n), true) => Some(n),
                _ => None,
            })
            .collect()
    }
}

/// Lowercased, deduplicated object names from the stage-2 `- name` list.
pub fn extract_relevant_objects(
    session: &PlanningSession,
) -> Result<BTreeSet<String>, StageIncomplete> {
    session
        .stage_reply(2)
        .map(parse_object_list)
        .ok_or(StageIncomplete(2))
}

pub fn parse_object_list(reply: &str) -> BTreeSet<String> {
    reply
        .lines()
        .filter_map(|l| l.trim().strip_prefix('-'))
        .map(|name| {
            name.split_whitespace()
                .map(str::to_lowercase)
                .collect::<Vec<_>>()
                .join(" ")
        })
        .filter(|n| !n.is_empty())
        .collect()
}

pub fn parse_verdict(reply: &str) -> Verdict {
    let first = reply
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_lowercase();
    match first.strip_prefix("verdict:").map(str::trim) {
        Some(v) if v.starts_with("ok") => Verdict::Accepted,
        Some(v) if v.starts_with("revised") => Verdict::Revised,
        _ => Verdict::Unstated,
    }
}

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    if let Some(rest) = t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")) {
        return rest;
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r;
        }
    }
    t
}

fn parse_lines<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Result<Vec<MetaAction>, StageParseError> {
    let mut actions = Vec::new();
    for (line, raw) in lines {
        let body = strip_list_marker(raw);
        if body.is_empty() {
            continue;
        }
        let action = crate::meta_action::parse(body)
            .map_err(|error| StageParseError::Line { line, error })?;
        actions.push(action);
    }
    if actions.is_empty() {
        return Err(StageParseError::EmptyBlock);
    }
    Ok(actions)
}

/// Extract and parse the first fenced block of a stage-5 reply.
/// Line numbers in errors are 1-based within the block.
pub fn parse_meta_block(reply: &str) -> Result<Vec<MetaAction>, StageParseError> {
    let mut lines = reply.lines();
    lines
        .by_ref()
        .find(|l| l.trim_start().starts_with("```"))
        .ok_or(StageParseError::NoFencedBlock)?;
    let body = lines.take_while(|l| !l.trim_start().starts_with("```"));
    parse_lines(body.enumerate().map(|(i, l)| (i + 1, l)))
}

/// Stage-5 text as edited by a human: a fenced block, or bare lines.
pub fn parse_meta_text(text: &str) -> Result<Vec<MetaAction>, StageParseError> {
    if text.lines().any(|l| l.trim_start().starts_with("```")) {
        parse_meta_block(text)
    } else {
        parse_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
    }
}

/// Deterministic task id derived from the instruction.
pub fn task_slug(instruction: &str) -> String {
    let slug = instruction
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_");
    slug.chars().take(64).collect()
}

#[derive(Debug, Clone, Default)]
pub struct Planner {
    config: PlannerConfig,
}

impl Planner {
    pub fn new(config: PlannerConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn meta_action_definition(&self) -> String {
        render(
            self.config.templates.meta_action_definition,
            &[("initial_gripper", self.config.initial_gripper.as_str())],
        )
    }

    fn stage_prompt(&self, stage: u8, instruction: &str, scene: &SceneGraph) -> Message {
        let t = &self.config.templates;
        match stage {
            1 => {
                let scene_text = scene.to_prompt_text();
                Message::user_with_scene(
                    render(
                        t.describe,
                        &[("instruction", instruction), ("scene", &scene_text)],
                    ),
                    scene.clone(),
                )
            }
            2 => Message::user(render(t.objects, &[("instruction", instruction)])),
            3 => Message::user(render(t.steps, &[("instruction", instruction)])),
            4 => Message::user(render(t.revise, &[("instruction", instruction)])),
            _ => Message::user(render(
                t.meta_actions,
                &[("meta_action_definition", &self.meta_action_definition())],
            )),
        }
    }

    /// Run the planning conversation. Model and format failures are recorded
    /// on the returned session rather than returned as errors.
    pub fn plan_task(
        &self,
        instruction: &str,
        scene: &SceneGraph,
        model: &mut dyn ConversationModel,
        demo: Option<&PromptCache>,
    ) -> Result<PlanningSession, PlannerError> {
        if instruction.trim().is_empty() {
            return Err(PlannerError::EmptyInstruction);
        }
        let system = Message::system(self.config.templates.system);
        let mut session = PlanningSession {
            task_id: task_slug(instruction),
            instruction: instruction.to_string(),
            scene: scene.clone(),
            icl_demo: demo.cloned(),
            initial_gripper: self.config.initial_gripper,
            model_tag: model.tag().to_string(),
            system: system.clone(),
            turns: Vec::with_capacity(STAGE_COUNT as usize + 1),
            verdict: None,
            final_plan: None,
            failure: None,
            version: 0,
        };
        let mut conversation = vec![system];
        if let Some(demo) = demo {
            conversation.extend(demo.dialogue().iter().filter(|m| m.role() != Role::System).cloned());
        }

        for stage in 1..=STAGE_COUNT {
            let prompt = self.stage_prompt(stage, instruction, scene);
            let turn = TurnKind::Stage(stage);
            let Some(reply) = exchange(model, turn, prompt, &mut conversation, &mut session) else {
                return Ok(session);
            };
            match stage {
                2 if parse_object_list(&reply).is_empty() => {
                    session.fail(
                        turn,
                        FailureKind::StageFormat,
                        "object list has no \"- name\" entries",
                    );
                    return Ok(session);
                }
                4 => session.verdict = Some(parse_verdict(&reply)),
                _ => {}
            }
        }

        let stage5 = session.stage_reply(STAGE_COUNT).unwrap_or_default().to_string();
        let plan = match parse_meta_block(&stage5) {
            Ok(actions) => Plan::new(session.task_id.clone(), actions),
            Err(e) => {
                session.fail(TurnKind::Stage(STAGE_COUNT), FailureKind::PlanParse, e.to_string());
                return Ok(session);
            }
        };
        let report = chain_report(&plan, self.config.initial_gripper);
        if report.is_ok() {
            session.final_plan = Some(plan);
            return Ok(session);
        }

        let prompt = Message::user(render(
            self.config.templates.repair,
            &[("error", &report.to_string())],
        ));
        let Some(reply) = exchange(model, TurnKind::Repair, prompt, &mut conversation, &mut session)
        else {
            return Ok(session);
        };
        let plan = match parse_meta_block(&reply) {
            Ok(actions) => Plan::new(session.task_id.clone(), actions),
            Err(e) => {
                session.fail(TurnKind::Repair, FailureKind::PlanParse, e.to_string());
                return Ok(session);
            }
        };
        let report = chain_report(&plan, self.config.initial_gripper);
        if report.is_ok() {
            session.final_plan = Some(plan);
        } else {
            session.fail(TurnKind::Repair, FailureKind::ChainValidation, report.to_string());
        }
        Ok(session)
    }
}

fn chain_report(plan: &Plan, initial: GripperState) -> ChainReport {
    // parse_meta_block never yields an empty plan
    validate_chain(plan, initial).expect("non-empty plan")
}

fn exchange(
    model: &mut dyn ConversationModel,
    turn: TurnKind,
    prompt: Message,
    conversation: &mut Vec<Message>,
    session: &mut PlanningSession,
) -> Option<String> {
    conversation.push(prompt.clone());
    match model.reply(turn, conversation) {
        Ok(reply) => {
            let reply_msg = Message::assistant(reply.clone());
            conversation.push(reply_msg.clone());
            session.turns.push(StageTurn {
                turn,
                prompt,
                reply: reply_msg,
                stale: false,
            });
            Some(reply)
        }
        Err(e) => {
            session.fail(turn, FailureKind::Model, e.to_string());
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScriptedModel, TranscriptRecord};

    fn script(stage5: &str) -> ScriptedModel {
        ScriptedModel::from_records(vec![
            TranscriptRecord::new(TurnKind::Stage(1), "A burger sits on a plate."),
            TranscriptRecord::new(TurnKind::Stage(2), "- burger\n- plate"),
            TranscriptRecord::new(TurnKind::Stage(3), "1. reach the burger\n2. grasp it"),
            TranscriptRecord::new(TurnKind::Stage(4), "VERDICT: ok"),
            TranscriptRecord::new(TurnKind::Stage(5), stage5),
        ])
    }

    #[test]
    fn object_list_parsing() {
        assert_eq!(
            parse_object_list("- burger\n- plate"),
            ["burger", "plate"].map(String::from).into()
        );
        assert_eq!(parse_object_list("- cup\n- Cup"), ["cup"].map(String::from).into());
        assert!(parse_object_list("burger, plate").is_empty());
    }

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("VERDICT: ok"), Verdict::Accepted);
        assert_eq!(parse_verdict("\nverdict: Revised\n1. x"), Verdict::Revised);
        assert_eq!(parse_verdict("looks fine"), Verdict::Unstated);
    }

    #[test]
    fn meta_block_extraction() {
        let reply = "Here you go:\n```meta\n1. opened, move to, above, cup, opened\n- opened, move to, on, cup, closed\n```\ntrailing";
        let actions = parse_meta_block(reply).unwrap();
        assert_eq!(actions.len(), 2);
        assert_eq!(parse_meta_block("no actions"), Err(StageParseError::NoFencedBlock));
        assert_eq!(parse_meta_block("```\n```"), Err(StageParseError::EmptyBlock));
        assert!(matches!(
            parse_meta_block("```\nopened, move to, above, cup, opened\ngrab cup\n```"),
            Err(StageParseError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn plans_and_records_stages() {
        let mut model = script("```meta\nopened, move to, front on, burger, closed\n```");
        let s = Planner::default()
            .plan_task("pick up the burger", &SceneGraph::default(), &mut model, None)
            .unwrap();
        assert!(s.failure.is_none(), "{:?}", s.failure);
        assert_eq!(s.stages_run(), 5);
        assert_eq!(s.verdict, Some(Verdict::Accepted));
        assert_eq!(s.task_id, "pick_up_the_burger");
        let plan = s.final_plan.as_ref().unwrap();
        assert_eq!(plan.actions[0].to_string(), "opened, move to, front on, burger, closed");
        assert_eq!(
            extract_relevant_objects(&s).unwrap(),
            ["burger", "plate"].map(String::from).into()
        );
        let cache = s.prompt_cache(DateTime::<Utc>::UNIX_EPOCH);
        assert!(cache.check_shape().is_ok());
        assert_eq!(cache.messages.len(), 11);
    }

    #[test]
    fn unparseable_stage5_fails() {
        let mut model = script("no actions");
        let s = Planner::default()
            .plan_task("pick up the burger", &SceneGraph::default(), &mut model, None)
            .unwrap();
        let f = s.failure.unwrap();
        assert_eq!(f.stage, TurnKind::Stage(5));
        assert_eq!(f.kind, FailureKind::PlanParse);
        assert!(s.final_plan.is_none());
    }

    #[test]
    fn repair_round_fixes_chain() {
        let bad = "```\nopened, move to, on, burger, closed\nopened, move to, up, , opened\n```";
        let mut records = script(bad).rewound_records();
        records.push(TranscriptRecord::new(
            TurnKind::Repair,
            "```\nopened, move to, on, burger, closed\nclosed, move to, up, , closed\n```",
        ));
        let mut model = ScriptedModel::from_records(records);
        let s = Planner::default()
            .plan_task("lift the burger", &SceneGraph::default(), &mut model, None)
            .unwrap();
        assert!(s.is_success());
        assert!(s.repair_reply().is_some());
        assert_eq!(s.stages_run(), 5);
    }

    #[test]
    fn chain_failure_after_repair() {
        let bad = "```\nopened, move to, on, burger, closed\nopened, move to, up, , opened\n```";
        let mut records = script(bad).rewound_records();
        records.push(TranscriptRecord::new(TurnKind::Repair, bad));
        let mut model = ScriptedModel::from_records(records);
        let s = Planner::default()
            .plan_task("lift the burger", &SceneGraph::default(), &mut model, None)
            .unwrap();
        let f = s.failure.unwrap();
        assert_eq!(f.stage, TurnKind::Repair);
        assert_eq!(f.kind, FailureKind::ChainValidation);
    }

    #[test]
    fn model_error_recorded_with_stage() {
        let mut model = ScriptedModel::from_records(vec![TranscriptRecord::new(
            TurnKind::Stage(1),
            "desc",
        )]);
        let s = Planner::default()
            .plan_task("x", &SceneGraph::default(), &mut model, None)
            .unwrap();
        let f = s.failure.unwrap();
        assert_eq!(f.stage, TurnKind::Stage(2));
        assert_eq!(f.kind, FailureKind::Model);
    }

    #[test]
    fn empty_instruction_rejected() {
        let mut model = script("");
        assert_eq!(
            Planner::default().plan_task("  ", &SceneGraph::default(), &mut model, None),
            Err(PlannerError::EmptyInstruction)
        );
    }

    #[test]
    fn demo_is_prepended_without_changing_stage_count() {
        let stage5 = "```meta\nopened, move to, front on, burger, closed\n```";
        let mut first = script(stage5);
        let planner = Planner::default();
        let demo_session = planner
            .plan_task("pick up the burger", &SceneGraph::default(), &mut first, None)
            .unwrap();
        let demo = demo_session.prompt_cache(DateTime::<Utc>::UNIX_EPOCH);
        let mut second = script(stage5);
        let s = planner
            .plan_task("pick up the fries", &SceneGraph::default(), &mut second, Some(&demo))
            .unwrap();
        assert_eq!(s.stages_run(), 5);
        let conv = s.conversation();
        assert_eq!(conv.len(), 1 + 10 + 10);
        assert_eq!(conv[1].text(), demo.messages[1].text());
        assert_eq!(conv.iter().filter(|m| m.role() == Role::System).count(), 1);
    }

    #[test]
    fn edits_invalidate_downstream() {
        let mut model = script("```meta\nopened, move to, front on, burger, closed\n```");
        let mut s = Planner::default()
            .plan_task("pick up the burger", &SceneGraph::default(), &mut model, None)
            .unwrap();
        s.edit_stage(3, "1. do it differently").unwrap();
        assert_eq!(s.stale_stages(), vec![4, 5]);
        assert!(s.final_plan.is_none());
        assert_eq!(s.version, 1);

        let err = s
            .edit_stage(5, "opened, move to, on, burger, closed\nopened, move to, up, , closed")
            .unwrap_err();
        assert_eq!(err.location(), Some(1));
        assert!(matches!(err, EditError::ChainRejected(_)));

        s.edit_stage(5, "opened, move to, on, burger, closed\nclosed, move to, up, , closed")
            .unwrap();
        assert_eq!(s.final_plan.as_ref().unwrap().len(), 2);
        assert_eq!(s.stale_stages(), vec![4]);
        assert_eq!(s.edit_stage(6, "x"), Err(EditError::NoSuchStage(6)));
    }

    impl ScriptedModel {
        fn rewound_records(&self) -> Vec<TranscriptRecord> {
            let mut m = self.rewound();
            (1..=5)
                .map(|i| TranscriptRecord::new(TurnKind::Stage(i), m.reply(TurnKind::Stage(i), &[]).unwrap()))
                .collect()
        }
    }
}
