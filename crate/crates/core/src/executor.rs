//! Meta-action execution: locate an initial pose, sample offset candidates
//! around it, let the model pick one, move there, then actuate the gripper.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meta_action::{
    gripper_command, GripperCommand, LocationDescription, MetaAction, MotionKind, Preposition,
};
use crate::model::{parse_choice, ConversationModel, Message, ModelError, TurnKind};
use crate::par::{self, Parallelism};
use crate::planner::{render, Templates};
use crate::pose::Pose6D;
use crate::scene::SceneGraph;
use crate::sim_world::{GripperResult, WorldState};
use crate::taxonomy::FailureCategory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    /// Candidates per step, including the zero offset.
    pub candidates: usize,
    /// Translation sampling radius, meters.
    pub r_max: f64,
    /// Rotation sampling bound, degrees.
    pub alpha_max_deg: f64,
    /// Gap kept over an object for `above`.
    pub clearance: f64,
    /// Contact-range gap for `on`, `front on` and the side prepositions.
    pub standoff: f64,
    /// Length of a directional step.
    pub step: f64,
    pub seed: u64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            candidates: 8,
            r_max: 0.05,
            alpha_max_deg: 30.0,
            clearance: 0.10,
            standoff: 0.02,
            step: 0.10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    TranslationOnly,
    RotationOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub base: Pose6D,
    pub candidates: Vec<Pose6D>,
    pub mode: CandidateMode,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// splitmix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Robot frame: +x away from the robot, +y to its left, +z up.
pub fn direction(p: Preposition) -> Vector3<f64> {
    use Preposition::*;
    match p {
        Up | Above => Vector3::z(),
        Down | On | Into => -Vector3::z(),
        Forward | Behind => Vector3::x(),
        Backward | FrontOn => -Vector3::x(),
        LeftOf => Vector3::y(),
        RightOf => -Vector3::y(),
    }
}

/// Parse a pose-hint reply. Anything unrecognised keeps the default.
pub fn parse_pose_hint(reply: &str) -> Option<UnitQuaternion<f64>> {
    let words: Vec<&str> = reply.split_whitespace().collect();
    match words.as_slice() {
        [w] if w.eq_ignore_ascii_case("forward") => Some(Pose6D::gripper_forward_orientation()),
        [w] if w.eq_ignore_ascii_case("down") => Some(Pose6D::gripper_down_orientation()),
        [q, rest @ ..] if q.eq_ignore_ascii_case("quat") && rest.len() == 4 => {
            let v: Vec<f64> = rest.iter().filter_map(|x| x.parse().ok()).collect();
            let q = nalgebra::Quaternion::new(*v.first()?, *v.get(1)?, *v.get(2)?, *v.get(3)?);
            (q.norm() > 0.0 && q.norm().is_finite()).then(|| Unit::new_normalize(q))
        }
        _ => None,
    }
}

fn pose_hint(
    model: &mut dyn ConversationModel,
    templates: &Templates,
    goal: &str,
) -> Result<Option<UnitQuaternion<f64>>, ModelError> {
    let conversation = [
        Message::system(templates.system),
        Message::user(render(templates.pose_hint, &[("goal", goal)])),
    ];
    Ok(parse_pose_hint(&model.reply(TurnKind::PoseHint, &conversation)?))
}

/// Initial pose for a location description.
///
/// A preposition-only description moves one `step` from the last pose and
/// keeps its orientation. An object-bearing one anchors on the object's box;
/// when something is held, the held object (not the gripper point) is placed
/// at the anchor. Orientation defaults to gripper-down unless the model
/// hints otherwise.
pub fn resolve_init_pose(
    location: &LocationDescription,
    world: &WorldState,
    last: &Pose6D,
    model: &mut dyn ConversationModel,
    config: &ExecutorConfig,
    templates: &Templates,
    goal: &str,
) -> Result<Pose6D, ResolveError> {
    let prep = location.preposition;
    let dir = direction(prep);
    let (position, default_orientation) = match &location.object_ref {
        None => (last.position + dir * config.step, last.orientation),
        Some(name) => {
            let obj = world
                .object(name)
                .ok_or_else(|| ResolveError::UnknownObject(name.clone()))?;
            let b = obj.aabb();
            let c = b.center();
            let held = world.attached_offset().filter(|(h, _)| h.name != *name);
            let anchored = |anchor: Vector3<f64>, normal: Vector3<f64>, gap: f64| match held {
                Some((h, offset)) => anchor + normal * (gap + h.half_extents.dot(&normal.abs())) + offset,
                None => anchor + normal * gap,
            };
            let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
            let position = match prep {
                Preposition::Above => anchored(Vector3::new(c.x, c.y, b.max.z), z, config.clearance),
                Preposition::On => anchored(Vector3::new(c.x, c.y, b.max.z), z, config.standoff),
                Preposition::FrontOn => anchored(Vector3::new(b.min.x, c.y, c.z), -x, config.standoff),
                Preposition::Behind => anchored(Vector3::new(b.max.x, c.y, c.z), x, config.standoff),
                Preposition::LeftOf => anchored(Vector3::new(c.x, b.max.y, c.z), y, config.standoff),
                Preposition::RightOf => anchored(Vector3::new(c.x, b.min.y, c.z), -y, config.standoff),
                Preposition::Into => {
                    let centroid = obj.interior().map_or(c, |i| i.center());
                    held.map_or(centroid, |(_, offset)| centroid + offset)
                }
                Preposition::Up | Preposition::Down | Preposition::Forward | Preposition::Backward => {
                    c + dir * config.step
                }
            };
            (position, Pose6D::gripper_down_orientation())
        }
    };
    let orientation = pose_hint(model, templates, goal)?.unwrap_or(default_orientation);
    Ok(Pose6D::new(position, orientation))
}

fn unit_sphere(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}

fn candidate(init: &Pose6D, mode: CandidateMode, seed: u64, i: usize, config: &ExecutorConfig) -> Pose6D {
    if i == 0 {
        return *init;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let dir = unit_sphere(&mut rng);
    match mode {
        CandidateMode::TranslationOnly => {
            let u: f64 = rng.random();
            let mut offset = dir * (config.r_max * u.cbrt());
            let norm = offset.norm();
            if norm > config.r_max {
                offset *= config.r_max / norm;
            }
            Pose6D::new(init.position + offset, init.orientation)
        }
        CandidateMode::RotationOnly => {
            let alpha = config.alpha_max_deg.to_radians();
            let angle = rng.random_range(-alpha..=alpha);
            let rotation = UnitQuaternion::from_axis_angle(&Unit::new_normalize(dir), angle);
            let mut orientation = init.orientation * rotation;
            orientation.renormalize();
            Pose6D::new(init.position, orientation)
        }
    }
}

/// `n` candidates around `init`; candidate 0 is `init` itself. Each index
/// draws from its own ChaCha stream, so the set is independent of `mode`.
pub fn sample_candidates_with(
    init: &Pose6D,
    motion: MotionKind,
    n: usize,
    seed: u64,
    config: &ExecutorConfig,
    mode: Parallelism,
) -> CandidateSet {
    let kind = match motion {
        MotionKind::Move => CandidateMode::TranslationOnly,
        MotionKind::Rotate => CandidateMode::RotationOnly,
    };
    let candidates = par::map_range(n.max(1), mode, |i| candidate(init, kind, seed, i, config));
    CandidateSet {
        base: *init,
        candidates,
        mode: kind,
        seed,
    }
}

pub fn sample_candidates(
    init: &Pose6D,
    motion: MotionKind,
    n: usize,
    seed: u64,
    config: &ExecutorConfig,
) -> CandidateSet {
    sample_candidates_with(init, motion, n, seed, config, Parallelism::Sequential)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub index: usize,
    pub pose: Pose6D,
    /// Model reply, absent when there was only one candidate.
    pub reply: Option<String>,
}

pub fn candidate_summary(set: &CandidateSet) -> String {
    set.candidates
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let [r, pi, y] = p.rpy_degrees();
            format!(
                "{i}: position ({:.3}, {:.3}, {:.3}) m, rpy ({:.1}, {:.1}, {:.1}) deg",
                p.position.x, p.position.y, p.position.z, r, pi, y
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Present the candidates to the model and take the index it names.
/// Out-of-range or unparseable replies fall back to candidate 0.
pub fn select_target(
    set: &CandidateSet,
    goal: &str,
    scene: &SceneGraph,
    model: &mut dyn ConversationModel,
    templates: &Templates,
) -> Result<Selected, ModelError> {
    if set.candidates.len() <= 1 {
        return Ok(Selected {
            index: 0,
            pose: set.candidates.first().copied().unwrap_or(set.base),
            reply: None,
        });
    }
    let prompt = render(
        templates.select_candidate,
        &[
            ("goal", goal),
            ("scene", &scene.to_prompt_text()),
            ("candidates", &candidate_summary(set)),
        ],
    );
    let conversation = [Message::system(templates.system), Message::user(prompt)];
    let reply = model.reply(TurnKind::SelectCandidate, &conversation)?;
    let index = parse_choice(&reply)
        .filter(|i| *i < set.candidates.len())
        .unwrap_or(0);
    Ok(Selected {
        index,
        pose: set.candidates[index],
        reply: Some(reply),
    })
}

/// One executed step, as written to the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub index: usize,
    pub action_line: String,
    pub p_init: Option<Pose6D>,
    pub p_target: Option<Pose6D>,
    pub candidate_index: Option<usize>,
    pub reached: bool,
    pub blocked_by: Option<String>,
    pub gripper_command: Option<GripperCommand>,
    pub gripper_result: Option<GripperResult>,
    pub category: Option<FailureCategory>,
    pub error: Option<String>,
}

impl StepOutcome {
    fn new(index: usize, action: &MetaAction) -> Self {
        Self {
            index,
            action_line: action.serialize(),
            p_init: None,
            p_target: None,
            candidate_index: None,
            reached: false,
            blocked_by: None,
            gripper_command: None,
            gripper_result: None,
            category: None,
            error: None,
        }
    }
}

/// Resolve, sample, select, move and actuate. Unknown objects and blocked
/// motions are reported on the outcome; only model failures are errors.
pub fn execute_action(
    index: usize,
    action: &MetaAction,
    world: &mut WorldState,
    model: &mut dyn ConversationModel,
    config: &ExecutorConfig,
    templates: &Templates,
) -> Result<StepOutcome, ModelError> {
    let mut out = StepOutcome::new(index, action);
    let goal = out.action_line.clone();
    let last = world.gripper.pose;
    let init = match resolve_init_pose(&action.location, world, &last, model, config, templates, &goal) {
        Ok(p) => p,
        Err(ResolveError::UnknownObject(name)) => {
            out.category = Some(FailureCategory::TargetLocating);
            out.error = Some(format!("unknown object {name:?}"));
            return Ok(out);
        }
        Err(ResolveError::Model(e)) => return Err(e),
    };
    out.p_init = Some(init);
    let set = sample_candidates(&init, action.motion, config.candidates, mix_seed(config.seed, index as u64), config);
    let scene = world.scene_graph();
    let selected = select_target(&set, &goal, &scene, model, templates)?;
    out.candidate_index = Some(selected.index);
    out.p_target = Some(selected.pose);
    let moved = world.move_gripper(&selected.pose);
    out.reached = moved.reached;
    if !moved.reached {
        out.blocked_by = moved.blocked_by.clone();
        out.category = Some(FailureCategory::CandidatePose);
        out.error = Some(format!(
            "motion blocked by {}",
            moved.blocked_by.as_deref().unwrap_or("an obstacle")
        ));
        return Ok(out);
    }
    let command = gripper_command(action.pre, action.post);
    out.gripper_command = Some(command);
    out.gripper_result = Some(world.set_gripper(command));
    Ok(out)
}
