//! Deterministic kinematic tabletop world.
//!
//! Objects are axis-aligned boxes resting on a ground plane at z = 0. The
//! gripper is a point; a grasped rigid object moves with it as a box. Motion
//! is a straight-line sweep checked every `motion_step` meters and stops at
//! the last free sample when blocked. A grasped prismatic handle only moves
//! along its joint axis.

pub mod geometry;
pub mod task;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::meta_action::{GripperCommand, GripperState};
use crate::pose::Pose6D;
use crate::scene::{Relation, SceneEdge, SceneGraph, SceneNode};
pub use geometry::Aabb;
pub use task::{check_success, SuccessSpec, TaskSpec, TASK_NAMES};

pub const SIM_TOML: &str = include_str!("../../fixtures/sim.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Sweep sampling distance, meters.
    pub motion_step: f64,
    /// Rotation sampling while sweeping, radians.
    pub rotation_step: f64,
    pub grasp_radius: f64,
    /// Slack for contact tests.
    pub epsilon: f64,
    /// Per-trial placement noise, meters on x and y.
    pub perturbation: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        toml::from_str(SIM_TOML).expect("embedded sim.toml parses")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Rigid,
    /// Open-top box made of a floor and four wall slabs.
    Container,
    /// A handle on a prismatic joint.
    PrismaticJoint,
    Button,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    /// Unit closing direction; pulling moves the handle along `-axis`.
    pub axis: Vector3<f64>,
    pub max_extension: f64,
    pub extension: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub name: String,
    pub category: String,
    pub kind: ObjectKind,
    pub pose: Pose6D,
    pub half_extents: Vector3<f64>,
    pub fixed: bool,
    /// Wall thickness, containers only.
    pub wall: f64,
    pub joint: Option<Joint>,
    pub pressed: bool,
}

impl WorldObject {
    pub fn aabb(&self) -> Aabb {
        Aabb::from_center(self.pose.position, self.half_extents)
    }

    /// Solid boxes used for collisions and support.
    pub fn collision_boxes(&self) -> Vec<Aabb> {
        let b = self.aabb();
        if self.kind != ObjectKind::Container {
            return vec![b];
        }
        let w = self.wall;
        let (lo, hi) = (b.min, b.max);
        let v = Vector3::new;
        vec![
            Aabb::new(lo, v(hi.x, hi.y, lo.z + w)),
            Aabb::new(v(lo.x, lo.y, lo.z + w), v(lo.x + w, hi.y, hi.z)),
            Aabb::new(v(hi.x - w, lo.y, lo.z + w), hi),
            Aabb::new(v(lo.x + w, lo.y, lo.z + w), v(hi.x - w, lo.y + w, hi.z)),
            Aabb::new(v(lo.x + w, hi.y - w, lo.z + w), v(hi.x - w, hi.y, hi.z)),
        ]
    }

    /// Free space inside a container (everything above the floor, inside the walls).
    pub fn interior(&self) -> Option<Aabb> {
        (self.kind == ObjectKind::Container).then(|| {
            let b = self.aabb();
            let w = Vector3::new(self.wall, self.wall, 0.0);
            Aabb::new(b.min + w + Vector3::new(0.0, 0.0, self.wall), b.max - w)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grasp {
    /// Rigidly attached; `relative` is the object pose in the gripper frame.
    Rigid { name: String, relative: Pose6D },
    Joint { name: String },
}

impl Grasp {
    pub fn name(&self) -> &str {
        match self {
            Grasp::Rigid { name, .. } | Grasp::Joint { name } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gripper {
    pub pose: Pose6D,
    pub state: GripperState,
    pub grasp: Option<Grasp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: BTreeMap<String, WorldObject>,
    pub gripper: Gripper,
    pub config: SimConfig,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveResult {
    pub reached: bool,
    /// Gripper pose after the move (the last free sample when blocked).
    pub final_pose: Pose6D,
    /// What stopped the motion.
    pub blocked_by: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GripperResult {
    pub attached: Option<String>,
    pub released: Option<String>,
    pub pressed: Vec<String>,
}

impl GripperResult {
    pub fn attached_change(&self) -> Option<&str> {
        self.attached.as_deref().or(self.released.as_deref())
    }
}

impl WorldState {
    pub fn object(&self, name: &str) -> Option<&WorldObject> {
        self.objects.get(name)
    }

    /// Name of the rigidly attached object, if any.
    pub fn attached(&self) -> Option<&str> {
        match &self.gripper.grasp {
            Some(Grasp::Rigid { name, .. }) => Some(name),
            _ => None,
        }
    }

    /// Vector from the attached object's center to the gripper point.
    pub fn attached_offset(&self) -> Option<(&WorldObject, Vector3<f64>)> {
        let obj = self.objects.get(self.attached()?)?;
        Some((obj, self.gripper.pose.position - obj.pose.position))
    }

    fn blocker_at(&self, gripper: &Pose6D, moving: &[(&str, Aabb)], skip: &str) -> Option<String> {
        let eps = self.config.epsilon;
        if gripper.position.z < -eps {
            return Some("ground".into());
        }
        for (_, b) in moving {
            if b.min.z < -eps {
                return Some("ground".into());
            }
        }
        for (name, obj) in &self.objects {
            if name == skip {
                continue;
            }
            for cb in obj.collision_boxes() {
                if cb.contains_strict(&gripper.position, eps)
                    || moving.iter().any(|(_, m)| m.overlaps(&cb, eps))
                {
                    return Some(name.clone());
                }
            }
        }
        None
    }

    /// Straight-line sweep of the gripper (and whatever it holds) to `target`.
    pub fn move_gripper(&mut self, target: &Pose6D) -> MoveResult {
        match self.gripper.grasp.clone() {
            Some(Grasp::Joint { name }) => self.move_joint(&name, target),
            grasp => self.move_free(grasp, target),
        }
    }

    fn move_free(&mut self, grasp: Option<Grasp>, target: &Pose6D) -> MoveResult {
        let start = self.gripper.pose;
        let delta = target.position - start.position;
        let steps = sweep_steps(
            delta.norm(),
            start.angle_to(target),
            &self.config,
        );
        let held = match &grasp {
            Some(Grasp::Rigid { name, relative }) => {
                Some((name.clone(), *relative, self.objects[name].half_extents))
            }
            _ => None,
        };
        let skip = held.as_ref().map(|h| h.0.clone()).unwrap_or_default();
        let mut last_free = start;
        let mut blocked_by = None;
        for i in 1..=steps {
            let pose = interpolate(&start, target, i, steps);
            let moving: Vec<(&str, Aabb)> = held
                .iter()
                .map(|(n, rel, half)| (n.as_str(), Aabb::from_center(pose.compose(rel).position, *half)))
                .collect();
            if let Some(b) = self.blocker_at(&pose, &moving, &skip) {
                blocked_by = Some(b);
                break;
            }
            last_free = pose;
        }
        self.gripper.pose = last_free;
        if let Some((name, rel, _)) = &held {
            self.objects.get_mut(name).expect("held object exists").pose = last_free.compose(rel);
        }
        MoveResult {
            reached: blocked_by.is_none(),
            final_pose: last_free,
            blocked_by,
        }
    }

    fn move_joint(&mut self, name: &str, target: &Pose6D) -> MoveResult {
        let eps = self.config.epsilon;
        let start = self.gripper.pose;
        let obj = &self.objects[name];
        let joint = obj.joint.expect("joint grasp on a jointed object");
        let delta = target.position - start.position;
        let along = delta.dot(&joint.axis);
        if (delta - joint.axis * along).norm() > eps {
            return MoveResult {
                reached: false,
                final_pose: start,
                blocked_by: Some(format!("{name} joint axis")),
            };
        }
        let wanted = joint.extension - along;
        let allowed = wanted.clamp(0.0, joint.max_extension);
        let limited = (allowed - wanted).abs() > eps;
        let reachable = Pose6D::new(
            start.position + joint.axis * (joint.extension - allowed),
            target.orientation,
        );
        let steps = sweep_steps((joint.extension - allowed).abs(), start.angle_to(&reachable), &self.config);
        let handle_start = obj.pose.position;
        let half = obj.half_extents;
        let mut last = (start, joint.extension);
        let mut blocked_by = limited.then(|| format!("{name} joint limit"));
        for i in 1..=steps {
            let pose = interpolate(&start, &reachable, i, steps);
            let moved = pose.position - start.position;
            let handle = Aabb::from_center(handle_start + moved, half);
            if let Some(b) = self.blocker_at(&pose, &[(name, handle)], name) {
                blocked_by = Some(b);
                break;
            }
            let ext = if i == steps { allowed } else { joint.extension - moved.dot(&joint.axis) };
            last = (pose, ext.clamp(0.0, joint.max_extension));
        }
        let (pose, extension) = last;
        self.gripper.pose = pose;
        let obj = self.objects.get_mut(name).expect("joint object exists");
        obj.pose.position = handle_start + (pose.position - start.position);
        obj.joint.as_mut().expect("joint").extension = extension;
        MoveResult {
            reached: blocked_by.is_none(),
            final_pose: pose,
            blocked_by,
        }
    }

    /// Apply a gripper command at the current pose.
    pub fn set_gripper(&mut self, command: GripperCommand) -> GripperResult {
        let mut result = GripperResult::default();
        match command {
            GripperCommand::Hold => {}
            GripperCommand::CloseGripper => {
                self.gripper.state = GripperState::Close;
                let g = self.config.grasp_radius;
                let p = self.gripper.pose.position;
                for (name, obj) in self.objects.iter_mut() {
                    if obj.kind == ObjectKind::Button && obj.aabb().distance_to(&p) <= g {
                        obj.pressed = true;
                        result.pressed.push(name.clone());
                    }
                }
                if self.gripper.grasp.is_none() {
                    let mut best: Option<(f64, &WorldObject)> = None;
                    for obj in self.objects.values() {
                        let graspable = (obj.kind == ObjectKind::Rigid && !obj.fixed)
                            || obj.kind == ObjectKind::PrismaticJoint;
                        let d = obj.aabb().distance_to(&p);
                        // BTreeMap order plus strict `<` keeps the lexicographically first on ties.
                        if graspable && d <= g && best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, obj));
                        }
                    }
                    if let Some((_, obj)) = best {
                        self.gripper.grasp = Some(match obj.kind {
                            ObjectKind::PrismaticJoint => Grasp::Joint { name: obj.name.clone() },
                            _ => Grasp::Rigid {
                                name: obj.name.clone(),
                                relative: self.gripper.pose.inverse().compose(&obj.pose),
                            },
                        });
                        result.attached = Some(obj.name.clone());
                    }
                }
            }
            GripperCommand::OpenGripper => {
                self.gripper.state = GripperState::Open;
                if let Some(grasp) = self.gripper.grasp.take() {
                    if let Grasp::Rigid { name, .. } = &grasp {
                        self.settle(name);
                    }
                    result.released = Some(grasp.name().to_string());
                }
            }
        }
        result
    }

    /// Drop an object straight down onto the highest surface under it.
    fn settle(&mut self, name: &str) {
        let eps = self.config.epsilon;
        let b = self.objects[name].aabb();
        let support = self
            .objects
            .iter()
            .filter(|(n, _)| n.as_str() != name)
            .flat_map(|(_, o)| o.collision_boxes())
            .filter(|cb| cb.overlaps_xy(&b, eps) && cb.top() <= b.min.z + eps)
            .map(|cb| cb.top())
            .fold(0.0_f64, f64::max);
        let obj = self.objects.get_mut(name).expect("settling object exists");
        obj.pose.position.z += support - b.min.z;
    }

    /// Pairs of distinct objects whose solid boxes overlap.
    pub fn interpenetrations(&self) -> Vec<(String, String)> {
        let eps = self.config.epsilon;
        let objs: Vec<_> = self.objects.values().collect();
        let mut out = Vec::new();
        for (i, a) in objs.iter().enumerate() {
            for b in &objs[i + 1..] {
                let hit = a
                    .collision_boxes()
                    .iter()
                    .any(|x| b.collision_boxes().iter().any(|y| x.overlaps(y, eps)));
                if hit {
                    out.push((a.name.clone(), b.name.clone()));
                }
            }
        }
        out
    }

    /// Scene graph: every object as a node, `on` edges for resting contact
    /// and `in` edges for objects inside a container.
    pub fn scene_graph(&self) -> SceneGraph {
        let eps = 1e-4;
        let nodes = self
            .objects
            .values()
            .map(|o| SceneNode {
                name: o.name.clone(),
                category: o.category.clone(),
                pose: o.pose,
            })
            .collect();
        let mut edges = Vec::new();
        for a in self.objects.values() {
            let ab = a.aabb();
            for b in self.objects.values().filter(|b| b.name != a.name) {
                let relation = if b.interior().is_some_and(|i| i.contains(&ab.center(), eps)) {
                    Relation::In
                } else if (ab.min.z - b.aabb().top()).abs() < eps && ab.overlaps_xy(&b.aabb(), eps) {
                    Relation::On
                } else {
                    continue;
                };
                edges.push(SceneEdge {
                    subject: a.name.clone(),
                    relation,
                    object: b.name.clone(),
                });
            }
        }
        SceneGraph { nodes, edges }
    }

    /// Canonical JSON encoding; equal strings mean bit-identical worlds.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("world encodes")
    }

    /// Top-down SVG of object footprints and the gripper, for debugging.
    pub fn debug_svg(&self) -> String {
        const SCALE: f64 = 1000.0;
        let mut svg = String::from(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"-100 -500 900 1000\">\n",
        );
        for o in self.objects.values() {
            for b in o.collision_boxes() {
                let _ = writeln!(
                    svg,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"><title>{}</title></rect>",
                    b.min.x * SCALE,
                    -b.max.y * SCALE,
                    (b.max.x - b.min.x) * SCALE,
                    (b.max.y - b.min.y) * SCALE,
                    o.name
                );
            }
        }
        let p = self.gripper.pose.position;
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"6\" fill=\"red\"><title>gripper</title></circle>",
            p.x * SCALE,
            -p.y * SCALE
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn sweep_steps(distance: f64, angle: f64, config: &SimConfig) -> usize {
    let by_distance = (distance / config.motion_step).ceil() as usize;
    let by_angle = (angle / config.rotation_step).ceil() as usize;
    by_distance.max(by_angle).max(1)
}

fn interpolate(start: &Pose6D, end: &Pose6D, i: usize, steps: usize) -> Pose6D {
    if i == steps {
        return *end;
    }
    let t = i as f64 / steps as f64;
    let orientation = start
        .orientation
        .try_slerp(&end.orientation, t, 1e-12)
        .unwrap_or(if t < 0.5 { start.orientation } else { end.orientation });
    Pose6D::new(start.position + (end.position - start.position) * t, orientation)
}
