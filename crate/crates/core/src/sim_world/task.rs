//! Declarative task fixtures, per-trial perturbation and success predicates.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Gripper, Joint, ObjectKind, SimConfig, WorldObject, WorldState};
use crate::meta_action::GripperState;
use crate::pose::Pose6D;

pub const TASK_NAMES: [&str; 4] = ["insert_pen", "clean_floor", "open_drawer", "make_coffee"];

fn builtin_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "insert_pen" => include_str!("../../fixtures/insert_pen.toml"),
        "clean_floor" => include_str!("../../fixtures/clean_floor.toml"),
        "open_drawer" => include_str!("../../fixtures/open_drawer.toml"),
        "make_coffee" => include_str!("../../fixtures/make_coffee.toml"),
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessSpec {
    /// Object center inside the container's interior.
    InsideContainer { object: String, container: String },
    /// Every listed object's center inside the container's box.
    AllInside {
        objects: Vec<String>,
        container: String,
    },
    JointExtension { object: String, min_extension: f64 },
    /// Button pressed and the object resting on the pad with its center over it.
    PressedAndPlaced {
        button: String,
        object: String,
        pad: String,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GripperSpec {
    position: [f64; 3],
    #[serde(default = "open")]
    state: GripperState,
}

fn open() -> GripperState {
    GripperState::Open
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSpec {
    axis: [f64; 3],
    max_extension: f64,
    #[serde(default)]
    extension: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectSpec {
    name: String,
    category: Option<String>,
    kind: ObjectKind,
    center: [f64; 3],
    half_extents: [f64; 3],
    #[serde(default)]
    fixed: bool,
    #[serde(default)]
    wall: f64,
    joint: Option<JointSpec>,
    /// Objects sharing a group move together under perturbation.
    group: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureFile {
    name: String,
    instruction: String,
    gripper: GripperSpec,
    objects: Vec<ObjectSpec>,
    success: SuccessSpec,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("no fixture named {0:?}")]
    Missing(String),
    #[error("reading fixture {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("fixture {path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub instruction: String,
    pub initial_world: WorldState,
    pub success: SuccessSpec,
    /// Perturbation group of every object.
    pub groups: BTreeMap<String, String>,
}

impl TaskSpec {
    pub fn builtin(name: &str) -> Result<Self, FixtureError> {
        let src = builtin_source(name).ok_or_else(|| FixtureError::Missing(name.to_string()))?;
        Self::from_toml(name, src, SimConfig::default())
    }

    pub fn load(path: &Path, config: SimConfig) -> Result<Self, FixtureError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: display.clone(),
            source,
        })?;
        Self::from_toml(&display, &text, config)
    }

    pub fn from_toml(source: &str, text: &str, config: SimConfig) -> Result<Self, FixtureError> {
        let invalid = |message: String| FixtureError::Invalid {
            path: source.to_string(),
            message,
        };
        let file: FixtureFile = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let mut objects = BTreeMap::new();
        let mut groups = BTreeMap::new();
        for o in file.objects {
            let joint = match (&o.kind, o.joint) {
                (ObjectKind::PrismaticJoint, Some(j)) => {
                    let axis = Vector3::from(j.axis);
                    if axis.norm() == 0.0 || !(0.0..=j.max_extension).contains(&j.extension) {
                        return Err(invalid(format!("{}: bad joint", o.name)));
                    }
                    Some(Joint {
                        axis: axis.normalize(),
                        max_extension: j.max_extension,
                        extension: j.extension,
                    })
                }
                (ObjectKind::PrismaticJoint, None) => {
                    return Err(invalid(format!("{}: prismatic joint needs [joint]", o.name)))
                }
                (_, Some(_)) => return Err(invalid(format!("{}: only joints take [joint]", o.name))),
                (_, None) => None,
            };
            if o.kind == ObjectKind::Container && !(o.wall > 0.0) {
                return Err(invalid(format!("{}: container needs wall > 0", o.name)));
            }
            if o.half_extents.iter().any(|h| !(*h > 0.0)) {
                return Err(invalid(format!("{}: half extents must be positive", o.name)));
            }
            groups.insert(o.name.clone(), o.group.unwrap_or_else(|| o.name.clone()));
            let obj = WorldObject {
                category: o.category.unwrap_or_else(|| o.name.clone()),
                kind: o.kind,
                pose: Pose6D::new(Vector3::from(o.center), nalgebra::UnitQuaternion::identity()),
                half_extents: Vector3::from(o.half_extents),
                fixed: o.fixed,
                wall: o.wall,
                joint,
                pressed: false,
                name: o.name.clone(),
            };
            if objects.insert(o.name.clone(), obj).is_some() {
                return Err(invalid(format!("duplicate object {}", o.name)));
            }
        }
        let world = WorldState {
            objects,
            gripper: Gripper {
                pose: Pose6D::new(
                    Vector3::from(file.gripper.position),
                    Pose6D::gripper_down_orientation(),
                ),
                state: file.gripper.state,
                grasp: None,
            },
            config,
            rng_seed: 0,
        };
        let spec = TaskSpec {
            name: file.name,
            instruction: file.instruction,
            initial_world: world,
            success: file.success,
            groups,
        };
        spec.check_references().map_err(invalid)?;
        Ok(spec)
    }

    fn check_references(&self) -> Result<(), String> {
        let w = &self.initial_world;
        let need = |name: &str, kind: Option<ObjectKind>| match w.object(name) {
            Some(o) if kind.is_none_or(|k| o.kind == k) => Ok(()),
            Some(_) => Err(format!("success object {name:?} has the wrong kind")),
            None => Err(format!("success refers to unknown object {name:?}")),
        };
        match &self.success {
            SuccessSpec::InsideContainer { object, container } => {
                need(object, None)?;
                need(container, Some(ObjectKind::Container))
            }
            SuccessSpec::AllInside { objects, container } => {
                objects.iter().try_for_each(|o| need(o, None))?;
                need(container, None)
            }
            SuccessSpec::JointExtension { object, .. } => need(object, Some(ObjectKind::PrismaticJoint)),
            SuccessSpec::PressedAndPlaced { button, object, pad } => {
                need(button, Some(ObjectKind::Button))?;
                need(object, None)?;
                need(pad, None)
            }
        }
    }

    /// The initial world with every perturbation group shifted by an
    /// independent uniform offset in `[-p, p]` on x and y.
    pub fn instantiate(&self, trial_seed: u64) -> WorldState {
        let mut world = self.initial_world.clone();
        world.rng_seed = trial_seed;
        let p = world.config.perturbation;
        if p > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
            let mut offsets: BTreeMap<&str, Vector3<f64>> = BTreeMap::new();
            let group_names: std::collections::BTreeSet<&str> =
                self.groups.values().map(String::as_str).collect();
            for g in group_names {
                let dx = rng.random_range(-p..=p);
                let dy = rng.random_range(-p..=p);
                offsets.insert(g, Vector3::new(dx, dy, 0.0));
            }
            for (name, obj) in world.objects.iter_mut() {
                obj.pose.position += offsets[self.groups[name].as_str()];
            }
        }
        world
    }
}

/// Evaluate the task's success predicate.
pub fn check_success(world: &WorldState, success: &SuccessSpec) -> bool {
    let eps = world.config.epsilon;
    match success {
        SuccessSpec::InsideContainer { object, container } => {
            match (world.object(object), world.object(container).and_then(|c| c.interior())) {
                (Some(o), Some(interior)) => {
                    world.attached() != Some(object) && interior.contains(&o.pose.position, 0.0)
                }
                _ => false,
            }
        }
        SuccessSpec::AllInside { objects, container } => {
            let Some(bin) = world.object(container).map(|c| c.aabb()) else {
                return false;
            };
            objects.iter().all(|name| {
                world.attached() != Some(name)
                    && world
                        .object(name)
                        .is_some_and(|o| bin.contains(&o.pose.position, 0.0))
            })
        }
        SuccessSpec::JointExtension { object, min_extension } => world
            .object(object)
            .and_then(|o| o.joint)
            .is_some_and(|j| j.extension >= *min_extension),
        SuccessSpec::PressedAndPlaced { button, object, pad } => {
            let pressed = world.object(button).is_some_and(|b| b.pressed);
            let placed = match (world.object(object), world.object(pad)) {
                (Some(o), Some(p)) => {
                    let (ob, pb) = (o.aabb(), p.aabb());
                    world.attached() != Some(object)
                        && pb.contains_xy(&o.pose.position, 0.0)
                        && (ob.min.z - pb.top()).abs() <= eps
                }
                _ => false,
            };
            pressed && placed
        }
    }
}
