//! Object scene graph: the textual scene representation used for prompting
//! and for embedding tasks.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::Pose6D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub name: String,
    pub category: String,
    pub pose: Pose6D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    On,
    In,
    LeftOf,
    RightOf,
    FrontOf,
    Behind,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::On => "on",
            Relation::In => "in",
            Relation::LeftOf => "left-of",
            Relation::RightOf => "right-of",
            Relation::FrontOf => "front-of",
            Relation::Behind => "behind",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneEdge {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
}

impl SceneEdge {
    /// `relation(subject,object)`
    pub fn token(&self) -> String {
        format!("{}({},{})", self.relation, self.subject, self.object)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<SceneNode>,
    pub edges: Vec<SceneEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SceneError {
    #[error("duplicate node name {0:?}")]
    DuplicateNode(String),
    #[error("edge {edge} references unknown node {name:?}")]
    DanglingEdge { edge: String, name: String },
}

impl SceneGraph {
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return Err(SceneError::DuplicateNode(n.name.clone()));
            }
        }
        for e in &self.edges {
            for name in [&e.subject, &e.object] {
                if !names.contains(name.as_str()) {
                    return Err(SceneError::DanglingEdge {
                        edge: e.token(),
                        name: name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn node(&self, name: &str) -> Option<&SceneNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }

    /// Plain-text rendering used inside prompts.
    pub fn to_prompt_text(&self) -> String {
        let mut out = String::from("objects:\n");
        for n in &self.nodes {
            let p = n.pose.position;
            let _ = writeln!(
                out,
                "- {} ({}) at ({:.3}, {:.3}, {:.3})",
                n.name, n.category, p.x, p.y, p.z
            );
        }
        out.push_str("relations:\n");
        for e in &self.edges {
            let _ = writeln!(out, "- {}", e.token());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str) -> SceneNode {
        SceneNode {
            name: name.into(),
            category: "thing".into(),
            pose: Pose6D::from_xyz(0.0, 0.0, 0.0),
        }
    }

    #[test]
    fn validation() {
        let mut g = SceneGraph {
            nodes: vec![node("cup"), node("table")],
            edges: vec![SceneEdge {
                subject: "cup".into(),
                relation: Relation::On,
                object: "table".into(),
            }],
        };
        assert!(g.validate().is_ok());
        g.edges[0].object = "shelf".into();
        assert!(matches!(g.validate(), Err(SceneError::DanglingEdge { .. })));
        g.edges.clear();
        g.nodes.push(node("cup"));
        assert_eq!(g.validate(), Err(SceneError::DuplicateNode("cup".into())));
    }

    #[test]
    fn relation_serializes_kebab() {
        assert_eq!(serde_json::to_string(&Relation::LeftOf).unwrap(), "\"left-of\"");
        let e = SceneEdge {
            subject: "pen".into(),
            relation: Relation::FrontOf,
            object: "holder".into(),
        };
        assert_eq!(e.token(), "front-of(pen,holder)");
    }
}
