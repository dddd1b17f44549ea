//! Failure categories assigned one per failed trial.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    /// The target object or grasp point could not be located.
    TargetLocating,
    /// The planner's output could not be parsed or validated.
    ActionParsing,
    /// Every step executed but the task was not achieved.
    TaskPlanning,
    /// The selected candidate pose could not be reached.
    CandidatePose,
    Other,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 5] = [
        FailureCategory::TargetLocating,
        FailureCategory::ActionParsing,
        FailureCategory::TaskPlanning,
        FailureCategory::CandidatePose,
        FailureCategory::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FailureCategory::TargetLocating => "target object / grasp point locating",
            FailureCategory::ActionParsing => "action parsing",
            FailureCategory::TaskPlanning => "task planning",
            FailureCategory::CandidatePose => "candidate pose generation",
            FailureCategory::Other => "other",
        }
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}
