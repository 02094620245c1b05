//! Prediction tasks and the classifier head layouts that serve them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpec {
    /// Predict the tool; the action is given as a one-hot side input.
    ToolsWithAction,
    /// Predict the tool from images alone.
    ToolsNoAction,
    /// Predict tool and action with two heads.
    ToolsPlusActions,
    ActionsOnly,
    /// Predict the tool/action pair as one of 16 classes.
    Joint16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    Dual,
    Joint16,
    ToolOnly,
    ActionOnly,
}

impl TaskSpec {
    pub const ALL: [TaskSpec; 5] = [
        TaskSpec::ToolsWithAction,
        TaskSpec::ToolsNoAction,
        TaskSpec::ToolsPlusActions,
        TaskSpec::ActionsOnly,
        TaskSpec::Joint16,
    ];

    pub fn head(self) -> HeadLayout {
        match self {
            TaskSpec::ToolsWithAction | TaskSpec::ToolsNoAction => HeadLayout::ToolOnly,
            TaskSpec::ToolsPlusActions => HeadLayout::Dual,
            TaskSpec::ActionsOnly => HeadLayout::ActionOnly,
            TaskSpec::Joint16 => HeadLayout::Joint16,
        }
    }

    pub fn uses_action_input(self) -> bool {
        matches!(self, TaskSpec::ToolsWithAction)
    }

    pub fn predicts_actions(self) -> bool {
        matches!(
            self,
            TaskSpec::ToolsPlusActions | TaskSpec::ActionsOnly | TaskSpec::Joint16
        )
    }

    /// Command-line spelling.
    pub fn cli_name(self) -> &'static str {
        match self {
            TaskSpec::ToolsWithAction => "tools",
            TaskSpec::ToolsNoAction => "tools-no-action",
            TaskSpec::ToolsPlusActions => "tools+actions",
            TaskSpec::ActionsOnly => "actions",
            TaskSpec::Joint16 => "joint16",
        }
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for TaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "tools" | "tools_with_action" => Ok(TaskSpec::ToolsWithAction),
            "tools-no-action" | "tools_no_action" => Ok(TaskSpec::ToolsNoAction),
            "tools+actions" | "tools_plus_actions" => Ok(TaskSpec::ToolsPlusActions),
            "actions" | "actions_only" => Ok(TaskSpec::ActionsOnly),
            "joint16" => Ok(TaskSpec::Joint16),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

impl HeadLayout {
    pub fn name(self) -> &'static str {
        match self {
            HeadLayout::Dual => "dual",
            HeadLayout::Joint16 => "joint16",
            HeadLayout::ToolOnly => "tool_only",
            HeadLayout::ActionOnly => "action_only",
        }
    }
}

impl fmt::Display for HeadLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_names_parse_back() {
        for t in TaskSpec::ALL {
            assert_eq!(t.cli_name().parse::<TaskSpec>().unwrap(), t);
        }
        assert!("everything".parse::<TaskSpec>().is_err());
    }

    #[test]
    fn only_tools_with_action_takes_side_input() {
        let with: Vec<_> = TaskSpec::ALL
            .into_iter()
            .filter(|t| t.uses_action_input())
            .collect();
        assert_eq!(with, vec![TaskSpec::ToolsWithAction]);
        assert_eq!(TaskSpec::ToolsWithAction.head(), HeadLayout::ToolOnly);
    }
}
