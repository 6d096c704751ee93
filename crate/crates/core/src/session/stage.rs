use std::fmt;

use serde::{Deserialize, Serialize};

/// Steps of an audit session, in their only legal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowStage {
    PromptEntry,
    ExpectationQuestions,
    SingleModelReview,
    SingleModelReflection,
    MultiModelReview,
    CrossModelReflection,
    Completed,
}

impl WorkflowStage {
    pub const ALL: [WorkflowStage; 7] = [
        Self::PromptEntry,
        Self::ExpectationQuestions,
        Self::SingleModelReview,
        Self::SingleModelReflection,
        Self::MultiModelReview,
        Self::CrossModelReflection,
        Self::Completed,
    ];

    pub fn next(self) -> Option<Self> {
        let i = self as usize;
        Self::ALL.get(i + 1).copied()
    }

    /// Stages whose questions must be answered before advancing.
    pub fn is_questionnaire(self) -> bool {
        matches!(
            self,
            Self::ExpectationQuestions | Self::SingleModelReflection | Self::CrossModelReflection
        )
    }

    /// Whether only the primary model's outputs are visible.
    pub fn shows_primary_only(self) -> bool {
        matches!(self, Self::SingleModelReview | Self::SingleModelReflection)
    }

    /// Whether every model's outputs are visible.
    pub fn shows_all_models(self) -> bool {
        self >= Self::MultiModelReview
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PromptEntry => "prompt_entry",
            Self::ExpectationQuestions => "expectation_questions",
            Self::SingleModelReview => "single_model_review",
            Self::SingleModelReflection => "single_model_reflection",
            Self::MultiModelReview => "multi_model_review",
            Self::CrossModelReflection => "cross_model_reflection",
            Self::Completed => "completed",
        }
    }
}

impl fmt::Display for WorkflowStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
