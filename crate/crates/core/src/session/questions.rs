use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::WorkflowStage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub stage: WorkflowStage,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("stage `{0}` has no questions")]
    MissingStage(WorkflowStage),
    #[error("stage `{0}` does not take answers")]
    NotAQuestionnaire(WorkflowStage),
    #[error("question `{0}` has empty text")]
    EmptyText(String),
    #[error("cannot read question catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed question catalog: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Fixed per-stage questionnaire. Questions keep their listed order within
/// a stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct QuestionCatalog {
    questions: Vec<Question>,
}

impl QuestionCatalog {
    pub fn new(mut questions: Vec<Question>) -> Result<Self, CatalogError> {
        let mut ids = HashSet::new();
        for q in &questions {
            if !q.stage.is_questionnaire() {
                return Err(CatalogError::NotAQuestionnaire(q.stage));
            }
            if q.text.trim().is_empty() {
                return Err(CatalogError::EmptyText(q.id.clone()));
            }
            if !ids.insert(q.id.as_str()) {
                return Err(CatalogError::DuplicateId(q.id.clone()));
            }
        }
        for stage in WorkflowStage::ALL
            .into_iter()
            .filter(|s| s.is_questionnaire())
        {
            if !questions.iter().any(|q| q.stage == stage) {
                return Err(CatalogError::MissingStage(stage));
            }
        }
        // Stable sort keeps catalog order inside each stage.
        questions.sort_by_key(|q| q.stage);
        Ok(Self { questions })
    }

    pub fn default_catalog() -> Self {
        let q = |id: &str, stage, text: &str| Question {
            id: id.into(),
            stage,
            text: text.into(),
        };
        use WorkflowStage::*;
        Self::new(vec![
            q(
                "prompt-motivation",
                ExpectationQuestions,
                "Why did you pick this prompt to audit?",
            ),
            q(
                "expected-images",
                ExpectationQuestions,
                "What images do you expect the models to generate for it?",
            ),
            q(
                "expectation-match",
                SingleModelReflection,
                "Do these images match what you expected before seeing them?",
            ),
            q(
                "surprises",
                SingleModelReflection,
                "Is anything about these results unexpected?",
            ),
            q(
                "harm-comparison",
                CrossModelReflection,
                "Now that you can compare several models, do you notice any potentially harmful details in the first model's images that you missed earlier?",
            ),
        ])
        .expect("default catalog is valid")
    }

    /// Reads a JSON array of `{id, stage, text}` objects.
    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let questions: Vec<Question> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(questions)
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn for_stage(&self, stage: WorkflowStage) -> impl Iterator<Item = &Question> {
        self.questions.iter().filter(move |q| q.stage == stage)
    }

    pub fn all(&self) -> &[Question] {
        &self.questions
    }

    /// Position of a question in report order (stage order, then catalog order).
    pub fn position(&self, id: &str) -> Option<usize> {
        self.questions.iter().position(|q| q.id == id)
    }
}
