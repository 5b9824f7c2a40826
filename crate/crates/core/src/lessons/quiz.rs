//! Ten-question quizzes scored per category.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const QUIZ_LEN: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Conceptual,
    Practical,
    Security,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Conceptual, Category::Practical, Category::Security];

    /// How many questions of this category a bank holds.
    pub fn quota(self) -> usize {
        match self {
            Category::Conceptual => 5,
            Category::Practical => 3,
            Category::Security => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizQuestion {
    pub id: String,
    pub text: String,
    pub choices: Vec<String>,
    pub correct_index: usize,
    pub category: Category,
}

/// A question as shown to students, without the answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicQuestion {
    pub id: String,
    pub text: String,
    pub choices: Vec<String>,
    pub category: Category,
}

impl From<&QuizQuestion> for PublicQuestion {
    fn from(q: &QuizQuestion) -> Self {
        PublicQuestion {
            id: q.id.clone(),
            text: q.text.clone(),
            choices: q.choices.clone(),
            category: q.category,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuizResult {
    pub correct: Vec<bool>,
    pub categories: BTreeMap<Category, f64>,
    pub overall: f64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuizError {
    #[error("invalid submission: {0}")]
    InvalidSubmission(String),
}

/// Scores `answers` (choice indices, in bank order) against `bank`.
pub fn score_quiz(answers: &[usize], bank: &[QuizQuestion]) -> Result<QuizResult, QuizError> {
    if answers.len() != QUIZ_LEN {
        return Err(QuizError::InvalidSubmission(format!(
            "expected {QUIZ_LEN} answers, got {}",
            answers.len()
        )));
    }
    if bank.len() != QUIZ_LEN {
        return Err(QuizError::InvalidSubmission(format!(
            "quiz bank has {} questions",
            bank.len()
        )));
    }
    if let Some((i, (a, q))) = answers
        .iter()
        .zip(bank)
        .enumerate()
        .find(|(_, (a, q))| **a >= q.choices.len())
    {
        return Err(QuizError::InvalidSubmission(format!(
            "answer {} picks choice {a} but question {} has {} choices",
            i + 1,
            q.id,
            q.choices.len()
        )));
    }
    let correct: Vec<bool> = answers.iter().zip(bank).map(|(a, q)| *a == q.correct_index).collect();
    let mut categories = BTreeMap::new();
    for cat in Category::ALL {
        let (hit, total) = bank
            .iter()
            .zip(&correct)
            .filter(|(q, _)| q.category == cat)
            .fold((0, 0), |(h, t), (_, ok)| (h + usize::from(*ok), t + 1));
        if total > 0 {
            categories.insert(cat, hit as f64 * 100.0 / total as f64);
        }
    }
    let overall = correct.iter().filter(|c| **c).count() as f64 * 100.0 / QUIZ_LEN as f64;
    Ok(QuizResult {
        correct,
        categories,
        overall,
    })
}
