//! Stage ordering and per-student lesson progress.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::quiz::QuizResult;
use crate::scenario::ModuleId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Experience,
    Reflection,
    Conceptualization,
    Experimentation,
    Quiz,
}

impl Stage {
    pub const ORDER: [Stage; 5] = [
        Stage::Experience,
        Stage::Reflection,
        Stage::Conceptualization,
        Stage::Experimentation,
        Stage::Quiz,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Experience => "experience",
            Stage::Reflection => "reflection",
            Stage::Conceptualization => "conceptualization",
            Stage::Experimentation => "experimentation",
            Stage::Quiz => "quiz",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProgressError {
    #[error("cannot start {attempted:?} yet; finish {pending:?} first")]
    OutOfOrderStage { attempted: Stage, pending: Stage },
    #[error("survey answers must be between 1 and 5")]
    BadLikert,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurveyPhase {
    Pre,
    Post,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Surveys {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pre: Option<Vec<u8>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub post: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LessonProgress {
    pub student_id: String,
    pub module: ModuleId,
    pub completed_stages: BTreeSet<Stage>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub quiz_result: Option<QuizResult>,
    #[serde(default)]
    pub surveys: Surveys,
}

impl LessonProgress {
    pub fn new(student_id: impl Into<String>, module: ModuleId) -> Self {
        LessonProgress {
            student_id: student_id.into(),
            module,
            completed_stages: BTreeSet::new(),
            quiz_result: None,
            surveys: Surveys::default(),
        }
    }

    /// First stage not yet completed.
    pub fn pending(&self) -> Option<Stage> {
        Stage::ORDER.into_iter().find(|s| !self.completed_stages.contains(s))
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.completed_stages.contains(&stage)
    }

    /// `stage` may start once every earlier stage is done.
    pub fn may_enter(&self, stage: Stage) -> Result<(), ProgressError> {
        match self.pending() {
            Some(pending) if pending < stage => Err(ProgressError::OutOfOrderStage {
                attempted: stage,
                pending,
            }),
            _ => Ok(()),
        }
    }

    /// Marks `stage` complete. Completing a stage again is a no-op.
    pub fn advance(&mut self, stage: Stage) -> Result<(), ProgressError> {
        self.may_enter(stage)?;
        self.completed_stages.insert(stage);
        Ok(())
    }

    pub fn record_survey(&mut self, phase: SurveyPhase, answers: Vec<u8>) -> Result<(), ProgressError> {
        if answers.iter().any(|a| !(1..=5).contains(a)) {
            return Err(ProgressError::BadLikert);
        }
        match phase {
            SurveyPhase::Pre => self.surveys.pre = Some(answers),
            SurveyPhase::Post => self.surveys.post = Some(answers),
        }
        Ok(())
    }

    /// Completed stages form a prefix of the fixed order.
    pub fn is_prefix(&self) -> bool {
        let n = self.completed_stages.len();
        Stage::ORDER[..n].iter().all(|s| self.completed_stages.contains(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fresh() -> LessonProgress {
        LessonProgress::new("s1", ModuleId::Hashing)
    }

    #[test]
    fn first_stage() {
        let mut p = fresh();
        p.advance(Stage::Experience).unwrap();
        assert_eq!(p.completed_stages, BTreeSet::from([Stage::Experience]));
    }

    #[test]
    fn quiz_first_is_rejected() {
        let mut p = fresh();
        assert_eq!(
            p.advance(Stage::Quiz),
            Err(ProgressError::OutOfOrderStage {
                attempted: Stage::Quiz,
                pending: Stage::Experience
            })
        );
        assert!(p.completed_stages.is_empty());
    }

    #[test]
    fn full_walk() {
        let mut p = fresh();
        for s in Stage::ORDER {
            p.advance(s).unwrap();
        }
        assert_eq!(p.completed_stages.len(), 5);
        assert_eq!(p.pending(), None);
        p.advance(Stage::Reflection).unwrap();
        assert_eq!(p.completed_stages.len(), 5);
    }

    #[test]
    fn likert_bounds() {
        let mut p = fresh();
        p.record_survey(SurveyPhase::Pre, vec![1, 5, 3]).unwrap();
        assert_eq!(p.record_survey(SurveyPhase::Post, vec![0]), Err(ProgressError::BadLikert));
        assert_eq!(p.record_survey(SurveyPhase::Post, vec![6]), Err(ProgressError::BadLikert));
        assert_eq!(p.surveys.post, None);
    }

    proptest! {
        #[test]
        fn random_streams_stay_prefixes(stream in proptest::collection::vec(0usize..5, 0..30)) {
            let mut p = fresh();
            for i in stream {
                let before = p.completed_stages.clone();
                if p.advance(Stage::ORDER[i]).is_err() {
                    prop_assert_eq!(&before, &p.completed_stages);
                }
                prop_assert!(p.is_prefix());
            }
        }
    }
}
