//! Lesson structure and analytics: stage order, content packs, quizzes,
//! readability and paired t-tests.

pub mod pack;
pub mod progress;
pub mod quiz;
pub mod readability;
pub mod stats;

pub use pack::{validate_content_pack, ContentPack, ModulePack, Violation, ViolationKind};
pub use progress::{LessonProgress, ProgressError, Stage, SurveyPhase};
pub use quiz::{score_quiz, Category, PublicQuestion, QuizError, QuizQuestion, QuizResult};
pub use readability::{readability_grade, ReadabilityError};
pub use stats::{paired_t_test, PairedSample, StatsError, TTest};
