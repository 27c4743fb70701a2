//! Procedural scenes, questions with executable programs, and datasets.

pub mod dataset;
pub mod program;
pub mod scene;
pub mod vocab;

pub use dataset::{answer_report, build_dataset, AnswerReport, Dataset, DatasetMeta, Split, SplitSizes};
pub use program::{generate_question, Category, Execution, Program, QaInstance, QuestionFamily, Step};
pub use scene::{generate_scene, relation_delta, Scene, SceneObject, WorldConfig};
pub use vocab::{Relation, Vocab};
