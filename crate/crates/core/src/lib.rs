//! Batch grading pipeline for introductory programming submissions.
//!
//! Submissions are gated through unit tests first: passing code is graded
//! automatically at full marks, failing code is forwarded to an LLM for
//! partial credit under one or both grading strategies:
//!
//! * **Direct**: the model applies the rubric category by category and
//!   reports per-category scores.
//! * **Reverse**: the model first repairs the code, classifies each fix,
//!   and the final score is derived by deducting the fix costs from a
//!   perfect score.
//!
//! AI scores are then compared against human baselines (mean absolute
//! difference, per-band means, box-plot statistics, round-number
//! clustering) by the [`evaluation`] module.
//!
//! The [`gateway`] module makes every LLM-dependent path deterministic
//! under test via record/replay transcripts.

pub mod corpus;
pub mod evaluation;
pub mod exec;
pub mod gateway;
pub mod graders;
pub mod pipeline;
pub mod rubric;
pub mod synthgen;
pub mod testkit;

pub use corpus::{Corpus, Problem, Provenance, QualityBand, Submission};
pub use graders::{GradeResult, Strategy};
pub use pipeline::{PipelineResult, Route};
pub use rubric::Rubric;
