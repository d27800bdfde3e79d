//! Rubric modelling: category caps, scale expansion, and score
//! normalization between scales.
//!
//! The stock rubric grades four categories (Syntax, Logic, Output
//! Correctness, Style) on a 10-point total. [`Rubric::expand_scale`]
//! produces the finer-grained variant (for example the 100-point form),
//! and [`normalize_score`] maps totals back onto the 10-point range for
//! comparison. Scores keep full floating-point precision; rounding to two
//! decimals happens only when reports are rendered.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Tolerance for the "category caps sum to the scale total" invariant.
pub const SCALE_SUM_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RubricError {
    #[error("score {score} out of range [0, {scale}]")]
    ScoreOutOfRange { score: f64, scale: f64 },
    #[error("invalid scale {0}; scales must be positive and finite")]
    InvalidScale(f64),
    #[error("invalid rubric: {0}")]
    InvalidRubric(String),
    #[error("failed to read rubric file {path}: {detail}")]
    Io { path: String, detail: String },
}

/// One named grading category with a point cap and grader guidance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricCategory {
    pub name: String,
    pub max_points: f64,
    pub descriptor: String,
}

/// An ordered set of categories whose caps sum to `scale_total`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rubric {
    scale_total: f64,
    categories: Vec<RubricCategory>,
}

/// On-disk shape: `{scale_total, categories: [{name, max_points, descriptor}]}`.
#[derive(Serialize, Deserialize)]
struct RubricDoc {
    scale_total: f64,
    categories: Vec<RubricCategory>,
}

impl Rubric {
    pub fn new(scale_total: f64, categories: Vec<RubricCategory>) -> Result<Self, RubricError> {
        if !(scale_total.is_finite() && scale_total > 0.0) {
            return Err(RubricError::InvalidScale(scale_total));
        }
        if categories.is_empty() {
            return Err(RubricError::InvalidRubric(
                "rubric needs at least one category".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for cat in &categories {
            if cat.name.trim().is_empty() {
                return Err(RubricError::InvalidRubric("empty category name".into()));
            }
            if !(cat.max_points.is_finite() && cat.max_points > 0.0) {
                return Err(RubricError::InvalidRubric(format!(
                    "category `{}` has non-positive cap {}",
                    cat.name, cat.max_points
                )));
            }
            if !seen.insert(cat.name.to_lowercase()) {
                return Err(RubricError::InvalidRubric(format!(
                    "duplicate category name `{}`",
                    cat.name
                )));
            }
        }
        let sum: f64 = categories.iter().map(|c| c.max_points).sum();
        if (sum - scale_total).abs() > SCALE_SUM_EPSILON {
            return Err(RubricError::InvalidRubric(format!(
                "category caps sum to {sum} but scale total is {scale_total}"
            )));
        }
        Ok(Rubric {
            scale_total,
            categories,
        })
    }

    pub fn scale_total(&self) -> f64 {
        self.scale_total
    }

    pub fn categories(&self) -> &[RubricCategory] {
        &self.categories
    }

    /// Sum of the category caps; equals the scale total by construction.
    pub fn total_max(&self) -> f64 {
        self.categories.iter().map(|c| c.max_points).sum()
    }

    /// Case-insensitive category lookup; models are sloppy with casing.
    pub fn category(&self, name: &str) -> Option<&RubricCategory> {
        let needle = name.trim().to_lowercase();
        self.categories
            .iter()
            .find(|c| c.name.to_lowercase() == needle)
    }

    /// Multiply every cap and the scale total by `factor`, keeping names
    /// and proportions. Descriptors gain a note about the finer point
    /// steps available on the expanded scale; `factor == 1` returns the
    /// rubric unchanged.
    ///
    /// # Panics
    /// Panics if `factor` is zero.
    pub fn expand_scale(&self, factor: u32) -> Rubric {
        assert!(factor >= 1, "expand factor must be >= 1");
        if factor == 1 {
            return self.clone();
        }
        let f = f64::from(factor);
        let categories = self
            .categories
            .iter()
            .map(|c| RubricCategory {
                name: c.name.clone(),
                max_points: c.max_points * f,
                descriptor: format!(
                    "{} Award points in integer steps up to {} on this expanded scale.",
                    c.descriptor,
                    c.max_points * f
                ),
            })
            .collect();
        Rubric {
            scale_total: self.scale_total * f,
            categories,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, RubricError> {
        let text = std::fs::read_to_string(path).map_err(|e| RubricError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let doc: RubricDoc =
            serde_json::from_str(&text).map_err(|e| RubricError::InvalidRubric(e.to_string()))?;
        Rubric::new(doc.scale_total, doc.categories)
    }

    pub fn to_json(&self) -> String {
        let doc = RubricDoc {
            scale_total: self.scale_total,
            categories: self.categories.clone(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("rubric serializes");
        out.push('\n');
        out
    }
}

/// The stock 10-point rubric: four categories with an equal 2.5-point split.
pub fn default_rubric() -> Rubric {
    let cap = 2.5;
    Rubric::new(
        10.0,
        vec![
            RubricCategory {
                name: "Syntax".into(),
                max_points: cap,
                descriptor: "Code follows the language's grammar and would compile; \
                             penalize missing semicolons, unbalanced braces, and \
                             declaration mistakes."
                    .into(),
            },
            RubricCategory {
                name: "Logic".into(),
                max_points: cap,
                descriptor: "Control flow and algorithm produce the intended behavior; \
                             penalize wrong conditions, off-by-one bounds, and missing \
                             cases."
                    .into(),
            },
            RubricCategory {
                name: "Output Correctness".into(),
                max_points: cap,
                descriptor: "Program output matches the expected results for the task, \
                             including formatting and edge cases."
                    .into(),
            },
            RubricCategory {
                name: "Style".into(),
                max_points: cap,
                descriptor: "Readable naming, consistent indentation, and sensible \
                             structure for an introductory course."
                    .into(),
            },
        ],
    )
    .expect("default rubric is valid")
}

/// Rescale `score` from `from_scale` onto `to_scale` at full precision.
pub fn normalize_score(score: f64, from_scale: f64, to_scale: f64) -> Result<f64, RubricError> {
    if !(from_scale.is_finite() && from_scale > 0.0) {
        return Err(RubricError::InvalidScale(from_scale));
    }
    if !(to_scale.is_finite() && to_scale > 0.0) {
        return Err(RubricError::InvalidScale(to_scale));
    }
    if !score.is_finite() || score < 0.0 || score > from_scale {
        return Err(RubricError::ScoreOutOfRange {
            score,
            scale: from_scale,
        });
    }
    Ok(score * to_scale / from_scale)
}
