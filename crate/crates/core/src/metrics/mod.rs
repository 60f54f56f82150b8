//! Statistics for comparing ratings: scale transforms, median aggregation,
//! rank correlation between raters, expert-minus-tool deviations,
//! multiclass classification scores, and box-plot summaries.

mod classification;
mod descriptive;
mod rank;
mod scale;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classification::{classification_metrics, ClassMetrics, ClassificationMetrics, CLASSES};
pub use descriptive::{box_stats, BoxStats};
pub use rank::{kendall_tau_b, spearman_rho, CorrelationMethod, RankCorrelation};
pub use scale::{median_aggregate, to_interval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("unknown agreement label '{0}'")]
    UnknownLabel(String),
    #[error("rating {value} at position {position} is outside 1..4")]
    OutOfRange { position: usize, value: f64 },
    #[error("{values} values but {keys} subject keys")]
    KeyCount { values: usize, keys: usize },
    #[error("cannot pair ratings: {0}")]
    Pairing(String),
    #[error("at least two paired ratings are needed, got {0}")]
    InsufficientLength(usize),
    #[error("rating {value} at position {position} is not a whole class label")]
    NonInteger { position: usize, value: f64 },
}

/// Identifies what a single rating is about.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubjectKey {
    pub story_id: String,
    pub criterion_id: String,
    /// `None` once statement ratings are aggregated per criterion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statement: Option<usize>,
}

impl SubjectKey {
    pub fn new(story_id: &str, criterion_id: &str, statement: Option<usize>) -> Self {
        SubjectKey {
            story_id: story_id.to_owned(),
            criterion_id: criterion_id.to_owned(),
            statement,
        }
    }
}

impl fmt::Display for SubjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.story_id, self.criterion_id)?;
        if let Some(s) = self.statement {
            write!(f, "/{s}")?;
        }
        Ok(())
    }
}

/// Ratings on the 1..4 interval scale with a parallel list of subjects.
/// Values may be half-integers after median aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingVector {
    values: Vec<f64>,
    subject_keys: Arc<[SubjectKey]>,
}

impl RatingVector {
    /// Vectors built from one shared key list pair without comparing keys.
    pub fn new(
        values: Vec<f64>,
        subject_keys: impl Into<Arc<[SubjectKey]>>,
    ) -> Result<Self, MetricsError> {
        let subject_keys = subject_keys.into();
        if values.len() != subject_keys.len() {
            return Err(MetricsError::KeyCount {
                values: values.len(),
                keys: subject_keys.len(),
            });
        }
        for (position, &value) in values.iter().enumerate() {
            if !(1.0..=4.0).contains(&value) {
                return Err(MetricsError::OutOfRange { position, value });
            }
        }
        Ok(RatingVector {
            values,
            subject_keys,
        })
    }

    /// Ratings keyed by position only, for ad-hoc comparisons.
    pub fn from_values(values: &[f64]) -> Result<Self, MetricsError> {
        let keys: Vec<SubjectKey> = (0..values.len())
            .map(|i| SubjectKey::new("", "", Some(i)))
            .collect();
        Self::new(values.to_vec(), keys)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn subject_keys(&self) -> &[SubjectKey] {
        &self.subject_keys
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_paired(x: &RatingVector, y: &RatingVector) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::Pairing(format!(
            "length mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if Arc::ptr_eq(&x.subject_keys, &y.subject_keys) {
        return Ok(());
    }
    if let Some((a, b)) = x
        .subject_keys
        .iter()
        .zip(y.subject_keys.iter())
        .find(|(a, b)| a != b)
    {
        return Err(MetricsError::Pairing(format!(
            "subject {a} paired with {b}"
        )));
    }
    Ok(())
}

/// Expert minus tool, element by element. Negative values mean the tool
/// rated the story higher than the expert.
pub fn deviation_series(
    expert: &RatingVector,
    tool: &RatingVector,
) -> Result<Vec<f64>, MetricsError> {
    check_paired(expert, tool)?;
    Ok(expert
        .values
        .iter()
        .zip(&tool.values)
        .map(|(e, t)| e - t)
        .collect())
}
