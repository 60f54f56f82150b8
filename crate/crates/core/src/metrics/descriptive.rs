use serde::{Deserialize, Serialize};

use super::scale::median_of_sorted;
use super::MetricsError;

/// Five-number summary for a box plot. Quartiles are Tukey hinges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Tukey hinges: the hinges are the medians of the lower and upper halves,
/// each half including the median itself when the count is odd.
pub fn box_stats(values: &[f64]) -> Result<BoxStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let half = n.div_ceil(2);
    Ok(BoxStats {
        min: sorted[0],
        q1: median_of_sorted(&sorted[..half]),
        median: median_of_sorted(&sorted),
        q3: median_of_sorted(&sorted[n - half..]),
        max: sorted[n - 1],
    })
}
