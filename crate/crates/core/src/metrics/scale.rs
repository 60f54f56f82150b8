use crate::quality_model::AgreementLevel;

use super::MetricsError;

/// Maps an agreement label onto the 1..4 interval scale.
pub fn to_interval(label: &str) -> Result<u8, MetricsError> {
    AgreementLevel::from_label(label.trim())
        .map(AgreementLevel::value)
        .ok_or_else(|| MetricsError::UnknownLabel(label.to_owned()))
}

/// Median; the mean of the two middle values for even counts.
pub fn median_aggregate(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(median_of_sorted(&sorted))
}

pub(super) fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_map_to_interval_scale() {
        assert_eq!(to_interval("Strongly disagree").unwrap(), 1);
        assert_eq!(to_interval("Disagree").unwrap(), 2);
        assert_eq!(to_interval("Agree").unwrap(), 3);
        assert_eq!(to_interval("Strongly agree").unwrap(), 4);
    }

    #[test]
    fn no_neutral_point() {
        assert_eq!(
            to_interval("Neutral"),
            Err(MetricsError::UnknownLabel("Neutral".into()))
        );
        assert!(to_interval("").is_err());
        assert!(to_interval("strongly agree").is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median_aggregate(&[3.0, 3.0, 4.0]).unwrap(), 3.0);
        assert_eq!(median_aggregate(&[2.0, 3.0, 3.0, 4.0]).unwrap(), 3.0);
        assert_eq!(median_aggregate(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(median_aggregate(&[4.0, 1.0, 3.0]).unwrap(), 3.0);
        assert_eq!(median_aggregate(&[]), Err(MetricsError::Empty));
    }
}
