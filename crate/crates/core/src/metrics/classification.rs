use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{check_paired, MetricsError, RatingVector};

/// Rating classes, in confusion-matrix order.
pub const CLASSES: [u8; 4] = [1, 2, 3, 4];

type Q = Ratio<i128>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
}

/// Ratings treated as nominal classes, expert ratings as ground truth.
///
/// Precision and recall are support-weighted over the classes that occur
/// in the ground truth; a zero denominator contributes 0. `f1` is the
/// harmonic mean of those two aggregates. All arithmetic is exact and only
/// converted to floating point at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[truth - 1][prediction - 1]`.
    pub confusion: [[u64; 4]; 4],
}

fn to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

fn class_index(position: usize, value: f64) -> Result<usize, MetricsError> {
    if value.fract() != 0.0 {
        return Err(MetricsError::NonInteger { position, value });
    }
    // RatingVector guarantees 1..=4.
    Ok(value as usize - 1)
}

impl ClassificationMetrics {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..4).map(|i| self.confusion[i][i]).sum()
    }

    pub fn support(&self, class_idx: usize) -> u64 {
        self.confusion[class_idx].iter().sum()
    }

    pub fn predicted(&self, class_idx: usize) -> u64 {
        self.confusion.iter().map(|row| row[class_idx]).sum()
    }

    /// Per-class scores for the classes present in the ground truth.
    pub fn per_class(&self) -> Vec<ClassMetrics> {
        (0..4)
            .filter(|&c| self.support(c) > 0)
            .map(|c| {
                let tp = self.confusion[c][c];
                let predicted = self.predicted(c);
                ClassMetrics {
                    class: CLASSES[c],
                    support: self.support(c),
                    precision: if predicted == 0 {
                        0.0
                    } else {
                        tp as f64 / predicted as f64
                    },
                    recall: tp as f64 / self.support(c) as f64,
                }
            })
            .collect()
    }

    fn from_confusion(confusion: [[u64; 4]; 4]) -> Self {
        let mut m = ClassificationMetrics {
            accuracy: 0.0,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            confusion,
        };
        let total = m.total() as i128;
        if total == 0 {
            return m;
        }
        let zero = Q::from_integer(0);
        let (mut precision, mut recall) = (zero, zero);
        for (c, row) in confusion.iter().enumerate() {
            let support = m.support(c) as i128;
            if support == 0 {
                continue;
            }
            let weight = Q::new(support, total);
            let tp = row[c] as i128;
            let predicted = m.predicted(c) as i128;
            if predicted > 0 {
                precision += weight * Q::new(tp, predicted);
            }
            recall += weight * Q::new(tp, support);
        }
        let f1 = if precision + recall == zero {
            zero
        } else {
            Q::from_integer(2) * precision * recall / (precision + recall)
        };
        m.accuracy = to_f64(Q::new(m.trace() as i128, total));
        m.precision = to_f64(precision);
        m.recall = to_f64(recall);
        m.f1 = to_f64(f1);
        m
    }
}

pub fn classification_metrics(
    truth: &RatingVector,
    pred: &RatingVector,
) -> Result<ClassificationMetrics, MetricsError> {
    check_paired(truth, pred)?;
    let mut confusion = [[0u64; 4]; 4];
    for (i, (&t, &p)) in truth.values().iter().zip(pred.values()).enumerate() {
        let t = class_index(i, t)?;
        let p = class_index(i, p)?;
        confusion[t][p] += 1;
    }
    Ok(ClassificationMetrics::from_confusion(confusion))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> RatingVector {
        RatingVector::from_values(values).unwrap()
    }

    #[test]
    fn perfect_agreement() {
        let x = v(&[1.0, 2.0, 3.0, 4.0, 3.0]);
        let m = classification_metrics(&x, &x).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn precision_one_recall_sixty_gives_f1_075() {
        let m = classification_metrics(
            &v(&[3.0, 3.0, 3.0, 3.0, 3.0]),
            &v(&[3.0, 3.0, 3.0, 4.0, 4.0]),
        )
        .unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.6);
        assert_eq!(m.f1, 0.75);
        assert_eq!(m.accuracy, 0.6);
    }

    #[test]
    fn no_matches_is_all_zero() {
        let m = classification_metrics(&v(&[1.0, 2.0]), &v(&[2.0, 1.0])).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn rejects_medians() {
        assert_eq!(
            classification_metrics(&v(&[2.5, 3.0]), &v(&[2.0, 3.0])),
            Err(MetricsError::NonInteger {
                position: 0,
                value: 2.5
            })
        );
    }

    #[test]
    fn per_class_lists_truth_classes() {
        let m = classification_metrics(
            &v(&[3.0, 3.0, 4.0, 2.0, 3.0]),
            &v(&[3.0, 4.0, 4.0, 3.0, 3.0]),
        )
        .unwrap();
        let classes: Vec<u8> = m.per_class().iter().map(|c| c.class).collect();
        assert_eq!(classes, [2, 3, 4]);
        assert_eq!(m.confusion[2], [0, 0, 2, 1]);
    }
}
