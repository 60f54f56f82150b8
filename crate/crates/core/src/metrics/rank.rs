use serde::{Deserialize, Serialize};

use super::{check_paired, MetricsError, RatingVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    SpearmanRho,
    KendallTauB,
}

/// A rank correlation coefficient. `coefficient` is `None` when either
/// rater gave the same rating to every subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub coefficient: Option<f64>,
    pub n: usize,
    pub method: CorrelationMethod,
}

impl RankCorrelation {
    pub fn is_defined(&self) -> bool {
        self.coefficient.is_some()
    }
}

fn paired_len(x: &RatingVector, y: &RatingVector) -> Result<usize, MetricsError> {
    check_paired(x, y)?;
    if x.len() < 2 {
        return Err(MetricsError::InsufficientLength(x.len()));
    }
    Ok(x.len())
}

/// 1-based ranks with ties sharing the average of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman_rho(x: &RatingVector, y: &RatingVector) -> Result<RankCorrelation, MetricsError> {
    let n = paired_len(x, y)?;
    let rx = average_ranks(x.values());
    let ry = average_ranks(y.values());
    // Mean rank is (n+1)/2 regardless of ties.
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let coefficient = if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    };
    Ok(RankCorrelation {
        coefficient,
        n,
        method: CorrelationMethod::SpearmanRho,
    })
}

/// Number of pairs within runs of equal values in an already sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` in place and returns the number of inversions (strictly
/// decreasing pairs).
fn merge_sort_inversions(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_sort_inversions(&mut v[..mid]) + merge_sort_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            merged.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..]);
    v.copy_from_slice(&merged);
    swaps
}

/// Kendall's tau-b, computed in O(n log n) with Knight's algorithm:
/// sort by (x, y), count ties, then count discordant pairs as inversions
/// of the y sequence.
pub fn kendall_tau_b(x: &RatingVector, y: &RatingVector) -> Result<RankCorrelation, MetricsError> {
    let n = paired_len(x, y)?;
    let mut pairs: Vec<(f64, f64)> = x
        .values()
        .iter()
        .copied()
        .zip(y.values().iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ties_x = tied_pairs(&xs);
    let ties_xy = tied_pairs(&pairs);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let discordant = merge_sort_inversions(&mut ys);
    let ties_y = tied_pairs(&ys);

    let coefficient = if n0 == ties_x || n0 == ties_y {
        None
    } else {
        // concordant - discordant = n0 - tx - ty + txy - 2 * discordant
        let numerator =
            n0 as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * discordant as f64;
        let denominator = (((n0 - ties_x) as f64) * ((n0 - ties_y) as f64)).sqrt();
        Some((numerator / denominator).clamp(-1.0, 1.0))
    };
    Ok(RankCorrelation {
        coefficient,
        n,
        method: CorrelationMethod::KendallTauB,
    })
}
