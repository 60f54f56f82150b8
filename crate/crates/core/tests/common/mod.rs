//! Brute-force reference implementations and fixture helpers shared by the
//! integration tests. Deliberately naive: clarity over speed.
#![allow(dead_code)]

pub mod study;

use std::path::PathBuf;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Rank of each value: 1 + number of smaller values + half the number of
/// other equal values.
pub fn count_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let less = values.iter().filter(|&&w| w < v).count() as f64;
            let equal = values.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

pub fn rho_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&count_ranks(x), &count_ranks(y))
}

/// Tau-b by counting every pair.
pub fn tau_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut concordant, mut discordant, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx * dy > 0.0 {
                concordant += 1;
            } else if dx * dy < 0.0 {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tx) * (n0 - ty)) as f64;
    if denom == 0.0 {
        None
    } else {
        Some((concordant - discordant) as f64 / denom.sqrt())
    }
}

pub fn median_oracle(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Tukey hinges: medians of the lower and upper halves, each half taking
/// the middle value when the count is odd.
pub fn box_oracle(values: &[f64]) -> [f64; 5] {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let half = n.div_ceil(2);
    [
        v[0],
        median_oracle(&v[..half]),
        median_oracle(&v),
        median_oracle(&v[n - half..]),
        v[n - 1],
    ]
}

/// Accuracy, support-weighted precision and recall, their harmonic mean,
/// and micro precision and recall, straight from the definitions.
pub struct ClassOracle {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
}

pub fn classification_oracle(truth: &[u8], pred: &[u8]) -> ClassOracle {
    let n = truth.len() as f64;
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64;
    let (mut wp, mut wr) = (0.0, 0.0);
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0.0, 0.0, 0.0);
    for class in 1..=4u8 {
        let tp = truth
            .iter()
            .zip(pred)
            .filter(|&(&t, &p)| t == class && p == class)
            .count() as f64;
        let fp = truth
            .iter()
            .zip(pred)
            .filter(|&(&t, &p)| t != class && p == class)
            .count() as f64;
        let fn_ = truth
            .iter()
            .zip(pred)
            .filter(|&(&t, &p)| t == class && p != class)
            .count() as f64;
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn_;
        let support = tp + fn_;
        if support == 0.0 {
            continue;
        }
        let weight = support / n;
        if tp + fp > 0.0 {
            wp += weight * tp / (tp + fp);
        }
        wr += weight * tp / support;
    }
    ClassOracle {
        accuracy: hits / n,
        weighted_precision: wp,
        weighted_recall: wr,
        f1: if wp + wr == 0.0 {
            0.0
        } else {
            2.0 * wp * wr / (wp + wr)
        },
        micro_precision: tp_sum / (tp_sum + fp_sum),
        micro_recall: tp_sum / (tp_sum + fn_sum),
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn close_opt(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b, tol),
        (None, None) => true,
        _ => false,
    }
}

/// Error class a mutated output must be rejected with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expected {
    Schema,
    Range,
    Invariant,
    /// Still a valid document, e.g. an RTI verdict with only one half.
    Accepted,
}

pub struct Mutation {
    pub name: String,
    pub doc: serde_json::Value,
    pub expected: Expected,
}

/// Every single-point mutation of `doc`: each object field dropped, each
/// array entry dropped, each score pushed out of range, each criterion id
/// replaced, and each explanation emptied.
pub fn mutations(doc: &serde_json::Value, rti: bool) -> Vec<Mutation> {
    use serde_json::Value;

    fn walk(doc: &Value, path: &mut Vec<PathStep>, out: &mut Vec<Vec<PathStep>>) {
        match doc {
            Value::Object(m) => {
                for (k, v) in m {
                    path.push(PathStep::Key(k.clone()));
                    out.push(path.clone());
                    walk(v, path, out);
                    path.pop();
                }
            }
            Value::Array(a) => {
                for (i, v) in a.iter().enumerate() {
                    path.push(PathStep::Index(i));
                    out.push(path.clone());
                    walk(v, path, out);
                    path.pop();
                }
            }
            _ => {}
        }
    }

    fn parent_mut<'a>(doc: &'a mut Value, path: &[PathStep]) -> &'a mut Value {
        path[..path.len() - 1]
            .iter()
            .fold(doc, |v, step| match step {
                PathStep::Key(k) => &mut v[k.as_str()],
                PathStep::Index(i) => &mut v[*i],
            })
    }

    let mut paths = Vec::new();
    walk(doc, &mut Vec::new(), &mut paths);
    let mut out = Vec::new();
    for path in paths {
        let label = path
            .iter()
            .map(PathStep::to_string)
            .collect::<Vec<_>>()
            .join("");
        let last = path.last().unwrap().clone();

        let mut dropped = doc.clone();
        let parent = parent_mut(&mut dropped, &path);
        let in_solutions =
            matches!(&path[..], [.., PathStep::Key(k), PathStep::Index(_)] if k == "solutions");
        match &last {
            PathStep::Key(k) => {
                parent.as_object_mut().unwrap().remove(k);
            }
            PathStep::Index(i) => {
                parent.as_array_mut().unwrap().remove(*i);
            }
        }
        let expected = match &last {
            PathStep::Key(k) if rti && path.len() == 1 && (k == "ready" || k == "score") => {
                Expected::Accepted
            }
            PathStep::Key(_) => Expected::Schema,
            // A criterion without its assessment.
            PathStep::Index(_) if path.len() == 2 => Expected::Schema,
            PathStep::Index(_) if in_solutions && doc_len(doc, &path) == 1 => Expected::Invariant,
            // Fewer problems or solutions still make a valid document.
            PathStep::Index(_) => Expected::Accepted,
        };
        out.push(Mutation {
            name: format!("drop {label}"),
            doc: dropped,
            expected,
        });

        let PathStep::Key(key) = &last else { continue };
        let replacements: Vec<(Value, Expected, &str)> = match key.as_str() {
            "score" => [0, 5, -1, 100]
                .into_iter()
                .map(|s| (Value::from(s), Expected::Range, "score"))
                .collect(),
            "criterion_id" => vec![(
                Value::from("no_such_criterion"),
                Expected::Schema,
                "criterion",
            )],
            "explanation" => vec![
                (Value::from(""), Expected::Invariant, "explanation"),
                (Value::from("   "), Expected::Invariant, "explanation"),
            ],
            _ => vec![],
        };
        for (value, expected, what) in replacements {
            let mut changed = doc.clone();
            parent_mut(&mut changed, &path)[key.as_str()] = value.clone();
            out.push(Mutation {
                name: format!("{what} {label} = {value}"),
                doc: changed,
                expected,
            });
        }
    }
    out
}

fn doc_len(doc: &serde_json::Value, path: &[PathStep]) -> usize {
    let parent = path[..path.len() - 1]
        .iter()
        .fold(doc, |v, step| match step {
            PathStep::Key(k) => &v[k.as_str()],
            PathStep::Index(i) => &v[*i],
        });
    parent.as_array().map_or(0, Vec::len)
}

#[derive(Debug, Clone)]
enum PathStep {
    Key(String),
    Index(usize),
}

impl std::fmt::Display for PathStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PathStep::Key(k) => write!(f, ".{k}"),
            PathStep::Index(i) => write!(f, "[{i}]"),
        }
    }
}
