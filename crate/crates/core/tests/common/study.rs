//! A small synthetic study: two experts of one company label five stories
//! on every INVEST and RTI statement, rate the feedback, answer the
//! acceptance questionnaire, and the stub backend assesses each story.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use deepquali_core::engine::{assess_story, AssessOptions, ExecutionParams, StubBackend};
use deepquali_core::harness::{
    acceptance_summary, expert_agreement_table, feedback_table, tool_vs_expert_report,
    AcceptanceItems, AcceptanceRecord, Construct, ExpertProfile, FeedbackCriterion, FeedbackRecord,
    FeedbackTarget, Granularity, LabelRecord, ModelSet, StudyDir, StudyRecord, ALL_COLUMN,
};
use deepquali_core::metrics::{kendall_tau_b, spearman_rho, RatingVector};
use deepquali_core::story::load_corpus;

use super::{box_oracle, close_opt, fixture, median_oracle, rho_oracle, tau_oracle};

pub const EXPERTS: [&str; 2] = ["E1", "E2"];

pub struct Synthetic {
    pub dir: TempDir,
    pub study: StudyDir,
    pub labels: Vec<LabelRecord>,
    pub feedback: Vec<FeedbackRecord>,
    pub acceptance: Vec<AcceptanceRecord>,
}

/// Builds the study in a fresh directory. Equal seeds give equal studies.
pub async fn build(seed: u64) -> Synthetic {
    let dir = tempfile::tempdir().unwrap();
    let mut study = StudyDir::open_writer(dir.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models = ModelSet::default();

    let stories = load_corpus(&fixture("stories")).unwrap();
    for s in &stories {
        study.add_story_version(s, false).unwrap();
    }
    for e in EXPERTS {
        study.put_expert(ExpertProfile::new(e, "C1")).unwrap();
    }

    let mut labels = Vec::new();
    for s in &stories {
        for criterion in models.invest.criteria.iter().chain(&models.rti.criteria) {
            for statement_index in 0..criterion.label_rows() {
                let first: u8 = rng.random_range(1..=4);
                // The second expert mostly agrees, within one step.
                let second = (i16::from(first) + rng.random_range(-1..=1)).clamp(1, 4) as u8;
                for (expert, rating) in EXPERTS.iter().zip([first, second]) {
                    labels.push(LabelRecord {
                        expert_id: (*expert).into(),
                        story_id: s.id.clone(),
                        criterion_id: criterion.id.clone(),
                        statement_index,
                        rating,
                    });
                }
            }
        }
    }

    let mut feedback = Vec::new();
    for s in &stories {
        for expert in EXPERTS {
            for target in [
                FeedbackTarget::Invest,
                FeedbackTarget::Rti,
                FeedbackTarget::Problems,
            ] {
                for criterion in FeedbackCriterion::ALL {
                    feedback.push(FeedbackRecord {
                        expert_id: expert.into(),
                        story_id: s.id.clone(),
                        target,
                        criterion,
                        rating: rng.random_range(1..=4),
                    });
                }
            }
        }
    }

    let items = AcceptanceItems::default();
    let mut acceptance = Vec::new();
    for expert in EXPERTS {
        for construct in Construct::ALL {
            for item_index in 0..items.items(construct).len() {
                acceptance.push(AcceptanceRecord {
                    expert_id: expert.into(),
                    construct,
                    item_index,
                    rating: rng.random_range(1..=4),
                });
            }
        }
    }

    let records = labels
        .iter()
        .cloned()
        .map(StudyRecord::Label)
        .chain(feedback.iter().cloned().map(StudyRecord::Feedback))
        .chain(acceptance.iter().cloned().map(StudyRecord::Acceptance))
        .collect();
    study.record_all(records).unwrap();

    let backend = StubBackend::new(seed);
    for s in &stories {
        let report = assess_story(
            s,
            &models.invest,
            None,
            &ExecutionParams::default(),
            &backend,
            &AssessOptions::default(),
        )
        .await
        .unwrap();
        study.save_report(&report).unwrap();
    }

    Synthetic {
        dir,
        study,
        labels,
        feedback,
        acceptance,
    }
}

type Key = (String, String, Option<usize>);

fn observations(labels: &[LabelRecord], expert: &str, medians: bool) -> BTreeMap<Key, f64> {
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for l in labels.iter().filter(|l| l.expert_id == expert) {
        let statement = (!medians).then_some(l.statement_index);
        groups
            .entry((l.story_id.clone(), l.criterion_id.clone(), statement))
            .or_default()
            .push(f64::from(l.rating));
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, median_oracle(&v)))
        .collect()
}

fn exact_ratio(q: Ratio<i128>) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// Recomputes every synthesis table from the raw records and compares it
/// with the library's table. Returns the first difference found.
pub fn check_composition(s: &Synthetic) -> Result<(), String> {
    let models = ModelSet::default();
    let order = models.criteria_order();
    let labels = s.study.labels().map_err(|e| e.to_string())?;
    if labels.len() != s.labels.len() {
        return Err(format!(
            "{} labels stored, {} recorded",
            labels.len(),
            s.labels.len()
        ));
    }

    // Agreement at both granularities.
    for (granularity, medians) in [
        (Granularity::Statements, false),
        (Granularity::CriterionMedians, true),
    ] {
        let table =
            expert_agreement_table(&labels, &order, granularity).map_err(|e| e.to_string())?;
        let a = observations(&s.labels, EXPERTS[0], medians);
        let b = observations(&s.labels, EXPERTS[1], medians);
        let present: BTreeSet<&str> = s.labels.iter().map(|l| l.criterion_id.as_str()).collect();
        let mut columns: Vec<String> = order
            .iter()
            .filter(|c| present.contains(c.as_str()))
            .cloned()
            .collect();
        columns.push(ALL_COLUMN.into());
        if table.columns != columns || table.experts != EXPERTS.map(String::from) {
            return Err(format!(
                "agreement columns {:?} / experts {:?}",
                table.columns, table.experts
            ));
        }
        for (j, column) in columns.iter().enumerate() {
            let keys: Vec<&Key> = a
                .keys()
                .filter(|k| b.contains_key(*k))
                .filter(|k| column == ALL_COLUMN || k.1 == *column)
                .collect();
            let x: Vec<f64> = keys.iter().map(|k| a[*k]).collect();
            let y: Vec<f64> = keys.iter().map(|k| b[*k]).collect();
            let (xv, yv) = (
                RatingVector::from_values(&x).unwrap(),
                RatingVector::from_values(&y).unwrap(),
            );
            let tau = kendall_tau_b(&xv, &yv).unwrap().coefficient;
            let rho = spearman_rho(&xv, &yv).unwrap().coefficient;
            let got = (table.n[j], table.rows[0].cells[j], table.rows[1].cells[j]);
            if got != (keys.len(), tau, rho) {
                return Err(format!(
                    "{granularity:?} {column}: table {got:?}, recomputed {:?}",
                    (keys.len(), tau, rho)
                ));
            }
            if !close_opt(tau, tau_oracle(&x, &y), 1e-9)
                || !close_opt(rho, rho_oracle(&x, &y), 1e-9)
            {
                return Err(format!(
                    "{granularity:?} {column}: differs from brute force"
                ));
            }
        }
    }

    // Tool versus expert.
    let reports = s.study.latest_reports().map_err(|e| e.to_string())?;
    let tve = tool_vs_expert_report(&labels, &reports, &order).map_err(|e| e.to_string())?;
    let mut row = 0;
    for expert in EXPERTS {
        let medians = observations(&s.labels, expert, true);
        for criterion in &order {
            let stories: Vec<&String> = medians
                .keys()
                .filter(|k| k.1 == *criterion)
                .map(|k| &k.0)
                .collect();
            if stories.is_empty() {
                continue;
            }
            let expert_scores: Vec<f64> = stories
                .iter()
                .map(|st| medians[&((*st).clone(), criterion.clone(), None)])
                .collect();
            let tool_scores: Vec<f64> = stories
                .iter()
                .map(|st| f64::from(reports[*st].score_for(criterion).unwrap()))
                .collect();
            let deviations: Vec<f64> = expert_scores
                .iter()
                .zip(&tool_scores)
                .map(|(e, t)| e - t)
                .collect();

            let d = tve.deviations.get(row).ok_or("missing deviation row")?;
            let b = d.box_stats;
            let same = d.expert_id == expert
                && d.criterion_id == *criterion
                && d.story_ids.iter().collect::<Vec<_>>() == stories
                && d.expert_scores == expert_scores
                && d.tool_scores == tool_scores
                && d.deviations == deviations
                && [b.min, b.q1, b.median, b.q3, b.max] == box_oracle(&deviations);
            if !same {
                return Err(format!("deviation row {expert}/{criterion} differs: {d:?}"));
            }

            let whole: Vec<usize> = (0..stories.len())
                .filter(|&i| expert_scores[i].fract() == 0.0)
                .collect();
            let c = &tve.classification[row];
            if (c.classified, c.excluded_half_integer) != (whole.len(), stories.len() - whole.len())
            {
                return Err(format!("classification counts {expert}/{criterion}: {c:?}"));
            }
            match (&c.metrics, whole.is_empty()) {
                (None, true) => {}
                (Some(m), false) => {
                    let mut confusion = [[0u64; 4]; 4];
                    for &i in &whole {
                        confusion[expert_scores[i] as usize - 1][tool_scores[i] as usize - 1] += 1;
                    }
                    let n = whole.len() as i128;
                    let zero = Ratio::from_integer(0);
                    let (mut p, mut r, mut hits) = (zero, zero, 0i128);
                    for k in 0..4 {
                        let support: i128 = confusion[k].iter().map(|&v| v as i128).sum();
                        let predicted: i128 = confusion.iter().map(|row| row[k] as i128).sum();
                        let tp = confusion[k][k] as i128;
                        hits += tp;
                        if support == 0 {
                            continue;
                        }
                        if predicted > 0 {
                            p += Ratio::new(support, n) * Ratio::new(tp, predicted);
                        }
                        r += Ratio::new(tp, n);
                    }
                    let f1 = if p + r == zero {
                        zero
                    } else {
                        Ratio::from_integer(2) * p * r / (p + r)
                    };
                    let expected = (
                        confusion,
                        exact_ratio(Ratio::new(hits, n)),
                        exact_ratio(p),
                        exact_ratio(r),
                        exact_ratio(f1),
                    );
                    let got = (m.confusion, m.accuracy, m.precision, m.recall, m.f1);
                    if got != expected {
                        return Err(format!(
                            "classification {expert}/{criterion}: {got:?} vs {expected:?}"
                        ));
                    }
                }
                _ => {
                    return Err(format!(
                        "classification metrics presence {expert}/{criterion}"
                    ))
                }
            }
            row += 1;
        }
    }
    if row != tve.deviations.len() || row != tve.classification.len() {
        return Err(format!(
            "{} rows expected, got {}",
            row,
            tve.deviations.len()
        ));
    }

    // Feedback medians.
    let table = feedback_table(&s.study.feedback().map_err(|e| e.to_string())?);
    let mut cells: BTreeMap<(FeedbackTarget, String, FeedbackCriterion), Vec<f64>> =
        BTreeMap::new();
    for f in &s.feedback {
        cells
            .entry((f.target, f.expert_id.clone(), f.criterion))
            .or_default()
            .push(f64::from(f.rating));
    }
    let columns: BTreeSet<(FeedbackTarget, String)> =
        cells.keys().map(|(t, e, _)| (*t, e.clone())).collect();
    let got_columns: Vec<(FeedbackTarget, String)> = table
        .columns
        .iter()
        .map(|c| (c.target, c.expert_id.clone()))
        .collect();
    if got_columns != columns.iter().cloned().collect::<Vec<_>>() {
        return Err(format!("feedback columns {got_columns:?}"));
    }
    if table.rows.iter().map(|r| r.criterion).collect::<Vec<_>>() != FeedbackCriterion::ALL {
        return Err("feedback rows".into());
    }
    for (j, (target, expert)) in columns.iter().enumerate() {
        let col: Vec<Option<f64>> = FeedbackCriterion::ALL
            .iter()
            .map(|c| {
                cells
                    .get(&(*target, expert.clone(), *c))
                    .map(|v| median_oracle(v))
            })
            .collect();
        let min = col.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
        for (i, r) in table.rows.iter().enumerate() {
            if r.cells[j] != col[i] || r.lowest[j] != (col[i] == Some(min)) {
                return Err(format!(
                    "feedback cell {:?}/{target:?}/{expert}",
                    r.criterion
                ));
            }
        }
    }

    // Acceptance box plots.
    let summary = acceptance_summary(&s.study.acceptance().map_err(|e| e.to_string())?);
    let expected: Vec<(Construct, usize, [f64; 5])> = Construct::ALL
        .iter()
        .filter_map(|c| {
            let v: Vec<f64> = s
                .acceptance
                .iter()
                .filter(|a| a.construct == *c)
                .map(|a| f64::from(a.rating))
                .collect();
            (!v.is_empty()).then(|| (*c, v.len(), box_oracle(&v)))
        })
        .collect();
    let got: Vec<(Construct, usize, [f64; 5])> = summary
        .iter()
        .map(|s| {
            let b = s.box_stats;
            (s.construct, s.n, [b.min, b.q1, b.median, b.q3, b.max])
        })
        .collect();
    if got != expected {
        return Err(format!("acceptance summary {got:?} vs {expected:?}"));
    }
    Ok(())
}
