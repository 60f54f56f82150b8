use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::AssessmentReport;
use crate::metrics::{
    box_stats, classification_metrics, deviation_series, kendall_tau_b, median_aggregate,
    spearman_rho, BoxStats, ClassificationMetrics, CorrelationMethod, RatingVector, SubjectKey,
};

use super::records::{
    AcceptanceRecord, Construct, ExpertProfile, FeedbackCriterion, FeedbackRecord, FeedbackTarget,
    LabelRecord,
};
use super::HarnessError;

pub const ALL_COLUMN: &str = "All";

/// What a single paired observation is in the agreement table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Every statement rating is one observation.
    Statements,
    /// The median of a criterion's statement ratings per story is one
    /// observation.
    CriterionMedians,
}

impl Granularity {
    pub fn name(self) -> &'static str {
        match self {
            Granularity::Statements => "statements",
            Granularity::CriterionMedians => "criterion_medians",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub method: CorrelationMethod,
    /// `None` where a coefficient is undefined.
    pub cells: Vec<Option<f64>>,
}

/// Pairwise agreement between two experts, one column per criterion plus
/// an overall column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub company_id: Option<String>,
    pub granularity: Granularity,
    pub experts: [String; 2],
    pub columns: Vec<String>,
    /// Number of paired observations behind each column.
    pub n: Vec<usize>,
    pub rows: Vec<AgreementRow>,
}

/// Columns that appear in `labels`, in `criteria_order`; criteria missing
/// from the order follow alphabetically.
fn label_columns<'a>(
    criteria: impl Iterator<Item = &'a str>,
    criteria_order: &[String],
) -> Vec<String> {
    let present: BTreeSet<&str> = criteria.collect();
    let mut cols: Vec<String> = criteria_order
        .iter()
        .filter(|c| present.contains(c.as_str()))
        .cloned()
        .collect();
    for c in present {
        if !criteria_order.iter().any(|o| o == c) {
            cols.push(c.to_owned());
        }
    }
    cols
}

/// Per expert, the observations at the requested granularity.
fn observations(
    labels: &[LabelRecord],
    granularity: Granularity,
) -> BTreeMap<&str, BTreeMap<SubjectKey, f64>> {
    let mut by_statement: BTreeMap<&str, BTreeMap<SubjectKey, f64>> = BTreeMap::new();
    for l in labels {
        by_statement.entry(&l.expert_id).or_default().insert(
            SubjectKey::new(&l.story_id, &l.criterion_id, Some(l.statement_index)),
            f64::from(l.rating),
        );
    }
    match granularity {
        Granularity::Statements => by_statement,
        Granularity::CriterionMedians => by_statement
            .into_iter()
            .map(|(expert, obs)| {
                let mut groups: BTreeMap<SubjectKey, Vec<f64>> = BTreeMap::new();
                for (k, v) in obs {
                    groups
                        .entry(SubjectKey::new(&k.story_id, &k.criterion_id, None))
                        .or_default()
                        .push(v);
                }
                let medians = groups
                    .into_iter()
                    .map(|(k, vs)| (k, median_aggregate(&vs).expect("groups are non-empty")))
                    .collect();
                (expert, medians)
            })
            .collect(),
    }
}

fn correlation_cell(
    a: &BTreeMap<SubjectKey, f64>,
    b: &BTreeMap<SubjectKey, f64>,
    column: Option<&str>,
) -> Result<(usize, Option<f64>, Option<f64>), HarnessError> {
    let keys: Vec<SubjectKey> = a
        .keys()
        .filter(|k| b.contains_key(*k))
        .filter(|k| column.is_none_or(|c| k.criterion_id == c))
        .cloned()
        .collect();
    let n = keys.len();
    if n < 2 {
        return Ok((n, None, None));
    }
    let x = RatingVector::new(keys.iter().map(|k| a[k]).collect(), keys.clone())?;
    let y = RatingVector::new(keys.iter().map(|k| b[k]).collect(), keys)?;
    Ok((
        n,
        kendall_tau_b(&x, &y)?.coefficient,
        spearman_rho(&x, &y)?.coefficient,
    ))
}

/// Kendall tau-b and Spearman rho between the two experts in `labels`,
/// over the observations both of them rated.
pub fn expert_agreement_table(
    labels: &[LabelRecord],
    criteria_order: &[String],
    granularity: Granularity,
) -> Result<AgreementTable, HarnessError> {
    let obs = observations(labels, granularity);
    if obs.len() != 2 {
        return Err(HarnessError::ExpertCount {
            company: None,
            found: obs.keys().map(|e| e.to_string()).collect(),
        });
    }
    let mut experts = obs.iter();
    let (ea, a) = experts.next().unwrap();
    let (eb, b) = experts.next().unwrap();

    let mut columns = label_columns(
        labels.iter().map(|l| l.criterion_id.as_str()),
        criteria_order,
    );
    columns.push(ALL_COLUMN.to_owned());
    let mut n = Vec::with_capacity(columns.len());
    let mut tau = Vec::with_capacity(columns.len());
    let mut rho = Vec::with_capacity(columns.len());
    for (i, c) in columns.iter().enumerate() {
        let filter = (i + 1 < columns.len()).then_some(c.as_str());
        let (count, t, r) = correlation_cell(a, b, filter)?;
        n.push(count);
        tau.push(t);
        rho.push(r);
    }
    Ok(AgreementTable {
        company_id: None,
        granularity,
        experts: [ea.to_string(), eb.to_string()],
        columns,
        n,
        rows: vec![
            AgreementRow {
                method: CorrelationMethod::KendallTauB,
                cells: tau,
            },
            AgreementRow {
                method: CorrelationMethod::SpearmanRho,
                cells: rho,
            },
        ],
    })
}

/// One agreement table per company, companies in id order.
pub fn agreement_by_company(
    labels: &[LabelRecord],
    experts: &[ExpertProfile],
    criteria_order: &[String],
    granularity: Granularity,
) -> Result<Vec<AgreementTable>, HarnessError> {
    let company_of: BTreeMap<&str, &str> = experts
        .iter()
        .map(|e| (e.expert_id.as_str(), e.company_id.as_str()))
        .collect();
    let mut by_company: BTreeMap<&str, Vec<LabelRecord>> = BTreeMap::new();
    for l in labels {
        let company = company_of
            .get(l.expert_id.as_str())
            .ok_or_else(|| HarnessError::Referential(format!("expert '{}'", l.expert_id)))?;
        by_company.entry(company).or_default().push(l.clone());
    }
    by_company
        .into_iter()
        .map(|(company, labels)| {
            let mut table = expert_agreement_table(&labels, criteria_order, granularity).map_err(
                |e| match e {
                    HarnessError::ExpertCount { found, .. } => HarnessError::ExpertCount {
                        company: Some(company.to_owned()),
                        found,
                    },
                    other => other,
                },
            )?;
            table.company_id = Some(company.to_owned());
            Ok(table)
        })
        .collect()
}

/// Expert-minus-tool deviations for one expert and criterion, one entry
/// per story.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub expert_id: String,
    pub criterion_id: String,
    pub story_ids: Vec<String>,
    pub expert_scores: Vec<f64>,
    pub tool_scores: Vec<f64>,
    pub deviations: Vec<f64>,
    pub box_stats: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRow {
    pub expert_id: String,
    pub criterion_id: String,
    /// Stories whose expert median is a whole class.
    pub classified: usize,
    /// Stories left out because the expert median fell between classes.
    pub excluded_half_integer: usize,
    /// `None` when every story was excluded.
    pub metrics: Option<ClassificationMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolVsExpertReport {
    pub deviations: Vec<DeviationRow>,
    pub classification: Vec<ClassificationRow>,
}

/// Compares each expert's per-criterion median with the tool's score.
/// `reports` maps story ids to the report used for that story.
pub fn tool_vs_expert_report(
    labels: &[LabelRecord],
    reports: &BTreeMap<String, AssessmentReport>,
    criteria_order: &[String],
) -> Result<ToolVsExpertReport, HarnessError> {
    let missing: BTreeSet<&str> = labels
        .iter()
        .map(|l| l.story_id.as_str())
        .filter(|s| !reports.contains_key(*s))
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::Coverage(
            missing.into_iter().map(str::to_owned).collect(),
        ));
    }

    // expert -> criterion -> story -> statement ratings
    let mut grouped: BTreeMap<&str, BTreeMap<&str, BTreeMap<&str, Vec<f64>>>> = BTreeMap::new();
    for l in labels {
        grouped
            .entry(&l.expert_id)
            .or_default()
            .entry(&l.criterion_id)
            .or_default()
            .entry(&l.story_id)
            .or_default()
            .push(f64::from(l.rating));
    }
    let columns = label_columns(
        labels.iter().map(|l| l.criterion_id.as_str()),
        criteria_order,
    );

    let mut uncovered = BTreeSet::new();
    let mut deviations = Vec::new();
    let mut classification = Vec::new();
    for (expert, criteria) in &grouped {
        for criterion in &columns {
            let Some(stories) = criteria.get(criterion.as_str()) else {
                continue;
            };
            let mut keys = Vec::new();
            let mut expert_scores = Vec::new();
            let mut tool_scores = Vec::new();
            for (story, ratings) in stories {
                match reports[*story].score_for(criterion) {
                    Some(score) => {
                        keys.push(SubjectKey::new(story, criterion, None));
                        expert_scores.push(median_aggregate(ratings)?);
                        tool_scores.push(f64::from(score));
                    }
                    None => {
                        uncovered.insert(format!("{story}/{criterion}"));
                    }
                }
            }
            if keys.is_empty() {
                continue;
            }
            let ev = RatingVector::new(expert_scores.clone(), keys.clone())?;
            let tv = RatingVector::new(tool_scores.clone(), keys.clone())?;
            let dev = deviation_series(&ev, &tv)?;

            let whole: Vec<usize> = (0..keys.len())
                .filter(|&i| expert_scores[i].fract() == 0.0)
                .collect();
            let metrics = if whole.is_empty() {
                None
            } else {
                let pick = |v: &[f64]| whole.iter().map(|&i| v[i]).collect::<Vec<_>>();
                let ks: Vec<SubjectKey> = whole.iter().map(|&i| keys[i].clone()).collect();
                Some(classification_metrics(
                    &RatingVector::new(pick(&expert_scores), ks.clone())?,
                    &RatingVector::new(pick(&tool_scores), ks)?,
                )?)
            };
            classification.push(ClassificationRow {
                expert_id: expert.to_string(),
                criterion_id: criterion.clone(),
                classified: whole.len(),
                excluded_half_integer: keys.len() - whole.len(),
                metrics,
            });
            deviations.push(DeviationRow {
                expert_id: expert.to_string(),
                criterion_id: criterion.clone(),
                story_ids: keys.into_iter().map(|k| k.story_id).collect(),
                expert_scores,
                tool_scores,
                box_stats: box_stats(&dev)?,
                deviations: dev,
            });
        }
    }
    if !uncovered.is_empty() {
        return Err(HarnessError::Coverage(uncovered.into_iter().collect()));
    }
    Ok(ToolVsExpertReport {
        deviations,
        classification,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackColumn {
    pub target: FeedbackTarget,
    pub expert_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRow {
    pub criterion: FeedbackCriterion,
    /// Median rating over stories, `None` where nothing was recorded.
    pub cells: Vec<Option<f64>>,
    /// Marks the lowest median in each column (ties all marked).
    pub lowest: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackTable {
    pub columns: Vec<FeedbackColumn>,
    pub rows: Vec<FeedbackRow>,
}

/// Median feedback rating per criterion, target and expert. Columns are
/// grouped by target, experts in id order within a target.
pub fn feedback_table(records: &[FeedbackRecord]) -> FeedbackTable {
    let mut cells: BTreeMap<(FeedbackTarget, &str, FeedbackCriterion), Vec<f64>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.target, &r.expert_id, r.criterion))
            .or_default()
            .push(f64::from(r.rating));
    }
    let columns: Vec<FeedbackColumn> = cells
        .keys()
        .map(|(t, e, _)| (*t, *e))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|(target, e)| FeedbackColumn {
            target,
            expert_id: e.to_owned(),
        })
        .collect();
    let mut rows: Vec<FeedbackRow> = FeedbackCriterion::ALL
        .into_iter()
        .map(|criterion| FeedbackRow {
            criterion,
            cells: columns
                .iter()
                .map(|col| {
                    cells
                        .get(&(col.target, col.expert_id.as_str(), criterion))
                        .map(|v| median_aggregate(v).expect("cells are non-empty"))
                })
                .collect(),
            lowest: vec![false; columns.len()],
        })
        .collect();
    for j in 0..columns.len() {
        let min = rows
            .iter()
            .filter_map(|r| r.cells[j])
            .min_by(f64::total_cmp);
        if let Some(min) = min {
            for r in &mut rows {
                r.lowest[j] = r.cells[j] == Some(min);
            }
        }
    }
    FeedbackTable { columns, rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructSummary {
    pub construct: Construct,
    pub n: usize,
    pub box_stats: BoxStats,
}

/// Box-plot data per acceptance construct over all item ratings.
/// Constructs without ratings are left out.
pub fn acceptance_summary(records: &[AcceptanceRecord]) -> Vec<ConstructSummary> {
    Construct::ALL
        .into_iter()
        .filter_map(|construct| {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.construct == construct)
                .map(|r| f64::from(r.rating))
                .collect();
            let stats = box_stats(&values).ok()?;
            Some(ConstructSummary {
                construct,
                n: values.len(),
                box_stats: stats,
            })
        })
        .collect()
}
