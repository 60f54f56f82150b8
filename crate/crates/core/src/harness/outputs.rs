//! Serialized synthesis tables: canonical JSON plus a CSV twin each.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::canonical;
use crate::metrics::BoxStats;

use super::records::ExpertProfile;
use super::store::StudyDir;
use super::tables::{
    acceptance_summary, agreement_by_company, feedback_table, tool_vs_expert_report, FeedbackTable,
    Granularity,
};
use super::{HarnessError, ModelSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableOutput {
    pub name: String,
    pub json: String,
    pub csv: String,
}

impl TableOutput {
    fn new<T: Serialize>(name: &str, value: &T, rows: Vec<Vec<String>>) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.write_record(row).expect("writing to memory cannot fail");
        }
        TableOutput {
            name: name.to_owned(),
            json: canonical::to_canonical_string(value).expect("tables serialize"),
            csv: String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"),
        }
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>, missing: &str) -> String {
    v.map_or_else(|| missing.to_owned(), num)
}

fn box_cells(b: &BoxStats) -> Vec<String> {
    [b.min, b.q1, b.median, b.q3, b.max].map(num).to_vec()
}

fn companies(experts: &[ExpertProfile]) -> BTreeMap<&str, &str> {
    experts
        .iter()
        .map(|e| (e.expert_id.as_str(), e.company_id.as_str()))
        .collect()
}

/// Per-company expert agreement at one granularity.
pub fn agreement_output(
    study: &StudyDir,
    models: &ModelSet,
    granularity: Granularity,
) -> Result<TableOutput, HarnessError> {
    let order = models.criteria_order();
    let labels = study.labels()?;
    let experts = study.experts()?;
    let tables = agreement_by_company(&labels, &experts, &order, granularity)?;
    let mut rows = vec![vec![
        "company_id".to_owned(),
        "method".into(),
        "criterion".into(),
        "n".into(),
        "coefficient".into(),
    ]];
    for t in &tables {
        for r in &t.rows {
            let method = serde_json::to_value(r.method).unwrap();
            for (j, col) in t.columns.iter().enumerate() {
                rows.push(vec![
                    t.company_id.clone().unwrap_or_default(),
                    method.as_str().unwrap().to_owned(),
                    col.clone(),
                    t.n[j].to_string(),
                    opt(r.cells[j], "-"),
                ]);
            }
        }
    }
    Ok(TableOutput::new(
        &format!("agreement_{}", granularity.name()),
        &tables,
        rows,
    ))
}

/// Deviation, deviation box-plot and classification tables, comparing
/// each story's latest report with the expert labels.
pub fn tool_vs_expert_outputs(
    study: &StudyDir,
    models: &ModelSet,
) -> Result<Vec<TableOutput>, HarnessError> {
    let order = models.criteria_order();
    let labels = study.labels()?;
    let experts = study.experts()?;
    let company = companies(&experts);
    let mut out = Vec::new();
    let reports = study.latest_reports()?;
    let tve = tool_vs_expert_report(&labels, &reports, &order)?;
    let company_for = |e: &str| company.get(e).copied().unwrap_or_default().to_owned();

    let mut rows = vec![[
        "company_id",
        "expert_id",
        "criterion_id",
        "story_id",
        "expert",
        "tool",
        "deviation",
    ]
    .map(String::from)
    .to_vec()];
    let mut box_rows = vec![[
        "company_id",
        "expert_id",
        "criterion_id",
        "n",
        "min",
        "q1",
        "median",
        "q3",
        "max",
    ]
    .map(String::from)
    .to_vec()];
    for d in &tve.deviations {
        for i in 0..d.story_ids.len() {
            rows.push(vec![
                company_for(&d.expert_id),
                d.expert_id.clone(),
                d.criterion_id.clone(),
                d.story_ids[i].clone(),
                num(d.expert_scores[i]),
                num(d.tool_scores[i]),
                num(d.deviations[i]),
            ]);
        }
        let mut r = vec![
            company_for(&d.expert_id),
            d.expert_id.clone(),
            d.criterion_id.clone(),
            d.deviations.len().to_string(),
        ];
        r.extend(box_cells(&d.box_stats));
        box_rows.push(r);
    }
    out.push(TableOutput::new("deviation", &tve.deviations, rows));
    let boxes: Vec<_> = tve
        .deviations
        .iter()
        .map(|d| {
            serde_json::json!({
                "company_id": company_for(&d.expert_id),
                "expert_id": d.expert_id,
                "criterion_id": d.criterion_id,
                "n": d.deviations.len(),
                "box_stats": d.box_stats,
            })
        })
        .collect();
    out.push(TableOutput::new("deviation_boxplots", &boxes, box_rows));

    let mut rows = vec![[
        "company_id",
        "expert_id",
        "criterion_id",
        "classified",
        "excluded_half_integer",
        "accuracy",
        "precision",
        "recall",
        "f1",
    ]
    .map(String::from)
    .to_vec()];
    for c in &tve.classification {
        let m = c.metrics.as_ref();
        rows.push(vec![
            company_for(&c.expert_id),
            c.expert_id.clone(),
            c.criterion_id.clone(),
            c.classified.to_string(),
            c.excluded_half_integer.to_string(),
            opt(m.map(|m| m.accuracy), ""),
            opt(m.map(|m| m.precision), ""),
            opt(m.map(|m| m.recall), ""),
            opt(m.map(|m| m.f1), ""),
        ]);
    }
    out.push(TableOutput::new(
        "classification",
        &tve.classification,
        rows,
    ));
    Ok(out)
}

/// Agreement at both granularities plus the tool-versus-expert tables.
pub fn evaluation_outputs(
    study: &StudyDir,
    models: &ModelSet,
) -> Result<Vec<TableOutput>, HarnessError> {
    let mut out = vec![
        agreement_output(study, models, Granularity::Statements)?,
        agreement_output(study, models, Granularity::CriterionMedians)?,
    ];
    out.extend(tool_vs_expert_outputs(study, models)?);
    Ok(out)
}

#[derive(Serialize)]
struct CompanyFeedback {
    company_id: String,
    table: FeedbackTable,
}

/// Median feedback per company.
pub fn feedback_output(study: &StudyDir) -> Result<TableOutput, HarnessError> {
    let experts = study.experts()?;
    let company = companies(&experts);

    let mut by_company: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for r in study.feedback()? {
        let c = company
            .get(r.expert_id.as_str())
            .copied()
            .unwrap_or_default();
        by_company.entry(c.to_owned()).or_default().push(r);
    }
    let tables: Vec<CompanyFeedback> = by_company
        .into_iter()
        .map(|(company_id, records)| CompanyFeedback {
            company_id,
            table: feedback_table(&records),
        })
        .collect();
    let mut rows = vec![[
        "company_id",
        "criterion",
        "target",
        "expert_id",
        "median",
        "lowest",
    ]
    .map(String::from)
    .to_vec()];
    for t in &tables {
        for r in &t.table.rows {
            for (j, col) in t.table.columns.iter().enumerate() {
                rows.push(vec![
                    t.company_id.clone(),
                    r.criterion.name().to_owned(),
                    col.target.name().to_owned(),
                    col.expert_id.clone(),
                    opt(r.cells[j], ""),
                    r.lowest[j].to_string(),
                ]);
            }
        }
    }
    Ok(TableOutput::new("feedback", &tables, rows))
}

/// Box-plot data per acceptance construct.
pub fn acceptance_output(study: &StudyDir) -> Result<TableOutput, HarnessError> {
    let summary = acceptance_summary(&study.acceptance()?);
    let mut rows = vec![["construct", "n", "min", "q1", "median", "q3", "max"]
        .map(String::from)
        .to_vec()];
    for s in &summary {
        let mut r = vec![s.construct.name().to_owned(), s.n.to_string()];
        r.extend(box_cells(&s.box_stats));
        rows.push(r);
    }
    Ok(TableOutput::new("acceptance", &summary, rows))
}

/// Every table: [`evaluation_outputs`] plus feedback and acceptance.
pub fn report_outputs(
    study: &StudyDir,
    models: &ModelSet,
) -> Result<Vec<TableOutput>, HarnessError> {
    let mut out = evaluation_outputs(study, models)?;
    out.push(feedback_output(study)?);
    out.push(acceptance_output(study)?);
    Ok(out)
}

pub fn write_outputs(study: &mut StudyDir, outputs: &[TableOutput]) -> Result<(), HarnessError> {
    for o in outputs {
        study.write_output(&o.name, &o.json, &o.csv)?;
    }
    Ok(())
}
