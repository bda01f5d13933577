//! Verification report JSON and the aggregate CSV tables.

use nnopf_core::verify::{TermResult, VerificationReport};
use serde::{Deserialize, Serialize};

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEntry {
    pub label: String,
    pub index: Option<usize>,
    pub status: String,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    pub node_count: usize,
    pub wall_time: f64,
}

impl From<&TermResult> for TermEntry {
    fn from(t: &TermResult) -> Self {
        TermEntry {
            label: t.label.clone(),
            index: t.index,
            status: t.status.as_str().into(),
            value: finite(t.value),
            bound: finite(t.bound),
            node_count: t.node_count,
            wall_time: t.wall_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigMEntry {
    pub big_m: f64,
    pub passed: bool,
    pub min_slack: Option<f64>,
    pub rows_checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub metric: String,
    pub unit: String,
    pub worst_case_value: f64,
    pub upper_bound: Option<f64>,
    pub raw_value: f64,
    pub exact: bool,
    pub status: String,
    pub milp_gap: f64,
    pub node_count: usize,
    pub wall_time: f64,
    pub maximizer_load: Vec<f64>,
    pub maximizer_dispatch: Vec<f64>,
    pub optimal_dispatch: Option<Vec<f64>>,
    pub attaining_index: Option<usize>,
    pub boundary_fraction: f64,
    pub strategy: String,
    pub stability_mode: String,
    pub free_neurons: usize,
    pub big_m: Option<BigMEntry>,
    pub empirical_lower_bound: Option<f64>,
    pub ratio: Option<f64>,
    pub terms: Vec<TermEntry>,
}

impl From<&VerificationReport> for ReportEntry {
    fn from(r: &VerificationReport) -> Self {
        ReportEntry {
            metric: r.metric.as_str().into(),
            unit: r.metric.unit().into(),
            worst_case_value: r.value,
            upper_bound: finite(r.upper_bound),
            raw_value: r.raw_value,
            exact: r.is_exact(),
            status: r.status.as_str().into(),
            milp_gap: r.milp_gap,
            node_count: r.node_count,
            wall_time: r.wall_time,
            maximizer_load: r.maximizer_load.clone(),
            maximizer_dispatch: r.maximizer_dispatch.clone(),
            optimal_dispatch: r.optimal_dispatch.clone(),
            attaining_index: r.attaining_index,
            boundary_fraction: r.boundary_fraction,
            strategy: r.strategy.as_str().into(),
            stability_mode: r.stability_mode.as_str().into(),
            free_neurons: r.free_neurons,
            big_m: r.big_m.map(|m| {
                let a = r.big_m_audit.as_ref();
                BigMEntry {
                    big_m: m,
                    passed: a.is_none_or(|a| a.passed),
                    min_slack: a.and_then(|a| finite(a.min_slack)),
                    rows_checked: a.map_or(0, |a| a.slacks.len()),
                }
            }),
            empirical_lower_bound: r.empirical,
            ratio: r.ratio,
            terms: r.terms.iter().map(TermEntry::from).collect(),
        }
    }
}

/// One verification run: every requested metric for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub case: String,
    pub seed: u64,
    pub network: String,
    pub bound_stage: String,
    pub stable_neurons: usize,
    pub hidden_neurons: usize,
    pub bound_time: f64,
    pub reports: Vec<ReportEntry>,
    /// Metrics whose solve failed, with the error message.
    pub failures: Vec<(String, String)>,
}

/// Row of the aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case: String,
    pub seed: String,
    pub metric: String,
    pub unit: String,
    pub empirical: Option<f64>,
    pub guarantee: f64,
    pub ratio: Option<f64>,
    pub exact: bool,
    pub stability_mode: String,
    pub wall_time: f64,
}

/// Per-seed rows followed by one `mean` row per metric.
pub fn summary_rows(runs: &[RunReport]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for run in runs {
        for r in &run.reports {
            rows.push(SummaryRow {
                case: run.case.clone(),
                seed: run.seed.to_string(),
                metric: r.metric.clone(),
                unit: r.unit.clone(),
                empirical: r.empirical_lower_bound,
                guarantee: r.worst_case_value,
                ratio: r.ratio,
                exact: r.exact,
                stability_mode: r.stability_mode.clone(),
                wall_time: r.wall_time,
            });
        }
    }
    let mut metrics: Vec<String> = rows.iter().map(|r| r.metric.clone()).collect();
    metrics.dedup();
    metrics.sort();
    metrics.dedup();
    let mut means = Vec::new();
    for m in metrics {
        let sel: Vec<&SummaryRow> = rows.iter().filter(|r| r.metric == m).collect();
        let n = sel.len() as f64;
        let mean = |f: &dyn Fn(&SummaryRow) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = sel.iter().filter_map(|r| f(r)).collect();
            (v.len() == sel.len()).then(|| v.iter().sum::<f64>() / n)
        };
        let first = sel[0];
        means.push(SummaryRow {
            case: first.case.clone(),
            seed: "mean".into(),
            metric: m.clone(),
            unit: first.unit.clone(),
            empirical: mean(&|r| r.empirical),
            guarantee: sel.iter().map(|r| r.guarantee).sum::<f64>() / n,
            ratio: mean(&|r| r.ratio),
            exact: sel.iter().all(|r| r.exact),
            stability_mode: first.stability_mode.clone(),
            wall_time: sel.iter().map(|r| r.wall_time).sum::<f64>() / n,
        });
    }
    rows.extend(means);
    rows
}

pub fn summary_csv(rows: &[SummaryRow]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}
