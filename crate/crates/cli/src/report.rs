//! Experiment summaries: per-run metrics, mean and population standard
//! deviation, and the metrics-by-scenario text table.

use std::fmt::Write as _;

use fedhorizon::federation::TrainingHistory;
use fedhorizon::MetricsReport;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub history_digest: String,
    pub params_digest: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation (divide by n).
pub fn stat(values: &[f64]) -> Stat {
    assert!(!values.is_empty(), "statistics of an empty sample");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Stat { mean, std: var.sqrt() }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub run_id: String,
    pub scenario: &'static str,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub macro_f1: Stat,
    pub accuracy: Stat,
    pub per_class_f1: Vec<Stat>,
}

impl ExperimentResult {
    pub fn new(run_id: String, scenario: &'static str, runs: Vec<RunRecord>) -> Self {
        let column = |f: &dyn Fn(&MetricsReport) -> f64| stat(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
        let k = runs.first().map_or(0, |r| r.metrics.per_class.len());
        ExperimentResult {
            macro_f1: column(&|m| m.macro_f1),
            accuracy: column(&|m| m.accuracy),
            per_class_f1: (0..k).map(|c| column(&|m| m.per_class[c].f1)).collect(),
            n_runs: runs.len(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            run_id,
            scenario,
            runs,
        }
    }
}

fn cell(s: Stat) -> String {
    format!("{:.6}({:.6})", s.mean, s.std)
}

/// Rows are metrics, columns are experiments; cells are `mean(std)`.
pub fn render_table(results: &[ExperimentResult]) -> String {
    let mut rows: Vec<(String, Vec<String>)> = vec![
        ("macro-F1".into(), results.iter().map(|r| cell(r.macro_f1)).collect()),
        ("accuracy".into(), results.iter().map(|r| cell(r.accuracy)).collect()),
    ];
    let k = results.iter().map(|r| r.per_class_f1.len()).max().unwrap_or(0);
    for c in 0..k {
        rows.push((format!("F1 class {}", c + 1), results.iter().map(|r| r.per_class_f1.get(c).map_or(String::new(), |s| cell(*s))).collect()));
    }
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("metric".len());
    let widths: Vec<usize> = results
        .iter()
        .enumerate()
        .map(|(i, r)| rows.iter().map(|(_, cells)| cells[i].len()).max().unwrap_or(0).max(r.run_id.len()))
        .collect();

    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "metric");
    for (r, w) in results.iter().zip(&widths) {
        let _ = write!(out, "  {:>w$}", r.run_id);
    }
    out.push('\n');
    for (label, cells) in &rows {
        let _ = write!(out, "{label:<label_w$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "n_runs: {}", results.first().map_or(0, |r| r.n_runs));
    out
}

pub const SERIES_HEADER: &str = "run,round,macro_f1,accuracy,train_loss";

/// One CSV line per round of run `run`. `train_loss` is the sample-weighted
/// mean of the nodes' losses.
pub fn series_rows(run: usize, history: &TrainingHistory, out: &mut String) {
    for r in &history.rounds {
        let total: u64 = r.nodes.iter().map(|n| n.num_samples).sum();
        let loss = r.nodes.iter().map(|n| n.num_samples as f64 * n.train_loss).sum::<f64>() / total.max(1) as f64;
        let (f1, acc) = r.test.as_ref().map_or((String::new(), String::new()), |m| (m.macro_f1.to_string(), m.accuracy.to_string()));
        let _ = writeln!(out, "{run},{},{f1},{acc},{loss}", r.round);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedhorizon::metrics::MetricsReport;

    fn report(truth: &[usize], pred: &[usize]) -> MetricsReport {
        MetricsReport::evaluate(truth, pred, 4).unwrap()
    }

    fn record(seed: u64, m: MetricsReport) -> RunRecord {
        RunRecord { seed, metrics: m, history_digest: String::new(), params_digest: String::new() }
    }

    #[test]
    fn population_std() {
        let s = stat(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(stat(&[0.25]).std, 0.0);
    }

    #[test]
    fn table_matches_json_to_six_decimals() {
        let a = record(0, report(&[1, 2, 3, 4], &[1, 2, 3, 3]));
        let b = record(1, report(&[1, 2, 3, 4], &[1, 1, 3, 4]));
        let res = ExperimentResult::new("federated".into(), "federated", vec![a, b]);
        let table = render_table(std::slice::from_ref(&res));
        assert!(table.contains(&format!("{:.6}({:.6})", res.macro_f1.mean, res.macro_f1.std)));
        assert!(table.contains(&format!("{:.6}({:.6})", res.accuracy.mean, res.accuracy.std)));
        assert_eq!(res.accuracy.mean, 0.75);
        assert_eq!(res.seeds, vec![0, 1]);
    }
}
