//! Plain-text tables for the summaries printed to stdout.

use std::collections::BTreeSet;
use std::fmt::Write;

use abrflow::maxmin::AllocationResult;
use abrflow::metrics::{jain_fairness_index, Summary};
use abrflow::scenario::Scenario;

use crate::Outcome;

/// Left-aligns the first column and right-aligns the rest.
fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                write!(line, "{cell:<w$}", w = widths[0]).unwrap();
            } else {
                write!(line, "  {cell:>w$}", w = widths[c]).unwrap();
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn row<const N: usize>(cells: [&str; N]) -> Vec<String> {
    cells.iter().map(|s| s.to_string()).collect()
}

fn algorithms(scenario: &Scenario) -> String {
    let names: BTreeSet<&str> = scenario.switches.iter().map(|s| s.algorithm.name()).collect();
    names.into_iter().collect::<Vec<_>>().join(", ")
}

/// Jain index of each VC's send rate over its max-min allocation.
fn jain_on_ratios(summary: &Summary, oracle: &AllocationResult<f64>) -> Option<f64> {
    let ratios: Vec<f64> = summary
        .vcs
        .iter()
        .map(|v| v.mean_send_rate_mbps / oracle.per_flow[&v.vc_id])
        .collect();
    jain_fairness_index(&ratios).ok()
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.digits$}"))
}

pub fn run_summary(scenario: &Scenario, summary: &Summary, oracle: &AllocationResult<f64>) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{} under {}: {} s simulated, means over {:.3}-{:.3} s",
        scenario.name,
        algorithms(scenario),
        scenario.sim_duration_s,
        summary.window_start_s,
        summary.window_end_s
    )
    .unwrap();
    out.push('\n');

    let mut rows = vec![row(["vc", "mean_acr", "send_rate", "oracle", "ratio"])];
    for v in &summary.vcs {
        let o = oracle.per_flow[&v.vc_id];
        rows.push(vec![
            v.vc_id.clone(),
            format!("{:.3}", v.mean_acr_mbps),
            format!("{:.3}", v.mean_send_rate_mbps),
            format!("{o:.3}"),
            format!("{:.4}", v.mean_send_rate_mbps / o),
        ]);
    }
    out.push_str(&table(&rows));
    writeln!(out, "jain index on oracle ratios: {}", fmt_opt(jain_on_ratios(summary, oracle), 6)).unwrap();
    out.push('\n');

    let mut rows = vec![row(["port", "mean_z", "mean_n_eff", "mean_fair_share", "max_queue"])];
    for p in &summary.ports {
        rows.push(vec![
            p.port_id.clone(),
            format!("{:.4}", p.mean_z),
            format!("{:.4}", p.mean_n_eff),
            format!("{:.3}", p.mean_fair_share_mbps),
            p.max_queue_cells.to_string(),
        ]);
    }
    out.push_str(&table(&rows));
    out
}

pub fn compare_table(scenario: &Scenario, outcomes: &[Outcome], oracle: &AllocationResult<f64>) -> String {
    let mut out = String::new();
    writeln!(out, "{}: {} s simulated, trailing-window means", scenario.name, scenario.sim_duration_s).unwrap();
    out.push('\n');

    let mut header = vec![String::new(), "oracle".to_string()];
    header.extend(outcomes.iter().map(|o| o.algorithm.name().to_string()));
    let mut rows = vec![header];

    for vc in &scenario.vcs {
        let mut r = vec![format!("{} acr", vc.id), format!("{:.3}", oracle.per_flow[&vc.id])];
        r.extend(
            outcomes
                .iter()
                .map(|o| fmt_opt(o.summary.vc(&vc.id).map(|v| v.mean_acr_mbps), 3)),
        );
        rows.push(r);
    }
    let ports = outcomes.first().map(|o| o.summary.ports.clone()).unwrap_or_default();
    for p in &ports {
        let mut r = vec![format!("{} n_eff", p.port_id), String::new()];
        r.extend(
            outcomes
                .iter()
                .map(|o| fmt_opt(o.summary.port(&p.port_id).map(|p| p.mean_n_eff), 4)),
        );
        rows.push(r);
        let mut r = vec![format!("{} max_queue", p.port_id), String::new()];
        r.extend(outcomes.iter().map(|o| {
            o.summary
                .port(&p.port_id)
                .map_or_else(|| "-".into(), |p| p.max_queue_cells.to_string())
        }));
        rows.push(r);
    }
    let mut r = vec!["jain on ratios".to_string(), String::new()];
    r.extend(outcomes.iter().map(|o| fmt_opt(jain_on_ratios(&o.summary, oracle), 6)));
    rows.push(r);

    out.push_str(&table(&rows));
    out
}

pub fn oracle_table(scenario: &Scenario, result: &AllocationResult<f64>) -> String {
    let mut rows = vec![row(["vc", "allocation", "bottleneck"])];
    for vc in &scenario.vcs {
        rows.push(vec![
            vc.id.clone(),
            format!("{:.4}", result.per_flow[&vc.id]),
            result.bottleneck_of[&vc.id].to_string(),
        ]);
    }
    table(&rows)
}
