//! CSV and summary writers.

use std::io::Write;

use serde::Serialize;

use super::closed_loop::RunTrace;
use super::metrics::{CohortSummary, MetricStats};
use super::montecarlo::RunRecord;
use crate::controllers::ControllerKind;
use crate::error::Result;

pub const TRACE_COLUMNS: [&str; 8] = [
    "t_s",
    "bis_true",
    "bis_measured",
    "y_ref",
    "u_p_mg_s",
    "u_r_ug_s",
    "model_index",
    "solve_ms",
];

pub const METRICS_COLUMNS: [&str; 7] = [
    "patient_id",
    "controller",
    "tt_min",
    "nadir",
    "st10_min",
    "st20_min",
    "us",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(trace: &RunTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in &trace.rows {
        w.write_record([
            r.t_s.to_string(),
            r.bis_true.to_string(),
            r.bis_measured.to_string(),
            r.y_ref.to_string(),
            r.u_p.to_string(),
            r.u_r.to_string(),
            r.model_index.map(|i| i.to_string()).unwrap_or_default(),
            r.solve_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per run; failed runs and absent events leave empty fields.
pub fn write_metrics_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in records {
        let m = r.metrics;
        w.write_record([
            r.patient_id.to_string(),
            r.controller.to_string(),
            opt(m.and_then(|m| m.tt)),
            opt(m.map(|m| m.bis_nadir)),
            opt(m.and_then(|m| m.st10)),
            opt(m.and_then(|m| m.st20)),
            opt(m.map(|m| m.us)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cell(s: &MetricStats) -> String {
    format!("{:6.2} ± {:5.2} | {:6.2}", s.mean, s.std, s.extreme)
}

/// Human-readable table laid out like the usual induction report. Each cell
/// is `mean ± std | extreme`, the extreme being the max (min for the nadir).
pub fn format_summary_table(summaries: &[(ControllerKind, CohortSummary)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<10}", "controller"));
    for title in ["TT (min)", "BIS-NADIR", "ST10 (min)", "ST20 (min)", "US"] {
        out.push_str(&format!("| {title:^23} "));
    }
    out.push_str(&format!("| {:>5} {:>6}\n", "runs", "failed"));
    for (kind, s) in summaries {
        out.push_str(&format!("{:<10}", kind.name()));
        for stats in [&s.tt, &s.bis_nadir, &s.st10, &s.st20, &s.us] {
            out.push_str(&format!("| {} ", cell(stats)));
        }
        out.push_str(&format!("| {:>5} {:>6}\n", s.runs, s.failed));
    }
    out
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    controller: ControllerKind,
    #[serde(flatten)]
    summary: &'a CohortSummary,
}

pub fn summary_json(summaries: &[(ControllerKind, CohortSummary)]) -> String {
    let entries: Vec<SummaryEntry> = summaries
        .iter()
        .map(|(controller, summary)| SummaryEntry {
            controller: *controller,
            summary,
        })
        .collect();
    serde_json::to_string_pretty(&entries).expect("summary serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::closed_loop::TraceRow;
    use crate::sim::metrics::MetricsRecord;

    #[test]
    fn trace_header_and_row() {
        let trace = RunTrace {
            rows: vec![TraceRow {
                t_s: 0.0,
                state: [0.0; 8],
                bis_true: 97.4,
                bis_measured: 97.4,
                y_ref: 50.0,
                u_p: 1.5,
                u_r: 3.0,
                model_index: Some(22),
                solve_ms: 0.25,
            }],
            ..RunTrace::default()
        };
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "t_s,bis_true,bis_measured,y_ref,u_p_mg_s,u_r_ug_s,model_index,solve_ms\n0,97.4,97.4,50,1.5,3,22,0.25\n"
        );
    }

    #[test]
    fn metrics_absent_fields_are_empty() {
        let rec = RunRecord {
            patient_id: 3,
            controller: ControllerKind::Pid,
            metrics: Some(MetricsRecord {
                tt: Some(1.25),
                bis_nadir: 46.5,
                st10: None,
                st20: Some(2.0),
                us: 0.0,
            }),
            error: None,
            bound_violations: 0,
            solve_times_ms: vec![],
            failures: 0,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "patient_id,controller,tt_min,nadir,st10_min,st20_min,us\n3,pid,1.25,46.5,,2,0\n"
        );
    }
}
