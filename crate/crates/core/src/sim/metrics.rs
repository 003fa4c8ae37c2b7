//! Induction-phase performance metrics and cohort summaries.

use serde::{Deserialize, Serialize};

use super::closed_loop::RunTrace;

/// Lower and upper edge of the BIS target band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetBand {
    pub low: f64,
    pub high: f64,
}

impl Default for TargetBand {
    fn default() -> Self {
        TargetBand {
            low: 45.0,
            high: 55.0,
        }
    }
}

impl TargetBand {
    pub fn setpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

/// Times in minutes; `None` when the event never happens within the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub tt: Option<f64>,
    pub bis_nadir: f64,
    pub st10: Option<f64>,
    pub st20: Option<f64>,
    pub us: f64,
}

/// Metrics on the noise-free BIS of a trace.
///
/// * TT: first sample at or below the upper band edge.
/// * ST10/ST20: start of the final stretch spent within `setpoint·(1 ± 0.1)`
///   (resp. 0.2); absent if the run ends outside it.
/// * US: `max(0, low - nadir)`.
pub fn compute_metrics(trace: &RunTrace, band: TargetBand) -> MetricsRecord {
    let times: Vec<f64> = trace.rows.iter().map(|r| r.t_s).collect();
    let bis: Vec<f64> = trace.bis().collect();
    compute_metrics_from_series(&times, &bis, band)
}

pub fn compute_metrics_from_series(times_s: &[f64], bis: &[f64], band: TargetBand) -> MetricsRecord {
    assert!(!bis.is_empty(), "empty trace");
    assert_eq!(times_s.len(), bis.len());
    let minutes = |i: usize| times_s[i] / 60.0;
    let tt = bis.iter().position(|&b| b <= band.high).map(minutes);
    let nadir = bis.iter().copied().fold(f64::INFINITY, f64::min);
    let settle = |frac: f64| {
        let lo = band.setpoint() * (1.0 - frac);
        let hi = band.setpoint() * (1.0 + frac);
        let inside = |b: f64| (lo..=hi).contains(&b);
        if !inside(*bis.last().expect("nonempty")) {
            return None;
        }
        let start = bis
            .iter()
            .rposition(|&b| !inside(b))
            .map_or(0, |last_out| last_out + 1);
        Some(minutes(start))
    };
    MetricsRecord {
        tt,
        bis_nadir: nadir,
        st10: settle(0.10),
        st20: settle(0.20),
        us: (band.low - nadir).max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    /// Maximum, or minimum for the nadir. Absent events count as the run duration.
    pub extreme: f64,
    /// Runs where the event occurred.
    pub defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub runs: usize,
    pub failed: usize,
    pub tt: MetricStats,
    pub bis_nadir: MetricStats,
    pub st10: MetricStats,
    pub st20: MetricStats,
    pub us: MetricStats,
}

/// Mean and population standard deviation over defined values.
fn stats(values: &[Option<f64>], cap: f64, take_min: bool) -> MetricStats {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let n = defined.len();
    let (mean, std) = if n == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let mean = defined.iter().sum::<f64>() / n as f64;
        let var = defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    };
    let capped = values.iter().map(|v| v.unwrap_or(cap));
    let extreme = if take_min {
        capped.fold(f64::INFINITY, f64::min)
    } else {
        capped.fold(f64::NEG_INFINITY, f64::max)
    };
    MetricStats {
        mean,
        std,
        extreme,
        defined: n,
    }
}

/// Summarizes completed runs; `duration_min` caps absent events in the max column.
pub fn summarize(records: &[MetricsRecord], failed: usize, duration_min: f64) -> CohortSummary {
    let col = |f: fn(&MetricsRecord) -> Option<f64>| -> Vec<Option<f64>> { records.iter().map(f).collect() };
    CohortSummary {
        runs: records.len(),
        failed,
        tt: stats(&col(|r| r.tt), duration_min, false),
        bis_nadir: stats(&col(|r| Some(r.bis_nadir)), duration_min, true),
        st10: stats(&col(|r| r.st10), duration_min, false),
        st20: stats(&col(|r| r.st20), duration_min, false),
        us: stats(&col(|r| Some(r.us)), duration_min, false),
    }
}
