use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::closed_loop::{run_closed_loop, RunTrace};
use super::metrics::{compute_metrics, summarize, CohortSummary, MetricsRecord, TargetBand};
use crate::config::SimConfig;
use crate::controllers::ControllerKind;
use crate::error::{Result, SimError};
use crate::population::{sample_cohort, SampledPatient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub patient_id: usize,
    pub controller: ControllerKind,
    /// `None` when the run itself failed.
    pub metrics: Option<MetricsRecord>,
    pub error: Option<String>,
    pub bound_violations: usize,
    pub solve_times_ms: Vec<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    /// Ordered by patient, then by controller as requested.
    pub records: Vec<RunRecord>,
    pub summaries: Vec<(ControllerKind, CohortSummary)>,
    /// Present when traces were requested, aligned with `records`.
    pub traces: Option<Vec<RunTrace>>,
}

impl MonteCarloResult {
    pub fn summary(&self, kind: ControllerKind) -> Option<&CohortSummary> {
        self.summaries.iter().find(|(k, _)| *k == kind).map(|(_, s)| s)
    }

    pub fn records_for(&self, kind: ControllerKind) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(move |r| r.controller == kind)
    }
}

/// Runs every controller on the same sampled cohort.
///
/// Each (patient, controller) pair is independent; the patient's seed drives
/// its noise stream, so all controllers face identical patients and noise.
/// Results do not depend on `parallelism`.
pub fn run_monte_carlo(
    n: usize,
    kinds: &[ControllerKind],
    config: &SimConfig,
    master_seed: u64,
    parallelism: usize,
    keep_traces: bool,
) -> Result<MonteCarloResult> {
    if n == 0 {
        return Err(SimError::Config("need at least one patient".into()));
    }
    config.validate()?;
    let cohort = sample_cohort(n, &config.population, master_seed);
    run_cohort(&cohort, kinds, config, parallelism, keep_traces)
}

pub fn run_cohort(
    cohort: &[SampledPatient],
    kinds: &[ControllerKind],
    config: &SimConfig,
    parallelism: usize,
    keep_traces: bool,
) -> Result<MonteCarloResult> {
    let jobs: Vec<(&SampledPatient, ControllerKind)> = cohort
        .iter()
        .flat_map(|p| kinds.iter().map(move |k| (p, *k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| SimError::Config(e.to_string()))?;
    let band = TargetBand {
        low: config.scenario.bis_target - 5.0,
        high: config.scenario.bis_target + 5.0,
    };

    let outcomes: Vec<(RunRecord, Option<RunTrace>)> = pool.install(|| {
        jobs.par_iter()
            .map(|(patient, kind)| {
                let run = run_closed_loop(patient, config, *kind, patient.seed);
                let record = match &run {
                    Ok(trace) => RunRecord {
                        patient_id: patient.index,
                        controller: *kind,
                        metrics: Some(compute_metrics(trace, band)),
                        error: None,
                        bound_violations: trace.bound_violations(),
                        solve_times_ms: trace.solve_times_ms(),
                        failures: trace.failures,
                    },
                    Err(e) => RunRecord {
                        patient_id: patient.index,
                        controller: *kind,
                        metrics: None,
                        error: Some(e.to_string()),
                        bound_violations: 0,
                        solve_times_ms: Vec::new(),
                        failures: 0,
                    },
                };
                let trace = if keep_traces { run.ok() } else { None };
                (record, trace)
            })
            .collect()
    });

    let duration_min = config.scenario.duration_s / 60.0;
    let summaries = kinds
        .iter()
        .map(|kind| {
            let mine = outcomes.iter().filter(|(r, _)| r.controller == *kind);
            let ok: Vec<MetricsRecord> = mine.clone().filter_map(|(r, _)| r.metrics).collect();
            let failed = mine.count() - ok.len();
            (*kind, summarize(&ok, failed, duration_min))
        })
        .collect();
    let (records, traces): (Vec<RunRecord>, Vec<Option<RunTrace>>) = outcomes.into_iter().unzip();
    let traces = keep_traces.then(|| traces.into_iter().map(Option::unwrap_or_default).collect());
    Ok(MonteCarloResult {
        records,
        summaries,
        traces,
    })
}
