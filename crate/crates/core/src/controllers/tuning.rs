//! Random-search PID tuning over a patient cohort.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ControllerKind, PidConfig};
use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::population::SampledPatient;
use crate::sim::{compute_metrics, run_closed_loop, TargetBand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub iterations: usize,
    pub seed: u64,
    pub cohort_size: usize,
    pub kp_range: (f64, f64),
    pub ti_range: (f64, f64),
    pub td_range: (f64, f64),
    /// Weight of the worst patient relative to the cohort mean.
    pub worst_weight: f64,
    /// Penalty per BIS unit of undershoot.
    pub undershoot_weight: f64,
    /// Also score the configured gains as a candidate.
    pub include_initial: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            iterations: 60,
            seed: 1,
            cohort_size: 24,
            kp_range: (0.01, 0.1),
            ti_range: (150.0, 1500.0),
            td_range: (1.0, 30.0),
            worst_weight: 0.5,
            undershoot_weight: 10.0,
            include_initial: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub config: PidConfig,
    pub objective: f64,
    pub initial_objective: f64,
    pub evaluated: usize,
}

/// Per-patient loss: integrated |BIS - target| in BIS·min plus an undershoot penalty.
pub fn patient_loss(bis: &[f64], dt_s: f64, target: f64, us: f64, undershoot_weight: f64) -> f64 {
    let iae: f64 = bis.iter().map(|b| (b - target).abs()).sum::<f64>() * dt_s / 60.0;
    iae + undershoot_weight * us
}

/// Cohort objective for one set of gains: mean loss plus weighted worst loss.
pub fn pid_objective(
    pid: &PidConfig,
    cohort: &[SampledPatient],
    config: &SimConfig,
    tune: &TuneConfig,
) -> Result<f64> {
    let mut cfg = config.clone();
    cfg.pid = *pid;
    let target = cfg.scenario.bis_target;
    let band = TargetBand {
        low: target - 5.0,
        high: target + 5.0,
    };
    let losses: Vec<f64> = cohort
        .par_iter()
        .map(|p| {
            let trace = run_closed_loop(p, &cfg, ControllerKind::Pid, p.seed)?;
            let m = compute_metrics(&trace, band);
            let bis: Vec<f64> = trace.bis().collect();
            Ok(patient_loss(
                &bis,
                cfg.scenario.base_period_s,
                target,
                m.us,
                tune.undershoot_weight,
            ))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let worst = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(mean + tune.worst_weight * worst)
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (rng.random_range(lo.ln()..=hi.ln())).exp()
    } else {
        lo
    }
}

/// Keeps the best of `iterations` log-uniform draws from the gain boxes.
pub fn tune_pid(cohort: &[SampledPatient], config: &SimConfig, tune: &TuneConfig) -> Result<TuneResult> {
    if cohort.is_empty() {
        return Err(SimError::Config("tuning cohort is empty".into()));
    }
    for (name, (lo, hi)) in [
        ("kp_range", tune.kp_range),
        ("ti_range", tune.ti_range),
        ("td_range", tune.td_range),
    ] {
        if !(lo > 0.0 && hi >= lo) {
            return Err(SimError::ParameterDomain { name, value: lo });
        }
    }
    let initial_objective = pid_objective(&config.pid, cohort, config, tune)?;
    let mut best: Option<(PidConfig, f64)> = tune
        .include_initial
        .then_some((config.pid, initial_objective));
    let mut rng = ChaCha8Rng::seed_from_u64(tune.seed);
    let mut evaluated = 1;
    for _ in 0..tune.iterations {
        let candidate = PidConfig {
            kp: log_uniform(&mut rng, tune.kp_range),
            ti: log_uniform(&mut rng, tune.ti_range),
            td: log_uniform(&mut rng, tune.td_range),
            ..config.pid
        };
        let j = pid_objective(&candidate, cohort, config, tune)?;
        evaluated += 1;
        if best.is_none_or(|(_, b)| j < b) {
            best = Some((candidate, j));
        }
    }
    let (config, objective) = best.unwrap_or((config.pid, initial_objective));
    Ok(TuneResult {
        config,
        objective,
        initial_objective,
        evaluated,
    })
}
