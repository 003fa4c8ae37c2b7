use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{ticks_per, SimConfig};
use crate::controllers::{make_controller, Controller, ControllerKind};
use crate::error::Result;
use crate::pkpd::Infusion;
use crate::population::{derive_seed, SampledPatient};

const NOISE_STREAM: u64 = 0x004E_4F49_5345;

/// One base-rate sample of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_s: f64,
    pub state: [f64; 8],
    pub bis_true: f64,
    pub bis_measured: f64,
    pub y_ref: f64,
    pub u_p: f64,
    pub u_r: f64,
    pub model_index: Option<usize>,
    /// Solver wall time at controller ticks, 0 in between.
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Controller ticks where the decision failed and the last input was held.
    pub failures: usize,
    /// Ticks where the MPC hit its iteration cap without converging.
    pub unconverged: usize,
}

impl RunTrace {
    pub fn bis(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.bis_true)
    }

    /// Wall times of every solver call.
    pub fn solve_times_ms(&self) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.solve_ms > 0.0)
            .map(|(_, r)| r.solve_ms)
            .collect()
    }

    pub fn bound_violations(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| !Infusion::new(r.u_p, r.u_r).within_pump_limits())
            .count()
    }
}

/// Runs one patient under the controller named in `kind`.
pub fn run_closed_loop(
    patient: &SampledPatient,
    config: &SimConfig,
    kind: ControllerKind,
    seed: u64,
) -> Result<RunTrace> {
    let mut controller = make_controller(kind, config)?;
    run_with_controller(patient, config, controller.as_mut(), seed)
}

/// Runs one patient under an arbitrary controller.
///
/// The patient integrates at the base rate; the controller is queried every
/// `period_s` and its decision is held in between. Measurement noise is drawn
/// at every base step from a stream seeded by `seed`, so different
/// controllers see identical noise.
pub fn run_with_controller(
    patient: &SampledPatient,
    config: &SimConfig,
    controller: &mut dyn Controller,
    seed: u64,
) -> Result<RunTrace> {
    let scenario = &config.scenario;
    let base = scenario.base_period_s;
    let steps = ticks_per(scenario.duration_s, base)?;
    let stride = ticks_per(controller.period_s(), base)?;
    let mut model = patient.model(base)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM));
    let noise = Normal::new(0.0, scenario.noise_std.max(0.0)).expect("finite std");

    let mut trace = RunTrace {
        rows: Vec::with_capacity(steps),
        ..RunTrace::default()
    };
    let mut held = Infusion::ZERO;
    let mut y_ref = scenario.bis_target;
    let mut model_index = None;
    for k in 0..steps {
        let t_s = k as f64 * base;
        let w = if scenario.noise_std > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        let bis_true = model.bis();
        let bis_measured = bis_true + w;
        let mut solve_ms = 0.0;
        if k % stride == 0 {
            match controller.decide(t_s, bis_measured) {
                Ok(decision) => {
                    held = decision.infusion;
                    y_ref = decision.y_ref;
                    model_index = decision.model_index;
                    if let Some(stats) = decision.stats {
                        solve_ms = stats.wall_ms.max(f64::MIN_POSITIVE);
                        if !stats.converged {
                            trace.unconverged += 1;
                        }
                    }
                }
                Err(_) => trace.failures += 1,
            }
            controller.commit(held);
        }
        let state: [f64; 8] = model.state.into();
        trace.rows.push(TraceRow {
            t_s,
            state,
            bis_true,
            bis_measured,
            y_ref,
            u_p: held.propofol,
            u_r: held.remifentanil,
            model_index,
            solve_ms,
        });
        model.step(held, w)?;
    }
    Ok(trace)
}
