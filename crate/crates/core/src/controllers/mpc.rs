//! Nonlinear MPC by single shooting.
//!
//! The decision vector holds `n_u` input moves, normalized by the pump limits
//! to `[0, 1]`; moves beyond the control horizon repeat the last one. The
//! tracking term is `|y_ref - h(x)|^p` summed over the prediction horizon and
//! the input term is `uᵀ R u` over the free moves. Gradients come from an
//! adjoint recursion through the linear PK dynamics.

use std::time::Instant;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::optim::{minimize_box, BoxOptions};
use crate::pkpd::{
    bis_output, bis_slope, interaction_u, DiscreteModel, Infusion, PdParams, StateVec,
    SystemMatrix, PROPOFOL_EFFECT_SITE, PROPOFOL_MAX_RATE, REMIFENTANIL_EFFECT_SITE,
    REMIFENTANIL_MAX_RATE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Prediction horizon, controller steps.
    pub horizon: usize,
    /// Number of free input moves.
    pub control_horizon: usize,
    /// Input cost matrix, row major, applied to rates in mg/s and µg/s.
    pub r: [[f64; 2]; 2],
    pub period_s: f64,
    pub u_max: Infusion,
    /// Exponent of the tracking error.
    pub cost_exponent: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Reported against, never enforced: stopping on wall time would break
    /// run-to-run determinism.
    pub time_budget_s: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 30,
            control_horizon: 30,
            r: [[1e6, 0.0], [0.0, 1.25e5]],
            period_s: 2.0,
            u_max: Infusion::new(PROPOFOL_MAX_RATE, REMIFENTANIL_MAX_RATE),
            cost_exponent: 4.0,
            max_iter: 100,
            grad_tol: 1e-6,
            time_budget_s: 0.5,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.control_horizon < 1 || self.horizon < self.control_horizon {
            return Err(SimError::Config(format!(
                "need horizon ≥ control_horizon ≥ 1, got {} and {}",
                self.horizon, self.control_horizon
            )));
        }
        let r = self.r_matrix();
        if (r - r.transpose()).amax() > 0.0 || r.symmetric_eigenvalues().min() < -1e-12 {
            return Err(SimError::Config(
                "input cost matrix must be symmetric positive semi-definite".into(),
            ));
        }
        for (name, v) in [
            ("u_max.propofol", self.u_max.propofol),
            ("u_max.remifentanil", self.u_max.remifentanil),
            ("period_s", self.period_s),
            ("cost_exponent", self.cost_exponent),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::ParameterDomain { name, value: v });
            }
        }
        if self.cost_exponent < 1.0 {
            return Err(SimError::ParameterDomain {
                name: "cost_exponent",
                value: self.cost_exponent,
            });
        }
        Ok(())
    }

    pub fn r_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.r[0][0], self.r[0][1], self.r[1][0], self.r[1][1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    pub initial_cost: f64,
    pub cost: f64,
    pub converged: bool,
    pub wall_ms: f64,
    pub over_budget: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// First move of the optimized sequence.
    pub decision: Infusion,
    /// The optimized free moves.
    pub moves: Vec<Infusion>,
    /// Predicted BIS at steps 1..=horizon.
    pub predicted_bis: Vec<f64>,
    pub stats: SolverStats,
}

/// Cost of an input sequence and its gradient with respect to the normalized moves.
struct ShootingProblem<'a> {
    model: &'a DiscreteModel,
    a_t: SystemMatrix,
    pd: &'a PdParams,
    x0: StateVec,
    y_ref: f64,
    cfg: &'a MpcConfig,
    r: Matrix2<f64>,
    states: Vec<StateVec>,
}

impl<'a> ShootingProblem<'a> {
    fn new(
        model: &'a DiscreteModel,
        pd: &'a PdParams,
        x0: StateVec,
        y_ref: f64,
        cfg: &'a MpcConfig,
    ) -> Self {
        ShootingProblem {
            a_t: model.a.transpose(),
            model,
            pd,
            x0,
            y_ref,
            cfg,
            r: cfg.r_matrix(),
            states: vec![StateVec::zeros(); cfg.horizon + 1],
        }
    }

    fn move_at(&self, z: &[f64], step: usize) -> Vector2<f64> {
        let j = step.min(self.cfg.control_horizon - 1);
        Vector2::new(
            z[2 * j] * self.cfg.u_max.propofol,
            z[2 * j + 1] * self.cfg.u_max.remifentanil,
        )
    }

    fn simulate(&mut self, z: &[f64]) {
        self.states[0] = self.x0;
        for i in 0..self.cfg.horizon {
            let u = self.move_at(z, i);
            self.states[i + 1] = self.model.a * self.states[i] + self.model.b * u;
        }
    }

    fn cost(&mut self, z: &[f64]) -> f64 {
        self.simulate(z);
        let p = self.cfg.cost_exponent;
        let tracking: f64 = self.states[1..]
            .iter()
            .map(|x| (self.y_ref - bis_output(x, self.pd)).abs().powf(p))
            .sum();
        tracking + self.input_cost(z)
    }

    fn input_cost(&self, z: &[f64]) -> f64 {
        (0..self.cfg.control_horizon)
            .map(|j| {
                let u = self.move_at(z, j);
                (u.transpose() * self.r * u)[(0, 0)]
            })
            .sum()
    }

    fn cost_grad(&mut self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.simulate(z);
        let p = self.cfg.cost_exponent;
        let th = &self.pd.theta;
        let n_u = self.cfg.control_horizon;
        grad.iter_mut().for_each(|g| *g = 0.0);

        let mut tracking = 0.0;
        let mut costate = StateVec::zeros();
        for i in (1..=self.cfg.horizon).rev() {
            let x = &self.states[i];
            let u_int = interaction_u(x[PROPOFOL_EFFECT_SITE], x[REMIFENTANIL_EFFECT_SITE], th);
            let err = self.y_ref - bis_output(x, self.pd);
            let mag = err.abs();
            tracking += mag.powf(p);
            // d|e|^p/dh = -p |e|^(p-1) sign(e)
            let d_dh = if mag > 0.0 {
                -p * mag.powf(p - 1.0) * err.signum()
            } else {
                0.0
            };
            let slope = bis_slope(u_int, self.pd);
            costate = self.a_t * costate;
            costate[PROPOFOL_EFFECT_SITE] += d_dh * slope / th.c50p;
            costate[REMIFENTANIL_EFFECT_SITE] += d_dh * slope / th.c50r;
            let gu = self.model.b.transpose() * costate;
            let j = (i - 1).min(n_u - 1);
            grad[2 * j] += gu[0] * self.cfg.u_max.propofol;
            grad[2 * j + 1] += gu[1] * self.cfg.u_max.remifentanil;
        }
        let r_sym = self.r + self.r.transpose();
        for j in 0..n_u {
            let u = self.move_at(z, j);
            let gu = r_sym * u;
            grad[2 * j] += gu[0] * self.cfg.u_max.propofol;
            grad[2 * j + 1] += gu[1] * self.cfg.u_max.remifentanil;
        }
        tracking + self.input_cost(z)
    }
}

const START_LEVELS: [f64; 4] = [0.0, 0.02, 0.1, 0.4];

/// Solves one MPC problem from `x0`.
///
/// The optimizer starts from the cheapest of `warm_start`, the zero sequence
/// and a few constant sequences, so the returned cost never exceeds any of them.
pub fn mpc_solve(
    x0: &StateVec,
    pd: &PdParams,
    y_ref: f64,
    config: &MpcConfig,
    model: &DiscreteModel,
    warm_start: Option<&[Infusion]>,
) -> MpcSolution {
    let started = Instant::now();
    let n_u = config.control_horizon;
    let mut problem = ShootingProblem::new(model, pd, *x0, y_ref, config);

    // With no drug on board the BIS slope vanishes, so zero is a stationary
    // point; a few constant sequences give the solver somewhere to go.
    let mut candidates: Vec<Vec<f64>> = START_LEVELS.iter().map(|&l| vec![l; 2 * n_u]).collect();
    if let Some(warm) = warm_start {
        let mut z = vec![0.0; 2 * n_u];
        for j in 0..n_u {
            let u = warm.get(j).or(warm.last()).copied().unwrap_or(Infusion::ZERO);
            z[2 * j] = (u.propofol / config.u_max.propofol).clamp(0.0, 1.0);
            z[2 * j + 1] = (u.remifentanil / config.u_max.remifentanil).clamp(0.0, 1.0);
        }
        candidates.push(z);
    }
    let mut start = candidates[0].clone();
    let mut best = f64::INFINITY;
    for z in candidates {
        let c = problem.cost(&z);
        if c < best {
            best = c;
            start = z;
        }
    }

    let lo = vec![0.0; 2 * n_u];
    let hi = vec![1.0; 2 * n_u];
    let opts = BoxOptions {
        max_iter: config.max_iter,
        grad_tol: config.grad_tol,
        ..BoxOptions::default()
    };
    let result = minimize_box(|z, g| problem.cost_grad(z, g), &start, &lo, &hi, &opts);

    let moves: Vec<Infusion> = (0..n_u)
        .map(|j| {
            Infusion::new(
                result.x[2 * j] * config.u_max.propofol,
                result.x[2 * j + 1] * config.u_max.remifentanil,
            )
        })
        .collect();
    problem.simulate(&result.x);
    let predicted_bis = problem.states[1..]
        .iter()
        .map(|x| bis_output(x, pd))
        .collect();
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    MpcSolution {
        decision: moves[0],
        moves,
        predicted_bis,
        stats: SolverStats {
            iterations: result.iterations,
            evaluations: result.evaluations,
            grad_norm: result.pg_norm,
            initial_cost: result.f_initial,
            cost: result.f,
            converged: result.converged,
            wall_ms,
            over_budget: wall_ms > config.time_budget_s * 1e3,
        },
    }
}

/// Cost of a given move sequence, as seen by the solver.
pub fn sequence_cost(
    x0: &StateVec,
    pd: &PdParams,
    y_ref: f64,
    config: &MpcConfig,
    model: &DiscreteModel,
    moves: &[Infusion],
) -> f64 {
    let mut problem = ShootingProblem::new(model, pd, *x0, y_ref, config);
    let mut z = vec![0.0; 2 * config.control_horizon];
    for j in 0..config.control_horizon {
        let u = moves.get(j).or(moves.last()).copied().unwrap_or(Infusion::ZERO);
        z[2 * j] = u.propofol / config.u_max.propofol;
        z[2 * j + 1] = u.remifentanil / config.u_max.remifentanil;
    }
    problem.cost(&z)
}

/// Receding-horizon wrapper that keeps the shifted previous solution as warm start.
#[derive(Debug, Clone)]
pub struct Mpc {
    pub config: MpcConfig,
    model: DiscreteModel,
    warm: Option<Vec<Infusion>>,
}

impl Mpc {
    pub fn new(config: MpcConfig, model: DiscreteModel) -> Result<Self> {
        config.validate()?;
        Ok(Mpc {
            config,
            model,
            warm: None,
        })
    }

    pub fn model(&self) -> &DiscreteModel {
        &self.model
    }

    pub fn solve(&mut self, x0: &StateVec, pd: &PdParams, y_ref: f64) -> MpcSolution {
        let sol = mpc_solve(x0, pd, y_ref, &self.config, &self.model, self.warm.as_deref());
        let mut shifted: Vec<Infusion> = sol.moves.iter().skip(1).copied().collect();
        shifted.push(*sol.moves.last().expect("control horizon ≥ 1"));
        self.warm = Some(shifted);
        sol
    }
}
