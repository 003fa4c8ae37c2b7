//! Closed-loop control laws: PID baseline, single-model NMPC and multi-model MPC.

pub mod governor;
pub mod mpc;
pub mod pid;
pub mod tuning;

use serde::{Deserialize, Serialize};

pub use governor::ReferenceGovernor;
pub use mpc::{mpc_solve, sequence_cost, Mpc, MpcConfig, MpcSolution, SolverStats};
pub use pid::{Pid, PidConfig};
pub use tuning::{pid_objective, tune_pid, TuneConfig, TuneResult};

use crate::bank::{ModelBank, ModelGrid};
use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::estimation::EkfState;
use crate::pkpd::{Infusion, PdParams};

/// Infusion rates in mg/s (propofol) and µg/s (remifentanil).
pub type ControlDecision = Infusion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Pid,
    Nmpc,
    Mmpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Pid, ControllerKind::Nmpc, ControllerKind::Mmpc];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Pid => "pid",
            ControllerKind::Nmpc => "nmpc",
            ControllerKind::Mmpc => "mmpc",
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pid" => Ok(ControllerKind::Pid),
            "nmpc" => Ok(ControllerKind::Nmpc),
            "mmpc" => Ok(ControllerKind::Mmpc),
            other => Err(SimError::Config(format!("unknown controller `{other}`"))),
        }
    }
}

/// What a controller reports at each of its ticks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub infusion: Infusion,
    pub y_ref: f64,
    pub model_index: Option<usize>,
    pub stats: Option<SolverStats>,
}

pub trait Controller: Send {
    fn period_s(&self) -> f64;

    fn decide(&mut self, t_s: f64, measured_bis: f64) -> Result<Decision>;

    /// Informs the controller of the input actually held until its next tick.
    fn commit(&mut self, _applied: Infusion) {}
}

pub struct PidController {
    pid: Pid,
    setpoint: f64,
}

impl PidController {
    pub fn new(config: PidConfig, setpoint: f64) -> Result<Self> {
        Ok(PidController {
            pid: Pid::new(config)?,
            setpoint,
        })
    }
}

impl Controller for PidController {
    fn period_s(&self) -> f64 {
        self.pid.config.period_s
    }

    fn decide(&mut self, _t_s: f64, measured_bis: f64) -> Result<Decision> {
        Ok(Decision {
            infusion: self.pid.step(measured_bis, self.setpoint),
            y_ref: self.setpoint,
            model_index: None,
            stats: None,
        })
    }
}

/// EKF with a fixed θ feeding the MPC.
pub struct NmpcController {
    filter: EkfState,
    ekf: crate::estimation::EkfConfig,
    mpc: Mpc,
    governor: ReferenceGovernor,
    pending: Option<Infusion>,
}

impl NmpcController {
    pub fn new(config: &SimConfig) -> Result<Self> {
        let ekf = config.ekf.to_config()?;
        let pd = config.population.nominal_pd();
        let model = config.nominal_model(config.mpc.period_s)?;
        Ok(NmpcController {
            filter: EkfState::new(pd.theta, &ekf),
            ekf,
            mpc: Mpc::new(config.mpc.clone(), model)?,
            governor: config.governor(),
            pending: None,
        })
    }
}

impl Controller for NmpcController {
    fn period_s(&self) -> f64 {
        self.mpc.config.period_s
    }

    fn decide(&mut self, t_s: f64, measured_bis: f64) -> Result<Decision> {
        if let Some(u) = self.pending.take() {
            self.filter.predict(&u, self.mpc.model(), &self.ekf);
        }
        self.filter.correct(measured_bis, &self.ekf)?;
        let y_ref = self.governor.step(measured_bis, t_s);
        let sol = self.mpc.solve(&self.filter.x_hat, &self.filter.pd, y_ref);
        Ok(Decision {
            infusion: sol.decision,
            y_ref,
            model_index: Some(0),
            stats: Some(sol.stats),
        })
    }

    fn commit(&mut self, applied: Infusion) {
        self.pending = Some(applied);
    }
}

/// Filter bank with hysteresis selection feeding the MPC.
pub struct MmpcController {
    bank: ModelBank,
    mpc: Mpc,
    governor: ReferenceGovernor,
    e0: f64,
}

impl MmpcController {
    pub fn new(config: &SimConfig) -> Result<Self> {
        let ekf = config.ekf.to_config()?;
        let nominal = config.population.nominal_pd();
        let grid = ModelGrid::build(nominal.theta, &config.grid)?;
        let model = config.nominal_model(config.mpc.period_s)?;
        Ok(MmpcController {
            bank: ModelBank::new(grid, config.selector, ekf, model.clone())?,
            mpc: Mpc::new(config.mpc.clone(), model)?,
            governor: config.governor(),
            e0: nominal.e0,
        })
    }

    pub fn bank(&self) -> &ModelBank {
        &self.bank
    }
}

impl Controller for MmpcController {
    fn period_s(&self) -> f64 {
        self.mpc.config.period_s
    }

    fn decide(&mut self, t_s: f64, measured_bis: f64) -> Result<Decision> {
        let out = self.bank.step(measured_bis)?;
        let y_ref = self.governor.step(measured_bis, t_s);
        let pd = PdParams {
            theta: out.theta,
            e0: self.e0,
        };
        let sol = self.mpc.solve(&out.estimate, &pd, y_ref);
        Ok(Decision {
            infusion: sol.decision,
            y_ref,
            model_index: Some(out.selected),
            stats: Some(sol.stats),
        })
    }

    fn commit(&mut self, applied: Infusion) {
        self.bank.commit(applied);
    }
}

/// Always infuses nothing.
pub struct ZeroController {
    pub period_s: f64,
}

impl Controller for ZeroController {
    fn period_s(&self) -> f64 {
        self.period_s
    }

    fn decide(&mut self, _t_s: f64, _measured_bis: f64) -> Result<Decision> {
        Ok(Decision {
            infusion: Infusion::ZERO,
            y_ref: 0.0,
            model_index: None,
            stats: None,
        })
    }
}

pub fn make_controller(kind: ControllerKind, config: &SimConfig) -> Result<Box<dyn Controller>> {
    Ok(match kind {
        ControllerKind::Pid => Box::new(PidController::new(config.pid, config.scenario.bis_target)?),
        ControllerKind::Nmpc => Box::new(NmpcController::new(config)?),
        ControllerKind::Mmpc => Box::new(MmpcController::new(config)?),
    })
}
