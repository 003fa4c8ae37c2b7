//! The full simulation stack configuration, loadable from TOML.
//!
//! Every section is optional; missing keys fall back to the shipped defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::{GridSpec, SelectorConfig};
use crate::controllers::{ControllerKind, MpcConfig, PidConfig, ReferenceGovernor, TuneConfig};
use crate::error::{Result, SimError};
use crate::estimation::EkfSettings;
use crate::pkpd::DiscreteModel;
use crate::population::UncertaintySpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    /// Patient integration step.
    pub base_period_s: f64,
    /// Standard deviation of additive Gaussian BIS noise; 0 disables noise.
    pub noise_std: f64,
    pub bis_target: f64,
    pub controller: ControllerKind,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            duration_s: 600.0,
            base_period_s: 1.0,
            noise_std: 0.0,
            bis_target: 50.0,
            controller: ControllerKind::Mmpc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GovernorConfig {
    pub k_i: f64,
    pub activation_s: f64,
}

impl Default for GovernorConfig {
    fn default() -> Self {
        GovernorConfig {
            k_i: crate::controllers::governor::DEFAULT_K_I,
            activation_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub population: UncertaintySpec,
    pub ekf: EkfSettings,
    pub grid: GridSpec,
    pub selector: SelectorConfig,
    pub mpc: MpcConfig,
    pub governor: GovernorConfig,
    pub pid: PidConfig,
    pub tuning: TuneConfig,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        self.ekf.to_config()?;
        self.selector.validate()?;
        self.mpc.validate()?;
        self.pid.validate()?;
        let s = &self.scenario;
        if !(s.duration_s > 0.0 && s.base_period_s > 0.0) {
            return Err(SimError::Config("duration and base period must be positive".into()));
        }
        if !(s.noise_std >= 0.0) {
            return Err(SimError::ParameterDomain {
                name: "noise_std",
                value: s.noise_std,
            });
        }
        if !(s.bis_target > 0.0 && s.bis_target <= 100.0) {
            return Err(SimError::ParameterDomain {
                name: "bis_target",
                value: s.bis_target,
            });
        }
        for period in [self.pid.period_s, self.mpc.period_s] {
            ticks_per(period, s.base_period_s)?;
            ticks_per(s.duration_s, period)?;
        }
        Ok(())
    }

    pub fn controller_period(&self, kind: ControllerKind) -> f64 {
        match kind {
            ControllerKind::Pid => self.pid.period_s,
            ControllerKind::Nmpc | ControllerKind::Mmpc => self.mpc.period_s,
        }
    }

    /// Nominal-PK dynamics shared by the estimators and the MPC.
    pub fn nominal_model(&self, period_s: f64) -> Result<DiscreteModel> {
        DiscreteModel::new(
            &self.population.propofol.nominal(),
            &self.population.remifentanil.nominal(),
            period_s,
        )
    }

    pub fn governor(&self) -> ReferenceGovernor {
        ReferenceGovernor::new(
            self.scenario.bis_target,
            self.governor.k_i,
            self.governor.activation_s,
        )
    }
}

/// Number of `step`s in `span`; errors unless it is a positive integer.
pub(crate) fn ticks_per(span: f64, step: f64) -> Result<usize> {
    let ratio = span / step;
    let rounded = ratio.round();
    if rounded >= 1.0 && (ratio - rounded).abs() < 1e-9 {
        Ok(rounded as usize)
    } else {
        Err(SimError::Config(format!(
            "{span} s is not an integer multiple of {step} s"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = SimConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = SimConfig::from_toml_str("[selector]\ndelta = 10.0\n").unwrap();
        assert_eq!(cfg.selector.delta, 10.0);
        assert_eq!(cfg.selector.n_c, 30);
        assert_eq!(cfg.mpc, MpcConfig::default());
    }

    #[test]
    fn rejects_inconsistent_periods() {
        let err = SimConfig::from_toml_str("[mpc]\nperiod_s = 1.5\n");
        assert!(err.is_err());
        let err = SimConfig::from_toml_str("[scenario]\nduration_s = 601.0\n");
        assert!(err.is_err());
    }

    #[test]
    fn rejects_unparseable_text() {
        assert!(matches!(
            SimConfig::from_toml_str("[mpc\n"),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn tick_counting() {
        assert_eq!(ticks_per(600.0, 2.0).unwrap(), 300);
        assert!(ticks_per(1.0, 2.0).is_err());
    }
}
