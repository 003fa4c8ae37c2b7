//! Extended Kalman filter over the stacked PK state with a θ-parametrized
//! BIS output.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::pkpd::{
    bis_jacobian, bis_output, DiscreteModel, Infusion, PdParams, StateVec, SystemMatrix,
    ThetaVector, N_STATES,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EkfConfig {
    /// Process-noise covariance.
    pub r1: SystemMatrix,
    /// Measurement-noise variance.
    pub r2: f64,
    pub x0: StateVec,
    pub p0: SystemMatrix,
}

/// Diagonal form of [`EkfConfig`] as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfSettings {
    pub r1_diag: [f64; N_STATES],
    pub r2: f64,
    pub p0_diag: [f64; N_STATES],
}

impl Default for EkfSettings {
    fn default() -> Self {
        EkfSettings {
            r1_diag: [1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4],
            r2: 1.0,
            p0_diag: [1e-6; N_STATES],
        }
    }
}

impl EkfSettings {
    pub fn to_config(&self) -> Result<EkfConfig> {
        let cfg = EkfConfig {
            r1: SystemMatrix::from_diagonal(&StateVec::from(self.r1_diag)),
            r2: self.r2,
            x0: StateVec::zeros(),
            p0: SystemMatrix::from_diagonal(&StateVec::from(self.p0_diag)),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r2 > 0.0 && self.r2.is_finite()) {
            return Err(SimError::ParameterDomain {
                name: "r2",
                value: self.r2,
            });
        }
        if (self.r1 - self.r1.transpose()).amax() > 0.0 {
            return Err(SimError::Config("r1 must be symmetric".into()));
        }
        if self.r1.symmetric_eigenvalues().min() < -1e-12 {
            return Err(SimError::Config("r1 must be positive semi-definite".into()));
        }
        if (self.p0 - self.p0.transpose()).amax() > 0.0
            || self.p0.symmetric_eigenvalues().min() <= 0.0
        {
            return Err(SimError::Config("p0 must be symmetric positive definite".into()));
        }
        Ok(())
    }
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfSettings::default()
            .to_config()
            .expect("default EKF settings are valid")
    }
}

/// Estimate and covariance of one filter, bound to its own θ.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub x_hat: StateVec,
    pub p: SystemMatrix,
    pub pd: PdParams,
}

impl EkfState {
    pub fn new(theta: ThetaVector, config: &EkfConfig) -> Self {
        EkfState {
            x_hat: config.x0,
            p: config.p0,
            pd: PdParams::with_theta(theta),
        }
    }

    pub fn theta(&self) -> ThetaVector {
        self.pd.theta
    }

    /// Predicted BIS at the current estimate.
    pub fn predicted_output(&self) -> f64 {
        bis_output(&self.x_hat, &self.pd)
    }

    /// Measurement update followed by the non-negativity clamp.
    ///
    /// Returns the innovation `y - h(x̂)` evaluated at the prior.
    pub fn correct(&mut self, y: f64, config: &EkfConfig) -> Result<f64> {
        let h = bis_jacobian(&self.x_hat, &self.pd);
        let innovation = y - bis_output(&self.x_hat, &self.pd);
        let ph = self.p * h.transpose();
        let s = (h * ph)[(0, 0)] + config.r2;
        if !(s > 0.0) || !s.is_finite() {
            return Err(SimError::CovarianceDegeneracy(s));
        }
        let gain = ph / s;
        self.x_hat += gain * innovation;
        self.p -= gain * (h * self.p);
        symmetrize(&mut self.p);
        self.x_hat.apply(|v| *v = v.max(0.0));
        Ok(innovation)
    }

    /// Time update; P grows by R1.
    pub fn predict(&mut self, u: &Infusion, model: &DiscreteModel, config: &EkfConfig) {
        self.x_hat = model.advance(&self.x_hat, u);
        self.p = model.a * self.p * model.a.transpose() + config.r1;
        symmetrize(&mut self.p);
    }

    /// One full recursion: measurement update with `y`, then time update with `u`.
    pub fn update(
        &mut self,
        y: f64,
        u: &Infusion,
        model: &DiscreteModel,
        config: &EkfConfig,
    ) -> Result<f64> {
        let innovation = self.correct(y, config)?;
        self.predict(u, model, config);
        Ok(innovation)
    }
}

fn symmetrize(p: &mut SystemMatrix) {
    let t = p.transpose();
    *p = (*p + t) * 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pkpd::PatientModel;

    fn setup() -> (EkfConfig, DiscreteModel) {
        (EkfConfig::default(), DiscreteModel::nominal(2.0).unwrap())
    }

    #[test]
    fn predict_only_keeps_zero() {
        let (cfg, model) = setup();
        let mut s = EkfState::new(ThetaVector::NOMINAL, &cfg);
        s.predict(&Infusion::ZERO, &model, &cfg);
        assert_eq!(s.x_hat, StateVec::zeros());
    }

    #[test]
    fn predict_grows_covariance_trace() {
        let (cfg, model) = setup();
        let mut s = EkfState::new(ThetaVector::NOMINAL, &cfg);
        let mut last = s.p.trace();
        for _ in 0..10 {
            s.predict(&Infusion::new(1.0, 2.0), &model, &cfg);
            assert!(s.p.trace() > last);
            last = s.p.trace();
        }
    }

    #[test]
    fn two_predictions_compose() {
        let (cfg, model) = setup();
        let mut s = EkfState::new(ThetaVector::NOMINAL, &cfg);
        s.x_hat = StateVec::from([1.0, 0.5, 0.2, 0.3, 2.0, 1.0, 0.5, 0.4]);
        let x0 = s.x_hat;
        let u1 = Infusion::new(0.5, 1.0);
        let u2 = Infusion::new(1.5, 0.0);
        s.predict(&u1, &model, &cfg);
        s.predict(&u2, &model, &cfg);
        let a2 = model.a * model.a;
        let direct = a2 * x0 + model.a * model.b * u1.as_vector() + model.b * u2.as_vector();
        assert!((s.x_hat - direct).amax() < 1e-12);
    }

    #[test]
    fn huge_r2_means_pure_prediction() {
        let (mut cfg, model) = setup();
        cfg.r2 = 1e30;
        let mut s = EkfState::new(ThetaVector::NOMINAL, &cfg);
        s.x_hat = StateVec::from([2.0, 1.0, 0.5, 1.5, 3.0, 1.0, 0.2, 2.0]);
        let x_before = s.x_hat;
        s.update(20.0, &Infusion::ZERO, &model, &cfg).unwrap();
        let pure = model.advance(&x_before, &Infusion::ZERO);
        assert!((s.x_hat - pure).amax() < 1e-12);
    }

    #[test]
    fn negative_components_are_clamped() {
        let (mut cfg, _) = setup();
        cfg.r2 = 1e30;
        let mut s = EkfState::new(ThetaVector::NOMINAL, &cfg);
        s.x_hat[1] = -0.1;
        s.correct(97.4, &cfg).unwrap();
        assert_eq!(s.x_hat[1], 0.0);
    }

    #[test]
    fn degenerate_innovation_covariance_is_an_error() {
        let (cfg, _) = setup();
        let mut bad = cfg.clone();
        bad.r2 = -1.0;
        let mut s = EkfState::new(ThetaVector::NOMINAL, &cfg);
        assert!(matches!(
            s.correct(90.0, &bad),
            Err(SimError::CovarianceDegeneracy(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut settings = EkfSettings::default();
        settings.r2 = 0.0;
        assert!(settings.to_config().is_err());
        let mut settings = EkfSettings::default();
        settings.p0_diag[2] = 0.0;
        assert!(settings.to_config().is_err());
        let mut settings = EkfSettings::default();
        settings.r1_diag[0] = -1.0;
        assert!(settings.to_config().is_err());
    }

    #[test]
    fn matched_model_innovation_vanishes() {
        // Patient and filter share PK and θ; noiseless measurements.
        let (cfg, model) = setup();
        let mut patient = PatientModel::nominal(2.0).unwrap();
        let mut s = EkfState::new(ThetaVector::NOMINAL, &cfg);
        let mut last = f64::NAN;
        for k in 0..150 {
            let u = if k < 30 {
                Infusion::new(1.0, 2.0)
            } else {
                Infusion::new(0.1, 0.2)
            };
            let out = patient.step(u, 0.0).unwrap();
            last = s.update(out.bis_measured, &u, &model, &cfg).unwrap();
            assert!((s.p - s.p.transpose()).amax() < 1e-10);
        }
        assert!(last.abs() < 1e-6);
    }
}
