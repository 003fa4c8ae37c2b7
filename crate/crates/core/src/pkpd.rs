//! Propofol/remifentanil pharmacokinetics and the combined BIS response surface.
//!
//! Units: volumes in L, clearances in L/min, rate constants in 1/min.
//! Infusions are given in mg/s (propofol) and µg/s (remifentanil), so the
//! concentrations come out in µg/ml and ng/ml respectively. Time is in
//! seconds everywhere outside [`build_continuous_matrices`].
//!
//! The stacked state is `(x_p1..x_p4, x_r1..x_r4)`: blood, muscle, fat and
//! effect-site concentration for each drug.

use nalgebra::{DMatrix, Matrix4, RowSVector, SMatrix, SVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Result, SimError};
use crate::expm::expm;

pub const N_STATES: usize = 8;

pub type StateVec = SVector<f64, N_STATES>;
pub type SystemMatrix = SMatrix<f64, N_STATES, N_STATES>;
pub type InputMatrix = SMatrix<f64, N_STATES, 2>;
pub type OutputRow = RowSVector<f64, N_STATES>;

/// Index of the propofol effect-site concentration in the stacked state.
pub const PROPOFOL_EFFECT_SITE: usize = 3;
/// Index of the remifentanil effect-site concentration in the stacked state.
pub const REMIFENTANIL_EFFECT_SITE: usize = 7;

/// Maximum propofol infusion rate, mg/s.
pub const PROPOFOL_MAX_RATE: f64 = 6.67;
/// Maximum remifentanil infusion rate, µg/s.
pub const REMIFENTANIL_MAX_RATE: f64 = 16.67;

/// Baseline (awake) BIS.
pub const NOMINAL_E0: f64 = 97.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkParams {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub cl1: f64,
    pub cl2: f64,
    pub cl3: f64,
    pub ke: f64,
}

/// Micro rate constants derived from volumes and clearances, 1/min.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PkRates {
    pub k10: f64,
    pub k12: f64,
    pub k13: f64,
    pub k21: f64,
    pub k31: f64,
    pub ke: f64,
}

impl PkParams {
    /// Propofol nominals for a 70 kg, 170 cm, 35 year old man.
    pub const PROPOFOL_NOMINAL: PkParams = PkParams {
        v1: 4.27,
        v2: 25.94,
        v3: 238.0,
        cl1: 1.64,
        cl2: 1.72,
        cl3: 0.84,
        ke: 0.456,
    };

    /// Remifentanil nominals for the same reference patient.
    pub const REMIFENTANIL_NOMINAL: PkParams = PkParams {
        v1: 5.22,
        v2: 10.26,
        v3: 5.42,
        cl1: 2.69,
        cl2: 2.20,
        cl3: 0.08,
        ke: 0.63,
    };

    pub fn validate(&self) -> Result<()> {
        ensure_positive("v1", self.v1)?;
        ensure_positive("v2", self.v2)?;
        ensure_positive("v3", self.v3)?;
        ensure_positive("cl1", self.cl1)?;
        ensure_positive("cl2", self.cl2)?;
        ensure_positive("cl3", self.cl3)?;
        ensure_positive("ke", self.ke)
    }

    pub fn rates(&self) -> PkRates {
        PkRates {
            k10: self.cl1 / self.v1,
            k12: self.cl2 / self.v1,
            k13: self.cl3 / self.v1,
            k21: self.cl2 / self.v2,
            k31: self.cl3 / self.v3,
            ke: self.ke,
        }
    }

    /// Drug mass in the physical compartments plus a small effect-site term.
    ///
    /// Non-increasing along every zero-input trajectory: its derivative is
    /// `-cl1·x1 + (cl1/2)(x1 - x4) ≤ 0` for non-negative states.
    pub fn mass_norm(&self, x: &Vector4<f64>) -> f64 {
        self.v1 * x[0] + self.v2 * x[1] + self.v3 * x[2] + 0.5 * self.cl1 / self.ke * x[3]
    }
}

/// Pharmacodynamic parameters that differ between candidate models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    /// Propofol half-effect concentration, µg/ml.
    pub c50p: f64,
    /// Remifentanil half-effect concentration, ng/ml.
    pub c50r: f64,
    /// Hill slope.
    pub gamma: f64,
}

impl ThetaVector {
    pub const NOMINAL: ThetaVector = ThetaVector {
        c50p: 4.47,
        c50r: 19.3,
        gamma: 1.43,
    };

    pub fn new(c50p: f64, c50r: f64, gamma: f64) -> Result<Self> {
        let theta = ThetaVector { c50p, c50r, gamma };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("c50p", self.c50p)?;
        ensure_positive("c50r", self.c50r)?;
        ensure_positive("gamma", self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdParams {
    pub theta: ThetaVector,
    pub e0: f64,
}

impl PdParams {
    pub const NOMINAL: PdParams = PdParams {
        theta: ThetaVector::NOMINAL,
        e0: NOMINAL_E0,
    };

    pub fn with_theta(theta: ThetaVector) -> Self {
        PdParams {
            theta,
            e0: NOMINAL_E0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        if self.e0 > 0.0 && self.e0 <= 100.0 {
            Ok(())
        } else {
            Err(SimError::ParameterDomain {
                name: "e0",
                value: self.e0,
            })
        }
    }
}

/// A pair of infusion rates: propofol in mg/s, remifentanil in µg/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Infusion {
    pub propofol: f64,
    pub remifentanil: f64,
}

impl Infusion {
    pub const ZERO: Infusion = Infusion {
        propofol: 0.0,
        remifentanil: 0.0,
    };

    pub fn new(propofol: f64, remifentanil: f64) -> Self {
        Infusion {
            propofol,
            remifentanil,
        }
    }

    /// Checks the pump limits `[0, 6.67] mg/s × [0, 16.67] µg/s`.
    pub fn validate(&self) -> Result<()> {
        check_rate("propofol", self.propofol, PROPOFOL_MAX_RATE)?;
        check_rate("remifentanil", self.remifentanil, REMIFENTANIL_MAX_RATE)
    }

    pub fn within_pump_limits(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn clamped(self, max: Infusion) -> Infusion {
        Infusion {
            propofol: self.propofol.clamp(0.0, max.propofol),
            remifentanil: self.remifentanil.clamp(0.0, max.remifentanil),
        }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.propofol, self.remifentanil)
    }
}

fn check_rate(channel: &'static str, value: f64, max: f64) -> Result<()> {
    if (0.0..=max).contains(&value) {
        Ok(())
    } else {
        Err(SimError::InputDomain {
            channel,
            value,
            max,
        })
    }
}

/// Continuous-time four-compartment matrices, per minute.
///
/// Zero clearances and `ke = 0` are accepted here (they give the degenerate
/// all-zero state matrix); volumes must be strictly positive.
pub fn build_continuous_matrices(pk: &PkParams) -> Result<(Matrix4<f64>, Vector4<f64>)> {
    ensure_positive("v1", pk.v1)?;
    ensure_positive("v2", pk.v2)?;
    ensure_positive("v3", pk.v3)?;
    for (name, value) in [
        ("cl1", pk.cl1),
        ("cl2", pk.cl2),
        ("cl3", pk.cl3),
        ("ke", pk.ke),
    ] {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(SimError::ParameterDomain { name, value });
        }
    }
    let k = pk.rates();
    #[rustfmt::skip]
    let a = Matrix4::new(
        -(k.k10 + k.k12 + k.k13), k.k12,  k.k13,  0.0,
        k.k21,                   -k.k21,  0.0,    0.0,
        k.k31,                    0.0,   -k.k31,  0.0,
        k.ke,                     0.0,    0.0,   -k.ke,
    );
    let b = Vector4::new(1.0 / pk.v1, 0.0, 0.0, 0.0);
    Ok((a, b))
}

/// Zero-order-hold discretization for a sampling period in seconds.
///
/// `a` is per minute and `b` maps a mass rate per minute; the returned input
/// matrix maps a rate per *second* held over the period.
pub fn discretize(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    period_s: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    ensure_positive("period_s", period_s)?;
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n {
        return Err(SimError::Config(format!(
            "shape mismatch: A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let tau = period_s / 60.0;
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * tau));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * (60.0 * tau)));
    let e = expm(&aug);
    let a_disc = e.view((0, 0), (n, n)).into_owned();
    let b_disc = e.view((0, n), (n, m)).into_owned();
    Ok((a_disc, b_disc))
}

/// Combined propofol/remifentanil interaction term.
pub fn interaction_u(x_p4: f64, x_r4: f64, theta: &ThetaVector) -> f64 {
    x_p4 / theta.c50p + x_r4 / theta.c50r
}

/// BIS as a function of the interaction term.
pub fn bis_from_interaction(u: f64, pd: &PdParams) -> f64 {
    let u = u.max(0.0);
    pd.e0 / (1.0 + u.powf(pd.theta.gamma))
}

/// Derivative of BIS with respect to the interaction term.
///
/// Returns 0 at exactly `u = 0`, where the slope is unbounded for `γ < 1`.
pub fn bis_slope(u: f64, pd: &PdParams) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let gamma = pd.theta.gamma;
    let ug = u.powf(gamma);
    -pd.e0 * gamma * ug / (u * (1.0 + ug) * (1.0 + ug))
}

pub fn bis_output(x: &StateVec, pd: &PdParams) -> f64 {
    bis_from_interaction(effect_interaction(x, &pd.theta), pd)
}

/// Gradient of [`bis_output`] with respect to the 8-state.
pub fn bis_jacobian(x: &StateVec, pd: &PdParams) -> OutputRow {
    let slope = bis_slope(effect_interaction(x, &pd.theta), pd);
    let mut row = OutputRow::zeros();
    row[PROPOFOL_EFFECT_SITE] = slope / pd.theta.c50p;
    row[REMIFENTANIL_EFFECT_SITE] = slope / pd.theta.c50r;
    row
}

fn effect_interaction(x: &StateVec, theta: &ThetaVector) -> f64 {
    interaction_u(x[PROPOFOL_EFFECT_SITE], x[REMIFENTANIL_EFFECT_SITE], theta)
}

/// Discrete-time stacked dynamics `x(k+1) = A x(k) + B u(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: SystemMatrix,
    pub b: InputMatrix,
    pub period_s: f64,
}

impl DiscreteModel {
    pub fn new(pk_p: &PkParams, pk_r: &PkParams, period_s: f64) -> Result<Self> {
        let mut a = SystemMatrix::zeros();
        let mut b = InputMatrix::zeros();
        for (offset, pk) in [(0usize, pk_p), (4usize, pk_r)] {
            let (ac, bc) = build_continuous_matrices(pk)?;
            let (ad, bd) = discretize(
                &DMatrix::from_column_slice(4, 4, ac.as_slice()),
                &DMatrix::from_column_slice(4, 1, bc.as_slice()),
                period_s,
            )?;
            a.fixed_view_mut::<4, 4>(offset, offset).copy_from(&ad);
            b.fixed_view_mut::<4, 1>(offset, offset / 4).copy_from(&bd);
        }
        Ok(DiscreteModel { a, b, period_s })
    }

    pub fn nominal(period_s: f64) -> Result<Self> {
        Self::new(
            &PkParams::PROPOFOL_NOMINAL,
            &PkParams::REMIFENTANIL_NOMINAL,
            period_s,
        )
    }

    #[inline]
    pub fn advance(&self, x: &StateVec, u: &Infusion) -> StateVec {
        self.a * x + self.b * u.as_vector()
    }
}

/// Output of one simulated patient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Noise-free BIS at the state before the transition.
    pub bis_true: f64,
    /// `bis_true` plus measurement noise.
    pub bis_measured: f64,
}

/// One virtual patient with its true parameters and state.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientModel {
    pub pk_p: PkParams,
    pub pk_r: PkParams,
    pub pd: PdParams,
    pub state: StateVec,
    pub dynamics: DiscreteModel,
}

impl PatientModel {
    pub fn new(pk_p: PkParams, pk_r: PkParams, pd: PdParams, period_s: f64) -> Result<Self> {
        pk_p.validate()?;
        pk_r.validate()?;
        pd.validate()?;
        Ok(PatientModel {
            dynamics: DiscreteModel::new(&pk_p, &pk_r, period_s)?,
            pk_p,
            pk_r,
            pd,
            state: StateVec::zeros(),
        })
    }

    pub fn nominal(period_s: f64) -> Result<Self> {
        Self::new(
            PkParams::PROPOFOL_NOMINAL,
            PkParams::REMIFENTANIL_NOMINAL,
            PdParams::NOMINAL,
            period_s,
        )
    }

    pub fn bis(&self) -> f64 {
        bis_output(&self.state, &self.pd)
    }

    /// Measures BIS at the current state, then applies the infusion for one period.
    pub fn step(&mut self, u: Infusion, noise: f64) -> Result<StepOutput> {
        u.validate()?;
        let bis_true = self.bis();
        self.state = self.dynamics.advance(&self.state, &u);
        Ok(StepOutput {
            bis_true,
            bis_measured: bis_true + noise,
        })
    }

    /// Combined mass norm of both drugs; see [`PkParams::mass_norm`].
    pub fn mass_norm(&self) -> f64 {
        let x = &self.state;
        self.pk_p.mass_norm(&x.fixed_rows::<4>(0).into_owned())
            + self.pk_r.mass_norm(&x.fixed_rows::<4>(4).into_owned())
    }
}
