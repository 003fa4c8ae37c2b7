//! Dual-drug PID with a fixed remifentanil-to-propofol ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::pkpd::{Infusion, PROPOFOL_MAX_RATE, REMIFENTANIL_MAX_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidConfig {
    pub kp: f64,
    /// Integral time, s.
    pub ti: f64,
    /// Derivative time, s.
    pub td: f64,
    /// Derivative filter divisor.
    pub n: f64,
    /// `u_r [µg/s] = ratio · u_p [mg/s]`.
    pub ratio: f64,
    pub period_s: f64,
    pub u_max: Infusion,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig {
            kp: 0.0354,
            ti: 511.8,
            td: 8.989,
            n: 5.0,
            ratio: 2.0,
            period_s: 1.0,
            u_max: Infusion::new(PROPOFOL_MAX_RATE, REMIFENTANIL_MAX_RATE),
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kp", self.kp),
            ("ti", self.ti),
            ("n", self.n),
            ("ratio", self.ratio),
            ("period_s", self.period_s),
            ("u_max.propofol", self.u_max.propofol),
            ("u_max.remifentanil", self.u_max.remifentanil),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::ParameterDomain { name, value: v });
            }
        }
        if !(self.td >= 0.0 && self.td.is_finite()) {
            return Err(SimError::ParameterDomain {
                name: "td",
                value: self.td,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pid {
    pub config: PidConfig,
    integral: f64,
    derivative: f64,
    last_bis: Option<f64>,
}

impl Pid {
    pub fn new(config: PidConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pid {
            config,
            integral: 0.0,
            derivative: 0.0,
            last_bis: None,
        })
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// One sample. The error is `BIS - setpoint`, so a BIS above target
    /// raises the propofol rate; remifentanil follows at the fixed ratio.
    ///
    /// The integrator is frozen while the propofol command is saturated in
    /// the direction of the error (conditional integration).
    pub fn step(&mut self, bis: f64, setpoint: f64) -> Infusion {
        let c = &self.config;
        let error = bis - setpoint;
        let candidate = self.integral + c.period_s / c.ti * error;
        let filter = c.td / c.n;
        let change = bis - self.last_bis.unwrap_or(bis);
        self.derivative = (self.derivative * filter + c.td * change) / (c.period_s + filter);
        self.last_bis = Some(bis);

        let raw = c.kp * (error + candidate + self.derivative);
        let saturated_high = raw > c.u_max.propofol && error > 0.0;
        let saturated_low = raw < 0.0 && error < 0.0;
        if !(saturated_high || saturated_low) {
            self.integral = candidate;
        }
        Infusion::new(
            raw.clamp(0.0, c.u_max.propofol),
            (c.ratio * raw).clamp(0.0, c.u_max.remifentanil),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_error_gives_zero() {
        let mut pid = Pid::new(PidConfig::default()).unwrap();
        for _ in 0..100 {
            assert_eq!(pid.step(50.0, 50.0), Infusion::ZERO);
        }
    }

    #[test]
    fn ratio_law_when_unsaturated() {
        let mut pid = Pid::new(PidConfig::default()).unwrap();
        for k in 0..200 {
            let bis = 97.0 - 0.3 * k as f64;
            let u = pid.step(bis, 50.0);
            if u.propofol > 0.0 && u.propofol < 6.67 && u.remifentanil < 16.67 {
                assert!((u.remifentanil - 2.0 * u.propofol).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saturation_without_windup() {
        let cfg = PidConfig {
            kp: 5.0,
            ..PidConfig::default()
        };
        let mut pid = Pid::new(cfg).unwrap();
        for _ in 0..10_000 {
            let u = pid.step(97.4, 50.0);
            assert_eq!(u, Infusion::new(6.67, 16.67));
        }
        assert_eq!(pid.integral(), 0.0);
    }

    #[test]
    fn output_always_in_bounds() {
        let mut pid = Pid::new(PidConfig::default()).unwrap();
        for k in 0..1000 {
            let bis = 50.0 + 45.0 * ((k as f64) * 0.37).sin();
            assert!(pid.step(bis, 50.0).within_pump_limits());
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Pid::new(PidConfig {
            ratio: 0.0,
            ..PidConfig::default()
        })
        .is_err());
        assert!(Pid::new(PidConfig {
            td: -1.0,
            ..PidConfig::default()
        })
        .is_err());
    }
}
