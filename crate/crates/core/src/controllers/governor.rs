use serde::{Deserialize, Serialize};

/// Integrating reference governor for the MPC setpoint.
///
/// Until `activation_s` the internal reference equals the target; after that
/// it integrates the measured tracking error to remove steady-state offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceGovernor {
    pub y_ref: f64,
    pub k_i: f64,
    pub bis_target: f64,
    pub activation_s: f64,
}

/// Integrator gain shipped in the default configuration.
pub const DEFAULT_K_I: f64 = 0.06;

impl Default for ReferenceGovernor {
    fn default() -> Self {
        ReferenceGovernor::new(50.0, DEFAULT_K_I, 120.0)
    }
}

impl ReferenceGovernor {
    pub fn new(bis_target: f64, k_i: f64, activation_s: f64) -> Self {
        ReferenceGovernor {
            y_ref: bis_target,
            k_i,
            bis_target,
            activation_s,
        }
    }

    pub fn step(&mut self, measured_bis: f64, t_s: f64) -> f64 {
        if t_s < self.activation_s {
            self.y_ref = self.bis_target;
        } else {
            self.y_ref = (self.y_ref + self.k_i * (self.bis_target - measured_bis)).clamp(0.0, 100.0);
        }
        self.y_ref
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_at_target() {
        let mut g = ReferenceGovernor::new(50.0, 0.1, 120.0);
        g.y_ref = 47.0;
        assert_eq!(g.step(50.0, 200.0), 47.0);
    }

    #[test]
    fn integrates_error() {
        let mut g = ReferenceGovernor::new(50.0, 0.1, 120.0);
        assert_eq!(g.step(60.0, 130.0), 49.0);
    }

    #[test]
    fn inactive_before_two_minutes() {
        let mut g = ReferenceGovernor::new(50.0, 0.1, 120.0);
        for t in 0..120 {
            assert_eq!(g.step(90.0, t as f64), 50.0);
        }
    }

    #[test]
    fn clamped_to_bis_range() {
        let mut g = ReferenceGovernor::new(50.0, 10.0, 0.0);
        for _ in 0..100 {
            assert!((0.0..=100.0).contains(&g.step(0.0, 1.0)));
        }
        assert_eq!(g.y_ref, 100.0);
        for _ in 0..100 {
            g.step(100.0, 1.0);
        }
        assert_eq!(g.y_ref, 0.0);
    }
}
