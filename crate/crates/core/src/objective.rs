//! Task encoding: saturated distance from the upright goal.
//!
//! The step cost is 1 − exp(−‖q − q_G‖²_Σc) with Σc = diag(1/ℓ, 1/ℓ). It
//! depends only on the joint angles, never on the velocities, and the
//! distance is taken on unwrapped angles relative to the swing-up convention
//! (goal at +π), so a trajectory that wraps the long way around is not
//! rewarded.

use serde::{Deserialize, Serialize};

use crate::plant::State;

/// Cost configuration; also carries the optimization horizon used by the
/// policy update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    /// Goal angles (rad).
    pub goal: [f64; 2],
    /// Saturation length scale ℓ (rad²).
    pub ell: f64,
    /// Optimization horizon (s); a positive integer multiple of the control
    /// period.
    pub horizon: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            goal: [std::f64::consts::PI, 0.0],
            ell: 3.0,
            horizon: 3.0,
        }
    }
}

impl CostConfig {
    pub fn validate(&self, control_dt: f64) -> crate::Result<()> {
        if !(self.ell.is_finite() && self.ell > 0.0) {
            return Err(crate::Error::InvalidConfig(format!(
                "cost length scale must be positive, got {}",
                self.ell
            )));
        }
        let ratio = self.horizon / control_dt;
        if !(ratio.is_finite() && ratio >= 1.0 - 1e-9) || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(crate::Error::InvalidConfig(format!(
                "optimization horizon {} is not a positive integer multiple of the control period {}",
                self.horizon, control_dt
            )));
        }
        Ok(())
    }

    /// Horizon length in control steps.
    pub fn horizon_steps(&self, control_dt: f64) -> usize {
        (self.horizon / control_dt).round() as usize
    }
}

/// Saturated distance cost for one state, in [0, 1).
pub fn step_cost(cfg: &CostConfig, s: &State) -> f64 {
    step_cost_q(cfg, s.q[0], s.q[1])
}

/// Same cost from raw angles; used by the particle rollout.
pub fn step_cost_q(cfg: &CostConfig, q1: f64, q2: f64) -> f64 {
    let d1 = q1 - cfg.goal[0];
    let d2 = q2 - cfg.goal[1];
    1.0 - (-(d1 * d1 + d2 * d2) / cfg.ell).exp()
}

/// Gradient of the step cost w.r.t. the joint angles. The velocity gradient
/// is identically zero.
pub fn step_cost_grad_q(cfg: &CostConfig, q1: f64, q2: f64) -> [f64; 2] {
    let d1 = q1 - cfg.goal[0];
    let d2 = q2 - cfg.goal[1];
    let e = (-(d1 * d1 + d2 * d2) / cfg.ell).exp();
    [2.0 * d1 * e / cfg.ell, 2.0 * d2 * e / cfg.ell]
}

/// Sum of step costs over a trajectory sampled at the control period.
pub fn cumulative_cost(cfg: &CostConfig, trajectory: &[State]) -> f64 {
    trajectory.iter().map(|s| step_cost(cfg, s)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_exactly_at_goal() {
        let cfg = CostConfig::default();
        assert_eq!(step_cost(&cfg, &State::new(PI, 0.0, 3.0, -1.0)), 0.0);
    }

    #[test]
    fn hanging_cost_matches_closed_form() {
        // 1 − exp(−π²/3) at the hanging configuration with ℓ = 3.
        let cfg = CostConfig::default();
        let expected = 1.0 - (-(PI * PI) / 3.0).exp();
        assert_relative_eq!(
            step_cost(&cfg, &State::hanging()),
            expected,
            max_relative = 1e-15
        );
        assert_relative_eq!(expected, 0.9628, max_relative = 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = CostConfig::default();
        let h = 1e-6;
        for (q1, q2) in [(0.3, -0.8), (2.9, 0.1), (PI, 0.0), (-1.0, 2.0)] {
            let g = step_cost_grad_q(&cfg, q1, q2);
            let fd1 = (step_cost_q(&cfg, q1 + h, q2) - step_cost_q(&cfg, q1 - h, q2)) / (2.0 * h);
            let fd2 = (step_cost_q(&cfg, q1, q2 + h) - step_cost_q(&cfg, q1, q2 - h)) / (2.0 * h);
            assert_relative_eq!(g[0], fd1, max_relative = 1e-6, epsilon = 1e-9);
            assert_relative_eq!(g[1], fd2, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn cumulative_cost_is_bounded_by_step_count() {
        let cfg = CostConfig::default();
        // hanging is far from the goal but not so far that the exponential
        // underflows to exactly 1 per step
        let far = vec![State::hanging(); 151];
        let c = cumulative_cost(&cfg, &far);
        assert!(c < 151.0);
        assert!((c - 151.0 * step_cost(&cfg, &State::hanging())).abs() < 1e-9);
        let at_goal = vec![State::upright(); 151];
        assert_eq!(cumulative_cost(&cfg, &at_goal), 0.0);
    }

    proptest! {
        #[test]
        fn cost_in_unit_range_and_velocity_independent(
            q1 in -10.0f64..10.0,
            q2 in -10.0f64..10.0,
            qd1 in -50.0f64..50.0,
            qd2 in -50.0f64..50.0,
        ) {
            let cfg = CostConfig::default();
            let c = step_cost(&cfg, &State::new(q1, q2, 0.0, 0.0));
            prop_assert!((0.0..=1.0).contains(&c));
            // strictly below 1 wherever the exponential has not underflowed
            let d2 = (q1 - cfg.goal[0]).powi(2) + (q2 - cfg.goal[1]).powi(2);
            if d2 / cfg.ell < 35.0 {
                prop_assert!(c < 1.0);
            }
            let c2 = step_cost(&cfg, &State::new(q1, q2, qd1, qd2));
            prop_assert_eq!(c, c2);
        }

        #[test]
        fn cost_monotone_along_rays(
            dir1 in -1.0f64..1.0,
            dir2 in -1.0f64..1.0,
            a in 0.0f64..3.0,
            b in 0.0f64..3.0,
        ) {
            prop_assume!(dir1.abs() + dir2.abs() > 1e-3);
            let cfg = CostConfig::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let c_lo = step_cost_q(&cfg, cfg.goal[0] + lo * dir1, cfg.goal[1] + lo * dir2);
            let c_hi = step_cost_q(&cfg, cfg.goal[0] + hi * dir1, cfg.goal[1] + hi * dir2);
            prop_assert!(c_hi >= c_lo);
        }
    }
}
