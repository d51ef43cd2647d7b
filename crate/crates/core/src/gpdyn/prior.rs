//! Prior mean of the velocity-change GPs.
//!
//! The physics prior is the Euler step of the nominal forward dynamics,
//! T_s·M⁻¹(q)(B·u − n(q, q̇)), over the GP input x̃ = [q1, q2, q̇1, q̇2, u].
//! It is nearly exact at small T_s and degrades as T_s grows; the GP learns
//! the residual.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::plant::PlantParams;

/// Prior mean hook m_Δ of the per-joint GPs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PriorMean {
    /// m_Δ ≡ 0 for every output.
    Zero,
    /// Euler-step velocity change under the nominal two-link model.
    Physics { params: PlantParams, ts: f64 },
}

impl PriorMean {
    /// Prior mean for one output at a query input.
    pub fn value(&self, x: &[f64], output: usize) -> f64 {
        match self {
            PriorMean::Zero => 0.0,
            PriorMean::Physics { params, ts } => {
                let x5: &[f64; 5] = x.try_into().expect("physics prior expects x̃ = [q, q̇, u]");
                physics_delta(params, *ts, x5)[output]
            }
        }
    }

    /// Prior mean and its gradient w.r.t. x̃ for one output; the gradient is
    /// written into `grad` (same length as x).
    pub fn value_and_grad(&self, x: &[f64], output: usize, grad: &mut [f64]) -> f64 {
        match self {
            PriorMean::Zero => {
                grad.fill(0.0);
                0.0
            }
            PriorMean::Physics { params, ts } => {
                let x5: &[f64; 5] = x.try_into().expect("physics prior expects x̃ = [q, q̇, u]");
                let (value, jac) = physics_delta_jacobian(params, *ts, x5);
                grad.copy_from_slice(&jac[output]);
                value[output]
            }
        }
    }
}

/// Euler-step velocity change of the nominal model: T_s·M⁻¹(q)(B·u − n(q, q̇)).
///
/// The scalar command is expanded through the actuation matrix and left
/// unclipped: the prior is the smooth nominal model, and in-distribution
/// inputs are already within the torque limit.
pub fn prior_mean(params: &PlantParams, ts: f64, x: &[f64; 5]) -> [f64; 2] {
    physics_delta(params, ts, x)
}

fn physics_delta(params: &PlantParams, ts: f64, x: &[f64; 5]) -> [f64; 2] {
    let q = Vector2::new(x[0], x[1]);
    let qd = Vector2::new(x[2], x[3]);
    let tau = params.torque_vector(x[4]);
    let m = params.mass_matrix(&q);
    let rhs = tau - params.bias(&q, &qd);
    let sol = solve2(&m, &rhs);
    [ts * sol[0], ts * sol[1]]
}

#[inline]
fn solve2(m: &Matrix2<f64>, v: &Vector2<f64>) -> Vector2<f64> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Vector2::new(
        (m[(1, 1)] * v[0] - m[(0, 1)] * v[1]) / det,
        (-m[(1, 0)] * v[0] + m[(0, 0)] * v[1]) / det,
    )
}

/// Value and analytic Jacobian (2 × 5, rows per joint, columns
/// [q1, q2, q̇1, q̇2, u]) of the physics prior.
pub(crate) fn physics_delta_jacobian(
    params: &PlantParams,
    ts: f64,
    x: &[f64; 5],
) -> ([f64; 2], [[f64; 5]; 2]) {
    let p = params;
    let (q1, q2, v1, v2, u) = (x[0], x[1], x[2], x[3], x[4]);
    let q = Vector2::new(q1, q2);
    let qd = Vector2::new(v1, v2);
    let m = p.mass_matrix(&q);
    let tau = p.torque_vector(u);
    let v = tau - p.bias(&q, &qd);
    let sol = solve2(&m, &v);

    let s2 = q2.sin();
    let c2 = q2.cos();
    let hc = p.m2 * p.l1 * p.r2; // coupling coefficient
    let h = hc * s2;
    let g = p.gravity;
    let k1 = (p.m1 * p.r1 + p.m2 * p.l1) * g;
    let k2 = p.m2 * p.r2 * g;
    let c12 = (q1 + q2).cos();

    // ∂n/∂q1: mass matrix is independent of q1
    let dn_dq1 = Vector2::new(k1 * q1.cos() + k2 * c12, k2 * c12);
    // ∂n/∂q2 and ∂M/∂q2
    let dn_dq2 = Vector2::new(
        -hc * c2 * v2 * (2.0 * v1 + v2) + k2 * c12,
        hc * c2 * v1 * v1 + k2 * c12,
    );
    let dm_dq2 = Matrix2::new(-2.0 * hc * s2, -hc * s2, -hc * s2, 0.0);
    // ∂n/∂q̇
    let dn_dv1 = Vector2::new(-2.0 * h * v2 + p.b1, 2.0 * h * v1);
    let dn_dv2 = Vector2::new(-2.0 * h * (v1 + v2), p.b2);
    // ∂(B·u)/∂u
    let b = p.robot.actuation();
    let db_du = Vector2::new(b[0], b[1]);

    let col_q1 = solve2(&m, &(-dn_dq1));
    // ∂(M⁻¹v)/∂q2 = M⁻¹(∂v/∂q2 − ∂M/∂q2 · M⁻¹v)
    let col_q2 = solve2(&m, &(-dn_dq2 - dm_dq2 * sol));
    let col_v1 = solve2(&m, &(-dn_dv1));
    let col_v2 = solve2(&m, &(-dn_dv2));
    let col_u = solve2(&m, &db_du);

    let value = [ts * sol[0], ts * sol[1]];
    let mut jac = [[0.0; 5]; 2];
    for row in 0..2 {
        jac[row][0] = ts * col_q1[row];
        jac[row][1] = ts * col_q2[row];
        jac[row][2] = ts * col_v1[row];
        jac[row][3] = ts * col_v2[row];
        jac[row][4] = ts * col_u[row];
    }
    (value, jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{simulate_tick, PlantParams, Robot, State};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_at_equilibria_and_zero_ts() {
        let p = PlantParams::default();
        let up = [std::f64::consts::PI, 0.0, 0.0, 0.0, 0.0];
        let d = prior_mean(&p, 1.0 / 50.0, &up);
        assert!(d[0].abs() < 1e-12 && d[1].abs() < 1e-12);
        let x = [0.4, -0.7, 2.0, 1.0, 0.8];
        assert_eq!(prior_mean(&p, 0.0, &x), [0.0, 0.0]);
    }

    #[test]
    fn matches_one_plant_step_at_fine_rate() {
        // gentle states: the Euler-step prior tracks one 1/500 s plant step
        let p = PlantParams::default();
        let dt = 1.0 / 500.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let s = State::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let u = rng.random_range(-1.5..1.5);
            let next = simulate_tick(&p, dt, 1, &s, u).unwrap();
            let truth = [next.qd[0] - s.qd[0], next.qd[1] - s.qd[1]];
            let pred = prior_mean(&p, dt, &[s.q[0], s.q[1], s.qd[0], s.qd[1], u]);
            assert!(
                (pred[0] - truth[0]).abs() < 1e-4 && (pred[1] - truth[1]).abs() < 1e-4,
                "pred {pred:?} vs truth {truth:?}"
            );
        }
    }

    #[test]
    fn coarse_rate_error_grows_near_upright() {
        let p = PlantParams::default();
        let fine = 1.0 / 500.0;
        let coarse = 1.0 / 50.0;
        let s = State::new(std::f64::consts::PI - 0.3, 0.2, 1.0, -0.5);
        let x = [s.q[0], s.q[1], s.qd[0], s.qd[1], 0.5];
        let err = |ts: f64, steps: usize| {
            let next = simulate_tick(&p, ts / steps as f64, steps, &s, 0.5).unwrap();
            let truth = [next.qd[0] - s.qd[0], next.qd[1] - s.qd[1]];
            let pred = prior_mean(&p, ts, &x);
            ((pred[0] - truth[0]).powi(2) + (pred[1] - truth[1]).powi(2)).sqrt()
        };
        let e_fine = err(fine, 1);
        let e_coarse = err(coarse, 10);
        assert!(
            e_coarse > 10.0 * e_fine,
            "coarse {e_coarse} vs fine {e_fine}"
        );
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for robot in [Robot::Pendubot, Robot::Acrobot] {
            let mut p = PlantParams::default();
            p.robot = robot;
            p.b1 = 0.04;
            p.b2 = 0.02;
            let ts = 1.0 / 50.0;
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..15 {
                let x = [
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-2.0..2.0),
                ];
                let (_, jac) = physics_delta_jacobian(&p, ts, &x);
                let h = 1e-6;
                for col in 0..5 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[col] += h;
                    xm[col] -= h;
                    let fp = prior_mean(&p, ts, &xp);
                    let fm = prior_mean(&p, ts, &xm);
                    for row in 0..2 {
                        let fd = (fp[row] - fm[row]) / (2.0 * h);
                        assert_relative_eq!(
                            jac[row][col],
                            fd,
                            max_relative = 1e-6,
                            epsilon = 1e-9
                        );
                    }
                }
            }
        }
    }
}
