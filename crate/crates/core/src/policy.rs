//! Squashed RBF control policy.
//!
//! The policy is u_M·tanh(Σᵢ wᵢ/u_M · exp(−‖aᵢ − φ(x)‖²_Σ)) over the feature
//! map φ(x) = [q̇ᵀ, cos(qᵀ), sin(qᵀ)]ᵀ. The shape matrix Σ is stored through
//! an unconstrained square factor F with Σ = FᵀF, which keeps it positive
//! semi-definite under gradient steps. Output is bounded to (−u_M, u_M) and
//! periodic in the joint angles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::plant::State;

/// Dimension of the feature map [q̇₁, q̇₂, cos q₁, cos q₂, sin q₁, sin q₂].
pub const FEATURE_DIM: usize = 6;

/// Feature map φ(x).
pub fn features(s: &State) -> [f64; FEATURE_DIM] {
    [
        s.qd[0],
        s.qd[1],
        s.q[0].cos(),
        s.q[1].cos(),
        s.q[0].sin(),
        s.q[1].sin(),
    ]
}

/// Per-basis keep/drop indicators for parameter dropout.
///
/// A dropped basis contributes nothing to the pre-squash sum and receives no
/// gradient; kept weights are rescaled by 1/keep_prob so the expectation of
/// the pre-squash sum over masks equals the mask-free value. The mask applies
/// to policy parameters only, never to states.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
    pub keep_prob: f64,
}

impl DropoutMask {
    /// Samples a mask with drop probability `p_drop` per basis.
    pub fn sample<R: Rng>(rng: &mut R, n_basis: usize, p_drop: f64) -> Self {
        let keep_prob = 1.0 - p_drop;
        let keep = (0..n_basis).map(|_| rng.random::<f64>() < keep_prob).collect();
        Self { keep, keep_prob }
    }

    fn scale(&self, i: usize) -> f64 {
        if self.keep[i] {
            1.0 / self.keep_prob
        } else {
            0.0
        }
    }
}

/// Parameters θ = {w, A, Σ} of the squashed RBF policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Squash limit u_M (N·m).
    pub u_max: f64,
    /// Basis weights w (torque units), length n_basis.
    pub weights: Vec<f64>,
    /// Basis centers A, row-major n_basis × 6, each row in the image of φ.
    pub centers: Vec<f64>,
    /// Unconstrained factor F of the shape matrix, row-major 6 × 6.
    pub shape_factor: Vec<f64>,
}

impl PolicyParams {
    /// Seeded initialization: weights uniform in [−u_M, u_M]; center velocity
    /// coordinates uniform in [−2π, 2π] rad/s; center angle coordinates
    /// obtained by sampling angles uniformly in [−π, π) and mapping them
    /// through cos/sin, so every center lies in the image of φ; the shape
    /// factor starts at the identity.
    pub fn init(seed: u64, n_basis: usize, u_max: f64) -> Self {
        assert!(n_basis >= 1, "policy needs at least one basis function");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let two_pi = 2.0 * std::f64::consts::PI;
        let weights: Vec<f64> = (0..n_basis)
            .map(|_| rng.random_range(-u_max..=u_max))
            .collect();
        let mut centers = Vec::with_capacity(n_basis * FEATURE_DIM);
        for _ in 0..n_basis {
            let v1 = rng.random_range(-two_pi..=two_pi);
            let v2 = rng.random_range(-two_pi..=two_pi);
            let t1 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let t2 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            centers.extend_from_slice(&[v1, v2, t1.cos(), t2.cos(), t1.sin(), t2.sin()]);
        }
        let mut shape_factor = vec![0.0; FEATURE_DIM * FEATURE_DIM];
        for d in 0..FEATURE_DIM {
            shape_factor[d * FEATURE_DIM + d] = 1.0;
        }
        Self {
            u_max,
            weights,
            centers,
            shape_factor,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.weights.len()
    }

    /// Flat parameter count: weights, centers, shape factor.
    pub fn n_params(&self) -> usize {
        self.n_basis() * (1 + FEATURE_DIM) + FEATURE_DIM * FEATURE_DIM
    }

    /// Copies θ into a flat vector laid out [w | A | F].
    pub fn write_flat(&self, out: &mut [f64]) {
        let nb = self.n_basis();
        out[..nb].copy_from_slice(&self.weights);
        out[nb..nb + nb * FEATURE_DIM].copy_from_slice(&self.centers);
        out[nb + nb * FEATURE_DIM..].copy_from_slice(&self.shape_factor);
    }

    /// Overwrites θ from a flat vector laid out [w | A | F].
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let nb = self.n_basis();
        self.weights.copy_from_slice(&flat[..nb]);
        self.centers
            .copy_from_slice(&flat[nb..nb + nb * FEATURE_DIM]);
        self.shape_factor
            .copy_from_slice(&flat[nb + nb * FEATURE_DIM..]);
    }

    /// Scalar torque command in (−u_M, u_M).
    pub fn eval(&self, s: &State, mask: Option<&DropoutMask>) -> f64 {
        let mut scratch = vec![0.0; self.n_basis()];
        self.eval_cached(s, mask, &mut scratch).1
    }

    /// Pre-squash sum Σᵢ w̃ᵢ eᵢ / u_M (used by the dropout expectation check).
    pub fn presquash(&self, s: &State, mask: Option<&DropoutMask>) -> f64 {
        let mut scratch = vec![0.0; self.n_basis()];
        self.eval_cached(s, mask, &mut scratch).0
    }

    /// Evaluates the policy, storing each basis response eᵢ = exp(−dᵢ) in
    /// `e_out` for reuse by [`PolicyParams::backward`]. Returns (pre-squash
    /// sum, torque).
    pub(crate) fn eval_cached(
        &self,
        s: &State,
        mask: Option<&DropoutMask>,
        e_out: &mut [f64],
    ) -> (f64, f64) {
        let phi = features(s);
        let f = &self.shape_factor;
        let mut pre = 0.0;
        for i in 0..self.n_basis() {
            let a = &self.centers[i * FEATURE_DIM..(i + 1) * FEATURE_DIM];
            let mut r = [0.0; FEATURE_DIM];
            for d in 0..FEATURE_DIM {
                r[d] = a[d] - phi[d];
            }
            // dᵢ = ‖F r‖²
            let mut d2 = 0.0;
            for row in 0..FEATURE_DIM {
                let mut y = 0.0;
                for col in 0..FEATURE_DIM {
                    y += f[row * FEATURE_DIM + col] * r[col];
                }
                d2 += y * y;
            }
            let e = (-d2).exp();
            e_out[i] = e;
            let scale = mask.map_or(1.0, |m| m.scale(i));
            pre += scale * self.weights[i] * e / self.u_max;
        }
        (pre, self.u_max * pre.tanh())
    }

    /// Reverse-mode step through one policy evaluation: accumulates
    /// g_u·∂u/∂θ into `g_theta` (flat [w | A | F] layout) and g_u·∂u/∂x into
    /// `g_state` ([q1, q2, qd1, qd2]).
    pub(crate) fn backward(
        &self,
        s: &State,
        mask: Option<&DropoutMask>,
        e: &[f64],
        pre: f64,
        g_u: f64,
        g_theta: &mut [f64],
        g_state: &mut [f64; 4],
    ) {
        let phi = features(s);
        let f = &self.shape_factor;
        let nb = self.n_basis();
        let th = pre.tanh();
        let g_pre = g_u * self.u_max * (1.0 - th * th);
        let mut g_phi = [0.0; FEATURE_DIM];
        let (gw, rest) = g_theta.split_at_mut(nb);
        let (ga, gf) = rest.split_at_mut(nb * FEATURE_DIM);
        for i in 0..nb {
            let scale = mask.map_or(1.0, |m| m.scale(i));
            if scale == 0.0 {
                continue;
            }
            gw[i] += g_pre * scale * e[i] / self.u_max;
            // g_d = ∂(pre)/∂dᵢ-adjoint: the term w̃ᵢ·exp(−dᵢ) gives −w̃ᵢ eᵢ
            let g_d = -g_pre * scale * self.weights[i] * e[i] / self.u_max;
            let a = &self.centers[i * FEATURE_DIM..(i + 1) * FEATURE_DIM];
            let mut r = [0.0; FEATURE_DIM];
            for d in 0..FEATURE_DIM {
                r[d] = a[d] - phi[d];
            }
            let mut y = [0.0; FEATURE_DIM];
            for row in 0..FEATURE_DIM {
                for col in 0..FEATURE_DIM {
                    y[row] += f[row * FEATURE_DIM + col] * r[col];
                }
            }
            // ∂d/∂a = 2 Fᵀ y, ∂d/∂φ = −2 Fᵀ y, ∂d/∂F = 2 y rᵀ
            let mut fty = [0.0; FEATURE_DIM];
            for col in 0..FEATURE_DIM {
                for row in 0..FEATURE_DIM {
                    fty[col] += f[row * FEATURE_DIM + col] * y[row];
                }
            }
            for d in 0..FEATURE_DIM {
                let v = g_d * 2.0 * fty[d];
                ga[i * FEATURE_DIM + d] += v;
                g_phi[d] -= v;
            }
            for row in 0..FEATURE_DIM {
                let c = g_d * 2.0 * y[row];
                for col in 0..FEATURE_DIM {
                    gf[row * FEATURE_DIM + col] += c * r[col];
                }
            }
        }
        // chain through φ(x)
        g_state[0] += -g_phi[2] * s.q[0].sin() + g_phi[4] * s.q[0].cos();
        g_state[1] += -g_phi[3] * s.q[1].sin() + g_phi[5] * s.q[1].cos();
        g_state[2] += g_phi[0];
        g_state[3] += g_phi[1];
    }
}

/// Wraps a deterministic (mask-free) policy as an episode controller.
pub struct PolicyController<'a> {
    pub policy: &'a PolicyParams,
}

impl crate::plant::Controller for PolicyController<'_> {
    fn command(&mut self, state: &State) -> f64 {
        self.policy.eval(state, None)
    }
}
