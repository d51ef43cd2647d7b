//! Gaussian-process model of the per-step velocity change.
//!
//! Each joint's velocity change Δ over one control period is modeled as an
//! independent GP over the input x̃ = [q, q̇, u] with a squared-exponential
//! kernel and, for the pendulum robots, a physics prior mean (the Euler step
//! of the nominal forward dynamics). Positions integrate Δ assuming constant
//! acceleration over the step, so the one-step-ahead state prediction stays
//! Gaussian with a diagonal covariance.

mod fit;
mod prior;
mod sor;

pub use fit::{fit_hyperparams, heuristic_kernel_init, HyperFitConfig};
pub use prior::{prior_mean, PriorMean};
pub use sor::{farthest_point_subset, SorJoint};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::plant::{EpisodeLog, Robot, State};
use crate::{Error, Result};

/// Input/target pairs for the velocity-change GPs.
///
/// Inputs are row-major `n × dim`; targets hold one vector per modeled output
/// (one per joint for the pendulum robots), each of length `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(dim: usize, n_outputs: usize) -> Self {
        Self {
            dim,
            inputs: Vec::new(),
            targets: vec![Vec::new(); n_outputs],
        }
    }

    /// Extracts training pairs from an episode log at the control rate:
    /// inputs [q, q̇, u] at each tick, targets q̇_{t+1} − q̇_t per joint.
    pub fn from_log(log: &EpisodeLog, robot: Robot) -> Self {
        let mut data = Self::new(5, 2);
        data.append_log(log, robot);
        data
    }

    /// Appends pairs from another episode.
    pub fn append_log(&mut self, log: &EpisodeLog, robot: Robot) {
        assert_eq!(self.dim, 5);
        let states = log.tick_states();
        let commands = log.tick_commands(robot);
        let pairs = commands.len().min(states.len().saturating_sub(1));
        for k in 0..pairs {
            let s = states[k];
            let next = states[k + 1];
            self.push(
                &[s.q[0], s.q[1], s.qd[0], s.qd[1], commands[k]],
                &[next.qd[0] - s.qd[0], next.qd[1] - s.qd[1]],
            );
        }
    }

    pub fn push(&mut self, input: &[f64], targets: &[f64]) {
        assert_eq!(input.len(), self.dim);
        assert_eq!(targets.len(), self.targets.len());
        self.inputs.extend_from_slice(input);
        for (store, &y) in self.targets.iter_mut().zip(targets) {
            store.push(y);
        }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.inputs.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_outputs(&self) -> usize {
        self.targets.len()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn inputs_flat(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self, output: usize) -> &[f64] {
        &self.targets[output]
    }
}

/// Squared-exponential kernel hyperparameters for one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeKernelParams {
    /// Signal scale λ (target units); the prior variance is λ².
    pub signal: f64,
    /// Diagonal of the length-scale matrix Λ (input units squared).
    pub length_scales: Vec<f64>,
    /// Observation noise variance σ².
    pub noise_var: f64,
}

impl SeKernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.signal.is_finite() && self.signal > 0.0) {
            return Err(Error::InvalidParams(format!(
                "kernel signal scale must be positive, got {}",
                self.signal
            )));
        }
        if self.length_scales.is_empty()
            || self
                .length_scales
                .iter()
                .any(|l| !(l.is_finite() && *l > 0.0))
        {
            return Err(Error::InvalidParams(
                "kernel length scales must all be positive".into(),
            ));
        }
        if !(self.noise_var.is_finite() && self.noise_var > 0.0) {
            return Err(Error::InvalidParams(format!(
                "noise variance must be positive, got {}",
                self.noise_var
            )));
        }
        Ok(())
    }
}

/// Squared-exponential covariance λ²·exp(−‖a−b‖²_{Λ⁻¹}).
pub fn se_kernel(a: &[f64], b: &[f64], p: &SeKernelParams) -> Result<f64> {
    p.validate()?;
    if a.len() != b.len() || a.len() != p.length_scales.len() {
        return Err(Error::InvalidParams(format!(
            "kernel input dimensions disagree: {} vs {} vs {} length scales",
            a.len(),
            b.len(),
            p.length_scales.len()
        )));
    }
    Ok(se_kernel_unchecked(a, b, p))
}

#[inline]
pub(crate) fn se_kernel_unchecked(a: &[f64], b: &[f64], p: &SeKernelParams) -> f64 {
    let mut d2 = 0.0;
    for d in 0..a.len() {
        let diff = a[d] - b[d];
        d2 += diff * diff / p.length_scales[d];
    }
    p.signal * p.signal * (-d2).exp()
}

/// Relative jitter added to the Gram diagonal when the plain factorization
/// fails (scaled by λ²).
pub const JITTER_REL: f64 = 1e-8;

/// One output's fitted GP: kernel, cached factorization of Γ = K + σ²I, the
/// weight vector α = Γ⁻¹(y − m(X)), and an optional inducing-point
/// approximation.
#[derive(Debug, Clone)]
pub struct JointGp {
    pub kernel: SeKernelParams,
    pub alpha: DVector<f64>,
    pub jitter: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    gamma_inv: Option<DMatrix<f64>>,
    pub sor: Option<SorJoint>,
}

/// Controls for [`GpModel::fit`].
#[derive(Debug, Clone)]
pub struct GpFitConfig {
    /// Optimize hyperparameters by marginal-likelihood ascent before
    /// factorizing; when false the provided kernels are used as-is.
    pub optimize_hyperparams: bool,
    pub hyper: HyperFitConfig,
    /// Inducing-set size cap for the subset-of-regressors approximation;
    /// 0 disables SoR.
    pub max_inducing: usize,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            optimize_hyperparams: true,
            hyper: HyperFitConfig::default(),
            max_inducing: 400,
        }
    }
}

/// Per-joint GPs of the velocity change with a shared dataset and prior mean.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub dataset: Dataset,
    pub prior: PriorMean,
    pub joints: Vec<JointGp>,
}

impl GpModel {
    /// Fits one GP per dataset output. `kernels` supplies the initial (or
    /// final, if optimization is disabled) hyperparameters per output.
    pub fn fit(
        dataset: Dataset,
        prior: PriorMean,
        kernels: &[SeKernelParams],
        cfg: &GpFitConfig,
    ) -> Result<Self> {
        if kernels.len() != dataset.n_outputs() {
            return Err(Error::InvalidParams(format!(
                "{} kernel inits for {} outputs",
                kernels.len(),
                dataset.n_outputs()
            )));
        }
        let n = dataset.len();
        let mut joints = Vec::with_capacity(dataset.n_outputs());
        for (j, init) in kernels.iter().enumerate() {
            init.validate()?;
            let res = residuals(&dataset, &prior, j);
            let kernel = if cfg.optimize_hyperparams && n >= 2 {
                fit_hyperparams(dataset.inputs_flat(), dataset.dim(), &res, init, &cfg.hyper)?
            } else {
                init.clone()
            };
            let (chol, jitter, alpha, gamma_inv) = if n == 0 {
                (None, 0.0, DVector::zeros(0), None)
            } else {
                let gamma = gram_matrix(dataset.inputs_flat(), dataset.dim(), &kernel);
                let (chol, jitter) = factorize_with_jitter(gamma, &kernel)?;
                let alpha = chol.solve(&DVector::from_column_slice(&res));
                let inv = chol.inverse();
                (Some(chol), jitter, alpha, Some(inv))
            };
            let sor = if cfg.max_inducing > 0 && n > 0 {
                let m = cfg.max_inducing.min(n);
                let indices = farthest_point_subset(
                    dataset.inputs_flat(),
                    dataset.dim(),
                    &kernel.length_scales,
                    m,
                );
                Some(sor::fit_sor(
                    dataset.inputs_flat(),
                    dataset.dim(),
                    &res,
                    &kernel,
                    &indices,
                )?)
            } else {
                None
            };
            joints.push(JointGp {
                kernel,
                alpha,
                jitter,
                chol,
                gamma_inv,
                sor,
            });
        }
        Ok(Self {
            dataset,
            prior,
            joints,
        })
    }

    /// An unfitted model that falls back to the prior everywhere.
    pub fn empty(
        dim: usize,
        n_outputs: usize,
        prior: PriorMean,
        kernels: Vec<SeKernelParams>,
    ) -> Self {
        assert_eq!(kernels.len(), n_outputs);
        Self {
            dataset: Dataset::new(dim, n_outputs),
            prior,
            joints: kernels
                .into_iter()
                .map(|kernel| JointGp {
                    kernel,
                    alpha: DVector::zeros(0),
                    jitter: 0.0,
                    chol: None,
                    gamma_inv: None,
                    sor: None,
                })
                .collect(),
        }
    }

    /// Exact posterior (mean, variance) per output at a query input. On an
    /// empty dataset this is the prior mean and prior variance λ².
    pub fn posterior(&self, x: &[f64]) -> Vec<(f64, f64)> {
        (0..self.joints.len())
            .map(|j| self.posterior_joint(j, x))
            .collect()
    }

    /// Exact posterior for one output.
    pub fn posterior_joint(&self, j: usize, x: &[f64]) -> (f64, f64) {
        let joint = &self.joints[j];
        let prior = self.prior.value(x, j);
        let n = self.dataset.len();
        if n == 0 {
            return (prior, joint.kernel.signal * joint.kernel.signal);
        }
        let k_vec = DVector::from_iterator(
            n,
            (0..n).map(|i| se_kernel_unchecked(x, self.dataset.input(i), &joint.kernel)),
        );
        let mean = prior + k_vec.dot(&joint.alpha);
        let solved = joint
            .chol
            .as_ref()
            .expect("factorization present for nonempty dataset")
            .solve(&k_vec);
        // clamp tiny negative values from floating-point cancellation
        let var = (joint.kernel.signal * joint.kernel.signal - k_vec.dot(&solved)).max(0.0);
        (mean, var)
    }

    /// Subset-of-regressors posterior (mean, variance) per output.
    pub fn posterior_sor(&self, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        (0..self.joints.len())
            .map(|j| {
                let joint = &self.joints[j];
                let sor = joint.sor.as_ref().ok_or_else(|| {
                    Error::InvalidParams("model has no inducing-point approximation".into())
                })?;
                let prior = self.prior.value(x, j);
                let (mean_part, var) = sor.query(x, &joint.kernel);
                Ok((prior + mean_part, var))
            })
            .collect()
    }

    /// Builds the flattened per-output query structure used by particle
    /// rollouts: the SoR approximation when fitted, otherwise the exact GP.
    pub fn predictor(&self, j: usize) -> JointPredictor {
        let joint = &self.joints[j];
        let dim = self.dataset.dim();
        let sig2 = joint.kernel.signal * joint.kernel.signal;
        let inv_ls: Vec<f64> = joint.kernel.length_scales.iter().map(|l| 1.0 / l).collect();
        match &joint.sor {
            Some(sor) => JointPredictor {
                dim,
                points: sor.points.clone(),
                beta: sor.beta.as_slice().to_vec(),
                inv_ls,
                sig2,
                var_const: 0.0,
                var_sign: 1.0,
                var_mat: sor.p.clone() * joint.kernel.noise_var,
            },
            None => {
                let n = self.dataset.len();
                JointPredictor {
                    dim,
                    points: self.dataset.inputs_flat().to_vec(),
                    beta: joint.alpha.as_slice().to_vec(),
                    inv_ls,
                    sig2,
                    var_const: sig2,
                    var_sign: -1.0,
                    var_mat: joint
                        .gamma_inv
                        .clone()
                        .unwrap_or_else(|| DMatrix::zeros(n, n)),
                }
            }
        }
    }

    /// Gaussian one-step-ahead prediction of the next state under the
    /// speed-integration update: velocities gain Δ, positions integrate with
    /// constant acceleration, so the position variance is (T_s/2)² times the
    /// Δ variance (per-joint independent, diagonal covariance).
    pub fn predict_next_state(&self, s: &State, u: f64, ts: f64) -> StateGaussian {
        assert_eq!(
            self.dataset.dim(),
            5,
            "state prediction expects x̃ = [q, q̇, u]"
        );
        assert_eq!(self.joints.len(), 2);
        let x = [s.q[0], s.q[1], s.qd[0], s.qd[1], u];
        let use_sor = !self.dataset.is_empty() && self.joints.iter().all(|j| j.sor.is_some());
        let post = if use_sor {
            self.posterior_sor(&x).expect("sor fitted")
        } else {
            self.posterior(&x)
        };
        let mut g = StateGaussian::default();
        for j in 0..2 {
            let (delta_mean, delta_var) = post[j];
            g.qd_mean[j] = s.qd[j] + delta_mean;
            g.q_mean[j] = s.q[j] + ts * s.qd[j] + 0.5 * ts * delta_mean;
            g.qd_var[j] = delta_var;
            g.q_var[j] = 0.25 * ts * ts * delta_var;
        }
        g
    }
}

/// Diagonal Gaussian over the next state.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StateGaussian {
    pub q_mean: [f64; 2],
    pub qd_mean: [f64; 2],
    pub q_var: [f64; 2],
    pub qd_var: [f64; 2],
}

/// Flattened per-output posterior query used in the rollout hot path. Both
/// the exact GP and the SoR approximation reduce to
///   mean(x) = prior(x) + k(x)ᵀβ,
///   var(x) = c₀ + sign·k(x)ᵀ W k(x),
/// with (c₀, sign, W) = (λ², −1, Γ⁻¹) exact or (0, +1, σ²P) for SoR.
#[derive(Debug, Clone)]
pub struct JointPredictor {
    pub dim: usize,
    /// Base points, row-major m × dim.
    pub points: Vec<f64>,
    pub beta: Vec<f64>,
    /// Elementwise 1/Λ_d.
    pub inv_ls: Vec<f64>,
    /// λ².
    pub sig2: f64,
    pub var_const: f64,
    pub var_sign: f64,
    pub var_mat: DMatrix<f64>,
}

impl JointPredictor {
    pub fn n_points(&self) -> usize {
        self.beta.len()
    }

    /// Evaluates the kernel vector into `k_buf`, W·k into `wk_buf`, and
    /// returns (kᵀβ, variance). The buffers must have length
    /// [`JointPredictor::n_points`]; they are reused by
    /// [`JointPredictor::backward`].
    pub fn query(&self, x: &[f64], k_buf: &mut [f64], wk_buf: &mut [f64]) -> (f64, f64) {
        let m = self.n_points();
        debug_assert_eq!(k_buf.len(), m);
        let d = self.dim;
        let mut mean_part = 0.0;
        for i in 0..m {
            let p = &self.points[i * d..(i + 1) * d];
            let mut d2 = 0.0;
            for c in 0..d {
                let diff = x[c] - p[c];
                d2 += diff * diff * self.inv_ls[c];
            }
            let k = self.sig2 * (-d2).exp();
            k_buf[i] = k;
            mean_part += k * self.beta[i];
        }
        // wk = W k; fixed accumulation order keeps results thread-invariant
        let mut quad = 0.0;
        for r in 0..m {
            let mut acc = 0.0;
            for c in 0..m {
                acc += self.var_mat[(r, c)] * k_buf[c];
            }
            wk_buf[r] = acc;
            quad += acc * k_buf[r];
        }
        let var = (self.var_const + self.var_sign * quad).max(0.0);
        (mean_part, var)
    }

    /// Accumulates g_mean·∂mean/∂x + g_var·∂var/∂x into `g_x`, reusing the
    /// buffers filled by [`JointPredictor::query`]. The prior-mean term is
    /// handled by the caller.
    pub fn backward(
        &self,
        x: &[f64],
        k_buf: &[f64],
        wk_buf: &[f64],
        g_mean: f64,
        g_var: f64,
        g_x: &mut [f64],
    ) {
        let m = self.n_points();
        let d = self.dim;
        // ∂k_i/∂x_c = k_i·(−2/Λ_c)(x_c − p_ic); per-point weight combines the
        // mean path (β_i) and the variance path (2·sign·(Wk)_i).
        for i in 0..m {
            let w = g_mean * self.beta[i] + g_var * self.var_sign * 2.0 * wk_buf[i];
            if w == 0.0 {
                continue;
            }
            let p = &self.points[i * d..(i + 1) * d];
            let wk = w * k_buf[i];
            for c in 0..d {
                g_x[c] += wk * (-2.0 * self.inv_ls[c]) * (x[c] - p[c]);
            }
        }
    }
}

pub(crate) fn residuals(dataset: &Dataset, prior: &PriorMean, output: usize) -> Vec<f64> {
    (0..dataset.len())
        .map(|i| dataset.targets(output)[i] - prior.value(dataset.input(i), output))
        .collect()
}

pub(crate) fn gram_matrix(inputs: &[f64], dim: usize, kernel: &SeKernelParams) -> DMatrix<f64> {
    let n = if dim == 0 { 0 } else { inputs.len() / dim };
    let mut gamma = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = &inputs[i * dim..(i + 1) * dim];
        for j in i..n {
            let xj = &inputs[j * dim..(j + 1) * dim];
            let k = se_kernel_unchecked(xi, xj, kernel);
            gamma[(i, j)] = k;
            gamma[(j, i)] = k;
        }
    }
    for i in 0..n {
        gamma[(i, i)] += kernel.noise_var;
    }
    gamma
}

/// Cholesky-factorizes Γ, retrying once with the fixed 1e−8·λ² diagonal
/// jitter; a matrix that stays singular despite the jitter is a fit failure.
pub(crate) fn factorize_with_jitter(
    gamma: DMatrix<f64>,
    kernel: &SeKernelParams,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = gamma.nrows();
    if let Some(chol) = Cholesky::new(gamma.clone()) {
        return Ok((chol, 0.0));
    }
    let jitter = JITTER_REL * kernel.signal * kernel.signal;
    let mut jittered = gamma;
    for i in 0..n {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered)
        .map(|c| (c, jitter))
        .ok_or_else(|| Error::FitFailure("Gram matrix singular despite jitter".into()))
}

#[cfg(test)]
mod tests;
