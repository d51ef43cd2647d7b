//! Ground-truth double-pendulum dynamics and fixed-step RK4 simulation.
//!
//! Angles follow the swing-up convention: `q = [0, 0]` is hanging rest,
//! `q = [π, 0]` is upright, and `q2` is measured relative to link 1. A single
//! scalar torque command drives whichever joint the actuation matrix selects;
//! the other joint is passive. Trajectories are recorded with unwrapped
//! angles.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::{Error, Result};

/// Which joint the single actuator drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Robot {
    /// Shoulder actuated, elbow passive.
    Pendubot,
    /// Elbow actuated, shoulder passive.
    Acrobot,
}

impl Robot {
    /// Index of the actuated joint (0 = shoulder, 1 = elbow).
    pub fn actuated_joint(self) -> usize {
        match self {
            Robot::Pendubot => 0,
            Robot::Acrobot => 1,
        }
    }

    /// Diagonal of the actuation matrix B.
    pub fn actuation(self) -> [f64; 2] {
        match self {
            Robot::Pendubot => [1.0, 0.0],
            Robot::Acrobot => [0.0, 1.0],
        }
    }
}

impl fmt::Display for Robot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Robot::Pendubot => write!(f, "pendubot"),
            Robot::Acrobot => write!(f, "acrobot"),
        }
    }
}

impl std::str::FromStr for Robot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendubot" => Ok(Robot::Pendubot),
            "acrobot" => Ok(Robot::Acrobot),
            other => Err(Error::InvalidConfig(format!(
                "unknown robot '{other}' (expected 'pendubot' or 'acrobot')"
            ))),
        }
    }
}

/// Physical parameters of the two-link pendulum.
///
/// The defaults are surrogate desk-scale values (sub-kilogram links,
/// 0.2–0.3 m lengths, a few N·m of torque); they are not measurements of any
/// particular rig and tests avoid depending on them wherever possible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Link masses (kg).
    pub m1: f64,
    pub m2: f64,
    /// Link lengths, joint to joint (m).
    pub l1: f64,
    pub l2: f64,
    /// Center-of-mass distances from each joint (m).
    pub r1: f64,
    pub r2: f64,
    /// Link inertias about their centers of mass (kg·m²).
    pub i1: f64,
    pub i2: f64,
    /// Viscous damping at each joint (N·m·s/rad).
    pub b1: f64,
    pub b2: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Actuator saturation (N·m); commands are clipped to ±this value.
    pub torque_limit: f64,
    pub robot: Robot,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            m1: 0.7,
            m2: 0.6,
            l1: 0.3,
            l2: 0.3,
            r1: 0.2,
            r2: 0.22,
            i1: 0.012,
            i2: 0.010,
            b1: 0.0,
            b2: 0.0,
            gravity: 9.81,
            torque_limit: 6.0,
            robot: Robot::Pendubot,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("i1", self.i1),
            ("i2", self.i2),
            ("gravity", self.gravity),
            ("torque_limit", self.torque_limit),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        for (name, v) in [("b1", self.b1), ("b2", self.b2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.r1 > self.l1 || self.r2 > self.l2 {
            return Err(Error::InvalidParams(
                "center-of-mass distance exceeds link length".into(),
            ));
        }
        Ok(())
    }

    /// Mass matrix M(q) of the two-link arm.
    pub fn mass_matrix(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let c2 = q[1].cos();
        let a = self.i1 + self.i2 + self.m1 * self.r1 * self.r1
            + self.m2 * (self.l1 * self.l1 + self.r2 * self.r2 + 2.0 * self.l1 * self.r2 * c2);
        let b = self.i2 + self.m2 * (self.r2 * self.r2 + self.l1 * self.r2 * c2);
        let d = self.i2 + self.m2 * self.r2 * self.r2;
        Matrix2::new(a, b, b, d)
    }

    /// Bias vector n(q, q̇): Coriolis/centrifugal, gravitational, and viscous
    /// damping torques, so that M(q)·q̈ + n(q, q̇) = B·u.
    pub fn bias(&self, q: &Vector2<f64>, qd: &Vector2<f64>) -> Vector2<f64> {
        let h = self.m2 * self.l1 * self.r2 * q[1].sin();
        let g1 = (self.m1 * self.r1 + self.m2 * self.l1) * self.gravity * q[0].sin()
            + self.m2 * self.r2 * self.gravity * (q[0] + q[1]).sin();
        let g2 = self.m2 * self.r2 * self.gravity * (q[0] + q[1]).sin();
        Vector2::new(
            -h * qd[1] * (2.0 * qd[0] + qd[1]) + g1 + self.b1 * qd[0],
            h * qd[0] * qd[0] + g2 + self.b2 * qd[1],
        )
    }

    /// Gravitational potential energy, zero datum at the pivot.
    pub fn potential_energy(&self, q: &Vector2<f64>) -> f64 {
        -self.gravity
            * ((self.m1 * self.r1 + self.m2 * self.l1) * q[0].cos()
                + self.m2 * self.r2 * (q[0] + q[1]).cos())
    }

    /// Kinetic energy ½ q̇ᵀ M(q) q̇.
    pub fn kinetic_energy(&self, q: &Vector2<f64>, qd: &Vector2<f64>) -> f64 {
        0.5 * (self.mass_matrix(q) * qd).dot(qd)
    }

    /// Total mechanical energy.
    pub fn energy(&self, s: &State) -> f64 {
        self.kinetic_energy(&s.q, &s.qd) + self.potential_energy(&s.q)
    }

    /// Clips a scalar command to the actuator limit.
    pub fn clip(&self, u: f64) -> f64 {
        u.clamp(-self.torque_limit, self.torque_limit)
    }

    /// Expands a scalar command into the full torque vector B·u.
    pub fn torque_vector(&self, u: f64) -> Vector2<f64> {
        let b = self.robot.actuation();
        Vector2::new(b[0] * u, b[1] * u)
    }
}

/// Joint positions and velocities of the two-link pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Joint angles (rad); [0, 0] hanging, [π, 0] upright.
    pub q: Vector2<f64>,
    /// Joint velocities (rad/s).
    pub qd: Vector2<f64>,
}

impl State {
    pub fn new(q1: f64, q2: f64, qd1: f64, qd2: f64) -> Self {
        Self {
            q: Vector2::new(q1, q2),
            qd: Vector2::new(qd1, qd2),
        }
    }

    /// Hanging rest configuration.
    pub fn hanging() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    /// Upright unstable equilibrium.
    pub fn upright() -> Self {
        Self::new(std::f64::consts::PI, 0.0, 0.0, 0.0)
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.q[0], self.q[1], self.qd[0], self.qd[1]]
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

/// Timing of the mixed-rate simulation loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Integrator step (s).
    pub dt: f64,
    /// Control period; the controller is queried at this rate and its output
    /// held (zero-order) over the intervening integrator steps.
    pub control_dt: f64,
    /// Episode horizon (s).
    pub horizon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 500.0,
            control_dt: 1.0 / 50.0,
            horizon: 10.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "integrator step must be positive, got {}",
                self.dt
            )));
        }
        let ratio = self.control_dt / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "control period {} is not an integer multiple of integrator step {}",
                self.control_dt, self.dt
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Integrator steps per control tick.
    pub fn steps_per_tick(&self) -> usize {
        (self.control_dt / self.dt).round() as usize
    }

    /// Total integrator steps over the horizon.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Total control ticks over the horizon.
    pub fn n_ticks(&self) -> usize {
        (self.horizon / self.control_dt).round() as usize
    }
}

/// Joint accelerations q̈ = M(q)⁻¹ (B·u − n(q, q̇)).
///
/// The command is clipped to the torque limit at this boundary, so any
/// controller output beyond the actuator range saturates before it reaches
/// the integrator.
pub fn forward_dynamics(params: &PlantParams, s: &State, u: &Vector2<f64>) -> Result<Vector2<f64>> {
    if !s.is_finite() {
        return Err(Error::NonFiniteState(format!(
            "forward_dynamics input q={:?} qd={:?}",
            s.q, s.qd
        )));
    }
    let b = params.robot.actuation();
    let tau = Vector2::new(b[0] * params.clip(u[0]), b[1] * params.clip(u[1]));
    let m = params.mass_matrix(&s.q);
    let n = params.bias(&s.q, &s.qd);
    // 2x2 inverse; positive inertias keep M positive definite.
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let rhs = tau - n;
    Ok(Vector2::new(
        (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
        (-m[(1, 0)] * rhs[0] + m[(0, 0)] * rhs[1]) / det,
    ))
}

/// One classic RK4 update of [q, q̇] with the torque held constant.
pub fn step_rk4(params: &PlantParams, dt: f64, s: &State, u: &Vector2<f64>) -> Result<State> {
    let deriv = |s: &State| -> Result<[f64; 4]> {
        let a = forward_dynamics(params, s, u)?;
        Ok([s.qd[0], s.qd[1], a[0], a[1]])
    };
    let advance = |s: &State, k: &[f64; 4], h: f64| {
        State::new(
            s.q[0] + h * k[0],
            s.q[1] + h * k[1],
            s.qd[0] + h * k[2],
            s.qd[1] + h * k[3],
        )
    };
    let k1 = deriv(s)?;
    let k2 = deriv(&advance(s, &k1, 0.5 * dt))?;
    let k3 = deriv(&advance(s, &k2, 0.5 * dt))?;
    let k4 = deriv(&advance(s, &k3, dt))?;
    Ok(State::new(
        s.q[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s.q[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        s.qd[0] + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        s.qd[1] + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    ))
}

/// Advances one control period: `steps` RK4 sub-steps with the scalar command
/// held (zero-order hold).
pub fn simulate_tick(
    params: &PlantParams,
    dt: f64,
    steps: usize,
    s: &State,
    command: f64,
) -> Result<State> {
    let tau = params.torque_vector(params.clip(command));
    let mut state = *s;
    for _ in 0..steps {
        state = step_rk4(params, dt, &state, &tau)?;
    }
    Ok(state)
}

/// A feedback controller queried once per control tick.
///
/// Returns the scalar torque command for the actuated joint; the plant maps
/// it through the actuation matrix and clips it to the torque limit.
pub trait Controller {
    fn command(&mut self, state: &State) -> f64;
}

impl<F: FnMut(&State) -> f64> Controller for F {
    fn command(&mut self, state: &State) -> f64 {
        self(state)
    }
}

/// One logged integrator step: time, state at the start of the step, and the
/// (clipped) torque applied over it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub q1: f64,
    pub q2: f64,
    pub qd1: f64,
    pub qd2: f64,
    pub u1: f64,
    pub u2: f64,
}

impl LogRow {
    pub fn state(&self) -> State {
        State::new(self.q1, self.q2, self.qd1, self.qd2)
    }
}

/// Time-stamped record of one episode: one row per integrator step plus the
/// terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub dt: f64,
    pub steps_per_tick: usize,
    pub rows: Vec<LogRow>,
    pub final_state: State,
    /// Diagnostic set when the controller faulted and the episode aborted.
    pub fault: Option<String>,
}

impl EpisodeLog {
    /// States at control-tick boundaries, including the terminal state.
    pub fn tick_states(&self) -> Vec<State> {
        let mut states: Vec<State> = self
            .rows
            .iter()
            .step_by(self.steps_per_tick)
            .map(|r| r.state())
            .collect();
        if self.rows.len() % self.steps_per_tick == 0 {
            states.push(self.final_state);
        }
        states
    }

    /// Scalar commands at control-tick boundaries.
    pub fn tick_commands(&self, robot: Robot) -> Vec<f64> {
        let j = robot.actuated_joint();
        self.rows
            .iter()
            .step_by(self.steps_per_tick)
            .map(|r| if j == 0 { r.u1 } else { r.u2 })
            .collect()
    }

    /// Serializes to CSV with header `t,q1,q2,qd1,qd2,u1,u2`. Floats are
    /// printed in shortest round-trip form, so parsing the output reproduces
    /// the log bit-exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 64 + 32);
        out.push_str("t,q1,q2,qd1,qd2,u1,u2\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.t, r.q1, r.q2, r.qd1, r.qd2, r.u1, r.u2
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the CSV produced by [`EpisodeLog::to_csv`]. The terminal state
    /// is not part of the CSV schema, so it is reconstructed as the last
    /// row's state; metrics that only read rows are unaffected.
    pub fn from_csv(text: &str, dt: f64, steps_per_tick: usize) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line.trim() != "t,q1,q2,qd1,qd2,u1,u2" {
                    return Err(Error::CheckpointFormat(format!(
                        "unexpected episode CSV header: {line}"
                    )));
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::CheckpointFormat(format!(
                    "episode CSV line {lineno}: expected 7 fields, got {}",
                    fields.len()
                )));
            }
            let mut vals = [0.0f64; 7];
            for (i, f) in fields.iter().enumerate() {
                vals[i] = f.parse().map_err(|e| {
                    Error::CheckpointFormat(format!("episode CSV line {lineno}: {e}"))
                })?;
            }
            rows.push(LogRow {
                t: vals[0],
                q1: vals[1],
                q2: vals[2],
                qd1: vals[3],
                qd2: vals[4],
                u1: vals[5],
                u2: vals[6],
            });
        }
        let final_state = rows
            .last()
            .map(|r| r.state())
            .unwrap_or_else(State::hanging);
        Ok(Self {
            dt,
            steps_per_tick,
            rows,
            final_state,
            fault: None,
        })
    }
}

/// Runs one episode: the controller is queried every control period and its
/// output held for the intervening integrator steps. Returns one row per
/// integrator step. A controller returning a non-finite command aborts the
/// episode; the partial log is returned with the diagnostic recorded.
pub fn episode(
    params: &PlantParams,
    config: &SimConfig,
    controller: &mut dyn Controller,
    x0: &State,
) -> Result<EpisodeLog> {
    params.validate()?;
    config.validate()?;
    if !x0.is_finite() {
        return Err(Error::NonFiniteState("episode initial state".into()));
    }
    let steps_per_tick = config.steps_per_tick();
    let n_steps = config.n_steps();
    let mut rows = Vec::with_capacity(n_steps);
    let mut state = *x0;
    let mut fault = None;
    let mut step = 0usize;
    'ticks: while step < n_steps {
        let raw = controller.command(&state);
        if !raw.is_finite() {
            fault = Some(format!(
                "controller returned non-finite command {raw} at t={}",
                step as f64 * config.dt
            ));
            break 'ticks;
        }
        let u = params.clip(raw);
        let tau = params.torque_vector(u);
        for _ in 0..steps_per_tick {
            if step >= n_steps {
                break;
            }
            rows.push(LogRow {
                t: step as f64 * config.dt,
                q1: state.q[0],
                q2: state.q[1],
                qd1: state.qd[0],
                qd2: state.qd[1],
                u1: tau[0],
                u2: tau[1],
            });
            state = step_rk4(params, config.dt, &state, &tau)?;
            if !state.is_finite() {
                fault = Some(format!(
                    "state became non-finite at t={}",
                    step as f64 * config.dt
                ));
                break 'ticks;
            }
            step += 1;
        }
    }
    Ok(EpisodeLog {
        dt: config.dt,
        steps_per_tick,
        rows,
        final_state: state,
        fault,
    })
}
