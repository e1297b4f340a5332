//! Double pendulum with joint friction: energy functional, RK4 integrator,
//! and the regression dataset generator.
//!
//! Point masses on massless rods, angles measured from the downward
//! vertical. Friction enters as damping torques -c1 w1 and -c2 w2 on the
//! generalized coordinates, which dissipates energy at rate
//! -(c1 w1^2 + c2 w2^2).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumConfig {
    /// Rod lengths (m).
    pub l1: f64,
    pub l2: f64,
    /// Bob masses (kg).
    pub m1: f64,
    pub m2: f64,
    /// Viscous joint friction coefficients (N m s).
    pub c1: f64,
    pub c2: f64,
    /// Gravity (m/s^2).
    pub g: f64,
    /// Integrator step (s).
    pub dt: f64,
    /// RK4 steps between a sample's input state and its target state.
    pub steps_per_sample: usize,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            m1: 1.0,
            m2: 5.0,
            c1: 0.001,
            c2: 0.001,
            g: 9.81,
            dt: 0.01,
            steps_per_sample: 5,
        }
    }
}

impl PendulumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1 > 0.0 && self.l2 > 0.0 && self.m1 > 0.0 && self.m2 > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidConfig(
                "pendulum lengths, masses, and dt must be positive".to_string(),
            ));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(Error::InvalidConfig(
                "friction coefficients must be nonnegative".to_string(),
            ));
        }
        if self.steps_per_sample == 0 {
            return Err(Error::InvalidConfig(
                "steps_per_sample must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// State (theta1, omega1, theta2, omega2) in radians and radians/second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta1: f64,
    pub omega1: f64,
    pub theta2: f64,
    pub omega2: f64,
}

impl PendulumState {
    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if s.len() != 4 {
            return Err(Error::InvalidShape(format!(
                "pendulum state needs 4 entries, got {}",
                s.len()
            )));
        }
        Ok(Self {
            theta1: s[0],
            omega1: s[1],
            theta2: s[2],
            omega2: s[3],
        })
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.theta1, self.omega1, self.theta2, self.omega2]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Total mechanical energy E = T + V (Joules).
pub fn pendulum_energy(state: &PendulumState, cfg: &PendulumConfig) -> f64 {
    let PendulumState {
        theta1,
        omega1,
        theta2,
        omega2,
    } = *state;
    let dlt = theta1 - theta2;
    let kinetic = 0.5 * cfg.m1 * cfg.l1 * cfg.l1 * omega1 * omega1
        + 0.5
            * cfg.m2
            * (cfg.l1 * cfg.l1 * omega1 * omega1
                + cfg.l2 * cfg.l2 * omega2 * omega2
                + 2.0 * cfg.l1 * cfg.l2 * omega1 * omega2 * dlt.cos());
    let potential = -(cfg.m1 + cfg.m2) * cfg.g * cfg.l1 * theta1.cos()
        - cfg.m2 * cfg.g * cfg.l2 * theta2.cos();
    kinetic + potential
}

/// Gradient of the energy with respect to (theta1, omega1, theta2, omega2).
pub fn pendulum_energy_grad(state: &PendulumState, cfg: &PendulumConfig) -> [f64; 4] {
    let PendulumState {
        theta1,
        omega1,
        theta2,
        omega2,
    } = *state;
    let dlt = theta1 - theta2;
    let cross = cfg.m2 * cfg.l1 * cfg.l2;
    [
        -cross * omega1 * omega2 * dlt.sin() + (cfg.m1 + cfg.m2) * cfg.g * cfg.l1 * theta1.sin(),
        (cfg.m1 + cfg.m2) * cfg.l1 * cfg.l1 * omega1 + cross * omega2 * dlt.cos(),
        cross * omega1 * omega2 * dlt.sin() + cfg.m2 * cfg.g * cfg.l2 * theta2.sin(),
        cfg.m2 * cfg.l2 * cfg.l2 * omega2 + cross * omega1 * dlt.cos(),
    ]
}

/// Equations of motion: solves the 2x2 mass matrix system
/// M(theta) [a1; a2] = f(theta, omega) + [-c1 w1; -c2 w2].
fn derivatives(s: [f64; 4], cfg: &PendulumConfig) -> [f64; 4] {
    let (th1, w1, th2, w2) = (s[0], s[1], s[2], s[3]);
    let dlt = th1 - th2;
    let (sin_d, cos_d) = dlt.sin_cos();
    let m_sum = cfg.m1 + cfg.m2;
    let m11 = m_sum * cfg.l1 * cfg.l1;
    let m12 = cfg.m2 * cfg.l1 * cfg.l2 * cos_d;
    let m22 = cfg.m2 * cfg.l2 * cfg.l2;
    let r1 = -cfg.m2 * cfg.l1 * cfg.l2 * w2 * w2 * sin_d
        - m_sum * cfg.g * cfg.l1 * th1.sin()
        - cfg.c1 * w1;
    let r2 = cfg.m2 * cfg.l1 * cfg.l2 * w1 * w1 * sin_d - cfg.m2 * cfg.g * cfg.l2 * th2.sin()
        - cfg.c2 * w2;
    // det = m2 l1^2 l2^2 (m1 + m2 sin^2 dlt) > 0 always.
    let det = m11 * m22 - m12 * m12;
    let a1 = (m22 * r1 - m12 * r2) / det;
    let a2 = (m11 * r2 - m12 * r1) / det;
    [w1, a1, w2, a2]
}

/// One classical RK4 step of size `cfg.dt`. Angles are left unwrapped.
pub fn pendulum_step(state: &PendulumState, cfg: &PendulumConfig) -> Result<PendulumState> {
    let s = state.to_array();
    let dt = cfg.dt;
    let k1 = derivatives(s, cfg);
    let k2 = derivatives(add_scaled(s, k1, dt / 2.0), cfg);
    let k3 = derivatives(add_scaled(s, k2, dt / 2.0), cfg);
    let k4 = derivatives(add_scaled(s, k3, dt), cfg);
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure(
            "pendulum integration produced a non-finite state".to_string(),
        ));
    }
    Ok(PendulumState {
        theta1: out[0],
        omega1: out[1],
        theta2: out[2],
        omega2: out[3],
    })
}

fn add_scaled(s: [f64; 4], k: [f64; 4], h: f64) -> [f64; 4] {
    [
        s[0] + h * k[0],
        s[1] + h * k[1],
        s[2] + h * k[2],
        s[3] + h * k[3],
    ]
}

/// Advances a state by `cfg.steps_per_sample` RK4 steps.
pub fn pendulum_advance(state: &PendulumState, cfg: &PendulumConfig) -> Result<PendulumState> {
    let mut s = *state;
    for _ in 0..cfg.steps_per_sample {
        s = pendulum_step(&s, cfg)?;
    }
    Ok(s)
}

/// Rolls seeded trajectories and emits (state, state after steps_per_sample)
/// pairs. Initial states: theta_i ~ U(-pi/2, pi/2), omega_i ~ U(-1, 1).
/// Emits `traj_len` pairs per trajectory.
pub fn pendulum_dataset<R: Rng + ?Sized>(
    cfg: &PendulumConfig,
    n_trajectories: usize,
    traj_len: usize,
    rng: &mut R,
) -> Result<(Matrix, Matrix)> {
    cfg.validate()?;
    if n_trajectories == 0 || traj_len == 0 {
        return Err(Error::InvalidConfig(
            "pendulum dataset needs positive trajectory counts".to_string(),
        ));
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let n = n_trajectories * traj_len;
    let mut xs = Matrix::zeros(n, 4);
    let mut ys = Matrix::zeros(n, 4);
    let mut row = 0;
    for _ in 0..n_trajectories {
        let mut s = PendulumState {
            theta1: rng.gen_range(-half_pi..half_pi),
            omega1: rng.gen_range(-1.0..1.0),
            theta2: rng.gen_range(-half_pi..half_pi),
            omega2: rng.gen_range(-1.0..1.0),
        };
        for _ in 0..traj_len {
            let next = pendulum_advance(&s, cfg)?;
            xs.row_mut(row).copy_from_slice(&s.to_array());
            ys.row_mut(row).copy_from_slice(&next.to_array());
            row += 1;
            s = next;
        }
    }
    Ok((xs, ys))
}
