//! Cart-pole simulator with configurable pole mass and length.
//!
//! Equations of motion follow the classic Barto–Sutton–Anderson cart-pole
//! (pole modelled as a uniform rod; `pole_length` is the pivot-to-centre
//! distance used in those equations), integrated with semi-implicit Euler.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::{Action, State, STATE_DIM};

pub const DT: f64 = 0.02;
pub const CART_MASS: f64 = 1.0;
pub const GRAVITY: f64 = 9.8;
pub const NOMINAL_POLE_MASS: f64 = 0.1;
pub const NOMINAL_POLE_LENGTH: f64 = 1.0;
pub const ENV_NOISE_STD: f64 = 0.01;
pub const THETA_LIMIT: f64 = 0.2;
pub const X_LIMIT: f64 = 2.4;
pub const MAX_RETURN: f64 = 100.0;
/// Initial states are drawn uniformly from `±INIT_RANGE` in every dimension.
pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub pole_mass: f64,
    pub pole_length: f64,
    pub cart_mass: f64,
    pub gravity: f64,
}

impl PhysicsParams {
    pub fn nominal() -> Self {
        Self::with_pole(NOMINAL_POLE_MASS, NOMINAL_POLE_LENGTH)
    }

    pub fn with_pole(pole_mass: f64, pole_length: f64) -> Self {
        PhysicsParams {
            pole_mass,
            pole_length,
            cart_mass: CART_MASS,
            gravity: GRAVITY,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.pole_mass, self.pole_length, self.cart_mass, self.gravity]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }

    pub fn perturbed(self, name: ParamName, value: f64) -> Self {
        match name {
            ParamName::PoleMass => PhysicsParams {
                pole_mass: value,
                ..self
            },
            ParamName::PoleLength => PhysicsParams {
                pole_length: value,
                ..self
            },
        }
    }

    pub fn get(&self, name: ParamName) -> f64 {
        match name {
            ParamName::PoleMass => self.pole_mass,
            ParamName::PoleLength => self.pole_length,
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Noiseless one-step map.
pub fn dynamics_mean(s: &State, a: Action, p: &PhysicsParams, dt: f64) -> State {
    let [x, x_dot, theta, theta_dot] = s.0;
    let force = a.force();
    let total_mass = p.cart_mass + p.pole_mass;
    let ml = p.pole_mass * p.pole_length;
    let (sin, cos) = theta.sin_cos();

    let temp = (force + ml * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc = (p.gravity * sin - cos * temp)
        / (p.pole_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
    let x_acc = temp - ml * theta_acc * cos / total_mass;

    let x_dot = x_dot + dt * x_acc;
    let theta_dot = theta_dot + dt * theta_acc;
    State([x + dt * x_dot, x_dot, wrap_angle(theta + dt * theta_dot), theta_dot])
}

/// Total mechanical energy of the frictionless cart-pole.
pub fn mechanical_energy(s: &State, p: &PhysicsParams) -> f64 {
    let [_, x_dot, theta, theta_dot] = s.0;
    let m = p.pole_mass;
    let l = p.pole_length;
    0.5 * (p.cart_mass + m) * x_dot * x_dot
        + m * l * x_dot * theta_dot * theta.cos()
        + (2.0 / 3.0) * m * l * l * theta_dot * theta_dot
        + m * p.gravity * l * theta.cos()
}

pub fn is_upright(s: &State) -> bool {
    s.theta().abs() <= THETA_LIMIT && s.x().abs() <= X_LIMIT
}

/// 1 for an upright state, 0 otherwise.
pub fn reward(s: &State) -> f64 {
    if is_upright(s) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: State,
    pub reward: f64,
    pub done: bool,
}

/// One episode's worth of simulator state. Episodes never terminate early;
/// they always run `episode_length` steps.
#[derive(Debug, Clone)]
pub struct EnvInstance {
    pub params: PhysicsParams,
    pub noise_std: [f64; STATE_DIM],
    pub dt: f64,
    pub episode_length: usize,
    state: State,
    step: usize,
    rng: SeededRng,
}

impl EnvInstance {
    pub fn new(params: PhysicsParams, episode_length: usize, rng: SeededRng) -> Self {
        let mut env = EnvInstance {
            params,
            noise_std: [ENV_NOISE_STD; STATE_DIM],
            dt: DT,
            episode_length,
            state: State::ZERO,
            step: 0,
            rng,
        };
        env.reset();
        env
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = [noise_std; STATE_DIM];
        self
    }

    /// Starts a new episode from a state drawn uniformly in `±INIT_RANGE`.
    pub fn reset(&mut self) -> State {
        let mut s = State::ZERO;
        for i in 0..STATE_DIM {
            s[i] = self.rng.uniform_range(-INIT_RANGE, INIT_RANGE);
        }
        self.state = s;
        self.step = 0;
        s
    }

    /// Starts a new episode from an explicit state.
    pub fn reset_to(&mut self, s: State) {
        self.state = s;
        self.step = 0;
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.episode_length
    }

    pub fn step(&mut self, a: Action) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::EpisodeDone);
        }
        let mut next = dynamics_mean(&self.state, a, &self.params, self.dt);
        for i in 0..STATE_DIM {
            if self.noise_std[i] > 0.0 {
                next[i] += self.noise_std[i] * self.rng.normal();
            }
        }
        next[2] = wrap_angle(next[2]);
        self.state = next;
        self.step += 1;
        Ok(StepResult {
            state: next,
            reward: reward(&next),
            done: self.is_done(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    PoleMass,
    PoleLength,
}

impl ParamName {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::PoleMass => "pole_mass",
            ParamName::PoleLength => "pole_length",
        }
    }

    /// Default testing range for this parameter.
    pub fn test_range(self) -> (f64, f64) {
        match self {
            ParamName::PoleMass => (0.05, 10.0),
            ParamName::PoleLength => (0.3, 3.0),
        }
    }

    pub fn nominal(self) -> f64 {
        PhysicsParams::nominal().get(self)
    }
}

impl std::str::FromStr for ParamName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pole_mass" | "mass" | "m" => Ok(ParamName::PoleMass),
            "pole_length" | "length" | "l" => Ok(ParamName::PoleLength),
            other => Err(format!("unknown parameter `{other}` (expected pole_mass or pole_length)")),
        }
    }
}

impl std::fmt::Display for ParamName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Log,
}

impl std::str::FromStr for Spacing {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" | "lin" => Ok(Spacing::Linear),
            "log" => Ok(Spacing::Log),
            other => Err(format!("unknown spacing `{other}` (expected linear or log)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationGrid {
    pub parameter: ParamName,
    pub values: Vec<f64>,
    pub episodes_per_value: usize,
}

/// `n` evenly spaced values over `[lo, hi]`, endpoints included.
pub fn make_grid(name: ParamName, lo: f64, hi: f64, n: usize) -> Result<PerturbationGrid> {
    make_grid_spaced(name, lo, hi, n, Spacing::Linear)
}

pub fn make_grid_spaced(
    name: ParamName,
    lo: f64,
    hi: f64,
    n: usize,
    spacing: Spacing,
) -> Result<PerturbationGrid> {
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::GridBounds { lo, hi });
    }
    let last = (n - 1) as f64;
    let values = (0..n)
        .map(|i| {
            if i == 0 {
                return lo;
            }
            if i == n - 1 {
                return hi;
            }
            let t = i as f64 / last;
            match spacing {
                Spacing::Linear => lo + (hi - lo) * t,
                Spacing::Log => (lo.ln() + (hi.ln() - lo.ln()) * t).exp(),
            }
        })
        .collect();
    Ok(PerturbationGrid {
        parameter: name,
        values,
        episodes_per_value: 1,
    })
}

impl PerturbationGrid {
    pub fn with_episodes(mut self, episodes: usize) -> Self {
        self.episodes_per_value = episodes;
        self
    }
}
