use crate::diffnum::ParamVector;
use crate::env::{dynamics_mean, PhysicsParams, DT, ENV_NOISE_STD};
use crate::types::{Action, State, STATE_DIM};

use super::GaussianPrediction;

/// Member sharing the simulator's equations of motion. Learns
/// `(log m_b, log l_b)` so mass and length stay positive.
#[derive(Debug, Clone)]
pub struct PhysicsMember {
    pub params: ParamVector,
    pub fixed_variance: [f64; STATE_DIM],
    /// Natural-space values given at construction. `exp(ln x)` is not
    /// always `x`, so these are reported verbatim while the log-parameters
    /// still match them.
    anchor: [f64; 2],
}

impl PartialEq for PhysicsMember {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.fixed_variance == other.fixed_variance
    }
}

pub fn layout() -> ParamVector {
    ParamVector::zeros(&[("log_pole_mass", 1), ("log_pole_length", 1)])
}

impl PhysicsMember {
    pub fn new(pole_mass: f64, pole_length: f64) -> Self {
        assert!(pole_mass > 0.0 && pole_length > 0.0);
        let mut m = Self::from_log_params(vec![pole_mass.ln(), pole_length.ln()]);
        m.anchor = [pole_mass, pole_length];
        m
    }

    pub fn from_log_params(values: Vec<f64>) -> Self {
        let anchor = [values[0].exp(), values[1].exp()];
        PhysicsMember {
            params: layout().with_values(values),
            fixed_variance: [ENV_NOISE_STD * ENV_NOISE_STD; STATE_DIM],
            anchor,
        }
    }

    fn natural(&self, i: usize) -> f64 {
        let v = self.params.values[i];
        if self.anchor[i].ln() == v {
            self.anchor[i]
        } else {
            v.exp()
        }
    }

    pub fn pole_mass(&self) -> f64 {
        self.natural(0)
    }

    pub fn pole_length(&self) -> f64 {
        self.natural(1)
    }

    pub fn physics(&self) -> PhysicsParams {
        PhysicsParams::with_pole(self.pole_mass(), self.pole_length())
    }

    pub fn predict(&self, s: &State, a: Action) -> GaussianPrediction {
        GaussianPrediction {
            mean: dynamics_mean(s, a, &self.physics(), DT),
            variance: self.fixed_variance,
        }
    }
}
