//! Gaussian MLP member: two SiLU hidden layers, a delta-state mean head and a
//! raw log-variance head squashed smoothly into `[var_min, var_max]`.

use crate::diffnum::{ParamVector, Tape, Var};
use crate::diffnum::tape::{sigmoid, silu};
use crate::rng::SeededRng;
use crate::types::{Action, State, FORCE_LIMIT, STATE_DIM};

use super::GaussianPrediction;

pub const INPUT_DIM: usize = STATE_DIM + 1;
pub const OUTPUT_DIM: usize = 2 * STATE_DIM;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for VarianceBounds {
    fn default() -> Self {
        VarianceBounds { min: 1e-6, max: 10.0 }
    }
}

impl VarianceBounds {
    /// Squashes a raw log-variance into `(ln min, ln max)` with a sigmoid.
    pub fn clamp_log(&self, raw: f64) -> f64 {
        let (lo, hi) = (self.min.ln(), self.max.ln());
        (lo + (hi - lo) * sigmoid(raw)).clamp(lo, hi)
    }

    fn clamp_log_tape(&self, t: &mut Tape, raw: Var) -> Var {
        // sigmoid(r) = exp(−softplus(−r))
        let (lo, hi) = (self.min.ln(), self.max.ln());
        let neg = t.scale(raw, -1.0);
        let sp = t.softplus(neg);
        let log_sig = t.scale(sp, -1.0);
        let sig = t.exp(log_sig);
        t.scale_shift(sig, hi - lo, lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpMember {
    pub params: ParamVector,
    pub hidden: usize,
    pub bounds: VarianceBounds,
}

/// Tape handles for one member's parameter segments.
pub struct MlpVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    w3: Var,
    b3: Var,
}

fn input(s: &State, a: Action) -> [f64; INPUT_DIM] {
    [s[0], s[1], s[2], s[3], a.force() / FORCE_LIMIT]
}

pub fn layout(hidden: usize) -> ParamVector {
    ParamVector::zeros(&[
        ("w1", hidden * INPUT_DIM),
        ("b1", hidden),
        ("w2", hidden * hidden),
        ("b2", hidden),
        ("w3", OUTPUT_DIM * hidden),
        ("b3", OUTPUT_DIM),
    ])
}

impl MlpMember {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn random(hidden: usize, bounds: VarianceBounds, rng: &mut SeededRng) -> Self {
        let mut params = layout(hidden);
        for (w, b, fan_in) in [("w1", "b1", INPUT_DIM), ("w2", "b2", hidden), ("w3", "b3", hidden)] {
            let k = 1.0 / (fan_in as f64).sqrt();
            for v in params.segment_mut(w) {
                *v = rng.uniform_range(-k, k);
            }
            for v in params.segment_mut(b) {
                *v = rng.uniform_range(-k, k);
            }
        }
        MlpMember {
            params,
            hidden,
            bounds,
        }
    }

    pub fn from_params(hidden: usize, bounds: VarianceBounds, values: Vec<f64>) -> Self {
        let params = layout(hidden).with_values(values);
        MlpMember {
            params,
            hidden,
            bounds,
        }
    }

    pub fn predict(&self, s: &State, a: Action) -> GaussianPrediction {
        let h = self.hidden;
        let p = &self.params;
        let x = input(s, a);
        let dense = |w: &[f64], b: &[f64], x: &[f64], act: bool| -> Vec<f64> {
            let cols = x.len();
            (0..b.len())
                .map(|i| {
                    let z = b[i]
                        + w[i * cols..(i + 1) * cols]
                            .iter()
                            .zip(x)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    if act {
                        silu(z)
                    } else {
                        z
                    }
                })
                .collect()
        };
        let h1 = dense(p.segment("w1"), p.segment("b1"), &x, true);
        debug_assert_eq!(h1.len(), h);
        let h2 = dense(p.segment("w2"), p.segment("b2"), &h1, true);
        let out = dense(p.segment("w3"), p.segment("b3"), &h2, false);

        let mut mean = *s;
        let mut variance = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            mean[i] += out[i];
            variance[i] = self.bounds.clamp_log(out[STATE_DIM + i]).exp().clamp(self.bounds.min, self.bounds.max);
        }
        GaussianPrediction { mean, variance }
    }

    pub fn tape_vars(&self, t: &mut Tape, params: &[f64]) -> MlpVars {
        let p = &self.params;
        MlpVars {
            w1: t.param(params, p.range("w1")),
            b1: t.param(params, p.range("b1")),
            w2: t.param(params, p.range("w2")),
            b2: t.param(params, p.range("b2")),
            w3: t.param(params, p.range("w3")),
            b3: t.param(params, p.range("b3")),
        }
    }

    /// Mean and log-variance of the prediction, recorded on the tape.
    pub fn forward_tape(&self, t: &mut Tape, v: &MlpVars, s: &State, a: Action) -> (Var, Var) {
        let h = self.hidden;
        let x = t.constant(input(s, a).to_vec());
        let z1 = t.affine(v.w1, v.b1, x, h, INPUT_DIM);
        let h1 = t.silu(z1);
        let z2 = t.affine(v.w2, v.b2, h1, h, h);
        let h2 = t.silu(z2);
        let out = t.affine(v.w3, v.b3, h2, OUTPUT_DIM, h);
        let delta = t.slice(out, 0..STATE_DIM);
        let s_var = t.constant(s.0.to_vec());
        let mean = t.add(s_var, delta);
        let raw = t.slice(out, STATE_DIM..OUTPUT_DIM);
        let logvar = self.bounds.clamp_log_tape(t, raw);
        (mean, logvar)
    }
}
