//! Training objectives for one ensemble member.
//!
//! * PE negative log-likelihood: `Σᵢ (μᵢ − s′ᵢ)²/σᵢ² + Σᵢ log σᵢ²`.
//! * InfoNCE with `g(x, c) = −L_PE(x)` as the score.
//! * UDUC: `L_PE(positive) + log Σ_{x∈𝒳} exp(−L_PE(x)/τ)`, which equals
//!   `(1 − 1/τ)·L_PE(positive) + InfoNCE(𝒳, τ)`.
//!
//! Sample sets are materialized before scoring, so gradients only flow
//! through the member being trained, never through the negatives.

use serde::{Deserialize, Serialize};

use crate::diffnum::{grad_fd, log_sum_exp, Tape, Var, FD_STEP};
use crate::ensemble::{GaussianPrediction, Member};
use crate::env::wrap_angle;
use crate::error::{Error, Result};
use crate::types::{Action, State, STATE_DIM};

const ANGLE: usize = 2;

/// Contrastive set 𝒳 for one `(s, a)` context: the observed next state plus
/// samples drawn from target members.
#[derive(Debug, Clone, PartialEq)]
pub struct UDUCSampleSet {
    pub positive: State,
    pub negatives: Vec<State>,
    pub context: (State, Action),
}

impl UDUCSampleSet {
    /// `|𝒳|`, counting the positive.
    pub fn len(&self) -> usize {
        1 + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Positive first, then negatives.
    pub fn iter(&self) -> impl Iterator<Item = &State> {
        std::iter::once(&self.positive).chain(self.negatives.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub nll_term: f64,
    pub contrastive_term: f64,
    pub l2_term: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.nll_term.is_finite()
            && self.contrastive_term.is_finite()
            && self.l2_term.is_finite()
    }
}

/// What the batch objective optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// Temperature; `f64::INFINITY` switches the contrastive term off.
    pub tau: f64,
    pub l2_coefficient: f64,
}

impl Objective {
    pub fn uduc(tau: f64) -> Self {
        Objective {
            tau,
            l2_coefficient: 0.0,
        }
    }

    pub fn plain_pe() -> Self {
        Objective {
            tau: f64::INFINITY,
            l2_coefficient: 0.0,
        }
    }

    pub fn with_l2(mut self, coefficient: f64) -> Self {
        self.l2_coefficient = coefficient;
        self
    }

    pub fn is_plain_pe(&self) -> bool {
        self.tau.is_infinite()
    }
}

/// The angle residual is wrapped into `(−π, π]`, so a pole crossing the
/// bottom of its swing does not register as a `2π` error.
pub fn pe_loss_pred(pred: &GaussianPrediction, s_prime: &State) -> f64 {
    (0..STATE_DIM)
        .map(|i| {
            let mut r = pred.mean[i] - s_prime[i];
            if i == ANGLE {
                r = wrap_angle(r);
            }
            r * r / pred.variance[i] + pred.variance[i].ln()
        })
        .sum()
}

pub fn pe_loss(member: &Member, s: &State, a: Action, s_prime: &State) -> f64 {
    pe_loss_pred(&member.predict(s, a), s_prime)
}

/// `−log softmax(scores)[0]`, i.e. InfoNCE with the positive's score first.
pub fn info_nce_from_scores(scores: &[f64]) -> f64 {
    log_sum_exp(scores) - scores[0]
}

fn set_losses(member: &Member, set: &UDUCSampleSet) -> Vec<f64> {
    let (s, a) = set.context;
    let pred = member.predict(&s, a);
    set.iter().map(|x| pe_loss_pred(&pred, x)).collect()
}

pub fn info_nce(member: &Member, set: &UDUCSampleSet, tau: f64) -> f64 {
    let scores: Vec<f64> = set_losses(member, set).iter().map(|l| -l / tau).collect();
    info_nce_from_scores(&scores)
}

/// Single-sample UDUC loss in its direct form. `l2_term` is zero here.
pub fn uduc_loss(member: &Member, set: &UDUCSampleSet, tau: f64) -> LossBreakdown {
    uduc_from_losses(&set_losses(member, set), tau)
}

fn uduc_from_losses(losses: &[f64], tau: f64) -> LossBreakdown {
    let nll = losses[0];
    let contrastive = if tau.is_infinite() {
        0.0
    } else {
        let scores: Vec<f64> = losses.iter().map(|l| -l / tau).collect();
        log_sum_exp(&scores)
    };
    LossBreakdown {
        total: nll + contrastive,
        nll_term: nll,
        contrastive_term: contrastive,
        l2_term: 0.0,
    }
}

/// Euclidean norm of the flat parameter vector.
pub fn l2_reg(params: &[f64]) -> f64 {
    params.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean per-sample loss plus `l2_coefficient · ‖θ‖` (added once per batch).
pub fn batch_objective(member: &Member, batch: &[UDUCSampleSet], obj: &Objective) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let (mut nll, mut con) = (0.0, 0.0);
    for set in batch {
        let b = uduc_from_losses(&set_losses(member, set), obj.tau);
        nll += b.nll_term;
        con += b.contrastive_term;
    }
    let (nll, con) = (nll / n, con / n);
    let l2 = if obj.l2_coefficient > 0.0 {
        l2_reg(&member.params().values)
    } else {
        0.0
    };
    Ok(LossBreakdown {
        total: nll + con + obj.l2_coefficient * l2,
        nll_term: nll,
        contrastive_term: con,
        l2_term: l2,
    })
}

/// Batch objective and its gradient with respect to the member's parameters.
/// MLP members use the reverse-mode tape; physics members use central
/// finite differences over their two log-parameters.
pub fn batch_objective_grad(
    member: &Member,
    batch: &[UDUCSampleSet],
    obj: &Objective,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    match member {
        Member::Mlp(m) => {
            let at = &m.params.values;
            let mut t = Tape::new(at.len());
            let vars = m.tape_vars(&mut t, at);
            let mut nlls = Vec::with_capacity(batch.len());
            let mut cons = Vec::with_capacity(batch.len());
            for set in batch {
                let (s, a) = set.context;
                let (mean, logvar) = m.forward_tape(&mut t, &vars, &s, a);
                let (nll, con) = uduc_on_tape(&mut t, mean, logvar, set, obj.tau);
                nlls.push(nll);
                if let Some(c) = con {
                    cons.push(c);
                }
            }
            let inv_n = 1.0 / batch.len() as f64;
            let nll_all = t.concat(&nlls);
            let nll_sum = t.sum(nll_all);
            let nll_mean = t.scale(nll_sum, inv_n);
            let mut total = nll_mean;
            let mut con_value = 0.0;
            if !cons.is_empty() {
                let con_all = t.concat(&cons);
                let con_sum = t.sum(con_all);
                let con_mean = t.scale(con_sum, inv_n);
                con_value = t.scalar(con_mean);
                total = t.add(total, con_mean);
            }
            let mut l2_value = 0.0;
            if obj.l2_coefficient > 0.0 {
                let all = t.param(at, 0..at.len());
                let sq = t.square(all);
                let ss = t.sum(sq);
                let norm = t.sqrt(ss);
                l2_value = t.scalar(norm);
                let weighted = t.scale(norm, obj.l2_coefficient);
                total = t.add(total, weighted);
            }
            let grad = t.gradient(total)?;
            Ok((
                LossBreakdown {
                    total: t.scalar(total),
                    nll_term: t.scalar(nll_mean),
                    contrastive_term: con_value,
                    l2_term: l2_value,
                },
                grad,
            ))
        }
        Member::Physics(_) => {
            let value = batch_objective(member, batch, obj)?;
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "physics_objective" });
            }
            let f = |theta: &[f64]| {
                let probe = member.with_params(theta.to_vec());
                batch_objective(&probe, batch, obj)
                    .map(|b| b.total)
                    .unwrap_or(f64::NAN)
            };
            let g = grad_fd(f, &member.params().values, FD_STEP);
            Ok((value, g))
        }
    }
}

/// Per-sample `(L_PE(positive), log Σ exp(−L_PE/τ))` on the tape. The
/// contrastive part is `None` in plain-PE mode.
fn uduc_on_tape(t: &mut Tape, mean: Var, logvar: Var, set: &UDUCSampleSet, tau: f64) -> (Var, Option<Var>) {
    let neg_logvar = t.scale(logvar, -1.0);
    let inv_var = t.exp(neg_logvar);
    let log_det = t.sum(logvar);
    let mu_angle = t.value(mean)[ANGLE];
    let pe = |t: &mut Tape, x: &State| {
        // Shift the constant target by whole turns instead of wrapping on
        // the tape; the derivative is unchanged.
        let mut aligned = x.0;
        aligned[ANGLE] = mu_angle - wrap_angle(mu_angle - x[ANGLE]);
        let target = t.constant(aligned.to_vec());
        let r = t.sub(mean, target);
        let r2 = t.square(r);
        let w = t.mul(r2, inv_var);
        let q = t.sum(w);
        t.add(q, log_det)
    };
    let positive = pe(t, &set.positive);
    if tau.is_infinite() {
        return (positive, None);
    }
    let mut all = Vec::with_capacity(set.len());
    all.push(positive);
    for x in &set.negatives {
        all.push(pe(t, x));
    }
    let losses = t.concat(&all);
    let scores = t.scale(losses, -1.0 / tau);
    (positive, Some(t.log_sum_exp(scores)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{MlpMember, PhysicsMember, VarianceBounds};
    use crate::rng::derive_rng;
    use std::f64::consts::PI;

    fn pred(mean: [f64; 4], var: [f64; 4]) -> GaussianPrediction {
        GaussianPrediction {
            mean: State(mean),
            variance: var,
        }
    }

    #[test]
    fn pe_zero_residual_identity_cov() {
        let p = pred([0.3, 0.1, -0.2, 1.0], [1.0; 4]);
        assert_eq!(pe_loss_pred(&p, &p.mean), 0.0);
    }

    #[test]
    fn pe_hand_values() {
        // One active dimension: μ=0, s′=1, σ²=1 → 1.
        let p = pred([0.0; 4], [1.0; 4]);
        assert_eq!(pe_loss_pred(&p, &State([1.0, 0.0, 0.0, 0.0])), 1.0);
        // μ=(0,0), s′=(1,2), σ²=(1,4) → 1 + 1 + log 4.
        let p = pred([0.0; 4], [1.0, 4.0, 1.0, 1.0]);
        let v = pe_loss_pred(&p, &State([1.0, 2.0, 0.0, 0.0]));
        assert!((v - (2.0 + 4f64.ln())).abs() < 1e-15);
        assert!((v - 3.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn info_nce_hand_values() {
        assert!((info_nce_from_scores(&[0.7; 5]) - 5f64.ln()).abs() < 1e-14);
        assert_eq!(info_nce_from_scores(&[-3.0]), 0.0);
        let v = info_nce_from_scores(&[0.0, -(3f64.ln())]);
        assert!((v - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((v - 0.287_682_072_451_780_9).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_collapse_to_log_set_size() {
        let m = Member::Physics(PhysicsMember::new(0.1, 1.0));
        let s = State::new(0.0, 0.0, 0.05, 0.0);
        let a = Action::new(1.0);
        let mean = m.predict(&s, a).mean;
        // Every element identical → equal L_PE.
        let set = UDUCSampleSet {
            positive: mean,
            negatives: vec![mean; 6],
            context: (s, a),
        };
        let b = uduc_loss(&m, &set, 1.0);
        assert!((b.total - 7f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn angle_residual_wraps() {
        let p = pred([0.0, 0.0, PI - 0.01, 0.0], [1.0; 4]);
        let v = pe_loss_pred(&p, &State([0.0, 0.0, -PI + 0.01, 0.0]));
        assert!((v - 0.02f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn tape_matches_direct_across_the_wrap() {
        let m = Member::Mlp(MlpMember::random(8, VarianceBounds::default(), &mut derive_rng(2, 4)));
        let s = State::new(0.0, 0.0, PI - 1e-3, 0.0);
        let a = Action::new(0.0);
        let mut flipped = m.predict(&s, a).mean;
        flipped[2] -= 2.0 * PI;
        let set = UDUCSampleSet {
            positive: flipped,
            negatives: vec![s],
            context: (s, a),
        };
        let direct = batch_objective(&m, std::slice::from_ref(&set), &Objective::uduc(1.0)).unwrap();
        let (taped, _) = batch_objective_grad(&m, &[set], &Objective::uduc(1.0)).unwrap();
        assert!((direct.total - taped.total).abs() < 1e-9);
    }

    #[test]
    fn l2_values() {
        assert_eq!(l2_reg(&[0.0, 0.0]), 0.0);
        assert_eq!(l2_reg(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_reg(&[1.0; 4]), 2.0);
    }

    fn random_sets(m: &Member, n: usize, k: usize, seed: u64) -> Vec<UDUCSampleSet> {
        let mut rng = derive_rng(seed, 99);
        (0..n)
            .map(|_| {
                let s = State::new(rng.normal() * 0.1, rng.normal() * 0.1, rng.normal() * 0.1, rng.normal() * 0.1);
                let a = Action::new(rng.normal() * 3.0);
                let p = m.predict(&s, a);
                let mut draw = |scale: f64| {
                    let mut x = p.mean;
                    for i in 0..4 {
                        x[i] += scale * p.variance[i].sqrt() * rng.normal();
                    }
                    x
                };
                let positive = draw(1.0);
                let negatives = (0..k).map(|_| draw(2.0)).collect();
                UDUCSampleSet {
                    positive,
                    negatives,
                    context: (s, a),
                }
            })
            .collect()
    }

    #[test]
    fn batch_of_one_equals_single_sample() {
        let m = Member::Physics(PhysicsMember::new(0.12, 0.9));
        let sets = random_sets(&m, 1, 4, 3);
        let single = uduc_loss(&m, &sets[0], 1.0);
        let batch = batch_objective(&m, &sets, &Objective::uduc(1.0)).unwrap();
        assert_eq!(single.total, batch.total);
    }

    #[test]
    fn duplicated_batch_keeps_total() {
        let m = Member::Physics(PhysicsMember::new(0.12, 0.9));
        let sets = random_sets(&m, 5, 4, 4);
        let doubled: Vec<_> = sets.iter().chain(sets.iter()).cloned().collect();
        let a = batch_objective(&m, &sets, &Objective::uduc(0.5)).unwrap();
        let b = batch_objective(&m, &doubled, &Objective::uduc(0.5)).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn plain_pe_mode_drops_contrastive_term() {
        let m = Member::Physics(PhysicsMember::new(0.12, 0.9));
        let sets = random_sets(&m, 6, 4, 5);
        let b = batch_objective(&m, &sets, &Objective::plain_pe()).unwrap();
        let mean_pe: f64 = sets
            .iter()
            .map(|s| pe_loss(&m, &s.context.0, s.context.1, &s.positive))
            .sum::<f64>()
            / 6.0;
        assert_eq!(b.contrastive_term, 0.0);
        assert!((b.total - mean_pe).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = Member::Physics(PhysicsMember::new(0.1, 1.0));
        assert!(matches!(batch_objective(&m, &[], &Objective::uduc(1.0)), Err(Error::EmptyBatch)));
    }

    #[test]
    fn breakdown_sums_with_l2() {
        let m = Member::Mlp(MlpMember::random(8, VarianceBounds::default(), &mut derive_rng(5, 4)));
        let sets = random_sets(&m, 3, 3, 6);
        let obj = Objective::uduc(2.0).with_l2(0.01);
        let b = batch_objective(&m, &sets, &obj).unwrap();
        assert!((b.total - (b.nll_term + b.contrastive_term + 0.01 * b.l2_term)).abs() < 1e-12);
        let (bt, _) = batch_objective_grad(&m, &sets, &obj).unwrap();
        assert!((bt.total - b.total).abs() < 1e-10 * (1.0 + b.total.abs()));
        assert!((bt.contrastive_term - b.contrastive_term).abs() < 1e-10);
        assert!((bt.l2_term - b.l2_term).abs() < 1e-12);
    }

    fn mlp_sets(seed: u64) -> (Member, Vec<UDUCSampleSet>) {
        let mut rng = derive_rng(seed, 7);
        let m = Member::Mlp(MlpMember::random(64, VarianceBounds::default(), &mut rng));
        let sets = random_sets(&m, 3, 5, seed);
        (m, sets)
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / scale(a).max(scale(b)).max(1e-300)
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for seed in 0..3 {
            let (m, sets) = mlp_sets(seed);
            for obj in [Objective::plain_pe(), Objective::uduc(0.7)] {
                let (_, g) = batch_objective_grad(&m, &sets, &obj).unwrap();
                let f = |p: &[f64]| batch_objective(&m.with_params(p.to_vec()), &sets, &obj).unwrap().total;
                let fd = grad_fd(f, &m.params().values, FD_STEP);
                let e = rel_err(&g, &fd);
                assert!(e < 1e-4, "seed {seed} tau {}: {e}", obj.tau);
            }
        }
    }

    #[test]
    fn large_tau_gradient_approaches_pe() {
        let (m, sets) = mlp_sets(11);
        let (_, pe) = batch_objective_grad(&m, &sets, &Objective::plain_pe()).unwrap();
        let (_, u) = batch_objective_grad(&m, &sets, &Objective::uduc(1e6)).unwrap();
        assert!(rel_err(&u, &pe) < 1e-4);
        let (_, u1) = batch_objective_grad(&m, &sets, &Objective::uduc(1.0)).unwrap();
        assert!(rel_err(&u1, &pe) > 1e-3);
    }

    #[test]
    fn monotone_contrast() {
        let m = Member::Physics(PhysicsMember::new(0.1, 1.0));
        let mut set = random_sets(&m, 1, 3, 8).remove(0);
        // A large temperature keeps every term representable.
        let tau = 50.0;
        let mut prev = info_nce(&m, &set, tau);
        for _ in 0..5 {
            // Push one negative further from the predicted mean.
            let mean = m.predict(&set.context.0, set.context.1).mean;
            for i in 0..4 {
                set.negatives[1][i] = mean[i] + 1.5 * (set.negatives[1][i] - mean[i]) + 1e-3;
            }
            let next = info_nce(&m, &set, tau);
            assert!(next < prev, "{next} !< {prev}");
            prev = next;
        }
    }

    #[test]
    fn huge_losses_stay_finite() {
        let m = Member::Physics(PhysicsMember::new(0.1, 1.0));
        let s = State::ZERO;
        let a = Action::new(0.0);
        let mean = m.predict(&s, a).mean;
        // σ² = 1e-4, so a residual of 0.5 in every dimension gives L_PE ≈ 1e4.
        let far = State([mean[0] + 0.5, mean[1] + 0.5, mean[2] + 0.5, mean[3] + 0.5]);
        let set = UDUCSampleSet {
            positive: far,
            negatives: vec![far, mean],
            context: (s, a),
        };
        assert!(pe_loss(&m, &s, a, &far) > 9_000.0);
        for tau in [1e-3, 0.1, 1.0] {
            let b = uduc_loss(&m, &set, tau);
            assert!(b.is_finite(), "tau {tau}: {b:?}");
            assert!(info_nce(&m, &set, tau).is_finite());
        }
    }
}
