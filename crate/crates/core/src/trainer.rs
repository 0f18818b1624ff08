//! Online training loop: act with CEM-MPC on the nominal cart-pole, store
//! transitions, and periodically refit every ensemble member on its own
//! bootstrap with the UDUC objective before refreshing the targets.

use rayon::prelude::*;
use serde::Serialize;

use crate::cem::{CemConfig, MpcController};
use crate::config::{ModelKind, ValidatedConfig};
use crate::diffnum::{adam_step_in_place, AdamState};
use crate::ensemble::{bootstrap, Ensemble, Member, VarianceBounds};
use crate::env::{EnvInstance, PhysicsParams};
use crate::error::{Error, Result};
use crate::losses::{batch_objective_grad, LossBreakdown, Objective, UDUCSampleSet};
use crate::rng::{derive_rng, streams, SeededRng};
use crate::types::{ReplayBuffer, Transition};

/// One environment step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    /// 1-based global step.
    pub step: usize,
    pub episode: usize,
    pub action: f64,
    pub reward: f64,
    /// Return accumulated so far in the current episode.
    pub episode_return: f64,
    pub plan_best_return: f64,
}

/// Per-member summary of one update event (means over its minibatches).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub event: usize,
    pub member: usize,
    pub total: f64,
    pub nll: f64,
    pub contrastive: f64,
    pub l2: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub losses: Vec<LossRecord>,
    pub update_events: usize,
}

impl TrainLog {
    /// Total return of every finished episode, in order.
    pub fn episode_returns(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for w in self.steps.windows(2) {
            if w[1].episode != w[0].episode {
                out.push(w[0].episode_return);
            }
        }
        if let Some(last) = self.steps.last() {
            out.push(last.episode_return);
        }
        out
    }
}

pub struct TrainRunState {
    pub step: usize,
    pub env: EnvInstance,
    pub ensemble: Ensemble,
    pub buffer: ReplayBuffer,
    pub adam_states: Vec<AdamState>,
    pub controller: MpcController,
    pub log: TrainLog,
    seed: u64,
}

/// Fresh ensemble for `cfg`, drawn from the ensemble-init stream.
pub fn init_ensemble(cfg: &ValidatedConfig) -> Ensemble {
    let mut rng = derive_rng(cfg.seed, streams::ENSEMBLE_INIT);
    match cfg.model {
        ModelKind::Physics => {
            Ensemble::physics_random(cfg.ensemble_size, &PhysicsParams::nominal(), cfg.init_spread, &mut rng)
        }
        ModelKind::Mlp => Ensemble::mlp_random(cfg.ensemble_size, cfg.hidden_units, VarianceBounds::default(), &mut rng),
    }
}

impl TrainRunState {
    pub fn new(cfg: &ValidatedConfig, cem_cfg: &CemConfig) -> Self {
        Self::with_ensemble(cfg, cem_cfg, init_ensemble(cfg))
    }

    pub fn with_ensemble(cfg: &ValidatedConfig, cem_cfg: &CemConfig, ensemble: Ensemble) -> Self {
        let n_params = ensemble.member(0).params().len();
        TrainRunState {
            step: 0,
            env: EnvInstance::new(
                PhysicsParams::nominal(),
                cfg.episode_length,
                derive_rng(cfg.seed, streams::ENV_NOISE),
            ),
            adam_states: vec![AdamState::new(n_params, cfg.model_learning_rate); ensemble.size()],
            ensemble,
            buffer: ReplayBuffer::new(cfg.buffer_capacity()),
            controller: MpcController::new(cem_cfg.clone(), derive_rng(cfg.seed, streams::CEM)),
            log: TrainLog::default(),
            seed: cfg.seed,
        }
    }

    /// One environment step; resets the episode when it finishes.
    pub fn env_step(&mut self) -> Result<Transition> {
        let s = self.env.state();
        let a = self.controller.act(&self.ensemble, &s);
        let r = self.env.step(a)?;
        let t = Transition {
            state: s,
            action: a,
            reward: r.reward,
            next_state: r.state,
        };
        self.buffer.push(t);
        self.step += 1;
        let episode = (self.step - 1) / self.env.episode_length;
        let prev = self
            .log
            .steps
            .last()
            .filter(|p| p.episode == episode)
            .map_or(0.0, |p| p.episode_return);
        self.log.steps.push(StepRecord {
            step: self.step,
            episode,
            action: a.force(),
            reward: r.reward,
            episode_return: prev + r.reward,
            plan_best_return: self.controller.diagnostics().best_return,
        });
        if r.done {
            self.env.reset();
            self.controller.reset();
        }
        Ok(t)
    }
}

/// Runs the full loop. `on_update` sees the ensemble after every update
/// event (used for periodic checkpoints).
pub fn run_training_with(
    cfg: &ValidatedConfig,
    cem_cfg: &CemConfig,
    on_update: &mut dyn FnMut(usize, &Ensemble) -> Result<()>,
) -> Result<(Ensemble, TrainLog)> {
    let mut run = TrainRunState::new(cfg, cem_cfg);
    while run.step < cfg.max_training_steps {
        run.env_step()?;
        if run.step % cfg.model_update_frequency == 0 {
            update_models(&mut run, cfg)?;
            on_update(run.log.update_events, &run.ensemble)?;
        }
    }
    Ok((run.ensemble, run.log))
}

pub fn run_training(cfg: &ValidatedConfig, cem_cfg: &CemConfig) -> Result<(Ensemble, TrainLog)> {
    run_training_with(cfg, cem_cfg, &mut |_, _| Ok(()))
}

pub fn objective(cfg: &ValidatedConfig) -> Objective {
    Objective {
        tau: cfg.tau,
        l2_coefficient: cfg.l2_coefficient,
    }
}

struct MemberUpdate {
    params: Vec<f64>,
    adam: AdamState,
    mean: LossBreakdown,
    grad_norm: f64,
    minibatches: usize,
}

/// One update event: re-bootstrap, train each member for `model_epochs`
/// passes over its sub-dataset against frozen targets, then refresh targets.
pub fn update_models(run: &mut TrainRunState, cfg: &ValidatedConfig) -> Result<Vec<LossBreakdown>> {
    if run.buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let event = run.log.update_events as u64;
    let b = run.ensemble.size();
    let n = cfg.bootstrap_samples.unwrap_or(run.buffer.len());
    let mut boot_rng = derive_rng(run.seed, streams::BOOTSTRAP).substream(&[event]);
    run.ensemble.set_sub_buffers(bootstrap(&run.buffer, b, n, &mut boot_rng)?);

    let frozen = &run.ensemble;
    let obj = objective(cfg);
    let neg_root = derive_rng(run.seed, streams::NEGATIVES).substream(&[event]);
    let step = run.step;
    let updates: Vec<MemberUpdate> = (0..b)
        .into_par_iter()
        .map(|m| train_member(frozen, m, run.adam_states[m].clone(), cfg, &obj, &neg_root, step))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(b);
    for (m, u) in updates.into_iter().enumerate() {
        run.ensemble.member_mut(m).params_mut().values = u.params;
        run.adam_states[m] = u.adam;
        run.log.losses.push(LossRecord {
            step,
            event: event as usize,
            member: m,
            total: u.mean.total,
            nll: u.mean.nll_term,
            contrastive: u.mean.contrastive_term,
            l2: u.mean.l2_term,
            grad_norm: u.grad_norm,
            minibatches: u.minibatches,
        });
        out.push(u.mean);
    }
    run.ensemble.polyak_update(cfg.rho);
    run.log.update_events += 1;
    Ok(out)
}

fn train_member(
    frozen: &Ensemble,
    m: usize,
    mut adam: AdamState,
    cfg: &ValidatedConfig,
    obj: &Objective,
    neg_root: &SeededRng,
    step: usize,
) -> Result<MemberUpdate> {
    let data = frozen.sub_buffer(m);
    let mut member: Member = frozen.member(m).clone();
    let batch = cfg.model_batch_size;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let member_rng = neg_root.substream(&[m as u64]);

    let fixed_sets: Option<Vec<UDUCSampleSet>> = (!cfg.resample_negatives).then(|| {
        let mut rng = member_rng.substream(&[u64::MAX]);
        data.iter()
            .map(|t| frozen.build_sample_set(m, &t.state, t.action, &t.next_state, cfg.self_regularization, &mut rng))
            .collect()
    });

    let mut sum = LossBreakdown::default();
    let mut grad_norm_sum = 0.0;
    let mut count = 0usize;
    for epoch in 0..cfg.model_epochs {
        shuffle(&mut order, &mut member_rng.substream(&[epoch as u64, u64::MAX - 1]));
        for (k, chunk) in order.chunks(batch).enumerate() {
            let sets: Vec<UDUCSampleSet> = match &fixed_sets {
                Some(all) => chunk.iter().map(|&i| all[i].clone()).collect(),
                None => {
                    let mut rng = member_rng.substream(&[epoch as u64, k as u64]);
                    chunk
                        .iter()
                        .map(|&i| {
                            let t = &data[i];
                            frozen.build_sample_set(
                                m,
                                &t.state,
                                t.action,
                                &t.next_state,
                                cfg.self_regularization,
                                &mut rng,
                            )
                        })
                        .collect()
                }
            };
            let non_finite = |breakdown: LossBreakdown, params: &[f64]| Error::NonFiniteLoss {
                step,
                member: m,
                breakdown,
                params: params.to_vec(),
            };
            let (loss, grad) = match batch_objective_grad(&member, &sets, obj) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    let b = crate::losses::batch_objective(&member, &sets, obj).unwrap_or_default();
                    return Err(non_finite(b, &member.params().values));
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(non_finite(loss, &member.params().values));
            }
            adam_step_in_place(&mut member.params_mut().values, &grad, &mut adam)?;
            sum.total += loss.total;
            sum.nll_term += loss.nll_term;
            sum.contrastive_term += loss.contrastive_term;
            sum.l2_term += loss.l2_term;
            grad_norm_sum += grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            count += 1;
        }
    }
    let c = count.max(1) as f64;
    Ok(MemberUpdate {
        params: member.params().values.clone(),
        adam,
        mean: LossBreakdown {
            total: sum.total / c,
            nll_term: sum.nll_term / c,
            contrastive_term: sum.contrastive_term / c,
            l2_term: sum.l2_term / c,
        },
        grad_norm: grad_norm_sum / c,
        minibatches: count,
    })
}

/// Fisher–Yates.
fn shuffle(v: &mut [usize], rng: &mut SeededRng) {
    for i in (1..v.len()).rev() {
        let j = rng.index(i + 1);
        v.swap(i, j);
    }
}

/// Standard deviation across members of each learned log-parameter
/// (physics members only).
pub fn log_param_spread(e: &Ensemble) -> Option<[f64; 2]> {
    let p = e.physics_params()?;
    let n = p.len() as f64;
    let stat = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let mean = p.iter().map(f).sum::<f64>() / n;
        (p.iter().map(|v| (f(v) - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    Some([stat(&|v| v.0.ln()), stat(&|v| v.1.ln())])
}
