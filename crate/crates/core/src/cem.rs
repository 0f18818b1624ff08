//! Cross-entropy-method model-predictive control over the ensemble's
//! target members.
//!
//! Candidates are ranked by predicted return (descending). This is the same
//! ordering as ranking by `exp(−Σ r)` ascending, without the underflow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, Member};
use crate::env::{dynamics_mean, reward, wrap_angle, PhysicsParams, DT};
use crate::rng::SeededRng;
use crate::types::{Action, State, FORCE_LIMIT, STATE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub horizon: usize,
    pub population: usize,
    pub elite_count: usize,
    pub iterations: usize,
    pub particles: usize,
    pub replan_frequency: usize,
    /// Initial per-coordinate standard deviation, in newtons.
    pub init_std: f64,
    /// Shift the previous plan forward instead of restarting from zero.
    pub warm_start: bool,
    pub variance_floor: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        let population = 500;
        CemConfig {
            horizon: 15,
            population,
            elite_count: elite_count(population, 0.1),
            iterations: 5,
            particles: 20,
            replan_frequency: 1,
            init_std: 1.0,
            warm_start: true,
            variance_floor: 1e-4,
        }
    }
}

/// `ceil(ratio · population)`, at least 1.
pub fn elite_count(population: usize, ratio: f64) -> usize {
    ((ratio * population as f64).ceil() as usize).max(1)
}

impl CemConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [
            ("horizon", self.horizon),
            ("population", self.population),
            ("elite_count", self.elite_count),
            ("iterations", self.iterations),
            ("particles", self.particles),
            ("replan_frequency", self.replan_frequency),
        ] {
            if val == 0 {
                v.push(format!("{name} must be ≥ 1"));
            }
        }
        if self.elite_count > self.population {
            v.push("elite_count must be ≤ population".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            v.push("init_std must be a finite value > 0".into());
        }
        if !(self.variance_floor >= 0.0 && self.variance_floor.is_finite()) {
            v.push("variance_floor must be a finite value ≥ 0".into());
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateKey {
    pub step: u64,
    pub iteration: u64,
    pub candidate: u64,
}

/// Scores one open-loop plan (higher is better).
pub trait PlanScorer: Sync {
    fn score(&self, plan: &[f64], key: CandidateKey) -> f64;
}

impl<F> PlanScorer for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn score(&self, plan: &[f64], _key: CandidateKey) -> f64 {
        self(plan)
    }
}

/// Target members with per-call constants hoisted out of the rollout loop.
enum Prepared<'a> {
    Physics { params: PhysicsParams, std: [f64; STATE_DIM] },
    Other(&'a Member),
}

impl Prepared<'_> {
    fn sample_next(&self, s: &State, a: Action, rng: &mut SeededRng) -> State {
        match self {
            Prepared::Physics { params, std } => {
                let mut next = dynamics_mean(s, a, params, DT);
                for i in 0..STATE_DIM {
                    next[i] += std[i] * rng.normal();
                }
                next[2] = wrap_angle(next[2]);
                next
            }
            Prepared::Other(m) => m.sample_next(s, a, rng),
        }
    }
}

fn prepare(ensemble: &Ensemble) -> Vec<Prepared<'_>> {
    ensemble
        .targets()
        .iter()
        .map(|m| match m {
            Member::Physics(p) => Prepared::Physics {
                params: p.physics(),
                std: p.fixed_variance.map(f64::sqrt),
            },
            other => Prepared::Other(other),
        })
        .collect()
}

/// Rolls plans through the ensemble's targets with trajectory sampling.
pub struct EnsembleScorer<'a> {
    targets: Vec<Prepared<'a>>,
    s0: State,
    particles: usize,
    root: SeededRng,
}

impl<'a> EnsembleScorer<'a> {
    pub fn new(ensemble: &'a Ensemble, s0: State, particles: usize, root: SeededRng) -> Self {
        EnsembleScorer {
            targets: prepare(ensemble),
            s0,
            particles,
            root,
        }
    }
}

impl PlanScorer for EnsembleScorer<'_> {
    fn score(&self, plan: &[f64], key: CandidateKey) -> f64 {
        let rng = self.root.substream(&[key.step, key.iteration, key.candidate]);
        particle_mean_return(&self.targets, &self.s0, plan, self.particles, &rng)
    }
}

fn rollout_return(targets: &[Prepared], s0: &State, plan: &[f64], rng: &mut SeededRng) -> f64 {
    let mut s = *s0;
    let mut total = 0.0;
    for &u in plan {
        let m = rng.index(targets.len());
        s = targets[m].sample_next(&s, Action::new(u), rng);
        total += reward(&s);
    }
    total
}

fn particle_mean_return(targets: &[Prepared], s0: &State, plan: &[f64], particles: usize, rng: &SeededRng) -> f64 {
    (0..particles as u64)
        .map(|p| rollout_return(targets, s0, plan, &mut rng.substream(&[p])))
        .sum::<f64>()
        / particles as f64
}

/// Mean return of `particles` trajectory-sampling rollouts of `actions`.
/// Particle `p` draws from `rng.substream([p])`.
pub fn score_candidate(actions: &[Action], ensemble: &Ensemble, s0: &State, particles: usize, rng: &SeededRng) -> f64 {
    let plan: Vec<f64> = actions.iter().map(|a| a.force()).collect();
    particle_mean_return(&prepare(ensemble), s0, &plan, particles, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemOutcome {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Return of the best elite found so far, after each iteration.
    pub best_returns: Vec<f64>,
    /// Best candidate return within each iteration's own population.
    pub iteration_best: Vec<f64>,
    /// The best elite found so far.
    pub best_plan: Vec<f64>,
}

/// Sample → score → keep the top `elite_count` → refit, `iterations` times.
pub fn cem_optimize<S: PlanScorer + ?Sized>(
    scorer: &S,
    cfg: &CemConfig,
    init_mean: Vec<f64>,
    rng: &mut SeededRng,
    step: u64,
) -> CemOutcome {
    let dim = init_mean.len();
    let mut mean = init_mean;
    let mut variance = vec![cfg.init_std * cfg.init_std; dim];
    let mut best_returns = Vec::with_capacity(cfg.iterations);
    let mut iteration_best = Vec::with_capacity(cfg.iterations);
    let mut best_plan = mean.clone();
    let mut incumbent = f64::NEG_INFINITY;
    let k = cfg.elite_count.min(cfg.population);

    for it in 0..cfg.iterations {
        let std: Vec<f64> = variance.iter().map(|v| v.sqrt()).collect();
        let samples: Vec<Vec<f64>> = (0..cfg.population)
            .map(|_| {
                (0..dim)
                    .map(|d| (mean[d] + std[d] * rng.normal()).clamp(-FORCE_LIMIT, FORCE_LIMIT))
                    .collect()
            })
            .collect();
        let scores: Vec<f64> = samples
            .par_iter()
            .enumerate()
            .map(|(c, x)| {
                scorer.score(
                    x,
                    CandidateKey {
                        step,
                        iteration: it as u64,
                        candidate: c as u64,
                    },
                )
            })
            .collect();
        let mut order: Vec<usize> = (0..cfg.population).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let top = scores[order[0]];
        iteration_best.push(top);
        if top > incumbent {
            incumbent = top;
            best_plan.clone_from(&samples[order[0]]);
        }
        best_returns.push(incumbent);

        let elites = &order[..k];
        for d in 0..dim {
            let m = elites.iter().map(|&i| samples[i][d]).sum::<f64>() / k as f64;
            let v = elites.iter().map(|&i| (samples[i][d] - m).powi(2)).sum::<f64>() / k as f64;
            mean[d] = m;
            variance[d] = v.max(cfg.variance_floor);
        }
    }
    CemOutcome {
        mean,
        variance,
        best_returns,
        iteration_best,
        best_plan,
    }
}

/// One planning call from a zero initial mean; returns the first action.
pub fn cem_plan(ensemble: &Ensemble, s0: &State, cfg: &CemConfig, rng: &mut SeededRng) -> Action {
    let scorer = EnsembleScorer::new(ensemble, *s0, cfg.particles, rng.substream(&[SCORING_TAG]));
    let out = cem_optimize(&scorer, cfg, vec![0.0; cfg.horizon], rng, 0);
    Action::new(out.mean[0])
}

const SCORING_TAG: u64 = 0x5C0_4E;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanDiagnostics {
    pub best_return: f64,
    pub elite_mean_norm: f64,
    pub elite_variance_norm: f64,
}

/// Receding-horizon controller state.
#[derive(Debug, Clone)]
pub struct MpcController {
    cfg: CemConfig,
    root: SeededRng,
    plan: Option<Vec<f64>>,
    offset: usize,
    step: u64,
    plans_made: usize,
    last: PlanDiagnostics,
}

impl MpcController {
    pub fn new(cfg: CemConfig, rng: SeededRng) -> Self {
        MpcController {
            cfg,
            root: rng,
            plan: None,
            offset: 0,
            step: 0,
            plans_made: 0,
            last: PlanDiagnostics::default(),
        }
    }

    pub fn config(&self) -> &CemConfig {
        &self.cfg
    }

    /// Forget the current plan (start of a new episode).
    pub fn reset(&mut self) {
        self.plan = None;
        self.offset = 0;
    }

    pub fn plans_made(&self) -> usize {
        self.plans_made
    }

    pub fn diagnostics(&self) -> PlanDiagnostics {
        self.last
    }

    /// The mean the next planning call would start from.
    pub fn initial_mean(&self) -> Vec<f64> {
        let h = self.cfg.horizon;
        match (&self.plan, self.cfg.warm_start) {
            (Some(prev), true) => (0..h).map(|i| prev.get(i + self.offset).copied().unwrap_or(0.0)).collect(),
            _ => vec![0.0; h],
        }
    }

    pub fn act(&mut self, ensemble: &Ensemble, obs: &State) -> Action {
        if self.plan.is_none() || self.offset >= self.cfg.replan_frequency || self.offset >= self.cfg.horizon {
            let init = self.initial_mean();
            let mut rng = self.root.substream(&[self.step]);
            let scorer = EnsembleScorer::new(ensemble, *obs, self.cfg.particles, self.root.substream(&[SCORING_TAG]));
            let out = cem_optimize(&scorer, &self.cfg, init, &mut rng, self.step);
            self.last = PlanDiagnostics {
                best_return: out.best_returns.last().copied().unwrap_or(0.0),
                elite_mean_norm: out.mean.iter().map(|v| v * v).sum::<f64>().sqrt(),
                elite_variance_norm: out.variance.iter().map(|v| v * v).sum::<f64>().sqrt(),
            };
            self.plan = Some(out.mean);
            self.offset = 0;
            self.plans_made += 1;
        }
        let plan = self.plan.as_ref().expect("plan exists");
        let a = Action::new(plan[self.offset]);
        self.offset += 1;
        self.step += 1;
        a
    }
}
