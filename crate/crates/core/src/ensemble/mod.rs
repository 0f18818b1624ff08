//! Probabilistic ensemble dynamics models.
//!
//! An [`Ensemble`] holds `B` live members, `B` slowly updated target copies
//! and the bootstrapped sub-datasets each member trains on. Members are
//! either all Gaussian MLPs or all physics-parameterized.

mod checkpoint;
mod mlp;
mod physics;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use mlp::{MlpMember, VarianceBounds};
pub use physics::PhysicsMember;

use crate::config::ModelKind;
use crate::diffnum::ParamVector;
use crate::env::{wrap_angle, PhysicsParams};
use crate::error::{Error, Result};
use crate::losses::UDUCSampleSet;
use crate::rng::SeededRng;
use crate::types::{Action, ReplayBuffer, State, Transition, STATE_DIM};

/// Diagonal Gaussian over the next state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrediction {
    pub mean: State,
    pub variance: [f64; STATE_DIM],
}

impl GaussianPrediction {
    /// One draw, with the angle wrapped into `(−π, π]`.
    pub fn sample(&self, rng: &mut SeededRng) -> State {
        let mut s = self.mean;
        for i in 0..STATE_DIM {
            s[i] += self.variance[i].sqrt() * rng.normal();
        }
        s[2] = wrap_angle(s[2]);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Member {
    Mlp(MlpMember),
    Physics(PhysicsMember),
}

impl Member {
    pub fn kind(&self) -> ModelKind {
        match self {
            Member::Mlp(_) => ModelKind::Mlp,
            Member::Physics(_) => ModelKind::Physics,
        }
    }

    pub fn predict(&self, s: &State, a: Action) -> GaussianPrediction {
        match self {
            Member::Mlp(m) => m.predict(s, a),
            Member::Physics(m) => m.predict(s, a),
        }
    }

    /// One draw from this member's predictive Gaussian.
    pub fn sample_next(&self, s: &State, a: Action, rng: &mut SeededRng) -> State {
        self.predict(s, a).sample(rng)
    }

    pub fn params(&self) -> &ParamVector {
        match self {
            Member::Mlp(m) => &m.params,
            Member::Physics(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        match self {
            Member::Mlp(m) => &mut m.params,
            Member::Physics(m) => &mut m.params,
        }
    }

    /// Same architecture, different parameter values.
    pub fn with_params(&self, values: Vec<f64>) -> Member {
        let mut m = self.clone();
        m.params_mut().values = values;
        m
    }

    pub fn as_physics(&self) -> Option<&PhysicsMember> {
        match self {
            Member::Physics(p) => Some(p),
            Member::Mlp(_) => None,
        }
    }

    fn same_shape(&self, other: &Member) -> bool {
        match (self, other) {
            (Member::Mlp(a), Member::Mlp(b)) => {
                a.hidden == b.hidden && a.bounds == b.bounds && a.params.len() == b.params.len()
            }
            (Member::Physics(a), Member::Physics(b)) => a.fixed_variance == b.fixed_variance,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<Member>,
    targets: Vec<Member>,
    sub_buffers: Vec<Vec<Transition>>,
}

impl Ensemble {
    /// Targets start as exact copies of the live members.
    pub fn new(members: Vec<Member>) -> Self {
        let targets = members.clone();
        Self::with_targets(members, targets).expect("members are consistent")
    }

    pub fn with_targets(members: Vec<Member>, targets: Vec<Member>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Checkpoint("ensemble needs at least one member".into()));
        }
        if members.len() != targets.len()
            || members.iter().any(|m| !m.same_shape(&members[0]))
            || members.iter().zip(&targets).any(|(m, t)| !m.same_shape(t))
        {
            return Err(Error::Checkpoint("members and targets differ in shape".into()));
        }
        let b = members.len();
        Ok(Ensemble {
            members,
            targets,
            sub_buffers: vec![Vec::new(); b],
        })
    }

    /// Physics members with `(m_b, l_b)` log-uniform within `±spread` of nominal.
    pub fn physics_random(b: usize, nominal: &PhysicsParams, spread: f64, rng: &mut SeededRng) -> Self {
        let (lo, hi) = ((1.0 - spread).ln(), (1.0 + spread).ln());
        let members = (0..b)
            .map(|_| {
                let m = nominal.pole_mass.ln() + rng.uniform_range(lo, hi);
                let l = nominal.pole_length.ln() + rng.uniform_range(lo, hi);
                Member::Physics(PhysicsMember::from_log_params(vec![m, l]))
            })
            .collect();
        Self::new(members)
    }

    pub fn physics_from(params: &[(f64, f64)]) -> Self {
        Self::new(
            params
                .iter()
                .map(|&(m, l)| Member::Physics(PhysicsMember::new(m, l)))
                .collect(),
        )
    }

    pub fn mlp_random(b: usize, hidden: usize, bounds: VarianceBounds, rng: &mut SeededRng) -> Self {
        Self::new(
            (0..b)
                .map(|_| Member::Mlp(MlpMember::random(hidden, bounds, rng)))
                .collect(),
        )
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn kind(&self) -> ModelKind {
        self.members[0].kind()
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn member(&self, b: usize) -> &Member {
        &self.members[b]
    }

    pub fn member_mut(&mut self, b: usize) -> &mut Member {
        &mut self.members[b]
    }

    pub fn targets(&self) -> &[Member] {
        &self.targets
    }

    pub fn target(&self, b: usize) -> &Member {
        &self.targets[b]
    }

    pub fn sub_buffer(&self, b: usize) -> &[Transition] {
        &self.sub_buffers[b]
    }

    pub fn set_sub_buffers(&mut self, buffers: Vec<Vec<Transition>>) {
        assert_eq!(buffers.len(), self.size());
        self.sub_buffers = buffers;
    }

    /// `θ̄ ← ρ·θ + (1 − ρ)·θ̄` for every member.
    pub fn polyak_update(&mut self, rho: f64) {
        debug_assert!((0.0..=1.0).contains(&rho));
        for (live, target) in self.members.iter().zip(self.targets.iter_mut()) {
            let lv = &live.params().values;
            for (t, l) in target.params_mut().values.iter_mut().zip(lv) {
                *t = rho * l + (1.0 - rho) * *t;
            }
        }
    }

    /// Contrastive set for member `b`: the observed next state as positive,
    /// one sample from every other target member, plus one from `b`'s own
    /// target when `self_reg` is on.
    pub fn build_sample_set(
        &self,
        b: usize,
        s: &State,
        a: Action,
        s_true: &State,
        self_reg: bool,
        rng: &mut SeededRng,
    ) -> UDUCSampleSet {
        assert!(b < self.size(), "member index out of range");
        let negatives = self
            .targets
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != b || self_reg)
            .map(|(_, t)| t.sample_next(s, a, rng))
            .collect();
        UDUCSampleSet {
            positive: *s_true,
            negatives,
            context: (*s, a),
        }
    }

    /// Trajectory-sampling rollout through the target members: every step
    /// picks a member uniformly and samples from its Gaussian.
    pub fn ts_rollout(&self, s0: &State, actions: &[Action], rng: &mut SeededRng) -> Vec<State> {
        let mut out = Vec::with_capacity(actions.len());
        let mut s = *s0;
        for &a in actions {
            let b = rng.index(self.size());
            s = self.targets[b].sample_next(&s, a, rng);
            out.push(s);
        }
        out
    }

    /// `(m_b, l_b)` of every live physics member.
    pub fn physics_params(&self) -> Option<Vec<(f64, f64)>> {
        self.members
            .iter()
            .map(|m| m.as_physics().map(|p| (p.pole_mass(), p.pole_length())))
            .collect()
    }
}

/// `b` sub-datasets of `n` transitions each, drawn i.i.d. with replacement.
pub fn bootstrap(buffer: &ReplayBuffer, b: usize, n: usize, rng: &mut SeededRng) -> Result<Vec<Vec<Transition>>> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let len = buffer.len();
    Ok((0..b)
        .map(|_| (0..n).map(|_| *buffer.get(rng.index(len)).expect("index in range")).collect())
        .collect())
}
