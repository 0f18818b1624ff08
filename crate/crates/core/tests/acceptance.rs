//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report reaches the
//! terminal. The training and sweep criteria dominate the runtime.

use std::time::Instant;

use uduc_core::cem::{cem_optimize, CemConfig};
use uduc_core::cli::{cmd_eval, cmd_train, EvalArgs, GridArgs, SpacingArg, TrainArgs};
use uduc_core::config::{validate_config, ExperimentConfig, ValidatedConfig};
use uduc_core::diffnum::{grad_fd, FD_STEP};
use uduc_core::ensemble::{Ensemble, Member, MlpMember, PhysicsMember, VarianceBounds};
use uduc_core::env::{make_grid_spaced, ParamName, PhysicsParams, Spacing};
use uduc_core::losses::{batch_objective, batch_objective_grad, info_nce, pe_loss, uduc_loss, Objective, UDUCSampleSet};
use uduc_core::rng::{derive_rng, SeededRng};
use uduc_core::robust::{auc_of, evaluate_point, evaluate_sweep, make_baseline_ensemble, robust_auc, BaselineKind};
use uduc_core::trainer::{log_param_spread, run_training};
use uduc_core::types::{Action, State};

/// Criteria that compare trained models across seeds.
const DIRECTIONAL: [u32; 3] = [5, 6, 7];

struct Report {
    failed: Vec<u32>,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("{} {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id);
        }
    }
}

fn random_state(rng: &mut SeededRng, scale: f64) -> State {
    State::new(
        scale * rng.normal(),
        scale * rng.normal(),
        scale * rng.normal(),
        scale * rng.normal(),
    )
}

/// A sample set around member `m`'s prediction: positive at 1σ, negatives
/// at 2σ.
fn sample_set(m: &Member, negatives: usize, rng: &mut SeededRng) -> UDUCSampleSet {
    let s = random_state(rng, 0.2);
    let a = Action::new(3.0 * rng.normal());
    let p = m.predict(&s, a);
    let mut draw = |k: f64| {
        let mut x = p.mean;
        for i in 0..4 {
            x[i] += k * p.variance[i].sqrt() * rng.normal();
        }
        x
    };
    let positive = draw(1.0);
    UDUCSampleSet {
        positive,
        negatives: (0..negatives).map(|_| draw(2.0)).collect(),
        context: (s, a),
    }
}

fn random_member(rng: &mut SeededRng) -> Member {
    if rng.uniform() < 0.5 {
        Member::Physics(PhysicsMember::new(0.1 * (rng.normal() * 0.3).exp(), (rng.normal() * 0.3).exp()))
    } else {
        Member::Mlp(MlpMember::random(16, VarianceBounds::default(), rng))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(b)).max(f64::MIN_POSITIVE)
}

fn loss_identity(r: &mut Report) {
    let t = Instant::now();
    let mut rng = derive_rng(1, 0xACC1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = random_member(&mut rng);
        let k = 1 + (rng.uniform() * 9.0) as usize;
        let set = sample_set(&m, k, &mut rng);
        let tau = (rng.uniform_range(0.1f64.ln(), 10f64.ln())).exp();
        let direct = uduc_loss(&m, &set, tau).total;
        let (s, a) = set.context;
        let rewritten = (1.0 - 1.0 / tau) * pe_loss(&m, &s, a, &set.positive) + info_nce(&m, &set, tau);
        worst = worst.max((direct - rewritten).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(
        1,
        "loss identity",
        worst < 1e-10 && secs < 5.0,
        format!("max |direct − rewritten| = {worst:.2e} over 1000 draws (tol 1e-10), {secs:.2}s (< 5s)"),
    );
}

fn mlp_batch(seed: u64) -> (Member, Vec<UDUCSampleSet>) {
    let mut rng = derive_rng(seed, 0xACC2);
    let m = Member::Mlp(MlpMember::random(64, VarianceBounds::default(), &mut rng));
    let sets = (0..2).map(|_| sample_set(&m, 4, &mut rng)).collect();
    (m, sets)
}

fn gradient_suite(r: &mut Report) {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (m, sets) = mlp_batch(seed);
        for obj in [Objective::plain_pe(), Objective::uduc(1.0)] {
            let (_, g) = batch_objective_grad(&m, &sets, &obj).expect("finite");
            let f = |p: &[f64]| batch_objective(&m.with_params(p.to_vec()), &sets, &obj).expect("finite").total;
            worst = worst.max(rel_err(&g, &grad_fd(f, &m.params().values, FD_STEP)));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(
        2,
        "gradient suite",
        worst < 1e-4 && secs < 60.0,
        format!("max relative error {worst:.2e} on 2×64 networks, 100 seeds, PE and UDUC (tol 1e-4), {secs:.1}s (< 60s)"),
    );
}

fn tau_degeneracy(r: &mut Report) {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (m, sets) = mlp_batch(1000 + seed);
        let (_, pe) = batch_objective_grad(&m, &sets, &Objective::plain_pe()).expect("finite");
        let (_, u) = batch_objective_grad(&m, &sets, &Objective::uduc(1e6)).expect("finite");
        worst = worst.max(rel_err(&u, &pe));
    }
    r.line(
        3,
        "tau degeneracy",
        worst < 1e-4,
        format!("max ‖∇UDUC(τ=1e6) − ∇PE‖/‖∇PE‖ = {worst:.2e} over 10 networks (tol 1e-4)"),
    );
}

fn table_five(seed: u64, tau: f64, self_reg: bool) -> ValidatedConfig {
    validate_config(ExperimentConfig {
        seed,
        tau,
        self_regularization: self_reg,
        ..ExperimentConfig::default()
    })
    .expect("defaults are valid")
}

fn train(seed: u64, tau: f64, self_reg: bool) -> Ensemble {
    let c = table_five(seed, tau, self_reg);
    run_training(&c, &c.cem).expect("training succeeds").0
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Trained {
    pe: Vec<Ensemble>,
    uduc: Vec<Ensemble>,
    uduc_no_self: Vec<Ensemble>,
}

fn nominal_control(r: &mut Report, trained: &Trained, train_secs: f64) {
    let t = Instant::now();
    let cem = CemConfig::default();
    let mut meds = Vec::new();
    for e in [&trained.pe[0], &trained.uduc[0]] {
        let mut returns = evaluate_point(e, &cem, PhysicsParams::nominal(), 20, 0, u64::MAX).expect("eval");
        meds.push(median(&mut returns));
    }
    let secs = train_secs + t.elapsed().as_secs_f64();
    r.line(
        4,
        "nominal control",
        meds.iter().all(|m| *m >= 90.0) && secs < 1200.0,
        format!(
            "median return over 20 episodes: PE {} UDUC {} (≥ 90), train+eval {secs:.0}s (< 1200s)",
            meds[0], meds[1]
        ),
    );
}

fn diversity(r: &mut Report, trained: &Trained) {
    let spread = |e: &Ensemble| {
        let [m, l] = log_param_spread(e).expect("physics");
        m.hypot(l)
    };
    let mut wins = 0;
    let mut detail = Vec::new();
    for (p, u) in trained.pe.iter().zip(&trained.uduc) {
        let (sp, su) = (spread(p), spread(u));
        wins += usize::from(su > sp);
        detail.push(format!("{su:.4}/{sp:.4}"));
    }
    r.line(
        5,
        "diversity",
        wins == 5,
        format!("UDUC > PE log-parameter spread in {wins}/5 seeds (need 5/5); UDUC/PE {}", detail.join(" ")),
    );
}

/// Reduced planner for the sweeps; training and nominal control use the
/// full planner.
fn sweep_cem() -> CemConfig {
    CemConfig {
        population: 50,
        elite_count: 5,
        iterations: 3,
        particles: 2,
        ..CemConfig::default()
    }
}

fn aucs(e: &Ensemble, seed: u64) -> [f64; 2] {
    let cem = sweep_cem();
    [ParamName::PoleMass, ParamName::PoleLength].map(|p| {
        let (lo, hi) = p.test_range();
        let grid = make_grid_spaced(p, lo, hi, 20, Spacing::Log).expect("grid").with_episodes(20);
        robust_auc(&evaluate_sweep(e, &cem, &grid, seed).expect("sweep"), 100.0).expect("auc")
    })
}

fn robustness(r: &mut Report, trained: &Trained) {
    let t = Instant::now();
    let auc_of_all = |v: &[Ensemble]| -> Vec<[f64; 2]> { v.iter().enumerate().map(|(s, e)| aucs(e, s as u64)).collect() };
    let pe = auc_of_all(&trained.pe);
    let uduc = auc_of_all(&trained.uduc);
    let no_self = auc_of_all(&trained.uduc_no_self);
    for (i, p) in ["pole mass", "pole length"].iter().enumerate() {
        let wins = pe.iter().zip(&uduc).filter(|(a, b)| b[i] > a[i]).count();
        let pairs: Vec<String> = pe.iter().zip(&uduc).map(|(a, b)| format!("{:.4}/{:.4}", b[i], a[i])).collect();
        r.line(
            6,
            &format!("robustness ordering ({p})"),
            wins >= 4,
            format!("UDUC > PE Robust-AUC in {wins}/5 seeds (need ≥ 4); UDUC/PE {}", pairs.join(" ")),
        );
    }
    let mean = |v: &[[f64; 2]]| v.iter().map(|a| a[0] + a[1]).sum::<f64>() / (2 * v.len()) as f64;
    let (on, off) = (mean(&uduc), mean(&no_self));
    r.line(
        7,
        "self-regularization ablation",
        on >= off,
        format!(
            "mean Robust-AUC over 5 seeds and both grids: with {on:.4} without {off:.4}; sweeps {:.0}s",
            t.elapsed().as_secs_f64()
        ),
    );
}

fn baselines(r: &mut Report) {
    let nominal = PhysicsParams::nominal();
    let single = make_baseline_ensemble(BaselineKind::Single, &nominal, 9, 2.0)
        .expect("single")
        .physics_params()
        .expect("physics");
    let single_ok = single.len() == 9 && single.iter().all(|&(m, l)| m == 0.1 && l == 1.0);
    let mut uniform_ok = true;
    for (b, k) in [(9usize, 3usize), (16, 4)] {
        let got = make_baseline_ensemble(BaselineKind::Uniform, &nominal, b, 2.0)
            .expect("uniform")
            .physics_params()
            .expect("physics");
        let f: Vec<f64> = (0..k).map(|i| 2f64.powf(-1.0 + 2.0 * i as f64 / (k - 1) as f64)).collect();
        let want: Vec<(f64, f64)> = f.iter().flat_map(|fm| f.iter().map(move |fl| (0.1 * fm, fl * 1.0))).collect();
        uniform_ok &= got == want;
    }
    uniform_ok &= make_baseline_ensemble(BaselineKind::Uniform, &nominal, 8, 2.0).is_err();
    r.line(
        8,
        "baseline placements",
        single_ok && uniform_ok,
        format!("single exact nominal: {single_ok}; uniform log-grid (B=9, 16) exact, B=8 rejected: {uniform_ok}"),
    );
}

fn auc_oracle(r: &mut Report) {
    let cases: [(&[f64], &[f64], f64); 4] = [
        (&[1.0, 2.0, 3.0], &[100.0, 50.0, 0.0], 0.5),
        (&[0.0, 1.0], &[50.0, 100.0], 0.75),
        (&[0.3, 1.7, 3.0], &[42.0, 42.0, 42.0], 0.42),
        (&[0.0, 1.0, 2.0, 4.0], &[0.0, 100.0, 50.0, 30.0], 0.5125),
    ];
    let worst = cases
        .iter()
        .map(|(v, m, want)| (auc_of(v, m, 100.0).expect("auc") - want).abs())
        .fold(0.0, f64::max);
    r.line(9, "robust-AUC oracle", worst < 1e-12, format!("max deviation from hand values {worst:.1e} (tol 1e-12)"));
}

fn determinism(r: &mut Report) {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = tmp.path().join("small.toml");
    std::fs::write(
        &cfg,
        "max_training_steps = 100\nmodel_update_frequency = 50\nensemble_size = 4\n\n[cem]\nhorizon = 8\npopulation = 40\nelite_count = 4\niterations = 2\nparticles = 2\n",
    )
    .expect("write config");
    let pipeline = |name: &str| {
        let out = tmp.path().join(name);
        cmd_train(&TrainArgs {
            config: cfg.clone(),
            overrides: vec![],
            out: out.join("train"),
            seed: Some(3),
            checkpoint_every: None,
        })
        .expect("train");
        cmd_eval(&EvalArgs {
            checkpoint: out.join("train/checkpoint.bin"),
            grid: GridArgs {
                parameter: ParamName::PoleMass,
                points: 4,
                episodes: 3,
                lo: None,
                hi: None,
                spacing: SpacingArg::Log,
            },
            out: out.join("eval"),
            seed: 3,
            method: "uduc".into(),
            config: Some(cfg.clone()),
            overrides: vec![],
        })
        .expect("eval");
        out
    };
    let (a, b) = (pipeline("a"), pipeline("b"));
    let files = ["train/train_log.csv", "train/checkpoint.bin", "eval/summary.json", "eval/curves/uduc_pole_mass.csv"];
    let same = files
        .iter()
        .all(|f| std::fs::read(a.join(f)).expect("artifact") == std::fs::read(b.join(f)).expect("artifact"));
    r.line(10, "determinism", same, format!("rerun artifacts byte-identical: {same} ({})", files.join(", ")));
}

fn cem_oracle(r: &mut Report) {
    let t = Instant::now();
    let target = [1.5, -2.0, 0.25];
    let f = move |x: &[f64]| -x.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    // Exhaustive grid search for the optimum at resolution 0.05.
    let axis: Vec<f64> = (0..=120).map(|i| -3.0 + 0.05 * i as f64).collect();
    let mut opt = (f64::NEG_INFINITY, [0.0; 3]);
    for &a in &axis {
        for &b in &axis {
            for &c in &axis {
                let v = f(&[a, b, c]);
                if v > opt.0 {
                    opt = (v, [a, b, c]);
                }
            }
        }
    }
    let cfg = CemConfig {
        horizon: 3,
        ..CemConfig::default()
    };
    let mut ok = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let out = cem_optimize(&f, &cfg, vec![0.0; 3], &mut derive_rng(seed, 0xACCB), 0);
        let err = out.mean.iter().zip(opt.1).map(|(m, o)| (m - o).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        ok += usize::from(err < 0.05);
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(
        11,
        "CEM oracle",
        ok == 10 && secs < 10.0,
        format!("{ok}/10 seeds within 0.05 of grid optimum {:?} (worst {worst:.4}), {secs:.2}s (< 10s)", opt.1),
    );
}

fn main() {
    // `cargo test -- <filter>` style arguments are ignored; `--list` must
    // produce no tests so tooling that enumerates tests does not run this.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut r = Report { failed: Vec::new() };
    loss_identity(&mut r);
    gradient_suite(&mut r);
    tau_degeneracy(&mut r);
    baselines(&mut r);
    auc_oracle(&mut r);
    determinism(&mut r);
    cem_oracle(&mut r);

    let t = Instant::now();
    let pe0 = train(0, f64::INFINITY, true);
    let uduc0 = train(0, 1.0, true);
    let seed0_secs = t.elapsed().as_secs_f64();
    let mut trained = Trained {
        pe: vec![pe0],
        uduc: vec![uduc0],
        uduc_no_self: vec![],
    };
    nominal_control(&mut r, &trained, seed0_secs);
    for seed in 1..5 {
        trained.pe.push(train(seed, f64::INFINITY, true));
        trained.uduc.push(train(seed, 1.0, true));
    }
    for seed in 0..5 {
        trained.uduc_no_self.push(train(seed, 1.0, false));
    }
    diversity(&mut r, &trained);
    robustness(&mut r, &trained);

    if r.failed.is_empty() {
        println!("acceptance: all criteria pass");
        return;
    }
    println!("acceptance: failing criteria {:?}", r.failed);
    // Seed-count comparisons between trained models are reported but do not
    // fail the build; every other criterion is exact and does.
    if r.failed.iter().any(|id| !DIRECTIONAL.contains(id)) {
        std::process::exit(1);
    }
}
