//! `uduc` command-line interface.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cem::CemConfig;
use crate::config::{apply_overrides, load_config, serialize_config, validate_config, ExperimentConfig, ValidatedConfig};
use crate::ensemble::{decode_checkpoint, load_checkpoint, save_checkpoint, Ensemble, Member, CHECKPOINT_VERSION};
use crate::env::{make_grid_spaced, ParamName, PerturbationGrid, Spacing};
use crate::error::{Error, Result};
use crate::robust::{compare_methods, curve_csv, evaluate_sweep, summary_json, RobustAucReport, Summary};
use crate::trainer::{run_training_with, TrainLog};

#[derive(Debug, Parser)]
#[command(name = "uduc", version, about = "Train and evaluate contrastive ensemble dynamics models on cart-pole")]
pub struct Cli {
    /// Worker threads for CEM scoring and sweep points (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an ensemble with CEM-MPC on nominal cart-pole.
    Train(TrainArgs),
    /// Sweep one physical parameter and report Robust-AUC.
    Eval(EvalArgs),
    /// Train and evaluate across one design knob.
    Ablate(AblateArgs),
    /// Merge the curves of several eval directories into one long CSV.
    ExportCurves(ExportArgs),
    /// Print the contents of an ensemble checkpoint.
    InspectCheckpoint(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// `key=value` overrides applied after loading, e.g. `tau=0.5` or `cem.horizon=10`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write `checkpoints/event_<k>.bin` every K update events.
    #[arg(long, value_name = "K")]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Parameter to perturb.
    #[arg(long, default_value = "pole_mass")]
    pub parameter: ParamName,
    /// Number of grid values.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    /// Episodes per grid value.
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Lower end of the grid (default: the parameter's test range).
    #[arg(long)]
    pub lo: Option<f64>,
    /// Upper end of the grid (default: the parameter's test range).
    #[arg(long)]
    pub hi: Option<f64>,
    #[arg(long, value_enum, default_value_t = SpacingArg::Log)]
    pub spacing: SpacingArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingArg {
    Log,
    Linear,
}

impl From<SpacingArg> for Spacing {
    fn from(s: SpacingArg) -> Spacing {
        match s {
            SpacingArg::Log => Spacing::Log,
            SpacingArg::Linear => Spacing::Linear,
        }
    }
}

impl GridArgs {
    pub fn grid(&self) -> Result<PerturbationGrid> {
        let (lo, hi) = self.parameter.test_range();
        Ok(make_grid_spaced(
            self.parameter,
            self.lo.unwrap_or(lo),
            self.hi.unwrap_or(hi),
            self.points,
            self.spacing.into(),
        )?
        .with_episodes(self.episodes))
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ensemble checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for evaluation noise (shared across methods for paired comparisons).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Name recorded in the summary and curve file name.
    #[arg(long, default_value = "model")]
    pub method: String,
    /// Take the planner settings from this configuration's `[cem]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Planner overrides, e.g. `cem.population=100`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Temperature,
    EnsembleSize,
    SelfReg,
}

impl Study {
    /// `(label, overrides)` for every point of the study.
    pub fn points(self) -> Vec<(String, Vec<String>)> {
        match self {
            Study::Temperature => [0.25, 0.5, 1.0, 2.0, 4.0]
                .iter()
                .map(|inv: &f64| (format!("{inv}"), vec![format!("tau={}", 1.0 / inv)]))
                .collect(),
            Study::EnsembleSize => [1, 3, 5, 9, 16]
                .iter()
                .map(|b| (b.to_string(), vec![format!("ensemble_size={b}")]))
                .collect(),
            Study::SelfReg => [("on", true), ("off", false)]
                .iter()
                .map(|(l, v)| (l.to_string(), vec![format!("self_regularization={v}")]))
                .collect(),
        }
    }

    fn knob(self) -> &'static str {
        match self {
            Study::Temperature => "inverse_tau",
            Study::EnsembleSize => "ensemble_size",
            Study::SelfReg => "self_regularization",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Study::Temperature => "temperature",
            Study::EnsembleSize => "ensemble_size",
            Study::SelfReg => "self_reg",
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    /// Base configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Eval output directories (each holding `summary.json` and `curves/`).
    #[arg(long = "from", required = true)]
    pub from: Vec<PathBuf>,
    /// Destination CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
}

/// Exit code for an error: 1 for configuration/input problems, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_)
        | Error::ConfigParse(_)
        | Error::Io { .. }
        | Error::Checkpoint(_)
        | Error::TooFewPoints(_)
        | Error::GridBounds { .. }
        | Error::NotSquare(_)
        | Error::MismatchedGrids => 1,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.jobs {
        // Fails only if a pool already exists (e.g. several in-process calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(a),
        Command::ExportCurves(a) => cmd_export(a),
        Command::InspectCheckpoint(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(p, contents).map_err(|e| Error::io(p, e))
}

fn resolve_config(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<ValidatedConfig> {
    let mut cfg = apply_overrides(&load_config(path)?, overrides)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    validate_config(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<Ensemble> {
    let cfg = resolve_config(&a.config, &a.overrides, a.seed)?;
    train_into(&cfg, &a.out, a.checkpoint_every)
}

fn train_into(cfg: &ValidatedConfig, out: &Path, checkpoint_every: Option<usize>) -> Result<Ensemble> {
    create_dir(out)?;
    write(&out.join("config.resolved"), serialize_config(cfg))?;
    let ckpt_dir = out.join("checkpoints");
    let mut on_update = |event: usize, e: &Ensemble| -> Result<()> {
        if let Some(k) = checkpoint_every.filter(|k| *k > 0) {
            if event % k == 0 {
                create_dir(&ckpt_dir)?;
                save_checkpoint(e, &ckpt_dir.join(format!("event_{event}.bin")))?;
            }
        }
        Ok(())
    };
    let (ensemble, log) = run_training_with(cfg, &cfg.cem, &mut on_update)?;
    save_checkpoint(&ensemble, &out.join("checkpoint.bin"))?;
    write(&out.join("train_log.csv"), train_log_csv(&log, ensemble.size()))?;
    Ok(ensemble)
}

/// One row per environment step. Per-member loss columns are filled on the
/// steps where an update event ran and left empty otherwise.
pub fn train_log_csv(log: &TrainLog, members: usize) -> String {
    let mut out = String::from("step,episode,action,reward,episode_return,plan_best_return");
    for m in 0..members {
        let _ = write!(
            out,
            ",m{m}_total,m{m}_nll,m{m}_contrastive,m{m}_l2,m{m}_grad_norm"
        );
    }
    out.push('\n');
    let mut losses = log.losses.iter().peekable();
    for r in &log.steps {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.episode, r.action, r.reward, r.episode_return, r.plan_best_return
        );
        let mut row = vec![String::new(); members * 5];
        while let Some(l) = losses.next_if(|l| l.step == r.step) {
            let base = l.member * 5;
            row[base] = l.total.to_string();
            row[base + 1] = l.nll.to_string();
            row[base + 2] = l.contrastive.to_string();
            row[base + 3] = l.l2.to_string();
            row[base + 4] = l.grad_norm.to_string();
        }
        for cell in row {
            out.push(',');
            out.push_str(&cell);
        }
        out.push('\n');
    }
    out
}

/// Everything needed to rerun an evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalRecord {
    checkpoint: String,
    method: String,
    seed: u64,
    parameter: ParamName,
    points: usize,
    episodes: usize,
    lo: f64,
    hi: f64,
    spacing: SpacingArg,
    cem: CemConfig,
}

fn eval_cem(config: Option<&Path>, overrides: &[String]) -> Result<CemConfig> {
    let base = match config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(validate_config(apply_overrides(&base, overrides)?)?.cem.clone())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<RobustAucReport> {
    let grid = a.grid.grid()?;
    let cem = eval_cem(a.config.as_deref(), &a.overrides)?;
    let ensemble = load_checkpoint(&a.checkpoint)?;
    let record = EvalRecord {
        checkpoint: a.checkpoint.display().to_string(),
        method: a.method.clone(),
        seed: a.seed,
        parameter: grid.parameter,
        points: grid.values.len(),
        episodes: grid.episodes_per_value,
        lo: grid.values[0],
        hi: *grid.values.last().expect("≥ 2 points"),
        spacing: a.grid.spacing,
        cem: cem.clone(),
    };
    create_dir(&a.out)?;
    write(
        &a.out.join("config.resolved"),
        toml::to_string(&record).expect("eval record serializes"),
    )?;
    let report = sweep_report(&ensemble, &cem, &grid, a.seed, &a.method)?;
    write_eval_outputs(&a.out, &[report.clone()], a.seed)?;
    Ok(report)
}

fn sweep_report(e: &Ensemble, cem: &CemConfig, grid: &PerturbationGrid, seed: u64, method: &str) -> Result<RobustAucReport> {
    RobustAucReport::new(method, evaluate_sweep(e, cem, grid, seed)?)
}

fn write_eval_outputs(out: &Path, reports: &[RobustAucReport], seed: u64) -> Result<()> {
    let curves = out.join("curves");
    create_dir(&curves)?;
    for r in reports {
        write(
            &curves.join(format!("{}_{}.csv", r.method, r.curve.parameter)),
            curve_csv(&r.curve),
        )?;
    }
    let summaries: Vec<Summary> = reports.iter().map(|r| Summary::from_report(r, seed)).collect();
    write(&out.join("summary.json"), summary_json(&summaries))
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let grid = a.grid.grid()?;
    create_dir(&a.out)?;
    let mut table = format!("{},auc,nominal_median\n", a.study.knob());
    let mut reports = Vec::new();
    for (label, extra) in a.study.points() {
        let overrides: Vec<String> = a.overrides.iter().cloned().chain(extra).collect();
        let cfg = resolve_config(&a.config, &overrides, a.seed)?;
        let dir = a.out.join(format!("{}_{label}", a.study.name()));
        let ensemble = train_into(&cfg, &dir, None)?;
        let method = format!("{}_{label}", a.study.name());
        let report = sweep_report(&ensemble, &cfg.cem, &grid, cfg.seed, &method)?;
        write_eval_outputs(&dir, std::slice::from_ref(&report), cfg.seed)?;
        let _ = writeln!(table, "{label},{},{}", report.auc, report.nominal_median());
        reports.push(report);
    }
    write(&a.out.join("ablation.csv"), table)?;
    let seed = a.seed.unwrap_or(load_config(&a.config)?.seed);
    write_eval_outputs(&a.out, &reports, seed)
}

pub fn cmd_export(a: &ExportArgs) -> Result<()> {
    let mut reports = BTreeMap::new();
    let mut out = String::from("method,parameter,value,median,q25,q75\n");
    for dir in &a.from {
        let path = dir.join("summary.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let summaries: Vec<Summary> =
            serde_json::from_str(&text).map_err(|e| Error::ConfigParse(format!("{}: {e}", path.display())))?;
        for s in summaries {
            let curve_path = dir.join("curves").join(format!("{}_{}.csv", s.method, s.parameter));
            let csv = std::fs::read_to_string(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
            for line in csv.lines().skip(1) {
                let _ = writeln!(out, "{},{},{line}", s.method, s.parameter);
            }
            reports.insert((s.method.clone(), s.parameter), s);
        }
    }
    write(&a.out, out)?;
    // Per-parameter comparison tables on stdout.
    let mut by_param: BTreeMap<ParamName, Vec<&Summary>> = BTreeMap::new();
    for s in reports.values() {
        by_param.entry(s.parameter).or_default().push(s);
    }
    for (p, mut rows) in by_param {
        rows.sort_by(|a, b| b.auc.total_cmp(&a.auc).then_with(|| a.method.cmp(&b.method)));
        println!("{p}");
        for r in rows {
            println!("  {:<24} auc {:.4}  nominal median {}", r.method, r.auc, r.nominal_median);
        }
    }
    Ok(())
}

pub fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let bytes = std::fs::read(&a.checkpoint).map_err(|e| Error::io(&a.checkpoint, e))?;
    let e = decode_checkpoint(&bytes)?;
    print!("{}", describe(&e));
    Ok(())
}

pub fn describe(e: &Ensemble) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format version {CHECKPOINT_VERSION}");
    let _ = writeln!(out, "members {}", e.size());
    match e.member(0) {
        Member::Physics(p) => {
            let _ = writeln!(out, "kind physics (fixed variance {:?})", p.fixed_variance);
            for (i, (m, t)) in e.members().iter().zip(e.targets()).enumerate() {
                let (m, t) = (m.as_physics().expect("physics"), t.as_physics().expect("physics"));
                let _ = writeln!(
                    out,
                    "  [{i}] pole_mass {:.6} pole_length {:.6} | target {:.6} {:.6}",
                    m.pole_mass(),
                    m.pole_length(),
                    t.pole_mass(),
                    t.pole_length()
                );
            }
        }
        Member::Mlp(m) => {
            let _ = writeln!(
                out,
                "kind mlp (hidden {}, variance bounds [{}, {}], {} parameters each)",
                m.hidden,
                m.bounds.min,
                m.bounds.max,
                m.params.len()
            );
            for (i, (m, t)) in e.members().iter().zip(e.targets()).enumerate() {
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let gap: Vec<f64> = m
                    .params()
                    .values
                    .iter()
                    .zip(&t.params().values)
                    .map(|(a, b)| a - b)
                    .collect();
                let _ = writeln!(
                    out,
                    "  [{i}] |θ| {:.6} |θ − θ̄| {:.6}",
                    norm(&m.params().values),
                    norm(&gap)
                );
            }
        }
    }
    out
}

/// Comparison table for reports sharing a grid.
pub fn comparison_table(reports: &[RobustAucReport]) -> Result<String> {
    let map: BTreeMap<String, RobustAucReport> = reports.iter().map(|r| (r.method.clone(), r.clone())).collect();
    let mut out = String::from("method,auc,nominal_median\n");
    for row in compare_methods(&map)? {
        let _ = writeln!(out, "{},{},{}", row.method, row.auc, row.nominal_median);
    }
    Ok(out)
}
