//! `bdsim`: simulate, couple, verify and compare configurations.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 failed verification.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use bdsim::coupling::{check_monotone_premise, simulate_coupled};
use bdsim::io::{write_line, write_trajectory_jsonl, ExperimentConfig, Manifest};
use bdsim::rng::Channel;
use bdsim::stats::SimReport;
use bdsim::verify::{resolve_suites, run_suites, VerifySettings};
use bdsim::{config_space, simulate, Error, RngStreamKey};

/// Trajectories generated in parallel before being written in order.
const BATCH: usize = 64;
const DEFAULT_PREMISE_TRIALS: usize = 1000;
const PREMISE_MAX_POINTS: usize = 8;

#[derive(Parser)]
#[command(name = "bdsim", version, about = "Exact simulation of spatial birth-and-death processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON), or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate `n_traj` trajectories and write one JSON Lines file each.
    Simulate,
    /// Simulate the monotone coupling of `model` under `options.upper_model`.
    Couple(CoupleArgs),
    /// Run check suites and print a JSON report.
    Verify(VerifyArgs),
    /// Distance between two point-list files.
    Metric { a: PathBuf, b: PathBuf },
}

#[derive(Args)]
struct CoupleArgs {
    /// Search for a premise violation first and refuse to run if one is found.
    #[arg(long)]
    check_premise: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suites to run (default: all).
    suites: Vec<String>,
    /// Multiplies every sample size; 1 is the full size.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

enum Failure {
    Usage(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::PremiseViolation(_) => Failure::Verification(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate => cmd_simulate(&cli),
        Command::Couple(args) => cmd_couple(&cli, args),
        Command::Verify(args) => cmd_verify(&cli, args),
        Command::Metric { a, b } => cmd_metric(a, b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    let dir = cli.out.as_deref().ok_or_else(|| Failure::Usage("--out is required".into()))?;
    fs::create_dir_all(dir)?;
    Ok(dir)
}

fn file_name(prefix: &str, i: usize, n: usize) -> String {
    let width = (n.max(2) - 1).to_string().len();
    format!("{prefix}_{i:0width$}.jsonl")
}

fn write_timing(dir: &Path, started: Instant) -> Result<(), Failure> {
    let text = json!({"wall_time_seconds": started.elapsed().as_secs_f64()}).to_string();
    fs::write(dir.join("timing.json"), text + "\n")?;
    Ok(())
}

fn cmd_simulate(cli: &Cli) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = load_config(cli)?;
    let dir = out_dir(cli)?;
    let model = cfg.rate_model()?;
    let initial = cfg.initial_configuration()?;
    let caps = cfg.caps();
    let mut manifest = Manifest::new("simulate", &cfg);
    let mut final_sizes = Vec::new();
    let mut event_counts = Vec::new();
    for start in (0..cfg.n_traj).step_by(BATCH) {
        let end = (start + BATCH).min(cfg.n_traj);
        let trajs = (start..end)
            .into_par_iter()
            .map(|i| {
                let key = RngStreamKey::new(cfg.master_seed).with_trajectory(i as u64);
                simulate(&model, &initial, cfg.horizon, caps, key)
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (i, traj) in (start..end).zip(&trajs) {
            let name = file_name("trajectory", i, cfg.n_traj);
            let mut w = BufWriter::new(File::create(dir.join(&name))?);
            write_trajectory_jsonl(traj, &mut w)?;
            w.flush()?;
            manifest.files.push(name);
            manifest.count(&traj.status);
            event_counts.push(traj.events.len() as f64);
            if !traj.status.is_cap_hit() {
                final_sizes.push(traj.final_state()?.len() as f64);
            }
        }
    }
    manifest.summary = json!({
        "final_size": SimReport::from_samples(&final_sizes),
        "events": SimReport::from_samples(&event_counts),
    });
    manifest.write(&dir.join("manifest.json"))?;
    write_timing(dir, started)?;
    println!("{}", serde_json::to_string(&manifest.status_counts).expect("counts serialize"));
    Ok(())
}

fn cmd_couple(cli: &Cli, args: &CoupleArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = load_config(cli)?;
    let (m1, m2, lower0, upper0) = cfg.coupled_setup()?;
    if args.check_premise {
        let trials = cfg.options.premise_trials.unwrap_or(DEFAULT_PREMISE_TRIALS);
        let mut rng = RngStreamKey::new(cfg.master_seed)
            .with_trajectory(u64::MAX - 1)
            .stream(Channel::Acceptance, 0);
        let report = check_monotone_premise(&m1, &m2, cfg.dimension, trials, PREMISE_MAX_POINTS, &mut rng)?;
        if let Some(w) = report.witness {
            let pts = |c: &bdsim::Configuration| c.positions().map(|p| p.coords().to_vec()).collect::<Vec<_>>();
            let witness = json!({
                "kind": w.kind,
                "lower": pts(&w.lower),
                "upper": pts(&w.upper),
                "x": w.x.coords(),
                "rate_lower_model": w.rate1,
                "rate_upper_model": w.rate2,
            });
            println!("{}", json!({"premise": "violated", "witness": witness}));
            return Err(Failure::Verification("monotonicity premise fails; refusing to run".into()));
        }
    }
    let dir = out_dir(cli)?;
    let caps = cfg.caps();
    let mut manifest = Manifest::new("couple", &cfg);
    let mut violations = 0usize;
    for start in (0..cfg.n_traj).step_by(BATCH) {
        let end = (start + BATCH).min(cfg.n_traj);
        let pairs = (start..end)
            .into_par_iter()
            .map(|i| {
                let key = RngStreamKey::new(cfg.master_seed).with_trajectory(i as u64);
                simulate_coupled(&m1, &m2, &lower0, &upper0, cfg.horizon, caps, key)
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (i, pair) in (start..end).zip(&pairs) {
            for (prefix, traj) in [("lower", &pair.lower), ("upper", &pair.upper)] {
                let name = file_name(prefix, i, cfg.n_traj);
                let mut w = BufWriter::new(File::create(dir.join(&name))?);
                write_trajectory_jsonl(traj, &mut w)?;
                w.flush()?;
                manifest.files.push(name);
            }
            let name = file_name("audit", i, cfg.n_traj);
            let mut w = BufWriter::new(File::create(dir.join(&name))?);
            for a in &pair.audit {
                write_line(&mut w, a)?;
            }
            w.flush()?;
            manifest.files.push(name);
            manifest.count(&pair.upper.status);
            violations += pair.audit.iter().filter(|a| !a.included).count();
        }
    }
    manifest.summary = json!({"inclusion_violations": violations});
    manifest.write(&dir.join("manifest.json"))?;
    write_timing(dir, started)?;
    println!("{}", json!({"inclusion_violations": violations, "status_counts": manifest.status_counts}));
    if violations > 0 {
        return Err(Failure::Verification(format!("{violations} events broke inclusion")));
    }
    Ok(())
}

fn cmd_verify(cli: &Cli, args: &VerifyArgs) -> Result<(), Failure> {
    if !(args.scale > 0.0 && args.scale <= 1.0) {
        return Err(Failure::Usage("--scale must lie in (0, 1]".into()));
    }
    let suites = resolve_suites(&args.suites)?;
    let mut settings = VerifySettings {
        scale: args.scale,
        ..VerifySettings::default()
    };
    if let Some(seed) = cli.seed {
        settings.master_seed = seed;
    }
    let report = run_suites(&suites, settings)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify.json"), &text)?;
    }
    print!("{text}");
    if report.failures > 0 {
        return Err(Failure::Verification(format!("{} checks failed", report.failures)));
    }
    Ok(())
}

fn cmd_metric(a: &Path, b: &Path) -> Result<(), Failure> {
    let za = bdsim::io::read_point_list(a)?;
    let zb = bdsim::io::read_point_list(b)?;
    if za.dim() != zb.dim() {
        return Err(Failure::Usage(format!("dimension {} vs {}", za.dim(), zb.dim())));
    }
    let value = if za.len() != zb.len() {
        json!({"dist": 1.0, "note": "cardinality differs", "sizes": [za.len(), zb.len()]})
    } else {
        let m = config_space::optimal_matching(&za, &zb)?;
        json!({"dist": config_space::dist(&za, &zb)?, "euclidean": m.distance, "pairs": m.pairs})
    };
    println!("{value}");
    Ok(())
}
