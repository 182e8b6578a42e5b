//! Command-line front end: train, evaluate, compare, gradcheck, project.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime or numeric failure.
//! Relative output paths are resolved under `$EAMOD_OUT_ROOT` when it is set.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eamod::config::{
    export_metrics, load_checkpoint, parse_polytope, parse_scenario, read_json, returns_csv,
    save_checkpoint, serialize_scenario, write_json, write_text, RunConfig,
};
use eamod::eval::{compare, comparison_csv, comparison_table, evaluate_checkpoint, EvalOptions, EvalReport};
use eamod::gradcheck::{run_suite, SuiteShape};
use eamod::projection::{dykstra_project, BoxDomain, HPolytope, DEFAULT_MAX_ITER, DEFAULT_TOL};
use eamod::trainer::Trainer;
use eamod::{Error, Result};

const OUT_ROOT_ENV: &str = "EAMOD_OUT_ROOT";

#[derive(Parser)]
#[command(name = "eamod", version, about = "Robust multi-agent fleet balancing for electric AMoD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train region and adversary policies from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable the adversaries.
        #[arg(long, value_parser = clap::builder::BoolishValueParser::new())]
        baseline: Option<bool>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate a checkpoint's region policy under observation noise.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        /// Steps per rollout; defaults to the checkpoint's episode length.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Compare two evaluation reports.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "A")]
        label_a: String,
        #[arg(long, default_value = "B")]
        label_b: String,
        #[arg(long, default_value = "comparison.csv")]
        csv: PathBuf,
    },
    /// Finite-difference check of all three networks' gradients.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Project a point with Dykstra's algorithm.
    Project {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        point: Vec<f64>,
        /// Probability simplex of the point's dimension.
        #[arg(long, conflicts_with_all = ["lower", "polytope"])]
        simplex: bool,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "upper")]
        lower: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "lower")]
        upper: Option<Vec<f64>>,
        /// TOML polytope file with `witness` and `[[rows]]` of `normal`, `bound`.
        #[arg(long)]
        polytope: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
        max_iter: usize,
    },
}

fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn train(
    config: &Path,
    seed: Option<u64>,
    baseline: Option<bool>,
    out: Option<PathBuf>,
    episodes: Option<usize>,
    batch_size: Option<usize>,
) -> Result<()> {
    let (mut cfg, scenario) = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.trainer.seed = s;
    }
    if let Some(b) = baseline {
        cfg.trainer.baseline = b;
    }
    if let Some(e) = episodes {
        cfg.trainer.episodes = e;
    }
    if let Some(b) = batch_size {
        cfg.trainer.batch_size = b;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    cfg.out_dir = out_path(&cfg.out_dir);
    cfg.validate(&scenario)?;
    let dir = cfg.out_dir.clone();
    write_text(&dir.join("effective_config.toml"), &cfg.effective_toml())?;
    write_text(&dir.join("scenario.toml"), &serialize_scenario(&scenario))?;

    let every = cfg.checkpoint_every;
    let mut trainer = Trainer::new(cfg.trainer.clone(), scenario)?;
    while !trainer.done() {
        let step = trainer.run_episode();
        let log = &trainer.state().log;
        if !log.is_empty() {
            export_metrics(log, &dir.join("metrics.csv"))?;
            write_text(&dir.join("returns.csv"), &returns_csv(log))?;
        }
        let m = step?;
        eprintln!(
            "episode {:>4}  reward {:>10.4}  u_c {:>8.4}  u_s {:>9.4}  critic {:>10.4}",
            m.episode, m.mean_reward, m.mean_u_c, m.mean_u_s, m.critic_loss
        );
        let done = m.episode + 1;
        if every > 0 && done % every == 0 {
            save_checkpoint(&trainer.checkpoint(), &dir.join(format!("checkpoint_{done:05}.json")))?;
        }
    }
    save_checkpoint(&trainer.checkpoint(), &dir.join("checkpoint.json"))?;
    println!("{}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    checkpoint: &Path,
    scenario: &Path,
    noise: f64,
    seeds: Vec<u64>,
    steps: Option<usize>,
    beta: f64,
    out: &Path,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let scenario = parse_scenario(scenario)?;
    let opts = EvalOptions {
        noise_sigma: noise,
        seeds,
        steps: steps.unwrap_or(ck.horizon),
        beta,
    };
    let report = evaluate_checkpoint(&ck, &scenario, &opts)?;
    for r in &report.runs {
        println!(
            "seed {:>3}  reward {:>10.4}  u_c {:>8.4}  u_s {:>9.4}",
            r.seed, r.mean_reward, r.mean_u_c, r.mean_u_s
        );
    }
    println!(
        "mean      reward {:>10.4}  u_c {:>8.4}  u_s {:>9.4}",
        report.mean_reward, report.mean_u_c, report.mean_u_s
    );
    write_json(&report, &out_path(out))
}

fn compare_cmd(a: &Path, b: &Path, label_a: &str, label_b: &str, csv: &Path) -> Result<()> {
    let ra: EvalReport = read_json(a)?;
    let rb: EvalReport = read_json(b)?;
    let rows = compare(&ra, &rb)?;
    print!("{}", comparison_table(&rows, label_a, label_b));
    write_text(&out_path(csv), &comparison_csv(&rows))
}

/// Returns whether the suite stayed within `tolerance`.
fn gradcheck_cmd(cases: usize, seed: u64, tolerance: f64) -> Result<bool> {
    let report = run_suite(cases, seed, SuiteShape::default())?;
    for (name, r) in [
        ("region", report.region),
        ("adversary", report.adversary),
        ("critic", report.critic),
    ] {
        println!(
            "{name:<10} params {:.3e}  inputs {:.3e}  checked {}  kinks skipped {}",
            r.max_param_rel_error, r.max_input_rel_error, r.checked, r.kinks
        );
    }
    let worst = report.max_rel_error();
    println!("max relative error {worst:.3e} over {cases} cases");
    if worst > tolerance {
        eprintln!("error: gradient check exceeds tolerance {tolerance:e}");
    }
    Ok(worst <= tolerance)
}

fn project_cmd(
    point: &[f64],
    simplex: bool,
    bounds: Option<(Vec<f64>, Vec<f64>)>,
    polytope: Option<PathBuf>,
    tol: f64,
    max_iter: usize,
) -> Result<()> {
    let poly = match (simplex, bounds, polytope) {
        (true, None, None) => HPolytope::simplex(point.len())?,
        (false, Some((l, u)), None) => BoxDomain::new(l, u)?.to_polytope()?,
        (false, None, Some(path)) => parse_polytope(&path)?,
        _ => return Err(Error::validation("domain", "give exactly one of --simplex, --lower/--upper, --polytope")),
    };
    if poly.dim() != point.len() {
        return Err(Error::validation(
            "point",
            format!("dimension {} differs from the domain's {}", point.len(), poly.dim()),
        ));
    }
    let x = dykstra_project(point, &poly, tol, max_iter)?;
    let text: Vec<String> = x.iter().map(|v| v.to_string()).collect();
    println!("{}", text.join(","));
    Ok(())
}

/// Runs a subcommand; `Ok(false)` reports a failed check.
fn run(cli: Cli) -> Result<bool> {
    let ok = |r: Result<()>| r.map(|()| true);
    match cli.command {
        Command::Train {
            config,
            seed,
            baseline,
            out,
            episodes,
            batch_size,
        } => ok(train(&config, seed, baseline, out, episodes, batch_size)),
        Command::Evaluate {
            checkpoint,
            scenario,
            noise,
            seeds,
            steps,
            beta,
            out,
        } => ok(evaluate_cmd(&checkpoint, &scenario, noise, seeds, steps, beta, &out)),
        Command::Compare {
            a,
            b,
            label_a,
            label_b,
            csv,
        } => ok(compare_cmd(&a, &b, &label_a, &label_b, &csv)),
        Command::Gradcheck {
            cases,
            seed,
            tolerance,
        } => gradcheck_cmd(cases, seed, tolerance),
        Command::Project {
            point,
            simplex,
            lower,
            upper,
            polytope,
            tol,
            max_iter,
        } => ok(project_cmd(&point, simplex, lower.zip(upper), polytope, tol, max_iter)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
