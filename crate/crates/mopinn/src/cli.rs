//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mopinn_core::problems::{
    elastic_field_errors, generate_collocation, predict, validation_mse, GroupKind, ProblemKind,
};

use crate::config::{parse_config, preset_by_name, set_aux_source, to_toml, PRESETS};
use crate::experiment::{
    initial_params, prepare, run_prepared_with, sweep, teacher_student, Combiner, TrialConfig,
    TrialResult,
};
use crate::formats::{read_pointcloud, save_metrics, write_field, write_pointcloud, Checkpoint};
use crate::{Error, Result};

pub const THREADS_ENV: &str = "MOPINN_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "mopinn",
    version,
    about = "Multi-objective PINN training experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in benchmark configuration.
    #[arg(long, global = true, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    pub preset: Option<String>,
    /// Seeds, e.g. `0,1,2` or `0..10` (end exclusive).
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub iterations: Option<u64>,
    #[arg(long, global = true, value_parser = ["sum", "surgery"])]
    pub combiner: Option<String>,
    /// fem, noisy, zeros, analytic, file:<path> or off.
    #[arg(long, global = true)]
    pub aux: Option<String>,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network.
    Run,
    /// Train one network per seed and select the best.
    Sweep,
    /// Teacher sweep followed by Net2Net widening and student training.
    Widen {
        /// Units added to every hidden layer.
        #[arg(long)]
        delta_h: usize,
        #[arg(long)]
        student_iterations: u64,
    },
    /// Validation errors of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Network fields on a grid (or the validation points) as CSV.
    ExportField {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Points per axis; the validation set when omitted.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Reads a point cloud, reports its statistics and writes it back normalized.
    ImportLabels {
        #[arg(long)]
        input: PathBuf,
    },
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Invalid(format!("cannot parse seeds `{s}`"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        (a..b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::Invalid("seed list is empty".into()));
    }
    Ok(seeds)
}

/// Configuration from `--config`/`--preset` plus flag overrides.
pub fn load_config(c: &Common) -> Result<TrialConfig> {
    let mut config = match (&c.config, &c.preset) {
        (Some(_), Some(_)) => {
            return Err(Error::Invalid("give either --config or --preset".into()))
        }
        (Some(path), None) => parse_config(path)?,
        (None, Some(name)) => preset_by_name(name)
            .ok_or_else(|| Error::Invalid(format!("unknown preset `{name}`")))?,
        (None, None) => {
            return Err(Error::Invalid(
                "a --config file or --preset is required".into(),
            ))
        }
    };
    if let Some(n) = c.iterations {
        if n == 0 {
            return Err(Error::Invalid("--iterations must be at least 1".into()));
        }
        config.iterations = n;
    }
    if let Some(name) = &c.combiner {
        config.combiner = Combiner::from_name(name)
            .ok_or_else(|| Error::Invalid(format!("unknown combiner `{name}`")))?;
    }
    if let Some(src) = &c.aux {
        set_aux_source(&mut config, src)?;
    }
    config.validate().map_err(|e| match e {
        Error::Core(inner) => Error::Invalid(inner.to_string()),
        other => other,
    })?;
    Ok(config)
}

#[derive(Serialize)]
struct TrialSummary {
    seed: u64,
    iterations: usize,
    final_total: f64,
    final_vald: f64,
    failed: Option<String>,
    wall_time_s: f64,
    objectives: Vec<(String, f64)>,
    extras: Vec<(String, f64)>,
}

fn summary(r: &TrialResult) -> TrialSummary {
    TrialSummary {
        seed: r.seed,
        iterations: r.history.len(),
        final_total: r.final_total(),
        final_vald: r.final_vald,
        failed: r
            .failed
            .as_ref()
            .map(|f| format!("iteration {}: {}", f.iteration, f.reason)),
        wall_time_s: r.wall_time.as_secs_f64(),
        objectives: r
            .objective_names
            .iter()
            .cloned()
            .zip(r.final_values.iter().copied())
            .collect(),
        extras: r.final_params.named_extras(),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn checkpoint_of(config: &TrialConfig, r: &TrialResult) -> Result<Checkpoint> {
    let prepared = prepare(config)?;
    Ok(Checkpoint {
        network: config.network.clone(),
        params: r.final_params.clone(),
        output_map: prepared.assembler.output_map().cloned(),
        seed: r.seed,
        iteration: r.history.len() as u64,
    })
}

fn save_trial(dir: &Path, tag: &str, config: &TrialConfig, r: &TrialResult) -> Result<()> {
    save_metrics(&dir.join(format!("metrics{tag}.csv")), r)?;
    checkpoint_of(config, r)?.save(&dir.join(format!("checkpoint{tag}.bin")))
}

fn report(quiet: bool, r: &TrialResult) {
    if quiet {
        return;
    }
    match &r.failed {
        Some(f) => println!(
            "seed {}: failed at iteration {} ({})",
            r.seed, f.iteration, f.reason
        ),
        None => println!(
            "seed {}: total {:.6e}, vald {:.6e}, {:.1}s",
            r.seed,
            r.final_total(),
            r.final_vald,
            r.wall_time.as_secs_f64()
        ),
    }
}

fn evaluation_grid(config: &TrialConfig, n: usize) -> Vec<f64> {
    let spec = &config.problem;
    let (lo, hi) = spec.bounds();
    let axis = |d: usize, i: usize| lo[d] + (hi[d] - lo[d]) * i as f64 / (n.max(2) - 1) as f64;
    if spec.dim() == 1 {
        return (0..n).map(|i| axis(0, i)).collect();
    }
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let x = [axis(0, i), axis(1, j)];
            if spec.contains(&x) {
                out.extend_from_slice(&x);
            }
        }
    }
    out
}

fn execute(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    let out = &c.out;
    let mkdir = || fs::create_dir_all(out).map_err(|e| Error::io(out, e));
    match &cli.command {
        Command::Run => {
            let mut config = load_config(c)?;
            if let Some(s) = &c.seeds {
                config.seed = parse_seeds(s)?[0];
            }
            mkdir()?;
            fs::write(out.join("config.toml"), to_toml(&config)).map_err(|e| Error::io(out, e))?;
            let prepared = prepare(&config)?;
            let map = prepared.assembler.output_map().cloned();
            let every = config.checkpoint_every;
            let r = run_prepared_with(
                &config,
                &prepared,
                initial_params(&config)?,
                |rec, params| {
                    if every > 0 && (rec.iteration + 1) % every == 0 {
                        Checkpoint {
                            network: config.network.clone(),
                            params: params.clone(),
                            output_map: map.clone(),
                            seed: config.seed,
                            iteration: rec.iteration + 1,
                        }
                        .save(&out.join(format!("checkpoint_{}.bin", rec.iteration + 1)))?;
                    }
                    Ok(())
                },
            )?;
            save_trial(out, "", &config, &r)?;
            write_json(&out.join("summary.json"), &summary(&r))?;
            report(c.quiet, &r);
            if r.is_failed() {
                return Err(Error::AllTrialsFailed(1));
            }
        }
        Command::Sweep => {
            let config = load_config(c)?;
            let seeds = parse_seeds(c.seeds.as_deref().unwrap_or("0"))?;
            mkdir()?;
            fs::write(out.join("config.toml"), to_toml(&config)).map_err(|e| Error::io(out, e))?;
            let s = sweep(&config, &seeds)?;
            for r in &s.results {
                save_metrics(&out.join(format!("metrics_seed{}.csv", r.seed)), r)?;
                report(c.quiet, r);
            }
            let best = s.best();
            checkpoint_of(&config.with_seed(best.seed), best)?.save(&out.join("best.bin"))?;
            let all: Vec<_> = s.results.iter().map(summary).collect();
            write_json(
                &out.join("summary.json"),
                &serde_json::json!({ "best_seed": best.seed, "trials": all }),
            )?;
            if !c.quiet {
                println!("best seed {}", best.seed);
            }
        }
        Command::Widen {
            delta_h,
            student_iterations,
        } => {
            let config = load_config(c)?;
            let seeds = parse_seeds(c.seeds.as_deref().unwrap_or("0"))?;
            let n_layers = config.network.layer_widths.len();
            let delta: Vec<usize> = (0..n_layers)
                .map(|l| {
                    if l == 0 || l + 1 == n_layers {
                        0
                    } else {
                        *delta_h
                    }
                })
                .collect();
            if *student_iterations == 0 {
                return Err(Error::Invalid(
                    "--student-iterations must be at least 1".into(),
                ));
            }
            mkdir()?;
            let ts = teacher_student(&config, &seeds, &delta, *student_iterations)?;
            let best = ts.teachers.best();
            save_trial(out, "_teacher", &config.with_seed(best.seed), best)?;
            save_trial(out, "_student", &ts.student_config, &ts.student)?;
            fs::write(out.join("student.toml"), to_toml(&ts.student_config))
                .map_err(|e| Error::io(out, e))?;
            write_json(
                &out.join("summary.json"),
                &serde_json::json!({
                    "teachers": ts.teachers.results.iter().map(summary).collect::<Vec<_>>(),
                    "best_seed": best.seed,
                    "student": summary(&ts.student),
                    "student_first": ts.student.objective_names.iter().cloned().zip(ts.student_first.iter().copied()).collect::<Vec<_>>(),
                }),
            )?;
            report(c.quiet, &ts.student);
            if ts.student.is_failed() {
                return Err(Error::AllTrialsFailed(1));
            }
        }
        Command::Evaluate { checkpoint } => {
            let config = load_config(c)?;
            let ck = Checkpoint::load(checkpoint)?;
            let colloc = generate_collocation(&config.problem, &config.layout)?;
            let vald = colloc.require(GroupKind::Vald)?;
            let map = ck.output_map.as_ref();
            let mse = validation_mse(&config.problem, &ck.network, &ck.params, map, vald)?;
            let mut report =
                serde_json::json!({ "vald_mse": mse, "extras": ck.params.named_extras() });
            if config.problem.kind == ProblemKind::ElasticityHole {
                let (du, dvm) =
                    elastic_field_errors(&config.problem, &ck.network, &ck.params, map, vald)?;
                report["displacement_mse"] = du.into();
                report["von_mises_mse"] = dvm.into();
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(|e| Error::Invalid(e.to_string()))?
            );
        }
        Command::ExportField { checkpoint, grid } => {
            let config = load_config(c)?;
            let ck = Checkpoint::load(checkpoint)?;
            let points = match grid {
                Some(n) => evaluation_grid(&config, *n),
                None => generate_collocation(&config.problem, &config.layout)?
                    .require(GroupKind::Vald)?
                    .to_vec(),
            };
            let values = predict(&ck.network, &ck.params, ck.output_map.as_ref(), &points)?;
            mkdir()?;
            let path = out.join("field.csv");
            write_field(
                &path,
                config.problem.dim(),
                &points,
                config.problem.kind.output_fields(),
                &values,
            )?;
            if !c.quiet {
                println!("wrote {}", path.display());
            }
        }
        Command::ImportLabels { input } => {
            let labels = read_pointcloud(input)?;
            if !c.quiet {
                println!("{} points, {}D", labels.len(), labels.dim());
                for s in labels.stats() {
                    let flag = if s.flagged {
                        " (constant, not normalized)"
                    } else {
                        ""
                    };
                    println!(
                        "{}: mean {:.6e} std {:.6e} min {:.6e} max {:.6e}{flag}",
                        s.field, s.mean, s.std, s.min, s.max
                    );
                }
            }
            mkdir()?;
            write_pointcloud(&out.join("labels.csv"), &labels)?;
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Invalid(format!("{THREADS_ENV}={v} is not a count")))?;
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 for
/// usage and configuration errors, 2 for runtime failures.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = configure_threads().and_then(|_| execute(&cli));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}
