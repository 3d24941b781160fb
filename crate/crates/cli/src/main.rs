//! `cld-lab`: runs one experiment per invocation and writes its result table
//! plus a run manifest.

mod output;
mod run;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use cld_core::experiments::{DampingConfig, RunManifest};
use cld_core::objectives::KernelKind;
use cld_core::{CldParams, ScheduleKind};
use serde::Serialize;
use serde_json::{json, Map, Value};

use output::{manifest_path, version_string, write_manifest, Format};
use run::{Ctx, Outcome, SamplerChoice};
use settings::{flags, resolve, ConfigFile, ParamSettings};

#[derive(Parser)]
#[command(name = "cld-lab", version, about = "Critically-damped Langevin diffusion toy experiments")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    experiment: Experiment,
}

#[derive(Args, Serialize)]
struct CommonArgs {
    /// JSON config file; flags override its entries.
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Result file; standard output when absent.
    #[arg(long, global = true)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Manifest file; defaults to `<out>.manifest.json`, or standard error.
    #[arg(long, global = true)]
    #[serde(skip)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    params: ParamArgs,
}

#[derive(Args, Serialize)]
struct ParamArgs {
    /// Time scaling β.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Friction Γ; the mass is Γ²/4.
    #[arg(long, global = true)]
    gamma_fric: Option<f64>,
    /// Initial velocity variance ratio γ.
    #[arg(long, global = true)]
    gamma0: Option<f64>,
    #[arg(long, global = true)]
    t_final: Option<f64>,
    /// Sampling cutoff ε.
    #[arg(long, global = true)]
    eps_cutoff: Option<f64>,
    #[arg(long, global = true)]
    eps_num: Option<f64>,
}

#[derive(Subcommand)]
enum Experiment {
    /// Sample NLL table with exact mixture scores.
    AnalyticalTable(TableArgs),
    /// Score-difference curves ξ(t) for CLD and the VP diffusion.
    Xi(XiArgs),
    /// Input-Jacobian norm of a trained model over time.
    Jacobian(JacobianArgs),
    /// Time to equilibrium across damping regimes.
    Damping(DampingArgs),
    /// Gradient variance of HSM against DSM.
    Gradvar(GradVarArgs),
    /// Train the toy score network.
    Train(TrainArgs),
    /// Draw samples with an analytic or trained score.
    Sample(SampleArgs),
    /// Probability-flow NLL bounds on data points.
    Likelihood(LikelihoodArgs),
    /// Closed-form importance weights over time.
    Isweights(IsWeightArgs),
}

impl Experiment {
    fn name(&self) -> &'static str {
        match self {
            Experiment::AnalyticalTable(_) => "analytical-table",
            Experiment::Xi(_) => "xi",
            Experiment::Jacobian(_) => "jacobian",
            Experiment::Damping(_) => "damping",
            Experiment::Gradvar(_) => "gradvar",
            Experiment::Train(_) => "train",
            Experiment::Sample(_) => "sample",
            Experiment::Likelihood(_) => "likelihood",
            Experiment::Isweights(_) => "isweights",
        }
    }

    fn default_params(&self) -> CldParams {
        match self {
            Experiment::AnalyticalTable(_) => CldParams::default().with_eps_cutoff(1e-5),
            Experiment::Xi(_) => run::xi_params(),
            Experiment::Gradvar(_) => CldParams::default().with_gamma0(1.0),
            _ => CldParams::default(),
        }
    }
}

#[derive(Args, Serialize)]
struct TableArgs {
    #[arg(long)]
    n_samples: Option<usize>,
    /// Comma-separated step counts.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
    #[arg(long)]
    schedule: Option<ScheduleKind>,
}

#[derive(Args, Serialize)]
struct XiArgs {
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    n_mc: Option<usize>,
}

#[derive(Args, Serialize)]
struct JacobianArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    n_mc: Option<usize>,
}

#[derive(Args, Serialize)]
struct DampingArgs {
    /// Comma-separated values of Γ²/4M.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    n_rows: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Serialize)]
struct GradVarArgs {
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<f64>>,
    #[arg(long)]
    n_mc: Option<usize>,
    /// Data component width.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Where to store the trained model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    ema: Option<f64>,
    #[arg(long)]
    objective: Option<KernelKind>,
    /// `ml` or `reweighted`.
    #[arg(long, value_parser = ["ml", "reweighted"])]
    weighting: Option<String>,
    #[arg(long)]
    t_cut: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
}

#[derive(Args, Serialize)]
struct SampleArgs {
    #[arg(long, value_enum)]
    sampler: Option<SamplerChoice>,
    /// Number of sampler steps.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    /// Also update velocities in the final denoising step.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    denoise_velocity: bool,
    /// Trained model; the exact mixture score is used otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct LikelihoodArgs {
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    n_v: Option<usize>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    /// Estimate divergences with Hutchinson probes.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    hutchinson: bool,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct IsWeightArgs {
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CLD_LAB_THREADS") {
        let n: usize = v.parse().with_context(|| format!("CLD_LAB_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

struct Resolved {
    ctx: Ctx,
    format: Format,
    config: Value,
}

fn resolve_common(cli: &Cli, file: &ConfigFile) -> Result<Resolved> {
    let empty = Map::new();
    let file_params = match file.common.get("params") {
        Some(Value::Object(m)) => m,
        Some(_) => anyhow::bail!("`params` must be an object"),
        None => &empty,
    };
    let ps = resolve(ParamSettings::from(cli.experiment.default_params()), &[file_params, &flags(&cli.common.params)?])?;
    let params = ps.to_params()?;
    let mut file_common = file.common.clone();
    file_common.remove("params");
    let seed_format: (u64, Format) = {
        #[derive(Serialize, serde::Deserialize)]
        struct Sf {
            seed: u64,
            format: Format,
        }
        let s = resolve(Sf { seed: 0, format: Format::Csv }, &[&file_common, &flags(&cli.common)?])?;
        (s.seed, s.format)
    };
    Ok(Resolved {
        ctx: Ctx { seed: seed_format.0, params },
        format: seed_format.1,
        config: json!({ "params": ps, "seed": seed_format.0, "format": seed_format.1 }),
    })
}

fn dispatch(cli: &Cli, file: &ConfigFile, r: &Resolved) -> Result<(Value, Outcome)> {
    let ex = &file.experiment;
    macro_rules! go {
        ($args:expr, $default:expr, $f:path) => {{
            let s = resolve($default, &[ex, &flags($args)?])?;
            let v = serde_json::to_value(&s)?;
            Ok((v, $f(&r.ctx, &s)?))
        }};
    }
    match &cli.experiment {
        Experiment::AnalyticalTable(a) => go!(a, run::TableSettings::default(), run::analytical),
        Experiment::Xi(a) => go!(a, run::XiSettings::default(), run::xi),
        Experiment::Jacobian(a) => go!(a, run::JacobianSettings::default(), run::jacobian),
        Experiment::Damping(a) => go!(a, DampingConfig::default(), run::damping),
        Experiment::Gradvar(a) => go!(a, run::GradVarSettings::default(), run::gradvar),
        Experiment::Train(a) => go!(a, run::TrainSettings::default(), run::train_model),
        Experiment::Sample(a) => go!(a, run::SampleSettings::default(), run::sample),
        Experiment::Likelihood(a) => go!(a, run::LikelihoodSettings::default(), run::likelihood),
        Experiment::Isweights(a) => go!(a, run::IsWeightSettings::default(), run::isweights),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.experiment.name();
    let start = Instant::now();
    let mut manifest = RunManifest {
        experiment: name.to_string(),
        version: version_string(),
        config: Value::Null,
        seed: 0,
        wall_time_s: 0.0,
        threads: 1,
        metrics: Value::Null,
        rng: RunManifest::rng_description(),
        failures: Vec::new(),
    };
    let mpath = manifest_path(cli.common.manifest.as_deref(), cli.common.out.as_deref());
    let result = (|| -> Result<()> {
        configure_threads()?;
        manifest.threads = rayon::current_num_threads();
        let file = ConfigFile::load(cli.common.config.as_deref())?;
        let r = resolve_common(&cli, &file)?;
        manifest.seed = r.ctx.seed;
        manifest.config = r.config.clone();
        let (settings, outcome) = dispatch(&cli, &file, &r)?;
        manifest.config["experiment"] = settings;
        outcome.table.emit(name, r.format, cli.common.out.as_deref())?;
        manifest.metrics = outcome.metrics;
        manifest.failures = outcome.failures;
        Ok(())
    })();
    if let Err(e) = &result {
        manifest.failures.push(format!("{e:#}"));
    }
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    let written = write_manifest(&manifest, mpath.as_deref());
    for f in &manifest.failures {
        eprintln!("cld-lab {name}: {f}");
    }
    if let Err(e) = written {
        eprintln!("cld-lab {name}: {e:#}");
        return ExitCode::FAILURE;
    }
    if manifest.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
