//! `brownpack`: run packing, dispersion and analysis experiments from JSON configs.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 numerical failure
//! (including Reject saturation), 3 I/O or container error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use brownpack::io::ExperimentConfig;
use brownpack::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};

#[derive(Parser, Debug)]
#[command(name = "brownpack", version, about = "Latent-space identity packing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pack identities with Langevin dynamics (or resume a saved ensemble).
    Langevin(RunArgs),
    /// Grow intra-class variations around a reference ensemble.
    Dispersion(RunArgs),
    /// Dispersion initialised with random covariate mixes.
    Disco(RunArgs),
    /// Baseline sampler: accept draws that clear the inter-class threshold.
    Reject(RunArgs),
    /// Greedily drop the most-contacted identities until none touch.
    Erode(RunArgs),
    /// Distance histograms and threshold ratios of an ensemble.
    Stats(RunArgs),
    /// Fit unit latent directions from labelled latents.
    FitDirections(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON config; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, short, default_value = "brownpack-out")]
    out: PathBuf,
    /// Worker threads. Does not change any output.
    #[arg(long, env = "BROWNPACK_WORKERS")]
    workers: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

/// One flag per config key.
#[derive(Args, Debug, Default, Serialize)]
struct Overrides {
    /// identity, linear or mlp.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d_w: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d_e: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_id: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_var: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_tr: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_init: Option<f64>,
    /// Comma-separated components.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    w_avg: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_e: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d0_e: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_w: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_iter: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_w_disp: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d0_w: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_e_disp: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_w_tilde: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta0_tilde: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt_tilde: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_iter_disp: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    xi0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_tr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d_tr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt_cap: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ict: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_attempts: Option<u64>,
    /// Erosion threshold is `d0_e / d0_factor` unless `--ict` is given.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d0_factor: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ridge: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_bins: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    covariates: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    training: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    variations: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    labeled: Option<PathBuf>,
}

impl Overrides {
    fn to_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("overrides serialise to an object"),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Spec(_) | Error::Shape(_) => 1,
        Error::Numeric(_) | Error::Domain(_) | Error::Saturation { .. } => 2,
        Error::Io { .. }
        | Error::Format(_)
        | Error::UnsupportedVersion { .. }
        | Error::Header(_)
        | Error::Corrupt(_) => 3,
    }
}

fn load(args: &RunArgs) -> brownpack::Result<ExperimentConfig> {
    let text = match &args.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?),
        None => None,
    };
    ExperimentConfig::from_layers(text.as_deref(), args.overrides.to_map())
}

fn run(name: &str, args: &RunArgs) -> brownpack::Result<Value> {
    let config = load(args)?;
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    log::info!("{name}: writing to {}", args.out.display());
    let out = &args.out;
    match name {
        "langevin" => commands::langevin(&config, out),
        "dispersion" => commands::dispersion(&config, out, false),
        "disco" => commands::dispersion(&config, out, true),
        "reject" => commands::reject(&config, out),
        "erode" => commands::erode(&config, out),
        "stats" => commands::stats(&config, out),
        "fit-directions" => commands::fit_directions(&config, out),
        _ => unreachable!("unknown subcommand {name}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            println!(
                "{}",
                json!({"status": "error", "exit_code": 1, "error": "invalid command line"})
            );
            return ExitCode::from(1);
        }
    };
    let (name, args) = match &cli.command {
        Command::Langevin(a) => ("langevin", a),
        Command::Dispersion(a) => ("dispersion", a),
        Command::Disco(a) => ("disco", a),
        Command::Reject(a) => ("reject", a),
        Command::Erode(a) => ("erode", a),
        Command::Stats(a) => ("stats", a),
        Command::FitDirections(a) => ("fit-directions", a),
    };
    match run(name, args) {
        Ok(mut summary) => {
            summary["command"] = json!(name);
            summary["status"] = json!("ok");
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e}");
            let mut summary = json!({"command": name, "status": "error", "exit_code": code, "error": e.to_string()});
            if let Error::Saturation {
                accepted,
                target,
                attempts,
            } = e
            {
                summary["accepted"] = json!(accepted);
                summary["target"] = json!(target);
                summary["attempts"] = json!(attempts);
            }
            println!("{summary}");
            ExitCode::from(code)
        }
    }
}
