use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};
use textlabel_cli::{dispatch, merge, read_config, render, serve_jsonl, CliError, CliResult};

#[derive(Parser)]
#[command(name = "textlabel", version, about = "Bias analysis for regressions on model-generated text labels")]
struct Cli {
    /// Emit one JSON document instead of a table.
    #[arg(long, global = true)]
    json: bool,
    /// Answer line-delimited JSON requests from standard input.
    #[arg(long, conflicts_with = "json")]
    jsonl: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population with planted label error.
    Synth(SynthArgs),
    /// Population target and plug-in coefficients with their linking identities.
    Targets(TargetsArgs),
    /// Fit plug-in, validation-only, target or bias-corrected regressions on a sample.
    Estimate(EstimateArgs),
    /// Bias-corrected regression on a sample.
    Debias(DebiasArgs),
    /// Lower, achieved and upper moment error over a guarantee band.
    Bounds(BoundsArgs),
    /// Leakage decomposition of expected loss or of a moment.
    Leakage(LeakageArgs),
    /// Monte Carlo study over validation fractions.
    Simulate(SimulateArgs),
    /// Split-text completion probe against an OpenAI-compatible endpoint.
    Probe(ProbeArgs),
    /// Run the built-in identity checks.
    Check(CheckArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[serde(skip)]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_pieces: Option<usize>,
    /// Comma-separated, intercept first.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_star: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_sd_v: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_sd_delta: Option<f64>,
    /// normal, grid, or bernoulli:P
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    covariate: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Population file to write (.csv or .json).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TargetsArgs {
    #[serde(skip)]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pop: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    labeler: Option<String>,
    /// lhs or rhs
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    side: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<usize>,
}

#[derive(Args, Serialize)]
struct SampleArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pop: Option<PathBuf>,
    /// lhs or rhs
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    side: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    labeler: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<usize>,
    /// CSV column of arm codes: 0 excluded, 1 primary, 2 validation.
    #[arg(long, conflicts_with = "validation_frac")]
    #[serde(skip_serializing_if = "Option::is_none")]
    validation_col: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    validation_frac: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_sample: Option<usize>,
    /// formula, bootstrap or hc1
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    variance: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap_reps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    level: Option<f64>,
}

#[derive(Args, Serialize)]
struct EstimateArgs {
    #[serde(skip)]
    #[arg(long)]
    config: Option<PathBuf>,
    /// plug_in, validation_only, target or debiased
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    sample: SampleArgs,
}

#[derive(Args, Serialize)]
struct DebiasArgs {
    #[serde(skip)]
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    sample: SampleArgs,
}

#[derive(Args, Serialize)]
struct MomentArgs {
    /// product, residual or squared
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    family: Option<String>,
    /// Covariate index for the product and residual families.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    j: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_lo: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_hi: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    v_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    v_hi: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    g_lower: Option<f64>,
}

#[derive(Args, Serialize)]
struct BoundsArgs {
    #[serde(skip)]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pop: Option<PathBuf>,
    /// census[(q)], random(p[,q]), post_cutoff[(p)] or a context file
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    context: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(skip)]
    moment: MomentArgs,
}

#[derive(Args, Serialize)]
struct LeakageArgs {
    #[serde(skip)]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pop: Option<PathBuf>,
    /// census[(q)], random(p[,q]), post_cutoff[(p)] or a context file
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    context: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    labeler: Option<String>,
    /// squared, absolute or zero_one
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(skip)]
    moment: MomentArgs,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Simulation config (TOML or JSON).
    #[serde(skip)]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pop: Option<PathBuf>,
    /// Directory for cells.csv and summary.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    replications: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_sample: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct ProbeArgs {
    #[serde(skip)]
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pop: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    endpoint: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    embed_model: Option<String>,
    #[arg(long = "split")]
    #[serde(skip_serializing_if = "Option::is_none")]
    split_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    concurrency: Option<usize>,
    #[arg(long = "cache")]
    #[serde(skip_serializing_if = "Option::is_none")]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    token_env: Option<String>,
    /// Write one JSON completion record per line here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    records_out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CheckArgs {
    #[arg(long = "self")]
    #[serde(rename = "self")]
    self_test: bool,
}

fn to_map<S: Serialize>(args: &S) -> Value {
    serde_json::to_value(args).expect("flag structs serialize")
}

/// Moves moment flags under a `moment` key.
fn with_moment(mut flags: Value, moment: &MomentArgs) -> Value {
    let Value::Object(m) = to_map(moment) else { unreachable!() };
    if !m.is_empty() {
        flags["moment"] = Value::Object(m);
    }
    flags
}

impl Command {
    fn request(&self) -> (&'static str, Option<&PathBuf>, Value) {
        match self {
            Command::Synth(a) => ("synth", a.config.as_ref(), to_map(a)),
            Command::Targets(a) => ("targets", a.config.as_ref(), to_map(a)),
            Command::Estimate(a) => ("estimate", a.config.as_ref(), to_map(a)),
            Command::Debias(a) => ("debias", a.config.as_ref(), to_map(a)),
            Command::Bounds(a) => ("bounds", a.config.as_ref(), with_moment(to_map(a), &a.moment)),
            Command::Leakage(a) => ("leakage", a.config.as_ref(), with_moment(to_map(a), &a.moment)),
            Command::Simulate(a) => ("simulate", a.config.as_ref(), to_map(a)),
            Command::Probe(a) => ("probe", a.config.as_ref(), to_map(a)),
            Command::Check(a) => ("check", None, to_map(a)),
        }
    }
}

fn run(command: &Command) -> CliResult<Value> {
    let (op, config, flags) = command.request();
    let mut params = match config {
        Some(path) => read_config(path)?,
        None => Value::Object(Map::new()),
    };
    merge(&mut params, flags);
    dispatch(op, params)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jsonl {
        let stdin = std::io::stdin();
        return match serve_jsonl(stdin.lock(), std::io::stdout().lock()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(4)
            }
        };
    }
    let Some(command) = &cli.command else {
        use clap::CommandFactory;
        eprintln!("{}", Cli::command().render_usage());
        return ExitCode::from(2);
    };
    match run(command) {
        Ok(result) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&result).expect("json values serialize"));
            } else {
                print!("{}", render::table(&result));
            }
            ExitCode::SUCCESS
        }
        Err(e) => report_error(&e, cli.json),
    }
}

fn report_error(e: &CliError, json: bool) -> ExitCode {
    if json {
        println!("{}", serde_json::json!({"error": e}));
    }
    eprintln!("error: {e}");
    ExitCode::from(e.kind.exit_code() as u8)
}
