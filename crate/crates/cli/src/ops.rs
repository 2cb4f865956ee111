//! Subcommand implementations. Each takes a JSON parameter object (from
//! flags, a config file, or a jsonl envelope) and returns a JSON result.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use textlabel_core::bounds::{adversarial_band_member, gpt_for_estimation_check, sensitive_set, GuaranteeBand};
use textlabel_core::context::{
    enumerate_expectations, leakage_term_estimation, leakage_term_prediction, load_context, LossSpec,
    ResearchContext, SamplingTable, ENUMERATION_LIMIT,
};
use textlabel_core::debias::{
    bootstrap_ci, debiased, default_variance, plug_in, target_fit, validation_only, Arms, Method, Sample,
    VarianceSource,
};
use textlabel_core::moment::{MomentFamily, MomentSpec};
use textlabel_core::population::{
    generate_synthetic, load_population, save_population, CovariateLaw, Format, Population, SyntheticSpec,
    TextPiece, SYNTHETIC_LABELER,
};
use textlabel_core::regress::{population_targets, Side};
use textlabel_core::rng;
use textlabel_core::simulate::{run_monte_carlo, summarize, write_outputs, SimulationConfig};
use textlabel_probe::{probe_report, run_probe, ProbeConfig};

use crate::error::{CliError, CliResult};

pub const OPS: &[&str] = &[
    "synth", "targets", "estimate", "debias", "bounds", "leakage", "simulate", "probe", "check",
];

pub fn dispatch(op: &str, params: Value) -> CliResult<Value> {
    let params = match params {
        Value::Null => Value::Object(Map::new()),
        p @ Value::Object(_) => p,
        _ => return Err(CliError::validation("params must be a JSON object")),
    };
    match op {
        "synth" => synth(parse(params)?),
        "targets" => targets(parse(params)?),
        "estimate" => estimate(parse(params)?),
        "debias" => debias(parse(params)?),
        "bounds" => bounds(parse(params)?),
        "leakage" => leakage(parse(params)?),
        "simulate" => simulate(params),
        "probe" => probe(params),
        "check" => check(parse(params)?),
        other => Err(CliError::validation(format!(
            "unknown operation {other:?}; expected one of {}",
            OPS.join(", ")
        ))),
    }
}

fn parse<P: DeserializeOwned>(params: Value) -> CliResult<P> {
    serde_json::from_value(params).map_err(|e| CliError::validation(format!("invalid parameters: {e}")))
}

fn to_json<S: Serialize>(value: &S) -> CliResult<Value> {
    serde_json::to_value(value).map_err(|e| CliError::numeric(format!("unserializable result: {e}")))
}

fn load_pop(path: &Path) -> CliResult<Population<f64>> {
    load_population(path, Format::from_path(path)).map_err(|e| {
        let mut e = CliError::from(e);
        e.message = format!("{}: {}", path.display(), e.message);
        e
    })
}

fn default_labeler() -> String {
    SYNTHETIC_LABELER.to_string()
}
fn default_side() -> Side {
    Side::Lhs
}
fn default_response() -> usize {
    1
}
fn default_level() -> f64 {
    0.95
}
fn default_bootstrap_reps() -> usize {
    1000
}
fn default_context() -> String {
    "census".to_string()
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthParams {
    n_pieces: usize,
    beta_star: Vec<f64>,
    gamma: Vec<f64>,
    #[serde(default = "one")]
    noise_sd_v: f64,
    #[serde(default = "one")]
    noise_sd_delta: f64,
    /// `normal`, `grid`, or `bernoulli:P`.
    #[serde(default)]
    covariate: Option<String>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn covariate_law(spec: Option<&str>) -> CliResult<CovariateLaw> {
    Ok(match spec.unwrap_or("normal") {
        "normal" => CovariateLaw::StandardNormal,
        "grid" => CovariateLaw::FixedGrid,
        other => match other.strip_prefix("bernoulli:").map(str::parse) {
            Some(Ok(p)) => CovariateLaw::Bernoulli { p },
            _ => {
                return Err(CliError::validation(format!(
                    "covariate law {other:?} is not normal, grid or bernoulli:P"
                )))
            }
        },
    })
}

fn synth(p: SynthParams) -> CliResult<Value> {
    let spec = SyntheticSpec {
        n_pieces: p.n_pieces,
        beta_star: p.beta_star,
        gamma: p.gamma,
        noise_sd_v: p.noise_sd_v,
        noise_sd_delta: p.noise_sd_delta,
        covariate_law: covariate_law(p.covariate.as_deref())?,
        seed: p.seed,
    };
    let pop: Population<f64> = generate_synthetic(&spec)?;
    let targets = population_targets(&pop, SYNTHETIC_LABELER, Side::Lhs, 1)?;
    if let Some(out) = &p.out {
        save_population(&pop, out, Format::from_path(out))?;
    }
    Ok(json!({
        "out": p.out,
        "n_pieces": pop.len(),
        "k": pop.k(),
        "labelers": pop.labelers(),
        "spec": spec,
        "targets": targets,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetsParams {
    pop: PathBuf,
    #[serde(default = "default_labeler")]
    labeler: String,
    #[serde(default = "default_side")]
    side: Side,
    #[serde(default = "default_response")]
    response: usize,
}

fn targets(p: TargetsParams) -> CliResult<Value> {
    let pop = load_pop(&p.pop)?;
    to_json(&population_targets(&pop, &p.labeler, p.side, p.response)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EstimateMethod {
    PlugIn,
    ValidationOnly,
    Target,
    Debiased,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateParams {
    pop: PathBuf,
    #[serde(default = "default_method")]
    method: EstimateMethod,
    #[serde(default = "default_side")]
    side: Side,
    #[serde(default = "default_labeler")]
    labeler: String,
    #[serde(default = "default_response")]
    response: usize,
    /// Column of arm codes 0/1/2 in the population CSV.
    #[serde(default)]
    validation_col: Option<String>,
    #[serde(default)]
    validation_frac: Option<f64>,
    /// Pieces drawn before splitting off the validation arm; defaults to all.
    #[serde(default)]
    n_sample: Option<usize>,
    #[serde(default)]
    variance: Option<VarianceSource>,
    #[serde(default = "default_bootstrap_reps")]
    bootstrap_reps: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_level")]
    level: f64,
}

fn default_method() -> EstimateMethod {
    EstimateMethod::PlugIn
}

fn arm_codes(path: &Path, column: &str, pop: &Population<f64>) -> CliResult<Vec<u8>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::io(e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col = find(column).ok_or_else(|| CliError::validation(format!("no column {column:?} in {}", path.display())))?;
    let id_col = find("id").ok_or_else(|| CliError::validation("population CSV has no id column"))?;
    let mut codes = vec![None; pop.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::validation(format!("row {}: {e}", row + 1)))?;
        let id = record.get(id_col).unwrap_or("");
        let i = pop
            .index_of(id)
            .ok_or_else(|| CliError::validation(format!("row {}: unknown id {id:?}", row + 1)))?;
        let raw = record.get(col).unwrap_or("");
        let code: u8 = raw
            .parse()
            .map_err(|_| CliError::validation(format!("row {}: arm code {raw:?} is not 0, 1 or 2", row + 1)))?;
        codes[i] = Some(code);
    }
    codes
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or_else(|| CliError::validation(format!("no arm code for piece {:?}", pop.piece(i).id))))
        .collect()
}

fn sample_for(p: &EstimateParams, pop: &Population<f64>) -> CliResult<Sample> {
    match (&p.validation_col, p.validation_frac) {
        (Some(_), Some(_)) => Err(CliError::validation(
            "give either validation_col or validation_frac, not both",
        )),
        (Some(col), None) => {
            if Format::from_path(&p.pop) != Format::Csv {
                return Err(CliError::validation("validation_col needs a CSV population"));
            }
            Ok(Sample::from_codes(&arm_codes(&p.pop, col, pop)?)?)
        }
        (None, Some(frac)) => {
            let n = p.n_sample.unwrap_or(pop.len());
            let mut stream = rng::stream(p.seed, rng::TAG_PARTITION, 0);
            Ok(Sample::random(pop.len(), n, frac, &mut stream)?)
        }
        (None, None) => Err(CliError::validation("a validation_col or validation_frac is required")),
    }
}

fn estimate(p: EstimateParams) -> CliResult<Value> {
    let pop = load_pop(&p.pop)?;
    let sample = sample_for(&p, &pop)?;
    let arms: Arms<'_> = sample.view();
    let method = match p.method {
        EstimateMethod::PlugIn => Method::PlugIn,
        EstimateMethod::ValidationOnly => Method::ValidationOnly,
        EstimateMethod::Target => Method::Target,
        EstimateMethod::Debiased if p.side == Side::Lhs => Method::DebiasedLhs,
        EstimateMethod::Debiased => Method::DebiasedRhs,
    };
    let variance = match (p.variance, p.method) {
        (Some(v), _) => v,
        (None, EstimateMethod::Debiased) => default_variance(&pop, p.side).unwrap_or(VarianceSource::Bootstrap),
        (None, _) => VarianceSource::Hc1,
    };
    let report = if variance == VarianceSource::Bootstrap {
        let mut r = bootstrap_ci(
            &pop,
            arms,
            &p.labeler,
            method,
            p.side,
            p.response,
            p.bootstrap_reps,
            p.seed,
            p.level,
        )?;
        r.seed = Some(p.seed);
        r
    } else {
        let mut r = match p.method {
            EstimateMethod::Debiased => debiased(&pop, arms, &p.labeler, p.side, p.response, variance, p.level)?,
            _ if variance == VarianceSource::Formula => {
                return Err(CliError::validation("the variance formula applies to the debiased estimator only"))
            }
            EstimateMethod::PlugIn => plug_in(&pop, arms, &p.labeler, p.side, p.response, p.level)?,
            EstimateMethod::ValidationOnly => validation_only(&pop, arms, p.side, p.response, p.level)?,
            EstimateMethod::Target => target_fit(&pop, arms, p.side, p.response, p.level)?,
        };
        if p.validation_frac.is_some() {
            r.seed = Some(p.seed);
        }
        r
    };
    to_json(&report)
}

fn debias(mut p: Map<String, Value>) -> CliResult<Value> {
    if let Some(m) = p.get("method").filter(|m| m.as_str() != Some("debiased")) {
        return Err(CliError::validation(format!("debias does not take method {m}")));
    }
    p.insert("method".into(), json!("debiased"));
    estimate(parse(Value::Object(p))?)
}

/// A moment function with its parameter box and concept domain.
#[derive(Clone, Debug, Deserialize)]
pub struct MomentParams {
    #[serde(flatten)]
    family: MomentFamily,
    theta_lo: Vec<f64>,
    theta_hi: Vec<f64>,
    v_lo: f64,
    v_hi: f64,
    g_lower: f64,
}

impl MomentParams {
    fn spec(&self) -> CliResult<MomentSpec<f64>> {
        Ok(MomentSpec::new(
            self.family,
            self.theta_lo.clone(),
            self.theta_hi.clone(),
            self.v_lo,
            self.v_hi,
            self.g_lower,
        )?)
    }
}

fn preset_args(spec: &str) -> Option<(&str, Vec<f64>)> {
    let (name, rest) = match spec.find('(') {
        Some(open) => (&spec[..open], spec[open + 1..].strip_suffix(')')?),
        None => (spec, ""),
    };
    let args = if rest.trim().is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(|a| a.trim().parse().ok()).collect::<Option<Vec<f64>>>()?
    };
    Some((name.trim(), args))
}

/// `census[(q)]`, `random(p[, q])`, `post_cutoff[(p)]`, or a context file,
/// where `q` is the training probability (default 0.5).
fn resolve_context(spec: &str, pop: &Population<f64>) -> CliResult<ResearchContext<f64>> {
    let n = pop.len();
    let bad = || CliError::validation(format!("malformed context preset {spec:?}"));
    if let Some((name, args)) = preset_args(spec) {
        let ctx = match (name, args.as_slice()) {
            ("census", []) => Some(ResearchContext::census(n, 0.5)),
            ("census", [q]) => Some(ResearchContext::census(n, *q)),
            ("random", [p]) => Some(ResearchContext::random(n, *p, 0.5)),
            ("random", [p, q]) => Some(ResearchContext::random(n, *p, *q)),
            ("post_cutoff", []) => Some(ResearchContext::post_cutoff(n, 1.0)),
            ("post_cutoff", [p]) => Some(ResearchContext::post_cutoff(n, *p)),
            ("census" | "random" | "post_cutoff", _) => return Err(bad()),
            _ => None,
        };
        if let Some(ctx) = ctx {
            return Ok(ctx?);
        }
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::io(format!("context file {spec:?} does not exist")));
    }
    Ok(load_context(path, pop)?)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsParams {
    pop: PathBuf,
    #[serde(default = "default_context")]
    context: String,
    moment: MomentParams,
    delta: f64,
    #[serde(default)]
    theta: Option<Vec<f64>>,
}

fn bounds(p: BoundsParams) -> CliResult<Value> {
    let pop = load_pop(&p.pop)?;
    let ctx = resolve_context(&p.context, &pop)?;
    let moment = p.moment.spec()?;
    let band = GuaranteeBand::new(p.delta)?;
    let theta = p.theta.unwrap_or_else(|| moment.theta_center());
    let member = adversarial_band_member(&pop, &ctx, &moment, band, &theta)?;
    let sensitive = sensitive_set(&pop, &ctx, &moment)?;
    let verdict = match gpt_for_estimation_check(&pop, &ctx, std::slice::from_ref(&moment), band) {
        Ok(v) => Some(v),
        Err(textlabel_core::Error::NoSensitiveMoment) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(json!({
        "lower_bound": member.lower_bound,
        "achieved_error": member.achieved_error,
        "upper_bound": member.upper_bound,
        "g_upper": member.g_upper,
        "delta": p.delta,
        "theta": theta,
        "n_sensitive": sensitive.len(),
        "gpt_for_estimation": verdict,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LeakageParams {
    pop: PathBuf,
    #[serde(default = "default_context")]
    context: String,
    /// Predictions come from this labeler.
    #[serde(default = "default_labeler")]
    labeler: String,
    #[serde(default)]
    loss: Option<LossSpec>,
    /// Switches to the estimation leakage term of this moment.
    #[serde(default)]
    moment: Option<MomentParams>,
    #[serde(default)]
    theta: Option<Vec<f64>>,
}

fn leakage(p: LeakageParams) -> CliResult<Value> {
    let pop = load_pop(&p.pop)?;
    let ctx = resolve_context(&p.context, &pop)?;
    if let Some(m) = &p.moment {
        if p.loss.is_some() {
            return Err(CliError::validation("give either a loss or a moment, not both"));
        }
        let moment = m.spec()?;
        let theta = p.theta.unwrap_or_else(|| moment.theta_center());
        let term = leakage_term_estimation(&pop, &ctx, &moment, &p.labeler, &theta)?;
        return Ok(json!({"mode": "estimation", "theta": theta, "leakage_term": term}));
    }
    let loss = p.loss.unwrap_or(LossSpec::Squared);
    let predictions = pop.labels(&p.labeler)?;
    let terms = leakage_term_prediction(&pop, &ctx, loss, &predictions)?;
    let enumeration = if pop.len() <= ENUMERATION_LIMIT {
        let stat: Vec<f64> = pop
            .pieces()
            .iter()
            .zip(&predictions)
            .map(|(piece, &yhat)| loss.evaluate(piece.y.unwrap_or_default(), yhat))
            .collect();
        Some(enumerate_expectations(&pop, &ctx, &stat)?)
    } else {
        None
    };
    Ok(json!({
        "mode": "prediction",
        "loss": loss,
        "unconditional": terms.unconditional,
        "conditional": terms.conditional,
        "leakage_bias": terms.leakage_bias,
        "leakage_free": terms.is_leakage_free(),
        "enumeration": enumeration,
    }))
}

/// `pop` or `synthetic` picks the population; `out` names the output
/// directory; every other key belongs to the simulation config.
fn simulate(params: Value) -> CliResult<Value> {
    let Value::Object(mut map) = params else { unreachable!() };
    let pop_path: Option<PathBuf> = map.remove("pop").map(parse).transpose()?;
    let synthetic: Option<SyntheticSpec> = map.remove("synthetic").map(parse).transpose()?;
    let out: Option<PathBuf> = map.remove("out").map(parse).transpose()?;
    let config: SimulationConfig = parse(Value::Object(map))?;
    let pop = match (pop_path, synthetic) {
        (Some(path), None) => load_pop(&path)?,
        (None, Some(spec)) => generate_synthetic(&spec)?,
        _ => return Err(CliError::validation("give exactly one of pop or synthetic")),
    };
    let cells = run_monte_carlo(&pop, &config)?;
    let summary = summarize(&cells)?;
    if let Some(dir) = &out {
        write_outputs(&cells, &summary, dir)?;
    }
    Ok(json!({"out": out, "config": config, "cells": cells, "summary": summary}))
}

fn probe(params: Value) -> CliResult<Value> {
    let Value::Object(mut map) = params else { unreachable!() };
    let pop_path: PathBuf = parse(
        map.remove("pop")
            .ok_or_else(|| CliError::validation("probe needs a pop"))?,
    )?;
    let records_out: Option<PathBuf> = map.remove("records_out").map(parse).transpose()?;
    let config: ProbeConfig = parse(Value::Object(map))?;
    config.validate()?;
    let pop = load_pop(&pop_path)?;
    let runtime = tokio::runtime::Runtime::new()?;
    let (records, report) = runtime.block_on(async {
        let client = config.client()?;
        let mut records = run_probe(&pop, &config, &client).await?;
        let report = match &config.embed_model {
            Some(m) => Some(probe_report(&mut records, &client, m, config.seed).await?),
            None => None,
        };
        Ok::<_, CliError>((records, report))
    })?;
    if let Some(path) = &records_out {
        let mut lines = String::new();
        for r in &records {
            lines.push_str(&serde_json::to_string(r).map_err(|e| CliError::io(e.to_string()))?);
            lines.push('\n');
        }
        std::fs::write(path, lines)?;
    }
    Ok(json!({
        "n_pieces": records.len(),
        "n_failed": records.iter().filter(|r| r.error.is_some()).count(),
        "exact_match_count": records.iter().filter(|r| r.exact_match).count(),
        "report": report,
        "records_out": records_out,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckParams {
    #[serde(default, rename = "self")]
    self_test: bool,
}

#[derive(Debug, Serialize)]
struct CheckOutcome {
    name: &'static str,
    passed: bool,
    cases: usize,
    max_residual: f64,
}

/// Small deterministic context: cell weights cycle through a fixed pattern.
fn fixture(n: usize, shift: usize) -> (Population<f64>, ResearchContext<f64>, Vec<f64>) {
    let weights = [1.0, 2.0, 0.0, 3.0, 1.0, 4.0, 2.0, 5.0];
    let mut tables = Vec::new();
    let mut bits = Vec::new();
    let mut pieces = Vec::new();
    let mut predictions = Vec::new();
    for r in 0..n {
        let c: Vec<f64> = (0..4).map(|j| weights[(r + shift + 3 * j) % weights.len()] + 0.5).collect();
        let total: f64 = c.iter().sum();
        let table = SamplingTable::new(c[0] / total, c[1] / total, c[2] / total, c[3] / total).expect("valid table");
        tables.push(table);
        bits.push((r + shift) % 3 != 0);
        pieces.push(TextPiece::new(format!("f{r}"), 0.0, vec![1.0]).with_y(((r * 7 + shift) % 5) as f64 - 2.0));
        predictions.push(((r * 3 + shift) % 4) as f64 - 1.5);
    }
    (
        Population::new(pieces).expect("distinct ids"),
        ResearchContext::new(tables, bits).expect("valid context"),
        predictions,
    )
}

fn check(p: CheckParams) -> CliResult<Value> {
    if !p.self_test {
        return Err(CliError::validation("check needs --self"));
    }
    let mut identity = CheckOutcome {
        name: "leakage_identity_vs_enumeration",
        passed: true,
        cases: 0,
        max_residual: 0.0,
    };
    for n in 1..=8 {
        for shift in 0..4 {
            for loss in [LossSpec::Squared, LossSpec::Absolute, LossSpec::ZeroOne] {
                let (pop, ctx, pred) = fixture(n, shift);
                let terms = leakage_term_prediction(&pop, &ctx, loss, &pred)?;
                let stat: Vec<f64> = pop
                    .pieces()
                    .iter()
                    .zip(&pred)
                    .map(|(piece, &yhat)| loss.evaluate(piece.y.unwrap(), yhat))
                    .collect();
                let e = enumerate_expectations(&pop, &ctx, &stat)?;
                let residual = (terms.unconditional - e.e_unconditional)
                    .abs()
                    .max((terms.conditional - e.e_conditional_on_t).abs());
                identity.max_residual = identity.max_residual.max(residual);
                identity.passed &= residual <= 1e-12 * (1.0 + e.e_unconditional.abs())
                    && terms.unconditional == terms.conditional - terms.leakage_bias;
                identity.cases += 1;
            }
        }
    }

    let mut independence = CheckOutcome {
        name: "independent_sampling_has_no_leakage",
        passed: true,
        cases: 0,
        max_residual: 0.0,
    };
    for n in 1..=8 {
        for (p_d, q_t) in [(0.3, 0.6), (1.0, 0.5), (0.7, 0.0)] {
            let (pop, _, pred) = fixture(n, n);
            let tables = vec![SamplingTable::independent(p_d, q_t)?; n];
            let ctx = ResearchContext::new(tables, vec![q_t > 0.0; n])?;
            let terms = leakage_term_prediction(&pop, &ctx, LossSpec::Squared, &pred)?;
            independence.max_residual = independence.max_residual.max(terms.leakage_bias.abs());
            independence.passed &= terms.is_leakage_free();
            independence.cases += 1;
        }
    }

    let mut census = CheckOutcome {
        name: "debiased_census_equals_target",
        passed: true,
        cases: 0,
        max_residual: 0.0,
    };
    for seed in 0..3 {
        let spec = SyntheticSpec {
            n_pieces: 300,
            beta_star: vec![1.0, 0.5],
            gamma: vec![0.2, 0.3],
            noise_sd_v: 1.0,
            noise_sd_delta: 0.5,
            covariate_law: CovariateLaw::StandardNormal,
            seed,
        };
        let pop: Population<f64> = generate_synthetic(&spec)?;
        let all: Vec<usize> = (0..pop.len()).collect();
        let arms = Arms {
            primary: &all,
            validation: &all,
            population_size: pop.len(),
        };
        let report = debiased(&pop, arms, SYNTHETIC_LABELER, Side::Lhs, 1, VarianceSource::Hc1, 0.95)?;
        let target = population_targets(&pop, SYNTHETIC_LABELER, Side::Lhs, 1)?;
        let residual = report
            .coefficients
            .iter()
            .zip(target.beta_star.as_deref().unwrap_or_default())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        census.max_residual = census.max_residual.max(residual);
        census.passed &= residual <= 1e-9;
        census.cases += 1;
    }

    let checks = [identity, independence, census];
    let passed = checks.iter().all(|c| c.passed);
    let result = json!({"passed": passed, "checks": checks});
    if passed {
        Ok(result)
    } else {
        Err(CliError::numeric(format!("self-check failed: {result}")))
    }
}
