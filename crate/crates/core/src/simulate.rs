//! Finite-population Monte Carlo: repeated sampling without replacement, a
//! random primary/validation split, and estimator comparison by normalized
//! bias, coverage and mean squared error.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias::{self, quantile_sorted, EstimateReport, Method, Sample, VarianceSource};
use crate::error::{Error, Result};
use crate::population::Population;
use crate::regress::{population_targets, Side};
use crate::rng;
use crate::scalar::Real;

/// Cells with a larger share of failed replications are flagged invalid.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    PlugIn,
    Debiased,
    ValidationOnly,
    Target,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::PlugIn => "plug_in",
            Estimator::Debiased => "debiased",
            Estimator::ValidationOnly => "validation_only",
            Estimator::Target => "target",
        }
    }
}

fn default_n_sample() -> usize {
    5000
}
fn default_fracs() -> Vec<f64> {
    vec![0.025, 0.05, 0.10, 0.25, 0.50]
}
fn default_replications() -> usize {
    1000
}
fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::PlugIn, Estimator::Debiased, Estimator::ValidationOnly]
}
fn default_side() -> Side {
    Side::Lhs
}
fn default_level() -> f64 {
    0.95
}
fn default_response() -> usize {
    1
}
fn default_plug_in_variance() -> VarianceSource {
    VarianceSource::Hc1
}
fn default_debiased_variance() -> VarianceSource {
    VarianceSource::Formula
}
fn default_bootstrap() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_n_sample")]
    pub n_sample: usize,
    #[serde(default = "default_fracs")]
    pub validation_fracs: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_side")]
    pub side: Side,
    /// Empty means every labeler in the population.
    #[serde(default)]
    pub labelers: Vec<String>,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    #[serde(default)]
    pub seed: u64,
    /// Response covariate for the concept-as-regressor side.
    #[serde(default = "default_response")]
    pub response: usize,
    /// Coefficients to score; empty means every non-intercept coefficient.
    #[serde(default)]
    pub coefficients: Vec<usize>,
    /// Interval method for the plug-in estimator (`hc1` or `bootstrap`).
    #[serde(default = "default_plug_in_variance")]
    pub plug_in_variance: VarianceSource,
    /// Interval method for the bias-corrected estimator.
    #[serde(default = "default_debiased_variance")]
    pub debiased_variance: VarianceSource,
    /// Replicates per bootstrap interval, when bootstrapping.
    #[serde(default = "default_bootstrap")]
    pub bootstrap_replications: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_sample: default_n_sample(),
            validation_fracs: default_fracs(),
            replications: default_replications(),
            estimators: default_estimators(),
            side: default_side(),
            labelers: Vec::new(),
            ci_level: default_level(),
            seed: 0,
            response: default_response(),
            coefficients: Vec::new(),
            plug_in_variance: default_plug_in_variance(),
            debiased_variance: default_debiased_variance(),
            bootstrap_replications: default_bootstrap(),
        }
    }
}

impl SimulationConfig {
    pub fn validate<T>(&self, pop: &Population<T>) -> Result<()> {
        if self.n_sample == 0 || self.n_sample > pop.len() {
            return Err(Error::Validation(format!(
                "n_sample = {} must lie in 1..={}",
                self.n_sample,
                pop.len()
            )));
        }
        if self.validation_fracs.is_empty() {
            return Err(Error::Validation("validation_fracs is empty".into()));
        }
        if let Some(f) = self.validation_fracs.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return Err(Error::Validation(format!("validation fraction {f} must lie in (0, 1)")));
        }
        if self.replications == 0 {
            return Err(Error::Validation("replications must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Validation("no estimators requested".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Validation(format!("ci_level {} must lie in (0, 1)", self.ci_level)));
        }
        if self.plug_in_variance == VarianceSource::Formula {
            return Err(Error::Validation("the plug-in estimator has no variance formula".into()));
        }
        let k = match self.side {
            Side::Lhs => pop.k(),
            Side::Rhs => 2,
        };
        if let Some(j) = self.coefficients.iter().find(|&&j| j >= k) {
            return Err(Error::Validation(format!("coefficient {j} out of range (k = {k})")));
        }
        Ok(())
    }

    fn scored(&self, k: usize) -> Vec<usize> {
        if self.coefficients.is_empty() {
            if k == 1 {
                vec![0]
            } else {
                (1..k).collect()
            }
        } else {
            self.coefficients.clone()
        }
    }
}

/// Monte Carlo metrics for one (labeler, coefficient, fraction, estimator).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationCellResult {
    pub labeler: String,
    pub coefficient: usize,
    pub frac: f64,
    pub estimator: Estimator,
    pub target: f64,
    pub replications: usize,
    pub failures: usize,
    pub valid: bool,
    pub mean_bias: f64,
    /// Replication standard deviation of the estimate.
    pub sd: f64,
    pub normalized_bias: f64,
    pub coverage: f64,
    pub mse: f64,
    /// Monte Carlo standard error of `mse`.
    pub mse_se: f64,
    pub mean_se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub p05: f64,
    pub median: f64,
    pub p95: f64,
}

impl QuantileRow {
    fn of(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| a.total_cmp(b));
        QuantileRow {
            p05: quantile_sorted(&values, 0.05),
            median: quantile_sorted(&values, 0.5),
            p95: quantile_sorted(&values, 0.95),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub cells: usize,
    pub normalized_bias: QuantileRow,
    pub coverage: QuantileRow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub mse: f64,
    pub cdf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub by_estimator: BTreeMap<String, EstimatorSummary>,
    /// Empirical CDF of cell MSE, per estimator.
    pub mse_cdf: BTreeMap<String, Vec<CdfPoint>>,
    pub invalid_cells: usize,
}

/// One replication: estimates per requested estimator, `None` on failure.
type Draw<T> = Vec<Option<EstimateReport<T>>>;

#[allow(clippy::too_many_arguments)]
fn estimate<T: Real>(
    pop: &Population<T>,
    sample: &Sample,
    labeler: &str,
    estimator: Estimator,
    config: &SimulationConfig,
    boot_seed: u64,
) -> Result<EstimateReport<T>> {
    let arms = sample.view();
    let (side, response, level) = (config.side, config.response, config.ci_level);
    let boot = |method| {
        debias::bootstrap_ci(
            pop,
            arms,
            labeler,
            method,
            side,
            response,
            config.bootstrap_replications,
            boot_seed,
            level,
        )
    };
    match estimator {
        Estimator::PlugIn => match config.plug_in_variance {
            VarianceSource::Bootstrap => boot(Method::PlugIn),
            _ => debias::plug_in(pop, arms, labeler, side, response, level),
        },
        Estimator::Debiased => match config.debiased_variance {
            VarianceSource::Bootstrap => boot(Method::DebiasedLhs),
            v => debias::debiased(pop, arms, labeler, side, response, v, level),
        },
        Estimator::ValidationOnly => debias::validation_only(pop, arms, side, response, level),
        Estimator::Target => debias::target_fit(pop, arms, side, response, level),
    }
}

fn stream_index(frac_index: usize, replication: usize) -> u64 {
    ((frac_index as u64) << 32) | replication as u64
}

fn cell<T: Real>(
    labeler: &str,
    coefficient: usize,
    frac: f64,
    estimator: Estimator,
    target: f64,
    reports: &[Option<&EstimateReport<T>>],
) -> SimulationCellResult {
    let ok: Vec<&EstimateReport<T>> = reports.iter().flatten().copied().collect();
    let failures = reports.len() - ok.len();
    let n = ok.len() as f64;
    let est: Vec<f64> = ok.iter().map(|r| r.coefficients[coefficient].as_f64()).collect();
    let mean = est.iter().sum::<f64>() / n;
    let sd = if ok.len() > 1 {
        (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let sq: Vec<f64> = est.iter().map(|e| (e - target).powi(2)).collect();
    let mse = sq.iter().sum::<f64>() / n;
    let mse_se = if ok.len() > 1 {
        (sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let covered = ok
        .iter()
        .filter(|r| r.ci_lower[coefficient].as_f64() <= target && target <= r.ci_upper[coefficient].as_f64())
        .count();
    let mean_bias = mean - target;
    SimulationCellResult {
        labeler: labeler.to_string(),
        coefficient,
        frac,
        estimator,
        target,
        replications: ok.len(),
        failures,
        valid: !ok.is_empty() && failures as f64 <= MAX_FAILURE_RATE * reports.len() as f64,
        mean_bias,
        sd,
        normalized_bias: if sd > 0.0 { mean_bias / sd } else { f64::NAN },
        coverage: if ok.is_empty() { f64::NAN } else { covered as f64 / n },
        mse,
        mse_se,
        mean_se: ok.iter().map(|r| r.se[coefficient].as_f64()).sum::<f64>() / n,
    }
}

/// Runs every (labeler, fraction) design for `config.replications`
/// replications and scores each requested estimator and coefficient.
///
/// Replication `b` at fraction index `f` draws from its own random stream,
/// so results do not depend on the number of worker threads. Within a
/// replication all estimators see the same sample.
pub fn run_monte_carlo<T: Real>(pop: &Population<T>, config: &SimulationConfig) -> Result<Vec<SimulationCellResult>> {
    config.validate(pop)?;
    let labelers = if config.labelers.is_empty() {
        pop.labelers()
    } else {
        config.labelers.clone()
    };
    if labelers.is_empty() {
        return Err(Error::Validation("population carries no labels".into()));
    }
    let k = match config.side {
        Side::Lhs => pop.k(),
        Side::Rhs => 2,
    };
    let scored = config.scored(k);
    let mut out = Vec::new();
    for labeler in &labelers {
        let targets = population_targets(pop, labeler, config.side, config.response)?;
        let theta: Vec<f64> = match config.side {
            Side::Lhs => targets.beta_star,
            Side::Rhs => targets.alpha_star,
        }
        .expect("targets for the requested side")
        .iter()
        .map(|t| t.as_f64())
        .collect();
        for (fi, &frac) in config.validation_fracs.iter().enumerate() {
            let draws: Vec<Result<Draw<T>>> = (0..config.replications)
                .into_par_iter()
                .map(|b| {
                    let idx = stream_index(fi, b);
                    let mut rng = rng::stream(config.seed, rng::TAG_REPLICATION, idx);
                    let sample = Sample::random(pop.len(), config.n_sample, frac, &mut rng)?;
                    let boot_seed = rng::derive_seed(config.seed, idx);
                    Ok(config
                        .estimators
                        .iter()
                        .map(|&e| estimate(pop, &sample, labeler, e, config, boot_seed).ok())
                        .collect())
                })
                .collect();
            let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
            for &j in &scored {
                for (ei, &estimator) in config.estimators.iter().enumerate() {
                    let reports: Vec<Option<&EstimateReport<T>>> = draws.iter().map(|d| d[ei].as_ref()).collect();
                    out.push(cell(labeler, j, frac, estimator, theta[j], &reports));
                }
            }
        }
    }
    Ok(out)
}

/// Quantiles of normalized bias and coverage across valid cells, per
/// estimator, and the empirical CDF of cell MSE.
pub fn summarize(results: &[SimulationCellResult]) -> Result<SimulationSummary> {
    if results.is_empty() {
        return Err(Error::Validation("no simulation cells to summarize".into()));
    }
    let mut groups: BTreeMap<String, Vec<&SimulationCellResult>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.valid) {
        groups.entry(r.estimator.name().to_string()).or_default().push(r);
    }
    let mut by_estimator = BTreeMap::new();
    let mut mse_cdf = BTreeMap::new();
    for (name, cells) in groups {
        let finite = |f: fn(&SimulationCellResult) -> f64| -> Vec<f64> {
            cells.iter().map(|c| f(c)).filter(|v| v.is_finite()).collect()
        };
        let nb = finite(|c| c.normalized_bias);
        let cov = finite(|c| c.coverage);
        let nan_row = QuantileRow {
            p05: f64::NAN,
            median: f64::NAN,
            p95: f64::NAN,
        };
        by_estimator.insert(
            name.clone(),
            EstimatorSummary {
                cells: cells.len(),
                normalized_bias: if nb.is_empty() { nan_row } else { QuantileRow::of(nb) },
                coverage: if cov.is_empty() { nan_row } else { QuantileRow::of(cov) },
            },
        );
        let mut mses = finite(|c| c.mse);
        mses.sort_by(|a, b| a.total_cmp(b));
        let n = mses.len() as f64;
        mse_cdf.insert(
            name,
            mses.iter()
                .enumerate()
                .map(|(i, &mse)| CdfPoint {
                    mse,
                    cdf: (i + 1) as f64 / n,
                })
                .collect(),
        );
    }
    Ok(SimulationSummary {
        by_estimator,
        mse_cdf,
        invalid_cells: results.iter().filter(|r| !r.valid).count(),
    })
}

pub fn write_cells_csv(results: &[SimulationCellResult], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for r in results {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_cells_csv(path: &Path) -> Result<Vec<SimulationCellResult>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Writes `cells.csv` and `summary.json` into `dir`.
pub fn write_outputs(results: &[SimulationCellResult], summary: &SimulationSummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_cells_csv(results, &dir.join("cells.csv"))?;
    let json = serde_json::to_string_pretty(summary)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{generate_synthetic, CovariateLaw, SyntheticSpec, SYNTHETIC_LABELER};

    fn pop(gamma: Vec<f64>, sd_delta: f64) -> Population<f64> {
        generate_synthetic(&SyntheticSpec {
            n_pieces: 600,
            beta_star: vec![1.0, 0.5],
            gamma,
            noise_sd_v: 1.0,
            noise_sd_delta: sd_delta,
            covariate_law: CovariateLaw::Bernoulli { p: 0.5 },
            seed: 11,
        })
        .unwrap()
    }

    fn small_config() -> SimulationConfig {
        SimulationConfig {
            n_sample: 300,
            validation_fracs: vec![0.1, 0.25],
            replications: 40,
            seed: 5,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn defaults_follow_protocol() {
        let c = SimulationConfig::default();
        assert_eq!(c.n_sample, 5000);
        assert_eq!(c.replications, 1000);
        assert_eq!(c.validation_fracs, vec![0.025, 0.05, 0.10, 0.25, 0.50]);
        let parsed: SimulationConfig = serde_json::from_str(r#"{"seed": 3, "side": "rhs"}"#).unwrap();
        assert_eq!(parsed.seed, 3);
        assert_eq!(parsed.side, Side::Rhs);
        assert!(serde_json::from_str::<SimulationConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let p = pop(vec![0.0, 0.0], 0.5);
        let mut c = small_config();
        c.validation_fracs = vec![1.0];
        assert!(c.validate(&p).is_err());
        let mut c = small_config();
        c.n_sample = 601;
        assert!(c.validate(&p).is_err());
        let mut c = small_config();
        c.replications = 0;
        assert!(c.validate(&p).is_err());
        let mut c = small_config();
        c.coefficients = vec![2];
        assert!(c.validate(&p).is_err());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let p = pop(vec![0.3, 0.2], 0.7);
        let c = small_config();
        let a = run_monte_carlo(&p, &c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_monte_carlo(&p, &c).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * 3);
    }

    #[test]
    fn truthful_labels_agree() {
        let p = pop(vec![0.0, 0.0], 0.0);
        let mut c = small_config();
        c.estimators = vec![Estimator::PlugIn, Estimator::Debiased, Estimator::Target];
        let cells = run_monte_carlo(&p, &c).unwrap();
        for chunk in cells.chunks(3) {
            assert!((chunk[0].mean_bias - chunk[1].mean_bias).abs() < 1e-9);
            assert!((chunk[0].mean_bias - chunk[2].mean_bias).abs() < 1e-9);
        }
    }

    #[test]
    fn summary_quantiles() {
        let base = SimulationCellResult {
            labeler: SYNTHETIC_LABELER.into(),
            coefficient: 1,
            frac: 0.05,
            estimator: Estimator::Debiased,
            target: 0.5,
            replications: 10,
            failures: 0,
            valid: true,
            mean_bias: 0.0,
            sd: 1.0,
            normalized_bias: 0.01,
            coverage: 0.93,
            mse: 0.2,
            mse_se: 0.01,
            mean_se: 0.3,
        };
        let s = summarize(std::slice::from_ref(&base)).unwrap();
        let row = s.by_estimator["debiased"].coverage;
        assert_eq!((row.p05, row.median, row.p95), (0.93, 0.93, 0.93));
        let cells: Vec<_> = [0.90, 0.93, 0.96]
            .iter()
            .map(|&c| SimulationCellResult {
                coverage: c,
                ..base.clone()
            })
            .collect();
        let s = summarize(&cells).unwrap();
        assert!((s.by_estimator["debiased"].coverage.median - 0.93).abs() < 1e-15);
        assert_eq!(s.mse_cdf["debiased"].last().unwrap().cdf, 1.0);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn cells_round_trip_through_csv() {
        let p = pop(vec![0.1, 0.1], 0.5);
        let mut c = small_config();
        c.replications = 5;
        let cells = run_monte_carlo(&p, &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = summarize(&cells).unwrap();
        write_outputs(&cells, &summary, dir.path()).unwrap();
        let back = read_cells_csv(&dir.path().join("cells.csv")).unwrap();
        assert_eq!(back.len(), cells.len());
        assert_eq!(back[0].labeler, cells[0].labeler);
        assert!((back[0].mse - cells[0].mse).abs() <= 1e-15 * cells[0].mse.abs().max(1.0));
    }
}
