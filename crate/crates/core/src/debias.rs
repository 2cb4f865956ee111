//! Estimators that combine a primary sample carrying machine labels with a
//! validation sample on which the trusted measurement is also observed.
//!
//! Concept as dependent variable (`Side::Lhs`): the plug-in fit of labels on
//! covariates over the primary arm, minus the validation-arm projection of
//! the label error on covariates.
//!
//! Concept as regressor (`Side::Rhs`, regressors `(1, v)`, response `w_j`):
//! the primary-arm second moments of the labels, corrected by validation-arm
//! moment differences, then solved.
//!
//! Scaled variances (`omega`) follow the scalar-covariate formulas. With an
//! intercept in the model, each coefficient is reduced to the scalar case by
//! partialling the other regressor out of both the regressor of interest and
//! the label (Frisch-Waugh), after which the formulas apply verbatim.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::population::Population;
use crate::regress::{concept_design, LeastSquares, Side};
use crate::rng;
use crate::scalar::Real;

/// Condition number above which the corrected RHS Gram matrix is rejected.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;
/// Share of failed bootstrap replicates tolerated before giving up.
pub const BOOTSTRAP_MAX_FAILURE_RATE: f64 = 0.05;
pub const BOOTSTRAP_MIN_REPLICATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Excluded = 0,
    Primary = 1,
    Validation = 2,
}

/// A partition of the population into excluded, primary and validation arms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    arms: Vec<Arm>,
    primary: Vec<usize>,
    validation: Vec<usize>,
}

/// Number of validation pieces drawn from a sample of `n`: `ceil(frac * n)`.
pub fn validation_count(n: usize, frac: f64) -> usize {
    let raw = frac * n as f64;
    // guard against 0.05 * 5000 = 250.00000000000003
    let nearest = raw.round();
    if (raw - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        raw.ceil() as usize
    }
}

impl Sample {
    pub fn new(arms: Vec<Arm>) -> Self {
        let pick = |a: Arm| {
            arms.iter()
                .enumerate()
                .filter(|(_, &x)| x == a)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        };
        let primary = pick(Arm::Primary);
        let validation = pick(Arm::Validation);
        Sample {
            arms,
            primary,
            validation,
        }
    }

    /// Arms from integer codes 0/1/2.
    pub fn from_codes(codes: &[u8]) -> Result<Self> {
        let arms = codes
            .iter()
            .map(|&c| match c {
                0 => Ok(Arm::Excluded),
                1 => Ok(Arm::Primary),
                2 => Ok(Arm::Validation),
                other => Err(Error::Validation(format!("arm code {other} is not 0, 1 or 2"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sample::new(arms))
    }

    /// Draws `n_sample` pieces without replacement, then `ceil(frac * n)` of
    /// them uniformly into the validation arm.
    pub fn random<R: Rng + ?Sized>(population_size: usize, n_sample: usize, frac: f64, rng: &mut R) -> Result<Self> {
        if n_sample > population_size || n_sample == 0 {
            return Err(Error::Validation(format!(
                "sample size {n_sample} must lie in 1..={population_size}"
            )));
        }
        if !(frac > 0.0 && frac < 1.0) {
            return Err(Error::Validation(format!("validation fraction {frac} must lie in (0, 1)")));
        }
        // partial Fisher-Yates: the drawn order is itself uniformly random
        let drawn = index::sample(rng, population_size, n_sample).into_vec();
        let n_v = validation_count(n_sample, frac);
        let mut arms = vec![Arm::Excluded; population_size];
        for (pos, &i) in drawn.iter().enumerate() {
            arms[i] = if pos < n_v { Arm::Validation } else { Arm::Primary };
        }
        Ok(Sample::new(arms))
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn primary(&self) -> &[usize] {
        &self.primary
    }

    pub fn validation(&self) -> &[usize] {
        &self.validation
    }

    pub fn population_size(&self) -> usize {
        self.arms.len()
    }

    pub fn n_p(&self) -> usize {
        self.primary.len()
    }

    pub fn n_v(&self) -> usize {
        self.validation.len()
    }

    pub fn n_o(&self) -> usize {
        self.arms.len() - self.primary.len() - self.validation.len()
    }

    pub fn rho_p(&self) -> f64 {
        self.n_p() as f64 / self.population_size() as f64
    }

    pub fn rho_v(&self) -> f64 {
        self.n_v() as f64 / self.population_size() as f64
    }

    pub fn view(&self) -> Arms<'_> {
        Arms {
            primary: &self.primary,
            validation: &self.validation,
            population_size: self.arms.len(),
        }
    }
}

/// Index view of the two observed arms. Unlike [`Sample`], the arms may
/// overlap or repeat indices (bootstrap resamples, census checks).
#[derive(Clone, Copy, Debug)]
pub struct Arms<'a> {
    pub primary: &'a [usize],
    pub validation: &'a [usize],
    pub population_size: usize,
}

impl Arms<'_> {
    fn rho_p(&self) -> f64 {
        self.primary.len() as f64 / self.population_size as f64
    }

    fn rho_v(&self) -> f64 {
        self.validation.len() as f64 / self.population_size as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PlugIn,
    ValidationOnly,
    DebiasedLhs,
    DebiasedRhs,
    /// Trusted measurement on the primary arm (needs truth there).
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    Formula,
    Bootstrap,
    Hc1,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport<T> {
    pub method: Method,
    pub side: Side,
    pub coefficients: Vec<T>,
    pub se: Vec<T>,
    pub ci_level: f64,
    pub ci_lower: Vec<T>,
    pub ci_upper: Vec<T>,
    pub variance_source: VarianceSource,
    pub seed: Option<u64>,
    pub n_primary: usize,
    pub n_validation: usize,
    /// Set when a fit had exactly as many observations as coefficients.
    pub saturated: bool,
    /// Failed bootstrap replicates, when bootstrapped.
    pub bootstrap_failures: Option<usize>,
}

/// Two-sided standard normal critical value for `level`.
pub fn normal_critical(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("confidence level {level} must lie in (0, 1)")))
    }
}

impl<T: Real> EstimateReport<T> {
    fn wald(
        method: Method,
        side: Side,
        coefficients: Vec<T>,
        se: Vec<T>,
        level: f64,
        variance_source: VarianceSource,
        arms: &Arms<'_>,
    ) -> Self {
        let z = T::lit(normal_critical(level));
        let ci_lower = coefficients.iter().zip(&se).map(|(&c, &s)| c - z * s).collect();
        let ci_upper = coefficients.iter().zip(&se).map(|(&c, &s)| c + z * s).collect();
        EstimateReport {
            method,
            side,
            coefficients,
            se,
            ci_level: level,
            ci_lower,
            ci_upper,
            variance_source,
            seed: None,
            n_primary: arms.primary.len(),
            n_validation: arms.validation.len(),
            saturated: false,
            bootstrap_failures: None,
        }
    }

    pub fn covers(&self, j: usize, value: T) -> bool {
        self.ci_lower[j] <= value && value <= self.ci_upper[j]
    }
}

fn require_arm(arm: &'static str, got: usize, need: usize) -> Result<()> {
    if got < need {
        Err(Error::ArmTooSmall { arm, got, need })
    } else {
        Ok(())
    }
}

fn to_vec<T: Real>(v: &DVector<T>) -> Vec<T> {
    v.iter().copied().collect()
}

fn sqrt_diag<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    (0..m.nrows()).map(|j| m[(j, j)].max(T::zero()).sqrt()).collect()
}

fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |a, &b| a + b) / T::lit(xs.len() as f64)
}

/// Sample variance with an `n - 1` denominator (zero for a single value).
fn variance<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    xs.iter().fold(T::zero(), |a, &b| a + (b - m) * (b - m)) / T::lit((xs.len() - 1) as f64)
}

/// Response vector and regressor matrix for one side over `rows`.
struct SideData<T: Real> {
    x: DMatrix<T>,
    y: DVector<T>,
}

fn lhs_data<T: Real>(pop: &Population<T>, rows: &[usize], response: &DVector<T>) -> SideData<T> {
    SideData {
        x: pop.design(rows),
        y: response.clone(),
    }
}

fn rhs_data<T: Real>(pop: &Population<T>, rows: &[usize], concept: &DVector<T>, response: usize) -> SideData<T> {
    SideData {
        x: concept_design(concept),
        y: pop.covariate_vector(response, rows),
    }
}

fn check_response<T>(pop: &Population<T>, side: Side, response: usize) -> Result<()> {
    if side == Side::Rhs && (response == 0 || response >= pop.k()) {
        return Err(Error::Validation(format!(
            "response covariate must be in 1..{} for the concept-as-regressor side, got {response}",
            pop.k()
        )));
    }
    Ok(())
}

/// OLS with HC1 standard errors on one arm.
fn single_arm_fit<T: Real>(
    method: Method,
    side: Side,
    data: SideData<T>,
    level: f64,
    arms: &Arms<'_>,
) -> Result<EstimateReport<T>> {
    let ls = LeastSquares::new(&data.x)?;
    let fit = ls.fit(&data.x, &data.y, true);
    let se = fit.std_errors().expect("hc1 requested");
    let mut report = EstimateReport::wald(
        method,
        side,
        to_vec(&fit.coefficients),
        se,
        level,
        VarianceSource::Hc1,
        arms,
    );
    report.saturated = fit.is_saturated();
    Ok(report)
}

/// Plug-in regression on the primary arm with labels in place of the concept.
pub fn plug_in<T: Real>(
    pop: &Population<T>,
    arms: Arms<'_>,
    labeler: &str,
    side: Side,
    response: usize,
    level: f64,
) -> Result<EstimateReport<T>> {
    check_level(level)?;
    check_response(pop, side, response)?;
    let k = if side == Side::Lhs { pop.k() } else { 2 };
    require_arm("primary", arms.primary.len(), k)?;
    let labels = pop.label_vector(labeler, arms.primary)?;
    let data = match side {
        Side::Lhs => lhs_data(pop, arms.primary, &labels),
        Side::Rhs => rhs_data(pop, arms.primary, &labels, response),
    };
    single_arm_fit(Method::PlugIn, side, data, level, &arms)
}

/// Trusted-measurement regression on the primary arm.
pub fn target_fit<T: Real>(
    pop: &Population<T>,
    arms: Arms<'_>,
    side: Side,
    response: usize,
    level: f64,
) -> Result<EstimateReport<T>> {
    check_level(level)?;
    check_response(pop, side, response)?;
    let k = if side == Side::Lhs { pop.k() } else { 2 };
    require_arm("primary", arms.primary.len(), k)?;
    let truth = pop.truth_vector(arms.primary);
    let data = match side {
        Side::Lhs => lhs_data(pop, arms.primary, &truth),
        Side::Rhs => rhs_data(pop, arms.primary, &truth, response),
    };
    single_arm_fit(Method::Target, side, data, level, &arms)
}

/// Trusted-measurement regression on the validation arm alone, HC1 errors.
/// A saturated arm (`n_v == k`) is allowed and flagged.
pub fn validation_only<T: Real>(
    pop: &Population<T>,
    arms: Arms<'_>,
    side: Side,
    response: usize,
    level: f64,
) -> Result<EstimateReport<T>> {
    check_level(level)?;
    check_response(pop, side, response)?;
    let k = if side == Side::Lhs { pop.k() } else { 2 };
    require_arm("validation", arms.validation.len(), k)?;
    let truth = pop.truth_vector(arms.validation);
    let data = match side {
        Side::Lhs => lhs_data(pop, arms.validation, &truth),
        Side::Rhs => rhs_data(pop, arms.validation, &truth, response),
    };
    single_arm_fit(Method::ValidationOnly, side, data, level, &arms)
}

/// Bias-corrected LHS coefficients with their HC1 sandwich (the two arms
/// contribute independently).
fn lhs_debiased_core<T: Real>(
    pop: &Population<T>,
    arms: &Arms<'_>,
    labeler: &str,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let k = pop.k();
    require_arm("primary", arms.primary.len(), k + 1)?;
    require_arm("validation", arms.validation.len(), k + 1)?;
    let xp = pop.design(arms.primary);
    let yp = pop.label_vector(labeler, arms.primary)?;
    let xv = pop.design(arms.validation);
    let delta = pop.label_vector(labeler, arms.validation)? - pop.truth_vector(arms.validation);
    let primary = LeastSquares::new(&xp)?.fit(&xp, &yp, true);
    let correction = LeastSquares::new(&xv)?.fit(&xv, &delta, true);
    let coef = &primary.coefficients - &correction.coefficients;
    let cov = primary.robust_covariance.unwrap() + correction.robust_covariance.unwrap();
    Ok((coef, cov))
}

struct RhsParts<T: Real> {
    coefficients: DVector<T>,
    sandwich: DMatrix<T>,
}

fn condition_number<T: Real>(m: &DMatrix<T>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().fold(0.0f64, |a, s| a.max(s.as_f64()));
    let min = sv.iter().fold(f64::INFINITY, |a, s| a.min(s.as_f64()));
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn rhs_debiased_core<T: Real>(
    pop: &Population<T>,
    arms: &Arms<'_>,
    labeler: &str,
    response: usize,
) -> Result<RhsParts<T>> {
    require_arm("primary", arms.primary.len(), 3)?;
    require_arm("validation", arms.validation.len(), 3)?;
    let np = T::lit(arms.primary.len() as f64);
    let nv = T::lit(arms.validation.len() as f64);
    let xhat_p = concept_design(&pop.label_vector(labeler, arms.primary)?);
    let w_p = pop.covariate_vector(response, arms.primary);
    let xhat_v = concept_design(&pop.label_vector(labeler, arms.validation)?);
    let x_v = concept_design(&pop.truth_vector(arms.validation));
    let w_v = pop.covariate_vector(response, arms.validation);

    let sigma_hh = xhat_p.transpose() * &xhat_p / np;
    let sigma_hw = xhat_p.transpose() * &w_p / np;
    let lambda_hv = (xhat_v.transpose() * &xhat_v - x_v.transpose() * &x_v) / nv;
    let diff_v = &xhat_v - &x_v;
    let lambda_dw = diff_v.transpose() * &w_v / nv;

    let gram = sigma_hh - lambda_hv;
    let condition = condition_number(&gram);
    if !(condition <= GRAM_CONDITION_LIMIT) {
        return Err(Error::Singular {
            condition,
            threshold: GRAM_CONDITION_LIMIT,
        });
    }
    let gram_inv = gram.clone().try_inverse().ok_or(Error::Singular {
        condition,
        threshold: GRAM_CONDITION_LIMIT,
    })?;
    let coefficients = &gram_inv * (sigma_hw - lambda_dw);

    // Estimating-equation sandwich: primary scores xhat (w - xhat'a),
    // validation scores (xhat - x) w - (xhat xhat' - x x') a.
    let scores_p: Vec<DVector<T>> = (0..xhat_p.nrows())
        .map(|r| {
            let xr = xhat_p.row(r).transpose();
            let fitted = xr.dot(&coefficients);
            xr * (w_p[r] - fitted)
        })
        .collect();
    let scores_v: Vec<DVector<T>> = (0..xhat_v.nrows())
        .map(|r| {
            let xh = xhat_v.row(r).transpose();
            let xt = x_v.row(r).transpose();
            (&xh - &xt) * w_v[r] - (&xh * xh.dot(&coefficients) - &xt * xt.dot(&coefficients))
        })
        .collect();
    let meat = score_covariance(&scores_p) / np + score_covariance(&scores_v) / nv;
    let sandwich = &gram_inv * meat * gram_inv.transpose();
    Ok(RhsParts {
        coefficients,
        sandwich,
    })
}

fn score_covariance<T: Real>(scores: &[DVector<T>]) -> DMatrix<T> {
    let dim = scores[0].len();
    let n = T::lit(scores.len() as f64);
    let m = scores.iter().fold(DVector::zeros(dim), |a, s| a + s) / n;
    let denom = T::lit((scores.len().max(2) - 1) as f64);
    scores.iter().fold(DMatrix::zeros(dim, dim), |a, s| {
        let c = s - &m;
        a + &c * c.transpose()
    }) / denom
}

/// Scalar-case inputs for the asymptotic variance formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalarMoments<T> {
    pub side: Side,
    /// Variance of the regressor of interest: `sigma2_w` on the LHS,
    /// `sigma2_v` on the RHS.
    pub sigma2_regressor: T,
    /// Variance of the label-times-other-variable product (`X`).
    pub sigma2_x: T,
    /// Variance of the error-times-other-variable product (`Z`).
    pub sigma2_z: T,
    /// Variance of the truth-times-other-variable product.
    pub sigma2_wv: T,
    /// Covariance of `X` and `Z` over the validation arm.
    pub cov_xz: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmegaReport<T> {
    pub side: Side,
    pub rho_p: f64,
    pub rho_v: f64,
    pub sigma2_w: Option<T>,
    pub sigma2_v: Option<T>,
    pub sigma2_x: T,
    pub sigma2_z: T,
    pub sigma_x: T,
    pub sigma_z: T,
    pub sigma2_wv: T,
    pub omega_debiased: T,
    /// `omega_debiased` with the cross term `2 sigma_x sigma_z` replaced by
    /// `2 cov(X, Z)`.
    pub omega_debiased_covariance: T,
    pub cov_xz: T,
    pub omega_validation: T,
    pub more_precise_debiased: bool,
    /// Right-hand minus left-hand side of the precision comparison; positive
    /// when the bias-corrected estimator has the smaller limiting variance.
    pub margin: T,
}

/// Limiting variances of the bias-corrected and validation-only estimators
/// (scaled by the population size) and the precision comparison.
pub fn omega_formulas<T: Real>(moments: &ScalarMoments<T>, rho_p: f64, rho_v: f64) -> Result<OmegaReport<T>> {
    if !(rho_p > 0.0 && rho_v > 0.0 && rho_p + rho_v <= 1.0 + 1e-12) {
        return Err(Error::Validation(format!(
            "sampling rates must satisfy 0 < rho_p, 0 < rho_v, rho_p + rho_v <= 1 (got {rho_p}, {rho_v})"
        )));
    }
    let a = T::lit((1.0 - rho_p) / rho_p);
    let b = T::lit((1.0 - rho_v) / rho_v);
    let two = T::lit(2.0);
    let s2w = moments.sigma2_regressor;
    if !(s2w > T::zero()) {
        return Err(Error::Validation("regressor has zero variance".into()));
    }
    let sx = moments.sigma2_x.max(T::zero()).sqrt();
    let sz = moments.sigma2_z.max(T::zero()).sqrt();
    let inv4 = T::one() / (s2w * s2w);
    let lhs = a * moments.sigma2_x + two * sx * sz;
    let rhs = b * (moments.sigma2_wv - moments.sigma2_z);
    let omega_debiased = inv4 * (lhs + b * moments.sigma2_z);
    let omega_validation = inv4 * b * moments.sigma2_wv;
    let omega_debiased_covariance =
        inv4 * (a * moments.sigma2_x + two * moments.cov_xz + b * moments.sigma2_z);
    let (sigma2_w, sigma2_v) = match moments.side {
        Side::Lhs => (Some(s2w), None),
        Side::Rhs => (None, Some(s2w)),
    };
    Ok(OmegaReport {
        side: moments.side,
        rho_p,
        rho_v,
        sigma2_w,
        sigma2_v,
        sigma2_x: moments.sigma2_x,
        sigma2_z: moments.sigma2_z,
        sigma_x: sx,
        sigma_z: sz,
        sigma2_wv: moments.sigma2_wv,
        omega_debiased,
        omega_debiased_covariance,
        cov_xz: moments.cov_xz,
        omega_validation,
        more_precise_debiased: rhs - lhs >= T::zero(),
        margin: rhs - lhs,
    })
}

/// Residual of `values` after least-squares projection on the design columns
/// other than `j`, with the projection fitted over `fit_rows` and applied to
/// `apply_rows`. An empty set of other columns leaves values unchanged.
fn partial_out<T: Real>(
    pop: &Population<T>,
    j: usize,
    fit_rows: &[usize],
    fit_values: &DVector<T>,
    apply_rows: &[usize],
    apply_values: &DVector<T>,
) -> Result<DVector<T>> {
    let others: Vec<usize> = (0..pop.k()).filter(|&c| c != j).collect();
    if others.is_empty() {
        return Ok(apply_values.clone());
    }
    let sub = |rows: &[usize]| DMatrix::from_fn(rows.len(), others.len(), |i, c| pop.piece(rows[i]).w[others[c]]);
    let coef = LeastSquares::new(&sub(fit_rows))?.solve_vector(fit_values);
    Ok(apply_values - sub(apply_rows) * coef)
}

fn product<T: Real>(a: &DVector<T>, b: &DVector<T>) -> Vec<T> {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
}

fn mean_square<T: Real>(a: &DVector<T>) -> T {
    a.iter().fold(T::zero(), |s, &x| s + x * x) / T::lit(a.len() as f64)
}

fn require_scalar<T>(pop: &Population<T>) -> Result<()> {
    if pop.k() > 2 {
        return Err(Error::UnsupportedDimension(format!(
            "the variance formulas cover at most one covariate besides the intercept, population has k = {}",
            pop.k()
        )));
    }
    Ok(())
}

/// Scalar moments for LHS coefficient `j`, estimated from a sample: the
/// regressor and label moments from both arms, error moments from the
/// validation arm.
pub fn lhs_sample_moments<T: Real>(
    pop: &Population<T>,
    arms: &Arms<'_>,
    labeler: &str,
    j: usize,
) -> Result<ScalarMoments<T>> {
    require_scalar(pop)?;
    let both: Vec<usize> = arms.primary.iter().chain(arms.validation).copied().collect();
    let wj_both = pop.covariate_vector(j, &both);
    let w_tilde = partial_out(pop, j, &both, &wj_both, &both, &wj_both)?;
    let label_both = pop.label_vector(labeler, &both)?;
    let label_tilde = partial_out(pop, j, &both, &label_both, &both, &label_both)?;

    let wj_v = pop.covariate_vector(j, arms.validation);
    let w_tilde_v = partial_out(pop, j, &both, &wj_both, arms.validation, &wj_v)?;
    let truth_v = pop.truth_vector(arms.validation);
    let delta_v = pop.label_vector(labeler, arms.validation)? - &truth_v;
    let delta_tilde = partial_out(pop, j, arms.validation, &delta_v, arms.validation, &delta_v)?;
    let truth_tilde = partial_out(pop, j, arms.validation, &truth_v, arms.validation, &truth_v)?;
    let label_v = pop.label_vector(labeler, arms.validation)?;
    let label_tilde_v = partial_out(pop, j, &both, &label_both, arms.validation, &label_v)?;
    let z = product(&w_tilde_v, &delta_tilde);

    Ok(ScalarMoments {
        side: Side::Lhs,
        sigma2_regressor: mean_square(&w_tilde),
        sigma2_x: variance(&product(&w_tilde, &label_tilde)),
        sigma2_z: variance(&z),
        sigma2_wv: variance(&product(&w_tilde_v, &truth_tilde)),
        cov_xz: covariance(&product(&w_tilde_v, &label_tilde_v), &z),
    })
}

fn covariance<T: Real>(a: &[T], b: &[T]) -> T {
    if a.len() < 2 {
        return T::zero();
    }
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + (x - ma) * (y - mb)) / T::lit((a.len() - 1) as f64)
}

fn centered<T: Real>(v: &DVector<T>) -> DVector<T> {
    let m = mean(v.as_slice());
    v.map(|x| x - m)
}

/// Scalar moments for the RHS slope from a sample. The concept's variance
/// and the truth and error products come from the validation arm.
pub fn rhs_sample_moments<T: Real>(
    pop: &Population<T>,
    arms: &Arms<'_>,
    labeler: &str,
    response: usize,
) -> Result<ScalarMoments<T>> {
    let both: Vec<usize> = arms.primary.iter().chain(arms.validation).copied().collect();
    let w_both = pop.covariate_vector(response, &both);
    let w_mean = mean(w_both.as_slice());
    let w_tilde = w_both.map(|x| x - w_mean);
    let label_both = pop.label_vector(labeler, &both)?;
    let label_mean = mean(label_both.as_slice());
    let label_tilde = label_both.map(|x| x - label_mean);
    let label_tilde_v = pop.label_vector(labeler, arms.validation)?.map(|x| x - label_mean);
    let w_tilde_v = pop.covariate_vector(response, arms.validation).map(|x| x - w_mean);
    let truth_v = pop.truth_vector(arms.validation);
    let delta_v = pop.label_vector(labeler, arms.validation)? - &truth_v;
    let truth_tilde = centered(&truth_v);
    let z = product(&centered(&delta_v), &w_tilde_v);
    Ok(ScalarMoments {
        side: Side::Rhs,
        sigma2_regressor: mean_square(&truth_tilde),
        sigma2_x: variance(&product(&label_tilde, &w_tilde)),
        sigma2_z: variance(&z),
        sigma2_wv: variance(&product(&truth_tilde, &w_tilde_v)),
        cov_xz: covariance(&product(&label_tilde_v, &w_tilde_v), &z),
    })
}

/// Full-population scalar moments for the non-intercept coefficient
/// (`k = 2` on the LHS; the concept slope on the RHS).
pub fn population_moments<T: Real>(
    pop: &Population<T>,
    labeler: &str,
    side: Side,
    response: usize,
) -> Result<ScalarMoments<T>> {
    let all: Vec<usize> = (0..pop.len()).collect();
    let arms = Arms {
        primary: &all,
        validation: &all,
        population_size: pop.len(),
    };
    match side {
        Side::Lhs => {
            if pop.k() != 2 {
                return Err(Error::UnsupportedDimension(format!(
                    "the variance formulas need exactly one covariate besides the intercept, population has k = {}",
                    pop.k()
                )));
            }
            // Both arms equal the population, so every moment is a
            // population moment.
            let m = lhs_sample_moments(pop, &arms, labeler, 1)?;
            Ok(m)
        }
        Side::Rhs => {
            check_response(pop, side, response)?;
            rhs_sample_moments(pop, &arms, labeler, response)
        }
    }
}

fn omega_se<T: Real>(m: &ScalarMoments<T>, arms: &Arms<'_>) -> Result<T> {
    let report = omega_formulas(m, arms.rho_p(), arms.rho_v())?;
    Ok((report.omega_debiased / T::lit(arms.population_size as f64)).max(T::zero()).sqrt())
}

fn debiased_point<T: Real>(
    pop: &Population<T>,
    arms: &Arms<'_>,
    labeler: &str,
    side: Side,
    response: usize,
) -> Result<Vec<T>> {
    match side {
        Side::Lhs => lhs_debiased_core(pop, arms, labeler).map(|(c, _)| to_vec(&c)),
        Side::Rhs => rhs_debiased_core(pop, arms, labeler, response).map(|p| to_vec(&p.coefficients)),
    }
}

/// Bias-corrected estimate with analytic standard errors.
///
/// `Formula` uses the scaled-variance formula per coefficient (LHS, at most
/// one non-intercept covariate) or for the concept slope (RHS, whose
/// intercept falls back to the sandwich). `Hc1` uses sandwich errors for
/// every coefficient. Bootstrap inference goes through [`bootstrap_ci`].
pub fn debiased<T: Real>(
    pop: &Population<T>,
    arms: Arms<'_>,
    labeler: &str,
    side: Side,
    response: usize,
    variance: VarianceSource,
    level: f64,
) -> Result<EstimateReport<T>> {
    check_level(level)?;
    check_response(pop, side, response)?;
    let method = match side {
        Side::Lhs => Method::DebiasedLhs,
        Side::Rhs => Method::DebiasedRhs,
    };
    let (coefficients, sandwich) = match side {
        Side::Lhs => {
            let (c, cov) = lhs_debiased_core(pop, &arms, labeler)?;
            (to_vec(&c), cov)
        }
        Side::Rhs => {
            let parts = rhs_debiased_core(pop, &arms, labeler, response)?;
            (to_vec(&parts.coefficients), parts.sandwich)
        }
    };
    let se = match variance {
        VarianceSource::Hc1 => sqrt_diag(&sandwich),
        VarianceSource::Formula => match side {
            Side::Lhs => (0..pop.k())
                .map(|j| omega_se(&lhs_sample_moments(pop, &arms, labeler, j)?, &arms))
                .collect::<Result<Vec<_>>>()?,
            Side::Rhs => {
                let mut se = sqrt_diag(&sandwich);
                se[1] = omega_se(&rhs_sample_moments(pop, &arms, labeler, response)?, &arms)?;
                se
            }
        },
        VarianceSource::Bootstrap => {
            return Err(Error::Validation("bootstrap inference is computed by bootstrap_ci".into()))
        }
    };
    Ok(EstimateReport::wald(method, side, coefficients, se, level, variance, &arms))
}

/// Default analytic variance for the bias-corrected estimator: the formula
/// where it applies, otherwise `None` (bootstrap).
pub fn default_variance<T>(pop: &Population<T>, side: Side) -> Option<VarianceSource> {
    match side {
        Side::Lhs if pop.k() <= 2 => Some(VarianceSource::Formula),
        Side::Rhs => Some(VarianceSource::Formula),
        _ => None,
    }
}

/// Bias-corrected LHS estimate with the default variance source.
pub fn debias_lhs<T: Real>(pop: &Population<T>, sample: &Sample, labeler: &str) -> Result<EstimateReport<T>> {
    match default_variance(pop, Side::Lhs) {
        Some(v) => debiased(pop, sample.view(), labeler, Side::Lhs, 0, v, 0.95),
        None => bootstrap_ci(pop, sample.view(), labeler, Method::DebiasedLhs, Side::Lhs, 0, 1000, 0, 0.95),
    }
}

/// Bias-corrected RHS estimate (response covariate `response`).
pub fn debias_rhs<T: Real>(
    pop: &Population<T>,
    sample: &Sample,
    labeler: &str,
    response: usize,
) -> Result<EstimateReport<T>> {
    debiased(pop, sample.view(), labeler, Side::Rhs, response, VarianceSource::Formula, 0.95)
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn point_estimate<T: Real>(
    pop: &Population<T>,
    arms: &Arms<'_>,
    labeler: &str,
    method: Method,
    side: Side,
    response: usize,
) -> Result<Vec<T>> {
    let level = 0.95;
    match method {
        Method::DebiasedLhs | Method::DebiasedRhs => debiased_point(pop, arms, labeler, side, response),
        Method::PlugIn => plug_in(pop, *arms, labeler, side, response, level).map(|r| r.coefficients),
        Method::ValidationOnly => validation_only(pop, *arms, side, response, level).map(|r| r.coefficients),
        Method::Target => target_fit(pop, *arms, side, response, level).map(|r| r.coefficients),
    }
}

/// Percentile bootstrap: resample each arm with replacement independently,
/// recompute the estimator, and read the interval off replicate quantiles.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_ci<T: Real>(
    pop: &Population<T>,
    arms: Arms<'_>,
    labeler: &str,
    method: Method,
    side: Side,
    response: usize,
    replications: usize,
    seed: u64,
    level: f64,
) -> Result<EstimateReport<T>> {
    check_level(level)?;
    check_response(pop, side, response)?;
    if replications < BOOTSTRAP_MIN_REPLICATIONS {
        return Err(Error::Validation(format!(
            "bootstrap needs at least {BOOTSTRAP_MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    let method = match (method, side) {
        (Method::DebiasedLhs | Method::DebiasedRhs, Side::Lhs) => Method::DebiasedLhs,
        (Method::DebiasedLhs | Method::DebiasedRhs, Side::Rhs) => Method::DebiasedRhs,
        (m, _) => m,
    };
    let coefficients = point_estimate(pop, &arms, labeler, method, side, response)?;
    let draws: Vec<Option<Vec<T>>> = (0..replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, rng::TAG_BOOTSTRAP, b as u64);
            let resample = |rows: &[usize], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
                if rows.is_empty() {
                    return Vec::new();
                }
                (0..rows.len()).map(|_| rows[rng.random_range(0..rows.len())]).collect()
            };
            let p = resample(arms.primary, &mut rng);
            let v = resample(arms.validation, &mut rng);
            let view = Arms {
                primary: &p,
                validation: &v,
                population_size: arms.population_size,
            };
            point_estimate(pop, &view, labeler, method, side, response).ok()
        })
        .collect();
    let failures = draws.iter().filter(|d| d.is_none()).count();
    if failures as f64 > BOOTSTRAP_MAX_FAILURE_RATE * replications as f64 {
        return Err(Error::BootstrapUnstable {
            failures,
            replications,
        });
    }
    let ok: Vec<&Vec<T>> = draws.iter().flatten().collect();
    let k = coefficients.len();
    let alpha = 1.0 - level;
    let mut se = Vec::with_capacity(k);
    let mut lower = Vec::with_capacity(k);
    let mut upper = Vec::with_capacity(k);
    for j in 0..k {
        let mut values: Vec<f64> = ok.iter().map(|d| d[j].as_f64()).collect();
        let column: Vec<T> = ok.iter().map(|d| d[j]).collect();
        se.push(variance(&column).max(T::zero()).sqrt());
        values.sort_by(|a, b| a.total_cmp(b));
        lower.push(T::lit(quantile_sorted(&values, alpha / 2.0)));
        upper.push(T::lit(quantile_sorted(&values, 1.0 - alpha / 2.0)));
    }
    Ok(EstimateReport {
        method,
        side,
        coefficients,
        se,
        ci_level: level,
        ci_lower: lower,
        ci_upper: upper,
        variance_source: VarianceSource::Bootstrap,
        seed: Some(seed),
        n_primary: arms.primary.len(),
        n_validation: arms.validation.len(),
        saturated: false,
        bootstrap_failures: Some(failures),
    })
}
