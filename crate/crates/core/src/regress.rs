//! Least squares via Householder QR, HC1 covariance, and the population
//! decompositions of plug-in coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Population;
use crate::scalar::Real;

/// `|R_jj| < RANK_RTOL * max |R_jj|` marks the design rank-deficient.
pub const RANK_RTOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionFit<T: Real> {
    pub coefficients: DVector<T>,
    pub residuals: DVector<T>,
    /// HC1 sandwich, present when requested.
    pub robust_covariance: Option<DMatrix<T>>,
    pub n: usize,
    pub k: usize,
}

impl<T: Real> RegressionFit<T> {
    /// `n == k`: the fit interpolates and HC1 has no degrees of freedom.
    pub fn is_saturated(&self) -> bool {
        self.n == self.k
    }

    pub fn std_errors(&self) -> Option<Vec<T>> {
        self.robust_covariance.as_ref().map(|c| {
            (0..self.k)
                .map(|j| {
                    let v = c[(j, j)];
                    if v > T::zero() {
                        v.sqrt()
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
    }
}

/// QR factors of a full-rank design, reusable across several responses.
pub struct LeastSquares<T: Real> {
    q: DMatrix<T>,
    r: DMatrix<T>,
    r_inv: DMatrix<T>,
    n: usize,
    k: usize,
}

impl<T: Real> LeastSquares<T> {
    pub fn new(x: &DMatrix<T>) -> Result<Self> {
        let (n, k) = x.shape();
        if k == 0 {
            return Err(Error::Validation("design has no columns".into()));
        }
        if n < k {
            return Err(Error::Validation(format!("{n} observations for {k} coefficients")));
        }
        if x.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::Validation("design contains non-finite values".into()));
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..k).map(|j| r[(j, j)].as_f64().abs()).collect();
        let largest = diag.iter().cloned().fold(0.0, f64::max);
        let smallest = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(largest > 0.0) || smallest < RANK_RTOL * largest {
            return Err(Error::RankDeficient {
                smallest,
                largest,
                tolerance: RANK_RTOL,
            });
        }
        let r_inv = r
            .clone()
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or(Error::RankDeficient {
                smallest,
                largest,
                tolerance: RANK_RTOL,
            })?;
        Ok(LeastSquares {
            q: qr.q(),
            r,
            r_inv,
            n,
            k,
        })
    }

    /// Coefficients for each column of `y`.
    pub fn solve(&self, y: &DMatrix<T>) -> DMatrix<T> {
        let qty = self.q.transpose() * y;
        self.r
            .solve_upper_triangular(&qty)
            .expect("triangular factor checked at construction")
    }

    pub fn solve_vector(&self, y: &DVector<T>) -> DVector<T> {
        let qty = self.q.transpose() * y;
        self.r
            .solve_upper_triangular(&qty)
            .expect("triangular factor checked at construction")
    }

    /// `(X'X)^{-1}`.
    pub fn gram_inverse(&self) -> DMatrix<T> {
        &self.r_inv * self.r_inv.transpose()
    }

    /// HC1 sandwich for the given design and residuals.
    pub fn hc1(&self, x: &DMatrix<T>, residuals: &DVector<T>) -> DMatrix<T> {
        let bread = self.gram_inverse();
        let mut meat = DMatrix::<T>::zeros(self.k, self.k);
        for (i, row) in x.row_iter().enumerate() {
            let e2 = residuals[i] * residuals[i];
            for a in 0..self.k {
                let xa = row[a] * e2;
                for b in 0..self.k {
                    meat[(a, b)] += xa * row[b];
                }
            }
        }
        let scale = if self.n > self.k {
            T::lit(self.n as f64 / (self.n - self.k) as f64)
        } else {
            T::one()
        };
        let cov = &bread * meat * &bread * scale;
        // symmetrize away rounding
        let half = T::lit(0.5);
        (&cov + cov.transpose()) * half
    }

    pub fn fit(&self, x: &DMatrix<T>, y: &DVector<T>, with_hc1: bool) -> RegressionFit<T> {
        let coefficients = self.solve_vector(y);
        let residuals = y - x * &coefficients;
        let robust_covariance = with_hc1.then(|| self.hc1(x, &residuals));
        RegressionFit {
            coefficients,
            residuals,
            robust_covariance,
            n: self.n,
            k: self.k,
        }
    }
}

pub fn ols_fit<T: Real>(x: &DMatrix<T>, y: &DVector<T>, with_hc1: bool) -> Result<RegressionFit<T>> {
    if y.len() != x.nrows() {
        return Err(Error::Validation(format!(
            "response has {} entries, design has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite_value()) {
        return Err(Error::Validation("response contains non-finite values".into()));
    }
    Ok(LeastSquares::new(x)?.fit(x, y, with_hc1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Concept as dependent variable: `v = w'beta + e`.
    Lhs,
    /// Concept as regressor: `w_j = (1, v)'alpha + nu`.
    Rhs,
}

/// Regressor matrix `(1, v)` for the concept-as-covariate regression.
pub fn concept_design<T: Real>(values: &DVector<T>) -> DMatrix<T> {
    DMatrix::from_fn(values.len(), 2, |i, j| if j == 0 { T::one() } else { values[i] })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PopulationTargets<T> {
    pub side: Side,
    pub n: usize,
    /// Covariate index used as the response on the RHS.
    pub response: Option<usize>,
    pub beta_star: Option<Vec<T>>,
    pub beta_plugin: Option<Vec<T>>,
    pub lambda_delta_w: Option<Vec<T>>,
    pub alpha_star: Option<Vec<T>>,
    pub alpha_plugin: Option<Vec<T>>,
    /// Row-major `k_v x k_v` projection of `(1, v)` on `(1, vhat)`.
    pub lambda_v_vhat: Option<Vec<Vec<T>>>,
    pub lambda_eta_vhat: Option<Vec<T>>,
    pub identity_residual_lhs: Option<T>,
    pub identity_residual_rhs: Option<T>,
}

fn max_abs_diff<T: Real>(a: &DVector<T>, b: &DVector<T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// Full-population target and plug-in regressions together with the
/// projections that link them. On the LHS, `beta = beta* + lambda_{Delta|W}`;
/// on the RHS, `alpha = lambda_{V|Vhat} alpha* + lambda_{eta|Vhat}`.
pub fn population_targets<T: Real>(
    pop: &Population<T>,
    labeler: &str,
    side: Side,
    response: usize,
) -> Result<PopulationTargets<T>> {
    let rows: Vec<usize> = (0..pop.len()).collect();
    let v = pop.truth_vector(&rows);
    let vhat = pop.label_vector(labeler, &rows)?;
    let mut out = PopulationTargets {
        side,
        n: pop.len(),
        response: None,
        beta_star: None,
        beta_plugin: None,
        lambda_delta_w: None,
        alpha_star: None,
        alpha_plugin: None,
        lambda_v_vhat: None,
        lambda_eta_vhat: None,
        identity_residual_lhs: None,
        identity_residual_rhs: None,
    };
    match side {
        Side::Lhs => {
            let x = pop.design(&rows);
            let ls = LeastSquares::new(&x)?;
            let beta_star = ls.solve_vector(&v);
            let beta = ls.solve_vector(&vhat);
            let lambda = ls.solve_vector(&(&vhat - &v));
            out.identity_residual_lhs = Some(max_abs_diff(&beta, &(&beta_star + &lambda)));
            out.beta_star = Some(beta_star.iter().copied().collect());
            out.beta_plugin = Some(beta.iter().copied().collect());
            out.lambda_delta_w = Some(lambda.iter().copied().collect());
        }
        Side::Rhs => {
            if response >= pop.k() {
                return Err(Error::Validation(format!(
                    "response covariate {response} out of range (k = {})",
                    pop.k()
                )));
            }
            let w = pop.covariate_vector(response, &rows);
            let v_design = concept_design(&v);
            let vhat_design = concept_design(&vhat);
            let target = LeastSquares::new(&v_design)?;
            let alpha_star = target.solve_vector(&w);
            let eta = &w - &v_design * &alpha_star;
            let plug = LeastSquares::new(&vhat_design)?;
            let alpha = plug.solve_vector(&w);
            let lambda_v = plug.solve(&v_design);
            let lambda_eta = plug.solve_vector(&eta);
            // Lambda = (Vhat'Vhat)^{-1} Vhat'V, one column per entry of (1, v)
            let rebuilt = &lambda_v * &alpha_star + &lambda_eta;
            out.identity_residual_rhs = Some(max_abs_diff(&alpha, &rebuilt));
            out.response = Some(response);
            out.alpha_star = Some(alpha_star.iter().copied().collect());
            out.alpha_plugin = Some(alpha.iter().copied().collect());
            out.lambda_v_vhat = Some(
                (0..lambda_v.nrows())
                    .map(|i| lambda_v.row(i).iter().copied().collect())
                    .collect(),
            );
            out.lambda_eta_vhat = Some(lambda_eta.iter().copied().collect());
        }
    }
    Ok(out)
}
