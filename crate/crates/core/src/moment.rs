//! Moment functions `g(v, w; theta)` with a closed-form derivative in `v`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Field;

/// Points per axis of the reference grid that [`MomentSpec::g_upper`] is
/// defined against.
pub const G_UPPER_GRID_POINTS: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum MomentFamily {
    /// `g = v * w_j`
    Product { j: usize },
    /// `g = (v - w'theta) * w_j`
    Residual { j: usize },
    /// `g = (v - w'theta)^2`
    Squared,
}

/// An evaluable moment with its admissible parameter box, concept domain and
/// sensitivity threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSpec<T> {
    pub family: MomentFamily,
    pub theta_lo: Vec<T>,
    pub theta_hi: Vec<T>,
    pub v_lo: T,
    pub v_hi: T,
    pub g_lower: T,
}

fn dot<T: Field>(w: &[T], theta: &[T]) -> T {
    w.iter().zip(theta).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

impl<T: Field> MomentSpec<T> {
    pub fn new(
        family: MomentFamily,
        theta_lo: Vec<T>,
        theta_hi: Vec<T>,
        v_lo: T,
        v_hi: T,
        g_lower: T,
    ) -> Result<Self> {
        let spec = MomentSpec {
            family,
            theta_lo,
            theta_hi,
            v_lo,
            v_hi,
            g_lower,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_lo.len() != self.theta_hi.len() {
            return Err(Error::Validation("theta box bounds differ in length".into()));
        }
        if self.theta_lo.iter().zip(&self.theta_hi).any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::Validation("theta box is empty".into()));
        }
        if !(self.v_lo <= self.v_hi) {
            return Err(Error::Validation("v domain is empty".into()));
        }
        if !(self.g_lower > T::zero()) {
            return Err(Error::Validation("sensitivity threshold must be positive".into()));
        }
        Ok(())
    }

    fn covariate_index(&self) -> Option<usize> {
        match self.family {
            MomentFamily::Product { j } | MomentFamily::Residual { j } => Some(j),
            MomentFamily::Squared => None,
        }
    }

    /// Checks that the moment can be evaluated on `k`-dimensional covariates.
    pub fn check_dimension(&self, k: usize) -> Result<()> {
        if let Some(j) = self.covariate_index() {
            if j >= k {
                return Err(Error::Validation(format!(
                    "moment uses covariate {j} but only {k} are present"
                )));
            }
        }
        let needs_theta = !matches!(self.family, MomentFamily::Product { .. });
        if needs_theta && self.theta_lo.len() != k {
            return Err(Error::Validation(format!(
                "theta box has dimension {}, covariates have {k}",
                self.theta_lo.len()
            )));
        }
        Ok(())
    }

    pub fn contains_theta(&self, theta: &[T]) -> bool {
        theta.len() == self.theta_lo.len()
            && theta
                .iter()
                .zip(self.theta_lo.iter().zip(&self.theta_hi))
                .all(|(t, (lo, hi))| lo <= t && t <= hi)
    }

    pub fn check_theta(&self, theta: &[T]) -> Result<()> {
        if self.contains_theta(theta) {
            Ok(())
        } else {
            Err(Error::ThetaOutsideDomain {
                theta: theta.iter().map(|t| t.as_f64()).collect(),
            })
        }
    }

    /// Midpoint of the parameter box.
    pub fn theta_center(&self) -> Vec<T> {
        let two = T::one() + T::one();
        self.theta_lo
            .iter()
            .zip(&self.theta_hi)
            .map(|(&lo, &hi)| (lo + hi) / two)
            .collect()
    }

    pub fn eval(&self, v: T, w: &[T], theta: &[T]) -> T {
        match self.family {
            MomentFamily::Product { j } => v * w[j],
            MomentFamily::Residual { j } => (v - dot(w, theta)) * w[j],
            MomentFamily::Squared => {
                let e = v - dot(w, theta);
                e * e
            }
        }
    }

    /// `dg/dv` at `(v, w, theta)`.
    pub fn dv(&self, v: T, w: &[T], theta: &[T]) -> T {
        match self.family {
            MomentFamily::Product { j } | MomentFamily::Residual { j } => w[j],
            MomentFamily::Squared => (T::one() + T::one()) * (v - dot(w, theta)),
        }
    }

    /// Range of `v - w'theta` over the v domain and the theta box.
    fn residual_range(&self, w: &[T]) -> (T, T) {
        let (mut lo, mut hi) = (self.v_lo, self.v_hi);
        for ((&x, &tl), &th) in w.iter().zip(&self.theta_lo).zip(&self.theta_hi) {
            let (a, b) = (x * tl, x * th);
            let (small, large) = if a <= b { (a, b) } else { (b, a) };
            lo = lo - large;
            hi = hi - small;
        }
        (lo, hi)
    }

    /// Largest and smallest `|dg/dv|` over the v domain and theta box for
    /// one covariate vector. Every family's derivative is affine in
    /// `(v, theta)`, so the extremes over the reference grid are attained at
    /// box vertices (maximum) or at the closest point to zero (minimum).
    pub fn dv_extremes(&self, w: &[T]) -> (T, T) {
        match self.family {
            MomentFamily::Product { j } | MomentFamily::Residual { j } => {
                let a = w[j].magnitude();
                (a, a)
            }
            MomentFamily::Squared => {
                let two = T::one() + T::one();
                let (lo, hi) = self.residual_range(w);
                let max = if lo.magnitude() > hi.magnitude() {
                    lo.magnitude()
                } else {
                    hi.magnitude()
                };
                let min = if lo <= T::zero() && T::zero() <= hi {
                    T::zero()
                } else if lo.magnitude() < hi.magnitude() {
                    lo.magnitude()
                } else {
                    hi.magnitude()
                };
                (two * max, two * min)
            }
        }
    }

    /// Upper derivative bound `sup |dg/dv|` over the domain and the supplied
    /// covariate vectors.
    pub fn g_upper<'a>(&self, covariates: impl IntoIterator<Item = &'a [T]>) -> Result<T> {
        let mut best = T::zero();
        for w in covariates {
            let (max, _) = self.dv_extremes(w);
            if !max.is_finite_value() {
                return Err(Error::UnboundedDerivative);
            }
            if max > best {
                best = max;
            }
        }
        Ok(best)
    }

    /// `|dg/dv| >= g_lower` everywhere on the domain for this covariate vector.
    pub fn is_sensitive_at(&self, w: &[T]) -> bool {
        self.dv_extremes(w).1 >= self.g_lower
    }
}
