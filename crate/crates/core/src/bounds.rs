//! How far a label function inside a sup-norm band around the trusted
//! measurement can move a moment condition, assuming no training leakage.
//!
//! For a band of half-width `delta`, the moment error of any member is at
//! most `G_upper * delta * sum_r q^D_r`, and the member built by
//! [`adversarial_band_member`] achieves at least
//! `G_lower * sum_{r sensitive} |delta_r| q^D_r`.

use rayon::prelude::*;
use serde::Serialize;

use crate::context::ResearchContext;
use crate::error::{Error, Result};
use crate::moment::MomentSpec;
use crate::population::Population;
use crate::scalar::Field;

/// Interior grid points used by the per-piece line search.
pub const ARGMAX_INTERIOR_POINTS: usize = 201;
const GOLDEN_ITERATIONS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GuaranteeBand<T> {
    pub delta: T,
}

impl<T: Field> GuaranteeBand<T> {
    pub fn new(delta: T) -> Result<Self> {
        if !(delta >= T::zero()) || !delta.is_finite_value() {
            return Err(Error::Validation("band half-width must be finite and nonnegative".into()));
        }
        Ok(GuaranteeBand { delta })
    }
}

fn sensitive_indices<T: Field>(
    pop: &Population<T>,
    ctx: &ResearchContext<T>,
    moment: &MomentSpec<T>,
) -> Result<Vec<usize>> {
    moment.validate()?;
    moment.check_dimension(pop.k())?;
    ctx.check_aligned(pop)?;
    Ok((0..pop.len())
        .filter(|&r| ctx.q_d(r) > T::zero() && moment.is_sensitive_at(&pop.piece(r).w))
        .collect())
}

/// Ids of sampled pieces on which `|dg/dv| >= G_lower` over the whole
/// concept domain and parameter box.
pub fn sensitive_set<T: Field>(
    pop: &Population<T>,
    ctx: &ResearchContext<T>,
    moment: &MomentSpec<T>,
) -> Result<Vec<String>> {
    Ok(sensitive_indices(pop, ctx, moment)?
        .into_iter()
        .map(|r| pop.piece(r).id.clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandMember<T> {
    pub delta_r: Vec<T>,
    pub achieved_error: T,
    pub lower_bound: T,
    pub upper_bound: T,
    pub g_upper: T,
}

/// Maximizes `h` over `[-delta, delta]`: endpoints plus an interior grid,
/// then golden-section refinement inside the winning grid cell.
fn line_argmax<T: Field>(delta: T, h: impl Fn(T) -> T) -> (T, T) {
    let cells = ARGMAX_INTERIOR_POINTS + 1;
    let step = (delta + delta) / T::lit(cells as f64);
    let point = |i: usize| {
        if i == cells {
            delta
        } else {
            T::zero() - delta + step * T::lit(i as f64)
        }
    };
    let (mut best_i, mut best_x, mut best_h) = (0, point(0), h(point(0)));
    for i in 1..=cells {
        let x = point(i);
        let hx = h(x);
        if hx > best_h {
            best_i = i;
            best_x = x;
            best_h = hx;
        }
    }
    let mut a = point(best_i.saturating_sub(1));
    let mut b = point((best_i + 1).min(cells));
    let inv_phi = T::lit(0.618_033_988_749_894_9);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut hc, mut hd) = (h(c), h(d));
    for _ in 0..GOLDEN_ITERATIONS {
        if hc > hd {
            b = d;
            d = c;
            hd = hc;
            c = b - inv_phi * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + inv_phi * (b - a);
            hd = h(d);
        }
    }
    for (x, hx) in [(c, hc), (d, hd)] {
        if hx > best_h {
            best_x = x;
            best_h = hx;
        }
    }
    (best_x, best_h)
}

/// Builds the worst-case member of the band for parameter `theta`: on each
/// sampled piece, shift the concept within `[-delta, delta]` to maximize the
/// moment increase, keeping the shift only if the increase is nonnegative.
pub fn adversarial_band_member<T: Field>(
    pop: &Population<T>,
    ctx: &ResearchContext<T>,
    moment: &MomentSpec<T>,
    band: GuaranteeBand<T>,
    theta: &[T],
) -> Result<BandMember<T>> {
    let band = GuaranteeBand::new(band.delta)?;
    let sensitive = sensitive_indices(pop, ctx, moment)?;
    moment.check_theta(theta)?;
    let delta = band.delta;
    let g_upper = moment.g_upper(pop.pieces().iter().map(|p| p.w.as_slice()))?;
    for r in 0..pop.len() {
        let v = pop.piece(r).v_true;
        if ctx.q_d(r) > T::zero() && (v - delta < moment.v_lo || v + delta > moment.v_hi) {
            return Err(Error::Validation(format!(
                "band around piece {:?} leaves the concept domain",
                pop.piece(r).id
            )));
        }
    }

    let per_piece: Vec<(T, T)> = (0..pop.len())
        .into_par_iter()
        .map(|r| {
            if !(ctx.q_d(r) > T::zero()) || delta == T::zero() {
                return (T::zero(), T::zero());
            }
            let piece = pop.piece(r);
            let base = moment.eval(piece.v_true, &piece.w, theta);
            let gain = |d: T| moment.eval(piece.v_true + d, &piece.w, theta) - base;
            let (d, h) = line_argmax(delta, gain);
            if h >= T::zero() {
                (d, h)
            } else {
                (T::zero(), T::zero())
            }
        })
        .collect();

    let mut achieved = T::zero();
    let mut mass = T::zero();
    for (r, &(_, h)) in per_piece.iter().enumerate() {
        let q = ctx.q_d(r);
        achieved = achieved + q * h;
        mass = mass + q;
    }
    let lower = sensitive.iter().fold(T::zero(), |acc, &r| {
        acc + per_piece[r].0.magnitude() * ctx.q_d(r)
    }) * moment.g_lower;
    Ok(BandMember {
        delta_r: per_piece.into_iter().map(|(d, _)| d).collect(),
        achieved_error: achieved,
        lower_bound: lower,
        upper_bound: g_upper * delta * mass,
        g_upper,
    })
}

/// Moment error `sum_r q^D_r (g(v_r + shift_r) - g(v_r))` of an arbitrary
/// band member under no leakage.
pub fn band_member_error<T: Field>(
    pop: &Population<T>,
    ctx: &ResearchContext<T>,
    moment: &MomentSpec<T>,
    shifts: &[T],
    theta: &[T],
) -> Result<T> {
    ctx.check_aligned(pop)?;
    if shifts.len() != pop.len() {
        return Err(Error::Validation(format!("{} shifts for {} pieces", shifts.len(), pop.len())));
    }
    Ok((0..pop.len()).fold(T::zero(), |acc, r| {
        let p = pop.piece(r);
        acc + ctx.q_d(r) * (moment.eval(p.v_true + shifts[r], &p.w, theta) - moment.eval(p.v_true, &p.w, theta))
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness<T> {
    pub moment_index: usize,
    pub theta: Vec<T>,
    pub error: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GptVerdict<T> {
    pub is_gpt: bool,
    pub witness: Option<Witness<T>>,
}

/// A labeler is safe for every supplied moment only when the band is
/// degenerate; otherwise return a moment and parameter on which the band
/// admits a nonzero error.
pub fn gpt_for_estimation_check<T: Field>(
    pop: &Population<T>,
    ctx: &ResearchContext<T>,
    moments: &[MomentSpec<T>],
    band: GuaranteeBand<T>,
) -> Result<GptVerdict<T>> {
    let band = GuaranteeBand::new(band.delta)?;
    let mut first_sensitive = None;
    for (i, m) in moments.iter().enumerate() {
        if !sensitive_indices(pop, ctx, m)?.is_empty() {
            first_sensitive = Some(i);
            break;
        }
    }
    let index = first_sensitive.ok_or(Error::NoSensitiveMoment)?;
    if band.delta == T::zero() {
        return Ok(GptVerdict {
            is_gpt: true,
            witness: None,
        });
    }
    let moment = &moments[index];
    let theta = moment.theta_center();
    let member = adversarial_band_member(pop, ctx, moment, band, &theta)?;
    Ok(GptVerdict {
        is_gpt: member.achieved_error == T::zero(),
        witness: (member.achieved_error != T::zero()).then(|| Witness {
            moment_index: index,
            theta,
            error: member.achieved_error,
        }),
    })
}
