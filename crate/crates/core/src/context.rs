//! Research contexts and the leakage terms they induce.
//!
//! Each piece carries the full joint law of (researcher collects it, model
//! was trained on it) as a 2x2 table; the tables are independent across
//! pieces. Given the model's realized training draw `t`, the weight a piece
//! receives in the researcher's conditional expectation is
//! `Q(D = 1 | T = t) = q^D * q^{T|D}(t) / q^T(t)`, and the leakage term is the
//! gap between that weight and the unconditional `q^D`.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::moment::MomentSpec;
use crate::population::Population;
use crate::scalar::Field;

/// Largest population [`enumerate_expectations`] accepts.
pub const ENUMERATION_LIMIT: usize = 16;

/// Relative tolerance for calling a leakage term zero.
pub const LEAKAGE_FREE_RTOL: f64 = 1e-9;

const TABLE_SUM_TOL: f64 = 1e-12;

/// Joint law of `(D, T)` for one piece: `p[d][tau]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingTable<T> {
    p: [[T; 2]; 2],
}

impl<T: Field> SamplingTable<T> {
    pub fn new(p00: T, p01: T, p10: T, p11: T) -> Result<Self> {
        let p = [[p00, p01], [p10, p11]];
        if p.iter().flatten().any(|&x| x < T::zero() || !x.is_finite_value()) {
            return Err(Error::Validation("sampling table entries must be finite and nonnegative".into()));
        }
        let sum = p00 + p01 + p10 + p11;
        if (sum - T::one()).magnitude() > T::lit(TABLE_SUM_TOL) {
            return Err(Error::Validation(format!(
                "sampling table entries sum to {}, expected 1",
                sum.as_f64()
            )));
        }
        Ok(SamplingTable { p })
    }

    /// `D` and `T` independent with the given marginals.
    pub fn independent(q_d: T, q_t: T) -> Result<Self> {
        let (nd, nt) = (T::one() - q_d, T::one() - q_t);
        Self::new(nd * nt, nd * q_t, q_d * nt, q_d * q_t)
    }

    pub fn p(&self, d: bool, tau: bool) -> T {
        self.p[d as usize][tau as usize]
    }

    pub fn q_d(&self) -> T {
        self.p[1][0] + self.p[1][1]
    }

    pub fn q_t(&self, tau: bool) -> T {
        self.p[0][tau as usize] + self.p[1][tau as usize]
    }

    pub fn q_t_given_d(&self, tau: bool) -> Option<T> {
        let q_d = self.q_d();
        (q_d > T::zero()).then(|| self.p[1][tau as usize] / q_d)
    }

    /// `q^{T|D}(tau) / q^T(tau)`, defined when both rates are.
    pub fn ratio(&self, tau: bool) -> Option<T> {
        let q_t = self.q_t(tau);
        if q_t > T::zero() {
            self.q_t_given_d(tau).map(|c| c / q_t)
        } else {
            None
        }
    }

    /// `Q(D = 1 | T = tau) = q^D * q^{T|D}(tau) / q^T(tau)`. Requires `q^T(tau) > 0`.
    pub fn q_d_given_t(&self, tau: bool) -> T {
        self.p[1][tau as usize] / self.q_t(tau)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResearchContext<T> {
    tables: Vec<SamplingTable<T>>,
    t_realized: Vec<bool>,
}

impl<T: Field> ResearchContext<T> {
    /// Rejects any piece whose realized training draw has zero probability.
    pub fn new(tables: Vec<SamplingTable<T>>, t_realized: Vec<bool>) -> Result<Self> {
        if tables.len() != t_realized.len() {
            return Err(Error::Validation(format!(
                "{} tables but {} realized training bits",
                tables.len(),
                t_realized.len()
            )));
        }
        if let Some(i) = tables
            .iter()
            .zip(&t_realized)
            .position(|(tab, &t)| !(tab.q_t(t) > T::zero()))
        {
            return Err(Error::Validation(format!(
                "piece {i}: realized training draw has probability zero"
            )));
        }
        Ok(ResearchContext { tables, t_realized })
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn tables(&self) -> &[SamplingTable<T>] {
        &self.tables
    }

    pub fn t_realized(&self) -> &[bool] {
        &self.t_realized
    }

    pub fn q_d(&self, r: usize) -> T {
        self.tables[r].q_d()
    }

    /// Weight of piece `r` in the expectation conditional on `T = t`.
    pub fn conditional_weight(&self, r: usize) -> T {
        self.tables[r].q_d_given_t(self.t_realized[r])
    }

    /// `q^{T|D}(t_r) / q^T(t_r)`, `None` when `q^D_r = 0`.
    pub fn ratio(&self, r: usize) -> Option<T> {
        self.tables[r].ratio(self.t_realized[r])
    }

    /// Expected sample sizes (unconditional, conditional on `T = t`) and
    /// whether they agree to relative tolerance `rtol`.
    pub fn expected_sizes(&self, rtol: f64) -> (T, T, bool) {
        let unconditional = (0..self.len()).fold(T::zero(), |acc, r| acc + self.q_d(r));
        let conditional = (0..self.len()).fold(T::zero(), |acc, r| acc + self.conditional_weight(r));
        let balanced = (unconditional - conditional).magnitude() <= T::lit(rtol) * unconditional.magnitude();
        (unconditional, conditional, balanced)
    }

    pub fn check_aligned<U>(&self, pop: &Population<U>) -> Result<()> {
        if pop.len() != self.len() {
            return Err(Error::Validation(format!(
                "context has {} tables but population has {} pieces",
                self.len(),
                pop.len()
            )));
        }
        Ok(())
    }

    /// Every piece collected with certainty, independent of training.
    pub fn census(n: usize, q_trained: T) -> Result<Self> {
        let table = SamplingTable::independent(T::one(), q_trained)?;
        Self::new(vec![table; n], vec![true; n])
    }

    /// Bernoulli(`p`) collection independent of training.
    pub fn random(n: usize, p: T, q_trained: T) -> Result<Self> {
        let table = SamplingTable::independent(p, q_trained)?;
        Self::new(vec![table; n], vec![true; n])
    }

    /// Pieces written after the model's training cutoff: never trained on.
    pub fn post_cutoff(n: usize, p: T) -> Result<Self> {
        let table = SamplingTable::independent(p, T::zero())?;
        Self::new(vec![table; n], vec![false; n])
    }
}

#[derive(Clone, Debug, Deserialize)]
struct ContextRow {
    id: String,
    p00: f64,
    p01: f64,
    p10: f64,
    p11: f64,
    t: Value,
}

fn parse_bit(v: &Value, row: usize) -> Result<bool> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) if n.as_f64() == Some(0.0) => Ok(false),
        Value::Number(n) if n.as_f64() == Some(1.0) => Ok(true),
        other => Err(Error::Parse {
            row,
            message: format!("field `t` must be 0, 1 or a boolean, found {other}"),
        }),
    }
}

/// Reads a context file and aligns it to the population by piece id.
pub fn load_context<T: Field, U: Field>(path: &Path, pop: &Population<U>) -> Result<ResearchContext<T>> {
    let rows: Vec<ContextRow> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    context_from_rows(rows, pop)
}

pub fn parse_context<T: Field, U: Field>(json: &str, pop: &Population<U>) -> Result<ResearchContext<T>> {
    let rows: Vec<ContextRow> = serde_json::from_str(json)?;
    context_from_rows(rows, pop)
}

fn context_from_rows<T: Field, U: Field>(rows: Vec<ContextRow>, pop: &Population<U>) -> Result<ResearchContext<T>> {
    let mut slots: Vec<Option<(SamplingTable<T>, bool)>> = vec![None; pop.len()];
    for (idx, row) in rows.iter().enumerate() {
        let i = pop.index_of(&row.id).ok_or_else(|| Error::Parse {
            row: idx + 1,
            message: format!("context id {:?} is not in the population", row.id),
        })?;
        if slots[i].is_some() {
            return Err(Error::DuplicateId(row.id.clone()));
        }
        let table = SamplingTable::new(T::lit(row.p00), T::lit(row.p01), T::lit(row.p10), T::lit(row.p11))
            .map_err(|e| Error::Parse {
                row: idx + 1,
                message: e.to_string(),
            })?;
        slots[i] = Some((table, parse_bit(&row.t, idx + 1)?));
    }
    let mut tables = Vec::with_capacity(pop.len());
    let mut bits = Vec::with_capacity(pop.len());
    for (i, slot) in slots.into_iter().enumerate() {
        let (table, t) = slot.ok_or_else(|| {
            Error::Validation(format!("context has no table for piece {:?}", pop.piece(i).id))
        })?;
        tables.push(table);
        bits.push(t);
    }
    ResearchContext::new(tables, bits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    Squared,
    Absolute,
    ZeroOne,
}

impl LossSpec {
    pub fn evaluate<T: Field>(&self, y: T, yhat: T) -> T {
        match self {
            LossSpec::Squared => (y - yhat) * (y - yhat),
            LossSpec::Absolute => (y - yhat).magnitude(),
            LossSpec::ZeroOne => {
                if y == yhat {
                    T::zero()
                } else {
                    T::one()
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LeakageTerms<T> {
    pub unconditional: T,
    pub conditional: T,
    pub leakage_bias: T,
}

impl<T: Field> LeakageTerms<T> {
    /// `|leakage_bias| <= 1e-9 * |unconditional|`.
    pub fn is_leakage_free(&self) -> bool {
        self.leakage_bias.magnitude() <= T::lit(LEAKAGE_FREE_RTOL) * self.unconditional.magnitude()
    }
}

/// Sums `weight_r * value(r)` over pieces, skipping pieces that are never
/// collected. `value` is only called where `q^D_r > 0`.
fn leakage_sums<T: Field>(
    ctx: &ResearchContext<T>,
    mut value: impl FnMut(usize) -> Result<T>,
) -> Result<LeakageTerms<T>> {
    let mut conditional = T::zero();
    let mut leakage = T::zero();
    let mut any_sampled = false;
    for r in 0..ctx.len() {
        let q_d = ctx.q_d(r);
        if !(q_d > T::zero()) {
            continue;
        }
        any_sampled = true;
        let x = value(r)?;
        let w = ctx.conditional_weight(r);
        conditional = conditional + w * x;
        leakage = leakage + (w - q_d) * x;
    }
    if !any_sampled {
        return Err(Error::DegenerateContext("no piece is collected with positive probability".into()));
    }
    Ok(LeakageTerms {
        unconditional: conditional - leakage,
        conditional,
        leakage_bias: leakage,
    })
}

/// Expected researcher loss unconditionally and conditional on the model's
/// training draw, with the leakage term separating them.
pub fn leakage_term_prediction<T: Field>(
    pop: &Population<T>,
    ctx: &ResearchContext<T>,
    loss: LossSpec,
    predictions: &[T],
) -> Result<LeakageTerms<T>> {
    ctx.check_aligned(pop)?;
    if predictions.len() != pop.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} pieces",
            predictions.len(),
            pop.len()
        )));
    }
    leakage_sums(ctx, |r| {
        let piece = pop.piece(r);
        let y = piece.y.ok_or_else(|| Error::MissingField {
            piece: piece.id.clone(),
            field: "y",
        })?;
        Ok(loss.evaluate(y, predictions[r]))
    })
}

/// Leakage component of the plug-in moment:
/// `sum_r q^D_r (q^{T|D}_r(t_r) / q^T_r(t_r) - 1) g(vhat_r, w_r; theta)`.
pub fn leakage_term_estimation<T: Field>(
    pop: &Population<T>,
    ctx: &ResearchContext<T>,
    moment: &MomentSpec<T>,
    labeler: &str,
    theta: &[T],
) -> Result<T> {
    ctx.check_aligned(pop)?;
    moment.check_dimension(pop.k())?;
    moment.check_theta(theta)?;
    let terms = leakage_sums(ctx, |r| {
        let piece = pop.piece(r);
        Ok(moment.eval(piece.label(labeler)?, &piece.w, theta))
    })?;
    Ok(terms.leakage_bias)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Expectations<T> {
    pub e_unconditional: T,
    pub e_conditional_on_t: T,
}

/// Exact `E[sum_r D_r s_r]` and `E[sum_r D_r s_r | T = t]` by walking all
/// `4^N` joint realizations of `(D, T)` under the product law.
pub fn enumerate_expectations<T: Field, U>(
    pop: &Population<U>,
    ctx: &ResearchContext<T>,
    statistic: &[T],
) -> Result<Expectations<T>> {
    ctx.check_aligned(pop)?;
    let n = ctx.len();
    if n > ENUMERATION_LIMIT {
        return Err(Error::EnumerationBudget {
            pieces: n,
            limit: ENUMERATION_LIMIT,
        });
    }
    if statistic.len() != n {
        return Err(Error::Validation(format!("{} statistics for {n} pieces", statistic.len())));
    }

    struct Acc<T> {
        total: T,
        matched_prob: T,
        matched_total: T,
    }

    fn walk<T: Field>(
        r: usize,
        prob: T,
        sum: T,
        matches: bool,
        ctx: &ResearchContext<T>,
        s: &[T],
        acc: &mut Acc<T>,
    ) {
        if r == ctx.len() {
            acc.total = acc.total + prob * sum;
            if matches {
                acc.matched_prob = acc.matched_prob + prob;
                acc.matched_total = acc.matched_total + prob * sum;
            }
            return;
        }
        let table = &ctx.tables()[r];
        for d in [false, true] {
            for tau in [false, true] {
                let p = table.p(d, tau);
                if p == T::zero() {
                    continue;
                }
                let next_sum = if d { sum + s[r] } else { sum };
                walk(
                    r + 1,
                    prob * p,
                    next_sum,
                    matches && tau == ctx.t_realized()[r],
                    ctx,
                    s,
                    acc,
                );
            }
        }
    }

    let mut acc = Acc {
        total: T::zero(),
        matched_prob: T::zero(),
        matched_total: T::zero(),
    };
    walk(0, T::one(), T::zero(), true, ctx, statistic, &mut acc);
    if acc.matched_prob == T::zero() {
        return Err(Error::ZeroProbability);
    }
    Ok(Expectations {
        e_unconditional: acc.total,
        e_conditional_on_t: acc.matched_total / acc.matched_prob,
    })
}
