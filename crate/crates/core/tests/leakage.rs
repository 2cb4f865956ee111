use num_rational::Ratio;

type Exact = Ratio<i128>;
use num_traits::{FromPrimitive, Zero};
use proptest::prelude::*;
use textlabel_core::context::{
    enumerate_expectations, leakage_term_prediction, LossSpec, ResearchContext, SamplingTable,
};
use textlabel_core::population::{Population, TextPiece};
use textlabel_core::Field;

/// Per piece: four cell weights and a preference for the realized bit.
fn raw_context(max_n: usize) -> impl Strategy<Value = Vec<([u8; 4], bool, i8, i8)>> {
    prop::collection::vec((any::<[u8; 4]>(), any::<bool>(), -9i8..10, -9i8..10), 1..=max_n)
}

fn build<T: Field>(raw: &[([u8; 4], bool, i8, i8)]) -> Option<(Population<T>, ResearchContext<T>, Vec<T>)> {
    let mut tables = Vec::new();
    let mut bits = Vec::new();
    let mut pieces = Vec::new();
    let mut predictions = Vec::new();
    for (r, (cells, prefer, y, yhat)) in raw.iter().enumerate() {
        let c: Vec<i64> = cells.iter().map(|&c| (c % 6) as i64).collect();
        let total: i64 = c.iter().sum();
        if total == 0 {
            return None;
        }
        let frac = |x: i64| T::from_i64(x).unwrap() / T::from_i64(total).unwrap();
        let table = SamplingTable::new(frac(c[0]), frac(c[1]), frac(c[2]), frac(c[3])).ok()?;
        let t = if table.q_t(*prefer) > T::zero() { *prefer } else { !*prefer };
        tables.push(table);
        bits.push(t);
        pieces.push(TextPiece::new(format!("p{r}"), T::zero(), vec![T::one()]).with_y(T::from_i8(*y).unwrap()));
        predictions.push(T::from_i8(*yhat).unwrap());
    }
    let ctx = ResearchContext::new(tables, bits).ok()?;
    if (0..ctx.len()).all(|r| ctx.q_d(r) == T::zero()) {
        return None;
    }
    Some((Population::new(pieces).unwrap(), ctx, predictions))
}

fn losses<T: Field>(pop: &Population<T>, loss: LossSpec, predictions: &[T]) -> Vec<T> {
    pop.pieces()
        .iter()
        .zip(predictions)
        .map(|(p, &yhat)| loss.evaluate(p.y.unwrap(), yhat))
        .collect()
}

fn loss_strategy() -> impl Strategy<Value = LossSpec> {
    prop_oneof![Just(LossSpec::Squared), Just(LossSpec::Absolute), Just(LossSpec::ZeroOne)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_is_exact_over_rationals(raw in raw_context(5), loss in loss_strategy()) {
        let Some((pop, ctx, pred)) = build::<Exact>(&raw) else { return Ok(()) };
        let terms = leakage_term_prediction(&pop, &ctx, loss, &pred).unwrap();
        let e = enumerate_expectations(&pop, &ctx, &losses(&pop, loss, &pred)).unwrap();
        prop_assert_eq!(&terms.unconditional, &e.e_unconditional);
        prop_assert_eq!(&terms.conditional, &e.e_conditional_on_t);
        prop_assert_eq!(terms.unconditional.clone(), terms.conditional.clone() - terms.leakage_bias.clone());
    }

    #[test]
    fn decomposition_matches_enumeration_in_floating_point(raw in raw_context(10), loss in loss_strategy()) {
        let Some((pop, ctx, pred)) = build::<f64>(&raw) else { return Ok(()) };
        let terms = leakage_term_prediction(&pop, &ctx, loss, &pred).unwrap();
        let e = enumerate_expectations(&pop, &ctx, &losses(&pop, loss, &pred)).unwrap();
        prop_assert!((terms.unconditional - e.e_unconditional).abs() <= 1e-12 * (1.0 + e.e_unconditional.abs()));
        prop_assert!((terms.conditional - e.e_conditional_on_t).abs() <= 1e-12 * (1.0 + e.e_conditional_on_t.abs()));
        prop_assert_eq!(terms.unconditional, terms.conditional - terms.leakage_bias);
    }

    #[test]
    fn independent_membership_has_no_leakage(
        q in prop::collection::vec((1u8..10, 1u8..10, any::<bool>(), -9i8..10), 1..12),
    ) {
        let tables = q.iter().map(|&(d, t, _, _)| {
            let f = |x: u8| Exact::from_u8(x).unwrap() / Exact::from_u8(10).unwrap();
            SamplingTable::independent(f(d), f(t)).unwrap()
        }).collect();
        let bits = q.iter().map(|x| x.2).collect();
        let ctx = ResearchContext::new(tables, bits).unwrap();
        let pieces = q.iter().enumerate().map(|(r, x)| {
            TextPiece::new(format!("p{r}"), Exact::zero(), vec![Exact::from_i8(1).unwrap()])
                .with_y(Exact::from_i8(x.3).unwrap())
        }).collect();
        let pop = Population::new(pieces).unwrap();
        let pred = vec![Exact::zero(); q.len()];
        let terms = leakage_term_prediction(&pop, &ctx, LossSpec::Squared, &pred).unwrap();
        prop_assert!(terms.leakage_bias.is_zero());
        prop_assert_eq!(terms.unconditional, terms.conditional);
    }
}

#[test]
fn enumeration_budget_enforced() {
    let ctx = ResearchContext::<f64>::random(17, 0.5, 0.5).unwrap();
    let pieces = (0..17).map(|r| TextPiece::new(format!("p{r}"), 0.0, vec![1.0])).collect();
    let pop = Population::new(pieces).unwrap();
    assert!(enumerate_expectations(&pop, &ctx, &[1.0; 17]).is_err());
}
