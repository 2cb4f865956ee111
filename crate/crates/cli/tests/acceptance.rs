//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

mod common;

use std::time::Instant;

use num_rational::Ratio;
use num_traits::Zero;
use rand::Rng;
use rand_distr::StandardNormal;
use textlabel_core::bounds::{adversarial_band_member, band_member_error, GuaranteeBand};
use textlabel_core::context::{
    enumerate_expectations, leakage_term_prediction, LossSpec, ResearchContext, SamplingTable,
};
use textlabel_core::debias::{omega_formulas, population_moments, VarianceSource};
use textlabel_core::moment::{MomentFamily, MomentSpec};
use textlabel_core::population::{generate_synthetic, CovariateLaw, Population, SyntheticSpec, TextPiece};
use textlabel_core::regress::{population_targets, Side};
use textlabel_core::rng;
use textlabel_core::simulate::{run_monte_carlo, Estimator, SimulationCellResult, SimulationConfig};
use textlabel_core::Field;
use textlabel_probe::fixtures::{cluster_corpus, planted_corpus};
use textlabel_probe::{probe_report, run_probe, MockServer, ProbeConfig, RetryPolicy};

type Exact = Ratio<i128>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// A random context of `n` pieces with integer cell weights in `0..6`, plus
/// integer outcomes and predictions.
fn random_context<T: Field, R: Rng>(n: usize, rng: &mut R) -> (Population<T>, ResearchContext<T>, Vec<T>) {
    loop {
        let mut tables = Vec::new();
        let mut bits = Vec::new();
        let mut pieces = Vec::new();
        let mut predictions = Vec::new();
        for r in 0..n {
            let c: Vec<i64> = loop {
                let c: Vec<i64> = (0..4).map(|_| rng.random_range(0..6)).collect();
                if c.iter().sum::<i64>() > 0 {
                    break c;
                }
            };
            let total = T::from_i64(c.iter().sum()).unwrap();
            let f = |x: i64| T::from_i64(x).unwrap() / total;
            let table = SamplingTable::new(f(c[0]), f(c[1]), f(c[2]), f(c[3])).unwrap();
            let prefer = rng.random_bool(0.5);
            bits.push(if table.q_t(prefer) > T::zero() { prefer } else { !prefer });
            tables.push(table);
            let y = T::from_i64(rng.random_range(-9..10)).unwrap();
            pieces.push(TextPiece::new(format!("p{r}"), T::zero(), vec![T::one()]).with_y(y));
            predictions.push(T::from_i64(rng.random_range(-9..10)).unwrap());
        }
        let ctx = ResearchContext::new(tables, bits).unwrap();
        if (0..n).any(|r| ctx.q_d(r) > T::zero()) {
            return (Population::new(pieces).unwrap(), ctx, predictions);
        }
    }
}

fn losses<T: Field>(pop: &Population<T>, loss: LossSpec, predictions: &[T]) -> Vec<T> {
    pop.pieces()
        .iter()
        .zip(predictions)
        .map(|(p, &yhat)| loss.evaluate(p.y.unwrap(), yhat))
        .collect()
}

const LOSSES: [LossSpec; 3] = [LossSpec::Squared, LossSpec::Absolute, LossSpec::ZeroOne];

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    let mut exact_ok = true;
    let mut float_ok = true;
    for case in 0..200u64 {
        let n = 1 + (case % 10) as usize;
        let loss = LOSSES[(case % 3) as usize];
        let mut draw = rng::stream(101, rng::TAG_SYNTHETIC, case);
        let (pop, ctx, pred) = random_context::<f64, _>(n, &mut draw);
        let terms = leakage_term_prediction(&pop, &ctx, loss, &pred).unwrap();
        let e = enumerate_expectations(&pop, &ctx, &losses(&pop, loss, &pred)).unwrap();
        let residual = (terms.unconditional - e.e_unconditional)
            .abs()
            .max((terms.conditional - e.e_conditional_on_t).abs());
        worst = worst.max(residual);
        float_ok &= residual <= 1e-12 * (1.0 + e.e_unconditional.abs().max(e.e_conditional_on_t.abs()))
            && terms.unconditional == terms.conditional - terms.leakage_bias;

        let mut draw = rng::stream(101, rng::TAG_SYNTHETIC, case);
        let (pop, ctx, pred) = random_context::<Exact, _>(n, &mut draw);
        let terms = leakage_term_prediction(&pop, &ctx, loss, &pred).unwrap();
        let e = enumerate_expectations(&pop, &ctx, &losses(&pop, loss, &pred)).unwrap();
        exact_ok &= terms.unconditional == e.e_unconditional
            && terms.conditional == e.e_conditional_on_t
            && terms.unconditional == terms.conditional - terms.leakage_bias;
    }
    outcome(
        float_ok && exact_ok,
        format!("200 contexts, N <= 10: max f64 residual {worst:.2e}, exact rational identity {exact_ok}"),
    )
}

fn criterion_2() -> Outcome {
    let mut all_zero = true;
    for case in 0..100u64 {
        let mut draw = rng::stream(202, rng::TAG_SYNTHETIC, case);
        let n = draw.random_range(1..=10);
        let mut tables = Vec::new();
        let mut bits = Vec::new();
        let mut pieces = Vec::new();
        let mut pred = Vec::new();
        for r in 0..n {
            let q_d = Exact::new(draw.random_range(1..=8), 8);
            let q_t = Exact::new(draw.random_range(1..=7), 8);
            tables.push(SamplingTable::independent(q_d, q_t).unwrap());
            bits.push(draw.random_bool(0.5));
            let y = Exact::from_integer(draw.random_range(-9..10));
            pieces.push(TextPiece::new(format!("p{r}"), Exact::zero(), vec![Exact::from_integer(1)]).with_y(y));
            pred.push(Exact::from_integer(draw.random_range(-9..10)));
        }
        let pop = Population::new(pieces).unwrap();
        let ctx = ResearchContext::new(tables, bits).unwrap();
        let terms = leakage_term_prediction(&pop, &ctx, LOSSES[(case % 3) as usize], &pred).unwrap();
        all_zero &= terms.leakage_bias.is_zero();
    }
    let half = Exact::new(1, 2);
    let table = SamplingTable::new(half, Exact::zero(), Exact::zero(), half).unwrap();
    let ratio = table.ratio(true).unwrap();
    let pop = Population::new(vec![
        TextPiece::new("only", Exact::zero(), vec![Exact::from_integer(1)]).with_y(Exact::from_integer(3)),
    ])
    .unwrap();
    let ctx = ResearchContext::new(vec![table], vec![true]).unwrap();
    let terms = leakage_term_prediction(&pop, &ctx, LossSpec::Squared, &[Exact::from_integer(1)]).unwrap();
    let nonzero = !terms.leakage_bias.is_zero();
    outcome(
        all_zero && nonzero && ratio == Exact::from_integer(2),
        format!(
            "100 independent profiles all zero: {all_zero}; ratio-{ratio} piece bias {}",
            terms.leakage_bias
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut sandwich_ok = 0;
    let mut members_ok = 0;
    let mut worst_gap = f64::INFINITY;
    for case in 0..1000u64 {
        let mut draw = rng::stream(303, rng::TAG_SYNTHETIC, case);
        let n = draw.random_range(1..=12);
        let pieces = (0..n)
            .map(|r| TextPiece::new(format!("p{r}"), draw.random_range(-2.0..2.0), vec![1.0, draw.random_range(-2.0..2.0)]))
            .collect();
        let tables = (0..n)
            .map(|_| SamplingTable::independent(draw.random_range(0.0..=1.0), 0.5).unwrap())
            .collect();
        let pop: Population<f64> = Population::new(pieces).unwrap();
        let ctx = ResearchContext::new(tables, vec![true; n]).unwrap();
        let family = match case % 3 {
            0 => MomentFamily::Product { j: draw.random_range(0..2) },
            1 => MomentFamily::Residual { j: draw.random_range(0..2) },
            _ => MomentFamily::Squared,
        };
        let moment = MomentSpec::new(family, vec![-1.0; 2], vec![1.0; 2], -5.0, 5.0, draw.random_range(0.05..1.0)).unwrap();
        let delta = draw.random_range(0.0..1.0);
        let theta = [draw.random_range(-1.0..1.0), draw.random_range(-1.0..1.0)];
        let m = adversarial_band_member(&pop, &ctx, &moment, GuaranteeBand::new(delta).unwrap(), &theta).unwrap();
        let tol = 1e-12 * (1.0 + m.upper_bound.abs());
        if m.lower_bound <= m.achieved_error + tol && m.achieved_error <= m.upper_bound + tol {
            sandwich_ok += 1;
        }
        worst_gap = worst_gap.min(m.upper_bound - m.achieved_error);
        let shifts: Vec<f64> = (0..n).map(|_| draw.random_range(-delta..=delta)).collect();
        let err = band_member_error(&pop, &ctx, &moment, &shifts, &theta).unwrap();
        if err <= m.upper_bound + tol {
            members_ok += 1;
        }
    }
    outcome(
        sandwich_ok == 1000 && members_ok == 1000,
        format!("sandwich held {sandwich_ok}/1000, random members under upper bound {members_ok}/1000, min slack {worst_gap:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..500u64 {
        let mut draw = rng::stream(404, rng::TAG_SYNTHETIC, case);
        let k = draw.random_range(2..=4);
        let spec = SyntheticSpec {
            n_pieces: draw.random_range(20..=2000),
            beta_star: (0..k).map(|_| draw.random_range(-2.0..2.0)).collect(),
            gamma: (0..k).map(|_| draw.random_range(-1.0..1.0)).collect(),
            noise_sd_v: draw.random_range(0.1..2.0),
            noise_sd_delta: draw.random_range(0.0..1.0),
            covariate_law: if case % 2 == 0 {
                CovariateLaw::StandardNormal
            } else {
                CovariateLaw::Bernoulli { p: 0.5 }
            },
            seed: case,
        };
        let pop: Population<f64> = generate_synthetic(&spec).unwrap();
        let response = draw.random_range(1..k);
        let (Ok(lhs), Ok(rhs)) = (
            population_targets(&pop, "synthetic", Side::Lhs, response),
            population_targets(&pop, "synthetic", Side::Rhs, response),
        ) else {
            return outcome(false, format!("population {case} could not be fitted"));
        };
        worst = worst.max(lhs.identity_residual_lhs.unwrap()).max(rhs.identity_residual_rhs.unwrap());
    }
    outcome(worst <= 1e-9, format!("500 populations (20 to 2000 pieces): max identity residual {worst:.2e}"))
}

fn planted_population() -> Population<f64> {
    generate_synthetic(&SyntheticSpec {
        n_pieces: 10_000,
        beta_star: vec![1.0, 0.5],
        gamma: vec![0.2, 0.3],
        noise_sd_v: 1.0,
        noise_sd_delta: 0.5,
        covariate_law: CovariateLaw::Bernoulli { p: 0.5 },
        seed: 42,
    })
    .unwrap()
}

fn cell<'a>(cells: &'a [SimulationCellResult], est: Estimator, frac: f64) -> &'a SimulationCellResult {
    cells
        .iter()
        .find(|c| c.estimator == est && (c.frac - frac).abs() < 1e-12)
        .expect("cell present")
}

fn criteria_5_and_6() -> (Outcome, Outcome) {
    let pop = planted_population();
    let config = SimulationConfig {
        seed: 1,
        ..SimulationConfig::default()
    };
    let cells = run_monte_carlo(&pop, &config).unwrap();
    let lambda = population_targets(&pop, "synthetic", Side::Lhs, 1).unwrap().lambda_delta_w.unwrap()[1];

    let debiased_ok = |c: &SimulationCellResult| c.valid && c.normalized_bias.abs() <= 0.1 && (0.92..=0.97).contains(&c.coverage);
    let d5 = cell(&cells, Estimator::Debiased, 0.05);
    let p5 = cell(&cells, Estimator::PlugIn, 0.05);
    let planted_sds = lambda / p5.sd;
    let plug_ok = p5.normalized_bias.abs() >= 1.0 && p5.coverage <= 0.85 && planted_sds >= 2.0;
    let five = outcome(
        debiased_ok(d5) && plug_ok,
        format!(
            "5%: debiased nbias {:+.3} coverage {:.3}; plug-in nbias {:+.2} coverage {:.3}; planted lambda = {:.1} MC sd",
            d5.normalized_bias, d5.coverage, p5.normalized_bias, p5.coverage, planted_sds
        ),
    );

    let mut parts = Vec::new();
    let mut all_ok = true;
    for &frac in &config.validation_fracs {
        let d = cell(&cells, Estimator::Debiased, frac);
        let ok = debiased_ok(d);
        all_ok &= ok;
        parts.push(format!(
            "{}% nbias {:+.3} cov {:.3}{}",
            frac * 100.0,
            d.normalized_bias,
            d.coverage,
            if ok { "" } else { " (out of range)" }
        ));
    }
    (five, outcome(all_ok, parts.join("; ")))
}

fn mse_separation(d: &SimulationCellResult, v: &SimulationCellResult) -> f64 {
    (v.mse - d.mse) / (d.mse_se.powi(2) + v.mse_se.powi(2)).sqrt()
}

fn criterion_7() -> Outcome {
    let pop: Population<f64> = generate_synthetic(&SyntheticSpec {
        n_pieces: 10_000,
        beta_star: vec![1.0, 0.5],
        gamma: vec![0.05, 0.05],
        noise_sd_v: 1.0,
        noise_sd_delta: 0.2,
        covariate_law: CovariateLaw::StandardNormal,
        seed: 7,
    })
    .unwrap();
    let fracs = vec![0.025, 0.05, 0.10];
    let config = SimulationConfig {
        validation_fracs: fracs.clone(),
        estimators: vec![Estimator::Debiased, Estimator::ValidationOnly],
        debiased_variance: VarianceSource::Hc1,
        seed: 2,
        ..SimulationConfig::default()
    };
    let cells = run_monte_carlo(&pop, &config).unwrap();
    let mut small_ok = true;
    let mut parts = Vec::new();
    for &f in &fracs {
        let z = mse_separation(cell(&cells, Estimator::Debiased, f), cell(&cells, Estimator::ValidationOnly, f));
        small_ok &= z >= 3.0;
        parts.push(format!("{}%: {z:.1} sd", f * 100.0));
    }

    let noisy = pop
        .relabel("noise", |i, _| rng::stream(9, rng::TAG_SYNTHETIC, i as u64).sample(StandardNormal))
        .unwrap();
    let frac = 0.05;
    let config = SimulationConfig {
        validation_fracs: vec![frac],
        labelers: vec!["noise".into()],
        ..config
    };
    let cells = run_monte_carlo(&noisy, &config).unwrap();
    let d = cell(&cells, Estimator::Debiased, frac);
    let v = cell(&cells, Estimator::ValidationOnly, frac);
    let n_v = textlabel_core::debias::validation_count(config.n_sample, frac);
    let big_n = noisy.len() as f64;
    let omega = omega_formulas(
        &population_moments(&noisy, "noise", Side::Lhs, 1).unwrap(),
        (config.n_sample - n_v) as f64 / big_n,
        n_v as f64 / big_n,
    )
    .unwrap();
    let z = mse_separation(d, v);
    let noise_ok = z.abs() >= 3.0 && (z > 0.0) == (omega.margin > 0.0);
    outcome(
        small_ok && noise_ok,
        format!(
            "small error, debiased MSE below validation-only by {}; pure noise: separation {z:+.1} sd, margin {:+.3}",
            parts.join(", "),
            omega.margin
        ),
    )
}

fn criterion_8() -> Outcome {
    let pop = planted_population();
    let big_n = pop.len();
    let config = SimulationConfig {
        n_sample: big_n,
        validation_fracs: vec![0.05],
        replications: 5000,
        estimators: vec![Estimator::ValidationOnly, Estimator::Debiased],
        debiased_variance: VarianceSource::Hc1,
        seed: 3,
        ..SimulationConfig::default()
    };
    let cells = run_monte_carlo(&pop, &config).unwrap();
    let omega = omega_formulas(&population_moments(&pop, "synthetic", Side::Lhs, 1).unwrap(), 0.95, 0.05).unwrap();
    let scaled = |c: &SimulationCellResult| big_n as f64 * c.sd * c.sd;
    let val = scaled(cell(&cells, Estimator::ValidationOnly, 0.05));
    let deb = scaled(cell(&cells, Estimator::Debiased, 0.05));
    let rel = val / omega.omega_validation - 1.0;
    outcome(
        rel.abs() <= 0.10,
        format!(
            "validation: N*Var_MC {val:.2} vs Omega {:.2} ({:+.1}%); debiased: N*Var_MC {deb:.2} vs Omega verbatim {:.2} ({:+.1}%), covariance form {:.2} ({:+.1}%)",
            omega.omega_validation,
            100.0 * rel,
            omega.omega_debiased,
            100.0 * (omega.omega_debiased / deb - 1.0),
            omega.omega_debiased_covariance,
            100.0 * (omega.omega_debiased_covariance / deb - 1.0),
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in [9, 10, 11] {
        let pop: Population<f64> = generate_synthetic(&SyntheticSpec {
            n_pieces: 10_000,
            beta_star: vec![0.0, 1.0],
            gamma: vec![0.0, 0.0],
            noise_sd_v: 1.0,
            noise_sd_delta: 1.0,
            covariate_law: CovariateLaw::StandardNormal,
            seed,
        })
        .unwrap();
        let config = SimulationConfig {
            side: Side::Rhs,
            validation_fracs: vec![0.05, 0.1],
            estimators: vec![Estimator::PlugIn, Estimator::Debiased],
            seed: 4,
            ..SimulationConfig::default()
        };
        let cells = run_monte_carlo(&pop, &config).unwrap();
        let p = cell(&cells, Estimator::PlugIn, 0.1);
        let d = cell(&cells, Estimator::Debiased, 0.1);
        let d5 = cell(&cells, Estimator::Debiased, 0.05);
        let attenuation = -p.mean_bias / p.target;
        ok &= attenuation >= 0.25 && d.valid && d.normalized_bias.abs() <= 0.15;
        parts.push(format!(
            "pop {seed}: plug-in attenuated {:.1}%, debiased nbias {:+.3} (5%: {:+.3})",
            100.0 * attenuation,
            d.normalized_bias,
            d5.normalized_bias
        ));
    }
    outcome(ok, format!("10% validation; {}", parts.join("; ")))
}

fn probe_config(url: &str) -> ProbeConfig {
    let mut c = ProbeConfig::new(url, "mock");
    c.embed_model = Some("mock-embed".into());
    c.token_env = None;
    c.concurrency = 32;
    c.retry = RetryPolicy {
        max_attempts: 3,
        backoff_ms: 1,
    };
    c
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (norm(a) * norm(b))
}

fn criterion_10() -> Outcome {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    runtime.block_on(async {
        let template = probe_config("http://unused");
        let (pop, fixture) = planted_corpus(10_000, 344, 2024, &template);
        let server = MockServer::start(fixture).await.unwrap();
        let cache = tempfile::tempdir().unwrap();
        let config = ProbeConfig {
            endpoint: server.base_url(),
            cache_dir: Some(cache.path().to_path_buf()),
            ..template.clone()
        };
        let cold = config.client().unwrap();
        let records = run_probe(&pop, &config, &cold).await.unwrap();
        let matches = records.iter().filter(|r| r.exact_match).count();
        let warm = config.client().unwrap();
        let rerun = run_probe(&pop, &config, &warm).await.unwrap();
        let warm_requests = warm.requests();

        let (cpop, cfixture) = cluster_corpus(4, 10, 24, 17, &template);
        let planted = cfixture.embeddings.clone();
        let cserver = MockServer::start(cfixture).await.unwrap();
        let cconfig = ProbeConfig {
            endpoint: cserver.base_url(),
            ..template
        };
        let client = cconfig.client().unwrap();
        let mut crecords = run_probe(&cpop, &cconfig, &client).await.unwrap();
        let report = probe_report(&mut crecords, &client, "mock-embed", 5).await.unwrap();
        let originals: Vec<&Vec<f64>> = cpop.pieces().iter().map(|p| &planted[p.text.as_ref().unwrap()]).collect();
        let n = originals.len();
        let mut pair_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                pair_sum += cosine(originals[i], originals[j]);
            }
        }
        let baseline = pair_sum / (n * (n - 1) / 2) as f64;
        let per_record: Vec<f64> = crecords
            .iter()
            .enumerate()
            .map(|(k, r)| cosine(&planted[&r.generated_full().unwrap()], originals[k]))
            .collect();
        let mean = per_record.iter().sum::<f64>() / n as f64;
        let err = (report.random_pair_baseline - baseline)
            .abs()
            .max((report.mean_distance.unwrap() - mean).abs())
            .max(
                crecords
                    .iter()
                    .zip(&per_record)
                    .map(|(r, d)| (r.embedding_distance.unwrap() - d).abs())
                    .fold(0.0, f64::max),
            );
        outcome(
            matches == 344 && records == rerun && warm_requests == 0 && err <= 1e-12,
            format!(
                "exact matches {matches}/10000 (planted 344); warm rerun requests {warm_requests}; report vs all-pairs oracle {err:.1e}"
            ),
        )
    })
}

fn criterion_11() -> Outcome {
    let mut failures = Vec::new();
    for (name, args) in common::GOLDEN {
        let first = common::textlabel(args);
        let second = common::textlabel(args);
        if first.stdout != second.stdout {
            failures.push(format!("{name}: runs differ"));
        }
        if let Err(e) = common::golden_matches(name, args) {
            failures.push(e);
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} commands byte-identical across runs and equal to golden files", common::GOLDEN.len())
        } else {
            failures.join("; ")
        },
    )
}

fn report(id: &str, start: Instant, o: &Outcome) -> bool {
    println!(
        "criterion {id:<2} {}  {} [{:.1}s]",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
    o.passed
}

fn main() {
    // `cargo test -- --list` and filters address the harness, which this target
    // does not have; only run for a plain invocation or an explicit filter match.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let mut passed = true;
    let mut run = |id: &str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        passed &= report(id, start, &f());
    };
    run("1", &criterion_1);
    run("2", &criterion_2);
    run("3", &criterion_3);
    run("4", &criterion_4);
    let start = Instant::now();
    let (five, six) = criteria_5_and_6();
    let mut ok = report("5", start, &five);
    ok &= report("6", start, &six);
    run("7", &criterion_7);
    run("8", &criterion_8);
    run("9", &criterion_9);
    run("10", &criterion_10);
    run("11", &criterion_11);
    passed &= ok;
    if !passed {
        std::process::exit(1);
    }
}
