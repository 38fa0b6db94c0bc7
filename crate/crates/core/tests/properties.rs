use coinflip::binomial::{bf_informed_binomial, bf_symmetric_binomial, exact_binomial_p, TruncatedBetaPrior};
use coinflip::bma::{inclusion_bf, posterior_model_probs};
use coinflip::data::{
    aggregate, exclude_outliers, ingest_csv, summary_row, write_csv, AggregateCell, Cells, FlipDataset, FlipRecord,
    IngestOptions, Side,
};
use coinflip::hier::{log_likelihood, probability_sd, HeterogeneityTransform, HierParams};
use coinflip::learning::{log_likelihood_learning, make_batches_from, same_side_logit, LearningParams};
use coinflip::mcmc::{sample, Settings};
use coinflip::numerics::{beta_quantile, inv_logit, ln_sigmoid, logit, reg_inc_beta};
use coinflip::sensitivity::{nm_logpdf, NormalMomentPrior};
use coinflip::simulator::{simulate, PopulationSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};

fn side(b: bool) -> Side {
    if b {
        Side::Heads
    } else {
        Side::Tails
    }
}

/// Flip records for a few persons, coins and sequences; `chained` makes
/// every start equal the previous landing of its sequence.
fn records(raw: &[(u8, u8, u8, bool, bool)], chained: bool) -> Vec<FlipRecord> {
    let mut last: std::collections::HashMap<String, Side> = Default::default();
    let mut next_index: std::collections::HashMap<u8, u64> = Default::default();
    raw.iter()
        .map(|&(p, c, q, s, l)| {
            let seq = format!("p{p}-c{c}-s{q}");
            let start = if chained { *last.get(&seq).unwrap_or(&side(s)) } else { side(s) };
            let landed = side(l);
            last.insert(seq.clone(), landed);
            let idx = next_index.entry(p).or_insert(0);
            *idx += 1;
            FlipRecord {
                person_id: format!("p{p}"),
                coin_id: format!("c{c}"),
                site: format!("site{}", p % 2),
                sequence_id: seq,
                flip_index: *idx,
                start,
                landed,
            }
        })
        .collect()
}

fn raw_flips(max: usize) -> impl Strategy<Value = Vec<(u8, u8, u8, bool, bool)>> {
    prop::collection::vec((0u8..4, 0u8..3, 0u8..2, any::<bool>(), any::<bool>()), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_conserves_counts(raw in raw_flips(300)) {
        let d = FlipDataset::from_records(records(&raw, false)).unwrap();
        let c = aggregate(&d);
        prop_assert_eq!(c.n_trials() as usize, d.len());
        prop_assert_eq!(c.n_same() as usize, d.flips().iter().filter(|f| f.is_same()).count());
        prop_assert_eq!(c.n_heads() as usize, d.flips().iter().filter(|f| f.is_heads()).count());
    }

    #[test]
    fn csv_round_trip(raw in raw_flips(200), chained in any::<bool>()) {
        let d = FlipDataset::from_records(records(&raw, chained)).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let (back, report) = ingest_csv(buf.as_slice(), &IngestOptions::default()).unwrap();
        prop_assert_eq!(&back, &d);
        if chained {
            prop_assert!(report.violations.is_empty());
        }
    }

    #[test]
    fn outlier_exclusion_is_idempotent(raw in raw_flips(300), threshold in 0.51f64..0.9) {
        let d = FlipDataset::from_records(records(&raw, false)).unwrap();
        let once = exclude_outliers(&d, threshold).unwrap();
        let twice = exclude_outliers(&once.dataset, threshold).unwrap();
        prop_assert_eq!(&twice.dataset, &once.dataset);
        prop_assert!(twice.excluded.is_empty());
    }

    #[test]
    fn reg_inc_beta_is_a_cdf(a in 0.2f64..50.0, b in 0.2f64..50.0, x in 0.0f64..1.0, dx in 0.0f64..0.2) {
        prop_assert_eq!(reg_inc_beta(0.0, a, b).unwrap(), 0.0);
        prop_assert_eq!(reg_inc_beta(1.0, a, b).unwrap(), 1.0);
        let y = (x + dx).min(1.0);
        prop_assert!(reg_inc_beta(y, a, b).unwrap() >= reg_inc_beta(x, a, b).unwrap());
    }

    #[test]
    fn beta_quantile_inverts_cdf(a in 0.5f64..200.0, b in 0.5f64..200.0, q in 0.001f64..0.999) {
        let x = beta_quantile(q, a, b).unwrap();
        prop_assert!((reg_inc_beta(x, a, b).unwrap() - q).abs() < 1e-9);
    }

    #[test]
    fn informed_bf_nondecreasing_above_half(n in 10u64..5000, frac in 0.5f64..1.0) {
        let prior = TruncatedBetaPrior::new(51.0, 49.0, 0.5, 1.0).unwrap();
        let k = ((n as f64 * frac) as u64).clamp(n / 2, n - 1);
        let a = bf_informed_binomial(k, n, &prior).unwrap().log_bf10;
        let b = bf_informed_binomial(k + 1, n, &prior).unwrap().log_bf10;
        prop_assert!(b >= a - 1e-12);
    }

    #[test]
    fn symmetric_bf_is_symmetric(n in 1u64..100_000, frac in 0.0f64..=1.0, a in 0.5f64..5000.0) {
        let h = (n as f64 * frac) as u64;
        let x = bf_symmetric_binomial(h, n, a, a).unwrap().log_bf10;
        let y = bf_symmetric_binomial(n - h, n, a, a).unwrap().log_bf10;
        prop_assert_eq!(x, y);
    }

    #[test]
    fn likelihood_invariant_under_start_inversion(raw in raw_flips(200), b in 0.3f64..0.7, a in 0.3f64..0.7, g in prop::collection::vec(-0.5f64..0.5, 7)) {
        let cells = aggregate(&FlipDataset::from_records(records(&raw, false)).unwrap());
        let mut p = HierParams::null(cells.coins.len(), cells.persons.len());
        p.alpha_mu = a;
        p.beta_mu = b;
        p.gamma_alpha.iter_mut().zip(&g).for_each(|(x, y)| *x = *y);
        p.gamma_beta.iter_mut().zip(g.iter().skip(3)).for_each(|(x, y)| *x = *y);
        let mut q = p.clone();
        q.beta_mu = 1.0 - b;
        q.gamma_beta.iter_mut().for_each(|x| *x = -*x);
        let flipped: Vec<AggregateCell> = cells
            .cells
            .iter()
            .map(|c| AggregateCell::new(c.coin, c.person, c.start.flip(), c.n_trials, c.n_heads))
            .collect();
        let inverted = Cells::new(cells.persons.clone(), cells.coins.clone(), cells.person_sites.clone(), flipped).unwrap();
        let x = log_likelihood(&p, &cells).unwrap();
        let y = log_likelihood(&q, &inverted).unwrap();
        prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
    }

    #[test]
    fn cell_likelihood_equals_flip_likelihood(raw in raw_flips(400), b in 0.3f64..0.7, a in 0.3f64..0.7, g in prop::collection::vec(-0.5f64..0.5, 7)) {
        let d = FlipDataset::from_records(records(&raw, false)).unwrap();
        let cells = aggregate(&d);
        let mut p = HierParams::null(cells.coins.len(), cells.persons.len());
        p.alpha_mu = a;
        p.beta_mu = b;
        p.gamma_alpha.iter_mut().zip(&g).for_each(|(x, y)| *x = *y);
        p.gamma_beta.iter_mut().zip(g.iter().skip(3)).for_each(|(x, y)| *x = *y);
        let flat: f64 = d
            .flips()
            .iter()
            .map(|f| {
                let ci = cells.coins.iter().position(|c| c == d.coin_name(f.coin)).unwrap();
                let pi = cells.persons.iter().position(|c| c == d.person_name(f.person)).unwrap();
                let mu = logit(a) + p.gamma_alpha[ci] + f.start.sign() * (logit(b) + p.gamma_beta[pi]);
                if f.is_heads() { ln_sigmoid(mu) } else { ln_sigmoid(-mu) }
            })
            .sum();
        prop_assert!((log_likelihood(&p, &cells).unwrap() - flat).abs() < 1e-10);
    }

    #[test]
    fn learning_reduces_to_constant_bias(raw in raw_flips(300), b in 0.3f64..0.7, a in 0.3f64..0.7, rho in -3.0f64..1.0, size in 1usize..60) {
        let d = FlipDataset::from_records(records(&raw, false)).unwrap();
        let batches = make_batches_from(&d, size, 0.0).unwrap();
        let lp = LearningParams::constant(batches.coins.len(), batches.persons.len(), a, b, 0.5, rho);
        let cells = batches.to_cells().unwrap();
        let mut hp = HierParams::null(cells.coins.len(), cells.persons.len());
        hp.alpha_mu = a;
        hp.beta_mu = b;
        let x = log_likelihood_learning(&lp, &batches).unwrap();
        let y = log_likelihood(&hp, &cells).unwrap();
        prop_assert!((x - y).abs() < 1e-10);
    }

    #[test]
    fn batching_is_exact_when_t_is_constant(raw in raw_flips(300), b in 0.3f64..0.7, l in 0.3f64..0.7, size in 2usize..60) {
        let d = FlipDataset::from_records(records(&raw, false)).unwrap();
        let one = make_batches_from(&d, 1, 0.0).unwrap();
        let many = make_batches_from(&d, size, 0.0).unwrap();
        let p = LearningParams::constant(one.coins.len(), one.persons.len(), 0.5, b, l, 0.0);
        let x = log_likelihood_learning(&p, &one).unwrap();
        let y = log_likelihood_learning(&p, &many).unwrap();
        prop_assert!((x - y).abs() < 1e-10);
    }

    #[test]
    fn same_side_probability_decreases_for_negative_rho(lt in -0.2f64..0.2, ll in 0.01f64..1.0, rho in -4.0f64..-0.01, t in 0.01f64..20.0, dt in 0.01f64..5.0) {
        let p1 = same_side_logit(lt, ll, rho, t);
        let p2 = same_side_logit(lt, ll, rho, t + dt);
        prop_assert!(p2 < p1);
    }

    #[test]
    fn normal_moment_symmetric_with_modes_at_phi(phi in 0.001f64..2.0, x in -5.0f64..5.0) {
        let prior = NormalMomentPrior::new(phi, false).unwrap();
        prop_assert!((nm_logpdf(x, &prior) - nm_logpdf(-x, &prior)).abs() < 1e-12);
        let h = phi * 1e-4;
        prop_assert!(nm_logpdf(phi - h, &prior) < nm_logpdf(phi, &prior));
        prop_assert!(nm_logpdf(phi + h, &prior) < nm_logpdf(phi, &prior));
        prop_assert!(nm_logpdf(phi * 0.9, &prior) < nm_logpdf(phi * 0.95, &prior));
        prop_assert!(nm_logpdf(phi * 1.1, &prior) < nm_logpdf(phi * 1.05, &prior));
    }

    #[test]
    fn inclusion_split_and_complement_multiply_to_one(log_mls in prop::collection::vec(-50.0f64..50.0, 4..16), mask in any::<u16>()) {
        let n = log_mls.len();
        let members: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        prop_assume!(members.iter().any(|m| *m) && members.iter().any(|m| !*m));
        let mp = posterior_model_probs(&log_mls, &vec![1.0; n]).unwrap();
        let complement: Vec<bool> = members.iter().map(|m| !m).collect();
        let a = inclusion_bf(&mp, &members).unwrap();
        let b = inclusion_bf(&mp, &complement).unwrap();
        prop_assert!((a * b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_probabilities_shift_invariant(log_mls in prop::collection::vec(-50.0f64..50.0, 2..16), shift in -1e3f64..1e3) {
        let n = log_mls.len();
        let a = posterior_model_probs(&log_mls, &vec![1.0; n]).unwrap();
        let shifted: Vec<f64> = log_mls.iter().map(|x| x + shift).collect();
        let b = posterior_model_probs(&shifted, &vec![1.0; n]).unwrap();
        for (x, y) in a.posterior.iter().zip(&b.posterior) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_intervals_are_nested_probabilities(k in 0u64..1000, extra in 0u64..1000) {
        let n = k + extra;
        prop_assume!(n > 0);
        let r = summary_row("u", k, n, 1, None);
        prop_assert!(0.0 <= r.ci_low && r.ci_low < r.ci_high && r.ci_high <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulated_campaigns_pass_strict_ingest(persons in 1usize..5, coins in 1usize..4, seqs in 1usize..4, theta in 0.3f64..0.7, seed in any::<u64>()) {
        let mut pop = PopulationSpec::constant(persons, coins, seqs, theta, 0.2);
        pop.flips_per_sequence = 37;
        pop.rho_mu = -1.0;
        pop.lambda_mu = 0.55;
        let cfg = pop.draw(seed).unwrap();
        let d = simulate(&cfg).unwrap();
        prop_assert!(d.protocol_violations().is_empty());
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let strict = IngestOptions { strict: true, ..Default::default() };
        let (back, _) = ingest_csv(buf.as_slice(), &strict).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(&simulate(&cfg).unwrap(), &d);
    }

    #[test]
    fn quadrature_oracle_matches_analytic_bf(n in 1u64..10_000, frac in 0.0f64..=1.0) {
        let k = (n as f64 * frac) as u64;
        let prior = TruncatedBetaPrior::same_side();
        let analytic = bf_informed_binomial(k, n, &prior).unwrap().log_bf10;
        let oracle = simpson_log_bf(k, n, prior.a, prior.b);
        prop_assert!((analytic - oracle).abs() < 1e-8, "{} vs {}", analytic, oracle);
    }

    #[test]
    fn exact_test_is_calibrated(n in 20u64..2000, p0 in 0.2f64..0.8, seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let dist = Binomial::new(n, p0).unwrap();
        let reps = 2000;
        let rejections = (0..reps).filter(|_| exact_binomial_p(dist.sample(&mut rng), n, p0).unwrap() <= 0.05).count();
        let rate = rejections as f64 / reps as f64;
        prop_assert!(rate <= 0.05 + 3.0 * (0.05f64 * 0.95 / reps as f64).sqrt(), "{}", rate);
    }
}

/// `ln BF₁₀` of the truncated Beta(a, b) on [½, 1] by composite Simpson
/// integration of marginal and prior mass over a window around their peaks.
fn simpson_log_bf(k: u64, n: u64, a: f64, b: f64) -> f64 {
    let (kf, nf) = (k as f64, n as f64);
    let ln_int = |a1: f64, b1: f64| {
        let mode = ((a1 - 1.0) / (a1 + b1 - 2.0)).clamp(0.5, 1.0);
        let sd = (a1 * b1 / ((a1 + b1).powi(2) * (a1 + b1 + 1.0))).sqrt();
        let (lo, hi) = ((mode - 14.0 * sd).max(0.5), (mode + 14.0 * sd).min(1.0 - 1e-15));
        let g = |x: f64| (a1 - 1.0) * x.ln() + (b1 - 1.0) * (1.0 - x).ln();
        let m = 40_000;
        let h = (hi - lo) / m as f64;
        let peak = (0..=m).map(|i| g(lo + i as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * (g(lo + i as f64 * h) - peak).exp()
            })
            .sum();
        peak + (s * h / 3.0).ln()
    };
    ln_int(a + kf, b + nf - kf) - ln_int(a, b) + nf * std::f64::consts::LN_2
}

#[test]
fn sampler_is_deterministic_for_a_seed() {
    let d = simulate(&PopulationSpec::constant(3, 2, 2, 0.52, 0.1).draw(4).unwrap()).unwrap();
    let m = coinflip::hier::HierModel::new(coinflip::hier::ModelSpec::FULL, coinflip::hier::PriorSet::estimation(), &aggregate(&d)).unwrap();
    let s = Settings { chains: 2, warmup: 100, iters: 100, seed: 9 };
    let a = sample(&m, &s).unwrap();
    let b = sample(&m, &s).unwrap();
    assert_eq!(a.unconstrained, b.unconstrained);
    assert_eq!(a.natural, b.natural);
    let c = sample(&m, &Settings { seed: 10, ..s }).unwrap();
    assert_ne!(a.unconstrained, c.unconstrained);
}

#[test]
fn delta_transform_at_reference_point() {
    assert_eq!(probability_sd(0.5, 0.04, HeterogeneityTransform::Delta), 0.01);
    assert!((inv_logit(0.0) - 0.5).abs() < 1e-15);
}

#[test]
fn intervals_shrink_with_n() {
    let w = |n: u64| {
        let r = summary_row("u", n / 2, n, 1, None);
        r.ci_high - r.ci_low
    };
    assert!(w(10) > w(100) && w(100) > w(1000));
}
