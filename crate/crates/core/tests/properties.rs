use helpharm::boundary::{find_crossing, geometric_grid};
use helpharm::fits::{fit_loglog_points, fit_variance_exponent_model};
use helpharm::mse::{
    exact_curve, exact_delta_integerized, excess_variance, integerize_allocation, mc_sweep,
    zne_mse_with_shots,
};
use helpharm::resample::resample_counts;
use helpharm::rules::richardson_coefficients;
use helpharm::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Binomial as BinomialLaw};

/// Strictly increasing scales starting at 1 with gaps of at least 0.25.
fn scales_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.25f64..1.5, 1..=4).prop_map(|gaps| {
        let mut s = vec![1.0];
        for g in gaps {
            let last = *s.last().unwrap();
            s.push(last + g);
        }
        s
    })
}

fn allocation_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|w| {
        let t: f64 = w.iter().sum();
        w.into_iter().map(|x| x / t).collect()
    })
}

fn binary_models() -> Vec<Model> {
    vec![
        AnyModel::LinearBiasBinary(LinearBiasBinary::new(0.5, 1.0).unwrap()),
        AnyModel::LinearBiasBinary(LinearBiasBinary::new(-0.2, 0.7).unwrap()),
        AnyModel::DeterministicLimitBinary(DeterministicLimitBinary::new(1.0).unwrap()),
        AnyModel::ProductContractionString(ProductContractionString::new(0.1, 5).unwrap()),
        AnyModel::PowerLeakageBinary(PowerLeakageBinary::new(1, 0.8, 1.5).unwrap()),
        AnyModel::PowerLeakageBinary(PowerLeakageBinary::new(-1, 1.0, 2.0).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_rules_satisfy_identities(scales in scales_strategy()) {
        let rule = build_rule(&scales, Allocation::Uniform).unwrap();
        for (m, r) in rule.identity_residuals().iter().enumerate() {
            let scale: f64 = rule
                .coeffs()
                .iter()
                .zip(rule.scales())
                .map(|(c, l)| (c * l.powi(m as i32)).abs())
                .sum();
            prop_assert!(r.abs() <= 1e-12f64.max(1e-13 * scale), "m={m} residual {r}");
        }
        prop_assert!(rule.abs_coeff_sum() > 1.0);
        let k = variance_penalty(&rule, 1.0, 2.0);
        prop_assert!(k.k_fixed > 0.0 && k.k_opt > 0.0);
    }

    #[test]
    fn optimal_penalty_never_exceeds_fixed(
        (scales, alloc) in scales_strategy()
            .prop_flat_map(|s| { let n = s.len(); (Just(s), allocation_strategy(n)) }),
        q in 0.0f64..3.0,
    ) {
        let rule = build_rule(&scales, Allocation::Explicit(alloc)).unwrap();
        let k = variance_penalty(&rule, q, 1.0);
        prop_assert!(k.k_opt <= k.k_fixed * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn optimal_allocation_minimizes_zne_variance(
        (scales, alloc) in scales_strategy()
            .prop_flat_map(|s| { let n = s.len(); (Just(s), allocation_strategy(n)) }),
        kappa in 0.2f64..2.0,
        eps_frac in 0.01f64..0.9,
    ) {
        let model = DeterministicLimitBinary::new(kappa).unwrap();
        let l_max = *scales.last().unwrap();
        let eps = eps_frac / (kappa * l_max) * 0.99;
        let fixed = build_rule(&scales, Allocation::Explicit(alloc)).unwrap();
        let best = fixed.with_allocation(optimal_allocation(&fixed, &model, eps).unwrap()).unwrap();
        let v_fixed = exact_mse(&model, Some(&fixed), eps, 1000.0).unwrap().variance;
        let v_best = exact_mse(&model, Some(&best), eps, 1000.0).unwrap().variance;
        prop_assert!(v_best <= v_fixed * (1.0 + 1e-12));
    }

    #[test]
    fn fixed_penalty_nondecreasing_in_q(
        (scales, alloc) in scales_strategy()
            .prop_flat_map(|s| { let n = s.len(); (Just(s), allocation_strategy(n)) }),
        q in 0.0f64..3.0,
        dq in 0.01f64..1.0,
    ) {
        let rule = build_rule(&scales, Allocation::Explicit(alloc)).unwrap();
        let lo = variance_penalty(&rule, q, 1.5).k_fixed;
        let hi = variance_penalty(&rule, q + dq, 1.5).k_fixed;
        prop_assert!(hi > lo);
    }

    #[test]
    fn crossing_bracket_invariant(
        d in 0.1f64..10.0,
        k in 0.1f64..100.0,
        p in 1u32..=2,
        q in 0.0f64..1.5,
        budget in 1e3f64..1e7,
    ) {
        let m = MonomialBalanceModel::new(p, q, d, k).unwrap();
        let model = AnyModel::MonomialBalance(m);
        let rule = Spec::uniform(&[1.0, 3.0]).unwrap();
        let c = (k / d).powf(1.0 / (2.0 * p as f64 - q));
        let guess = c * budget.powf(-1.0 / (2.0 * p as f64 - q));
        let grid = geometric_grid(0.1 * guess, 10.0 * guess, 20).unwrap();
        let curve = exact_curve(model.as_dyn(), Some(&rule), budget, &grid).unwrap();
        let x = find_crossing(&curve.points).unwrap();
        prop_assert!(x.is_crossed());
        let (lo, hi, e) = (x.bracket_lo.unwrap(), x.bracket_hi.unwrap(), x.eps_star.unwrap());
        prop_assert!(lo < e && e <= hi, "{lo} {e} {hi} {x:?}");
        prop_assert!(m.delta(lo, budget).unwrap() < 0.0);
        prop_assert!(m.delta(hi, budget).unwrap() >= 0.0);
        prop_assert!((e / guess - 1.0).abs() < 0.13);
    }
}

#[test]
fn binary_identity_on_grid() {
    for model in binary_models() {
        let m = model.as_dyn();
        let top = m.eps_max().min(1.0);
        for i in 0..=200 {
            let eps = top * i as f64 / 200.0;
            let mu = m.mean(eps).unwrap();
            let v = m.variance(eps).unwrap();
            assert!((v - (1.0 - mu * mu)).abs() <= 4.0 * f64::EPSILON, "{} at {eps}", m.name());
        }
    }
}

#[test]
fn sampler_matches_binomial_law() {
    let model = DeterministicLimitBinary::new(1.0).unwrap();
    let (eps, shots) = (0.3, 20u64);
    let p = (1.0 + model.mean(eps).unwrap()) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut observed = vec![0u64; shots as usize + 1];
    let draws = 1000;
    for _ in 0..draws {
        observed[model.sample_counts(eps, shots, &mut rng).unwrap() as usize] += 1;
    }
    let law = BinomialLaw::new(p, shots).unwrap();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (x, &count) in observed.iter().enumerate() {
        o += count as f64;
        e += law.pmf(x as u64) * draws as f64;
        if e >= 5.0 {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    let last = bins.last_mut().unwrap();
    last.0 += o;
    last.1 += e;
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = (bins.len() - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
    assert!(p_value > 0.001, "chi2 {stat} on {dof} dof, p={p_value}");
}

#[test]
fn sampler_mean_within_five_standard_errors() {
    let model = DeterministicLimitBinary::new(1.0).unwrap();
    let (eps, shots) = (0.05, 1_000_000u64);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = model.sample_counts(eps, shots, &mut rng).unwrap();
    let mean = 2.0 * k as f64 / shots as f64 - 1.0;
    let tol = 5.0 * (model.variance(eps).unwrap() / shots as f64).sqrt();
    assert!((mean - 0.95).abs() <= tol);
    assert!((tol - 0.0016).abs() < 1e-4);
}

#[test]
fn degenerate_sampler_and_no_sampler() {
    let model = DeterministicLimitBinary::new(1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(model.sample_counts(0.0, 777, &mut rng).unwrap(), 777);
    let mono = MonomialBalanceModel::new(1, 0.0, 1.0, 1.0).unwrap();
    assert!(mono.sample_counts(0.1, 10, &mut rng).is_err());
}

#[test]
fn polynomial_mean_gives_zero_zne_bias() {
    let cases: Vec<(Model, Vec<f64>)> = vec![
        (AnyModel::DeterministicLimitBinary(DeterministicLimitBinary::new(1.0).unwrap()), vec![1.0, 3.0]),
        (AnyModel::LinearBiasBinary(LinearBiasBinary::new(0.2, 0.5).unwrap()), vec![1.0, 2.0]),
        (AnyModel::ProductContractionString(ProductContractionString::new(0.05, 2).unwrap()), vec![1.0, 2.0, 3.0]),
        (AnyModel::ProductContractionString(ProductContractionString::new(0.02, 3).unwrap()), vec![1.0, 1.5, 2.5, 4.0]),
    ];
    for (model, scales) in cases {
        let rule = build_rule(&scales, Allocation::Uniform).unwrap();
        for eps in [0.001, 0.01, 0.05] {
            let b = exact_mse(model.as_dyn(), Some(&rule), eps, 100.0).unwrap().bias;
            assert!(b.abs() <= 1e-12, "{} {scales:?} eps={eps}: {b}", model.as_dyn().name());
        }
    }
}

#[test]
fn excess_variance_approaches_penalty_linearly() {
    let rule = build_rule(&[1.0, 3.0], Allocation::Uniform).unwrap();
    let models: Vec<Model> = vec![
        AnyModel::DeterministicLimitBinary(DeterministicLimitBinary::new(1.0).unwrap()),
        AnyModel::ProductContractionString(ProductContractionString::new(0.1, 4).unwrap()),
    ];
    for model in models {
        let m = model.as_dyn();
        let nu = m.declared().nu.unwrap();
        let k = variance_penalty(&rule, 1.0, nu).k_fixed;
        let gap = |eps: f64| (excess_variance(m, &rule, eps).unwrap() / eps - k).abs();
        let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4].iter().map(|&e| gap(e) / e).collect();
        for w in ratios.windows(2) {
            assert!((w[1] / w[0] - 1.0).abs() < 0.05, "{}: {ratios:?}", m.name());
        }
    }
}

#[test]
fn rounding_effect_bounded_by_inverse_square_budget() {
    let model = DeterministicLimitBinary::new(1.0).unwrap();
    let spec = Spec::optimal(&[1.0, 3.0]).unwrap();
    let eps = 0.01;
    let rule = spec.at(&model, eps).unwrap();
    let bound_coef: f64 = rule
        .coeffs()
        .iter()
        .zip(rule.scales())
        .zip(rule.alloc())
        .map(|((c, l), pi)| 2.0 * c * c * model.variance(l * eps).unwrap() / (pi * pi))
        .sum();
    let mut worst = 0.0f64;
    for budget in [101u64, 1_003, 10_007, 100_003, 1_000_003] {
        let real = exact_delta(&model, Some(&spec), eps, budget as f64).unwrap().delta;
        let int = exact_delta_integerized(&model, &spec, eps, budget).unwrap().delta;
        let b2 = (budget * budget) as f64;
        assert!((real - int).abs() * b2 <= bound_coef, "B={budget}");
        worst = worst.max((real - int).abs() * b2);
    }
    assert!(worst > 0.0);
}

#[test]
fn integerized_shots_sum_to_budget() {
    for budget in [3u64, 10, 999, 123_457] {
        for alloc in [vec![0.5, 0.5], vec![0.7, 0.2, 0.1], vec![0.999, 0.001]] {
            let shots = integerize_allocation(&alloc, budget).unwrap();
            assert_eq!(shots.iter().sum::<u64>(), budget);
            assert!(shots.iter().all(|&n| n >= 1));
        }
    }
    assert!(integerize_allocation(&[0.5, 0.3, 0.2], 2).is_err());
}

#[test]
fn variance_exponent_recovered_from_models() {
    let window = (1e-4, 1e-2);
    let pcs = ProductContractionString::new(0.1, 5).unwrap();
    let dlb = DeterministicLimitBinary::new(1.0).unwrap();
    let lin = LinearBiasBinary::new(0.5, 1.0).unwrap();
    let q = |m: &dyn NoiseObservableModel<f64>| fit_variance_exponent_model(m, window, 20).unwrap().q_hat;
    assert!((q(&pcs) - 1.0).abs() <= 0.02);
    assert!((q(&dlb) - 1.0).abs() <= 0.02);
    assert!(q(&lin).abs() <= 0.02);
}

#[test]
fn loglog_fit_exact_on_pure_power_law() {
    for (p, q) in [(1u32, 0.0), (1, 1.0), (2, 0.0), (2, 1.0), (2, 3.0)] {
        let (d, k) = (1.7f64, 23.0f64);
        let span = 2.0 * p as f64 - q;
        let c = (k / d).powf(1.0 / span);
        let points: Vec<(f64, f64)> = (3..=8)
            .map(|i| {
                let b = 10f64.powi(i);
                (b, c * b.powf(-1.0 / span))
            })
            .collect();
        let fit = fit_loglog_points(&points).unwrap();
        assert!((fit.slope + 1.0 / span).abs() <= 1e-6, "p={p} q={q}");
        assert!((fit.c_fit() / c - 1.0).abs() <= 1e-6);
        let report = theoretical_boundary_spec(
            &MonomialBalanceModel::new(p, q, d, k).unwrap(),
            &Spec::uniform(&[1.0, 3.0]).unwrap(),
        )
        .unwrap();
        assert!((report.c_pq.unwrap() / c - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn monte_carlo_calibrated_against_exact() {
    let model = DeterministicLimitBinary::new(1.0).unwrap();
    let spec = Spec::uniform(&[1.0, 3.0]).unwrap();
    let budgets = [1_000u64, 10_000];
    let grids: Vec<Vec<f64>> = budgets
        .iter()
        .map(|&b| geometric_grid(2.0 / b as f64, 50.0 / b as f64, 15).unwrap())
        .collect();
    let (curves, _) = mc_sweep(&model, &spec, &budgets, &grids, 100, 2024).unwrap();
    let (mut ok, mut total) = (0, 0);
    for curve in &curves {
        for pt in &curve.points {
            let exact = exact_delta_integerized(&model, &spec, pt.eps, curve.budget as u64)
                .unwrap()
                .delta;
            total += 1;
            if (pt.delta - exact).abs() <= 4.0 * pt.std_err.unwrap() {
                ok += 1;
            }
        }
    }
    assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
}

#[test]
fn monte_carlo_reproducible_across_thread_counts() {
    let model = LinearBiasBinary::new(0.5, 1.0).unwrap();
    let spec = Spec::uniform(&[1.0, 3.0]).unwrap();
    let grids = vec![vec![0.01, 0.02, 0.05]];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_sweep(&model, &spec, &[500], &grids, 20, 99).unwrap().1)
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn rule_none_delta_is_zero() {
    let model = LinearBiasBinary::new(0.5, 1.0).unwrap();
    let curve = exact_curve(&model, None, 1e4, &[0.001, 0.01, 0.1]).unwrap();
    assert!(curve.points.iter().all(|p| p.delta == 0.0));
}

#[test]
fn bootstrap_keeps_cell_labels() {
    let model = LinearBiasBinary::new(0.0, 0.5).unwrap();
    let spec = Spec::new(vec![1.0, 2.0, 4.0], rules::AllocationMode::Explicit(vec![0.6, 0.3, 0.1])).unwrap();
    let (_, mut table) = mc_sweep(&model, &spec, &[100, 1000], &[vec![0.01, 0.05], vec![0.02]], 3, 5).unwrap();
    for (i, cell) in table.cells.iter_mut().enumerate() {
        cell.plus_count = if i % 2 == 0 { 0 } else { cell.shots };
    }
    for rep in 0..20 {
        let plus = resample_counts(&table, 8, rep);
        for (cell, &k) in table.cells.iter().zip(&plus) {
            assert_eq!(k, cell.plus_count);
        }
    }
    for (i, cell) in table.cells.iter_mut().enumerate() {
        cell.plus_count = cell.shots / (2 + i as u64 % 3);
    }
    let plus = resample_counts(&table, 8, 0);
    assert!(table.cells.iter().zip(&plus).all(|(c, &k)| k <= c.shots));
}

#[test]
fn f32_core_agrees_with_f64() {
    let (c32, _) = richardson_coefficients(&[1.0f32, 2.0, 4.0]).unwrap();
    let (c64, _) = richardson_coefficients(&[1.0f64, 2.0, 4.0]).unwrap();
    for (a, b) in c32.iter().zip(&c64) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
    let m = MonomialBalanceModel::<f32>::new(1, 1.0, 1.0, 10.0).unwrap();
    let r = classify_regime::<f32>(m.p, m.q, m.d_p, m.k_q, None).unwrap();
    assert!((r.c_pq.unwrap() - 10.0).abs() < 1e-4);
}

#[test]
fn zne_variance_with_explicit_shots_matches_real_allocation() {
    let model = DeterministicLimitBinary::new(1.0).unwrap();
    let rule = build_rule(&[1.0, 3.0], Allocation::Explicit(vec![0.25, 0.75])).unwrap();
    let a = exact_mse(&model, Some(&rule), 0.02, 400.0).unwrap();
    let b = zne_mse_with_shots(&model, &rule, 0.02, &[100.0, 300.0]).unwrap();
    assert_eq!(a.variance, b.variance);
}
