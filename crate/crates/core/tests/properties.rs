use std::sync::OnceLock;

use proptest::prelude::*;

use dsde_core::coefficients::{
    builtin_family, check_factorization, eval_sigma_hat, CoefficientSet, ParamValue, Params,
    WeightCell,
};
use dsde_core::conditions::{a4prime_check, exponent_window, growth_margin, min_m_on_grid};
use dsde_core::density::{compute_beta, solve_density, DensityField};
use dsde_core::diagnostics::{two_sample, TwoSampleOptions};
use dsde_core::grid::Bounds;
use dsde_core::report::{Clause, DiagnosticReport, Verdict};
use dsde_core::semigroup::Propagator;
use dsde_core::simulator::{simulate_ensemble, SimConfig};

fn family(name: &str, pairs: Vec<(&str, ParamValue)>) -> CoefficientSet {
    let p: Params = pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    builtin_family(name, &p).unwrap()
}

fn vec2() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 2)
}

/// One coefficient set from every built-in family, with drawn parameters.
fn any_family() -> impl Strategy<Value = CoefficientSet> {
    use ParamValue::{Number as N, Vector as V};
    prop_oneof![
        vec2().prop_map(|c| family("brownian", vec![("drift", V(c))])),
        (0.2..3.0f64, vec2()).prop_map(|(t, c)| family("ornstein_uhlenbeck", vec![("theta", N(t)), ("drift", V(c))])),
        (0.05..0.3f64, 0.0..2.0f64, 0.5..2.0f64, 0.0..2.0f64).prop_map(|(a, g, phi, t)| family(
            "radial_degenerate",
            vec![("alpha", N(a)), ("gamma", N(g)), ("phi", N(phi)), ("theta", N(t))]
        )),
        (0.2..3.0f64, vec2()).prop_map(|(v, lo)| {
            let cell = WeightCell { lower: lo.clone(), upper: lo.iter().map(|x| x + 1.0).collect(), value: v };
            family("piecewise_weight", vec![("cells", ParamValue::Cells(vec![cell]))])
        }),
        (0.3..3.0f64, 0.3..3.0f64, vec2()).prop_map(|(l, r, j)| family(
            "hyperplane_jump",
            vec![("left", N(l)), ("right", N(r)), ("drift_right", V(j))]
        )),
        (0.1..2.0f64).prop_map(|k| family("cubic_drift", vec![("strength", N(k))])),
    ]
}

/// Families with a density representable on a modest box.
fn regular_family() -> impl Strategy<Value = CoefficientSet> {
    use ParamValue::{Number as N, Vector as V};
    prop_oneof![
        vec2().prop_map(|c| family("brownian", vec![("drift", V(c))])),
        (0.2..2.0f64, vec2()).prop_map(|(t, c)| family("ornstein_uhlenbeck", vec![("theta", N(t)), ("drift", V(c))])),
        (0.3..3.0f64, 0.3..3.0f64, vec2()).prop_map(|(l, r, j)| family(
            "hyperplane_jump",
            vec![("left", N(l)), ("right", N(r)), ("drift_right", V(j))]
        )),
        (0.1..0.3f64, 0.0..1.0f64).prop_map(|(a, t)| family("radial_degenerate", vec![("alpha", N(a)), ("theta", N(t))])),
    ]
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn growth_margin_is_affine_in_m(c in any_family(), x in vec2(), m1 in 0.0..50.0f64, m2 in 0.0..50.0f64, s in 0.0..1.0f64) {
        prop_assume!(c.inv_weight.eval(&x) != 0.0);
        let a = growth_margin(&c, &x, m1).unwrap();
        let b = growth_margin(&c, &x, m2).unwrap();
        let mid = growth_margin(&c, &x, s * m1 + (1.0 - s) * m2).unwrap();
        prop_assert!(close(mid.margin, s * a.margin + (1.0 - s) * b.margin, 1e-12));
        prop_assert_eq!(a.lhs, b.lhs);
        // a larger M never shrinks the margin
        prop_assert!((a.margin <= b.margin) == (m1 <= m2) || a.margin == b.margin);
    }

    #[test]
    fn min_m_grows_under_nested_refinement(c in any_family(), n in 3usize..12, half in 0.5..4.0f64) {
        let b = Bounds::symmetric(2, half);
        let coarse = min_m_on_grid(&c, &b, n).unwrap();
        let fine = min_m_on_grid(&c, &b, 2 * n - 1).unwrap();
        prop_assert!(fine >= coarse, "{} < {}", fine, coarse);
        // and the returned M makes every sampled margin non-negative
        let g = dsde_core::grid::Grid::new(b, n).unwrap();
        for i in 0..g.len() {
            let x = g.point_vec(i);
            if c.inv_weight.eval(&x) != 0.0 {
                prop_assert!(growth_margin(&c, &x, coarse).unwrap().margin >= -1e-9 * (1.0 + coarse));
            }
        }
    }

    #[test]
    fn window_nonempty_iff_alpha_small(d in 1usize..8, alpha in 0.0001..1.0f64) {
        let w = exponent_window(d, alpha);
        let threshold = d as f64 / (2 * d + 2) as f64;
        prop_assume!((alpha - threshold).abs() > 1e-12);
        prop_assert_eq!(!w.empty, alpha < threshold);
        prop_assert!(w.q_low == (2 * d + 2) as f64);
        if !w.empty {
            prop_assert!(w.contains_q(0.5 * (w.q_low + w.q_high)));
        }
    }

    #[test]
    fn radial_default_exponents_satisfy_a4prime(d in 2usize..6, frac in 0.01..0.99f64) {
        let alpha = frac * d as f64 / (2 * d + 2) as f64;
        let p: Params = [("alpha".to_string(), ParamValue::Number(alpha)), ("d".to_string(), ParamValue::Number(d as f64))].into_iter().collect();
        let c = builtin_family("radial_degenerate", &p).unwrap();
        let rep = a4prime_check(&c);
        prop_assert!(rep.passed(), "{:?}", rep);
        prop_assert!(exponent_window(d, alpha).contains_q(c.exponents.q));
    }

    #[test]
    fn sigma_hat_vanishes_exactly_on_null_set(x in vec2(), zero in any::<bool>(), alpha in 0.05..0.3f64, phi in 0.5..2.0f64) {
        let c = family("radial_degenerate", vec![("alpha", ParamValue::Number(alpha)), ("phi", ParamValue::Number(phi))]);
        let x = if zero { vec![0.0, 0.0] } else { x };
        let s = eval_sigma_hat(&c, &x);
        let null = c.inv_weight.eval(&x) == 0.0;
        prop_assert_eq!(null, x.iter().all(|v| *v == 0.0));
        prop_assert_eq!(s.iter().all(|v| *v == 0.0), null);
    }

    #[test]
    fn factorization_holds_for_every_family(c in any_family(), probes in prop::collection::vec(vec2(), 1..16)) {
        let rep = check_factorization(&c, &probes, 1e-12);
        prop_assert!(rep.passed(), "{:?}", rep);
    }

    #[test]
    fn ks_and_verdict_symmetric_under_swap(a in prop::collection::vec(-3.0..3.0f64, 10..60), b in prop::collection::vec(-3.0..3.0f64, 10..60), seed in any::<u64>()) {
        let opts = TwoSampleOptions { seed, permutations: 99, ..Default::default() };
        let ab = two_sample(&a, &b, 1, &opts).unwrap();
        let ba = two_sample(&b, &a, 1, &opts).unwrap();
        prop_assert_eq!(ab.statistic, ba.statistic);
        prop_assert_eq!(ab.reject, ba.reject);
        for (x, y) in ab.tests.iter().zip(&ba.tests) {
            prop_assert_eq!(x.statistic, y.statistic);
            prop_assert_eq!(x.p_value, y.p_value);
        }
    }

    #[test]
    fn report_numbers_round_trip(vals in prop::collection::vec(prop_oneof![any::<f64>(), Just(f64::INFINITY), Just(f64::NEG_INFINITY), Just(f64::NAN)], 1..8)) {
        let mut rep = DiagnosticReport::new("roundtrip");
        for (i, v) in vals.iter().enumerate() {
            rep.metric(format!("m{i}"), *v);
            rep.clause(Clause::at_most(format!("c{i}"), *v, 1.0));
        }
        let rep = rep.finish();
        let text = serde_json::to_string(&rep).unwrap();
        let back: DiagnosticReport = serde_json::from_str(&text).unwrap();
        for (i, v) in vals.iter().enumerate() {
            let w = back.metrics[&format!("m{i}")];
            prop_assert!(w.to_bits() == v.to_bits() || (v.is_nan() && w.is_nan()));
        }
        prop_assert_eq!(back.verdict, rep.verdict);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn drift_split_sums_to_drift(c in regular_family()) {
        let dens = solve_density(&c, &Bounds::symmetric(2, 2.0), 17).unwrap();
        let dec = compute_beta(&c, &dens);
        let mut g = vec![0.0; 2];
        for i in 0..dens.grid.len() {
            c.drift(&dens.grid.point_vec(i), &mut g);
            let (b, beta) = (dec.b.at(i), dec.beta.at(i));
            for k in 0..2 {
                prop_assert!(close(b[k] + beta[k], g[k], 1e-14));
            }
        }
    }

    #[test]
    fn simulation_is_reproducible_across_thread_counts(seed in any::<u64>(), x0 in vec2()) {
        let c = family("radial_degenerate", vec![("alpha", ParamValue::Number(0.25)), ("gamma", ParamValue::Number(1.0))]);
        let mut cfg = SimConfig::new(0.01, 0.5, 64, seed);
        cfg.r_exit = Some(3.0);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate_ensemble(&c, &x0, &cfg).unwrap());
        let b = many.install(|| simulate_ensemble(&c, &x0, &cfg).unwrap());
        prop_assert_eq!(&a.states, &b.states);
        prop_assert_eq!(&a.exit_step, &b.exit_step);
        prop_assert_eq!(&a.occupation_exact, &b.occupation_exact);
    }
}

/// OU on a small grid, shared by the semigroup properties.
fn ou_setup() -> &'static (CoefficientSet, DensityField, Propagator) {
    static S: OnceLock<(CoefficientSet, DensityField, Propagator)> = OnceLock::new();
    S.get_or_init(|| {
        let c = family("ornstein_uhlenbeck", vec![]);
        let dens = solve_density(&c, &Bounds::symmetric(2, 3.0), 21).unwrap();
        let p = Propagator::new(&c, &dens, 0.02).unwrap();
        (c, dens, p)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn evolution_is_linear_and_order_preserving(
        f in prop::collection::vec(-1.0..1.0f64, 441),
        bump in prop::collection::vec(0.0..1.0f64, 441),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
    ) {
        let (_, dens, p) = ou_setup();
        prop_assert_eq!(dens.grid.len(), 441);
        let g: Vec<f64> = f.iter().zip(&bump).map(|(x, y)| x + y).collect();
        let pf = p.evolve(&f, 0.2, 10).unwrap();
        let pg = p.evolve(&g, 0.2, 10).unwrap();
        let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let pm = p.evolve(&mix, 0.2, 10).unwrap();
        for i in 0..441 {
            let (u, v) = (pf.final_slice()[i], pg.final_slice()[i]);
            prop_assert!(u <= v + 1e-14, "comparison broken at node {}", i);
            prop_assert!((pm.final_slice()[i] - (a * u + b * v)).abs() <= 1e-12);
        }
    }
}

#[test]
fn verdict_downgrades_survive_finish() {
    let mut rep = DiagnosticReport::new("x");
    rep.verdict = Verdict::Inconclusive;
    rep.clause(Clause::at_most("c", 0.0, 1.0));
    assert_eq!(rep.finish().verdict, Verdict::Inconclusive);
}
