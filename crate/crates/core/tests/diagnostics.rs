use dsde_core::coefficients::{builtin_family, CoefficientSet, ParamValue, Params};
use dsde_core::density::solve_density;
use dsde_core::diagnostics::{
    feynman_kac_crosscheck, krylov_audit, krylov_report, marginal_two_sample, mixed_norm,
    uniqueness_probe, FeynmanKacOptions, KrylovOptions, SpaceTimeFn, TwoSampleOptions,
    UniquenessOptions, Variant,
};
use dsde_core::grid::Bounds;
use dsde_core::report::Verdict;
use dsde_core::simulator::{simulate_ensemble, SimConfig};
use dsde_core::testfn::GaussianBump;

fn fam(name: &str, pairs: &[(&str, f64)]) -> CoefficientSet {
    let p: Params = pairs
        .iter()
        .map(|(k, v)| (k.to_string(), ParamValue::Number(*v)))
        .collect();
    builtin_family(name, &p).unwrap()
}

#[test]
fn two_sample_separates_brownian_from_ou() {
    let cfg = SimConfig::new(0.01, 1.0, 4000, 1).endpoints_only();
    let b1 = simulate_ensemble(&fam("brownian", &[]), &[0.0, 0.0], &cfg).unwrap();
    let b2 = simulate_ensemble(&fam("brownian", &[]), &[0.0, 0.0], &SimConfig { master_seed: 2, ..cfg.clone() }).unwrap();
    let ou = simulate_ensemble(&fam("ornstein_uhlenbeck", &[]), &[0.0, 0.0], &SimConfig { master_seed: 3, ..cfg }).unwrap();
    let opts = TwoSampleOptions::default();
    assert!(!marginal_two_sample(&b1, &b2, 1.0, &opts).unwrap().reject);
    // variance 1 against (1 − e⁻²)/2 ≈ 0.43
    assert!(marginal_two_sample(&b1, &ou, 1.0, &opts).unwrap().reject);
}

#[test]
fn uniqueness_probe_flags_a_changed_law() {
    let cfg = SimConfig::new(0.01, 1.0, 3000, 9);
    let same = vec![
        Variant { label: "a".into(), coefficients: fam("brownian", &[]), dt: None },
        Variant { label: "b".into(), coefficients: fam("brownian", &[]), dt: Some(0.005) },
    ];
    let (rep, _) = uniqueness_probe(&same, &[0.0, 0.0], &[0.5, 1.0], &cfg, &UniquenessOptions::default()).unwrap();
    assert_eq!(rep.verdict, Verdict::Pass, "{rep:?}");
    let diff = vec![
        Variant { label: "a".into(), coefficients: fam("brownian", &[]), dt: None },
        Variant { label: "ou".into(), coefficients: fam("ornstein_uhlenbeck", &[("theta", 2.0)]), dt: None },
    ];
    let (rep, _) = uniqueness_probe(&diff, &[0.0, 0.0], &[1.0], &cfg, &UniquenessOptions::default()).unwrap();
    assert_eq!(rep.verdict, Verdict::Fail);
}

#[test]
fn mixed_norm_of_indicator_matches_volume() {
    // ‖1_{B_r}‖ over a ball of radius R in space-time is (π r² T)^{1/p}
    // for any exponent; compare the p-free ratio at two radii instead
    let opts = KrylovOptions::default();
    let one = SpaceTimeFn::new("one", |_, _| 1.0);
    let half = SpaceTimeFn::new("half", |x, _| if x[0] * x[0] + x[1] * x[1] < 0.25 { 1.0 } else { 0.0 });
    let n1 = mixed_norm(&one, 2, 1.0, 1.0, &opts).unwrap();
    let nh = mixed_norm(&half, 2, 1.0, 1.0, &opts).unwrap();
    assert!(n1 > 0.0 && nh > 0.0 && nh < n1);
    // homogeneity
    let two = SpaceTimeFn::new("two", |_, _| 2.0);
    let n2 = mixed_norm(&two, 2, 1.0, 1.0, &opts).unwrap();
    assert!((n2 - 2.0 * n1).abs() <= 1e-14 * n2);
}

#[test]
fn krylov_ratios_finite_for_brownian() {
    let dict = vec![
        SpaceTimeFn::new("one", |_, _| 1.0),
        SpaceTimeFn::new("x1_squared", |x, _| x[0] * x[0]),
    ];
    let run = krylov_audit(
        &fam("brownian", &[]),
        &[0.0, 0.0],
        2.0,
        1.0,
        &dict,
        &SimConfig::new(0.01, 1.0, 4000, 4),
        &KrylovOptions::default(),
    )
    .unwrap();
    let rep = krylov_report(&run, 1e-12);
    assert!(rep.passed(), "{rep:?}");
    // E ∫₀^{τ∧T} 1 dt is the mean stopped time and so at most T
    assert!(run.audits[0].estimate <= 1.0 + 1e-12);
}

#[test]
fn feynman_kac_on_ou_against_closed_form() {
    let c = fam("ornstein_uhlenbeck", &[]);
    let dens = solve_density(&c, &Bounds::symmetric(2, 4.0), 97).unwrap();
    let g = GaussianBump { center: vec![0.5, 0.0], width: 0.5, amplitude: 1.0 };
    let f = |x: &[f64]| g.value(x);
    let (x0, t) = ([0.8, 0.3], 0.5);
    let out = feynman_kac_crosscheck(
        &c,
        &dens,
        &f,
        &x0,
        t,
        &SimConfig::new(2.5e-3, t, 50_000, 12),
        &FeynmanKacOptions::default(),
    )
    .unwrap();
    assert!(out.report.passed(), "{:?}", out.report);
    // X_t ~ N(x₀e^{−t}, (1−e^{−2t})/2 I)
    let s2 = (1.0 - (-2.0 * t).exp()) / 2.0;
    let w2 = 0.25;
    let v = w2 + s2;
    let r2: f64 = x0.iter().zip(&g.center).map(|(x, c)| (x * (-t).exp() - c).powi(2)).sum();
    let exact = (w2 / v) * (-0.5 * r2 / v).exp();
    assert!((out.pde - exact).abs() < 5e-3, "pde {} exact {exact}", out.pde);
    assert!((out.mc - exact).abs() < 4.0 * out.mc_stderr + 5e-3, "mc {} exact {exact}", out.mc);
}
