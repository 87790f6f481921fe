use std::time::Instant;

use dsde_core::coefficients::{builtin_family, ParamValue, Params};
use dsde_core::density::{compute_beta, solve_density, verify_divergence_free, verify_preinvariance};
use dsde_core::grid::Bounds;
use dsde_core::testfn::default_bumps;

fn fam(name: &str, pairs: &[(&str, f64)]) -> dsde_core::coefficients::CoefficientSet {
    let p: Params = pairs
        .iter()
        .map(|(k, v)| (k.to_string(), ParamValue::Number(*v)))
        .collect();
    builtin_family(name, &p).unwrap()
}

#[test]
fn ou_density_against_gaussian() {
    let c = fam("ornstein_uhlenbeck", &[]);
    let t = Instant::now();
    let dens = solve_density(&c, &Bounds::symmetric(2, 4.0), 129).unwrap();
    let elapsed = t.elapsed();
    let mut worst = 0.0f64;
    let mut x = vec![0.0; 2];
    for i in 0..dens.grid.len() {
        dens.grid.point(i, &mut x);
        if x.iter().all(|v| v.abs() <= 2.0) {
            let exact = (-(x[0] * x[0] + x[1] * x[1])).exp();
            worst = worst.max((dens.rho.values[i] / exact - 1.0).abs());
        }
    }
    assert!(worst <= 0.01, "max rel error {worst}");
    let fns = default_bumps(&Bounds::symmetric(2, 3.0));
    let rep = verify_preinvariance(&c, &dens, &fns, 1e-4).unwrap();
    assert!(rep.passed(), "{rep:?}");
    println!("solve {elapsed:?}, rel err {worst:e}, preinv {:e}", rep.metrics["max_scaled_residual"]);
}

#[test]
fn brownian_and_radial_exact_constants() {
    let b = Bounds::symmetric(2, 2.0);
    let c = fam("brownian", &[]);
    let dens = solve_density(&c, &b, 65).unwrap();
    assert!(dens.residual_norm <= 1e-10);
    assert!(dens.rho.values.iter().all(|v| (v - 1.0).abs() <= 1e-10));
    let rep = verify_preinvariance(&c, &dens, &default_bumps(&b), 1e-8).unwrap();
    assert!(rep.passed(), "{rep:?}");

    let c = fam("radial_degenerate", &[("alpha", 0.25)]);
    let dens = solve_density(&c, &b, 65).unwrap();
    assert!(dens.residual_norm <= 1e-8);
    let fns = vec![dsde_core::testfn::Bump::new(vec![1.0, 0.5], 0.8)];
    let rep = verify_preinvariance(&c, &dens, &fns, 1e-8).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn divergence_free_ou_and_hyperplane() {
    let c = fam("ornstein_uhlenbeck", &[]);
    let dens = solve_density(&c, &Bounds::symmetric(2, 4.0), 129).unwrap();
    let dec = compute_beta(&c, &dens);
    let rep = verify_divergence_free(&dens, &dec, &default_bumps(&Bounds::symmetric(2, 3.0)), 1e-6).unwrap();
    assert!(rep.passed(), "{rep:?}");

    let mut p = Params::new();
    p.insert("drift_right".into(), ParamValue::Vector(vec![0.0, 1.0]));
    let c = builtin_family("hyperplane_jump", &p).unwrap();
    let t = Instant::now();
    let dens = solve_density(&c, &Bounds::symmetric(2, 4.0), 257).unwrap();
    println!("n=257 solve {:?}", t.elapsed());
    let dec = compute_beta(&c, &dens);
    let rep = verify_divergence_free(&dens, &dec, &default_bumps(&Bounds::symmetric(2, 3.0)), 1e-3).unwrap();
    println!("{:?}", rep.metrics);
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn residual_decreases_under_refinement() {
    let mut p = Params::new();
    p.insert("drift_right".into(), ParamValue::Vector(vec![0.5, 1.0]));
    for c in [fam("ornstein_uhlenbeck", &[]), builtin_family("hyperplane_jump", &p).unwrap()] {
        let r: Vec<f64> = [33, 65, 129]
            .iter()
            .map(|&n| solve_density(&c, &Bounds::symmetric(2, 3.0), n).unwrap().residual_norm)
            .collect();
        println!("{}: {r:?}", c.name);
        assert!(r[1] < r[0] && r[2] < r[1]);
        // order at least one in h
        assert!(r[1] / r[2] > 1.8 && r[0] / r[1] > 1.8);
    }
}
