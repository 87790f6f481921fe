use serde::{Deserialize, Serialize};

use super::mean_stderr;
use crate::coefficients::CoefficientSet;
use crate::density::{solve_density_with, DensityField};
use crate::error::{Error, Result};
use crate::report::{Clause, DiagnosticReport, Verdict};
use crate::semigroup::Propagator;
use crate::simulator::{simulate_ensemble, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeynmanKacOptions {
    /// Time step of the fine PDE run; the coarse run uses twice this on the
    /// grid with `(n+1)/2` points per axis.
    pub pde_dt: f64,
    /// Largest tolerated `1 − P_T 1(x0)` before the verdict is inconclusive.
    pub leakage_tol: f64,
    /// Budget multiplier on `stderr + |fine − coarse|`.
    pub budget_factor: f64,
}

impl Default for FeynmanKacOptions {
    fn default() -> Self {
        Self {
            pde_dt: 2.5e-3,
            leakage_tol: 0.01,
            budget_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeynmanKacOutcome {
    pub report: DiagnosticReport,
    pub mc: f64,
    pub mc_stderr: f64,
    pub pde: f64,
    pub pde_coarse: f64,
    pub richardson: f64,
    pub leakage: f64,
}

fn pde_value(
    c: &CoefficientSet,
    dens: &DensityField,
    f0: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<(f64, f64)> {
    let g = &dens.grid;
    let prop = Propagator::new(c, dens, dt)?;
    let vals: Vec<f64> = (0..g.len()).map(|i| f0(&g.point_vec(i))).collect();
    let u = prop.evolve(&vals, t_end, usize::MAX)?;
    let ones = vec![1.0; g.len()];
    let m = prop.evolve(&ones, t_end, usize::MAX)?;
    Ok((
        g.interpolate(u.final_slice(), x0),
        1.0 - g.interpolate(m.final_slice(), x0),
    ))
}

/// Compares `E_x0 f0(X_T)` by Monte Carlo with `P_T f0(x0)` from the PDE on
/// the density's grid.
pub fn feynman_kac_crosscheck(
    c: &CoefficientSet,
    dens: &DensityField,
    f0: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    t_end: f64,
    cfg: &SimConfig,
    opts: &FeynmanKacOptions,
) -> Result<FeynmanKacOutcome> {
    let g = &dens.grid;
    if x0.len() != c.d() || g.dim() != c.d() {
        return Err(Error::DimensionMismatch("x0, grid and coefficients must share d".into()));
    }
    if !g.bounds.contains(x0) {
        return Err(Error::param("x0", "must lie inside the box"));
    }
    if g.n % 2 == 0 {
        return Err(Error::param("n", "the grid needs an odd point count for the coarse run"));
    }
    let mut sim = cfg.clone();
    sim.t_end = t_end;
    sim.r_exit = None;
    sim.record_stride = sim.n_steps()?;
    let ens = simulate_ensemble(c, x0, &sim)?;
    let fin = ens.final_states();
    let vals: Vec<f64> = fin.chunks(c.d()).map(f0).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("f0", "non-finite at a simulated endpoint"));
    }
    let (mc, se) = mean_stderr(&vals);

    let (fine, leakage) = pde_value(c, dens, f0, x0, t_end, opts.pde_dt)?;
    let coarse_dens = solve_density_with(c, &g.bounds, (g.n + 1) / 2, dens.normalization)?;
    let (coarse, _) = pde_value(c, &coarse_dens, f0, x0, t_end, 2.0 * opts.pde_dt)?;
    let rich = (fine - coarse).abs();
    let budget = opts.budget_factor * (se + rich);

    let mut r = DiagnosticReport::new("feynman_kac_crosscheck");
    r.clause(Clause::at_most("mc_vs_pde", (mc - fine).abs(), budget));
    r.clause(Clause::at_most("boundary_leakage", leakage, opts.leakage_tol));
    r.metric("mc", mc)
        .metric("mc_stderr", se)
        .metric("pde", fine)
        .metric("pde_coarse", coarse)
        .metric("richardson", rich)
        .metric("budget", budget)
        .metric("leakage", leakage)
        .metric("exploded", ens.exploded_count() as f64)
        .metric(
            "occupation_exact_max",
            ens.occupation_exact.iter().copied().fold(0.0, f64::max),
        );
    r.tolerance("budget_factor", opts.budget_factor)
        .tolerance("leakage_tol", opts.leakage_tol)
        .tolerance("pde_dt", opts.pde_dt);
    r.seeds.push(sim.master_seed);
    if leakage > opts.leakage_tol {
        r.verdict = Verdict::Inconclusive;
    }
    let report = r.finish();
    Ok(FeynmanKacOutcome {
        report,
        mc,
        mc_stderr: se,
        pde: fine,
        pde_coarse: coarse,
        richardson: rich,
        leakage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{builtin_family, Params};
    use crate::density::solve_density;
    use crate::grid::Bounds;

    #[test]
    fn brownian_constant_and_leaky_box() {
        let c = builtin_family("brownian", &Params::new()).unwrap();
        let dens = solve_density(&c, &Bounds::symmetric(2, 4.0), 33).unwrap();
        let cfg = SimConfig::new(0.01, 0.1, 200, 1);
        let f = |x: &[f64]| (-(x[0] * x[0] + x[1] * x[1])).exp();
        let out = feynman_kac_crosscheck(&c, &dens, &f, &[0.0, 0.0], 0.1, &cfg, &FeynmanKacOptions { pde_dt: 0.01, ..Default::default() }).unwrap();
        assert!(out.leakage < 1e-6);
        assert!(out.report.passed(), "{:?}", out.report);
        // starting next to the wall leaks mass
        let out = feynman_kac_crosscheck(&c, &dens, &f, &[3.8, 0.0], 0.1, &cfg, &FeynmanKacOptions { pde_dt: 0.01, ..Default::default() }).unwrap();
        assert_eq!(out.report.verdict, Verdict::Inconclusive);
    }
}
