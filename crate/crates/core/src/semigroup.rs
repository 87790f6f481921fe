//! The semigroup `P_t f` as the solution of
//! `ρψ ∂_t u = div(½ρA∇u) + ρψ⟨B,∇u⟩` on a box with `u = 0` on the boundary.
//!
//! Backward Euler in time. Diffusion uses two-point fluxes with
//! `½·harmonic(ρa_kk)` on faces; the advection field `ρψB` is taken from the
//! density solver's face fluxes (it is exactly minus the stationary flux) and
//! upwinded, so the system matrix is an M-matrix.

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::grid::{hat_interval_weights, BoundaryPolicy, Grid, GridField};
use crate::linalg::BandedMatrix;
use crate::report::{Clause, DiagnosticReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeField {
    pub grid: Grid,
    pub times: Vec<f64>,
    /// One nodal vector per stored time, the first at `t = 0`.
    pub slices: Vec<Vec<f64>>,
    pub dt: f64,
    /// Time-stepping parameter, always 1 (backward Euler).
    pub theta: f64,
}

impl SpaceTimeField {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn slice(&self, k: usize) -> GridField {
        GridField {
            grid: self.grid.clone(),
            components: 1,
            values: self.slices[k].clone(),
            boundary: BoundaryPolicy::Dirichlet,
        }
    }

    pub fn final_slice(&self) -> &[f64] {
        self.slices.last().expect("at least the initial slice")
    }

    /// Multilinear interpolation of slice `k` at `x`.
    pub fn value_at(&self, k: usize, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.slices[k], x)
    }

    /// Multiplies every slice by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        for s in out.slices.iter_mut() {
            for v in s.iter_mut() {
                *v *= lambda;
            }
        }
        out
    }
}

/// A factored backward-Euler step for one `(coefficients, density, dt)`.
pub struct Propagator {
    grid: Grid,
    dt: f64,
    mat: BandedMatrix,
    mass: Vec<f64>,
    interior: Vec<bool>,
}

impl Propagator {
    pub fn new(c: &CoefficientSet, dens: &DensityField, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", "must be positive"));
        }
        let grid = dens.grid.clone();
        let d = grid.dim();
        if d != c.d() {
            return Err(Error::DimensionMismatch("density grid dimension differs from d".into()));
        }
        if !c.matrix.is_diagonal() {
            return Err(Error::Unsupported("the parabolic solver needs a diagonal A".into()));
        }
        let len = grid.len();
        let interior: Vec<bool> = (0..len).map(|i| !grid.is_boundary(i)).collect();
        // ρ a_kk at the nodes
        let mut rho_a = vec![0.0; len * d];
        let mut a = vec![0.0; d * d];
        let mut x = vec![0.0; d];
        for i in 0..len {
            grid.point(i, &mut x);
            c.matrix.eval(&x, &mut a);
            for k in 0..d {
                rho_a[i * d + k] = dens.rho.values[i] * a[k * d + k];
            }
        }
        let vol = grid.cell_volume();
        let mut mass = vec![0.0; len];
        for i in 0..len {
            if interior[i] {
                let w = dens.rho.values[i] * dens.psi[i];
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::Singular(format!("weight ρψ = {w} at node {i}")));
                }
                mass[i] = vol * w / dt;
            }
        }
        let band = grid.stride(0);
        let mut mat = BandedMatrix::zeros(len, band, band);
        for i in 0..len {
            if interior[i] {
                mat.add(i, i, mass[i]);
            } else {
                mat.set(i, i, 1.0);
            }
        }
        for k in 0..d {
            let s = grid.stride(k);
            let h = grid.spacing(k);
            let area = vol / h;
            for i in 0..len {
                if grid.axis_index(i, k) == grid.n - 1 {
                    continue;
                }
                let j = i + s;
                let (ai, aj) = (rho_a[i * d + k], rho_a[j * d + k]);
                let diff = ai * aj / (ai + aj) / h;
                // ρψB·e_k on this face
                let v = -dens.flux[k][i];
                // row i looks toward j along +e_k, row j toward i along −e_k
                let ci = area * (diff + v.max(0.0));
                let cj = area * (diff + (-v).max(0.0));
                if interior[i] {
                    mat.add(i, i, ci);
                    if interior[j] {
                        mat.add(i, j, -ci);
                    }
                }
                if interior[j] {
                    mat.add(j, j, cj);
                    if interior[i] {
                        mat.add(j, i, -cj);
                    }
                }
            }
        }
        // discrete maximum principle needs an M-matrix
        for i in 0..len {
            if !(mat.get(i, i) > 0.0) {
                return Err(Error::Singular(format!("non-positive diagonal at row {i}")));
            }
            for k in 0..d {
                let s = grid.stride(k);
                for j in [i.wrapping_sub(s), i + s] {
                    if j < len && mat.get(i, j) > 0.0 {
                        return Err(Error::Singular(format!("positive off-diagonal ({i},{j})")));
                    }
                }
            }
        }
        mat.factor(1e-15)?;
        Ok(Self {
            grid,
            dt,
            mat,
            mass,
            interior,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, u: &mut [f64]) {
        for i in 0..u.len() {
            u[i] = if self.interior[i] { self.mass[i] * u[i] } else { 0.0 };
        }
        self.mat.solve_in_place(u);
    }

    /// Runs to `t_end`, storing every `store_stride`-th step (and the last).
    pub fn evolve(&self, f0: &[f64], t_end: f64, store_stride: usize) -> Result<SpaceTimeField> {
        if f0.len() != self.grid.len() {
            return Err(Error::DimensionMismatch("initial datum size".into()));
        }
        if f0.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("f0", "must be finite"));
        }
        let steps = step_count(t_end, self.dt)?;
        let stride = store_stride.max(1);
        let mut u: Vec<f64> = f0
            .iter()
            .zip(&self.interior)
            .map(|(v, &inside)| if inside { *v } else { 0.0 })
            .collect();
        let mut times = vec![0.0];
        let mut slices = vec![u.clone()];
        for s in 1..=steps {
            self.step(&mut u);
            if s % stride == 0 || s == steps {
                times.push(s as f64 * self.dt);
                slices.push(u.clone());
            }
        }
        Ok(SpaceTimeField {
            grid: self.grid.clone(),
            times,
            slices,
            dt: self.dt,
            theta: 1.0,
        })
    }
}

/// `T/dt` as an integer, rejecting non-integral ratios.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_end >= dt) || !t_end.is_finite() {
        return Err(Error::param("t_end", format!("need t_end >= dt > 0 (t_end = {t_end}, dt = {dt})")));
    }
    let r = t_end / dt;
    let n = r.round();
    if (r - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::param("t_end", format!("t_end/dt = {r} is not an integer")));
    }
    Ok(n as usize)
}

pub fn evolve(
    c: &CoefficientSet,
    dens: &DensityField,
    f0: &GridField,
    t_end: f64,
    dt: f64,
) -> Result<SpaceTimeField> {
    evolve_strided(c, dens, f0, t_end, dt, 1)
}

pub fn evolve_strided(
    c: &CoefficientSet,
    dens: &DensityField,
    f0: &GridField,
    t_end: f64,
    dt: f64,
    store_stride: usize,
) -> Result<SpaceTimeField> {
    if f0.grid != dens.grid || f0.components != 1 {
        return Err(Error::DimensionMismatch("f0 must be a scalar field on the density grid".into()));
    }
    Propagator::new(c, dens, dt)?.evolve(&f0.values, t_end, store_stride)
}

/// Space-time window data for a cube of half-edge `half` and a time interval.
fn window_nodes(u: &SpaceTimeField, center: &[f64], half: f64) -> Vec<usize> {
    let g = &u.grid;
    let mut x = vec![0.0; g.dim()];
    (0..g.len())
        .filter(|&i| {
            g.point(i, &mut x);
            x.iter().zip(center).all(|(a, c)| (a - c).abs() <= half * (1.0 + 1e-12))
        })
        .collect()
}

/// `‖u‖_{L^a(R(2r)) ; L²(t̄−4r², t̄)}` with `a = 2p/(p−2)`, using exact
/// integrals of the piecewise-linear interpolants.
fn mixed_norm(u: &SpaceTimeField, center: &[f64], t_bar: f64, r: f64, a: f64) -> f64 {
    let g = &u.grid;
    let d = g.dim();
    let per_axis: Vec<Vec<f64>> = (0..d)
        .map(|k| g.interval_weights(k, center[k] - r, center[k] + r))
        .collect();
    let time_w = hat_interval_weights(&u.times, t_bar - 4.0 * r * r, t_bar);
    let mut acc = 0.0;
    let mut mi = vec![0usize; d];
    for (s, wt) in time_w.iter().enumerate() {
        if *wt == 0.0 {
            continue;
        }
        let mut sp = 0.0;
        for i in 0..g.len() {
            g.multi_index(i, &mut mi);
            let w: f64 = (0..d).map(|k| per_axis[k][mi[k]]).product();
            if w != 0.0 {
                sp += w * u.slices[s][i].abs().powf(a);
            }
        }
        acc += wt * sp.powf(2.0 / a);
    }
    acc.sqrt()
}

/// Ratio `‖u‖_{L∞(Q(r))} / ‖u‖_{L^{2p/(p−2),2}(Q(2r))}` with
/// `Q(r) = R_x̄(r) × (t̄ − r², t̄)`, `R_x̄(r)` the cube of edge `r`.
pub fn audit_local_boundedness(
    u: &SpaceTimeField,
    center: &[f64],
    t_bar: f64,
    r: f64,
    p: f64,
) -> Result<DiagnosticReport> {
    let g = &u.grid;
    let d = g.dim();
    if center.len() != d {
        return Err(Error::DimensionMismatch("centre dimension".into()));
    }
    if !(r > 0.0) || !(p > 2.0) {
        return Err(Error::param("r, p", "need r > 0 and p > 2"));
    }
    let t_end = *u.times.last().unwrap_or(&0.0);
    let fits = (0..d).all(|k| {
        center[k] - 1.5 * r >= g.bounds.lower[k] && center[k] + 1.5 * r <= g.bounds.upper[k]
    }) && t_bar - 9.0 * r * r >= u.times[0]
        && t_bar <= t_end * (1.0 + 1e-12);
    if !fits {
        return Err(Error::param("window", "Q(3r) must lie inside box × (0, T)"));
    }
    let a = 2.0 * p / (p - 2.0);
    let nodes = window_nodes(u, center, 0.5 * r);
    let lo = t_bar - r * r;
    let mut linf = 0.0f64;
    let mut seen = false;
    for (s, &t) in u.times.iter().enumerate() {
        if t >= lo * (1.0 - 1e-12) - 1e-15 && t <= t_bar * (1.0 + 1e-12) {
            for &i in &nodes {
                linf = linf.max(u.slices[s][i].abs());
                seen = true;
            }
        }
    }
    if !seen {
        return Err(Error::param("window", "Q(r) contains no grid points"));
    }
    let den = mixed_norm(u, center, t_bar, r, a);
    if !(den >= 1e-14) {
        return Err(Error::TrivialWindow(den));
    }
    let ratio = linf / den;
    let mut rep = DiagnosticReport::new("local_boundedness");
    rep.metric("sup_norm", linf)
        .metric("mixed_norm", den)
        .metric("ratio", ratio)
        .metric("space_exponent", a)
        .metric("r", r)
        .metric("t_bar", t_bar);
    rep.clause(Clause::new("ratio_finite", ratio.is_finite(), format!("ratio {ratio:.6e}")).with_value(ratio));
    Ok(rep.finish())
}

/// Compares the ratio between two resolutions of the same problem.
pub fn local_boundedness_refinement(
    coarse: &SpaceTimeField,
    fine: &SpaceTimeField,
    center: &[f64],
    t_bar: f64,
    r: f64,
    p: f64,
    max_rel_change: f64,
) -> Result<DiagnosticReport> {
    let a = audit_local_boundedness(coarse, center, t_bar, r, p)?;
    let b = audit_local_boundedness(fine, center, t_bar, r, p)?;
    let (ra, rb) = (a.metrics["ratio"], b.metrics["ratio"]);
    let rel = (ra - rb).abs() / rb.abs().max(f64::MIN_POSITIVE);
    let mut rep = DiagnosticReport::new("local_boundedness_refinement");
    rep.metric("ratio_coarse", ra)
        .metric("ratio_fine", rb)
        .metric("relative_change", rel)
        .tolerance("max_relative_change", max_rel_change);
    rep.clause(Clause::at_most("ratio_stable", rel, max_rel_change));
    Ok(rep.finish())
}

/// `t ↦ ‖u(t)‖_{L¹(ρψdx)}` and `t ↦ ‖u(t)‖_∞` non-increasing up to
/// `1e-10` relative slack.
pub fn semigroup_contraction_check(u: &SpaceTimeField, dens: &DensityField) -> DiagnosticReport {
    let mut rep = DiagnosticReport::new("contraction");
    let slack = 1e-10;
    rep.tolerance("slack", slack);
    if u.grid != dens.grid {
        rep.clause(Clause::new("same_grid", false, "field and density live on different grids"));
        return rep.finish();
    }
    let w = dens.mu_weights();
    let l1: Vec<f64> = u
        .slices
        .iter()
        .map(|s| s.iter().zip(&w).map(|(v, w)| v.abs() * w).sum())
        .collect();
    let linf: Vec<f64> = u
        .slices
        .iter()
        .map(|s| s.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    let worst_rise = |v: &[f64]| -> f64 {
        let scale = v.first().copied().unwrap_or(0.0).max(1.0);
        v.windows(2).map(|p| (p[1] - p[0]) / scale).fold(f64::NEG_INFINITY, f64::max)
    };
    let (r1, ri) = (worst_rise(&l1), worst_rise(&linf));
    let r1 = if r1.is_finite() { r1 } else { 0.0 };
    let ri = if ri.is_finite() { ri } else { 0.0 };
    rep.metric("l1_initial", l1[0])
        .metric("l1_final", *l1.last().unwrap())
        .metric("sup_initial", linf[0])
        .metric("sup_final", *linf.last().unwrap())
        .metric("l1_max_rise", r1)
        .metric("sup_max_rise", ri);
    rep.clause(Clause::at_most("l1_mu_nonincreasing", r1, slack));
    rep.clause(Clause::at_most("sup_nonincreasing", ri, slack));
    rep.finish()
}

/// `0 ≤ u ≤ 1` on every slice, up to `tol`.
pub fn sub_markov_check(u: &SpaceTimeField, tol: f64) -> DiagnosticReport {
    let mut rep = DiagnosticReport::new("sub_markov");
    rep.tolerance("tol", tol);
    let lo = u.slices.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = u.slices.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    rep.metric("min", lo).metric("max", hi);
    rep.clause(Clause::at_most("lower_bound", -lo, tol));
    rep.clause(Clause::at_most("upper_bound", hi - 1.0, tol));
    rep.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{builtin_family, Params};
    use crate::density::solve_density;
    use crate::grid::Bounds;

    #[test]
    fn step_count_validation() {
        assert_eq!(step_count(1.0, 1e-3).unwrap(), 1000);
        assert_eq!(step_count(0.25, 1e-3).unwrap(), 250);
        assert!(step_count(1.0, 0.3).is_err());
        assert!(step_count(1e-4, 1e-3).is_err());
    }

    #[test]
    fn zero_datum_stays_zero_and_constant_is_sub_markov() {
        let c = builtin_family("ornstein_uhlenbeck", &Params::new()).unwrap();
        let dens = solve_density(&c, &Bounds::symmetric(2, 3.0), 17).unwrap();
        let zero = GridField::zeros(dens.grid.clone(), 1, BoundaryPolicy::Dirichlet);
        let u = evolve(&c, &dens, &zero, 0.1, 0.01).unwrap();
        assert!(u.slices.iter().flatten().all(|v| *v == 0.0));
        let one = GridField::from_fn(dens.grid.clone(), BoundaryPolicy::Dirichlet, |_| 1.0);
        let u = evolve(&c, &dens, &one, 0.2, 0.01).unwrap();
        assert_eq!(u.len(), 21);
        assert!(sub_markov_check(&u, 1e-12).passed());
        assert!(semigroup_contraction_check(&u, &dens).passed());
    }

    #[test]
    fn constant_window_ratio_is_exact() {
        let g = Grid::new(Bounds::symmetric(2, 1.0), 41).unwrap();
        let times: Vec<f64> = (0..=40).map(|k| k as f64 * 0.01).collect();
        let u = SpaceTimeField {
            grid: g.clone(),
            slices: vec![vec![1.0; g.len()]; times.len()],
            times,
            dt: 0.01,
            theta: 1.0,
        };
        let (r, p) = (0.2, 6.0);
        let rep = audit_local_boundedness(&u, &[0.0, 0.0], 0.4, r, p).unwrap();
        let a = 2.0 * p / (p - 2.0);
        let expect = 1.0 / ((2.0 * r).powf(2.0 / a) * 2.0 * r);
        assert!((rep.metrics["ratio"] / expect - 1.0).abs() < 1e-12);
        let scaled = audit_local_boundedness(&u.scaled(7.5), &[0.0, 0.0], 0.4, r, p).unwrap();
        assert!((scaled.metrics["ratio"] / rep.metrics["ratio"] - 1.0).abs() < 1e-12);
        let zero = u.scaled(0.0);
        assert!(matches!(
            audit_local_boundedness(&zero, &[0.0, 0.0], 0.4, r, p),
            Err(Error::TrivialWindow(_))
        ));
        assert!(audit_local_boundedness(&u, &[0.0, 0.0], 0.3, r, p).is_err());
    }
}
