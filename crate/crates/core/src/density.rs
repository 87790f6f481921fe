//! Stationary density `ρ` of the divergence-form equation
//! `div(½A∇ρ + (½∇A − ψG)ρ) = 0` on a box with zero normal flux, and the drift
//! split `G = β + B`.
//!
//! Node-centred finite volumes. Along each axis the face flux
//! `F = ½a_kk ∂_kρ + c_k ρ`, `c = ½∇A − ψG`, uses exponential fitting
//! (Scharfetter–Gummel) with `a_kk` harmonically averaged and `c` taken at
//! the face midpoint. Constants are exact whenever `c ≡ 0`, and Gaussian
//! equilibria of linear drifts are reproduced at the nodes.

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::{BoundaryPolicy, Bounds, Grid, GridField};
use crate::linalg::BandedMatrix;
use crate::report::{Clause, DiagnosticReport};
use crate::testfn::{default_bumps, Bump};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `ρ = 1` at the grid node nearest the box centre.
    #[default]
    Anchor,
    /// `∫_box ρψ dx = 1` (trapezoid rule).
    Mass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub grid: Grid,
    pub rho: GridField,
    /// `∇ρ` recovered from the face fluxes (`d` components).
    pub grad_rho: GridField,
    /// `ψ` at the nodes; on null-set nodes the mean of `ψ` over the adjacent
    /// face midpoints.
    pub psi: Vec<f64>,
    /// `flux[k][i]`: the flux `F·e_k` on the face between node `i` and
    /// `i + e_k` (zero on the upper boundary layer).
    pub flux: Vec<Vec<f64>>,
    pub normalization: Normalization,
    pub anchor_node: usize,
    /// Largest weighted weak-form defect over the builtin bumps.
    pub residual_norm: f64,
    /// Max discrete flux imbalance relative to the flux scale.
    pub linear_residual: f64,
}

impl DensityField {
    /// Node weights of `μ = ρψ dx` for the trapezoid rule.
    pub fn mu_weights(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| self.grid.trapezoid_weight(i) * self.rho.values[i] * self.psi[i])
            .collect()
    }

    /// Rebuilds fluxes, gradient and residuals for given nodal values.
    pub fn from_values(
        c: &CoefficientSet,
        grid: Grid,
        rho: Vec<f64>,
        normalization: Normalization,
    ) -> Result<Self> {
        if rho.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} nodes",
                rho.len(),
                grid.len()
            )));
        }
        let faces = FaceData::new(c, &grid)?;
        finish_field(c, grid, rho, &faces, normalization)
    }
}

/// Per-face fitting data, indexed like the flux arrays.
struct FaceData {
    /// `½·harmonic(a_kk)` per axis/node.
    diff: Vec<Vec<f64>>,
    /// Drift coefficient `c_k` at the face midpoint.
    conv: Vec<Vec<f64>>,
    /// `a_kk` at the nodes, row-major `[node][k]`.
    node_diag: Vec<f64>,
}

impl FaceData {
    fn new(c: &CoefficientSet, grid: &Grid) -> Result<Self> {
        let d = c.d();
        if grid.dim() != d {
            return Err(Error::DimensionMismatch("grid dimension differs from d".into()));
        }
        if !c.matrix.is_diagonal() {
            return Err(Error::Unsupported(
                "the finite-volume density solver needs a diagonal A".into(),
            ));
        }
        let len = grid.len();
        let mut node_diag = vec![0.0; len * d];
        let mut a = vec![0.0; d * d];
        let mut x = vec![0.0; d];
        for i in 0..len {
            grid.point(i, &mut x);
            c.matrix.eval(&x, &mut a);
            for k in 0..d {
                let v = a[k * d + k];
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::DegenerateMatrix(v));
                }
                node_diag[i * d + k] = v;
            }
        }
        let mut diff = vec![vec![0.0; len]; d];
        let mut conv = vec![vec![0.0; len]; d];
        let mut ga = vec![0.0; d];
        let mut pg = vec![0.0; d];
        for k in 0..d {
            let s = grid.stride(k);
            let h = grid.spacing(k);
            for i in 0..len {
                if grid.axis_index(i, k) == grid.n - 1 {
                    continue;
                }
                let j = i + s;
                let (ai, aj) = (node_diag[i * d + k], node_diag[j * d + k]);
                diff[k][i] = ai * aj / (ai + aj);
                grid.point(i, &mut x);
                x[k] += 0.5 * h;
                c.matrix.grad_row_div(&x, &mut ga);
                c.psi_drift(&x, &mut pg);
                let v = 0.5 * ga[k] - pg[k];
                if !v.is_finite() {
                    return Err(Error::Singular(format!(
                        "ψG or ∇A not finite at face midpoint {x:?}"
                    )));
                }
                conv[k][i] = v;
            }
        }
        Ok(Self {
            diff,
            conv,
            node_diag,
        })
    }

    /// `(α, β)` with `F = α ρ_j − β ρ_i` on face `(i, i+e_k)`.
    #[inline]
    fn weights(&self, k: usize, i: usize, h: f64) -> (f64, f64) {
        let dk = self.diff[k][i];
        let pe = self.conv[k][i] * h / dk;
        (dk / h * bernoulli(-pe), dk / h * bernoulli(pe))
    }
}

/// `z / (eᶻ − 1)`.
#[inline]
pub fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Area of the face of node `i`'s control volume orthogonal to `axis`.
fn face_area(grid: &Grid, i: usize, axis: usize) -> f64 {
    (0..grid.dim())
        .filter(|&l| l != axis)
        .map(|l| {
            let il = grid.axis_index(i, l);
            let h = grid.spacing(l);
            if il == 0 || il == grid.n - 1 {
                0.5 * h
            } else {
                h
            }
        })
        .product()
}

/// `ψ` at the nodes, replaced on null-set nodes by the mean of `ψ` over the
/// adjacent face midpoints.
pub fn node_psi(c: &CoefficientSet, grid: &Grid) -> Result<Vec<f64>> {
    let d = c.d();
    let mut x = vec![0.0; d];
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        grid.point(i, &mut x);
        let p = c.inv_weight.psi(&x);
        if p.is_finite() {
            out.push(p);
            continue;
        }
        let (mut sum, mut cnt) = (0.0, 0usize);
        for k in 0..d {
            let ik = grid.axis_index(i, k);
            let h = grid.spacing(k);
            for (ok, sgn) in [(ik > 0, -1.0), (ik + 1 < grid.n, 1.0)] {
                if !ok {
                    continue;
                }
                let mut y = x.clone();
                y[k] += sgn * 0.5 * h;
                let q = c.inv_weight.psi(&y);
                if q.is_finite() {
                    sum += q;
                    cnt += 1;
                }
            }
        }
        if cnt == 0 {
            return Err(Error::Singular(format!("ψ infinite around node {x:?}")));
        }
        out.push(sum / cnt as f64);
    }
    Ok(out)
}

pub fn solve_density(c: &CoefficientSet, bounds: &Bounds, n: usize) -> Result<DensityField> {
    solve_density_with(c, bounds, n, Normalization::Anchor)
}

pub fn solve_density_with(
    c: &CoefficientSet,
    bounds: &Bounds,
    n: usize,
    normalization: Normalization,
) -> Result<DensityField> {
    let grid = Grid::new(bounds.clone(), n)?;
    if grid.dim() != c.d() {
        return Err(Error::DimensionMismatch("box dimension differs from d".into()));
    }
    let faces = FaceData::new(c, &grid)?;
    let d = grid.dim();
    let len = grid.len();
    let band = grid.stride(0);
    let mut k_mat = BandedMatrix::zeros(len, band, band);
    for k in 0..d {
        let s = grid.stride(k);
        let h = grid.spacing(k);
        for i in 0..len {
            if grid.axis_index(i, k) == grid.n - 1 {
                continue;
            }
            let j = i + s;
            let area = face_area(&grid, i, k);
            let (al, be) = faces.weights(k, i, h);
            k_mat.add(i, i, area * be);
            k_mat.add(i, j, -area * al);
            k_mat.add(j, i, -area * be);
            k_mat.add(j, j, area * al);
        }
    }
    let centre: Vec<f64> = (0..d)
        .map(|k| 0.5 * (bounds.lower[k] + bounds.upper[k]))
        .collect();
    let anchor = grid.nearest(&centre);
    let mut rhs = vec![0.0; len];
    // pin ρ(anchor) = 1 and move its column to the right-hand side
    for r in anchor.saturating_sub(band)..=(anchor + band).min(len - 1) {
        if r != anchor {
            rhs[r] = -k_mat.get(r, anchor);
            k_mat.set(r, anchor, 0.0);
        }
    }
    k_mat.set_identity_row(anchor);
    rhs[anchor] = 1.0;
    k_mat.factor(1e-14).map_err(|e| match e {
        Error::SolveFailed { row, pivot } => Error::Singular(format!(
            "zero pivot {pivot:e} at row {row}: kernel dimension exceeds one"
        )),
        other => other,
    })?;
    k_mat.solve_in_place(&mut rhs);
    let mut rho = rhs;
    if rho.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite density".into()));
    }
    let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::DensitySignChange { min });
    }
    if normalization == Normalization::Mass {
        let psi = node_psi(c, &grid)?;
        let mass: f64 = (0..len)
            .map(|i| grid.trapezoid_weight(i) * rho[i] * psi[i])
            .sum();
        for v in rho.iter_mut() {
            *v /= mass;
        }
    }
    let mut field = finish_field(c, grid, rho, &faces, normalization)?;
    field.anchor_node = anchor;
    Ok(field)
}

fn finish_field(
    c: &CoefficientSet,
    grid: Grid,
    rho: Vec<f64>,
    faces: &FaceData,
    normalization: Normalization,
) -> Result<DensityField> {
    let d = grid.dim();
    let len = grid.len();
    let mut flux = vec![vec![0.0; len]; d];
    let mut imbalance = vec![0.0; len];
    let mut scale = 0.0f64;
    for k in 0..d {
        let s = grid.stride(k);
        let h = grid.spacing(k);
        for i in 0..len {
            if grid.axis_index(i, k) == grid.n - 1 {
                continue;
            }
            let j = i + s;
            let (al, be) = faces.weights(k, i, h);
            let f = al * rho[j] - be * rho[i];
            flux[k][i] = f;
            let area = face_area(&grid, i, k);
            imbalance[i] += area * f;
            imbalance[j] -= area * f;
            scale = scale.max(area * (al * rho[j]).abs().max((be * rho[i]).abs()));
        }
    }
    let linear_residual =
        imbalance.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale.max(f64::MIN_POSITIVE);

    // ∇_kρ = 2(F̄_k − c_k ρ)/a_kk with F̄ the mean of the adjacent face fluxes
    let mut grad = GridField::zeros(grid.clone(), d, BoundaryPolicy::ZeroFlux);
    let mut x = vec![0.0; d];
    let mut ga = vec![0.0; d];
    let mut pg = vec![0.0; d];
    for i in 0..len {
        grid.point(i, &mut x);
        c.matrix.grad_row_div(&x, &mut ga);
        c.psi_drift(&x, &mut pg);
        for k in 0..d {
            let ik = grid.axis_index(i, k);
            let s = grid.stride(k);
            let mut fsum = 0.0;
            let mut cnt = 0.0;
            if ik > 0 {
                fsum += flux[k][i - s];
                cnt += 1.0;
            }
            if ik + 1 < grid.n {
                fsum += flux[k][i];
                cnt += 1.0;
            }
            let cnode = 0.5 * ga[k] - pg[k];
            let cnode = if cnode.is_finite() { cnode } else { 0.0 };
            grad.at_mut(i)[k] =
                2.0 * (fsum / cnt - cnode * rho[i]) / faces.node_diag[i * d + k];
        }
    }
    let psi = node_psi(c, &grid)?;
    let rho_field = GridField {
        grid: grid.clone(),
        components: 1,
        values: rho,
        boundary: BoundaryPolicy::ZeroFlux,
    };
    let residual_norm = weak_defect(c, &rho_field, &default_bumps(&grid.bounds));
    let centre: Vec<f64> = (0..d)
        .map(|k| 0.5 * (grid.bounds.lower[k] + grid.bounds.upper[k]))
        .collect();
    Ok(DensityField {
        anchor_node: grid.nearest(&centre),
        grid,
        rho: rho_field,
        grad_rho: grad,
        psi,
        flux,
        normalization,
        residual_norm,
        linear_residual,
    })
}

/// `max_f |∫⟨½A∇ρ + (½∇A − ψG)ρ, ∇f⟩ dx| / (‖∇f‖_{L²}·max ρ)` with a
/// centred-difference `∇ρ`, independent of the solver's fluxes.
fn weak_defect(c: &CoefficientSet, rho: &GridField, bumps: &[Bump]) -> f64 {
    let grid = &rho.grid;
    let d = grid.dim();
    let len = grid.len();
    let mut x = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut ga = vec![0.0; d];
    let mut pg = vec![0.0; d];
    let mut gf = vec![0.0; d];
    let mut hf = vec![0.0; d * d];
    let mut flux_nodes = vec![0.0; len * d];
    for i in 0..len {
        grid.point(i, &mut x);
        c.matrix.eval(&x, &mut a);
        c.matrix.grad_row_div(&x, &mut ga);
        c.psi_drift(&x, &mut pg);
        let mut g = vec![0.0; d];
        for k in 0..d {
            let ik = grid.axis_index(i, k);
            let s = grid.stride(k);
            let h = grid.spacing(k);
            let v = &rho.values;
            g[k] = if ik == 0 {
                (v[i + s] - v[i]) / h
            } else if ik == grid.n - 1 {
                (v[i] - v[i - s]) / h
            } else {
                (v[i + s] - v[i - s]) / (2.0 * h)
            };
        }
        for k in 0..d {
            let ag: f64 = (0..d).map(|j| a[k * d + j] * g[j]).sum();
            let cc = 0.5 * ga[k] - pg[k];
            let cc = if cc.is_finite() { cc } else { 0.0 };
            flux_nodes[i * d + k] = 0.5 * ag + cc * rho.values[i];
        }
    }
    let rmax = rho.max().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for f in bumps {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..len {
            grid.point(i, &mut x);
            f.eval(&x, &mut gf, &mut hf);
            let w = grid.trapezoid_weight(i);
            num += w * (0..d).map(|k| flux_nodes[i * d + k] * gf[k]).sum::<f64>();
            den += w * gf.iter().map(|v| v * v).sum::<f64>();
        }
        if den > 0.0 {
            worst = worst.max(num.abs() / (den.sqrt() * rmax));
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDecomposition {
    pub beta: GridField,
    pub b: GridField,
    pub rho_psi_b: GridField,
    /// Nodes where `1/ψ = 0`; `β` is set to zero there.
    pub null_nodes: Vec<usize>,
}

/// `β = (1/ψ)(½∇A + A∇ρ/(2ρ))`, `B = G − β` and `ρψB = ρψG − ½ρ∇A − ½A∇ρ`.
pub fn compute_beta(c: &CoefficientSet, dens: &DensityField) -> DriftDecomposition {
    let grid = &dens.grid;
    let d = grid.dim();
    let mut beta = GridField::zeros(grid.clone(), d, BoundaryPolicy::Free);
    let mut b = GridField::zeros(grid.clone(), d, BoundaryPolicy::Free);
    let mut rpb = GridField::zeros(grid.clone(), d, BoundaryPolicy::Free);
    let mut null_nodes = Vec::new();
    let mut x = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut ga = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut pg = vec![0.0; d];
    for i in 0..grid.len() {
        grid.point(i, &mut x);
        c.matrix.eval(&x, &mut a);
        c.matrix.grad_row_div(&x, &mut ga);
        c.drift(&x, &mut g);
        c.psi_drift(&x, &mut pg);
        let w = c.inv_weight.eval(&x);
        let rho = dens.rho.values[i];
        let grho = dens.grad_rho.at(i);
        let is_null = w == 0.0;
        if is_null {
            null_nodes.push(i);
        }
        for k in 0..d {
            let ag: f64 = (0..d).map(|j| a[k * d + j] * grho[j]).sum();
            let bk = if is_null {
                0.0
            } else {
                w * (0.5 * ga[k] + 0.5 * ag / rho)
            };
            beta.at_mut(i)[k] = bk;
            b.at_mut(i)[k] = g[k] - bk;
            rpb.at_mut(i)[k] = rho * pg[k] - 0.5 * rho * ga[k] - 0.5 * ag;
        }
    }
    DriftDecomposition {
        beta,
        b,
        rho_psi_b: rpb,
        null_nodes,
    }
}

fn check_bumps(bounds: &Bounds, fns: &[Bump]) -> Result<()> {
    if fns.is_empty() {
        return Err(Error::param("test_fns", "at least one test function required"));
    }
    for f in fns {
        f.require_inside(bounds)?;
    }
    Ok(())
}

/// `∫ (½tr(Â∇²f) + ⟨G,∇f⟩) ρψ dx` per test function, evaluated as
/// `∫ ρ(½tr(A∇²f) + ⟨ψG,∇f⟩) dx`. Pass iff `|·| ≤ tol·‖∇²f‖_∞`. The parts
/// `∫L⁰f dμ` and `∫⟨B,∇f⟩ dμ` are recorded separately.
pub fn verify_preinvariance(
    c: &CoefficientSet,
    dens: &DensityField,
    test_fns: &[Bump],
    tol: f64,
) -> Result<DiagnosticReport> {
    let grid = &dens.grid;
    check_bumps(&grid.bounds, test_fns)?;
    let d = grid.dim();
    let mut rep = DiagnosticReport::new("preinvariance");
    rep.tolerance("tol", tol);
    let mut x = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut ga = vec![0.0; d];
    let mut pg = vec![0.0; d];
    let mut gf = vec![0.0; d];
    let mut hf = vec![0.0; d * d];
    let mut worst = 0.0f64;
    for (n, f) in test_fns.iter().enumerate() {
        let (mut total, mut l0, mut bpart, mut hmax) = (0.0, 0.0, 0.0, 0.0f64);
        for i in 0..grid.len() {
            grid.point(i, &mut x);
            f.eval(&x, &mut gf, &mut hf);
            hmax = hf.iter().fold(hmax, |m, v| m.max(v.abs()));
            if gf.iter().all(|v| *v == 0.0) && hf.iter().all(|v| *v == 0.0) {
                continue;
            }
            c.matrix.eval(&x, &mut a);
            c.matrix.grad_row_div(&x, &mut ga);
            c.psi_drift(&x, &mut pg);
            let w = grid.trapezoid_weight(i);
            let rho = dens.rho.values[i];
            let grho = dens.grad_rho.at(i);
            let tr: f64 = (0..d)
                .flat_map(|p| (0..d).map(move |q| (p, q)))
                .map(|(p, q)| a[p * d + q] * hf[q * d + p])
                .sum();
            let drift: f64 = (0..d).map(|k| pg[k] * gf[k]).sum();
            let mut sym = 0.0;
            let mut anti = 0.0;
            for k in 0..d {
                let ag: f64 = (0..d).map(|j| a[k * d + j] * grho[j]).sum();
                let rpbeta = 0.5 * rho * ga[k] + 0.5 * ag;
                sym += rpbeta * gf[k];
                anti += (rho * pg[k] - rpbeta) * gf[k];
            }
            total += w * rho * (0.5 * tr + drift);
            l0 += w * (0.5 * rho * tr + sym);
            bpart += w * anti;
        }
        let thr = tol * hmax;
        rep.metric(format!("integral_{n}"), total)
            .metric(format!("l0_part_{n}"), l0)
            .metric(format!("b_part_{n}"), bpart)
            .metric(format!("hessian_sup_{n}"), hmax);
        worst = worst.max(total.abs() / hmax.max(f64::MIN_POSITIVE));
        rep.clause(Clause::at_most(format!("test_fn_{n}"), total.abs(), thr));
    }
    rep.metric("max_scaled_residual", worst);
    Ok(rep.finish())
}

/// `|∫⟨B,∇u⟩ρψ dx| ≤ tol·‖∇u‖_∞` per test function.
pub fn verify_divergence_free(
    dens: &DensityField,
    dec: &DriftDecomposition,
    test_fns: &[Bump],
    tol: f64,
) -> Result<DiagnosticReport> {
    let grid = &dens.grid;
    check_bumps(&grid.bounds, test_fns)?;
    let d = grid.dim();
    let mut rep = DiagnosticReport::new("divergence_free");
    rep.tolerance("tol", tol);
    let mut x = vec![0.0; d];
    let mut gf = vec![0.0; d];
    let mut hf = vec![0.0; d * d];
    let mut worst = 0.0f64;
    for (n, f) in test_fns.iter().enumerate() {
        let (mut acc, mut gmax) = (0.0, 0.0f64);
        for i in 0..grid.len() {
            grid.point(i, &mut x);
            f.eval(&x, &mut gf, &mut hf);
            gmax = gf.iter().fold(gmax, |m, v| m.max(v.abs()));
            let v = dec.rho_psi_b.at(i);
            acc += grid.trapezoid_weight(i) * (0..d).map(|k| v[k] * gf[k]).sum::<f64>();
        }
        rep.metric(format!("integral_{n}"), acc)
            .metric(format!("gradient_sup_{n}"), gmax);
        worst = worst.max(acc.abs() / gmax.max(f64::MIN_POSITIVE));
        rep.clause(Clause::at_most(format!("test_fn_{n}"), acc.abs(), tol * gmax));
    }
    rep.metric("max_scaled_residual", worst);
    Ok(rep.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{builtin_family, DiffusionMatrix, ParamValue, Params};
    use std::sync::Arc;

    fn fam(name: &str, pairs: &[(&str, f64)]) -> CoefficientSet {
        let p: Params = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), ParamValue::Number(*v)))
            .collect();
        builtin_family(name, &p).unwrap()
    }

    #[test]
    fn bernoulli_limits() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-6) - (1e-6 / 1e-6f64.exp_m1())).abs() < 1e-15);
        assert!(bernoulli(800.0) == 0.0);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn brownian_density_is_constant() {
        let c = fam("brownian", &[]);
        let dens = solve_density(&c, &Bounds::symmetric(2, 2.0), 17).unwrap();
        for v in &dens.rho.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(dens.residual_norm <= 1e-10);
        let dec = compute_beta(&c, &dens);
        assert!(dec.beta.max_abs() < 1e-10 && dec.b.max_abs() < 1e-10);
    }

    #[test]
    fn ou_gaussian_reproduced_on_coarse_grid() {
        let c = fam("ornstein_uhlenbeck", &[]);
        let dens = solve_density(&c, &Bounds::symmetric(2, 3.0), 25).unwrap();
        let mut x = vec![0.0; 2];
        for i in 0..dens.grid.len() {
            dens.grid.point(i, &mut x);
            let exact = (-(x[0] * x[0] + x[1] * x[1])).exp();
            assert!((dens.rho.values[i] / exact - 1.0).abs() < 1e-8, "{x:?}");
        }
        let dec = compute_beta(&c, &dens);
        let mut g = [0.0; 2];
        for i in 0..dens.grid.len() {
            dens.grid.point(i, &mut x);
            c.drift(&x, &mut g);
            for k in 0..2 {
                assert!((dec.beta.at(i)[k] - g[k]).abs() < 1e-6);
                assert!((dec.b.at(i)[k] + dec.beta.at(i)[k] - g[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mass_normalization() {
        let c = fam("ornstein_uhlenbeck", &[]);
        let dens =
            solve_density_with(&c, &Bounds::symmetric(2, 3.0), 21, Normalization::Mass).unwrap();
        let m: f64 = dens.mu_weights().iter().sum();
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_for_variable_matrix() {
        let c = CoefficientSet::builder(2)
            .diffusion(DiffusionMatrix::new(
                2,
                Arc::new(|x: &[f64], out: &mut [f64]| {
                    out.copy_from_slice(&[1.0 + x[0] * x[0], 0.0, 0.0, 1.0])
                }),
                Some(Arc::new(|x: &[f64], out: &mut [f64]| {
                    out[0] = 2.0 * x[0];
                    out[1] = 0.0;
                })),
                true,
            ))
            .build()
            .unwrap();
        let grid = Grid::new(Bounds::symmetric(2, 1.0), 9).unwrap();
        // ρ ≡ 1 with its gradient set directly
        let mut dens =
            DensityField::from_values(&c, grid.clone(), vec![1.0; grid.len()], Normalization::Anchor)
                .unwrap();
        dens.grad_rho.values.fill(0.0);
        let dec = compute_beta(&c, &dens);
        let mut x = vec![0.0; 2];
        for i in 0..grid.len() {
            grid.point(i, &mut x);
            assert!((dec.beta.at(i)[0] - x[0]).abs() < 1e-15);
            assert_eq!(dec.beta.at(i)[1], 0.0);
            assert!((dec.b.at(i)[0] + x[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn null_nodes_flagged() {
        let c = fam("radial_degenerate", &[("alpha", 0.25)]);
        let dens = solve_density(&c, &Bounds::symmetric(2, 1.0), 9).unwrap();
        let dec = compute_beta(&c, &dens);
        assert_eq!(dec.null_nodes, vec![dens.grid.nearest(&[0.0, 0.0])]);
        assert!(dens.psi.iter().all(|p| p.is_finite() && *p > 0.0));
        for v in &dens.rho.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn off_diagonal_matrix_unsupported() {
        let c = CoefficientSet::builder(2)
            .diffusion(DiffusionMatrix::constant(2, vec![2.0, 0.5, 0.5, 1.0]))
            .build()
            .unwrap();
        assert!(matches!(
            solve_density(&c, &Bounds::symmetric(2, 1.0), 5),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn boundary_touching_test_function_rejected() {
        let c = fam("brownian", &[]);
        let dens = solve_density(&c, &Bounds::symmetric(2, 1.0), 9).unwrap();
        let f = Bump::new(vec![0.0, 0.0], 1.0);
        assert_eq!(
            verify_preinvariance(&c, &dens, &[f], 1e-8).unwrap_err(),
            Error::SupportTouchesBoundary
        );
    }
}
