//! Regular box grids and the fields sampled on them.
//!
//! Nodes are vertex-centred: axis `k` carries `n` nodes from `lower[k]` to
//! `upper[k]` inclusive. Storage is row-major with axis 0 slowest, so the
//! flat index of `(i_0, …, i_{d-1})` is `Σ i_k · n^{d-1-k}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `Π [lower_k, upper_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "bounds have {} lower and {} upper entries",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::param(
                    "box",
                    format!("axis {k}: need finite lower < upper"),
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[-half, half]^d`.
    pub fn symmetric(d: usize, half: f64) -> Self {
        Self {
            lower: vec![-half; d],
            upper: vec![half; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .product()
    }
}

/// How a field is closed at the box boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Natural boundary: no flux leaves the box.
    ZeroFlux,
    /// Homogeneous Dirichlet: boundary nodes are pinned to zero.
    Dirichlet,
    /// Plain sampled data, no boundary semantics.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub bounds: Bounds,
    /// Nodes per axis.
    pub n: usize,
}

impl Grid {
    pub fn new(bounds: Bounds, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::param("n", "a grid needs at least 2 nodes per axis"));
        }
        Ok(Self { bounds, n })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.bounds.upper[axis] - self.bounds.lower[axis]) / (self.n - 1) as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.spacing(k)).collect()
    }

    /// Volume of one cell, `Π h_k`.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    /// Flat-index stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim() - 1 - axis) as u32)
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        if i == self.n - 1 {
            self.bounds.upper[axis]
        } else {
            self.bounds.lower[axis] + i as f64 * self.spacing(axis)
        }
    }

    /// Per-axis node indices of a flat index.
    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            out[k] = idx % self.n;
            idx /= self.n;
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for k in (0..self.dim()).rev() {
            out[k] = self.coordinate(k, rem % self.n);
            rem /= self.n;
        }
    }

    pub fn point_vec(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.point(idx, &mut x);
        x
    }

    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.n
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        (0..self.dim()).any(|k| {
            let i = self.axis_index(idx, k);
            i == 0 || i == self.n - 1
        })
    }

    /// Node closest to `x` (clamped into the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let multi: Vec<usize> = (0..self.dim())
            .map(|k| {
                let t = (x[k] - self.bounds.lower[k]) / self.spacing(k);
                (t.round().max(0.0) as usize).min(self.n - 1)
            })
            .collect();
        self.flat_index(&multi)
    }

    /// Trapezoid weights of the full box, `w_i = Π_k h_k·(½ on boundary layers)`.
    pub fn trapezoid_weight(&self, idx: usize) -> f64 {
        (0..self.dim())
            .map(|k| {
                let i = self.axis_index(idx, k);
                let h = self.spacing(k);
                if i == 0 || i == self.n - 1 {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    /// Exact integrals of the piecewise-linear hat functions of `axis` over
    /// `[a, b]`. Integrating a nodal field against these weights integrates
    /// its linear interpolant exactly on the interval.
    pub fn interval_weights(&self, axis: usize, a: f64, b: f64) -> Vec<f64> {
        let nodes: Vec<f64> = (0..self.n).map(|i| self.coordinate(axis, i)).collect();
        hat_interval_weights(&nodes, a, b)
    }

    /// Multilinear interpolation of a scalar nodal field; 0 outside the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        if !self.bounds.contains(x) {
            return 0.0;
        }
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let t = (x[k] - self.bounds.lower[k]) / self.spacing(k);
            let i = (t.floor() as usize).min(self.n - 2);
            base[k] = i;
            frac[k] = (t - i as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        let mut corner = vec![0usize; d];
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            for k in 0..d {
                let bit = (mask >> k) & 1;
                corner[k] = base[k] + bit;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            }
            if w != 0.0 {
                acc += w * values[self.flat_index(&corner)];
            }
        }
        acc
    }
}

/// Hat-function weights on an arbitrary increasing node list.
pub fn hat_interval_weights(nodes: &[f64], a: f64, b: f64) -> Vec<f64> {
    let mut w = vec![0.0; nodes.len()];
    if b <= a {
        return w;
    }
    for seg in 0..nodes.len().saturating_sub(1) {
        let (x0, x1) = (nodes[seg], nodes[seg + 1]);
        let lo = a.max(x0);
        let hi = b.min(x1);
        if hi <= lo {
            continue;
        }
        let len = x1 - x0;
        // ∫ over [lo, hi] of (x1 - x)/len and (x - x0)/len
        let int_right = ((hi - x0).powi(2) - (lo - x0).powi(2)) / (2.0 * len);
        let int_left = (hi - lo) - int_right;
        w[seg] += int_left;
        w[seg + 1] += int_right;
    }
    w
}

/// A scalar (`components == 1`) or vector field on a [`Grid`]; values are
/// interleaved per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: Grid,
    pub components: usize,
    pub values: Vec<f64>,
    pub boundary: BoundaryPolicy,
}

impl GridField {
    pub fn zeros(grid: Grid, components: usize, boundary: BoundaryPolicy) -> Self {
        let values = vec![0.0; grid.len() * components];
        Self {
            grid,
            components,
            values,
            boundary,
        }
    }

    /// Samples a scalar function at every node.
    pub fn from_fn(grid: Grid, boundary: BoundaryPolicy, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.point(i, &mut x);
                f(&x)
            })
            .collect();
        Self {
            grid,
            components: 1,
            values,
            boundary,
        }
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.components..(node + 1) * self.components]
    }

    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.components..(node + 1) * self.components]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Scalar interpolation (component 0 only for scalar fields).
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(self.components, 1);
        self.grid.interpolate(&self.values, x)
    }

    /// Trapezoid-rule integral of a scalar field over the box.
    pub fn integrate(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.values[i] * self.grid.trapezoid_weight(i))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = Grid::new(Bounds::symmetric(3, 1.0), 5).unwrap();
        let mut m = [0usize; 3];
        for i in 0..g.len() {
            g.multi_index(i, &mut m);
            assert_eq!(g.flat_index(&m), i);
            for k in 0..3 {
                assert_eq!(g.axis_index(i, k), m[k]);
            }
        }
    }

    #[test]
    fn grid_contains_endpoints_exactly() {
        let g = Grid::new(Bounds::symmetric(2, 4.0), 129).unwrap();
        assert_eq!(g.coordinate(0, 0), -4.0);
        assert_eq!(g.coordinate(0, 128), 4.0);
        assert_eq!(g.coordinate(0, 64), 0.0);
        assert_eq!(g.nearest(&[0.0, 0.0]), 64 * 129 + 64);
    }

    #[test]
    fn hat_weights_integrate_constants_and_lines() {
        let nodes: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let w = hat_interval_weights(&nodes, 0.23, 0.71);
        let total: f64 = w.iter().sum();
        assert!((total - 0.48).abs() < 1e-14);
        let first: f64 = w.iter().zip(&nodes).map(|(w, x)| w * x).sum();
        let exact = (0.71f64.powi(2) - 0.23f64.powi(2)) / 2.0;
        assert!((first - exact).abs() < 1e-14);
    }

    #[test]
    fn interpolation_is_exact_for_bilinear() {
        let g = Grid::new(Bounds::symmetric(2, 1.0), 9).unwrap();
        let f = GridField::from_fn(g, BoundaryPolicy::Free, |x| {
            1.0 + 2.0 * x[0] - x[1] + x[0] * x[1]
        });
        let x = [0.137, -0.42];
        let exact = 1.0 + 2.0 * x[0] - x[1] + x[0] * x[1];
        assert!((f.interpolate(&x) - exact).abs() < 1e-13);
        assert_eq!(f.interpolate(&[2.0, 0.0]), 0.0);
    }

    #[test]
    fn trapezoid_integrates_constant() {
        let g = Grid::new(Bounds::new(vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap(), 7).unwrap();
        let f = GridField::from_fn(g, BoundaryPolicy::Free, |_| 2.0);
        assert!((f.integrate() - 12.0).abs() < 1e-12);
    }
}
