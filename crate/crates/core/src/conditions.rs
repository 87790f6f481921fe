//! Arithmetic on the well-posedness hypotheses: the logarithmic growth
//! bound, exponent bookkeeping and the occupation-condition route.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::{Bounds, Grid};
use crate::linalg::dot;
use crate::report::{Clause, DiagnosticReport};

/// Both sides of the growth bound at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMargin {
    pub point: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// `(‖x‖²+1)(ln(‖x‖²+1)+1)`.
#[inline]
pub fn growth_scale(x: &[f64]) -> f64 {
    let s = dot(x, x) + 1.0;
    s * (s.ln() + 1.0)
}

/// `−⟨A x, x⟩·(1/ψ)/(‖x‖²+1) + tr(A)·(1/ψ)/2 + ⟨G, x⟩`, with `1/ψ` read
/// from the chosen representative.
pub fn growth_lhs(c: &CoefficientSet, x: &[f64]) -> Result<f64> {
    let d = c.d();
    if x.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, d = {d}",
            x.len()
        )));
    }
    let w = c.inv_weight.eval(x);
    if w == 0.0 {
        return Err(Error::NullSetPoint);
    }
    let mut a = vec![0.0; d * d];
    c.matrix.eval(x, &mut a);
    let mut g = vec![0.0; d];
    c.drift(x, &mut g);
    let mut axx = 0.0;
    let mut tr = 0.0;
    for i in 0..d {
        tr += a[i * d + i];
        for j in 0..d {
            axx += a[i * d + j] * x[i] * x[j];
        }
    }
    let r2 = dot(x, x) + 1.0;
    Ok(-axx * w / r2 + 0.5 * tr * w + dot(&g, x))
}

pub fn growth_margin(c: &CoefficientSet, x: &[f64], m: f64) -> Result<ConditionMargin> {
    let lhs = growth_lhs(c, x)?;
    let rhs = m * growth_scale(x);
    Ok(ConditionMargin {
        point: x.to_vec(),
        lhs,
        rhs,
        margin: rhs - lhs,
    })
}

/// Smallest `M ≥ 0` with non-negative margin at every non-null node of a
/// `resolution^d` grid on `bounds`.
pub fn min_m_on_grid(c: &CoefficientSet, bounds: &Bounds, resolution: usize) -> Result<f64> {
    if bounds.dim() != c.d() {
        return Err(Error::DimensionMismatch(
            "box dimension differs from d".into(),
        ));
    }
    let grid = Grid::new(bounds.clone(), resolution)?;
    let ratios: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point_vec(i);
            match growth_lhs(c, &x) {
                Ok(l) => l / growth_scale(&x),
                Err(_) => f64::NEG_INFINITY,
            }
        })
        .collect();
    // fixed-order reduction
    Ok(ratios
        .iter()
        .fold(0.0f64, |m, &r| if r > m || r.is_nan() { r } else { m }))
}

/// Open window `(2d+2, d/α)` for `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentWindow {
    pub d: usize,
    pub p: f64,
    pub alpha: f64,
    pub q_low: f64,
    #[serde(with = "crate::report::num")]
    pub q_high: f64,
    pub empty: bool,
}

impl ExponentWindow {
    pub fn contains_q(&self, q: f64) -> bool {
        q > self.q_low && q < self.q_high
    }

    /// The auxiliary constraint `1/q + 1/s < 2/d`.
    pub fn s_admissible(&self, q: f64, s: f64) -> bool {
        1.0 / q + 1.0 / s < 2.0 / self.d as f64
    }
}

pub fn exponent_window(d: usize, alpha: f64) -> ExponentWindow {
    let q_low = (2 * d + 2) as f64;
    let q_high = if alpha > 0.0 {
        d as f64 / alpha
    } else {
        f64::INFINITY
    };
    ExponentWindow {
        d,
        p: q_low,
        alpha,
        q_low,
        q_high,
        empty: alpha * q_low >= d as f64,
    }
}

/// Admissible `s` for a given `q`: all `s > d/2` with `1/s < 2/d − 1/q`,
/// i.e. `s ∈ ((2/d − 1/q)⁻¹, ∞]`. `None` when empty.
pub fn s_window(d: usize, q: f64) -> Option<(f64, f64)> {
    let gap = 2.0 / d as f64 - 1.0 / q;
    if gap <= 0.0 {
        return None;
    }
    Some(((1.0 / gap).max(0.5 * d as f64), f64::INFINITY))
}

pub fn a4prime_check(c: &CoefficientSet) -> DiagnosticReport {
    let d = c.d();
    let e = c.exponents;
    let target = (2 * d + 2) as f64;
    let mut rep = DiagnosticReport::new("a4prime");
    rep.metric("p", e.p).metric("q", e.q);
    rep.clause(
        Clause::new(
            "p_equals_2d_plus_2",
            e.p == target,
            format!("p = {}, 2d+2 = {target}", e.p),
        )
        .with_value(e.p)
        .with_threshold(target),
    );
    rep.clause(
        Clause::new(
            "q_exceeds_2d_plus_2",
            e.q > target,
            format!("q = {}, need q > {target}", e.q),
        )
        .with_value(e.q)
        .with_threshold(target),
    );
    match s_window(d, e.q) {
        Some((lo, hi)) => {
            rep.metric("s_low", lo).metric("s_high", hi);
            let detail = format!("s ∈ ({lo}, {hi}]");
            match e.s {
                Some(s) => {
                    let ok = s > lo && s > 0.5 * d as f64;
                    rep.clause(
                        Clause::new("s_admissible", ok, format!("declared s = {s}; {detail}"))
                            .with_value(s),
                    );
                }
                None => {
                    rep.clause(Clause::new("s_window_nonempty", true, detail));
                }
            }
        }
        None => {
            rep.clause(Clause::new("s_window_nonempty", false, "2/d − 1/q ≤ 0"));
        }
    }
    rep.clause(Clause::new(
        "drift_locally_bounded",
        e.drift_locally_bounded,
        if e.drift_locally_bounded {
            "declared"
        } else {
            "not declared"
        },
    ));
    rep.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupationRoute {
    /// `1/ψ ∈ (0, ∞)` everywhere; the zero set is empty.
    StrictlyPositive,
    /// The zero set may be non-empty; zero occupation is probed by simulation.
    IntegrabilityProbe,
}

impl OccupationRoute {
    pub fn label(self) -> &'static str {
        match self {
            Self::StrictlyPositive => "strictly_positive",
            Self::IntegrabilityProbe => "integrability_probe",
        }
    }
}

pub fn occupation_condition_route(c: &CoefficientSet) -> OccupationRoute {
    if c.inv_weight.may_vanish() {
        OccupationRoute::IntegrabilityProbe
    } else {
        OccupationRoute::StrictlyPositive
    }
}
