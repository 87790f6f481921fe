//! Built-in coefficient families addressable by `(name, params)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CoefficientSet, Exponents, FieldFn, InverseWeight};
use crate::error::{Error, Result};

pub const FAMILY_NAMES: &[&str] = &[
    "brownian",
    "ornstein_uhlenbeck",
    "radial_degenerate",
    "piecewise_weight",
    "hyperplane_jump",
    "cubic_drift",
];

/// A half-open box `[lower, upper)` carrying a constant value of `√(1/ψ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightCell {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub value: f64,
}

impl WeightCell {
    fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v < *u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Vector(Vec<f64>),
    Cells(Vec<WeightCell>),
}

pub type Params = BTreeMap<String, ParamValue>;

struct Reader<'a> {
    family: &'a str,
    params: &'a Params,
    used: Vec<&'static str>,
}

impl<'a> Reader<'a> {
    fn new(family: &'a str, params: &'a Params) -> Self {
        Self {
            family,
            params,
            used: Vec::new(),
        }
    }

    fn number(&mut self, key: &'static str) -> Result<Option<f64>> {
        self.used.push(key);
        match self.params.get(key) {
            None => Ok(None),
            Some(ParamValue::Number(v)) if v.is_finite() => Ok(Some(*v)),
            Some(ParamValue::Number(_)) => Err(Error::param(key, "must be finite")),
            Some(_) => Err(Error::param(key, "expected a number")),
        }
    }

    fn number_or(&mut self, key: &'static str, default: f64) -> Result<f64> {
        Ok(self.number(key)?.unwrap_or(default))
    }

    fn dim(&mut self) -> Result<usize> {
        let d = self.number_or("d", 2.0)?;
        if d.fract() != 0.0 || d < 2.0 || d > 16.0 {
            return Err(Error::param(
                "d",
                format!("must be an integer in [2, 16], got {d}"),
            ));
        }
        Ok(d as usize)
    }

    fn vector_or_zero(&mut self, key: &'static str, d: usize) -> Result<Vec<f64>> {
        self.used.push(key);
        match self.params.get(key) {
            None => Ok(vec![0.0; d]),
            Some(ParamValue::Vector(v)) if v.len() == d => {
                if v.iter().all(|x| x.is_finite()) {
                    Ok(v.clone())
                } else {
                    Err(Error::param(key, "entries must be finite"))
                }
            }
            Some(ParamValue::Vector(v)) => Err(Error::param(
                key,
                format!("expected {d} entries, got {}", v.len()),
            )),
            Some(_) => Err(Error::param(key, "expected a vector")),
        }
    }

    fn cells(&mut self, key: &'static str) -> Result<Vec<WeightCell>> {
        self.used.push(key);
        match self.params.get(key) {
            None => Ok(Vec::new()),
            Some(ParamValue::Cells(c)) => Ok(c.clone()),
            // an empty TOML array parses as an empty vector of numbers
            Some(ParamValue::Vector(v)) if v.is_empty() => Ok(Vec::new()),
            Some(_) => Err(Error::param(
                key,
                "expected a list of {lower, upper, value} tables",
            )),
        }
    }

    fn finish(self) -> Result<()> {
        for k in self.params.keys() {
            if !self.used.contains(&k.as_str()) {
                return Err(Error::param(
                    k,
                    format!("unknown parameter for family {}", self.family),
                ));
            }
        }
        Ok(())
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::param(key, format!("must be > 0, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::param(key, format!("must be >= 0, got {v}")))
    }
}

/// `G(x) = c − θx`.
fn linear_drift(c: Vec<f64>, theta: f64) -> FieldFn {
    Arc::new(move |x: &[f64], out: &mut [f64]| {
        for k in 0..out.len() {
            out[k] = c[k] - theta * x[k];
        }
    })
}

fn regular_set(name: &str, params: &Params, d: usize, drift: FieldFn) -> Result<CoefficientSet> {
    CoefficientSet::builder(d)
        .name(name)
        .params(params.clone())
        .drift(drift)
        .build()
}

/// Constructs one of [`FAMILY_NAMES`]. Every family takes `d` (default 2).
pub fn builtin_family(name: &str, params: &Params) -> Result<CoefficientSet> {
    let mut r = Reader::new(name, params);
    let d = r.dim()?;
    let set = match name {
        "brownian" => {
            let c = r.vector_or_zero("drift", d)?;
            regular_set(name, params, d, linear_drift(c, 0.0))?
        }
        "ornstein_uhlenbeck" => {
            let theta = positive("theta", r.number_or("theta", 1.0)?)?;
            let c = r.vector_or_zero("drift", d)?;
            regular_set(name, params, d, linear_drift(c, theta))?
        }
        "radial_degenerate" => radial(&mut r, name, params, d)?,
        "piecewise_weight" => piecewise(&mut r, name, params, d)?,
        "hyperplane_jump" => hyperplane(&mut r, name, params, d)?,
        "cubic_drift" => {
            let k = positive("strength", r.number_or("strength", 1.0)?)?;
            let g: FieldFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                for i in 0..out.len() {
                    out[i] = k * x[i] * r2;
                }
            });
            regular_set(name, params, d, g)?
        }
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    r.finish()?;
    Ok(set)
}

/// `1/ψ(x) = ‖x‖^α/φ` off the origin, and `γ²/φ` at the origin (so
/// `√(1/ψ) = f_γ/√φ` with `f_γ(0) = γ`).
fn radial(r: &mut Reader, name: &str, params: &Params, d: usize) -> Result<CoefficientSet> {
    let alpha = match r.number("alpha")? {
        Some(a) => positive("alpha", a)?,
        None => return Err(Error::param("alpha", "required for radial_degenerate")),
    };
    let phi = positive("phi", r.number_or("phi", 1.0)?)?;
    let gamma = nonnegative("gamma", r.number_or("gamma", 0.0)?)?;
    let theta = nonnegative("theta", r.number_or("theta", 0.0)?)?;
    let c = r.vector_or_zero("drift", d)?;
    let window = crate::conditions::exponent_window(d, alpha);
    let q = match r.number("q")? {
        Some(q) => positive("q", q)?,
        None if !window.empty => 0.5 * (window.q_low + window.q_high),
        // declared honestly: ψ ∈ L^q_loc only for q < d/α
        None => 0.999 * window.q_high,
    };
    if q >= d as f64 / alpha {
        return Err(Error::param(
            "q",
            format!(
                "ψ = φ‖x‖^(-α) is not in L^q_loc for q >= d/α = {}",
                d as f64 / alpha
            ),
        ));
    }

    let at_origin = gamma * gamma / phi;
    let inv = InverseWeight::new(
        Arc::new(move |x: &[f64]| {
            let r = scaled_norm(x);
            if r == 0.0 {
                at_origin
            } else {
                r.powf(alpha) / phi
            }
        }),
        gamma == 0.0,
        format!("gamma={gamma}"),
    );
    let drift = linear_drift(c.clone(), theta);
    let psi_drift: FieldFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let r = scaled_norm(x);
        let w = if r == 0.0 {
            if at_origin > 0.0 {
                1.0 / at_origin
            } else {
                0.0
            }
        } else {
            phi * r.powf(-alpha)
        };
        for k in 0..out.len() {
            out[k] = w * (c[k] - theta * x[k]);
        }
    });
    CoefficientSet::builder(d)
        .name(name)
        .params(params.clone())
        .inverse_weight(inv)
        .drift(drift)
        .psi_drift(psi_drift)
        .exponents(Exponents {
            p: (2 * d + 2) as f64,
            q,
            s: None,
            drift_locally_bounded: true,
        })
        .build()
}

/// Euclidean norm without underflow, so that only the origin maps to 0.
fn scaled_norm(x: &[f64]) -> f64 {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * x.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt()
}

fn piecewise(r: &mut Reader, name: &str, params: &Params, d: usize) -> Result<CoefficientSet> {
    let cells = r.cells("cells")?;
    let default = positive("default", r.number_or("default", 1.0)?)?;
    let theta = nonnegative("theta", r.number_or("theta", 0.0)?)?;
    let c = r.vector_or_zero("drift", d)?;
    for (i, cell) in cells.iter().enumerate() {
        if cell.lower.len() != d || cell.upper.len() != d {
            return Err(Error::param(
                "cells",
                format!("cell {i} has wrong dimension"),
            ));
        }
        if cell.lower.iter().zip(&cell.upper).any(|(l, u)| !(l < u)) {
            return Err(Error::param("cells", format!("cell {i} is empty")));
        }
        if !(cell.value > 0.0 && cell.value.is_finite()) {
            return Err(Error::param(
                "cells",
                format!("cell {i}: value of √(1/ψ) must be finite and > 0"),
            ));
        }
    }
    let inv = InverseWeight::new(
        Arc::new(move |x: &[f64]| {
            let v = cells
                .iter()
                .find(|c| c.contains(x))
                .map(|c| c.value)
                .unwrap_or(default);
            v * v
        }),
        false,
        "piecewise",
    );
    CoefficientSet::builder(d)
        .name(name)
        .params(params.clone())
        .inverse_weight(inv)
        .drift(linear_drift(c, theta))
        .build()
}

/// `√(1/ψ)` and `G` jump across `{x₁ = 0}`; the right half-space is closed.
fn hyperplane(r: &mut Reader, name: &str, params: &Params, d: usize) -> Result<CoefficientSet> {
    let left = positive("left", r.number_or("left", 1.0)?)?;
    let right = positive("right", r.number_or("right", 2.0)?)?;
    let theta = nonnegative("theta", r.number_or("theta", 1.0)?)?;
    let c = r.vector_or_zero("drift", d)?;
    let jump = r.vector_or_zero("drift_right", d)?;
    let (wl, wr) = (left * left, right * right);
    let inv = InverseWeight::new(
        Arc::new(move |x: &[f64]| if x[0] >= 0.0 { wr } else { wl }),
        false,
        "hyperplane",
    );
    let drift: FieldFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let on_right = x[0] >= 0.0;
        for k in 0..out.len() {
            out[k] = c[k] - theta * x[k] + if on_right { jump[k] } else { 0.0 };
        }
    });
    CoefficientSet::builder(d)
        .name(name)
        .params(params.clone())
        .inverse_weight(inv)
        .drift(drift)
        .build()
}
