//! SDE coefficients `(A, σ, 1/ψ, G)` and their pointwise audits.
//!
//! The dispersion actually driving the SDE is `σ̂ = √(1/ψ)·σ`. All
//! degeneracy lives in the chosen Borel representative of `1/ψ`; `A` itself
//! must stay locally uniformly strictly elliptic.

mod families;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use families::{builtin_family, ParamValue, Params, WeightCell, FAMILY_NAMES};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::report::{Clause, DiagnosticReport};
use crate::rng::{derive_seed, NormalStream};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes a vector (drift, `∇A`) or a row-major matrix into `out`.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A fixed Borel version of `1/ψ` with values in `[0, ∞)`.
#[derive(Clone)]
pub struct InverseWeight {
    eval: ScalarFn,
    may_vanish: bool,
    tag: String,
}

impl InverseWeight {
    /// `may_vanish` declares whether the zero set is non-empty; membership
    /// itself is always the exact test `eval(x) == 0`.
    pub fn new(eval: ScalarFn, may_vanish: bool, tag: impl Into<String>) -> Self {
        Self {
            eval,
            may_vanish,
            tag: tag.into(),
        }
    }

    pub fn constant(v: f64) -> Self {
        assert!(v > 0.0 && v.is_finite());
        Self::new(Arc::new(move |_| v), false, "constant")
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    #[inline]
    pub fn in_null_set(&self, x: &[f64]) -> bool {
        self.eval(x) == 0.0
    }

    /// `ψ(x) = 1/eval(x)`, `+∞` on the null set.
    #[inline]
    pub fn psi(&self, x: &[f64]) -> f64 {
        let w = self.eval(x);
        if w > 0.0 {
            1.0 / w
        } else {
            f64::INFINITY
        }
    }

    pub fn may_vanish(&self) -> bool {
        self.may_vanish
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }
}

impl std::fmt::Debug for InverseWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InverseWeight")
            .field("tag", &self.tag)
            .field("may_vanish", &self.may_vanish)
            .finish()
    }
}

/// Continuous `σ: ℝ^d → ℝ^{d×m}`, row-major.
#[derive(Clone)]
pub struct DispersionFactor {
    pub d: usize,
    pub m: usize,
    sigma: FieldFn,
}

impl DispersionFactor {
    pub fn new(d: usize, m: usize, sigma: FieldFn) -> Self {
        Self { d, m, sigma }
    }

    pub fn constant(d: usize, m: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), d * m);
        Self::new(
            d,
            m,
            Arc::new(move |_, out: &mut [f64]| out.copy_from_slice(&entries)),
        )
    }

    pub fn identity(d: usize) -> Self {
        Self::constant(d, d, identity_entries(d, 1.0))
    }

    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.sigma)(x, out)
    }
}

/// Symmetric `A: ℝ^d → ℝ^{d×d}` with its row divergence
/// `∇A = (Σ_j ∂_j a_{1j}, …, Σ_j ∂_j a_{dj})`.
#[derive(Clone)]
pub struct DiffusionMatrix {
    pub d: usize,
    a: FieldFn,
    grad_row_div: Option<FieldFn>,
    diagonal: bool,
}

impl DiffusionMatrix {
    /// `diagonal` declares that off-diagonal entries vanish identically.
    pub fn new(d: usize, a: FieldFn, grad_row_div: Option<FieldFn>, diagonal: bool) -> Self {
        Self {
            d,
            a,
            grad_row_div,
            diagonal,
        }
    }

    pub fn constant(d: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), d * d);
        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || entries[i * d + j] == 0.0));
        Self::new(
            d,
            Arc::new(move |_, out: &mut [f64]| out.copy_from_slice(&entries)),
            Some(Arc::new(|_, out: &mut [f64]| out.fill(0.0))),
            diagonal,
        )
    }

    pub fn identity(d: usize) -> Self {
        Self::constant(d, identity_entries(d, 1.0))
    }

    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.a)(x, out)
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.grad_row_div.is_some()
    }

    /// Row divergence of `A`; centred differences with step
    /// `1e-5·(1 + ‖x‖)` when no analytic form was supplied.
    pub fn grad_row_div(&self, x: &[f64], out: &mut [f64]) {
        if let Some(g) = &self.grad_row_div {
            g(x, out);
            return;
        }
        let d = self.d;
        let h = 1e-5 * (1.0 + norm(x));
        let mut xp = x.to_vec();
        let mut ap = vec![0.0; d * d];
        let mut am = vec![0.0; d * d];
        out.fill(0.0);
        for j in 0..d {
            xp[j] = x[j] + h;
            self.eval(&xp, &mut ap);
            xp[j] = x[j] - h;
            self.eval(&xp, &mut am);
            xp[j] = x[j];
            for i in 0..d {
                out[i] += (ap[i * d + j] - am[i * d + j]) / (2.0 * h);
            }
        }
    }
}

/// Declared integrability classes: `A ∈ H^{1,p}_loc`, `ψ ∈ L^q_loc`, the
/// auxiliary exponent `s`, and local boundedness of `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub p: f64,
    /// `f64::INFINITY` when `ψ` is locally bounded.
    pub q: f64,
    pub s: Option<f64>,
    pub drift_locally_bounded: bool,
}

impl Exponents {
    /// Classes of smooth coefficients with locally bounded `ψ` and `G`.
    pub fn regular(d: usize) -> Self {
        Self {
            p: (2 * d + 2) as f64,
            q: f64::INFINITY,
            s: None,
            drift_locally_bounded: true,
        }
    }
}

/// One SDE instance `dX = σ̂(X) dW + G(X) dt`.
#[derive(Clone)]
pub struct CoefficientSet {
    pub name: String,
    pub params: Params,
    pub matrix: DiffusionMatrix,
    pub factor: DispersionFactor,
    pub inv_weight: InverseWeight,
    drift: FieldFn,
    psi_drift: FieldFn,
    pub exponents: Exponents,
}

impl std::fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("d", &self.d())
            .field("m", &self.m())
            .field("inv_weight", &self.inv_weight)
            .field("exponents", &self.exponents)
            .finish()
    }
}

impl CoefficientSet {
    /// Starts from the Brownian defaults `A = σ = I`, `1/ψ ≡ 1`, `G ≡ 0`.
    pub fn builder(d: usize) -> CoefficientBuilder {
        CoefficientBuilder {
            d,
            name: "custom".into(),
            params: Params::new(),
            matrix: DiffusionMatrix::identity(d),
            factor: DispersionFactor::identity(d),
            inv_weight: InverseWeight::constant(1.0),
            drift: Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
            psi_drift: None,
            exponents: Exponents::regular(d),
        }
    }

    pub fn d(&self) -> usize {
        self.matrix.d
    }

    pub fn m(&self) -> usize {
        self.factor.m
    }

    #[inline]
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    /// `ψG`, the datum entering the stationary equation; finite even where
    /// `ψ` is singular.
    #[inline]
    pub fn psi_drift(&self, x: &[f64], out: &mut [f64]) {
        (self.psi_drift)(x, out)
    }

    /// `σ̂(x) = √(1/ψ(x))·σ(x)` into `out` (row-major `d×m`).
    #[inline]
    pub fn sigma_hat_into(&self, x: &[f64], out: &mut [f64]) {
        let w = self.inv_weight.eval(x);
        if w == 0.0 {
            out.fill(0.0);
            return;
        }
        self.factor.eval(x, out);
        let r = w.sqrt();
        for v in out.iter_mut() {
            *v *= r;
        }
    }

    /// Same coefficients with a different representative of `1/ψ`.
    pub fn with_inverse_weight(mut self, w: InverseWeight) -> Self {
        self.inv_weight = w;
        self
    }
}

pub struct CoefficientBuilder {
    d: usize,
    name: String,
    params: Params,
    matrix: DiffusionMatrix,
    factor: DispersionFactor,
    inv_weight: InverseWeight,
    drift: FieldFn,
    psi_drift: Option<FieldFn>,
    exponents: Exponents,
}

impl CoefficientBuilder {
    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
    pub fn params(mut self, params: Params) -> Self {
        self.params = params;
        self
    }
    pub fn diffusion(mut self, m: DiffusionMatrix) -> Self {
        self.matrix = m;
        self
    }
    pub fn dispersion(mut self, f: DispersionFactor) -> Self {
        self.factor = f;
        self
    }
    pub fn inverse_weight(mut self, w: InverseWeight) -> Self {
        self.inv_weight = w;
        self
    }
    pub fn drift(mut self, g: FieldFn) -> Self {
        self.drift = g;
        self
    }
    /// Supplies `ψG` directly (needed where `ψ` is singular).
    pub fn psi_drift(mut self, g: FieldFn) -> Self {
        self.psi_drift = Some(g);
        self
    }
    pub fn exponents(mut self, e: Exponents) -> Self {
        self.exponents = e;
        self
    }

    pub fn build(self) -> Result<CoefficientSet> {
        let d = self.d;
        if d < 2 {
            return Err(Error::param("d", "spatial dimension must be at least 2"));
        }
        if self.matrix.d != d || self.factor.d != d {
            return Err(Error::DimensionMismatch(format!(
                "A is {0}×{0}, σ has {1} rows, expected d = {d}",
                self.matrix.d, self.factor.d
            )));
        }
        if self.factor.m == 0 {
            return Err(Error::param("m", "noise dimension must be at least 1"));
        }
        if !(self.exponents.p > d as f64) {
            return Err(Error::param("p", format!("need p > d = {d}")));
        }
        let psi_drift = match self.psi_drift {
            Some(g) => g,
            None => {
                // ψG = G / (1/ψ); on the null set the value is immaterial
                // (Lebesgue-null) and set to 0.
                let drift = self.drift.clone();
                let w = self.inv_weight.clone();
                Arc::new(move |x: &[f64], out: &mut [f64]| {
                    drift(x, out);
                    let iw = w.eval(x);
                    if iw > 0.0 {
                        for v in out.iter_mut() {
                            *v /= iw;
                        }
                    } else {
                        out.fill(0.0);
                    }
                }) as FieldFn
            }
        };
        Ok(CoefficientSet {
            name: self.name,
            params: self.params,
            matrix: self.matrix,
            factor: self.factor,
            inv_weight: self.inv_weight,
            drift: self.drift,
            psi_drift,
            exponents: self.exponents,
        })
    }
}

pub(crate) fn identity_entries(d: usize, v: f64) -> Vec<f64> {
    let mut e = vec![0.0; d * d];
    for i in 0..d {
        e[i * d + i] = v;
    }
    e
}

/// `σ̂(x)` as a row-major `d×m` matrix; exactly zero on the null set.
pub fn eval_sigma_hat(c: &CoefficientSet, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; c.d() * c.m()];
    c.sigma_hat_into(x, &mut out);
    out
}

/// Max over probes of `‖A(x) − σ(x)σ(x)ᵀ‖_∞` (largest entry).
pub fn check_factorization(c: &CoefficientSet, probes: &[Vec<f64>], tol: f64) -> DiagnosticReport {
    let (d, m) = (c.d(), c.m());
    let mut rep = DiagnosticReport::new("factorization");
    rep.tolerance("tol", tol);
    if probes.is_empty() {
        rep.clause(Clause::new(
            "probes_nonempty",
            false,
            "no probe points supplied",
        ));
        return rep.finish();
    }
    let mut a = vec![0.0; d * d];
    let mut s = vec![0.0; d * m];
    let mut worst = 0.0f64;
    let mut worst_at = 0usize;
    let mut violations = Vec::new();
    for (pi, x) in probes.iter().enumerate() {
        c.matrix.eval(x, &mut a);
        c.factor.eval(x, &mut s);
        let mut err = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let sst: f64 = (0..m).map(|k| s[i * m + k] * s[j * m + k]).sum();
                err = err.max((a[i * d + j] - sst).abs());
            }
        }
        if !err.is_finite() {
            err = f64::INFINITY;
        }
        if err > tol {
            violations.push(pi);
        }
        if err > worst || pi == 0 {
            worst = err;
            worst_at = pi;
        }
    }
    rep.metric("max_error", worst);
    rep.metric("violations", violations.len() as f64);
    let mut cl = Clause::at_most("A_equals_sigma_sigmaT", worst, tol);
    if !violations.is_empty() {
        let shown: Vec<String> = violations
            .iter()
            .take(8)
            .map(|&i| format!("{:?}", probes[i]))
            .collect();
        cl.detail = format!(
            "max error {worst:.3e} at {:?}; {} of {} probes violate tol (first: {})",
            probes[worst_at],
            violations.len(),
            probes.len(),
            shown.join(", ")
        );
    }
    rep.clause(cl);
    rep.finish()
}

/// Sampled `(λ̂_B, Λ̂_B)`: extremes of `⟨A(x)ξ, ξ⟩` over `x` uniform in the
/// ball and `ξ` uniform on the unit sphere.
pub fn estimate_ellipticity(
    c: &CoefficientSet,
    center: &[f64],
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let d = c.d();
    if center.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "center has {} entries, d = {d}",
            center.len()
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::param("radius", "must be positive"));
    }
    if n_samples == 0 {
        return Err(Error::param("n_samples", "must be at least 1"));
    }
    let mut stream = NormalStream::new(derive_seed(seed, 0xE111), 0, 1);
    let mut a = vec![0.0; d * d];
    let mut x = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut ax = vec![0.0; d];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..n_samples {
        sample_ball(&mut stream, center, radius, &mut x);
        sample_sphere(&mut stream, &mut xi);
        c.matrix.eval(&x, &mut a);
        crate::linalg::mat_vec(&a, &xi, &mut ax);
        let q = crate::linalg::dot(&ax, &xi);
        lo = lo.min(q);
        hi = hi.max(q);
    }
    if !(lo > 0.0) {
        return Err(Error::DegenerateMatrix(lo));
    }
    Ok((lo, hi))
}

pub(crate) fn sample_sphere(s: &mut NormalStream, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = s.next_normal();
        }
        let r = norm(out);
        if r > 1e-300 {
            for v in out.iter_mut() {
                *v /= r;
            }
            return;
        }
    }
}

pub(crate) fn sample_ball(s: &mut NormalStream, center: &[f64], radius: f64, out: &mut [f64]) {
    let d = center.len();
    sample_sphere(s, out);
    let r = radius * s.next_uniform().powf(1.0 / d as f64);
    for k in 0..d {
        out[k] = center[k] + r * out[k];
    }
}

/// Samples `n` points uniformly in the box and counts where the two
/// representatives disagree.
pub fn representatives_disagreement(
    a: &InverseWeight,
    b: &InverseWeight,
    lower: &[f64],
    upper: &[f64],
    n: usize,
    seed: u64,
) -> usize {
    let d = lower.len();
    let mut s = NormalStream::new(derive_seed(seed, 0xA6EE), 0, 1);
    let mut x = vec![0.0; d];
    let mut bad = 0;
    for _ in 0..n {
        for k in 0..d {
            x[k] = lower[k] + (upper[k] - lower[k]) * s.next_uniform();
        }
        if a.eval(&x) != b.eval(&x) {
            bad += 1;
        }
    }
    bad
}
