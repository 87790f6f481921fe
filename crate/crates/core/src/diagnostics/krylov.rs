use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mean_stderr;
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::report::{num, Clause, DiagnosticReport};
use crate::simulator::{simulate_observed, PathObserver, SimConfig};

pub type SpaceTimeScalar = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// A named integrand `f(x, t)`.
#[derive(Clone)]
pub struct SpaceTimeFn {
    pub name: String,
    pub f: SpaceTimeScalar,
}

impl SpaceTimeFn {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.f)(x, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovOptions {
    /// Midpoint cells per axis of `[−R, R]^d` for the norm quadrature.
    pub space_cells: usize,
    pub time_cells: usize,
    /// Scale used for the homogeneity check.
    pub lambda: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            space_cells: 400,
            time_cells: 32,
            lambda: 3.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovAudit {
    pub name: String,
    /// Mean of `∫₀^{T∧D_R} f(X_s, s) ds`.
    pub estimate: f64,
    pub stderr: f64,
    /// `‖f‖_{L^{2d+2,d+1}(B_R×(0,T))}`.
    pub f_norm: f64,
    #[serde(with = "num")]
    pub ratio: f64,
    /// `|ratio(λf)/ratio(f) − 1|` on the same paths.
    pub homogeneity_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovRun {
    pub audits: Vec<KrylovAudit>,
    #[serde(with = "num")]
    pub c_hat: f64,
    pub dt: f64,
    pub occupation_exact_max: f64,
    pub exited_fraction: f64,
    pub seed: u64,
}

/// `(∫₀^T (∫_{B_R} |f|^p dx)^{q/p} dt)^{1/q}` with `p = 2d+2`, `q = d+1`,
/// by tensor midpoint quadrature.
pub fn mixed_norm(f: &SpaceTimeFn, d: usize, radius: f64, t_end: f64, opts: &KrylovOptions) -> Result<f64> {
    let n = opts.space_cells.max(1);
    let cells = (n as f64).powi(d as i32);
    if cells > 5e7 {
        return Err(Error::Unsupported(format!(
            "{n}^{d} quadrature cells is too many; lower space_cells"
        )));
    }
    let (p, q) = ((2 * d + 2) as f64, (d + 1) as f64);
    let h = 2.0 * radius / n as f64;
    let vol = h.powi(d as i32);
    let ht = t_end / opts.time_cells.max(1) as f64;
    let total = cells as usize;
    // ball midpoints, computed once
    let mut pts = Vec::new();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    for _ in 0..total {
        for k in 0..d {
            x[k] = -radius + (idx[k] as f64 + 0.5) * h;
        }
        if crate::linalg::norm(&x) < radius {
            pts.extend_from_slice(&x);
        }
        for k in 0..d {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
    // compensated sums keep the norm homogeneous to rounding level
    let mut acc = Kahan::default();
    for j in 0..opts.time_cells.max(1) {
        let t = (j as f64 + 0.5) * ht;
        let mut s = Kahan::default();
        for y in pts.chunks(d) {
            let v = f.eval(y, t);
            if !v.is_finite() {
                return Err(Error::Unbounded(format!("{} is not finite at t = {t}", f.name)));
            }
            s.add(v.abs().powf(p));
        }
        acc.add((s.sum * vol).powf(q / p) * ht);
    }
    Ok(acc.sum.powf(1.0 / q))
}

#[derive(Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

struct Trapezoid<'a> {
    fns: &'a [SpaceTimeFn],
    lambda: f64,
}

/// Per function: compensated running sum, first and latest value, for `f`
/// then `λf`.
type TrapAcc = Vec<[f64; 4]>;

impl PathObserver for Trapezoid<'_> {
    type Acc = TrapAcc;

    fn start(&self, _: usize) -> TrapAcc {
        vec![[0.0; 4]; 2 * self.fns.len()]
    }

    fn visit(&self, acc: &mut TrapAcc, step: usize, t: f64, x: &[f64]) {
        for (i, f) in self.fns.iter().enumerate() {
            let v = f.eval(x, t);
            for (slot, val) in [(2 * i, v), (2 * i + 1, self.lambda * v)] {
                let a = &mut acc[slot];
                let y = val - a[3];
                let t = a[0] + y;
                a[3] = (t - a[0]) - y;
                a[0] = t;
                if step == 0 {
                    a[1] = val;
                }
                a[2] = val;
            }
        }
    }
}

/// Monte-Carlo `E_x[∫₀^{T∧D_R} f(X_s,s) ds]` against `‖f‖_{L^{2d+2,d+1}}` for
/// each function, with a homogeneity check on the same paths.
pub fn krylov_audit(
    c: &CoefficientSet,
    x0: &[f64],
    radius: f64,
    t_end: f64,
    dictionary: &[SpaceTimeFn],
    cfg: &SimConfig,
    opts: &KrylovOptions,
) -> Result<KrylovRun> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::param("R", "must be positive and finite"));
    }
    if !(opts.lambda > 0.0) {
        return Err(Error::param("lambda", "must be positive"));
    }
    let mut cfg = cfg.clone();
    cfg.r_exit = Some(radius);
    cfg.t_end = t_end;
    cfg.record_stride = cfg.n_steps()?;
    let obs = Trapezoid {
        fns: dictionary,
        lambda: opts.lambda,
    };
    let (ens, accs) = simulate_observed(c, x0, &cfg, &obs)?;
    let d = c.d();
    let mut audits = Vec::with_capacity(dictionary.len());
    for (i, f) in dictionary.iter().enumerate() {
        let integral = |slot: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = accs
                .iter()
                .map(|a| {
                    let [s, first, last, _] = a[slot];
                    cfg.dt * (s - 0.5 * (first + last))
                })
                .collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Unbounded("non-finite path integral".into()));
            }
            Ok(v)
        };
        let (est, se) = mean_stderr(&integral(2 * i)?);
        let (est_l, _) = mean_stderr(&integral(2 * i + 1)?);
        let norm = mixed_norm(f, d, radius, t_end, opts)?;
        let fl = SpaceTimeFn {
            name: f.name.clone(),
            f: {
                let g = f.f.clone();
                let l = opts.lambda;
                Arc::new(move |x: &[f64], t: f64| l * g(x, t))
            },
        };
        let norm_l = mixed_norm(&fl, d, radius, t_end, opts)?;
        let ratio_of = |e: f64, n: f64| {
            if n > 0.0 {
                e / n
            } else if e == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        };
        let r = ratio_of(est, norm);
        let rl = ratio_of(est_l, norm_l);
        let hom = if r == 0.0 && rl == 0.0 {
            0.0
        } else {
            (rl / r - 1.0).abs()
        };
        audits.push(KrylovAudit {
            name: f.name.clone(),
            estimate: est,
            stderr: se,
            f_norm: norm,
            ratio: r,
            homogeneity_error: hom,
        });
    }
    let c_hat = audits.iter().map(|a| a.ratio).fold(0.0, f64::max);
    let exited = ens.exit_step.iter().filter(|e| e.is_some()).count() as f64 / ens.n_paths() as f64;
    Ok(KrylovRun {
        audits,
        c_hat,
        dt: cfg.dt,
        occupation_exact_max: ens.occupation_exact.iter().copied().fold(0.0, f64::max),
        exited_fraction: exited,
        seed: cfg.master_seed,
    })
}

/// Finite ratios and homogeneity to `hom_tol`.
pub fn krylov_report(run: &KrylovRun, hom_tol: f64) -> DiagnosticReport {
    let mut r = DiagnosticReport::new("krylov_audit");
    for a in &run.audits {
        r.clause(Clause::new(format!("ratio_finite.{}", a.name), a.ratio.is_finite(), format!("ratio {}", a.ratio)).with_value(a.ratio));
        r.clause(Clause::at_most(format!("homogeneity.{}", a.name), a.homogeneity_error, hom_tol));
        r.metric(format!("estimate.{}", a.name), a.estimate);
        r.metric(format!("stderr.{}", a.name), a.stderr);
        r.metric(format!("f_norm.{}", a.name), a.f_norm);
        r.metric(format!("ratio.{}", a.name), a.ratio);
    }
    r.metric("c_hat", run.c_hat);
    r.metric("occupation_exact_max", run.occupation_exact_max);
    r.metric("exited_fraction", run.exited_fraction);
    r.tolerance("homogeneity", hom_tol);
    r.seeds.push(run.seed);
    r.finish()
}

/// Ratios of several runs (e.g. different `dt`) must agree within a factor
/// `max_factor`, function by function. Functions with all ratios zero pass.
pub fn krylov_dt_stability(runs: &[KrylovRun], max_factor: f64) -> DiagnosticReport {
    let mut r = DiagnosticReport::new("krylov_dt_stability");
    if let Some(first) = runs.first() {
        for (i, a) in first.audits.iter().enumerate() {
            let vals: Vec<f64> = runs.iter().map(|run| run.audits[i].ratio).collect();
            let hi = vals.iter().copied().fold(0.0, f64::max);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let factor = if hi == 0.0 { 1.0 } else { hi / lo };
            r.clause(Clause::at_most(format!("ratio_spread.{}", a.name), factor, max_factor));
        }
    }
    for run in runs {
        r.metric(format!("c_hat.dt={}", run.dt), run.c_hat);
        r.seeds.push(run.seed);
    }
    r.tolerance("max_factor", max_factor);
    r.finish()
}
