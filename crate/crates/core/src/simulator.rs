//! Euler–Maruyama ensembles `X_{k+1} = X_k + σ̂(X_k)√Δt ξ_k + G(X_k)Δt`.
//!
//! Each path draws from its own keystream (see [`crate::rng`]), so an
//! ensemble is a pure function of `(coefficients, x0, config)` whatever the
//! worker count. Paths are frozen once `‖X‖ ≥ R_exit`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::rng::NormalStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub r_exit: Option<f64>,
    #[serde(default)]
    pub near_degeneracy_eps: f64,
    /// Keep every `record_stride`-th state (must divide the step count).
    #[serde(default = "one")]
    pub record_stride: usize,
    /// Extra thresholds with online near-null occupation tallies.
    #[serde(default)]
    pub profile_eps: Vec<f64>,
}

impl SimConfig {
    pub fn new(dt: f64, t_end: f64, n_paths: usize, master_seed: u64) -> Self {
        Self {
            dt,
            t_end,
            n_paths,
            master_seed,
            scheme: Scheme::EulerMaruyama,
            r_exit: None,
            near_degeneracy_eps: 0.0,
            record_stride: 1,
            profile_eps: Vec::new(),
        }
    }

    /// Records only the initial and the final state.
    pub fn endpoints_only(mut self) -> Self {
        self.record_stride = self.n_steps().unwrap_or(1).max(1);
        self
    }

    /// Number of steps; errors unless `T/dt` is an integer.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidConfig(format!("t_end must be positive, got {}", self.t_end)));
        }
        let r = self.t_end / self.dt;
        let n = r.round();
        if n < 1.0 || (r - n).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "t_end/dt = {r} is not a positive integer"
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<usize> {
        let n = self.n_steps()?;
        if self.n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
        }
        if let Some(r) = self.r_exit {
            if !(r > 0.0) || r.is_nan() {
                return Err(Error::InvalidConfig("r_exit must be positive".into()));
            }
        }
        if !(self.near_degeneracy_eps >= 0.0) || self.profile_eps.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::InvalidConfig("occupation thresholds must be >= 0".into()));
        }
        if self.record_stride == 0 || n % self.record_stride != 0 {
            return Err(Error::InvalidConfig(format!(
                "record_stride {} must divide the step count {n}",
                self.record_stride
            )));
        }
        Ok(n)
    }
}

/// Receives each visited state `X_k`, `k = 0, …, min(exit, n_steps)`.
pub trait PathObserver: Sync {
    type Acc: Send;
    fn start(&self, path: usize) -> Self::Acc;
    fn visit(&self, acc: &mut Self::Acc, step: usize, t: f64, x: &[f64]);
}

pub struct NoObserver;

impl PathObserver for NoObserver {
    type Acc = ();
    fn start(&self, _: usize) {}
    fn visit(&self, _: &mut (), _: usize, _: f64, _: &[f64]) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub d: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub record_stride: usize,
    pub x0: Vec<f64>,
    pub master_seed: u64,
    pub r_exit: Option<f64>,
    /// `[path][record][d]`, row-major.
    pub states: Vec<f64>,
    /// First step with `‖X_k‖ ≥ R_exit` (also set on explosion).
    pub exit_step: Vec<Option<usize>>,
    /// Step at which the update became non-finite.
    pub exploded: Vec<Option<usize>>,
    /// `Δt·#{k : 1/ψ(X_k) = 0}` over left points before exit.
    pub occupation_exact: Vec<f64>,
    /// `Δt·#{k : 1/ψ(X_k) < ε or = 0}` with `ε = near_eps`.
    pub occupation_near: Vec<f64>,
    pub near_eps: f64,
    pub profile_eps: Vec<f64>,
    /// `[path][i]`: near occupation at `profile_eps[i]`.
    pub occupation_profile: Vec<Vec<f64>>,
    /// Substream id of each path.
    pub streams: Vec<u64>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.exit_step.len()
    }

    pub fn n_records(&self) -> usize {
        self.n_steps / self.record_stride + 1
    }

    pub fn record_time(&self, r: usize) -> f64 {
        (r * self.record_stride) as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_records()).map(|r| self.record_time(r)).collect()
    }

    pub fn state(&self, path: usize, record: usize) -> &[f64] {
        let o = (path * self.n_records() + record) * self.d;
        &self.states[o..o + self.d]
    }

    pub fn record_index(&self, t: f64) -> Result<usize> {
        let k = t / (self.dt * self.record_stride as f64);
        let r = k.round();
        if r < 0.0 || r as usize >= self.n_records() || (k - r).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::param("t", format!("t = {t} is not a recorded time")));
        }
        Ok(r as usize)
    }

    /// States at time `t` as an `n_paths × d` row-major array.
    pub fn marginal(&self, t: f64) -> Result<Vec<f64>> {
        let r = self.record_index(t)?;
        let mut out = Vec::with_capacity(self.n_paths() * self.d);
        for p in 0..self.n_paths() {
            out.extend_from_slice(self.state(p, r));
        }
        Ok(out)
    }

    pub fn final_states(&self) -> Vec<f64> {
        self.marginal(self.record_time(self.n_records() - 1))
            .expect("final record exists")
    }

    pub fn exploded_count(&self) -> usize {
        self.exploded.iter().filter(|e| e.is_some()).count()
    }
}

struct PathOut<A> {
    states: Vec<f64>,
    exit: Option<usize>,
    exploded: Option<usize>,
    exact: usize,
    near: usize,
    profile: Vec<usize>,
    acc: A,
}

fn run_path<O: PathObserver>(
    c: &CoefficientSet,
    x0: &[f64],
    cfg: &SimConfig,
    n_steps: usize,
    path: usize,
    obs: &O,
) -> PathOut<O::Acc> {
    let (d, m) = (c.d(), c.m());
    let sq = cfg.dt.sqrt();
    let mut stream = NormalStream::new(cfg.master_seed, path as u64, m);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut sig = vec![0.0; d * m];
    let mut g = vec![0.0; d];
    let mut xi = vec![0.0; m];
    let n_rec = n_steps / cfg.record_stride + 1;
    let mut states = Vec::with_capacity(n_rec * d);
    states.extend_from_slice(&x);
    let mut acc = obs.start(path);
    obs.visit(&mut acc, 0, 0.0, &x);
    let mut exit = match cfg.r_exit {
        Some(r) if norm(&x) >= r => Some(0),
        _ => None,
    };
    let mut exploded = None;
    let (mut exact, mut near) = (0usize, 0usize);
    let mut profile = vec![0usize; cfg.profile_eps.len()];
    for k in 0..n_steps {
        if exit.is_none() {
            let w = c.inv_weight.eval(&x);
            if w == 0.0 {
                exact += 1;
            }
            if w == 0.0 || w < cfg.near_degeneracy_eps {
                near += 1;
            }
            for (cnt, eps) in profile.iter_mut().zip(&cfg.profile_eps) {
                if w == 0.0 || w < *eps {
                    *cnt += 1;
                }
            }
            c.sigma_hat_into(&x, &mut sig);
            c.drift(&x, &mut g);
            stream.fill(&mut xi);
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..m {
                    s += sig[i * m + j] * xi[j];
                }
                next[i] = x[i] + s * sq + g[i] * cfg.dt;
            }
            if next.iter().all(|v| v.is_finite()) {
                x.copy_from_slice(&next);
                obs.visit(&mut acc, k + 1, (k + 1) as f64 * cfg.dt, &x);
                if let Some(r) = cfg.r_exit {
                    if norm(&x) >= r {
                        exit = Some(k + 1);
                    }
                }
            } else {
                exploded = Some(k + 1);
                exit = Some(k + 1);
            }
        }
        if (k + 1) % cfg.record_stride == 0 {
            states.extend_from_slice(&x);
        }
    }
    PathOut {
        states,
        exit,
        exploded,
        exact,
        near,
        profile,
        acc,
    }
}

pub fn simulate_ensemble(c: &CoefficientSet, x0: &[f64], cfg: &SimConfig) -> Result<PathEnsemble> {
    Ok(simulate_observed(c, x0, cfg, &NoObserver)?.0)
}

/// Simulates and hands every visited state to `obs`; accumulators are
/// returned in path order.
pub fn simulate_observed<O: PathObserver>(
    c: &CoefficientSet,
    x0: &[f64],
    cfg: &SimConfig,
    obs: &O,
) -> Result<(PathEnsemble, Vec<O::Acc>)> {
    let n_steps = cfg.validate()?;
    let d = c.d();
    if x0.len() != d {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, d = {d}", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("x0", "must be finite"));
    }
    let outs: Vec<PathOut<O::Acc>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| run_path(c, x0, cfg, n_steps, p, obs))
        .collect();
    let n_rec = n_steps / cfg.record_stride + 1;
    let mut ens = PathEnsemble {
        d,
        dt: cfg.dt,
        n_steps,
        record_stride: cfg.record_stride,
        x0: x0.to_vec(),
        master_seed: cfg.master_seed,
        r_exit: cfg.r_exit,
        states: Vec::with_capacity(cfg.n_paths * n_rec * d),
        exit_step: Vec::with_capacity(cfg.n_paths),
        exploded: Vec::with_capacity(cfg.n_paths),
        occupation_exact: Vec::with_capacity(cfg.n_paths),
        occupation_near: Vec::with_capacity(cfg.n_paths),
        near_eps: cfg.near_degeneracy_eps,
        profile_eps: cfg.profile_eps.clone(),
        occupation_profile: Vec::with_capacity(cfg.n_paths),
        streams: (0..cfg.n_paths as u64).collect(),
    };
    let mut accs = Vec::with_capacity(cfg.n_paths);
    for o in outs {
        ens.states.extend_from_slice(&o.states);
        ens.exit_step.push(o.exit);
        ens.exploded.push(o.exploded);
        ens.occupation_exact.push(o.exact as f64 * cfg.dt);
        ens.occupation_near.push(o.near as f64 * cfg.dt);
        ens.occupation_profile
            .push(o.profile.iter().map(|&n| n as f64 * cfg.dt).collect());
        accs.push(o.acc);
    }
    Ok((ens, accs))
}

/// Final states at step sizes `factor·dt` for each factor, all driven by the
/// same fine Brownian increments (common random numbers). Exit radii are
/// ignored. Result: `[level][path·d]`.
pub fn simulate_crn_ladder(
    c: &CoefficientSet,
    x0: &[f64],
    cfg: &SimConfig,
    factors: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let n_steps = cfg.n_steps()?;
    let (d, m) = (c.d(), c.m());
    if x0.len() != d {
        return Err(Error::DimensionMismatch("x0 dimension".into()));
    }
    for &f in factors {
        if f == 0 || n_steps % f != 0 {
            return Err(Error::InvalidConfig(format!(
                "factor {f} does not divide the step count {n_steps}"
            )));
        }
    }
    let per_path: Vec<Vec<Vec<f64>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let sq = cfg.dt.sqrt();
            let mut out = Vec::with_capacity(factors.len());
            let mut sig = vec![0.0; d * m];
            let mut g = vec![0.0; d];
            let mut xi = vec![0.0; m];
            let mut dw = vec![0.0; m];
            for &f in factors {
                let mut stream = NormalStream::new(cfg.master_seed, p as u64, m);
                let h = f as f64 * cfg.dt;
                let mut x = x0.to_vec();
                for _ in 0..n_steps / f {
                    dw.fill(0.0);
                    for _ in 0..f {
                        stream.fill(&mut xi);
                        for j in 0..m {
                            dw[j] += sq * xi[j];
                        }
                    }
                    c.sigma_hat_into(&x, &mut sig);
                    c.drift(&x, &mut g);
                    for i in 0..d {
                        let s: f64 = (0..m).map(|j| sig[i * m + j] * dw[j]).sum();
                        x[i] += s + g[i] * h;
                    }
                }
                out.push(x);
            }
            out
        })
        .collect();
    let mut levels = vec![Vec::with_capacity(cfg.n_paths * d); factors.len()];
    for p in per_path {
        for (l, x) in p.into_iter().enumerate() {
            levels[l].extend_from_slice(&x);
        }
    }
    Ok(levels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitStats {
    #[serde(with = "crate::report::num")]
    pub radius: f64,
    /// Fraction of paths with `D_R ≤ T`.
    pub fraction_exited: f64,
    /// Mean of `T ∧ D_R`.
    pub mean_stopped_time: f64,
    pub stopped_times: Vec<f64>,
}

/// Empirical law of `T ∧ D_R`. Needs either `R = R_exit` of the run or a
/// fully recorded ensemble with `R ≤ R_exit`.
pub fn exit_time_stats(ens: &PathEnsemble, radius: f64) -> Result<ExitStats> {
    if !(radius > 0.0) {
        return Err(Error::param("R", "must be positive"));
    }
    let t_end = ens.n_steps as f64 * ens.dt;
    let n = ens.n_paths();
    let steps: Vec<Option<usize>> = if radius.is_infinite() {
        vec![None; n]
    } else if ens.r_exit == Some(radius) {
        ens.exit_step.clone()
    } else {
        if let Some(r0) = ens.r_exit {
            if radius > r0 {
                return Err(Error::param(
                    "R",
                    format!("paths were frozen at R_exit = {r0} < R = {radius}"),
                ));
            }
        }
        if ens.record_stride != 1 {
            return Err(Error::Unsupported(
                "first passage at a radius other than R_exit needs record_stride = 1".into(),
            ));
        }
        (0..n)
            .map(|p| {
                let hit = (0..ens.n_records()).find(|&k| norm(ens.state(p, k)) >= radius);
                match (hit, ens.exploded[p]) {
                    (Some(k), Some(e)) => Some(k.min(e)),
                    (h, e) => h.or(e),
                }
            })
            .collect()
    };
    let stopped: Vec<f64> = steps
        .iter()
        .map(|s| s.map_or(t_end, |k| (k as f64 * ens.dt).min(t_end)))
        .collect();
    let exited = steps.iter().filter(|s| s.is_some()).count();
    Ok(ExitStats {
        radius,
        fraction_exited: exited as f64 / n as f64,
        mean_stopped_time: stopped.iter().sum::<f64>() / n as f64,
        stopped_times: stopped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationRow {
    pub eps: f64,
    pub mean_occupation: f64,
}

/// Mean near-null occupation for each `ε` (`ε = 0` is the exact tally).
/// Each positive `ε` must have been tallied during the run.
pub fn occupation_profile(ens: &PathEnsemble, eps_list: &[f64]) -> Result<Vec<OccupationRow>> {
    if eps_list.windows(2).any(|w| !(w[0] <= w[1])) || eps_list.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::param("eps_list", "must be sorted ascending and non-negative"));
    }
    let n = ens.n_paths() as f64;
    eps_list
        .iter()
        .map(|&eps| {
            let total: f64 = if eps == 0.0 {
                ens.occupation_exact.iter().sum()
            } else if let Some(i) = ens.profile_eps.iter().position(|e| *e == eps) {
                ens.occupation_profile.iter().map(|p| p[i]).sum()
            } else if eps == ens.near_eps {
                ens.occupation_near.iter().sum()
            } else {
                return Err(Error::Unsupported(format!(
                    "ε = {eps} was not tallied; add it to profile_eps"
                )));
            };
            Ok(OccupationRow {
                eps,
                mean_occupation: total / n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{builtin_family, ParamValue, Params};

    fn fam(name: &str, pairs: &[(&str, f64)]) -> CoefficientSet {
        let p: Params = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), ParamValue::Number(*v)))
            .collect();
        builtin_family(name, &p).unwrap()
    }

    #[test]
    fn config_validation() {
        assert_eq!(SimConfig::new(1e-3, 1.0, 1, 0).validate().unwrap(), 1000);
        assert!(SimConfig::new(0.3, 1.0, 1, 0).validate().is_err());
        assert!(SimConfig::new(1e-3, 1.0, 0, 0).validate().is_err());
        let mut c = SimConfig::new(0.1, 1.0, 1, 0);
        c.record_stride = 3;
        assert!(c.validate().is_err());
        c.record_stride = 5;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn frozen_after_exit() {
        let c = fam("brownian", &[]);
        let mut cfg = SimConfig::new(0.01, 2.0, 200, 9);
        cfg.r_exit = Some(0.5);
        let e = simulate_ensemble(&c, &[0.0, 0.0], &cfg).unwrap();
        let mut exits = 0;
        for p in 0..e.n_paths() {
            if let Some(k) = e.exit_step[p] {
                exits += 1;
                assert!(norm(e.state(p, k)) >= 0.5);
                for j in k..e.n_records() {
                    assert_eq!(e.state(p, j), e.state(p, k));
                }
                assert!(norm(e.state(p, k - 1)) < 0.5);
            }
        }
        assert!(exits > 150);
        let s = exit_time_stats(&e, 0.5).unwrap();
        assert_eq!(s.fraction_exited, exits as f64 / 200.0);
        assert_eq!(exit_time_stats(&e, f64::INFINITY).unwrap().fraction_exited, 0.0);
        assert!(exit_time_stats(&e, 1.0).is_err());
        let s2 = exit_time_stats(&e, 0.25).unwrap();
        assert!(s2.fraction_exited >= s.fraction_exited);
    }

    #[test]
    fn stuck_at_null_point_counts_occupation() {
        // γ = 0 at the origin with zero drift: σ̂ = 0 and the path never moves
        let c = fam("radial_degenerate", &[("alpha", 0.25)]);
        let cfg = SimConfig::new(0.01, 0.1, 3, 1);
        let e = simulate_ensemble(&c, &[0.0, 0.0], &cfg).unwrap();
        for p in 0..3 {
            assert!((e.occupation_exact[p] - 0.1).abs() < 1e-12);
            assert_eq!(e.state(p, 10), &[0.0, 0.0]);
        }
    }

    #[test]
    fn explosion_is_flagged() {
        let c = fam("cubic_drift", &[("strength", 1.0)]);
        let cfg = SimConfig::new(0.1, 10.0, 2, 3);
        let e = simulate_ensemble(&c, &[5.0, 0.0], &cfg).unwrap();
        assert_eq!(e.exploded_count(), 2);
        for p in 0..2 {
            let k = e.exploded[p].unwrap();
            assert_eq!(e.exit_step[p], Some(k));
            assert!(e.state(p, e.n_records() - 1).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn ladder_level_one_matches_ensemble() {
        let c = fam("ornstein_uhlenbeck", &[]);
        let cfg = SimConfig::new(0.01, 0.2, 16, 5);
        let e = simulate_ensemble(&c, &[1.0, -1.0], &cfg).unwrap();
        let l = simulate_crn_ladder(&c, &[1.0, -1.0], &cfg, &[1, 2, 4]).unwrap();
        let fin = e.final_states();
        for (a, b) in fin.iter().zip(&l[0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(simulate_crn_ladder(&c, &[1.0, -1.0], &cfg, &[3]).is_err());
    }

    #[test]
    fn profile_lookup() {
        let c = fam("radial_degenerate", &[("alpha", 0.25)]);
        let mut cfg = SimConfig::new(0.01, 0.5, 10, 1);
        cfg.profile_eps = vec![0.5, 0.9];
        cfg.near_degeneracy_eps = 0.7;
        let e = simulate_ensemble(&c, &[0.2, 0.0], &cfg).unwrap();
        let rows = occupation_profile(&e, &[0.0, 0.5, 0.7, 0.9]).unwrap();
        assert_eq!(rows[0].mean_occupation, 0.0);
        assert!(rows[1].mean_occupation <= rows[2].mean_occupation);
        assert!(rows[2].mean_occupation <= rows[3].mean_occupation);
        assert!(occupation_profile(&e, &[0.3]).is_err());
        assert!(occupation_profile(&e, &[0.9, 0.5]).is_err());
    }
}
