use serde::{Deserialize, Serialize};

use super::two_sample::{marginal_two_sample, TwoSampleOptions, TwoSampleResult};
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::report::{Clause, DiagnosticReport, Verdict};
use crate::rng::derive_seed;
use crate::simulator::{simulate_ensemble, PathEnsemble, SimConfig};

/// One candidate solution: a coefficient representative and optionally its
/// own step size.
#[derive(Clone)]
pub struct Variant {
    pub label: String,
    pub coefficients: CoefficientSet,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessOptions {
    /// Family-wise level over all pairs and times.
    pub level: f64,
    /// Drive every variant with the same master seed instead of derived
    /// independent ones.
    pub common_seed: bool,
    pub permutations: usize,
    pub energy_cap: usize,
}

impl Default for UniquenessOptions {
    fn default() -> Self {
        Self {
            level: 0.01,
            common_seed: false,
            permutations: 199,
            energy_cap: 1000,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn steps_for(t: f64, dt: f64) -> Result<usize> {
    let r = t / dt;
    let n = r.round();
    if !(n >= 1.0) || (r - n).abs() > 1e-9 * n {
        return Err(Error::InvalidConfig(format!("check time {t} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

/// Simulates every variant from `x0` and compares all pairs of marginals at
/// each time in `t_checks`.
///
/// Returns the report and the pairwise results (pair-major, then time).
pub fn uniqueness_probe(
    variants: &[Variant],
    x0: &[f64],
    t_checks: &[f64],
    cfg: &SimConfig,
    opts: &UniquenessOptions,
) -> Result<(DiagnosticReport, Vec<TwoSampleResult>)> {
    if variants.len() < 2 {
        return Err(Error::param("variants", "need at least two variants"));
    }
    if t_checks.is_empty() {
        return Err(Error::param("t_checks", "need at least one check time"));
    }
    let t_end = t_checks.iter().copied().fold(0.0, f64::max);
    let mut report = DiagnosticReport::new("uniqueness_probe");
    let mut ensembles: Vec<PathEnsemble> = Vec::with_capacity(variants.len());
    for (i, v) in variants.iter().enumerate() {
        let mut c = cfg.clone();
        c.dt = v.dt.unwrap_or(cfg.dt);
        c.t_end = t_end;
        let n = steps_for(t_end, c.dt)?;
        let mut stride = n;
        for &t in t_checks {
            stride = gcd(stride, steps_for(t, c.dt)?);
        }
        c.record_stride = stride;
        c.r_exit = None;
        c.master_seed = if opts.common_seed {
            cfg.master_seed
        } else {
            derive_seed(cfg.master_seed, i as u64)
        };
        report.seeds.push(c.master_seed);
        let e = simulate_ensemble(&v.coefficients, x0, &c)?;
        let occ = e.occupation_exact.iter().copied().fold(0.0, f64::max);
        report.metric(format!("occupation_exact_max.{}", v.label), occ);
        report.metric(format!("exploded.{}", v.label), e.exploded_count() as f64);
        ensembles.push(e);
    }
    let applicable = report
        .metrics
        .iter()
        .filter(|(k, _)| k.starts_with("occupation_exact_max."))
        .all(|(_, v)| *v == 0.0);

    let pairs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|i| (i + 1..variants.len()).map(move |j| (i, j)))
        .collect();
    let n_cmp = pairs.len() * t_checks.len();
    let level = opts.level / n_cmp as f64;
    report.tolerance("level", opts.level);
    report.tolerance("per_comparison_level", level);
    let mut results = Vec::with_capacity(n_cmp);
    let mut rejections = 0usize;
    for (pi, &(i, j)) in pairs.iter().enumerate() {
        for (ti, &t) in t_checks.iter().enumerate() {
            let ts = TwoSampleOptions {
                level,
                permutations: opts.permutations,
                energy_cap: opts.energy_cap,
                asymptotic_min_n: 1000,
                seed: derive_seed(cfg.master_seed ^ 0xD1B5_4A32_D192_ED03, (pi * t_checks.len() + ti) as u64),
            };
            let r = marginal_two_sample(&ensembles[i], &ensembles[j], t, &ts)?;
            let name = format!("{}|{}@t={}", variants[i].label, variants[j].label, t);
            let worst = r
                .tests
                .iter()
                .map(|x| x.statistic / x.threshold)
                .fold(0.0, f64::max);
            report.metric(format!("max_ks.{name}"), r.statistic);
            report.clause(
                Clause::new(
                    format!("no_rejection.{name}"),
                    !r.reject,
                    format!("largest statistic/threshold {worst:.4}"),
                )
                .with_value(worst)
                .with_threshold(1.0),
            );
            if r.reject {
                rejections += 1;
            }
            results.push(r);
        }
    }
    report.metric("rejections", rejections as f64);
    report.metric("variants", variants.len() as f64);
    let mut report = report.finish();
    if !applicable {
        report.verdict = Verdict::NotApplicable;
        report.clause(Clause::new(
            "occupation_gate",
            false,
            "a variant spent positive time on the null set; uniqueness does not apply",
        ));
    }
    Ok((report, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{builtin_family, ParamValue, Params};

    fn fam(name: &str, pairs: &[(&str, ParamValue)]) -> CoefficientSet {
        let p: Params = pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        builtin_family(name, &p).unwrap()
    }

    #[test]
    fn needs_two_variants() {
        let c = fam("brownian", &[]);
        let v = vec![Variant { label: "a".into(), coefficients: c, dt: None }];
        let cfg = SimConfig::new(0.01, 0.1, 10, 0);
        assert!(uniqueness_probe(&v, &[0.0, 0.0], &[0.1], &cfg, &Default::default()).is_err());
    }

    #[test]
    fn drift_control_rejects_and_null_start_is_not_applicable() {
        let cfg = SimConfig::new(0.01, 1.0, 2000, 11);
        let v = vec![
            Variant { label: "g0".into(), coefficients: fam("brownian", &[]), dt: None },
            Variant {
                label: "g1".into(),
                coefficients: fam("brownian", &[("drift", ParamValue::Vector(vec![0.5, 0.0]))]),
                dt: None,
            },
        ];
        let (r, res) = uniqueness_probe(&v, &[0.0, 0.0], &[1.0], &cfg, &Default::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(res[0].reject);

        let rad = |g: f64| fam("radial_degenerate", &[("alpha", ParamValue::Number(0.25)), ("gamma", ParamValue::Number(g))]);
        let v = vec![
            Variant { label: "zero".into(), coefficients: rad(0.0), dt: None },
            Variant { label: "one".into(), coefficients: rad(1.0), dt: None },
        ];
        let cfg = SimConfig::new(0.01, 0.1, 50, 1);
        let (r, _) = uniqueness_probe(&v, &[0.0, 0.0], &[0.1], &cfg, &Default::default()).unwrap();
        assert_eq!(r.verdict, Verdict::NotApplicable);
    }
}
