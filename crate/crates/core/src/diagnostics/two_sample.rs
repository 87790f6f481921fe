use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::num;
use crate::rng::derive_seed;
use crate::simulator::PathEnsemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleOptions {
    /// Family-wise level of this comparison; split over the `d + 1` tests.
    pub level: f64,
    /// Permutations for the energy test. The small-sample KS test uses at
    /// least `20/α − 1` so its threshold is finite at the per-test level.
    pub permutations: usize,
    /// Energy distance is computed on at most this many points per sample
    /// (evenly strided subsample).
    pub energy_cap: usize,
    /// KS uses asymptotic thresholds when both samples are at least this
    /// large, permutation thresholds otherwise.
    pub asymptotic_min_n: usize,
    pub seed: u64,
}

impl Default for TwoSampleOptions {
    fn default() -> Self {
        Self {
            level: 0.01,
            permutations: 199,
            energy_cap: 1000,
            asymptotic_min_n: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleTest {
    pub name: String,
    pub method: String,
    pub statistic: f64,
    #[serde(with = "num")]
    pub threshold: f64,
    pub p_value: f64,
    /// `statistic > threshold`.
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleResult {
    pub d: usize,
    pub n1: usize,
    pub n2: usize,
    pub level: f64,
    pub per_test_level: f64,
    /// Largest per-coordinate KS distance.
    pub statistic: f64,
    pub tests: Vec<TwoSampleTest>,
    pub reject: bool,
    pub seed: u64,
}

/// Two-sample Kolmogorov–Smirnov distance `sup |F₁ − F₂|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    ks_sorted(&a, &b)
}

fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    best
}

/// Kolmogorov distribution tail `P(K > λ)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi-transformed series converges fast for small λ
        let s: f64 = (1..=20)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (-m * m * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Distance `D*` with `P(√(n₁n₂/(n₁+n₂))·D > D*√…) = level` asymptotically.
pub fn ks_asymptotic_threshold(n1: usize, n2: usize, level: f64) -> f64 {
    let (mut lo, mut hi) = (0.01, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_survival(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    hi / ne.sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// V-statistic energy distance `2E|X−Y| − E|X−X'| − E|Y−Y'|` of two
/// row-major samples of dimension `d`.
pub fn energy_distance(a: &[f64], b: &[f64], d: usize) -> f64 {
    let mut pooled = a.to_vec();
    pooled.extend_from_slice(b);
    let n1 = a.len() / d;
    let dm = distance_matrix(&pooled, d);
    let ia: Vec<usize> = (0..n1).collect();
    let ib: Vec<usize> = (n1..pooled.len() / d).collect();
    energy_from_sets(&dm, pooled.len() / d, &ia, &ib)
}

fn distance_matrix(pts: &[f64], d: usize) -> Vec<f64> {
    let n = pts.len() / d;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &pts[i * d..(i + 1) * d];
            (0..n).map(|j| dist(xi, &pts[j * d..(j + 1) * d])).collect()
        })
        .collect();
    rows.concat()
}

fn block_sum(dm: &[f64], n: usize, ia: &[usize], ib: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in ia {
        let row = &dm[i * n..(i + 1) * n];
        for &j in ib {
            s += row[j];
        }
    }
    s
}

fn energy_from_sets(dm: &[f64], n: usize, ia: &[usize], ib: &[usize]) -> f64 {
    let (na, nb) = (ia.len() as f64, ib.len() as f64);
    let sab = block_sum(dm, n, ia, ib);
    let saa = block_sum(dm, n, ia, ia);
    let sbb = block_sum(dm, n, ib, ib);
    // the grouping keeps the value invariant under swapping the samples
    2.0 * sab / (na * nb) - (saa / (na * na) + sbb / (nb * nb))
}

fn permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = ((rng.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
        p.swap(i, j);
    }
    p
}

/// Threshold `v` such that `stat > v` ⇔ permutation p-value
/// `(1 + #{perm ≥ stat})/(B + 1) ≤ level`.
fn permutation_threshold(perm: &[f64], level: f64) -> f64 {
    let k = (level * (perm.len() + 1) as f64 - 1.0).floor();
    if k < 0.0 {
        return f64::INFINITY;
    }
    let mut v = perm.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.get(k as usize).copied().unwrap_or(f64::NEG_INFINITY)
}

fn permutation_p(perm: &[f64], stat: f64) -> f64 {
    (1 + perm.iter().filter(|v| **v >= stat).count()) as f64 / (perm.len() + 1) as f64
}

fn subsample(x: &[f64], d: usize, cap: usize) -> Vec<f64> {
    let n = x.len() / d;
    if n <= cap {
        return x.to_vec();
    }
    let mut out = Vec::with_capacity(cap * d);
    for k in 0..cap {
        let i = k * n / cap;
        out.extend_from_slice(&x[i * d..(i + 1) * d]);
    }
    out
}

/// Per-coordinate KS plus energy distance between two row-major samples,
/// Bonferroni-combined over the `d + 1` tests.
pub fn two_sample(a: &[f64], b: &[f64], d: usize, opts: &TwoSampleOptions) -> Result<TwoSampleResult> {
    if d == 0 || a.len() % d != 0 || b.len() % d != 0 {
        return Err(Error::DimensionMismatch("sample length is not a multiple of d".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("sample", "both samples must be non-empty"));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::param("level", "must lie in (0, 1)"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::param("sample", "non-finite entries"));
    }
    // a canonical order makes every output symmetric in the two samples
    let (a, b) = match a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()) {
        Some(std::cmp::Ordering::Greater) => (b, a),
        None if a.len() > b.len() => (b, a),
        _ => (a, b),
    };
    let (n1, n2) = (a.len() / d, b.len() / d);
    let alpha = opts.level / (d + 1) as f64;
    let coord = |x: &[f64], k: usize| -> Vec<f64> { x.iter().skip(k).step_by(d).copied().collect() };
    let mut tests = Vec::with_capacity(d + 1);
    let asymptotic = n1.min(n2) >= opts.asymptotic_min_n;
    let ks_seed = derive_seed(opts.seed, 1);
    for k in 0..d {
        let (ca, cb) = (coord(a, k), coord(b, k));
        let stat = ks_statistic(&ca, &cb);
        let (threshold, p, method) = if asymptotic {
            let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
            (
                ks_asymptotic_threshold(n1, n2, alpha),
                kolmogorov_survival(ne.sqrt() * stat),
                "asymptotic",
            )
        } else {
            let mut pooled = ca.clone();
            pooled.extend_from_slice(&cb);
            // enough draws for the permutation quantile to exist at `alpha`
            let n_perm = opts.permutations.max((20.0 / alpha).ceil() as usize - 1);
            let perm: Vec<f64> = (0..n_perm)
                .into_par_iter()
                .map(|r| {
                    let p = permutation(derive_seed(derive_seed(ks_seed, k as u64), r as u64), n1 + n2);
                    let pa: Vec<f64> = p[..n1].iter().map(|&i| pooled[i]).collect();
                    let pb: Vec<f64> = p[n1..].iter().map(|&i| pooled[i]).collect();
                    ks_statistic(&pa, &pb)
                })
                .collect();
            (permutation_threshold(&perm, alpha), permutation_p(&perm, stat), "permutation")
        };
        tests.push(TwoSampleTest {
            name: format!("ks_x{}", k + 1),
            method: method.into(),
            statistic: stat,
            threshold,
            p_value: p,
            reject: stat > threshold,
        });
    }

    let sa = subsample(a, d, opts.energy_cap);
    let sb = subsample(b, d, opts.energy_cap);
    let (m1, m2) = (sa.len() / d, sb.len() / d);
    let mut pooled = sa;
    pooled.extend_from_slice(&sb);
    let dm = distance_matrix(&pooled, d);
    let n = m1 + m2;
    let ia: Vec<usize> = (0..m1).collect();
    let ib: Vec<usize> = (m1..n).collect();
    let stat = energy_from_sets(&dm, n, &ia, &ib).max(0.0);
    let e_seed = derive_seed(opts.seed, 0);
    let perm: Vec<f64> = (0..opts.permutations)
        .into_par_iter()
        .map(|r| {
            let p = permutation(derive_seed(e_seed, r as u64), n);
            energy_from_sets(&dm, n, &p[..m1], &p[m1..]).max(0.0)
        })
        .collect();
    let threshold = permutation_threshold(&perm, alpha);
    tests.push(TwoSampleTest {
        name: "energy".into(),
        method: "permutation".into(),
        statistic: stat,
        threshold,
        p_value: permutation_p(&perm, stat),
        reject: stat > threshold,
    });

    let statistic = tests[..d].iter().map(|t| t.statistic).fold(0.0, f64::max);
    let reject = tests.iter().any(|t| t.reject);
    Ok(TwoSampleResult {
        d,
        n1,
        n2,
        level: opts.level,
        per_test_level: alpha,
        statistic,
        tests,
        reject,
        seed: opts.seed,
    })
}

/// Compares the time-`t` marginals of two ensembles.
pub fn marginal_two_sample(
    e1: &PathEnsemble,
    e2: &PathEnsemble,
    t: f64,
    opts: &TwoSampleOptions,
) -> Result<TwoSampleResult> {
    if e1.d != e2.d {
        return Err(Error::DimensionMismatch(format!("d = {} vs {}", e1.d, e2.d)));
    }
    two_sample(&e1.marginal(t)?, &e2.marginal(t)?, e1.d, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut s = crate::rng::NormalStream::new(seed, 0, 1);
        (0..n).map(|_| s.next_normal() + shift).collect()
    }

    #[test]
    fn kolmogorov_tail_values() {
        // classical critical values
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        // both series agree where they meet
        let l = 1.0;
        let a = kolmogorov_survival(l - 1e-12);
        let b = kolmogorov_survival(l);
        assert!((a - b).abs() < 1e-9);
        let t = ks_asymptotic_threshold(100, 100, 0.05);
        assert!((t - 1.3581 * (2.0f64 / 100.0).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn ks_by_hand() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_eq!(ks_statistic(&[1.0, 3.0], &[2.0, 4.0]), 0.5);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn energy_by_hand() {
        // points 0 and 1 in d = 1: 2·1 − 0 − 0
        assert_eq!(energy_distance(&[0.0], &[1.0], 1), 2.0);
        let a = [0.0, 1.0];
        assert_eq!(energy_distance(&a, &a, 1), 0.0);
    }

    #[test]
    fn identical_and_shifted() {
        let a = normals(1, 400, 0.0);
        let opts = TwoSampleOptions::default();
        let r = two_sample(&a, &a, 2, &opts).unwrap();
        assert!(!r.reject);
        assert!(r.tests.iter().all(|t| t.statistic == 0.0));
        let b = normals(2, 400, 1.0);
        let r = two_sample(&a, &b, 2, &opts).unwrap();
        assert!(r.reject);
        assert_eq!(r.tests[0].method, "permutation");
    }

    #[test]
    fn swap_symmetry() {
        let a = normals(3, 300, 0.0);
        let b = normals(4, 200, 0.3);
        let opts = TwoSampleOptions::default();
        let r1 = two_sample(&a, &b, 1, &opts).unwrap();
        let r2 = two_sample(&b, &a, 1, &opts).unwrap();
        assert_eq!(r1.tests, r2.tests);
    }
}
