//! Statistical cross-checks on simulated laws: fixed-time two-sample tests,
//! the uniqueness probe across representatives and step sizes, the Krylov
//! occupation audit and the Monte-Carlo versus PDE comparison.

mod feynman_kac;
mod krylov;
mod two_sample;
mod uniqueness;

pub use feynman_kac::{feynman_kac_crosscheck, FeynmanKacOptions, FeynmanKacOutcome};
pub use krylov::{
    krylov_audit, krylov_dt_stability, krylov_report, mixed_norm, KrylovAudit, KrylovOptions,
    KrylovRun, SpaceTimeFn,
};
pub use two_sample::{
    energy_distance, kolmogorov_survival, ks_asymptotic_threshold, ks_statistic,
    marginal_two_sample, two_sample, TwoSampleOptions, TwoSampleResult, TwoSampleTest,
};
pub use uniqueness::{uniqueness_probe, UniquenessOptions, Variant};

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    // compensated: means of scaled samples scale to rounding level
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    let mean = sum / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
