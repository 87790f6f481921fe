//! Smooth test functions with closed-form derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Bounds;

/// Tensor bump `Π_k b((x_k − c_k)/r)` with `b(t) = (1 − t²)^12` on `|t| < 1`;
/// support is the closed cube of half-edge `r`. A polynomial profile keeps
/// the trapezoid rule accurate to near rounding at moderate resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
}

const ORDER: i32 = 12;

/// `b`, `b'`, `b''` in the scaled variable.
fn profile(t: f64) -> (f64, f64, f64) {
    if t.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let m = ORDER as f64;
    let u = 1.0 - t * t;
    let u2 = u.powi(ORDER - 2);
    let u1 = u2 * u;
    (
        u1 * u,
        -2.0 * m * t * u1,
        4.0 * m * (m - 1.0) * t * t * u2 - 2.0 * m * u1,
    )
}

impl Bump {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        assert!(radius > 0.0);
        Self { center, radius }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Support lies strictly inside the open box.
    pub fn inside(&self, b: &Bounds) -> bool {
        (0..self.dim()).all(|k| {
            self.center[k] - self.radius > b.lower[k] && self.center[k] + self.radius < b.upper[k]
        })
    }

    pub fn require_inside(&self, b: &Bounds) -> Result<()> {
        if self.dim() != b.dim() {
            return Err(Error::DimensionMismatch("test function dimension".into()));
        }
        if self.inside(b) {
            Ok(())
        } else {
            Err(Error::SupportTouchesBoundary)
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for k in 0..self.dim() {
            v *= profile((x[k] - self.center[k]) / self.radius).0;
            if v == 0.0 {
                break;
            }
        }
        v
    }

    /// Value, gradient and row-major Hessian.
    pub fn eval(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let d = self.dim();
        let r = self.radius;
        let prof: Vec<(f64, f64, f64)> = (0..d)
            .map(|k| {
                let (b, b1, b2) = profile((x[k] - self.center[k]) / r);
                (b, b1 / r, b2 / (r * r))
            })
            .collect();
        let prod_except = |skip: &[usize]| -> f64 {
            (0..d)
                .filter(|k| !skip.contains(k))
                .map(|k| prof[k].0)
                .product()
        };
        let v = prod_except(&[]);
        for i in 0..d {
            grad[i] = prof[i].1 * prod_except(&[i]);
            for j in 0..d {
                hess[i * d + j] = if i == j {
                    prof[i].2 * prod_except(&[i])
                } else {
                    prof[i].1 * prof[j].1 * prod_except(&[i, j])
                };
            }
        }
        v
    }
}

/// Bumps at several centres and scales, all compactly inside `b`.
pub fn default_bumps(b: &Bounds) -> Vec<Bump> {
    let d = b.dim();
    let c: Vec<f64> = (0..d).map(|k| 0.5 * (b.lower[k] + b.upper[k])).collect();
    let h = (0..d)
        .map(|k| 0.5 * (b.upper[k] - b.lower[k]))
        .fold(f64::INFINITY, f64::min);
    let shift = |v: &[f64]| -> Vec<f64> { c.iter().zip(v).map(|(a, s)| a + s * h).collect() };
    let mut e1 = vec![0.0; d];
    e1[0] = 0.3;
    let mut elast = vec![0.0; d];
    elast[d - 1] = -0.2;
    vec![
        Bump::new(c.clone(), 0.5 * h),
        Bump::new(shift(&e1), 0.4 * h),
        Bump::new(shift(&vec![-0.25; d]), 0.3 * h),
        Bump::new(shift(&elast), 0.6 * h),
    ]
}

/// `amp·exp(−‖x − c‖²/(2w²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl GaussianBump {
    pub fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.amplitude * (-0.5 * r2 / (self.width * self.width)).exp()
    }

    /// Heat-flow solution `E f(x + W_t)` for standard Brownian motion `W`.
    pub fn heat_evolved(&self, x: &[f64], t: f64) -> f64 {
        let d = x.len() as f64;
        let s2 = self.width * self.width;
        let v = s2 + t;
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.amplitude * (s2 / v).powf(0.5 * d) * (-0.5 * r2 / v).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let f = Bump::new(vec![0.1, -0.2], 0.7);
        let x = [0.3, 0.05];
        let (mut g, mut hs) = ([0.0; 2], [0.0; 4]);
        let v = f.eval(&x, &mut g, &mut hs);
        assert!((v - f.value(&x)).abs() < 1e-16);
        let h = 1e-5;
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "grad {k}");
            let (mut gp, mut gm) = ([0.0; 2], [0.0; 2]);
            let mut tmp = [0.0; 4];
            f.eval(&xp, &mut gp, &mut tmp);
            f.eval(&xm, &mut gm, &mut tmp);
            for j in 0..2 {
                let fd = (gp[j] - gm[j]) / (2.0 * h);
                assert!((fd - hs[j * 2 + k]).abs() < 1e-7, "hess {j}{k}");
            }
        }
    }

    #[test]
    fn support_and_inside() {
        let f = Bump::new(vec![0.0, 0.0], 1.0);
        assert_eq!(f.value(&[1.0, 0.0]), 0.0);
        assert!(f.value(&[0.99, 0.0]) > 0.0);
        assert!(f.inside(&Bounds::symmetric(2, 1.01)));
        assert!(!f.inside(&Bounds::symmetric(2, 1.0)));
        for b in default_bumps(&Bounds::symmetric(3, 2.0)) {
            assert!(b.inside(&Bounds::symmetric(3, 2.0)));
        }
    }

    #[test]
    fn heat_evolved_at_zero_time() {
        let g = GaussianBump {
            center: vec![0.5, 0.0],
            width: 0.3,
            amplitude: 2.0,
        };
        assert!((g.heat_evolved(&[0.1, 0.2], 0.0) - g.value(&[0.1, 0.2])).abs() < 1e-15);
    }
}
