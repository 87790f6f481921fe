//! Banded LU without pivoting plus a few small dense helpers.
//!
//! The finite-volume matrices assembled in this crate are (up to sign)
//! diagonally dominant M-matrices in natural ordering, for which Gaussian
//! elimination without pivoting is stable and keeps all fill inside the band.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    factored: bool,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(
            j + self.kl >= i && j <= i + self.ku,
            "({i},{j}) outside band"
        );
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// Replaces row `i` by the identity row.
    pub fn set_identity_row(&mut self, i: usize) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        for j in lo..=hi {
            self.set(i, j, 0.0);
        }
        self.set(i, i, 1.0);
    }

    /// `y = A x` (only valid before factorisation).
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert!(!self.factored);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let row = &self.data[i * self.width..(i + 1) * self.width];
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += row[j + self.kl - i] * x[j];
            }
            y[i] = acc;
        }
    }

    /// In-place LU factorisation. `pivot_floor` is the magnitude, relative
    /// to the largest entry of the pivot's row, below which a pivot counts
    /// as zero.
    pub fn factor(&mut self, pivot_floor: f64) -> Result<()> {
        let (kl, ku, w) = (self.kl, self.ku, self.width);
        // pivots are judged against the original row magnitude
        let row_scale: Vec<f64> = self
            .data
            .chunks(w)
            .map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE))
            .collect();
        for k in 0..self.n {
            let piv = self.data[k * w + kl];
            if !(piv.abs() > pivot_floor * row_scale[k]) || !piv.is_finite() {
                return Err(Error::SolveFailed { row: k, pivot: piv });
            }
            let i_hi = (k + kl).min(self.n - 1);
            let j_hi = (k + ku).min(self.n - 1);
            for i in (k + 1)..=i_hi {
                let s_ik = i * w + (k + kl - i);
                let a_ik = self.data[s_ik];
                if a_ik == 0.0 {
                    continue;
                }
                let l = a_ik / piv;
                self.data[s_ik] = l;
                // row k entries k+1..=j_hi; row i shares the same columns
                let cnt = j_hi - k;
                let start_k = k * w + kl + 1;
                let start_i = i * w + (k + 1 + kl - i);
                let (head, tail) = self.data.split_at_mut(start_i);
                let src = &head[start_k..start_k + cnt];
                let dst = &mut tail[..cnt];
                for (d, u) in dst.iter_mut().zip(src) {
                    *d -= l * u;
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place after [`factor`](Self::factor).
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "factor() must be called first");
        let (kl, w) = (self.kl, self.width);
        for i in 0..self.n {
            let lo = i.saturating_sub(kl);
            let base = i * w + kl - i;
            let s = dot4(&self.data[base + lo..base + i], &b[lo..i]);
            b[i] -= s;
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.ku).min(self.n - 1);
            let base = i * w + kl - i;
            let s = dot4(&self.data[base + i + 1..=base + hi], &b[i + 1..=hi]);
            b[i] = (b[i] - s) / self.data[base + i];
        }
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Row-major `d×d` matrix–vector product.
pub fn mat_vec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        out[i] = (0..d).map(|j| a[i * d + j] * x[j]).sum();
    }
}

/// Solves a small dense system with partial pivoting; `a` is consumed.
pub fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let d = b.len();
    for k in 0..d {
        let p = (k..d).max_by(|&i, &j| a[i * d + k].abs().total_cmp(&a[j * d + k].abs()))?;
        if a[p * d + k] == 0.0 {
            return None;
        }
        if p != k {
            for j in 0..d {
                a.swap(k * d + j, p * d + j);
            }
            b.swap(k, p);
        }
        for i in (k + 1)..d {
            let l = a[i * d + k] / a[k * d + k];
            for j in k..d {
                a[i * d + j] -= l * a[k * d + j];
            }
            b[i] -= l * b[k];
        }
    }
    for i in (0..d).rev() {
        let s: f64 = ((i + 1)..d).map(|j| a[i * d + j] * b[j]).sum();
        b[i] = (b[i] - s) / a[i * d + i];
    }
    Some(b)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_solve_matches_tridiagonal() {
        let n = 50;
        let mut a = BandedMatrix::zeros(n, 1, 1);
        for i in 0..n {
            a.add(i, i, 4.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.add(i, i + 1, -2.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        a.mul_vec(&x, &mut b);
        a.factor(1e-14).unwrap();
        a.solve_in_place(&mut b);
        for (u, v) in x.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_band_with_fill_in() {
        // 2-D five-point Laplacian plus shift, band = grid width
        let m = 7;
        let n = m * m;
        let mut a = BandedMatrix::zeros(n, m, m);
        for i in 0..n {
            a.add(i, i, 4.5);
            if i % m > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i % m + 1 < m {
                a.add(i, i + 1, -1.0);
            }
            if i >= m {
                a.add(i, i - m, -1.0);
            }
            if i + m < n {
                a.add(i, i + m, -1.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).cos()).collect();
        let mut b = vec![0.0; n];
        a.mul_vec(&x, &mut b);
        a.factor(1e-14).unwrap();
        a.solve_in_place(&mut b);
        for (u, v) in x.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut a = BandedMatrix::zeros(3, 1, 1);
        a.add(0, 0, 1.0);
        a.add(2, 2, 1.0);
        assert!(matches!(
            a.factor(1e-14),
            Err(Error::SolveFailed { row: 1, .. })
        ));
    }

    #[test]
    fn dense_solve() {
        let a = vec![0.0, 2.0, 1.0, 1.0];
        let x = solve_dense(a, vec![4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }
}
