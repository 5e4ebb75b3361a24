//! Eigendecomposition of general real matrices.
//!
//! Householder reduction to upper Hessenberg form followed by the
//! Francis double-shift QR iteration, with eigenvectors recovered by
//! back-substitution on the quasi-triangular Schur factor (the classic
//! EISPACK `orthes`/`hqr2` pair).

use std::cmp::Ordering;

use num_complex::Complex64;

use super::{CMatrix, Matrix, NumericsError};

/// Eigenvalues and unit-norm eigenvectors (columns of `vectors`).
///
/// Ordered by descending magnitude; equal magnitudes by descending
/// `|arg|`; a complex eigenvalue with positive imaginary part is always
/// directly followed by its conjugate partner.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub values: Vec<Complex64>,
    pub vectors: CMatrix,
}

impl EigResult {
    /// Index of the conjugate partner: `Some(j + 1)` for the upper member
    /// of a pair, `Some(j - 1)` for the lower member, `None` when real.
    pub fn partner(&self, j: usize) -> Option<usize> {
        let v = self.values[j];
        if v.im > 0.0 && j + 1 < self.values.len() {
            Some(j + 1)
        } else if v.im < 0.0 && j > 0 {
            Some(j - 1)
        } else {
            None
        }
    }

    pub fn vector(&self, j: usize) -> Vec<Complex64> {
        self.vectors.column(j).iter().copied().collect()
    }
}

const MAX_SWEEPS_PER_VALUE: usize = 60;

pub fn eig(a: &Matrix) -> Result<EigResult, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::NotSquare(a.rows(), a.cols()));
    }
    if !a.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let n = a.rows();
    if n == 0 {
        return Ok(EigResult { values: Vec::new(), vectors: CMatrix::zeros(0, 0) });
    }
    let mut work = Hqr::new(a);
    work.orthes();
    work.hqr2()?;
    Ok(work.finish())
}

struct Hqr {
    n: usize,
    h: Vec<f64>,
    v: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    ort: Vec<f64>,
}

impl Hqr {
    fn new(a: &Matrix) -> Self {
        let n = a.rows();
        Self {
            n,
            h: a.as_slice().to_vec(),
            v: vec![0.0; n * n],
            d: vec![0.0; n],
            e: vec![0.0; n],
            ort: vec![0.0; n],
        }
    }

    #[inline]
    fn h(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.n + j]
    }

    #[inline]
    fn hm(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.h[i * self.n + j]
    }

    #[inline]
    fn v(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.n + j]
    }

    #[inline]
    fn vm(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.v[i * self.n + j]
    }

    fn orthes(&mut self) {
        let n = self.n;
        let high = n - 1;
        for m in 1..high {
            let scale: f64 = (m..=high).map(|i| self.h(i, m - 1).abs()).sum();
            if scale == 0.0 {
                continue;
            }
            let mut h = 0.0;
            for i in (m..=high).rev() {
                self.ort[i] = self.h(i, m - 1) / scale;
                h += self.ort[i] * self.ort[i];
            }
            let mut g = h.sqrt();
            if self.ort[m] > 0.0 {
                g = -g;
            }
            h -= self.ort[m] * g;
            self.ort[m] -= g;

            for j in m..n {
                let mut f = 0.0;
                for i in (m..=high).rev() {
                    f += self.ort[i] * self.h(i, j);
                }
                f /= h;
                for i in m..=high {
                    *self.hm(i, j) -= f * self.ort[i];
                }
            }
            for i in 0..=high {
                let mut f = 0.0;
                for j in (m..=high).rev() {
                    f += self.ort[j] * self.h(i, j);
                }
                f /= h;
                for j in m..=high {
                    *self.hm(i, j) -= f * self.ort[j];
                }
            }
            self.ort[m] *= scale;
            *self.hm(m, m - 1) = scale * g;
        }

        for i in 0..n {
            *self.vm(i, i) = 1.0;
        }
        for m in (1..high).rev() {
            if self.h(m, m - 1) == 0.0 {
                continue;
            }
            for i in m + 1..=high {
                self.ort[i] = self.h(i, m - 1);
            }
            for j in m..=high {
                let mut g = 0.0;
                for i in m..=high {
                    g += self.ort[i] * self.v(i, j);
                }
                g = (g / self.ort[m]) / self.h(m, m - 1);
                for i in m..=high {
                    *self.vm(i, j) += g * self.ort[i];
                }
            }
        }
    }

    #[allow(clippy::many_single_char_names)]
    fn hqr2(&mut self) -> Result<(), NumericsError> {
        let nn = self.n;
        let mut n = nn as isize - 1;
        let low: isize = 0;
        let high = nn - 1;
        let eps = f64::EPSILON;
        let mut exshift = 0.0;
        let (mut p, mut q, mut r, mut s, mut z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let (mut t, mut w, mut x, mut y);

        let mut norm = 0.0;
        for i in 0..nn {
            for j in i.saturating_sub(1)..nn {
                norm += self.h(i, j).abs();
            }
        }

        let mut iter = 0usize;
        let mut total_iter = 0usize;
        let max_total = MAX_SWEEPS_PER_VALUE * nn.max(1);
        while n >= low {
            let nu = n as usize;
            let mut l = n;
            while l > low {
                let lu = l as usize;
                s = self.h(lu - 1, lu - 1).abs() + self.h(lu, lu).abs();
                if s == 0.0 {
                    s = norm;
                }
                let sub = self.h(lu, lu - 1).abs();
                if sub < eps * s || sub == 0.0 {
                    break;
                }
                l -= 1;
            }

            if l == n {
                // one root
                *self.hm(nu, nu) += exshift;
                self.d[nu] = self.h(nu, nu);
                self.e[nu] = 0.0;
                n -= 1;
                iter = 0;
            } else if l == n - 1 {
                // two roots
                w = self.h(nu, nu - 1) * self.h(nu - 1, nu);
                p = (self.h(nu - 1, nu - 1) - self.h(nu, nu)) / 2.0;
                q = p * p + w;
                z = q.abs().sqrt();
                *self.hm(nu, nu) += exshift;
                *self.hm(nu - 1, nu - 1) += exshift;
                x = self.h(nu, nu);

                if q >= 0.0 {
                    z = if p >= 0.0 { p + z } else { p - z };
                    self.d[nu - 1] = x + z;
                    self.d[nu] = self.d[nu - 1];
                    if z != 0.0 {
                        self.d[nu] = x - w / z;
                    }
                    self.e[nu - 1] = 0.0;
                    self.e[nu] = 0.0;
                    x = self.h(nu, nu - 1);
                    s = x.abs() + z.abs();
                    p = x / s;
                    q = z / s;
                    r = (p * p + q * q).sqrt();
                    p /= r;
                    q /= r;
                    for j in nu - 1..nn {
                        z = self.h(nu - 1, j);
                        *self.hm(nu - 1, j) = q * z + p * self.h(nu, j);
                        *self.hm(nu, j) = q * self.h(nu, j) - p * z;
                    }
                    for i in 0..=nu {
                        z = self.h(i, nu - 1);
                        *self.hm(i, nu - 1) = q * z + p * self.h(i, nu);
                        *self.hm(i, nu) = q * self.h(i, nu) - p * z;
                    }
                    for i in 0..=high {
                        z = self.v(i, nu - 1);
                        *self.vm(i, nu - 1) = q * z + p * self.v(i, nu);
                        *self.vm(i, nu) = q * self.v(i, nu) - p * z;
                    }
                } else {
                    self.d[nu - 1] = x + p;
                    self.d[nu] = x + p;
                    self.e[nu - 1] = z;
                    self.e[nu] = -z;
                }
                n -= 2;
                iter = 0;
            } else {
                total_iter += 1;
                if iter > MAX_SWEEPS_PER_VALUE || total_iter > max_total {
                    return Err(NumericsError::NoConvergence("shifted QR iteration"));
                }
                x = self.h(nu, nu);
                y = 0.0;
                w = 0.0;
                if l < n {
                    y = self.h(nu - 1, nu - 1);
                    w = self.h(nu, nu - 1) * self.h(nu - 1, nu);
                }
                if iter == 10 {
                    exshift += x;
                    for i in 0..=nu {
                        *self.hm(i, i) -= x;
                    }
                    s = self.h(nu, nu - 1).abs() + self.h(nu - 1, nu - 2).abs();
                    x = 0.75 * s;
                    y = x;
                    w = -0.4375 * s * s;
                }
                if iter == 30 {
                    s = (y - x) / 2.0;
                    s = s * s + w;
                    if s > 0.0 {
                        s = s.sqrt();
                        if y < x {
                            s = -s;
                        }
                        s = x - w / ((y - x) / 2.0 + s);
                        for i in 0..=nu {
                            *self.hm(i, i) -= s;
                        }
                        exshift += s;
                        x = 0.964;
                        y = x;
                        w = x;
                    }
                }
                iter += 1;

                let mut m = n - 2;
                while m >= l {
                    let mu = m as usize;
                    z = self.h(mu, mu);
                    r = x - z;
                    s = y - z;
                    p = (r * s - w) / self.h(mu + 1, mu) + self.h(mu, mu + 1);
                    q = self.h(mu + 1, mu + 1) - z - r - s;
                    r = self.h(mu + 2, mu + 1);
                    s = p.abs() + q.abs() + r.abs();
                    p /= s;
                    q /= s;
                    r /= s;
                    if m == l {
                        break;
                    }
                    let lhs = self.h(mu, mu - 1).abs() * (q.abs() + r.abs());
                    let rhs = eps
                        * (p.abs()
                            * (self.h(mu - 1, mu - 1).abs() + z.abs() + self.h(mu + 1, mu + 1).abs()));
                    if lhs < rhs {
                        break;
                    }
                    m -= 1;
                }
                let mu = m as usize;
                for i in mu + 2..=nu {
                    *self.hm(i, i - 2) = 0.0;
                    if i > mu + 2 {
                        *self.hm(i, i - 3) = 0.0;
                    }
                }

                // double QR step on rows l..=n, columns m..=n
                for k in mu..nu {
                    let notlast = k != nu - 1;
                    if k != mu {
                        p = self.h(k, k - 1);
                        q = self.h(k + 1, k - 1);
                        r = if notlast { self.h(k + 2, k - 1) } else { 0.0 };
                        x = p.abs() + q.abs() + r.abs();
                        if x == 0.0 {
                            continue;
                        }
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                    s = (p * p + q * q + r * r).sqrt();
                    if p < 0.0 {
                        s = -s;
                    }
                    if s == 0.0 {
                        continue;
                    }
                    if k != mu {
                        *self.hm(k, k - 1) = -s * x;
                    } else if l != m {
                        *self.hm(k, k - 1) = -self.h(k, k - 1);
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = self.h(k, j) + q * self.h(k + 1, j);
                        if notlast {
                            p += r * self.h(k + 2, j);
                            *self.hm(k + 2, j) -= p * z;
                        }
                        *self.hm(k, j) -= p * x;
                        *self.hm(k + 1, j) -= p * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * self.h(i, k) + y * self.h(i, k + 1);
                        if notlast {
                            p += z * self.h(i, k + 2);
                            *self.hm(i, k + 2) -= p * r;
                        }
                        *self.hm(i, k) -= p;
                        *self.hm(i, k + 1) -= p * q;
                    }
                    for i in 0..=high {
                        p = x * self.v(i, k) + y * self.v(i, k + 1);
                        if notlast {
                            p += z * self.v(i, k + 2);
                            *self.vm(i, k + 2) -= p * r;
                        }
                        *self.vm(i, k) -= p;
                        *self.vm(i, k + 1) -= p * q;
                    }
                }
            }
        }

        if norm == 0.0 {
            return Ok(());
        }

        // back-substitute for the eigenvectors of the quasi-triangular factor
        for nu in (0..nn).rev() {
            p = self.d[nu];
            q = self.e[nu];
            if q == 0.0 {
                let mut l = nu;
                *self.hm(nu, nu) = 1.0;
                for i in (0..nu).rev() {
                    w = self.h(i, i) - p;
                    r = 0.0;
                    for j in l..=nu {
                        r += self.h(i, j) * self.h(j, nu);
                    }
                    if self.e[i] < 0.0 {
                        z = w;
                        s = r;
                    } else {
                        l = i;
                        if self.e[i] == 0.0 {
                            *self.hm(i, nu) = if w != 0.0 { -r / w } else { -r / (eps * norm) };
                        } else {
                            x = self.h(i, i + 1);
                            y = self.h(i + 1, i);
                            q = (self.d[i] - p) * (self.d[i] - p) + self.e[i] * self.e[i];
                            t = (x * s - z * r) / q;
                            *self.hm(i, nu) = t;
                            *self.hm(i + 1, nu) =
                                if x.abs() > z.abs() { (-r - w * t) / x } else { (-s - y * t) / z };
                        }
                        t = self.h(i, nu).abs();
                        if (eps * t) * t > 1.0 {
                            for j in i..=nu {
                                *self.hm(j, nu) /= t;
                            }
                        }
                    }
                }
            } else if q < 0.0 {
                let mut l = nu - 1;
                if self.h(nu, nu - 1).abs() > self.h(nu - 1, nu).abs() {
                    *self.hm(nu - 1, nu - 1) = q / self.h(nu, nu - 1);
                    *self.hm(nu - 1, nu) = -(self.h(nu, nu) - p) / self.h(nu, nu - 1);
                } else {
                    let (cr, ci) = cdiv(0.0, -self.h(nu - 1, nu), self.h(nu - 1, nu - 1) - p, q);
                    *self.hm(nu - 1, nu - 1) = cr;
                    *self.hm(nu - 1, nu) = ci;
                }
                *self.hm(nu, nu - 1) = 0.0;
                *self.hm(nu, nu) = 1.0;
                for i in (0..nu.saturating_sub(1)).rev() {
                    let mut ra = 0.0;
                    let mut sa = 0.0;
                    for j in l..=nu {
                        ra += self.h(i, j) * self.h(j, nu - 1);
                        sa += self.h(i, j) * self.h(j, nu);
                    }
                    w = self.h(i, i) - p;
                    if self.e[i] < 0.0 {
                        z = w;
                        r = ra;
                        s = sa;
                    } else {
                        l = i;
                        if self.e[i] == 0.0 {
                            let (cr, ci) = cdiv(-ra, -sa, w, q);
                            *self.hm(i, nu - 1) = cr;
                            *self.hm(i, nu) = ci;
                        } else {
                            x = self.h(i, i + 1);
                            y = self.h(i + 1, i);
                            let mut vr = (self.d[i] - p) * (self.d[i] - p) + self.e[i] * self.e[i] - q * q;
                            let vi = (self.d[i] - p) * 2.0 * q;
                            if vr == 0.0 && vi == 0.0 {
                                vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                            }
                            let (cr, ci) =
                                cdiv(x * r - z * ra + q * sa, x * s - z * sa - q * ra, vr, vi);
                            *self.hm(i, nu - 1) = cr;
                            *self.hm(i, nu) = ci;
                            if x.abs() > z.abs() + q.abs() {
                                *self.hm(i + 1, nu - 1) =
                                    (-ra - w * self.h(i, nu - 1) + q * self.h(i, nu)) / x;
                                *self.hm(i + 1, nu) = (-sa - w * self.h(i, nu) - q * self.h(i, nu - 1)) / x;
                            } else {
                                let (cr, ci) =
                                    cdiv(-r - y * self.h(i, nu - 1), -s - y * self.h(i, nu), z, q);
                                *self.hm(i + 1, nu - 1) = cr;
                                *self.hm(i + 1, nu) = ci;
                            }
                        }
                        t = self.h(i, nu - 1).abs().max(self.h(i, nu).abs());
                        if (eps * t) * t > 1.0 {
                            for j in i..=nu {
                                *self.hm(j, nu - 1) /= t;
                                *self.hm(j, nu) /= t;
                            }
                        }
                    }
                }
            }
        }

        // back-transform to eigenvectors of the original matrix
        for j in (0..nn).rev() {
            for i in 0..=high {
                z = 0.0;
                for k in 0..=j.min(high) {
                    z += self.v(i, k) * self.h(k, j);
                }
                *self.vm(i, j) = z;
            }
        }
        Ok(())
    }

    fn finish(self) -> EigResult {
        let n = self.n;
        // Group into real singletons and (upper, lower) conjugate pairs.
        let mut units: Vec<(Complex64, Vec<Complex64>, bool)> = Vec::with_capacity(n);
        let mut j = 0;
        while j < n {
            if self.e[j] > 0.0 && j + 1 < n {
                let vec: Vec<Complex64> =
                    (0..n).map(|i| Complex64::new(self.v(i, j), self.v(i, j + 1))).collect();
                units.push((Complex64::new(self.d[j], self.e[j]), normalize(vec), true));
                j += 2;
            } else {
                let vec: Vec<Complex64> = (0..n).map(|i| Complex64::new(self.v(i, j), 0.0)).collect();
                units.push((Complex64::new(self.d[j], 0.0), normalize(vec), false));
                j += 1;
            }
        }
        units.sort_by(|a, b| order_key(a.0, b.0));

        let mut values = Vec::with_capacity(n);
        let mut vectors = CMatrix::zeros(n, n);
        let mut col = 0;
        for (lambda, vec, is_pair) in units {
            values.push(lambda);
            for (i, v) in vec.iter().enumerate() {
                vectors[(i, col)] = *v;
            }
            col += 1;
            if is_pair {
                values.push(lambda.conj());
                for (i, v) in vec.iter().enumerate() {
                    vectors[(i, col)] = v.conj();
                }
                col += 1;
            }
        }
        EigResult { values, vectors }
    }
}

/// Descending magnitude, then descending `|arg|`.
pub(crate) fn order_key(a: Complex64, b: Complex64) -> Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then_with(|| b.arg().abs().total_cmp(&a.arg().abs()))
}

/// Scales to unit 2-norm and rotates the phase so the largest-modulus
/// component is real and positive.
fn normalize(mut v: Vec<Complex64>) -> Vec<Complex64> {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    let phase = pivot.conj() / pivot.norm();
    for c in &mut v {
        *c = *c * phase / norm;
    }
    v
}

fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}
