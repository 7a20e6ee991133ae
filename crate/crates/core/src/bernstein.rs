//! Trivariate Bernstein polynomials on the unit cube.
//!
//! A [`BernsteinTensor`] stores the coefficients of
//! `p(u,v,w) = Σ c_ijk B_i^du(u) B_j^dv(v) B_k^dw(w)` densely, `i` fastest.
//! Products, exact integrals, degree elevation, derivatives, subdivision and
//! moments all act on the coefficients directly; nothing is sampled.

use std::cmp::Ordering;

use crate::binomial::c;
use crate::error::{Error, Result};

pub type Degrees = [usize; 3];

/// Dense coefficient tensor of a trivariate Bernstein polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinTensor {
    degrees: Degrees,
    coeffs: Vec<f64>,
}

#[inline]
pub(crate) fn shape(d: Degrees) -> [usize; 3] {
    [d[0] + 1, d[1] + 1, d[2] + 1]
}

#[inline]
pub(crate) fn count(d: Degrees) -> usize {
    (d[0] + 1) * (d[1] + 1) * (d[2] + 1)
}

impl BernsteinTensor {
    pub fn new(degrees: Degrees, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != count(degrees) {
            return Err(Error::Domain(format!(
                "coefficient count {} does not match degrees {:?} (expected {})",
                coeffs.len(),
                degrees,
                count(degrees)
            )));
        }
        Ok(BernsteinTensor { degrees, coeffs })
    }

    pub(crate) fn from_parts(degrees: Degrees, coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(coeffs.len(), count(degrees));
        BernsteinTensor { degrees, coeffs }
    }

    pub fn zeros(degrees: Degrees) -> Self {
        BernsteinTensor { degrees, coeffs: vec![0.0; count(degrees)] }
    }

    pub fn constant(degrees: Degrees, value: f64) -> Self {
        BernsteinTensor { degrees, coeffs: vec![value; count(degrees)] }
    }

    pub fn from_fn(degrees: Degrees, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let [nu, nv, nw] = shape(degrees);
        let mut coeffs = Vec::with_capacity(nu * nv * nw);
        for k in 0..nw {
            for j in 0..nv {
                for i in 0..nu {
                    coeffs.push(f(i, j, k));
                }
            }
        }
        BernsteinTensor { degrees, coeffs }
    }

    /// The basis function `B_i B_j B_k` itself.
    pub fn unit(degrees: Degrees, index: [usize; 3]) -> Self {
        let mut t = Self::zeros(degrees);
        let at = t.index(index[0], index[1], index[2]);
        t.coeffs[at] = 1.0;
        t
    }

    pub fn degrees(&self) -> Degrees {
        self.degrees
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nu, nv, _] = shape(self.degrees);
        i + nu * (j + nv * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.coeffs[self.index(i, j, k)]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.coeffs.iter_mut().for_each(|c| *c *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut t = self.clone();
        t.scale(s);
        t
    }

    /// `self += a * other`; degrees must match.
    pub fn axpy(&mut self, a: f64, other: &BernsteinTensor) -> Result<()> {
        if self.degrees != other.degrees {
            return Err(Error::Internal(format!(
                "axpy degree mismatch {:?} vs {:?}",
                self.degrees, other.degrees
            )));
        }
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
        Ok(())
    }

    /// Value at `u` in the unit cube.
    pub fn evaluate(&self, u: [f64; 3]) -> Result<f64> {
        if u.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
            return Err(Error::Domain(format!("parameter {u:?} outside the unit cube")));
        }
        Ok(self.eval(u))
    }

    /// Evaluation without the domain check (used on validated inputs).
    pub fn eval(&self, u: [f64; 3]) -> f64 {
        let [du, dv, dw] = self.degrees;
        let bu = basis_values(du, u[0]);
        let bv = basis_values(dv, u[1]);
        let bw = basis_values(dw, u[2]);
        let mut acc = 0.0;
        let mut idx = 0;
        for &wk in &bw {
            let mut acc_j = 0.0;
            for &vj in &bv {
                let mut acc_i = 0.0;
                for &ui in &bu {
                    acc_i += ui * self.coeffs[idx];
                    idx += 1;
                }
                acc_j += vj * acc_i;
            }
            acc += wk * acc_j;
        }
        acc
    }

    /// Product of two polynomials; degrees add componentwise.
    ///
    /// Computed as a plain convolution of binomially pre-scaled coefficients,
    /// `c_t = Σ_r C(a,r) C(b,t-r) a_r b_{t-r} / C(a+b,t)` per direction.
    /// Operands are put in a canonical order first so `p*q` and `q*p` are
    /// bitwise identical.
    pub fn product(&self, other: &BernsteinTensor) -> BernsteinTensor {
        let (a, b) = if canonical_cmp(self, other) == Ordering::Greater { (other, self) } else { (self, other) };
        let da = a.degrees;
        let db = b.degrees;
        let dc = [da[0] + db[0], da[1] + db[1], da[2] + db[2]];
        let sa = a.binomial_scaled();
        let sb = b.binomial_scaled();
        let mut out = convolve(&sa, shape(da), &sb, shape(db));
        unscale(&mut out, dc);
        BernsteinTensor { degrees: dc, coeffs: out }
    }

    /// Coefficients multiplied by `C(d_u,i) C(d_v,j) C(d_w,k)`.
    pub(crate) fn binomial_scaled(&self) -> Vec<f64> {
        let [du, dv, dw] = self.degrees;
        let mut out = Vec::with_capacity(self.coeffs.len());
        let mut idx = 0;
        for k in 0..=dw {
            let ck = c(dw, k);
            for j in 0..=dv {
                let cjk = c(dv, j) * ck;
                for i in 0..=du {
                    out.push(self.coeffs[idx] * c(du, i) * cjk);
                    idx += 1;
                }
            }
        }
        out
    }

    /// Exact integral over `[0,1]^3`.
    pub fn integrate(&self) -> f64 {
        let [nu, nv, nw] = shape(self.degrees);
        self.coeffs.iter().sum::<f64>() / (nu * nv * nw) as f64
    }

    /// Degree elevation to `target`; the polynomial is unchanged.
    pub fn elevate(&self, target: Degrees) -> Result<BernsteinTensor> {
        if (0..3).any(|d| target[d] < self.degrees[d]) {
            return Err(Error::Domain(format!(
                "cannot elevate degrees {:?} to lower target {target:?}",
                self.degrees
            )));
        }
        let mut t = self.clone();
        for axis in 0..3 {
            let from = t.degrees[axis];
            let to = target[axis];
            if from == to {
                continue;
            }
            let m = elevation_matrix(from, to);
            t = t.apply_axis(axis, &m, to);
        }
        Ok(t)
    }

    /// Partial derivative along `axis` (degree drops by one, or stays 0 for constants).
    pub fn derivative(&self, axis: usize) -> BernsteinTensor {
        let n = self.degrees[axis];
        if n == 0 {
            return BernsteinTensor::zeros(self.degrees);
        }
        let mut m = vec![0.0; n * (n + 1)];
        for i in 0..n {
            m[i * (n + 1) + i] = -(n as f64);
            m[i * (n + 1) + i + 1] = n as f64;
        }
        self.apply_axis(axis, &m, n - 1)
    }

    /// Splits the polynomial at the midpoint of `axis`, returning the two halves
    /// re-parameterized over `[0,1]`.
    pub fn subdivide(&self, axis: usize) -> (BernsteinTensor, BernsteinTensor) {
        let n = self.degrees[axis];
        let (left, right) = subdivision_matrices(n);
        (self.apply_axis(axis, &left, n), self.apply_axis(axis, &right, n))
    }

    /// Restriction to one of the eight octants: bit `a` of `octant` selects the upper half along axis `a`.
    pub fn octant(&self, octant: usize) -> BernsteinTensor {
        let mut t = self.clone();
        for axis in 0..3 {
            let (l, r) = t.subdivide(axis);
            t = if octant >> axis & 1 == 1 { r } else { l };
        }
        t
    }

    /// `∫ p · B_s^target` over the unit cube for every index `s` of `target`.
    pub fn moments(&self, target: Degrees) -> Vec<f64> {
        let mut t = self.clone();
        for axis in 0..3 {
            let m = moment_matrix(t.degrees[axis], target[axis]);
            t = t.apply_axis(axis, &m, target[axis]);
        }
        t.coeffs
    }

    /// Applies a `(to+1) x (from+1)` row-major matrix along `axis`.
    pub(crate) fn apply_axis(&self, axis: usize, mat: &[f64], to: usize) -> BernsteinTensor {
        let dims = shape(self.degrees);
        let (coeffs, _) = apply_along(&self.coeffs, dims, axis, mat, to + 1);
        let mut degrees = self.degrees;
        degrees[axis] = to;
        BernsteinTensor { degrees, coeffs }
    }
}

fn canonical_cmp(a: &BernsteinTensor, b: &BernsteinTensor) -> Ordering {
    a.degrees.cmp(&b.degrees).then_with(|| {
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            match x.to_bits().cmp(&y.to_bits()) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    })
}

/// Full 3D convolution of two dense tensors of shapes `sa` and `sb`.
pub(crate) fn convolve(a: &[f64], sa: [usize; 3], b: &[f64], sb: [usize; 3]) -> Vec<f64> {
    let sc = [sa[0] + sb[0] - 1, sa[1] + sb[1] - 1, sa[2] + sb[2] - 1];
    let mut out = vec![0.0; sc[0] * sc[1] * sc[2]];
    convolve_into(&mut out, a, sa, b, sb);
    out
}

/// Adds the tensor convolution of `a` and `b` into `out`.
pub(crate) fn convolve_into(out: &mut [f64], a: &[f64], sa: [usize; 3], b: &[f64], sb: [usize; 3]) {
    let sc = [sa[0] + sb[0] - 1, sa[1] + sb[1] - 1, sa[2] + sb[2] - 1];
    debug_assert_eq!(out.len(), sc[0] * sc[1] * sc[2]);
    let mut ia = 0;
    for ka in 0..sa[2] {
        for ja in 0..sa[1] {
            for iaa in 0..sa[0] {
                let x = a[ia];
                ia += 1;
                if x == 0.0 {
                    continue;
                }
                let mut ib = 0;
                for kb in 0..sb[2] {
                    for jb in 0..sb[1] {
                        let base = iaa + sc[0] * ((ja + jb) + sc[1] * (ka + kb));
                        let row = &mut out[base..base + sb[0]];
                        let brow = &b[ib..ib + sb[0]];
                        for (o, &y) in row.iter_mut().zip(brow) {
                            *o += x * y;
                        }
                        ib += sb[0];
                    }
                }
            }
        }
    }
}

/// Divides coefficient `t` by `C(d_u,t_u) C(d_v,t_v) C(d_w,t_w)`.
pub(crate) fn unscale(coeffs: &mut [f64], d: Degrees) {
    let mut idx = 0;
    for k in 0..=d[2] {
        let ck = c(d[2], k);
        for j in 0..=d[1] {
            let cjk = c(d[1], j) * ck;
            for i in 0..=d[0] {
                coeffs[idx] /= c(d[0], i) * cjk;
                idx += 1;
            }
        }
    }
}

/// Applies a row-major `out_len x dims[axis]` matrix along one axis of a dense tensor.
pub(crate) fn apply_along(
    data: &[f64],
    dims: [usize; 3],
    axis: usize,
    mat: &[f64],
    out_len: usize,
) -> (Vec<f64>, [usize; 3]) {
    let n_in = dims[axis];
    debug_assert_eq!(mat.len(), out_len * n_in);
    let mut out_dims = dims;
    out_dims[axis] = out_len;
    let mut out = vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]];
    match axis {
        0 => {
            for line in 0..dims[1] * dims[2] {
                let src = &data[line * n_in..(line + 1) * n_in];
                let dst = &mut out[line * out_len..(line + 1) * out_len];
                for (o, row) in dst.iter_mut().zip(mat.chunks_exact(n_in)) {
                    *o = row.iter().zip(src).map(|(m, x)| m * x).sum();
                }
            }
        }
        1 => {
            let (nu, nw) = (dims[0], dims[2]);
            for k in 0..nw {
                for o in 0..out_len {
                    let row = &mat[o * n_in..(o + 1) * n_in];
                    let dst = (o + out_len * k) * nu;
                    for (j, &m) in row.iter().enumerate() {
                        if m == 0.0 {
                            continue;
                        }
                        let src = (j + n_in * k) * nu;
                        for i in 0..nu {
                            out[dst + i] += m * data[src + i];
                        }
                    }
                }
            }
        }
        _ => {
            let plane = dims[0] * dims[1];
            for o in 0..out_len {
                let row = &mat[o * n_in..(o + 1) * n_in];
                let dst = o * plane;
                for (k, &m) in row.iter().enumerate() {
                    if m == 0.0 {
                        continue;
                    }
                    let src = k * plane;
                    for p in 0..plane {
                        out[dst + p] += m * data[src + p];
                    }
                }
            }
        }
    }
    (out, out_dims)
}

/// All Bernstein basis values `B_i^n(t)`, `i = 0..=n`, by the de Casteljau triangle.
pub fn basis_values(n: usize, t: f64) -> Vec<f64> {
    let mut b = vec![0.0; n + 1];
    basis_values_into(n, t, &mut b);
    b
}

pub(crate) fn basis_values_into(n: usize, t: f64, b: &mut [f64]) {
    let s = 1.0 - t;
    b[0] = 1.0;
    for j in 1..=n {
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = b[r];
            b[r] = saved + s * tmp;
            saved = t * tmp;
        }
        b[j] = saved;
    }
}

/// Values and first derivatives of all degree-`n` Bernstein polynomials at `t`.
pub fn basis_values_and_derivatives(n: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let vals = basis_values(n, t);
    let mut ders = vec![0.0; n + 1];
    if n > 0 {
        let lower = basis_values(n - 1, t);
        for (i, d) in ders.iter_mut().enumerate() {
            let left = if i > 0 { lower[i - 1] } else { 0.0 };
            let right = if i < n { lower[i] } else { 0.0 };
            *d = n as f64 * (left - right);
        }
    }
    (vals, ders)
}

/// Row-major `(to+1) x (from+1)` elevation matrix.
pub(crate) fn elevation_matrix(from: usize, to: usize) -> Vec<f64> {
    let r = to - from;
    let mut m = vec![0.0; (to + 1) * (from + 1)];
    for i in 0..=to {
        for j in i.saturating_sub(r)..=i.min(from) {
            m[i * (from + 1) + j] = c(from, j) * c(r, i - j) / c(to, i);
        }
    }
    m
}

/// Row-major `(target+1) x (n+1)` matrix of `∫ B_r^n B_s^target`.
pub(crate) fn moment_matrix(n: usize, target: usize) -> Vec<f64> {
    let mut m = vec![0.0; (target + 1) * (n + 1)];
    let norm = (n + target + 1) as f64;
    for s in 0..=target {
        for r in 0..=n {
            m[s * (n + 1) + r] = c(n, r) * c(target, s) / (c(n + target, r + s) * norm);
        }
    }
    m
}

/// Left and right de Casteljau subdivision matrices at `t = 1/2`.
pub(crate) fn subdivision_matrices(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut left = vec![0.0; (n + 1) * (n + 1)];
    let mut right = vec![0.0; (n + 1) * (n + 1)];
    for i in 0..=n {
        let li = 0.5f64.powi(i as i32);
        for j in 0..=i {
            left[i * (n + 1) + j] = c(i, j) * li;
        }
        let ri = 0.5f64.powi((n - i) as i32);
        for j in i..=n {
            right[i * (n + 1) + j] = c(n - i, j - i) * ri;
        }
    }
    (left, right)
}
