//! Clamped knot vectors on [0,1]: basis evaluation, Greville abscissae,
//! knot insertion and Bézier extraction.

use crate::error::{Error, Result};

/// Tolerance used to decide whether two knots coincide.
const KNOT_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

/// One dense `(p+1) x (p+1)` row-major matrix per element.
///
/// Row `a` expresses the `a`-th B-spline function active on the element as a
/// combination of the Bernstein polynomials on the element-local coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionOperator {
    pub degree: usize,
    /// Index of the first B-spline function active on each element.
    pub first_basis: Vec<usize>,
    /// Parametric interval of each element.
    pub spans: Vec<[f64; 2]>,
    pub matrices: Vec<Vec<f64>>,
}

impl ExtractionOperator {
    pub fn num_elements(&self) -> usize {
        self.matrices.len()
    }

    pub fn entry(&self, e: usize, a: usize, b: usize) -> f64 {
        self.matrices[e][a * (self.degree + 1) + b]
    }
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree < 1 {
            return Err(Error::Format("knot vector degree must be at least 1".into()));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Format("knot vector contains a non-finite value".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Format("knot vector is not nondecreasing".into()));
        }
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::Format(format!(
                "knot vector of length {} too short for degree {p}",
                knots.len()
            )));
        }
        let n = knots.len();
        let clamped = knots[..=p].iter().all(|&k| k == 0.0) && knots[n - p - 1..].iter().all(|&k| k == 1.0);
        if !clamped {
            return Err(Error::Format(format!(
                "knot vector must be clamped on [0,1] with {} repeated end knots",
                p + 1
            )));
        }
        let kv = KnotVector { degree, knots };
        for (t, m) in kv.interior_signature() {
            if m > p {
                return Err(Error::Format(format!("interior knot {t} has multiplicity {m} > degree {p}")));
            }
            if t <= 0.0 || t >= 1.0 {
                return Err(Error::Format(format!("interior knot {t} outside (0,1)")));
            }
        }
        Ok(kv)
    }

    /// Single-element (Bézier) knot vector.
    pub fn bezier(degree: usize) -> Self {
        let mut knots = vec![0.0; degree + 1];
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        KnotVector { degree, knots }
    }

    /// Uniform knot vector with `elements` spans and simple interior knots.
    pub fn uniform(degree: usize, elements: usize) -> Self {
        let mut knots = vec![0.0; degree + 1];
        for e in 1..elements {
            knots.push(e as f64 / elements as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        KnotVector { degree, knots }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Distinct knot values, including 0 and 1.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &k in &self.knots {
            if out.last().is_none_or(|&l| k - l > KNOT_EPS) {
                out.push(k);
            }
        }
        out
    }

    pub fn num_elements(&self) -> usize {
        self.breakpoints().len() - 1
    }

    /// Interior knots with multiplicities, in increasing order.
    pub fn interior_signature(&self) -> Vec<(f64, usize)> {
        let p = self.degree;
        let inner = &self.knots[p + 1..self.knots.len() - p - 1];
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &k in inner {
            match out.last_mut() {
                Some((v, m)) if k - *v <= KNOT_EPS => *m += 1,
                _ => out.push((k, 1)),
            }
        }
        out
    }

    /// Knot span index `μ` with `knots[μ] ≤ t < knots[μ+1]` (last span closed on the right).
    pub fn span(&self, t: f64) -> usize {
        let p = self.degree;
        let n = self.num_basis();
        if t >= self.knots[n] {
            return n - 1;
        }
        if t <= self.knots[p] {
            return p;
        }
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of the `p+1` nonzero basis functions at `t`, with the index of the first.
    pub fn basis(&self, t: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let mu = self.span(t);
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[mu + 1 - j];
            right[j] = u[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        (mu - p, n)
    }

    /// Values and first derivatives of the nonzero basis functions at `t`.
    pub fn basis_and_derivative(&self, t: f64) -> (usize, Vec<f64>, Vec<f64>) {
        let p = self.degree;
        let (first, vals) = self.basis(t);
        let lower = KnotVector { degree: p - 1, knots: self.knots[1..self.knots.len() - 1].to_vec() };
        // Degree p-1 functions on the shortened vector share the same span structure.
        let mu = first + p;
        let u = &self.knots;
        let lower_vals = lower.basis_in_span(t, mu - 1);
        let mut ders = vec![0.0; p + 1];
        for (a, d) in ders.iter_mut().enumerate() {
            let i = first + a;
            let left = if a > 0 {
                let den = u[i + p] - u[i];
                if den > 0.0 { p as f64 * lower_vals[a - 1] / den } else { 0.0 }
            } else {
                0.0
            };
            let right = if a < p {
                let den = u[i + p + 1] - u[i + 1];
                if den > 0.0 { p as f64 * lower_vals[a] / den } else { 0.0 }
            } else {
                0.0
            };
            *d = left - right;
        }
        (first, vals, ders)
    }

    fn basis_in_span(&self, t: f64, mu: usize) -> Vec<f64> {
        let p = self.degree;
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[mu + 1 - j];
            right[j] = u[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let den = right[r + 1] + left[j - r];
                let tmp = if den != 0.0 { n[r] / den } else { 0.0 };
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        n
    }

    /// Greville abscissae: mean of `p` consecutive knots per basis function.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.num_basis())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// Inserts `t` once (Boehm). Returns the new vector and coefficients `a` with
    /// `N_old_j = a_j N_new_j + (1 - a_{j+1}) N_new_{j+1}`.
    pub fn insert(&self, t: f64) -> Result<(KnotVector, Vec<f64>)> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!("cannot insert knot {t} outside (0,1)")));
        }
        let p = self.degree;
        let n = self.num_basis();
        let k = self.span(t);
        let mult = self.knots.iter().filter(|&&x| (x - t).abs() <= KNOT_EPS).count();
        if mult >= p {
            return Err(Error::Domain(format!("knot {t} already has multiplicity {mult}")));
        }
        let u = &self.knots;
        let mut a = vec![0.0; n + 1];
        for (i, ai) in a.iter_mut().enumerate() {
            *ai = if i + p <= k {
                1.0
            } else if i <= k {
                (t - u[i]) / (u[i + p] - u[i])
            } else {
                0.0
            };
        }
        let mut knots = u.clone();
        knots.insert(k + 1, t);
        Ok((KnotVector { degree: p, knots }, a))
    }

    /// Inserts all `ts` (sorted or not). Returns the new vector and the dense
    /// `n_old x n_new` matrix `R` with `N_old = R · N_new`.
    pub fn insert_all(&self, ts: &[f64]) -> Result<(KnotVector, Vec<Vec<f64>>)> {
        let n = self.num_basis();
        let mut r: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[i] = 1.0;
                row
            })
            .collect();
        let mut kv = self.clone();
        for &t in ts {
            let (next, a) = kv.insert(t)?;
            let m = kv.num_basis();
            for row in r.iter_mut() {
                let mut new_row = vec![0.0; m + 1];
                for j in 0..m {
                    let x = row[j];
                    if x != 0.0 {
                        new_row[j] += x * a[j];
                        new_row[j + 1] += x * (1.0 - a[j + 1]);
                    }
                }
                *row = new_row;
            }
            kv = next;
        }
        Ok((kv, r))
    }

    /// Bisects every nonzero span `levels` times.
    pub fn refine(&self, levels: usize) -> Result<(KnotVector, Vec<Vec<f64>>)> {
        let mut ts = Vec::new();
        let mut bp = self.breakpoints();
        for _ in 0..levels {
            let mut next = Vec::with_capacity(2 * bp.len());
            for w in bp.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                ts.push(mid);
                next.push(w[0]);
                next.push(mid);
            }
            next.push(*bp.last().unwrap());
            bp = next;
        }
        self.insert_all(&ts)
    }

    /// Bézier extraction by inserting every interior knot up to multiplicity `p`.
    pub fn extraction_operators(&self) -> ExtractionOperator {
        let p = self.degree;
        let mut ts = Vec::new();
        for (t, m) in self.interior_signature() {
            ts.extend(std::iter::repeat(t).take(p - m));
        }
        let (_, t) = self.insert_all(&ts).expect("interior knots are valid insertion sites");
        let bp = self.breakpoints();
        let ne = bp.len() - 1;
        let mut first_basis = Vec::with_capacity(ne);
        let mut spans = Vec::with_capacity(ne);
        let mut matrices = Vec::with_capacity(ne);
        for e in 0..ne {
            let mid = 0.5 * (bp[e] + bp[e + 1]);
            let first = self.span(mid) - p;
            let mut c = vec![0.0; (p + 1) * (p + 1)];
            for a in 0..=p {
                for b in 0..=p {
                    c[a * (p + 1) + b] = t[first + a][e * p + b];
                }
            }
            first_basis.push(first);
            spans.push([bp[e], bp[e + 1]]);
            matrices.push(c);
        }
        ExtractionOperator { degree: p, first_basis, spans, matrices }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bernstein::basis_values;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain recursive Cox–de Boor definition, used as an oracle.
    fn cox_de_boor(u: &[f64], i: usize, p: usize, t: f64) -> f64 {
        if p == 0 {
            let last = *u.last().unwrap();
            let hit = if t == last { u[i] < t && t <= u[i + 1] } else { u[i] <= t && t < u[i + 1] };
            return if hit { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = u[i + p] - u[i];
        if d1 > 0.0 {
            v += (t - u[i]) / d1 * cox_de_boor(u, i, p - 1, t);
        }
        let d2 = u[i + p + 1] - u[i + 1];
        if d2 > 0.0 {
            v += (u[i + p + 1] - t) / d2 * cox_de_boor(u, i + 1, p - 1, t);
        }
        v
    }

    #[test]
    fn validation() {
        assert!(KnotVector::new(3, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(KnotVector::new(1, vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(KnotVector::new(2, vec![0.0, 0.0, 0.0, 0.6, 0.4, 1.0, 1.0, 1.0]).is_err());
        assert!(KnotVector::new(1, vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0]).is_err());
        assert!(KnotVector::new(3, vec![0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn basis_matches_cox_de_boor() {
        let kv = KnotVector::new(3, vec![0., 0., 0., 0., 0.2, 0.5, 0.5, 0.7, 1., 1., 1., 1.]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t: f64 = rng.gen();
            let (first, vals) = kv.basis(t);
            for i in 0..kv.num_basis() {
                let expect = cox_de_boor(kv.knots(), i, 3, t);
                let got = if i >= first && i <= first + 3 { vals[i - first] } else { 0.0 };
                assert!((got - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let kv = KnotVector::new(3, vec![0., 0., 0., 0., 0.3, 0.6, 1., 1., 1., 1.]).unwrap();
        for &t in &[0.1, 0.35, 0.59, 0.8] {
            let (first, _, ders) = kv.basis_and_derivative(t);
            let h = 1e-6;
            for a in 0..=3 {
                let i = first + a;
                let fd = (cox_de_boor(kv.knots(), i, 3, t + h) - cox_de_boor(kv.knots(), i, 3, t - h)) / (2.0 * h);
                assert!((ders[a] - fd).abs() < 1e-6, "t={t} a={a}");
            }
        }
    }

    #[test]
    fn greville_examples() {
        let g = KnotVector::bezier(3).greville();
        for (x, y) in g.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((x - y).abs() < 1e-15);
        }
        let g = KnotVector::new(1, vec![0.0, 0.0, 0.5, 1.0, 1.0]).unwrap().greville();
        assert_eq!(g, vec![0.0, 0.5, 1.0]);
        let g = KnotVector::uniform(3, 2).greville();
        for (x, y) in g.iter().zip([0.0, 1.0 / 6.0, 0.5, 5.0 / 6.0, 1.0]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn greville_interpolates_linear() {
        // Σ g_i N_i(t) = t: linear precision at the Greville abscissae.
        let kv = KnotVector::new(3, vec![0., 0., 0., 0., 0.25, 0.4, 0.4, 0.8, 1., 1., 1., 1.]).unwrap();
        let g = kv.greville();
        for k in 0..=50 {
            let t = k as f64 / 50.0;
            let (first, vals) = kv.basis(t);
            let s: f64 = vals.iter().enumerate().map(|(a, v)| v * g[first + a]).sum();
            assert!((s - t).abs() < 1e-14);
        }
    }

    #[test]
    fn bezier_extraction_is_identity() {
        let ex = KnotVector::bezier(3).extraction_operators();
        assert_eq!(ex.num_elements(), 1);
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(ex.entry(0, a, b), if a == b { 1.0 } else { 0.0 });
            }
        }
    }

    fn check_extraction(kv: &KnotVector) {
        let p = kv.degree();
        let ex = kv.extraction_operators();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for e in 0..ex.num_elements() {
            let [a0, a1] = ex.spans[e];
            for _ in 0..20 {
                let s: f64 = rng.gen();
                let t = a0 + s * (a1 - a0);
                let b = basis_values(p, s);
                for a in 0..=p {
                    let i = ex.first_basis[e] + a;
                    let via: f64 = (0..=p).map(|k| ex.entry(e, a, k) * b[k]).sum();
                    assert!((via - cox_de_boor(kv.knots(), i, p, t)).abs() < 1e-12);
                }
                for a in 0..=p {
                    for k in 0..=p {
                        assert!(ex.entry(e, a, k) >= -1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn extraction_matches_basis() {
        let kv = KnotVector::uniform(3, 2);
        assert_eq!(kv.extraction_operators().num_elements(), 2);
        check_extraction(&kv);
        let kv = KnotVector::new(3, vec![0., 0., 0., 0., 0.25, 0.5, 0.75, 1., 1., 1., 1.]).unwrap();
        assert_eq!(kv.extraction_operators().num_elements(), 4);
        check_extraction(&kv);
        check_extraction(&KnotVector::new(2, vec![0., 0., 0., 0.3, 0.3, 0.9, 1., 1., 1.]).unwrap());
        check_extraction(&KnotVector::uniform(1, 3));
    }

    #[test]
    fn extraction_oracle_by_full_insertion() {
        // Insert 0.5 twice more into {0^4,0.5,1^4}: the coefficients of the original
        // functions in the resulting Bernstein basis are the extraction rows.
        let kv = KnotVector::uniform(3, 2);
        let (_, a1) = kv.insert(0.5).unwrap();
        let ex = kv.extraction_operators();
        // First element, first function: N_0 = B_0 on [0,0.5] in both.
        assert!((ex.entry(0, 0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(a1.len(), kv.num_basis() + 1);
        // Known closed form for a uniform cubic with one interior knot.
        let row1 = [0.0, 1.0, 0.5, 0.25];
        for (b, v) in row1.iter().enumerate() {
            assert!((ex.entry(0, 1, b) - v).abs() < 1e-15);
        }
    }

    #[test]
    fn refinement_preserves_functions() {
        let kv = KnotVector::new(3, vec![0., 0., 0., 0., 0.4, 1., 1., 1., 1.]).unwrap();
        let (fine, r) = kv.refine(2).unwrap();
        assert_eq!(fine.num_elements(), 8);
        for k in 0..=40 {
            let t = k as f64 / 40.0;
            let (f0, v0) = fine.basis(t);
            for (i, row) in r.iter().enumerate() {
                let coarse = cox_de_boor(kv.knots(), i, 3, t);
                let via: f64 = v0.iter().enumerate().map(|(a, v)| v * row[f0 + a]).sum();
                assert!((coarse - via).abs() < 1e-13);
            }
        }
        let (same, _) = kv.refine(0).unwrap();
        assert_eq!(same, kv);
    }
}
