//! Bernstein expansions of the Jacobian determinant, the cofactor matrix and
//! the stiffness-integrand numerator of one Bézier element.
//!
//! With `X_ξ, X_η, X_ζ` the parametric partials of the map, the cofactor rows
//! are `X_η×X_ζ`, `X_ζ×X_ξ`, `X_ξ×X_η` and `J = X_ξ·(X_η×X_ζ)`. For two basis
//! functions `A`, `B` the stiffness integrand on the unit cube is
//! `F = Σ_αβ M_αβ ∂_αA ∂_βB / J` with `M_αβ = Σ_c Cof_αc Cof_βc`. Every addend of
//! the numerator has degree `6p−2` in each direction, so no elevation is needed.

use crate::bernstein::{basis_values, convolve_into, unscale, BernsteinTensor, Degrees};
use crate::binomial::{c, BinomialTable};
use crate::error::{Error, Result};
use crate::spline::volume::BezierVolume;

/// Weights of the closed-form Jacobian triple sum.
///
/// One entry per admissible decomposition `i = i1+i2+i3` (and likewise in `j`, `k`),
/// where the `ξ`-difference is taken at `(i1,j1,k1)`, the `η`-difference at
/// `(i2,j2,k2)` and the `ζ`-difference at `(i3,j3,k3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DCoefficientTable {
    degrees: Degrees,
    /// Per direction: admissible `(x1,x2,x3)` triples.
    combos: [Vec<[usize; 3]>; 3],
    /// Full weights, `u`-combo fastest, then `v`, then `w`.
    weights: Vec<f64>,
}

impl DCoefficientTable {
    pub fn build(degrees: Degrees) -> Result<Self> {
        if degrees.iter().any(|&d| d < 1) {
            return Err(Error::Domain(format!("Jacobian table needs degrees >= 1, got {degrees:?}")));
        }
        for &d in &degrees {
            BinomialTable::global().require(3 * d - 1, "Jacobian expansion")?;
        }
        let [l, m, n] = degrees;
        // Degree of the differenced direction is one lower for the matching slot.
        let limits = [[l - 1, l, l], [m, m - 1, m], [n, n, n - 1]];
        let mut combos: [Vec<[usize; 3]>; 3] = Default::default();
        let mut w1: [Vec<f64>; 3] = Default::default();
        for d in 0..3 {
            let lim = limits[d];
            let deg = degrees[d];
            for x3 in 0..=lim[2] {
                for x2 in 0..=lim[1] {
                    for x1 in 0..=lim[0] {
                        combos[d].push([x1, x2, x3]);
                        w1[d].push(c(lim[0], x1) * c(lim[1], x2) * c(lim[2], x3) / c(3 * deg - 1, x1 + x2 + x3));
                    }
                }
            }
        }
        let scale = (l * m * n) as f64;
        let mut weights = Vec::with_capacity(w1[0].len() * w1[1].len() * w1[2].len());
        for &ww in &w1[2] {
            for &wv in &w1[1] {
                for &wu in &w1[0] {
                    weights.push(scale * wu * wv * ww);
                }
            }
        }
        Ok(DCoefficientTable { degrees, combos, weights })
    }

    pub fn degrees(&self) -> Degrees {
        self.degrees
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn combos(&self, axis: usize) -> &[[usize; 3]] {
        &self.combos[axis]
    }

    /// Weight of one decomposition given per-direction triples.
    pub fn weight(&self, u: [usize; 3], v: [usize; 3], w: [usize; 3]) -> Option<f64> {
        let pos = |axis: usize, t: [usize; 3]| self.combos[axis].iter().position(|&x| x == t);
        let (a, b, cc) = (pos(0, u)?, pos(1, v)?, pos(2, w)?);
        let (nu, nv) = (self.combos[0].len(), self.combos[1].len());
        Some(self.weights[a + nu * (b + nv * cc)])
    }

    /// Table from stored weights; only the index triples are regenerated.
    pub fn from_raw(degrees: Degrees, weights: Vec<f64>) -> Result<Self> {
        if degrees.iter().any(|&d| d < 1) {
            return Err(Error::Domain(format!("Jacobian table needs degrees >= 1, got {degrees:?}")));
        }
        let [l, m, n] = degrees;
        let limits = [[l - 1, l, l], [m, m - 1, m], [n, n, n - 1]];
        let combos: [Vec<[usize; 3]>; 3] = [0, 1, 2].map(|d| {
            let lim = limits[d];
            let mut v = Vec::new();
            for x3 in 0..=lim[2] {
                for x2 in 0..=lim[1] {
                    for x1 in 0..=lim[0] {
                        v.push([x1, x2, x3]);
                    }
                }
            }
            v
        });
        if combos.iter().map(|c| c.len()).product::<usize>() != weights.len() {
            return Err(Error::Format("stored Jacobian table has the wrong size".into()));
        }
        Ok(DCoefficientTable { degrees, combos, weights })
    }
}

/// `J(u)` as a Bernstein tensor of degrees `(3l−1, 3m−1, 3n−1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianExpansion {
    pub tensor: BernsteinTensor,
}

impl JacobianExpansion {
    pub fn evaluate(&self, u: [f64; 3]) -> f64 {
        self.tensor.eval(u)
    }

    pub fn min_coefficient(&self) -> f64 {
        self.tensor.coeffs().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Smallest value on an `n³` sample grid.
    pub fn min_on_grid(&self, n: usize) -> f64 {
        let d = self.tensor.degrees();
        let ts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1).max(1) as f64).collect();
        let bases: Vec<[Vec<f64>; 3]> =
            ts.iter().map(|&t| [basis_values(d[0], t), basis_values(d[1], t), basis_values(d[2], t)]).collect();
        let co = self.tensor.coeffs();
        let mut min = f64::INFINITY;
        for bw in &bases {
            for bv in &bases {
                for bu in &bases {
                    let mut acc = 0.0;
                    let mut idx = 0;
                    for &wk in &bw[2] {
                        for &vj in &bv[1] {
                            let mut s = 0.0;
                            for &ui in &bu[0] {
                                s += ui * co[idx];
                                idx += 1;
                            }
                            acc += wk * vj * s;
                        }
                    }
                    min = min.min(acc);
                }
            }
        }
        min
    }

    /// Warns and returns `false` when `J ≤ 0` somewhere on the 11³ grid.
    pub fn check_positive(&self, element: &str) -> bool {
        if self.min_coefficient() > 0.0 {
            return true;
        }
        let m = self.min_on_grid(11);
        if m <= 0.0 {
            log::warn!("element {element}: Jacobian reaches {m:.3e} on the sample grid");
            return false;
        }
        true
    }
}

/// Control-point differences `ΔP` along one axis, as three coordinate arrays.
fn differences(b: &BezierVolume, axis: usize) -> (Degrees, Vec<[f64; 3]>) {
    let d = b.degrees;
    let mut dd = d;
    dd[axis] -= 1;
    let (nu, nv) = (d[0] + 1, d[1] + 1);
    let mut out = Vec::with_capacity((dd[0] + 1) * (dd[1] + 1) * (dd[2] + 1));
    for k in 0..=dd[2] {
        for j in 0..=dd[1] {
            for i in 0..=dd[0] {
                let lo = i + nu * (j + nv * k);
                let hi = match axis {
                    0 => lo + 1,
                    1 => lo + nu,
                    _ => lo + nu * nv,
                };
                let (p, q) = (b.control[hi], b.control[lo]);
                out.push([p[0] - q[0], p[1] - q[1], p[2] - q[2]]);
            }
        }
    }
    (dd, out)
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Jacobian expansion through the closed-form weighted triple sum.
pub fn jacobian_expansion(b: &BezierVolume, table: &DCoefficientTable) -> Result<JacobianExpansion> {
    if b.degrees != table.degrees {
        return Err(Error::Internal(format!(
            "Jacobian table built for {:?}, element has degrees {:?}",
            table.degrees, b.degrees
        )));
    }
    let [l, m, n] = b.degrees;
    let (dx, px) = differences(b, 0);
    let (dy, py) = differences(b, 1);
    let (dz, pz) = differences(b, 2);
    let sx = [dx[0] + 1, dx[1] + 1];
    let sy = [dy[0] + 1, dy[1] + 1];
    let sz = [dz[0] + 1, dz[1] + 1];
    // Cross products of every η-difference with every ζ-difference.
    let ny = py.len();
    let mut crosses = vec![[0.0; 3]; ny * pz.len()];
    for (iz, &z) in pz.iter().enumerate() {
        for (iy, &y) in py.iter().enumerate() {
            crosses[iy + ny * iz] = cross(y, z);
        }
    }
    let jd = [3 * l - 1, 3 * m - 1, 3 * n - 1];
    let mut out = vec![0.0; (jd[0] + 1) * (jd[1] + 1) * (jd[2] + 1)];
    let (cu, cv, cw) = (&table.combos[0], &table.combos[1], &table.combos[2]);
    let mut widx = 0;
    for &[k1, k2, k3] in cw {
        let kk = k1 + k2 + k3;
        for &[j1, j2, j3] in cv {
            let jj = j1 + j2 + j3;
            let bx = sx[0] * (j1 + sx[1] * k1);
            let by = sy[0] * (j2 + sy[1] * k2);
            let bz = sz[0] * (j3 + sz[1] * k3);
            let row = (jd[0] + 1) * (jj + (jd[1] + 1) * kk);
            for &[i1, i2, i3] in cu {
                let a = px[bx + i1];
                let cr = crosses[(by + i2) + ny * (bz + i3)];
                out[row + i1 + i2 + i3] += table.weights[widx] * (a[0] * cr[0] + a[1] * cr[1] + a[2] * cr[2]);
                widx += 1;
            }
        }
    }
    Ok(JacobianExpansion { tensor: BernsteinTensor::from_parts(jd, out) })
}

/// Parametric partials of the map, per coordinate: `partials[a][c] = ∂x_c/∂u_a`.
pub fn partials(b: &BezierVolume) -> [[BernsteinTensor; 3]; 3] {
    let x = b.coordinates();
    [0, 1, 2].map(|a| [0, 1, 2].map(|c| x[c].derivative(a)))
}

/// Jacobian expansion through explicit Bernstein products of the partials.
pub fn jacobian_by_products(b: &BezierVolume) -> JacobianExpansion {
    let p = partials(b);
    let cof = cross_tensors(&p[1], &p[2]);
    let mut j = p[0][0].product(&cof[0]);
    j.axpy(1.0, &p[0][1].product(&cof[1])).expect("equal degrees");
    j.axpy(1.0, &p[0][2].product(&cof[2])).expect("equal degrees");
    JacobianExpansion { tensor: j }
}

/// Componentwise cross product of two tensor-valued vectors (6 products).
fn cross_tensors(a: &[BernsteinTensor; 3], b: &[BernsteinTensor; 3]) -> [BernsteinTensor; 3] {
    let comp = |i: usize, j: usize| {
        let mut t = a[i].product(&b[j]);
        t.axpy(-1.0, &a[j].product(&b[i])).expect("equal degrees");
        t
    };
    [comp(1, 2), comp(2, 0), comp(0, 1)]
}

/// The nine polynomial cofactors `J·∂u_α/∂x_c`, indexed `[α][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CofactorSet {
    pub cof: [[BernsteinTensor; 3]; 3],
}

impl CofactorSet {
    /// Bernstein products used to build the set.
    pub const PRODUCTS: usize = 18;

    pub fn evaluate(&self, u: [f64; 3]) -> [[f64; 3]; 3] {
        [0, 1, 2].map(|a| [0, 1, 2].map(|c| self.cof[a][c].eval(u)))
    }
}

pub fn cofactors(b: &BezierVolume) -> CofactorSet {
    let p = partials(b);
    CofactorSet { cof: [cross_tensors(&p[1], &p[2]), cross_tensors(&p[2], &p[0]), cross_tensors(&p[0], &p[1])] }
}

/// Symmetric metric numerators `M_αβ = Σ_c Cof_αc Cof_βc`, stored for `α ≤ β`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSet {
    pub terms: [BernsteinTensor; 6],
}

/// Position of `(α, β)` in [`MetricSet::terms`].
pub const fn metric_slot(a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    }
}

pub const METRIC_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

impl MetricSet {
    /// Bernstein products used to build the set.
    pub const PRODUCTS: usize = 18;

    pub fn from_cofactors(cof: &CofactorSet) -> MetricSet {
        // Products are accumulated in binomially scaled form and unscaled once per term.
        let scaled = cof.cof.each_ref().map(|row| row.each_ref().map(|t| t.binomial_scaled()));
        let term = |a: usize, b: usize| {
            let (da, db) = (cof.cof[a][0].degrees(), cof.cof[b][0].degrees());
            let dc = [da[0] + db[0], da[1] + db[1], da[2] + db[2]];
            let mut out = vec![0.0; (dc[0] + 1) * (dc[1] + 1) * (dc[2] + 1)];
            for cc in 0..3 {
                convolve_into(&mut out, &scaled[a][cc], da.map(|x| x + 1), &scaled[b][cc], db.map(|x| x + 1));
            }
            unscale(&mut out, dc);
            BernsteinTensor::new(dc, out).expect("product size")
        };
        MetricSet { terms: METRIC_PAIRS.map(|(a, b)| term(a, b)) }
    }

    pub fn get(&self, a: usize, b: usize) -> &BernsteinTensor {
        &self.terms[metric_slot(a, b)]
    }
}

/// Parametric gradients of every Bernstein basis function of one degree triple.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    pub degrees: Degrees,
    /// `grads[r][α]` for basis index `r` (`i` fastest).
    pub grads: Vec<[BernsteinTensor; 3]>,
}

impl GradientTable {
    pub fn build(degrees: Degrees) -> GradientTable {
        let [l, m, n] = degrees;
        let mut grads = Vec::with_capacity((l + 1) * (m + 1) * (n + 1));
        for k in 0..=n {
            for j in 0..=m {
                for i in 0..=l {
                    let b = BernsteinTensor::unit(degrees, [i, j, k]);
                    grads.push([b.derivative(0), b.derivative(1), b.derivative(2)]);
                }
            }
        }
        GradientTable { degrees, grads }
    }

    pub fn nnz(&self) -> usize {
        self.grads.iter().flatten().map(|t| t.coeffs().iter().filter(|&&x| x != 0.0).count()).sum()
    }
}

/// Numerator of the stiffness integrand for one basis pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryNumerator {
    pub tensor: BernsteinTensor,
    /// Bernstein products spent, including the cofactor and metric stages.
    pub products: usize,
}

/// Numerator degree for spline degrees `d`: `6d−2` per direction.
pub fn numerator_degrees(d: Degrees) -> Degrees {
    d.map(|x| 6 * x - 2)
}

/// Numerator from precomputed metric terms (18 products per pair).
pub fn entry_numerator_with_metric(
    metric: &MetricSet,
    j: &JacobianExpansion,
    ga: &[BernsteinTensor; 3],
    gb: &[BernsteinTensor; 3],
) -> Result<EntryNumerator> {
    let jd = j.tensor.degrees();
    let spline = jd.map(|x| x.div_ceil(3));
    if jd != spline.map(|x| 3 * x - 1) {
        return Err(Error::Internal(format!("Jacobian degrees {jd:?} are not of the form 3p-1")));
    }
    let target = numerator_degrees(spline);
    let mut acc = BernsteinTensor::zeros(target);
    let mut products = 0;
    for a in 0..3 {
        for b in 0..3 {
            let gg = ga[a].product(&gb[b]);
            let term = metric.get(a, b).product(&gg);
            products += 2;
            if term.degrees() != target {
                return Err(Error::Internal(format!(
                    "numerator addend ({a},{b}) has degrees {:?}, expected {target:?}",
                    term.degrees()
                )));
            }
            acc.axpy(1.0, &term)?;
        }
    }
    Ok(EntryNumerator { tensor: acc, products })
}

/// Numerator of the integrand for basis gradients `ga`, `gb` (54 products in total).
pub fn entry_numerator(
    cof: &CofactorSet,
    j: &JacobianExpansion,
    ga: &[BernsteinTensor; 3],
    gb: &[BernsteinTensor; 3],
) -> Result<EntryNumerator> {
    let metric = MetricSet::from_cofactors(cof);
    let mut n = entry_numerator_with_metric(&metric, j, ga, gb)?;
    n.products += CofactorSet::PRODUCTS + MetricSet::PRODUCTS;
    Ok(n)
}

/// Direct pointwise integrand `J ∇A·∇B` from the numeric inverse Jacobian.
pub fn integrand_pointwise(b: &BezierVolume, ga: &[BernsteinTensor; 3], gb: &[BernsteinTensor; 3], u: [f64; 3]) -> f64 {
    let jm = b.jacobian_matrix(u);
    let det = crate::spline::volume::det3(&jm);
    let inv = invert3(&jm);
    let pa = [ga[0].eval(u), ga[1].eval(u), ga[2].eval(u)];
    let pb = [gb[0].eval(u), gb[1].eval(u), gb[2].eval(u)];
    let mut s = 0.0;
    for cc in 0..3 {
        let xa: f64 = (0..3).map(|a| pa[a] * inv[a][cc]).sum();
        let xb: f64 = (0..3).map(|a| pb[a] * inv[a][cc]).sum();
        s += xa * xb;
    }
    s * det
}

/// Inverse of a 3×3 matrix by cofactors.
pub fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = crate::spline::volume::det3(m);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (i1, i2) = ((j + 1) % 3, (j + 2) % 3);
            let (j1, j2) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]) / det;
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::knots::KnotVector;
    use crate::spline::volume::{det3, BSplineVolume};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn element(d: Degrees, f: impl Fn([f64; 3]) -> [f64; 3]) -> BezierVolume {
        let kv = d.map(KnotVector::bezier);
        BSplineVolume::from_greville(kv, f).extract_bezier(0).remove(0)
    }

    fn random_element(rng: &mut ChaCha8Rng, d: Degrees) -> BezierVolume {
        let mut e = element(d, |p| p);
        for p in e.control.iter_mut() {
            for c in p.iter_mut() {
                *c += rng.gen_range(-0.08..0.08);
            }
        }
        e
    }

    #[test]
    fn d_table_linear_origin_entry() {
        let t = DCoefficientTable::build([1, 1, 1]).unwrap();
        assert_eq!(t.weight([0, 0, 0], [0, 0, 0], [0, 0, 0]), Some(1.0));
        assert!(t.weights().iter().all(|&w| w > 0.0));
        assert_eq!(t, DCoefficientTable::build([1, 1, 1]).unwrap());
        assert_eq!(DCoefficientTable::build([3, 3, 3]).unwrap().len(), 48 * 48 * 48);
        assert!(DCoefficientTable::build([0, 1, 1]).is_err());
    }

    #[test]
    fn identity_and_affine_jacobian() {
        for d in [[1, 1, 1], [2, 3, 1], [3, 3, 3]] {
            let t = DCoefficientTable::build(d).unwrap();
            let j = jacobian_expansion(&element(d, |p| p), &t).unwrap();
            assert!(j.tensor.coeffs().iter().all(|&x| (x - 1.0).abs() < 1e-13));
            let j = jacobian_expansion(&element(d, |p| [2.0 * p[0], 3.0 * p[1], 0.5 * p[2]]), &t).unwrap();
            assert!(j.tensor.coeffs().iter().all(|&x| (x - 3.0).abs() < 1e-13));
        }
    }

    #[test]
    fn two_routes_agree_and_match_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t = DCoefficientTable::build([3, 3, 3]).unwrap();
        for _ in 0..5 {
            let e = random_element(&mut rng, [3, 3, 3]);
            let a = jacobian_expansion(&e, &t).unwrap();
            let b = jacobian_by_products(&e);
            for (x, y) in a.tensor.coeffs().iter().zip(b.tensor.coeffs()) {
                assert!((x - y).abs() < 1e-12);
            }
            for _ in 0..100 {
                let u = [rng.gen(), rng.gen(), rng.gen()];
                assert!((a.evaluate(u) - det3(&e.jacobian_matrix(u))).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cofactor_examples() {
        let c = cofactors(&element([2, 2, 2], |p| p));
        for a in 0..3 {
            for cc in 0..3 {
                let want = if a == cc { 1.0 } else { 0.0 };
                assert!(c.cof[a][cc].coeffs().iter().all(|&x| (x - want).abs() < 1e-13));
            }
        }
        let c = cofactors(&element([2, 2, 2], |p| [2.0 * p[0], 3.0 * p[1], 4.0 * p[2]]));
        for (a, want) in [12.0, 8.0, 6.0].into_iter().enumerate() {
            assert!(c.cof[a][a].coeffs().iter().all(|&x| (x - want).abs() < 1e-12));
        }
    }

    #[test]
    fn cofactor_times_jacobian_is_j_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let e = random_element(&mut rng, [3, 2, 3]);
        let c = cofactors(&e);
        for _ in 0..100 {
            let u = [rng.gen(), rng.gen(), rng.gen()];
            let cm = c.evaluate(u);
            let jm = e.jacobian_matrix(u);
            let det = det3(&jm);
            for a in 0..3 {
                for b in 0..3 {
                    let s: f64 = (0..3).map(|cc| cm[a][cc] * jm[cc][b]).sum();
                    let want = if a == b { det } else { 0.0 };
                    assert!((s - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn numerator_on_linear_identity_cube() {
        let d = [1, 1, 1];
        let e = element(d, |p| p);
        let t = DCoefficientTable::build(d).unwrap();
        let j = jacobian_expansion(&e, &t).unwrap();
        let g = GradientTable::build(d);
        let num = entry_numerator(&cofactors(&e), &j, &g.grads[0], &g.grads[0]).unwrap();
        assert_eq!(num.products, 54);
        assert_eq!(num.tensor.degrees(), [4, 4, 4]);
        let mut want = BernsteinTensor::zeros([2, 2, 2]);
        for a in 0..3 {
            let sq = g.grads[0][a].product(&g.grads[0][a]);
            want.axpy(1.0, &sq.elevate([2, 2, 2]).unwrap()).unwrap();
        }
        let want = want.elevate([4, 4, 4]).unwrap();
        for (x, y) in num.tensor.coeffs().iter().zip(want.coeffs()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn numerator_matches_pointwise_integrand() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let d = [3, 3, 3];
        let e = random_element(&mut rng, d);
        let t = DCoefficientTable::build(d).unwrap();
        let j = jacobian_expansion(&e, &t).unwrap();
        let g = GradientTable::build(d);
        let cof = cofactors(&e);
        let (ra, rb) = (rng.gen_range(0..64), rng.gen_range(0..64));
        let num = entry_numerator(&cof, &j, &g.grads[ra], &g.grads[rb]).unwrap();
        assert_eq!(num.tensor.degrees(), [16, 16, 16]);
        let swapped = entry_numerator(&cof, &j, &g.grads[rb], &g.grads[ra]).unwrap();
        for (x, y) in num.tensor.coeffs().iter().zip(swapped.tensor.coeffs()) {
            assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
        }
        for _ in 0..100 {
            let u = [rng.gen(), rng.gen(), rng.gen()];
            let f = num.tensor.eval(u) / j.evaluate(u);
            let want = integrand_pointwise(&e, &g.grads[ra], &g.grads[rb], u);
            assert!((f - want).abs() <= 1e-9 * want.abs().max(1e-3), "{f} vs {want}");
        }
    }

    #[test]
    fn vanishing_gradient_products_give_zero_numerator() {
        // The gradient of a constant: every gradient product vanishes.
        let d = [1, 1, 1];
        let e = element(d, |p| p);
        let t = DCoefficientTable::build(d).unwrap();
        let j = jacobian_expansion(&e, &t).unwrap();
        let zero = [BernsteinTensor::zeros([0, 1, 1]), BernsteinTensor::zeros([1, 0, 1]), BernsteinTensor::zeros([1, 1, 0])];
        let g = GradientTable::build(d);
        let num = entry_numerator(&cofactors(&e), &j, &zero, &g.grads[3]).unwrap();
        assert!(num.tensor.is_zero());
    }

    #[test]
    fn diagonal_integrand_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let d = [2, 2, 2];
        let e = random_element(&mut rng, d);
        let t = DCoefficientTable::build(d).unwrap();
        let j = jacobian_expansion(&e, &t).unwrap();
        assert!(j.check_positive("test"));
        let g = GradientTable::build(d);
        let num = entry_numerator(&cofactors(&e), &j, &g.grads[5], &g.grads[5]).unwrap();
        for i in 0..6 {
            for k in 0..6 {
                let u = [i as f64 / 5.0, 0.3, k as f64 / 5.0];
                assert!(num.tensor.eval(u) / j.evaluate(u) >= -1e-12);
            }
        }
    }
}
