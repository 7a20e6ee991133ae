//! Trivariate B-spline volumes and their per-element Bézier form.

use crate::bernstein::{apply_along, basis_values, basis_values_and_derivatives, BernsteinTensor};
use crate::error::{Error, Result};
use crate::spline::knots::{ExtractionOperator, KnotVector};

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineVolume {
    knots: [KnotVector; 3],
    /// Control points, `i` fastest.
    control: Vec<Point>,
}

/// One tensor-product element of a B-spline volume in Bernstein form.
#[derive(Debug, Clone, PartialEq)]
pub struct BezierVolume {
    pub degrees: [usize; 3],
    pub control: Vec<Point>,
    pub block: usize,
    pub element: [usize; 3],
    /// Parametric box of the element inside its block.
    pub sub_box: [[f64; 2]; 3],
}

/// Splits a point list into three coordinate arrays.
pub(crate) fn split_coords(points: &[Point]) -> [Vec<f64>; 3] {
    let mut out = [
        Vec::with_capacity(points.len()),
        Vec::with_capacity(points.len()),
        Vec::with_capacity(points.len()),
    ];
    for p in points {
        for c in 0..3 {
            out[c].push(p[c]);
        }
    }
    out
}

pub(crate) fn join_coords(c: &[Vec<f64>; 3]) -> Vec<Point> {
    (0..c[0].len()).map(|i| [c[0][i], c[1][i], c[2][i]]).collect()
}

impl BSplineVolume {
    pub fn new(knots: [KnotVector; 3], control: Vec<Point>) -> Result<Self> {
        let n: usize = knots.iter().map(|k| k.num_basis()).product();
        if control.len() != n {
            return Err(Error::Format(format!(
                "control grid has {} points but the knot vectors define {n} basis functions",
                control.len()
            )));
        }
        if control.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Format("control grid contains a non-finite coordinate".into()));
        }
        Ok(BSplineVolume { knots, control })
    }

    /// Builds a volume whose control points are `f` applied to the Greville lattice.
    pub fn from_greville(knots: [KnotVector; 3], f: impl Fn(Point) -> Point) -> Self {
        let g: Vec<Vec<f64>> = knots.iter().map(|k| k.greville()).collect();
        let mut control = Vec::with_capacity(g[0].len() * g[1].len() * g[2].len());
        for &w in &g[2] {
            for &v in &g[1] {
                for &u in &g[0] {
                    control.push(f([u, v, w]));
                }
            }
        }
        BSplineVolume { knots, control }
    }

    /// Interpolates `f` at the Greville lattice (tensor collocation).
    pub fn interpolate(knots: [KnotVector; 3], f: impl Fn(Point) -> Point) -> Result<Self> {
        let samples = BSplineVolume::from_greville(knots.clone(), f);
        let mut inverses: [Vec<f64>; 3] = Default::default();
        for d in 0..3 {
            let kv = &knots[d];
            let n = kv.num_basis();
            let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
            for (i, &g) in kv.greville().iter().enumerate() {
                let (first, vals) = kv.basis(g);
                for (k, v) in vals.into_iter().enumerate() {
                    a[(i, first + k)] = v;
                }
            }
            let inv = a
                .try_inverse()
                .ok_or_else(|| Error::Domain(format!("Greville collocation matrix in direction {d} is singular")))?;
            inverses[d] = (0..n * n).map(|k| inv[(k / n, k % n)]).collect();
        }
        Ok(samples.transform(knots, inverses))
    }

    pub fn knots(&self) -> &[KnotVector; 3] {
        &self.knots
    }

    pub fn degrees(&self) -> [usize; 3] {
        [self.knots[0].degree(), self.knots[1].degree(), self.knots[2].degree()]
    }

    pub fn control(&self) -> &[Point] {
        &self.control
    }

    pub fn control_mut(&mut self) -> &mut [Point] {
        &mut self.control
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.knots[0].num_basis(), self.knots[1].num_basis(), self.knots[2].num_basis()]
    }

    pub fn num_control(&self) -> usize {
        self.control.len()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nu, nv, _] = self.counts();
        i + nu * (j + nv * k)
    }

    pub fn num_elements(&self) -> [usize; 3] {
        [self.knots[0].num_elements(), self.knots[1].num_elements(), self.knots[2].num_elements()]
    }

    /// Geometry at parameter `t` in `[0,1]^3`.
    pub fn evaluate(&self, t: Point) -> Point {
        let (fu, bu) = self.knots[0].basis(t[0]);
        let (fv, bv) = self.knots[1].basis(t[1]);
        let (fw, bw) = self.knots[2].basis(t[2]);
        let mut x = [0.0; 3];
        for (c, &nw) in bw.iter().enumerate() {
            for (b, &nv) in bv.iter().enumerate() {
                for (a, &nu) in bu.iter().enumerate() {
                    let p = &self.control[self.index(fu + a, fv + b, fw + c)];
                    let s = nu * nv * nw;
                    for d in 0..3 {
                        x[d] += s * p[d];
                    }
                }
            }
        }
        x
    }

    /// Applies per-direction `n_new x n_old` row-major matrices to the control grid.
    fn transform(&self, knots: [KnotVector; 3], mats: [Vec<f64>; 3]) -> BSplineVolume {
        let mut dims = self.counts();
        let mut coords = split_coords(&self.control);
        for axis in 0..3 {
            let out_len = knots[axis].num_basis();
            for c in coords.iter_mut() {
                let (next, _) = apply_along(c, dims, axis, &mats[axis], out_len);
                *c = next;
            }
            dims[axis] = out_len;
        }
        BSplineVolume { knots, control: join_coords(&coords) }
    }

    /// Bisects every span `levels` times in each direction; geometry is unchanged.
    pub fn h_refine(&self, levels: usize) -> Result<BSplineVolume> {
        if levels == 0 {
            return Ok(self.clone());
        }
        let mut kvs = Vec::with_capacity(3);
        let mut mats = Vec::with_capacity(3);
        for kv in &self.knots {
            let (fine, r) = kv.refine(levels)?;
            mats.push(transpose(&r, fine.num_basis()));
            kvs.push(fine);
        }
        let knots: [KnotVector; 3] = kvs.try_into().expect("three directions");
        let mats: [Vec<f64>; 3] = mats.try_into().expect("three directions");
        Ok(self.transform(knots, mats))
    }

    /// Inserts the given knots per direction; geometry is unchanged.
    pub fn insert_knots(&self, ts: [&[f64]; 3]) -> Result<BSplineVolume> {
        let mut kvs = Vec::with_capacity(3);
        let mut mats = Vec::with_capacity(3);
        for (kv, t) in self.knots.iter().zip(ts) {
            let (fine, r) = kv.insert_all(t)?;
            mats.push(transpose(&r, fine.num_basis()));
            kvs.push(fine);
        }
        Ok(self.transform(kvs.try_into().expect("3"), mats.try_into().expect("3")))
    }

    pub fn extraction_operators(&self) -> [ExtractionOperator; 3] {
        [
            self.knots[0].extraction_operators(),
            self.knots[1].extraction_operators(),
            self.knots[2].extraction_operators(),
        ]
    }

    /// All Bézier elements, `u` fastest.
    pub fn extract_bezier(&self, block: usize) -> Vec<BezierVolume> {
        let ex = self.extraction_operators();
        let ne = [ex[0].num_elements(), ex[1].num_elements(), ex[2].num_elements()];
        let mut out = Vec::with_capacity(ne[0] * ne[1] * ne[2]);
        for ek in 0..ne[2] {
            for ej in 0..ne[1] {
                for ei in 0..ne[0] {
                    out.push(self.bezier_element(block, [ei, ej, ek], &ex));
                }
            }
        }
        out
    }

    /// Local control indices (into this block) of the functions active on element `e`.
    pub fn element_local_indices(&self, e: [usize; 3], ex: &[ExtractionOperator; 3]) -> Vec<usize> {
        let d = self.degrees();
        let f = [ex[0].first_basis[e[0]], ex[1].first_basis[e[1]], ex[2].first_basis[e[2]]];
        let mut out = Vec::with_capacity((d[0] + 1) * (d[1] + 1) * (d[2] + 1));
        for c in 0..=d[2] {
            for b in 0..=d[1] {
                for a in 0..=d[0] {
                    out.push(self.index(f[0] + a, f[1] + b, f[2] + c));
                }
            }
        }
        out
    }

    pub fn bezier_element(&self, block: usize, e: [usize; 3], ex: &[ExtractionOperator; 3]) -> BezierVolume {
        let d = self.degrees();
        let local = self.element_local_indices(e, ex);
        let pts: Vec<Point> = local.iter().map(|&i| self.control[i]).collect();
        let mut coords = split_coords(&pts);
        let dims = [d[0] + 1, d[1] + 1, d[2] + 1];
        for axis in 0..3 {
            let ct = transpose_square(&ex[axis].matrices[e[axis]], d[axis] + 1);
            for c in coords.iter_mut() {
                *c = apply_along(c, dims, axis, &ct, d[axis] + 1).0;
            }
        }
        BezierVolume {
            degrees: d,
            control: join_coords(&coords),
            block,
            element: e,
            sub_box: [ex[0].spans[e[0]], ex[1].spans[e[1]], ex[2].spans[e[2]]],
        }
    }

    /// Control grid of one face, ordered with the face's first in-plane axis fastest.
    ///
    /// Faces: 0 = u0, 1 = u1, 2 = v0, 3 = v1, 4 = w0, 5 = w1. In-plane axes are the
    /// two remaining parametric directions in increasing order.
    pub fn face_indices(&self, face: usize) -> (Vec<usize>, [usize; 2]) {
        let [nu, nv, nw] = self.counts();
        let axis = face / 2;
        let fixed = |n: usize| if face % 2 == 0 { 0 } else { n - 1 };
        let mut out = Vec::new();
        let dims = match axis {
            0 => {
                let i = fixed(nu);
                for k in 0..nw {
                    for j in 0..nv {
                        out.push(self.index(i, j, k));
                    }
                }
                [nv, nw]
            }
            1 => {
                let j = fixed(nv);
                for k in 0..nw {
                    for i in 0..nu {
                        out.push(self.index(i, j, k));
                    }
                }
                [nu, nw]
            }
            _ => {
                let k = fixed(nw);
                for j in 0..nv {
                    for i in 0..nu {
                        out.push(self.index(i, j, k));
                    }
                }
                [nu, nv]
            }
        };
        (out, dims)
    }

    /// Knot vectors of the two in-plane directions of a face.
    pub fn face_knots(&self, face: usize) -> [&KnotVector; 2] {
        match face / 2 {
            0 => [&self.knots[1], &self.knots[2]],
            1 => [&self.knots[0], &self.knots[2]],
            _ => [&self.knots[0], &self.knots[1]],
        }
    }
}

fn transpose(r: &[Vec<f64>], cols: usize) -> Vec<f64> {
    let rows = r.len();
    let mut t = vec![0.0; rows * cols];
    for (i, row) in r.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            t[j * rows + i] = x;
        }
    }
    t
}

fn transpose_square(m: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = m[i * n + j];
        }
    }
    t
}

impl BezierVolume {
    pub fn num_control(&self) -> usize {
        self.control.len()
    }

    /// One coordinate of the map as a Bernstein tensor.
    pub fn coordinate(&self, c: usize) -> BernsteinTensor {
        BernsteinTensor::from_parts(self.degrees, self.control.iter().map(|p| p[c]).collect())
    }

    pub fn coordinates(&self) -> [BernsteinTensor; 3] {
        [self.coordinate(0), self.coordinate(1), self.coordinate(2)]
    }

    /// Geometry at local parameter `u` in `[0,1]^3`.
    pub fn evaluate(&self, u: Point) -> Point {
        let [du, dv, dw] = self.degrees;
        let bu = basis_values(du, u[0]);
        let bv = basis_values(dv, u[1]);
        let bw = basis_values(dw, u[2]);
        let mut x = [0.0; 3];
        let mut idx = 0;
        for &wk in &bw {
            for &vj in &bv {
                for &ui in &bu {
                    let s = ui * vj * wk;
                    let p = &self.control[idx];
                    x[0] += s * p[0];
                    x[1] += s * p[1];
                    x[2] += s * p[2];
                    idx += 1;
                }
            }
        }
        x
    }

    /// Jacobian matrix `J[c][a] = ∂x_c/∂u_a` at local parameter `u`.
    pub fn jacobian_matrix(&self, u: Point) -> [[f64; 3]; 3] {
        let [du, dv, dw] = self.degrees;
        let (bu, du_) = basis_values_and_derivatives(du, u[0]);
        let (bv, dv_) = basis_values_and_derivatives(dv, u[1]);
        let (bw, dw_) = basis_values_and_derivatives(dw, u[2]);
        let mut j = [[0.0; 3]; 3];
        let mut idx = 0;
        for k in 0..=dw {
            for jj in 0..=dv {
                for i in 0..=du {
                    let g = [du_[i] * bv[jj] * bw[k], bu[i] * dv_[jj] * bw[k], bu[i] * bv[jj] * dw_[k]];
                    let p = &self.control[idx];
                    for c in 0..3 {
                        for a in 0..3 {
                            j[c][a] += p[c] * g[a];
                        }
                    }
                    idx += 1;
                }
            }
        }
        j
    }

    /// Maps a local parameter to the block parameter.
    pub fn to_block_param(&self, u: Point) -> Point {
        let mut t = [0.0; 3];
        for a in 0..3 {
            let [lo, hi] = self.sub_box[a];
            t[a] = lo + u[a] * (hi - lo);
        }
        t
    }

    pub fn translated(&self, shift: Point) -> BezierVolume {
        let mut b = self.clone();
        for p in b.control.iter_mut() {
            for c in 0..3 {
                p[c] += shift[c];
            }
        }
        b
    }

    /// The restriction to one octant of the local cube, as its own Bézier volume.
    pub fn octant(&self, octant: usize) -> BezierVolume {
        let coords = self.coordinates().map(|t| t.octant(octant));
        let control = join_coords(&[
            coords[0].coeffs().to_vec(),
            coords[1].coeffs().to_vec(),
            coords[2].coeffs().to_vec(),
        ]);
        let mut sub_box = self.sub_box;
        for (a, sb) in sub_box.iter_mut().enumerate() {
            let mid = 0.5 * (sb[0] + sb[1]);
            if octant >> a & 1 == 1 {
                sb[0] = mid;
            } else {
                sb[1] = mid;
            }
        }
        BezierVolume { degrees: self.degrees, control, block: self.block, element: self.element, sub_box }
    }
}

pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    /// Oracle: full tensor sum over every basis function with the recursive definition.
    fn oracle_eval(v: &BSplineVolume, t: Point) -> Point {
        let [nu, nv, nw] = v.counts();
        let d = v.degrees();
        let k = v.knots();
        let mut x = [0.0; 3];
        for kk in 0..nw {
            let bw = cox_de_boor(k[2].knots(), kk, d[2], t[2]);
            for j in 0..nv {
                let bv = cox_de_boor(k[1].knots(), j, d[1], t[1]);
                for i in 0..nu {
                    let s = cox_de_boor(k[0].knots(), i, d[0], t[0]) * bv * bw;
                    let p = v.control()[v.index(i, j, kk)];
                    for c in 0..3 {
                        x[c] += s * p[c];
                    }
                }
            }
        }
        x
    }

    fn random_volume(rng: &mut ChaCha8Rng, ne: [usize; 3]) -> BSplineVolume {
        let knots = ne.map(|n| KnotVector::uniform(3, n));
        let mut v = BSplineVolume::from_greville(knots, |p| p);
        for p in v.control_mut() {
            for c in p.iter_mut() {
                *c += rng.gen_range(-0.05..0.05);
            }
        }
        v
    }

    #[test]
    fn evaluate_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v = random_volume(&mut rng, [2, 1, 3]);
        for _ in 0..50 {
            let t = [rng.gen(), rng.gen(), rng.gen()];
            let a = v.evaluate(t);
            let b = oracle_eval(&v, t);
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn bezier_knots_extract_to_same_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let v = random_volume(&mut rng, [1, 1, 1]);
        let el = v.extract_bezier(0);
        assert_eq!(el.len(), 1);
        assert_eq!(el[0].control, v.control());
    }

    #[test]
    fn four_elements_along_one_direction() {
        let knots = [
            KnotVector::new(3, vec![0., 0., 0., 0., 0.25, 0.5, 0.75, 1., 1., 1., 1.]).unwrap(),
            KnotVector::bezier(3),
            KnotVector::bezier(3),
        ];
        let v = BSplineVolume::from_greville(knots, |p| p);
        assert_eq!(v.extract_bezier(0).len(), 4);
    }

    #[test]
    fn extraction_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let v = random_volume(&mut rng, [2, 2, 2]);
        let els = v.extract_bezier(0);
        assert_eq!(els.len(), 8);
        for _ in 0..200 {
            let t: Point = [rng.gen(), rng.gen(), rng.gen()];
            let e = &els[rng.gen_range(0..els.len())];
            let tb = e.to_block_param(t);
            let a = e.evaluate(t);
            let b = oracle_eval(&v, tb);
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn h_refine_preserves_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let v = random_volume(&mut rng, [1, 2, 1]);
        assert_eq!(v.h_refine(0).unwrap(), v);
        let r = v.h_refine(2).unwrap();
        assert_eq!(r.num_elements(), [4, 8, 4]);
        assert!(r.num_control() > v.num_control());
        for _ in 0..100 {
            let t: Point = [rng.gen(), rng.gen(), rng.gen()];
            let a = v.evaluate(t);
            let b = r.evaluate(t);
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
        let id = BSplineVolume::from_greville([0, 1, 2].map(|_| KnotVector::bezier(3)), |p| p).h_refine(1).unwrap();
        for _ in 0..100 {
            let t: Point = [rng.gen(), rng.gen(), rng.gen()];
            let x = id.evaluate(t);
            for c in 0..3 {
                assert!((x[c] - t[c]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let v = random_volume(&mut rng, [1, 1, 1]);
        let e = &v.extract_bezier(0)[0];
        let u = [0.3, 0.6, 0.45];
        let j = e.jacobian_matrix(u);
        let h = 1e-6;
        for a in 0..3 {
            let mut up = u;
            let mut dn = u;
            up[a] += h;
            dn[a] -= h;
            let (xp, xm) = (e.evaluate(up), e.evaluate(dn));
            for c in 0..3 {
                assert!((j[c][a] - (xp[c] - xm[c]) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn octant_matches_parent() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let v = random_volume(&mut rng, [1, 1, 1]);
        let e = &v.extract_bezier(0)[0];
        for o in 0..8 {
            let s = e.octant(o);
            let u = [0.2, 0.7, 0.5];
            let mut pu = u;
            for a in 0..3 {
                pu[a] = 0.5 * u[a] + if o >> a & 1 == 1 { 0.5 } else { 0.0 };
            }
            let (x, y) = (s.evaluate(u), e.evaluate(pu));
            for c in 0..3 {
                assert!((x[c] - y[c]).abs() < 1e-13);
            }
        }
    }
}
