//! Compactly supported RBF elastic maps and least-squares B-spline solid fitting.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{reverse_cuthill_mckee, CsrMatrix, SkylineCholesky};
use crate::spline::knots::KnotVector;
use crate::spline::multiblock::MultiBlockVolume;
use crate::spline::volume::{BSplineVolume, Point};

/// Wendland's C⁴ kernel `(1−r)₊⁶ (3 + 18r + 35r²)`.
pub fn wendland(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("kernel radius must be nonnegative, got {r}")));
    }
    Ok(kernel(r))
}

#[inline]
fn kernel(r: f64) -> f64 {
    if r >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - r;
    let s2 = s * s;
    s2 * s2 * s2 * (3.0 + 18.0 * r + 35.0 * r * r)
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn bbox_diagonal(pts: &[Point]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pts {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    if pts.is_empty() {
        return 0.0;
    }
    dist(lo, hi)
}

/// Uniform hash grid with cell size `λ`.
#[derive(Debug, Clone)]
struct Grid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl Grid {
    fn new(pts: &[Point], cell: f64) -> Grid {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in pts.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Grid { cell, cells }
    }

    fn key(p: &Point, cell: f64) -> [i64; 3] {
        p.map(|c| (c / cell).floor() as i64)
    }

    /// Indices in the 27 cells around `p` (a superset of those within one cell size).
    fn near(&self, p: &Point, mut f: impl FnMut(usize)) {
        let k = Self::key(p, self.cell);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(v) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        v.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }
}

/// `f(x) = Σ d_j φ(|x − v_j| / λ) + A x + t`.
#[derive(Debug, Clone)]
pub struct ElasticMap {
    pub centers: Vec<Point>,
    pub weights: Vec<[f64; 3]>,
    /// Row-major linear part `A`.
    pub linear: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub lambda: f64,
    grid: Grid,
}

impl ElasticMap {
    pub fn affine(&self, x: Point) -> Point {
        let a = &self.linear;
        [0, 1, 2].map(|r| a[r][0] * x[0] + a[r][1] * x[1] + a[r][2] * x[2] + self.translation[r])
    }

    pub fn eval(&self, x: Point) -> Point {
        let mut y = self.affine(x);
        self.grid.near(&x, |j| {
            let phi = kernel(dist(x, self.centers[j]) / self.lambda);
            if phi != 0.0 {
                for d in 0..3 {
                    y[d] += phi * self.weights[j][d];
                }
            }
        });
        y
    }

    /// Direct sum over every center.
    pub fn eval_brute(&self, x: Point) -> Point {
        let mut y = self.affine(x);
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let phi = kernel(dist(x, *c) / self.lambda);
            for d in 0..3 {
                y[d] += phi * w[d];
            }
        }
        y
    }

    pub fn map_points(&self, pts: &[Point]) -> Vec<Point> {
        pts.iter().map(|&p| self.eval(p)).collect()
    }

    /// Largest `|f(v_i) − v_i′|` over the constraints.
    pub fn residual(&self, constraints: &[(Point, Point)]) -> f64 {
        constraints.iter().map(|&(v, t)| dist(self.eval(v), t)).fold(0.0, f64::max)
    }
}

/// Default support radius: a quarter of the bounding-box diagonal of the centers.
pub fn default_lambda(constraints: &[(Point, Point)]) -> f64 {
    0.25 * bbox_diagonal(&constraints.iter().map(|c| c.0).collect::<Vec<_>>())
}

/// Interpolates `v_i ↦ v_i′` with side conditions `Σ d_j = 0`, `Σ d_j v_jᵀ = 0`.
///
/// The kernel block is sparse SPD and factored by envelope Cholesky; the affine
/// part comes from the 4×4 Schur complement.
pub fn fit_elastic_map(constraints: &[(Point, Point)], lambda: f64) -> Result<ElasticMap> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("support radius must be positive, got {lambda}")));
    }
    let n = constraints.len();
    if n < 4 {
        return Err(Error::Fit(format!("need at least 4 constraints, got {n}")));
    }
    let centers: Vec<Point> = constraints.iter().map(|c| c.0).collect();
    let grid = Grid::new(&centers, lambda);
    let scale = bbox_diagonal(&centers).max(f64::MIN_POSITIVE);
    let mut triplets = Vec::new();
    let mut dups = Vec::new();
    for i in 0..n {
        grid.near(&centers[i], |j| {
            let r = dist(centers[i], centers[j]);
            if j != i && r <= 1e-12 * scale && i < j {
                dups.push((i, j));
            }
            let phi = kernel(r / lambda);
            if phi != 0.0 {
                triplets.push((i, j, phi));
            }
        });
    }
    if !dups.is_empty() {
        let list: Vec<String> = dups.iter().take(10).map(|(i, j)| format!("{i}={j} at {:?}", centers[*i])).collect();
        return Err(Error::Fit(format!("duplicate centers: {}", list.join(", "))));
    }
    let k = CsrMatrix::from_triplets(n, triplets);
    let chol = SkylineCholesky::factor(&k, reverse_cuthill_mckee(&k))
        .map_err(|e| Error::Fit(format!("kernel matrix is not positive definite: {e}")))?;
    // Columns of P: 1, x, y, z (centered for conditioning).
    let mut mean = [0.0; 3];
    for c in &centers {
        for d in 0..3 {
            mean[d] += c[d] / n as f64;
        }
    }
    let pcol = |i: usize, a: usize| if a == 0 { 1.0 } else { (centers[i][a - 1] - mean[a - 1]) / scale };
    let kinv_p: Vec<Vec<f64>> = (0..4).map(|a| chol.solve(&(0..n).map(|i| pcol(i, a)).collect::<Vec<_>>())).collect();
    let mut s = Matrix4::<f64>::zeros();
    for a in 0..4 {
        for b in 0..4 {
            s[(a, b)] = (0..n).map(|i| pcol(i, a) * kinv_p[b][i]).sum();
        }
    }
    let s_lu = s.lu();
    let cond_ok = s.norm() > 0.0 && s.try_inverse().map_or(false, |inv| inv.norm() * s.norm() < 1e12);
    if !cond_ok {
        return Err(Error::Fit(format!(
            "centers are (nearly) coplanar, affine part undetermined; first centers {:?}",
            &centers[..n.min(4)]
        )));
    }
    let mut weights = vec![[0.0; 3]; n];
    let mut coeff = [[0.0; 4]; 3];
    for d in 0..3 {
        let f: Vec<f64> = constraints.iter().map(|c| c.1[d]).collect();
        let kinv_f = chol.solve(&f);
        let rhs = Vector4::from_fn(|a, _| (0..n).map(|i| pcol(i, a) * kinv_f[i]).sum());
        let c = s_lu.solve(&rhs).ok_or_else(|| Error::Fit("affine block is singular".into()))?;
        for i in 0..n {
            weights[i][d] = kinv_f[i] - (0..4).map(|a| kinv_p[a][i] * c[a]).sum::<f64>();
        }
        coeff[d] = [c[0], c[1], c[2], c[3]];
    }
    let mut linear = [[0.0; 3]; 3];
    let mut translation = [0.0; 3];
    for d in 0..3 {
        translation[d] = coeff[d][0];
        for a in 0..3 {
            linear[d][a] = coeff[d][a + 1] / scale;
            translation[d] -= linear[d][a] * mean[a];
        }
    }
    Ok(ElasticMap { centers, weights, linear, translation, lambda, grid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Boundary,
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub uvw: [f64; 3],
    pub xyz: [f64; 3],
    pub kind: SampleKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub block: usize,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.uvw.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::Format(format!("sample {i} of block {} has parameter {:?} outside [0,1]³", self.block, s.uvw)));
            }
            if s.xyz.iter().any(|c| !c.is_finite()) {
                return Err(Error::Format(format!("sample {i} of block {} has a non-finite position", self.block)));
            }
        }
        Ok(())
    }
}

/// Samples of `template` on an `n³` parameter lattice, pushed through `map`.
/// Lattice points on the parameter-cube boundary are tagged as boundary samples.
pub fn template_samples(template: &BSplineVolume, block: usize, n: usize, map: &dyn Fn(Point) -> Point) -> SampleSet {
    let n = n.max(2);
    let mut samples = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let uvw = [i, j, k].map(|q| q as f64 / (n - 1) as f64);
                let on_face = [i, j, k].iter().any(|&q| q == 0 || q == n - 1);
                samples.push(Sample {
                    uvw,
                    xyz: map(template.evaluate(uvw)),
                    kind: if on_face { SampleKind::Boundary } else { SampleKind::Interior },
                });
            }
        }
    }
    SampleSet { block, samples }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Weight of boundary samples relative to interior ones.
    pub boundary_weight: f64,
    /// Smoothing weight relative to the trace of the data normal matrix.
    pub smoothing: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { boundary_weight: 10.0, smoothing: 1e-6 }
    }
}

/// Second-difference (and mixed first-difference) energy of the control grid.
fn smoothing_matrix(counts: [usize; 3]) -> DMatrix<f64> {
    let n = counts[0] * counts[1] * counts[2];
    let idx = |i: usize, j: usize, k: usize| i + counts[0] * (j + counts[1] * k);
    let mut r = DMatrix::zeros(n, n);
    let mut add = |stencil: &[(usize, f64)]| {
        for &(a, wa) in stencil {
            for &(b, wb) in stencil {
                r[(a, b)] += wa * wb;
            }
        }
    };
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let at = [i, j, k];
                for d in 0..3 {
                    if at[d] + 2 < counts[d] {
                        let mut s = Vec::with_capacity(3);
                        for (o, w) in [(0, 1.0), (1, -2.0), (2, 1.0)] {
                            let mut q = at;
                            q[d] += o;
                            s.push((idx(q[0], q[1], q[2]), w));
                        }
                        add(&s);
                    }
                    let e = (d + 1) % 3;
                    if at[d] + 1 < counts[d] && at[e] + 1 < counts[e] {
                        let mut s = Vec::with_capacity(4);
                        for (od, oe, w) in [(0, 0, 1.0), (1, 0, -1.0), (0, 1, -1.0), (1, 1, 1.0)] {
                            let mut q = at;
                            q[d] += od;
                            q[e] += oe;
                            s.push((idx(q[0], q[1], q[2]), w * std::f64::consts::SQRT_2));
                        }
                        add(&s);
                    }
                }
            }
        }
    }
    r
}

/// Weighted least-squares control points for `samples` in the spline space `knots`.
pub fn fit_bspline_solid(samples: &SampleSet, knots: [KnotVector; 3], options: FitOptions) -> Result<BSplineVolume> {
    samples.validate()?;
    let counts = [knots[0].num_basis(), knots[1].num_basis(), knots[2].num_basis()];
    let n = counts[0] * counts[1] * counts[2];
    if samples.samples.len() < n {
        return Err(Error::Fit(format!(
            "block {} has {} samples for {n} control points",
            samples.block,
            samples.samples.len()
        )));
    }
    let mut normal = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DMatrix::<f64>::zeros(n, 3);
    let mut cols = Vec::new();
    for s in &samples.samples {
        let w = match s.kind {
            SampleKind::Boundary => options.boundary_weight,
            SampleKind::Interior => 1.0,
        };
        let (fu, bu) = knots[0].basis(s.uvw[0]);
        let (fv, bv) = knots[1].basis(s.uvw[1]);
        let (fw, bw) = knots[2].basis(s.uvw[2]);
        cols.clear();
        for (c, &nw) in bw.iter().enumerate() {
            for (b, &nv) in bv.iter().enumerate() {
                for (a, &nu) in bu.iter().enumerate() {
                    let v = nu * nv * nw;
                    if v != 0.0 {
                        cols.push((fu + a + counts[0] * (fv + b + counts[1] * (fw + c)), v));
                    }
                }
            }
        }
        for &(i, vi) in &cols {
            for &(j, vj) in &cols {
                normal[(i, j)] += w * vi * vj;
            }
            for d in 0..3 {
                rhs[(i, d)] += w * vi * s.xyz[d];
            }
        }
    }
    if options.smoothing > 0.0 {
        let r = smoothing_matrix(counts);
        let tr = r.trace();
        if tr > 0.0 {
            normal += r * (options.smoothing * normal.trace() / tr);
        }
    }
    let control = match normal.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let eig = nalgebra::SymmetricEigen::new(normal);
            let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let null = eig.eigenvalues.iter().filter(|v| **v <= 1e-12 * max).count();
            return Err(Error::Fit(format!(
                "block {}: normal matrix is rank deficient, null space of size {null}",
                samples.block
            )));
        }
    };
    let pts = (0..n).map(|i| [control[(i, 0)], control[(i, 1)], control[(i, 2)]]).collect();
    BSplineVolume::new(knots, pts)
}

/// Fits every sample set (one per block, blocks numbered `0..n`) in parallel and
/// glues blocks whose fitted faces coincide.
pub fn fit_multiblock(sets: &[SampleSet], knots: &[KnotVector; 3], options: FitOptions) -> Result<MultiBlockVolume> {
    let mut order: Vec<&SampleSet> = sets.iter().collect();
    order.sort_by_key(|s| s.block);
    for (i, s) in order.iter().enumerate() {
        if s.block != i {
            return Err(Error::Fit(format!("sample sets must cover blocks 0..{} exactly once; found block {}", sets.len(), s.block)));
        }
    }
    let blocks = order
        .par_iter()
        .map(|s| fit_bspline_solid(s, knots.clone(), options))
        .collect::<Result<Vec<_>>>()?;
    MultiBlockVolume::with_detected_interfaces(blocks)
}
