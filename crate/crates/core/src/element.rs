//! Element stiffness matrices and load vectors.
//!
//! The quadrature-free stiffness kernel evaluates, for every basis pair at once,
//! the same number as integrating the per-entry weighted least-squares
//! approximant. For a numerator `N` the approximant satisfies
//! `Gram_J·G = r` with `r_i = ∫N B_i`, so `∫G = Φᵀr = ∫N·Φ` where `Gram_J·Φ = ∫B`.
//! `Φ` depends only on the element, which turns the 4096 per-entry solves of a
//! cubic element into one solve plus moment tables of the metric terms.

use nalgebra::{DMatrix, DVector};

use crate::approx::{ApproxConfig, ApproxDegrees};
use crate::bernstein::{apply_along, basis_values_and_derivatives, count, moment_matrix, subdivision_matrices, BernsteinTensor, Degrees};
use crate::binomial::{c, BinomialTable};
use crate::error::{Error, Result};
use crate::geometry::{
    cofactors, jacobian_expansion, numerator_degrees, DCoefficientTable, JacobianExpansion, MetricSet, METRIC_PAIRS,
};
use crate::quadrature::GaussRule;
use crate::spline::volume::{det3, BezierVolume};

/// Per-direction tables of one `(α, β)` metric pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTables {
    pub pair: (usize, usize),
    /// Degrees of `∂_αA ∂_βB`.
    pub grad_degrees: Degrees,
    /// Degrees of `M_αβ`.
    pub metric_degrees: Degrees,
    /// `∫ B_r^{M} B_t^{α+d}`, row-major `(α+d+1) × (M+1)` per direction.
    pub metric_moments: [Vec<f64>; 3],
    /// Coefficients of the product of two 1D basis factors in the degree-`d`
    /// basis: rows `(a, a')` with `a` fastest... stored `a*(p+1)+a'`, columns `s`.
    pub skeleton: [Vec<f64>; 3],
}

/// Geometry-independent tables of the fast element kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementTables {
    pub spline: Degrees,
    pub approx: ApproxDegrees,
    pub subdivisions: usize,
    pub d_table: DCoefficientTable,
    /// `C(α,i)C(α,g)/C(2α,i+g)`, row-major `(α+1)²` per direction.
    pub gram: [Vec<f64>; 3],
    /// `∫ B_r^{3p−1} B_t^{2α}`, row-major `(2α+1) × 3p` per direction.
    pub jac_moments: [Vec<f64>; 3],
    /// Inverse 1D Bernstein mass matrices of degree `α`.
    pub mass_inverse: [Vec<f64>; 3],
    /// Left and right midpoint subdivision matrices of degree `p`, transposed.
    pub split: [[Vec<f64>; 2]; 3],
    pub pairs: Vec<PairTables>,
}

fn basis_factor(p: usize, a: usize, derivative: bool) -> Vec<f64> {
    if !derivative {
        let mut v = vec![0.0; p + 1];
        v[a] = 1.0;
        return v;
    }
    let mut v = vec![0.0; p];
    if a > 0 {
        v[a - 1] += p as f64;
    }
    if a < p {
        v[a] -= p as f64;
    }
    v
}

fn product_1d(x: &[f64], y: &[f64]) -> Vec<f64> {
    let (a, b) = (x.len() - 1, y.len() - 1);
    let mut z = vec![0.0; a + b + 1];
    for (r, &xr) in x.iter().enumerate() {
        if xr == 0.0 {
            continue;
        }
        for (q, &yq) in y.iter().enumerate() {
            z[r + q] += c(a, r) * c(b, q) * xr * yq;
        }
    }
    for (t, zt) in z.iter_mut().enumerate() {
        *zt /= c(a + b, t);
    }
    z
}

fn invert_dense(m: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    let mat = DMatrix::from_row_slice(n, n, &m);
    let inv = mat.try_inverse().ok_or_else(|| Error::Internal("singular Bernstein mass matrix".into()))?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv[(i, j)];
        }
    }
    Ok(out)
}

impl ElementTables {
    pub fn build(spline: Degrees, config: ApproxConfig) -> Result<ElementTables> {
        ElementTables::with_jacobian_table(spline, config, DCoefficientTable::build(spline)?)
    }

    pub fn with_jacobian_table(spline: Degrees, config: ApproxConfig, d_table: DCoefficientTable) -> Result<ElementTables> {
        let approx = config.degrees(spline);
        let table = BinomialTable::global();
        let numerator = numerator_degrees(spline);
        let mut gram: [Vec<f64>; 3] = Default::default();
        let mut jac_moments: [Vec<f64>; 3] = Default::default();
        let mut mass_inverse: [Vec<f64>; 3] = Default::default();
        let mut split: [[Vec<f64>; 2]; 3] = Default::default();
        for d in 0..3 {
            let (a, p) = (approx.0[d], spline[d]);
            table.require(2 * a + 3 * p - 1, "element kernel")?;
            table.require(a + numerator[d], "element kernel")?;
            let mut g = vec![0.0; (a + 1) * (a + 1)];
            let mut m = vec![0.0; (a + 1) * (a + 1)];
            for i in 0..=a {
                for k in 0..=a {
                    g[i * (a + 1) + k] = c(a, i) * c(a, k) / c(2 * a, i + k);
                    m[i * (a + 1) + k] = g[i * (a + 1) + k] / (2 * a + 1) as f64;
                }
            }
            gram[d] = g;
            mass_inverse[d] = invert_dense(m, a + 1)?;
            jac_moments[d] = moment_matrix(3 * p - 1, 2 * a);
            let (l, r) = subdivision_matrices(p);
            split[d] = [transpose(&l, p + 1), transpose(&r, p + 1)];
        }
        let mut pairs = Vec::with_capacity(6);
        for &(al, be) in &METRIC_PAIRS {
            let mut grad_degrees = spline;
            let mut metric_degrees = [0; 3];
            let mut metric_moments: [Vec<f64>; 3] = Default::default();
            let mut skeleton: [Vec<f64>; 3] = Default::default();
            for d in 0..3 {
                let p = spline[d];
                let (da, db) = (d == al, d == be);
                grad_degrees[d] = 2 * p - da as usize - db as usize;
                metric_degrees[d] = numerator[d] - grad_degrees[d];
                metric_moments[d] = moment_matrix(metric_degrees[d], approx.0[d] + grad_degrees[d]);
                let gd = grad_degrees[d];
                let mut sk = vec![0.0; (p + 1) * (p + 1) * (gd + 1)];
                for a in 0..=p {
                    for b in 0..=p {
                        let z = product_1d(&basis_factor(p, a, da), &basis_factor(p, b, db));
                        let row = a * (p + 1) + b;
                        sk[row * (gd + 1)..(row + 1) * (gd + 1)].copy_from_slice(&z);
                    }
                }
                skeleton[d] = sk;
            }
            pairs.push(PairTables { pair: (al, be), grad_degrees, metric_degrees, metric_moments, skeleton });
        }
        Ok(ElementTables {
            spline,
            approx,
            subdivisions: config.subdivisions,
            d_table,
            gram,
            jac_moments,
            mass_inverse,
            split,
            pairs,
        })
    }

    pub fn local_size(&self) -> usize {
        count(self.spline)
    }

    /// Total stored scalars and nonzeros, excluding the Jacobian table.
    pub fn sizes(&self) -> (usize, usize) {
        let mut all: Vec<&Vec<f64>> = Vec::new();
        for d in 0..3 {
            all.push(&self.gram[d]);
            all.push(&self.jac_moments[d]);
            all.push(&self.mass_inverse[d]);
            all.push(&self.split[d][0]);
            all.push(&self.split[d][1]);
        }
        for p in &self.pairs {
            for d in 0..3 {
                all.push(&p.metric_moments[d]);
                all.push(&p.skeleton[d]);
            }
        }
        let len = all.iter().map(|v| v.len()).sum();
        let nnz = all.iter().map(|v| v.iter().filter(|&&x| x != 0.0).count()).sum();
        (len, nnz)
    }
}

fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = m[i * n + j];
        }
    }
    t
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for l in 0..k {
            let x = a[i * k + l];
            if x == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i * m + j] += x * b[l * m + j];
            }
        }
    }
    out
}

/// Applies `f` to each of the three axes of a dense tensor.
fn apply3(data: &[f64], dims: [usize; 3], mats: [&[f64]; 3], outs: [usize; 3]) -> Vec<f64> {
    let mut v = data.to_vec();
    let mut dm = dims;
    for d in 0..3 {
        v = apply_along(&v, dm, d, mats[d], outs[d]).0;
        dm[d] = outs[d];
    }
    v
}

/// Statistics of one element evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ElementInfo {
    pub min_jacobian_coefficient: f64,
    pub solver_iterations: usize,
    pub used_direct_solve: bool,
}

/// Solves `Gram_J Φ = ∫B` by preconditioned CG, falling back to Cholesky/LU.
fn solve_phi(t: &ElementTables, j: &JacobianExpansion, element: &str) -> Result<(Vec<f64>, usize, bool)> {
    let a = t.approx.0;
    let n = count(a);
    let two = a.map(|x| 2 * x);
    let jd = j.tensor.degrees();
    let m = apply3(
        j.tensor.coeffs(),
        jd.map(|x| x + 1),
        [&t.jac_moments[0], &t.jac_moments[1], &t.jac_moments[2]],
        two.map(|x| x + 1),
    );
    let (nu, nv) = (a[0] + 1, a[1] + 1);
    let (mu, mv) = (two[0] + 1, two[1] + 1);
    let nw = a[2] + 1;
    let mut gram = vec![0.0; n * n];
    let mut i = 0;
    for iw in 0..nw {
        for iv in 0..nv {
            for iu in 0..nu {
                let row = &mut gram[i * n..(i + 1) * n];
                let mut g = 0;
                for gw in 0..nw {
                    for gv in 0..nv {
                        let wvw = t.gram[1][iv * nv + gv] * t.gram[2][iw * nw + gw];
                        let base = iu + mu * ((iv + gv) + mv * (iw + gw));
                        let wu = &t.gram[0][iu * nu..(iu + 1) * nu];
                        for (gu, o) in row[g..g + nu].iter_mut().enumerate() {
                            *o = wu[gu] * wvw * m[base + gu];
                        }
                        g += nu;
                    }
                }
                i += 1;
            }
        }
    }
    let rhs_val = 1.0 / n as f64;
    let jbar = j.tensor.integrate();
    let dims = a.map(|x| x + 1);
    let precond = |r: &[f64]| -> Vec<f64> {
        let mut z = apply3(r, dims, [&t.mass_inverse[0], &t.mass_inverse[1], &t.mass_inverse[2]], dims);
        z.iter_mut().for_each(|x| *x /= jbar);
        z
    };
    let matvec = |x: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = gram[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    };
    let b = vec![rhs_val; n];
    let bnorm = (n as f64).sqrt() * rhs_val;
    let mut x = precond(&b);
    let mut ax = vec![0.0; n];
    matvec(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let tol = 1e-14 * bnorm;
    let max_iter = 200;
    let mut iterations = 0;
    let mut converged = r.iter().map(|v| v * v).sum::<f64>().sqrt() <= tol;
    while !converged && iterations < max_iter && jbar > 0.0 {
        iterations += 1;
        matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= tol {
            converged = true;
            break;
        }
        z = precond(&r);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if converged {
        return Ok((x, iterations, false));
    }
    let mat = DMatrix::from_row_slice(n, n, &gram);
    let rhs = DVector::from_element(n, rhs_val);
    if let Some(ch) = mat.clone().cholesky() {
        return Ok((ch.solve(&rhs).iter().copied().collect(), iterations, true));
    }
    let sol = mat.lu().solve(&rhs).ok_or_else(|| Error::DegenerateGeometry {
        element: element.to_string(),
        reason: "weighted Gram matrix of the Jacobian is singular".into(),
    })?;
    Ok((sol.iter().copied().collect(), iterations, true))
}

/// Stiffness of a Bézier (sub-)element mapped to output functions by `maps`:
/// output function `a` along direction `d` is `Σ_b maps[d][a][b] B_b`.
fn stiffness_bezier(
    t: &ElementTables,
    elem: &BezierVolume,
    maps: [&[f64]; 3],
    element: &str,
    out: &mut [f64],
    info: &mut ElementInfo,
) -> Result<()> {
    let p = t.spline;
    let np = p.map(|x| x + 1);
    let j = jacobian_expansion(elem, &t.d_table)?;
    let minc = j.min_coefficient();
    info.min_jacobian_coefficient = info.min_jacobian_coefficient.min(minc);
    j.check_positive(element);
    let (phi, its, direct) = solve_phi(t, &j, element)?;
    info.solver_iterations += its;
    info.used_direct_solve |= direct;
    let a = t.approx.0;
    // Φ'_g = Φ_g Π C(α,g).
    let mut phis = phi;
    let mut gi = 0;
    for gw in 0..=a[2] {
        for gv in 0..=a[1] {
            let cvw = c(a[1], gv) * c(a[2], gw);
            for gu in 0..=a[0] {
                phis[gi] *= c(a[0], gu) * cvw;
                gi += 1;
            }
        }
    }
    let cof = cofactors(elem);
    let metric = MetricSet::from_cofactors(&cof);
    let pair_dims = [np[0] * np[0], np[1] * np[1], np[2] * np[2]];
    let pair_total = pair_dims[0] * pair_dims[1] * pair_dims[2];
    let nloc = count(p);
    for pt in &t.pairs {
        let md = pt.metric_degrees;
        let gd = pt.grad_degrees;
        let target = [a[0] + gd[0], a[1] + gd[1], a[2] + gd[2]];
        let mt = metric.get(pt.pair.0, pt.pair.1);
        let mm = apply3(
            mt.coeffs(),
            md.map(|x| x + 1),
            [&pt.metric_moments[0], &pt.metric_moments[1], &pt.metric_moments[2]],
            target.map(|x| x + 1),
        );
        // m̂[t] = m̃[t] / Π C(α+d, t)
        let (tu, tv) = (target[0] + 1, target[1] + 1);
        let mut mh = mm;
        let mut ti = 0;
        for zw in 0..=target[2] {
            for zv in 0..=target[1] {
                let cvw = c(target[1], zv) * c(target[2], zw);
                for zu in 0..=target[0] {
                    mh[ti] /= c(target[0], zu) * cvw;
                    ti += 1;
                }
            }
        }
        // μ[s] = Π C(d,s) Σ_g Φ'_g m̂[g+s]
        let mut mu = vec![0.0; count(gd)];
        let mut si = 0;
        for sw in 0..=gd[2] {
            for sv in 0..=gd[1] {
                for su in 0..=gd[0] {
                    let mut acc = 0.0;
                    let mut g = 0;
                    for gw in 0..=a[2] {
                        for gv in 0..=a[1] {
                            let base = su + tu * ((sv + gv) + tv * (sw + gw));
                            let row = &mh[base..base + a[0] + 1];
                            let ph = &phis[g..g + a[0] + 1];
                            acc += row.iter().zip(ph).map(|(x, y)| x * y).sum::<f64>();
                            g += a[0] + 1;
                        }
                    }
                    mu[si] = acc * c(gd[0], su) * c(gd[1], sv) * c(gd[2], sw);
                    si += 1;
                }
            }
        }
        // Pair skeleton mapped through the output functions.
        let mut sk: [Vec<f64>; 3] = Default::default();
        for d in 0..3 {
            let n1 = np[d];
            let gdd = gd[d] + 1;
            // (map ⊗ map) · skeleton
            let mut tmp = vec![0.0; n1 * n1 * gdd];
            let mm_ = maps[d];
            for b in 0..n1 {
                for b2 in 0..n1 {
                    let srow = &pt.skeleton[d][(b * n1 + b2) * gdd..(b * n1 + b2 + 1) * gdd];
                    if srow.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    for a1 in 0..n1 {
                        let x = mm_[a1 * n1 + b];
                        if x == 0.0 {
                            continue;
                        }
                        for a2 in 0..n1 {
                            let y = x * mm_[a2 * n1 + b2];
                            if y == 0.0 {
                                continue;
                            }
                            let orow = &mut tmp[(a1 * n1 + a2) * gdd..(a1 * n1 + a2 + 1) * gdd];
                            for (o, s) in orow.iter_mut().zip(srow) {
                                *o += y * s;
                            }
                        }
                    }
                }
            }
            sk[d] = tmp;
        }
        let contrib = apply3(&mu, gd.map(|x| x + 1), [&sk[0], &sk[1], &sk[2]], pair_dims);
        debug_assert_eq!(contrib.len(), pair_total);
        let symmetric = pt.pair.0 == pt.pair.1;
        let mut ci = 0;
        for pw in 0..pair_dims[2] {
            let (aw, bw) = (pw / np[2], pw % np[2]);
            for pv in 0..pair_dims[1] {
                let (av, bv) = (pv / np[1], pv % np[1]);
                for pu in 0..pair_dims[0] {
                    let (au, bu) = (pu / np[0], pu % np[0]);
                    let r = au + np[0] * (av + np[1] * aw);
                    let s = bu + np[0] * (bv + np[1] * bw);
                    let v = contrib[ci];
                    ci += 1;
                    out[r * nloc + s] += v;
                    if !symmetric {
                        out[s * nloc + r] += v;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Recursive piecewise refinement: split into octants `levels` times.
fn stiffness_recursive(
    t: &ElementTables,
    elem: &BezierVolume,
    maps: [&[f64]; 3],
    levels: usize,
    element: &str,
    out: &mut [f64],
    info: &mut ElementInfo,
) -> Result<()> {
    if levels == 0 {
        return stiffness_bezier(t, elem, maps, element, out, info);
    }
    let np = t.spline.map(|x| x + 1);
    for o in 0..8 {
        let sub = elem.octant(o);
        let child: [Vec<f64>; 3] =
            [0, 1, 2].map(|d| matmul(maps[d], &t.split[d][o >> d & 1], np[d], np[d], np[d]));
        stiffness_recursive(t, &sub, [&child[0], &child[1], &child[2]], levels - 1, element, out, info)?;
    }
    Ok(())
}

/// Quadrature-free element stiffness matrix, row-major `n × n` over the output functions.
pub fn element_stiffness(
    t: &ElementTables,
    elem: &BezierVolume,
    maps: [&[f64]; 3],
    element: &str,
) -> Result<(Vec<f64>, ElementInfo)> {
    if elem.degrees != t.spline {
        return Err(Error::Internal(format!(
            "element degrees {:?} differ from kernel degrees {:?}",
            elem.degrees, t.spline
        )));
    }
    let n = t.local_size();
    let mut out = vec![0.0; n * n];
    let mut info = ElementInfo { min_jacobian_coefficient: f64::INFINITY, ..Default::default() };
    stiffness_recursive(t, elem, maps, t.subdivisions, element, &mut out, &mut info)?;
    Ok((out, info))
}

/// Identity maps for a Bézier element (output functions are the Bernstein basis).
pub fn identity_maps(d: Degrees) -> [Vec<f64>; 3] {
    d.map(|p| {
        let n = p + 1;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        m
    })
}

/// 1D values and derivatives of the output functions at Gauss points.
pub(crate) fn mapped_basis(p: usize, map: &[f64], rule: &GaussRule) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = p + 1;
    let mut vals = Vec::with_capacity(rule.len());
    let mut ders = Vec::with_capacity(rule.len());
    for &t in &rule.points {
        let (b, db) = basis_values_and_derivatives(p, t);
        let v: Vec<f64> = (0..n).map(|a| (0..n).map(|k| map[a * n + k] * b[k]).sum()).collect();
        let d: Vec<f64> = (0..n).map(|a| (0..n).map(|k| map[a * n + k] * db[k]).sum()).collect();
        vals.push(v);
        ders.push(d);
    }
    (vals, ders)
}

/// Element stiffness by tensor Gauss quadrature with `points` per direction.
pub fn element_stiffness_gauss(elem: &BezierVolume, maps: [&[f64]; 3], points: usize) -> Vec<f64> {
    let p = elem.degrees;
    let np = p.map(|x| x + 1);
    let n = count(p);
    let rule = GaussRule::new(points);
    let tabs: Vec<_> = (0..3).map(|d| mapped_basis(p[d], maps[d], &rule)).collect();
    let mut k = vec![0.0; n * n];
    let mut grads = vec![[0.0; 3]; n];
    for qw in 0..points {
        for qv in 0..points {
            for qu in 0..points {
                let u = [rule.points[qu], rule.points[qv], rule.points[qw]];
                let w = rule.weights[qu] * rule.weights[qv] * rule.weights[qw];
                let jm = elem.jacobian_matrix(u);
                let det = det3(&jm);
                let inv = crate::geometry::invert3(&jm);
                let (vu, du) = (&tabs[0].0[qu], &tabs[0].1[qu]);
                let (vv, dv) = (&tabs[1].0[qv], &tabs[1].1[qv]);
                let (vw, dw) = (&tabs[2].0[qw], &tabs[2].1[qw]);
                let mut idx = 0;
                for cw in 0..np[2] {
                    for cv in 0..np[1] {
                        for cu in 0..np[0] {
                            let pg = [du[cu] * vv[cv] * vw[cw], vu[cu] * dv[cv] * vw[cw], vu[cu] * vv[cv] * dw[cw]];
                            let mut x = [0.0; 3];
                            for (cc, xc) in x.iter_mut().enumerate() {
                                *xc = pg[0] * inv[0][cc] + pg[1] * inv[1][cc] + pg[2] * inv[2][cc];
                            }
                            grads[idx] = x;
                            idx += 1;
                        }
                    }
                }
                let s = w * det;
                for r in 0..n {
                    let gr = grads[r];
                    let row = &mut k[r * n..(r + 1) * n];
                    for (o, gs) in row.iter_mut().zip(&grads) {
                        *o += s * (gr[0] * gs[0] + gr[1] * gs[1] + gr[2] * gs[2]);
                    }
                }
            }
        }
    }
    k
}

/// Element load `∫ f(x) N_a J` by Gauss quadrature with `points` per direction.
pub fn element_load(elem: &BezierVolume, maps: [&[f64]; 3], points: usize, f: &dyn Fn([f64; 3]) -> f64) -> Vec<f64> {
    let p = elem.degrees;
    let np = p.map(|x| x + 1);
    let n = count(p);
    let rule = GaussRule::new(points);
    let tabs: Vec<_> = (0..3).map(|d| mapped_basis(p[d], maps[d], &rule)).collect();
    let mut b = vec![0.0; n];
    for qw in 0..points {
        for qv in 0..points {
            for qu in 0..points {
                let u = [rule.points[qu], rule.points[qv], rule.points[qw]];
                let w = rule.weights[qu] * rule.weights[qv] * rule.weights[qw];
                let det = det3(&elem.jacobian_matrix(u));
                let fx = f(elem.evaluate(u));
                let s = w * det * fx;
                let (vu, vv, vw) = (&tabs[0].0[qu], &tabs[1].0[qv], &tabs[2].0[qw]);
                let mut idx = 0;
                for cw in 0..np[2] {
                    for cv in 0..np[1] {
                        let svw = s * vv[cv] * vw[cw];
                        for cu in 0..np[0] {
                            b[idx] += svw * vu[cu];
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    b
}

/// Per-entry stiffness through the explicit approximant of every pair (slow; for verification).
pub fn element_stiffness_per_entry(elem: &BezierVolume, config: ApproxConfig) -> Result<Vec<f64>> {
    use crate::approx::{approximate, build_reusable, integrate_entry};
    use crate::geometry::{entry_numerator_with_metric, GradientTable};
    let d = elem.degrees;
    let sys = build_reusable(config.degrees(d), d)?;
    let table = DCoefficientTable::build(d)?;
    let grads = GradientTable::build(d);
    let n = count(d);
    let mut k = vec![0.0; n * n];
    let parts: Vec<(BezierVolume, Vec<BernsteinTensor>)> = if config.subdivisions == 0 {
        vec![(elem.clone(), (0..n).map(|r| BernsteinTensor::unit(d, idx3(r, d))).collect())]
    } else {
        let mut v = Vec::new();
        for o in 0..8 {
            v.push((elem.octant(o), (0..n).map(|r| BernsteinTensor::unit(d, idx3(r, d)).octant(o)).collect()));
        }
        v
    };
    for (sub, funcs) in &parts {
        let j = jacobian_expansion(sub, &table)?;
        let metric = MetricSet::from_cofactors(&cofactors(sub));
        let g: Vec<[BernsteinTensor; 3]> = if config.subdivisions == 0 {
            grads.grads.clone()
        } else {
            funcs.iter().map(|f| [f.derivative(0), f.derivative(1), f.derivative(2)]).collect()
        };
        for r in 0..n {
            for s in r..n {
                let num = entry_numerator_with_metric(&metric, &j, &g[r], &g[s])?;
                let v = integrate_entry(&approximate(&num, &j, &sys, "verification")?);
                k[r * n + s] += v;
                if s != r {
                    k[s * n + r] += v;
                }
            }
        }
    }
    Ok(k)
}

fn idx3(r: usize, d: Degrees) -> [usize; 3] {
    let (nu, nv) = (d[0] + 1, d[1] + 1);
    [r % nu, (r / nu) % nv, r / (nu * nv)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::knots::KnotVector;
    use crate::spline::volume::BSplineVolume;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn element(d: Degrees, f: impl Fn([f64; 3]) -> [f64; 3]) -> BezierVolume {
        BSplineVolume::from_greville(d.map(KnotVector::bezier), f).extract_bezier(0).remove(0)
    }

    fn bent(p: [f64; 3]) -> [f64; 3] {
        [p[0] + 0.15 * p[1] * p[1], p[1] + 0.1 * p[0] * p[2], p[2] * (1.0 + 0.2 * p[0]) + 0.05 * p[1]]
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn trilinear_unit_cube_matches_classical_matrix() {
        let d = [1, 1, 1];
        let e = element(d, |p| p);
        let t = ElementTables::build(d, ApproxConfig::default()).unwrap();
        let id = identity_maps(d);
        let (k, _) = element_stiffness(&t, &e, [&id[0], &id[1], &id[2]], "e").unwrap();
        for i in 0..8 {
            assert!((k[i * 8 + i] - 1.0 / 3.0).abs() < 1e-12);
        }
        let g = element_stiffness_gauss(&e, [&id[0], &id[1], &id[2]], 4);
        assert!(max_rel(&k, &g) < 1e-10);
    }

    #[test]
    fn fast_kernel_matches_per_entry_path() {
        for d in [[1, 1, 1], [2, 2, 2], [2, 1, 2]] {
            let e = element(d, bent);
            for cfg in [ApproxConfig::default(), ApproxConfig { degree_bump: 1, subdivisions: 0 }] {
                let t = ElementTables::build(d, cfg).unwrap();
                let id = identity_maps(d);
                let (k, _) = element_stiffness(&t, &e, [&id[0], &id[1], &id[2]], "e").unwrap();
                let slow = element_stiffness_per_entry(&e, cfg).unwrap();
                assert!(max_rel(&k, &slow) < 1e-10, "{d:?} {cfg:?}: {}", max_rel(&k, &slow));
            }
        }
    }

    #[test]
    fn fast_kernel_matches_per_entry_piecewise() {
        let d = [1, 2, 1];
        let e = element(d, bent);
        let cfg = ApproxConfig { degree_bump: 0, subdivisions: 1 };
        let t = ElementTables::build(d, cfg).unwrap();
        let id = identity_maps(d);
        let (k, _) = element_stiffness(&t, &e, [&id[0], &id[1], &id[2]], "e").unwrap();
        let slow = element_stiffness_per_entry(&e, cfg).unwrap();
        assert!(max_rel(&k, &slow) < 1e-10, "{}", max_rel(&k, &slow));
    }

    #[test]
    fn cubic_symmetric_and_annihilates_constants() {
        let d = [3, 3, 3];
        let e = element(d, bent);
        let t = ElementTables::build(d, ApproxConfig::default()).unwrap();
        let id = identity_maps(d);
        let (k, info) = element_stiffness(&t, &e, [&id[0], &id[1], &id[2]], "e").unwrap();
        assert!(info.min_jacobian_coefficient > 0.0);
        let n = 64;
        let kmax = k.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for r in 0..n {
            let sum: f64 = k[r * n..(r + 1) * n].iter().sum();
            assert!(sum.abs() < 1e-10 * kmax);
            for s in 0..n {
                assert_eq!(k[r * n + s], k[s * n + r]);
            }
        }
        let g = element_stiffness_gauss(&e, [&id[0], &id[1], &id[2]], 10);
        assert!(max_rel(&k, &g) < 1e-3, "{}", max_rel(&k, &g));
    }

    #[test]
    fn refinement_reduces_error_against_gauss() {
        let d = [2, 2, 2];
        let e = element(d, |p| {
            let r = 1.0 + p[0];
            let th = 0.8 * p[1];
            [r * th.cos(), r * th.sin(), p[2] + 0.2 * p[0] * p[1]]
        });
        let id = identity_maps(d);
        let maps = [&id[0][..], &id[1][..], &id[2][..]];
        let g = element_stiffness_gauss(&e, maps, 14);
        let err = |cfg: ApproxConfig| {
            let t = ElementTables::build(d, cfg).unwrap();
            max_rel(&element_stiffness(&t, &e, maps, "e").unwrap().0, &g)
        };
        let base = err(ApproxConfig::default());
        let elev = err(ApproxConfig { degree_bump: 1, subdivisions: 0 });
        let elev2 = err(ApproxConfig { degree_bump: 2, subdivisions: 0 });
        let piece = err(ApproxConfig { degree_bump: 0, subdivisions: 1 });
        let piece2 = err(ApproxConfig { degree_bump: 0, subdivisions: 2 });
        let comb = err(ApproxConfig { degree_bump: 1, subdivisions: 1 });
        assert!(elev < base && elev2 < elev, "{base} {elev} {elev2}");
        assert!(piece < base && piece2 < piece, "{base} {piece} {piece2}");
        assert!(comb < elev && comb < piece);
    }

    #[test]
    fn piecewise_exact_for_affine_elements() {
        let d = [2, 2, 2];
        let e = element(d, |p| [2.0 * p[0] + p[1], p[1], 0.5 * p[2] + 0.1 * p[0]]);
        let id = identity_maps(d);
        let maps = [&id[0][..], &id[1][..], &id[2][..]];
        let t0 = ElementTables::build(d, ApproxConfig::default()).unwrap();
        let t1 = ElementTables::build(d, ApproxConfig { degree_bump: 0, subdivisions: 1 }).unwrap();
        let (k0, _) = element_stiffness(&t0, &e, maps, "e").unwrap();
        let (k1, _) = element_stiffness(&t1, &e, maps, "e").unwrap();
        assert!(max_rel(&k1, &k0) < 1e-12);
    }

    #[test]
    fn translation_and_scaling() {
        let d = [2, 2, 2];
        let e = element(d, bent);
        let id = identity_maps(d);
        let maps = [&id[0][..], &id[1][..], &id[2][..]];
        let t = ElementTables::build(d, ApproxConfig::default()).unwrap();
        let (k, _) = element_stiffness(&t, &e, maps, "e").unwrap();
        let (kt, _) = element_stiffness(&t, &e.translated([3.0, -1.0, 7.5]), maps, "e").unwrap();
        assert!(max_rel(&kt, &k) < 1e-12);
        let mut s = e.clone();
        for p in s.control.iter_mut() {
            for c in p.iter_mut() {
                *c *= 2.5;
            }
        }
        let (ks, _) = element_stiffness(&t, &s, maps, "e").unwrap();
        let scaled: Vec<f64> = k.iter().map(|x| 2.5 * x).collect();
        assert!(max_rel(&ks, &scaled) < 1e-9);
    }

    #[test]
    fn load_of_constant_is_basis_integral() {
        let d = [2, 1, 2];
        let e = element(d, |p| [2.0 * p[0], 3.0 * p[1], p[2]]);
        let id = identity_maps(d);
        let b = element_load(&e, [&id[0], &id[1], &id[2]], 4, &|_| 1.0);
        let total: f64 = b.iter().sum();
        assert!((total - 6.0).abs() < 1e-12);
    }

    #[test]
    fn random_elements_fast_vs_gauss() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let d = [2, 2, 2];
        let mut e = element(d, |p| p);
        for p in e.control.iter_mut() {
            for c in p.iter_mut() {
                *c += rng.gen_range(-0.03..0.03);
            }
        }
        let id = identity_maps(d);
        let maps = [&id[0][..], &id[1][..], &id[2][..]];
        let t = ElementTables::build(d, ApproxConfig { degree_bump: 2, subdivisions: 0 }).unwrap();
        let (k, _) = element_stiffness(&t, &e, maps, "e").unwrap();
        let g = element_stiffness_gauss(&e, maps, 12);
        assert!(max_rel(&k, &g) < 1e-4, "{}", max_rel(&k, &g));
    }
}
