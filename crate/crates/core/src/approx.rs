//! Weighted least-squares approximation of the rational integrand `N/J` by a
//! Bernstein polynomial `G`, and its exact integral.
//!
//! Minimizing `∫ J (N/J − G)²` gives `∫ J G B_i = ∫ N B_i` for every basis
//! function `B_i` of degrees `(α,β,γ)`. Written in Bernstein coefficients this is
//! `L·E·G = σ·Q·F`, where `L` and `Q` are pure binomial matrices, `σ` a scalar
//! and `E` is linear in the Jacobian coefficients.

use nalgebra::{DMatrix, DVector};

use crate::bernstein::{apply_along, count, BernsteinTensor, Degrees};
use crate::binomial::{c, BinomialTable};
use crate::error::{Error, Result};
use crate::geometry::{numerator_degrees, EntryNumerator, JacobianExpansion};

/// Approximation degrees `(α, β, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ApproxDegrees(pub Degrees);

impl ApproxDegrees {
    /// `3p − 3` per direction.
    pub fn initial(spline: Degrees) -> Self {
        ApproxDegrees(spline.map(|p| (3 * p).saturating_sub(3)))
    }

    pub fn elevated(self, by: Degrees) -> Self {
        ApproxDegrees([self.0[0] + by[0], self.0[1] + by[1], self.0[2] + by[2]])
    }
}

/// How to improve an approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineStrategy {
    /// Split the element into 2×2×2 sub-boxes and approximate each.
    Piecewise,
    /// Raise `(α,β,γ)` by one in each direction.
    DegreeElevate,
    /// Both of the above.
    Combined,
}

/// Approximation settings shared by every element of an assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ApproxConfig {
    /// Added to the initial degrees `3p − 3`.
    pub degree_bump: usize,
    /// Number of 2×2×2 subdivision levels per element.
    pub subdivisions: usize,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig { degree_bump: 0, subdivisions: 0 }
    }
}

impl ApproxConfig {
    pub fn degrees(&self, spline: Degrees) -> ApproxDegrees {
        ApproxDegrees::initial(spline).elevated([self.degree_bump; 3])
    }

    pub fn refine(self, strategy: RefineStrategy) -> ApproxConfig {
        match strategy {
            RefineStrategy::Piecewise => ApproxConfig { subdivisions: self.subdivisions + 1, ..self },
            RefineStrategy::DegreeElevate => ApproxConfig { degree_bump: self.degree_bump + 1, ..self },
            RefineStrategy::Combined => {
                ApproxConfig { degree_bump: self.degree_bump + 1, subdivisions: self.subdivisions + 1 }
            }
        }
    }
}

/// `σ` factor of one direction for approximation degree `a`, spline degree `p`
/// and numerator degree `n`.
pub fn sigma_factor(a: usize, p: usize, n: usize) -> f64 {
    (2 * a + 3 * p) as f64 / (a + n + 1) as f64
}

/// Geometry-independent part of the approximation system.
///
/// `L` and `Q` are Kronecker products of one-dimensional factors; the factors are
/// stored and the dense matrices are formed on request.
#[derive(Debug, Clone, PartialEq)]
pub struct ReusableApprox {
    pub approx: ApproxDegrees,
    pub spline: Degrees,
    pub numerator: Degrees,
    /// `L_d[i][a] = 1 / C(2α+3p−1, a+i)`, row-major `(α+1) × (α+3p)`.
    pub l1: [Vec<f64>; 3],
    /// `Q_d[i][p] = C(N,p) / C(α+N, p+i)`, row-major `(α+1) × (N+1)`.
    pub q1: [Vec<f64>; 3],
    pub sigma: f64,
}

pub fn build_reusable(approx: ApproxDegrees, spline: Degrees) -> Result<ReusableApprox> {
    if spline.iter().any(|&p| p < 1) {
        return Err(Error::Config(format!("spline degrees must be >= 1, got {spline:?}")));
    }
    let table = BinomialTable::global();
    let numerator = numerator_degrees(spline);
    for d in 0..3 {
        let (a, p, n) = (approx.0[d], spline[d], numerator[d]);
        table.require(2 * a + 3 * p - 1, "approximation matrix L")?;
        table.require(a + n, "approximation matrix Q")?;
    }
    let mut l1: [Vec<f64>; 3] = Default::default();
    let mut q1: [Vec<f64>; 3] = Default::default();
    let mut sigma = 1.0;
    for d in 0..3 {
        let (a, p, n) = (approx.0[d], spline[d], numerator[d]);
        let hs = a + 3 * p;
        let mut l = vec![0.0; (a + 1) * hs];
        for i in 0..=a {
            for h in 0..hs {
                l[i * hs + h] = 1.0 / c(2 * a + 3 * p - 1, h + i);
            }
        }
        let mut q = vec![0.0; (a + 1) * (n + 1)];
        for i in 0..=a {
            for r in 0..=n {
                q[i * (n + 1) + r] = c(n, r) / c(a + n, r + i);
            }
        }
        l1[d] = l;
        q1[d] = q;
        sigma *= sigma_factor(a, p, n);
    }
    Ok(ReusableApprox { approx, spline, numerator, l1, q1, sigma })
}

fn kron3(f: &[Vec<f64>; 3], rows: [usize; 3], cols: [usize; 3]) -> DMatrix<f64> {
    let nr = rows.iter().product();
    let nc = cols.iter().product();
    let mut m = DMatrix::zeros(nr, nc);
    for rw in 0..rows[2] {
        for rv in 0..rows[1] {
            for ru in 0..rows[0] {
                let r = ru + rows[0] * (rv + rows[1] * rw);
                for cw in 0..cols[2] {
                    let fw = f[2][rw * cols[2] + cw];
                    for cv in 0..cols[1] {
                        let fvw = fw * f[1][rv * cols[1] + cv];
                        for cu in 0..cols[0] {
                            m[(r, cu + cols[0] * (cv + cols[1] * cw))] = fvw * f[0][ru * cols[0] + cu];
                        }
                    }
                }
            }
        }
    }
    m
}

impl ReusableApprox {
    pub fn unknowns(&self) -> usize {
        count(self.approx.0)
    }

    fn h_dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|d| self.approx.0[d] + 3 * self.spline[d])
    }

    /// Dense `L`, rows indexed by unknowns, columns by the `H` index space.
    pub fn l_dense(&self) -> DMatrix<f64> {
        kron3(&self.l1, self.approx.0.map(|a| a + 1), self.h_dims())
    }

    /// Dense `Q`, rows indexed by unknowns, columns by numerator coefficients.
    pub fn q_dense(&self) -> DMatrix<f64> {
        kron3(&self.q1, self.approx.0.map(|a| a + 1), self.numerator.map(|n| n + 1))
    }

    /// `σ·Q·F` without forming `Q`.
    pub fn rhs(&self, numerator: &BernsteinTensor) -> Result<Vec<f64>> {
        if numerator.degrees() != self.numerator {
            return Err(Error::Internal(format!(
                "numerator degrees {:?} differ from {:?}",
                numerator.degrees(),
                self.numerator
            )));
        }
        let mut dims = self.numerator.map(|n| n + 1);
        let mut data = numerator.coeffs().to_vec();
        for d in 0..3 {
            let out = self.approx.0[d] + 1;
            data = apply_along(&data, dims, d, &self.q1[d], out).0;
            dims[d] = out;
        }
        data.iter_mut().for_each(|x| *x *= self.sigma);
        Ok(data)
    }

    pub fn nnz(&self) -> usize {
        self.l1.iter().chain(self.q1.iter()).map(|v| v.iter().filter(|&&x| x != 0.0).count()).sum::<usize>() + 1
    }
}

/// The geometry-dependent matrix `E`, linear in the Jacobian coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct EMatrix {
    pub approx: ApproxDegrees,
    pub jacobian: BernsteinTensor,
}

pub fn build_e(j: &JacobianExpansion, approx: ApproxDegrees) -> EMatrix {
    EMatrix { approx, jacobian: j.tensor.clone() }
}

impl EMatrix {
    fn h_dims(&self) -> [usize; 3] {
        let jd = self.jacobian.degrees();
        [0, 1, 2].map(|d| self.approx.0[d] + jd[d] + 1)
    }

    /// `H = E·g`, the binomially weighted convolution of `J` and `g`.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let gt = BernsteinTensor::from_parts(self.approx.0, g.to_vec());
        let jd = self.jacobian.degrees();
        crate::bernstein::convolve(
            &self.jacobian.binomial_scaled(),
            jd.map(|x| x + 1),
            &gt.binomial_scaled(),
            self.approx.0.map(|x| x + 1),
        )
    }

    /// Dense `E`, rows indexed by `H`, columns by unknowns.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = count(self.approx.0);
        let hd = self.h_dims();
        let mut m = DMatrix::zeros(hd.iter().product(), n);
        let mut e = vec![0.0; n];
        for g in 0..n {
            e[g] = 1.0;
            let col = self.apply(&e);
            for (r, v) in col.into_iter().enumerate() {
                m[(r, g)] = v;
            }
            e[g] = 0.0;
        }
        m
    }
}

/// Polynomial approximation of one integrand.
#[derive(Debug, Clone, PartialEq)]
pub struct Approximant {
    pub g: BernsteinTensor,
    pub residual_estimate: f64,
    /// Reciprocal 1-norm condition estimate of `L·E`.
    pub rcond: f64,
}

/// `A = L·E` without forming either factor densely.
pub fn system_matrix(sys: &ReusableApprox, e: &EMatrix) -> DMatrix<f64> {
    let n = sys.unknowns();
    let mut a = DMatrix::zeros(n, n);
    let hd = sys.h_dims();
    let mut unit = vec![0.0; n];
    for g in 0..n {
        unit[g] = 1.0;
        let mut data = e.apply(&unit);
        unit[g] = 0.0;
        let mut dims = hd;
        for d in 0..3 {
            let out = sys.approx.0[d] + 1;
            data = apply_along(&data, dims, d, &sys.l1[d], out).0;
            dims[d] = out;
        }
        for (i, v) in data.into_iter().enumerate() {
            a[(i, g)] = v;
        }
    }
    a
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols()).map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// 7³ points of the Halton sequence in bases 2, 3, 5.
pub fn halton_points(n: usize) -> Vec<[f64; 3]> {
    fn radical(mut i: usize, b: usize) -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= b as f64;
            r += f * (i % b) as f64;
            i /= b;
        }
        r
    }
    (1..=n).map(|i| [radical(i, 2), radical(i, 3), radical(i, 5)]).collect()
}

/// Solves `(L·E)·G = σ·Q·F` for one numerator.
pub fn approximate(num: &EntryNumerator, j: &JacobianExpansion, sys: &ReusableApprox, element: &str) -> Result<Approximant> {
    let expected_j = sys.spline.map(|p| 3 * p - 1);
    if j.tensor.degrees() != expected_j {
        return Err(Error::Internal(format!(
            "Jacobian degrees {:?} differ from {expected_j:?}",
            j.tensor.degrees()
        )));
    }
    let e = build_e(j, sys.approx);
    let a = system_matrix(sys, &e);
    let rhs = DVector::from_vec(sys.rhs(&num.tensor)?);
    let lu = a.clone().lu();
    let inv = lu.try_inverse().ok_or_else(|| Error::DegenerateGeometry {
        element: element.to_string(),
        reason: "approximation matrix L·E is singular".into(),
    })?;
    let rcond = 1.0 / (one_norm(&a) * one_norm(&inv));
    if rcond < 1e-12 {
        log::warn!("element {element}: approximation system is ill-conditioned (rcond {rcond:.2e})");
    }
    let lu = a.clone().lu();
    let singular = || Error::DegenerateGeometry {
        element: element.to_string(),
        reason: "approximation matrix L·E is singular".into(),
    };
    let mut sol = lu.solve(&rhs).ok_or_else(singular)?;
    // One step of iterative refinement.
    let r = &rhs - &a * &sol;
    sol += lu.solve(&r).ok_or_else(singular)?;
    let g = BernsteinTensor::from_parts(sys.approx.0, sol.iter().copied().collect());
    let mut max_f: f64 = 0.0;
    let mut max_d: f64 = 0.0;
    for u in halton_points(343) {
        let f = num.tensor.eval(u) / j.evaluate(u);
        max_f = max_f.max(f.abs());
        max_d = max_d.max((f - g.eval(u)).abs());
    }
    let residual_estimate = if max_f > 0.0 { max_d / max_f } else { max_d };
    Ok(Approximant { g, residual_estimate, rcond })
}

/// Exact integral of the approximant over the unit cube.
pub fn integrate_entry(a: &Approximant) -> f64 {
    a.g.integrate()
}
