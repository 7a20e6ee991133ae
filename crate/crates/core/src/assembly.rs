//! Global assembly, Dirichlet elimination, solve and error norms.

use std::time::Instant;

use rayon::prelude::*;

use crate::bernstein::count;
use crate::cache::CacheEntry;
use crate::element::{element_load, element_stiffness, element_stiffness_gauss, mapped_basis, ElementInfo};
use crate::error::{Error, Result};
use crate::problem::HeatProblem;
use crate::quadrature::GaussRule;
use crate::sparse::{solve_spd, CsrMatrix, SolveReport};
use crate::spline::multiblock::MultiBlockVolume;
use crate::spline::volume::{det3, BezierVolume};

/// Elements evaluated in parallel before their blocks are merged in order.
const BATCH: usize = 256;

/// Below this many unknowns the solve is direct when the envelope fits.
pub const DIRECT_LIMIT: usize = 20_000;
/// Envelope entries allowed for the direct factor (8 bytes each).
pub const ENVELOPE_LIMIT: usize = 6_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StiffnessMethod {
    QuadratureFree,
    /// Tensor Gauss rule with `p+1` points per direction.
    Gauss,
    /// Tensor Gauss rule with the given number of points per direction.
    GaussPoints(usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssemblyInfo {
    pub elements: usize,
    pub min_jacobian_coefficient: f64,
    /// Elements with a nonpositive Jacobian coefficient.
    pub suspect_elements: usize,
    pub max_kernel_iterations: usize,
    pub direct_kernel_solves: usize,
    pub stiffness_seconds: f64,
    pub load_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSystem {
    pub stiffness: CsrMatrix,
    pub load: Vec<f64>,
    pub boundary_dofs: Vec<usize>,
    pub info: AssemblyInfo,
}

fn element_name(e: &BezierVolume) -> String {
    format!("block {} element {:?}", e.block, e.element)
}

fn assemble_stiffness(model: &MultiBlockVolume, entry: &CacheEntry, method: StiffnessMethod) -> Result<(CsrMatrix, AssemblyInfo)> {
    let s = &entry.structure;
    let mut k = s.pattern.clone();
    let mut info = AssemblyInfo { elements: s.elements.len(), min_jacobian_coefficient: f64::INFINITY, ..Default::default() };
    let p = entry.key.degrees;
    for start in (0..s.elements.len()).step_by(BATCH) {
        let end = (start + BATCH).min(s.elements.len());
        let blocks: Vec<Result<(Vec<f64>, ElementInfo)>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let el = s.elements[i];
                let ex = &s.extraction[el.block];
                let bez = model.blocks()[el.block].bezier_element(el.block, el.index, ex);
                let maps = [0, 1, 2].map(|d| ex[d].matrices[el.index[d]].as_slice());
                match method {
                    StiffnessMethod::QuadratureFree => element_stiffness(&entry.tables, &bez, maps, &element_name(&bez)),
                    StiffnessMethod::Gauss => Ok((
                        element_stiffness_gauss(&bez, maps, p.iter().max().unwrap() + 1),
                        ElementInfo::default(),
                    )),
                    StiffnessMethod::GaussPoints(n) => Ok((element_stiffness_gauss(&bez, maps, n), ElementInfo::default())),
                }
            })
            .collect();
        for (i, r) in (start..end).zip(blocks) {
            let (ke, ei) = r?;
            k.add_block(&s.connectivity[i], &ke);
            if method == StiffnessMethod::QuadratureFree {
                info.min_jacobian_coefficient = info.min_jacobian_coefficient.min(ei.min_jacobian_coefficient);
                if ei.min_jacobian_coefficient <= 0.0 {
                    info.suspect_elements += 1;
                }
                info.max_kernel_iterations = info.max_kernel_iterations.max(ei.solver_iterations);
                info.direct_kernel_solves += ei.used_direct_solve as usize;
            }
        }
    }
    Ok((k, info))
}

/// Load vector `−∫gψ` by Gauss quadrature with `p+2` points per direction.
pub fn assemble_load(problem: &HeatProblem, entry: &CacheEntry) -> Result<Vec<f64>> {
    let model = &problem.model;
    let s = &entry.structure;
    let points = entry.key.degrees.iter().max().unwrap() + 2;
    let mut load = vec![0.0; model.num_dofs()];
    let g = problem.source.as_ref();
    for start in (0..s.elements.len()).step_by(BATCH) {
        let end = (start + BATCH).min(s.elements.len());
        let blocks: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let el = s.elements[i];
                let ex = &s.extraction[el.block];
                let bez = model.blocks()[el.block].bezier_element(el.block, el.index, ex);
                let maps = [0, 1, 2].map(|d| ex[d].matrices[el.index[d]].as_slice());
                element_load(&bez, maps, points, &|x| g(x))
            })
            .collect();
        for (i, fe) in (start..end).zip(blocks) {
            for (&gi, v) in s.connectivity[i].iter().zip(fe) {
                load[gi] -= v;
            }
        }
    }
    Ok(load)
}

fn check(problem: &HeatProblem, entry: &CacheEntry) -> Result<()> {
    problem.validate()?;
    if entry.config() != problem.approx {
        return Err(Error::Config(format!(
            "cache entry was built for {:?}, problem requests {:?}",
            entry.config(),
            problem.approx
        )));
    }
    entry.check_model(&problem.model, &problem.dirichlet_faces)
}

fn assemble_with(problem: &HeatProblem, entry: &CacheEntry, method: StiffnessMethod) -> Result<GlobalSystem> {
    check(problem, entry)?;
    let t0 = Instant::now();
    let (stiffness, mut info) = assemble_stiffness(&problem.model, entry, method)?;
    info.stiffness_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let load = assemble_load(problem, entry)?;
    info.load_seconds = t1.elapsed().as_secs_f64();
    let boundary_dofs = entry.collocation.as_ref().map(|c| c.system.boundary_dofs.clone()).unwrap_or_default();
    Ok(GlobalSystem { stiffness, load, boundary_dofs, info })
}

/// Quadrature-free Galerkin system. The entry must match the problem's structure.
pub fn assemble(problem: &HeatProblem, entry: &CacheEntry) -> Result<GlobalSystem> {
    assemble_with(problem, entry, StiffnessMethod::QuadratureFree)
}

/// Same system with the stiffness integrated by `(p+1)³` Gauss points per element.
pub fn assemble_reference_gauss(problem: &HeatProblem, entry: &CacheEntry) -> Result<GlobalSystem> {
    assemble_with(problem, entry, StiffnessMethod::Gauss)
}

pub fn assemble_method(problem: &HeatProblem, entry: &CacheEntry, method: StiffnessMethod) -> Result<GlobalSystem> {
    assemble_with(problem, entry, method)
}

/// System restricted to the free dofs after eliminating the collocated boundary values.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub free_dofs: Vec<usize>,
    pub boundary_dofs: Vec<usize>,
    pub boundary_values: Vec<f64>,
    pub num_dofs: usize,
}

pub fn impose_dirichlet(system: &GlobalSystem, problem: &HeatProblem, entry: &CacheEntry) -> Result<ReducedSystem> {
    let n = system.stiffness.n;
    let (boundary_dofs, boundary_values) = match &entry.collocation {
        Some(c) => {
            let h = c.system.rhs(&problem.model, problem.dirichlet_value.as_ref());
            (c.system.boundary_dofs.clone(), c.lu.solve(&h))
        }
        None => (Vec::new(), Vec::new()),
    };
    if boundary_dofs != system.boundary_dofs {
        return Err(Error::Config("boundary dofs of the system and the cache entry differ".into()));
    }
    let mut full = vec![0.0; n];
    let mut is_bc = vec![false; n];
    for (&d, &v) in boundary_dofs.iter().zip(&boundary_values) {
        full[d] = v;
        is_bc[d] = true;
    }
    let free_dofs: Vec<usize> = (0..n).filter(|&i| !is_bc[i]).collect();
    let kb = system.stiffness.mul(&full);
    let rhs = free_dofs.iter().map(|&i| system.load[i] - kb[i]).collect();
    let matrix = system.stiffness.submatrix(&free_dofs);
    Ok(ReducedSystem { matrix, rhs, free_dofs, boundary_dofs, boundary_values, num_dofs: n })
}

/// Discrete temperature: one control value per global dof.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub model: MultiBlockVolume,
    pub values: Vec<f64>,
}

impl SolutionField {
    /// `T` at parameter `t` of `block`.
    pub fn evaluate(&self, block: usize, t: [f64; 3]) -> f64 {
        let vol = &self.model.blocks()[block];
        let k = vol.knots();
        let (fu, bu) = k[0].basis(t[0]);
        let (fv, bv) = k[1].basis(t[1]);
        let (fw, bw) = k[2].basis(t[2]);
        let mut s = 0.0;
        for (c, &nw) in bw.iter().enumerate() {
            for (b, &nv) in bv.iter().enumerate() {
                for (a, &nu) in bu.iter().enumerate() {
                    let local = vol.index(fu + a, fv + b, fw + c);
                    s += nu * nv * nw * self.values[self.model.global_index(block, local)];
                }
            }
        }
        s
    }
}

pub fn solve(reduced: &ReducedSystem, model: &MultiBlockVolume) -> Result<(SolutionField, SolveReport)> {
    let (x, report) = solve_spd(&reduced.matrix, &reduced.rhs, DIRECT_LIMIT, ENVELOPE_LIMIT)?;
    let mut values = vec![0.0; reduced.num_dofs];
    for (&d, &v) in reduced.free_dofs.iter().zip(&x) {
        values[d] = v;
    }
    for (&d, &v) in reduced.boundary_dofs.iter().zip(&reduced.boundary_values) {
        values[d] = v;
    }
    Ok((SolutionField { model: model.clone(), values }, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Error {
    /// `‖T_h − T‖ / ‖T‖`, or the absolute error when `‖T‖` vanishes.
    pub relative: f64,
    pub absolute: f64,
    pub exact_norm: f64,
    /// Set when the exact norm was zero and `relative` holds the absolute error.
    pub zero_exact_norm: bool,
}

/// Relative L² error with `(p+2)³` Gauss points per element.
pub fn l2_relative_error(sol: &SolutionField, entry: &CacheEntry, exact: &(dyn Fn([f64; 3]) -> f64 + Sync)) -> L2Error {
    let s = &entry.structure;
    let p = entry.key.degrees;
    let rule = GaussRule::new(p.iter().max().unwrap() + 2);
    let parts: Vec<(f64, f64)> = (0..s.elements.len())
        .into_par_iter()
        .map(|i| {
            let el = s.elements[i];
            let ex = &s.extraction[el.block];
            let bez = sol.model.blocks()[el.block].bezier_element(el.block, el.index, ex);
            let local: Vec<f64> = s.connectivity[i].iter().map(|&g| sol.values[g]).collect();
            element_error(&bez, [0, 1, 2].map(|d| ex[d].matrices[el.index[d]].as_slice()), &local, &rule, exact)
        })
        .collect();
    let (mut e2, mut t2) = (0.0, 0.0);
    for (a, b) in parts {
        e2 += a;
        t2 += b;
    }
    let (absolute, exact_norm) = (e2.max(0.0).sqrt(), t2.max(0.0).sqrt());
    if exact_norm == 0.0 {
        L2Error { relative: absolute, absolute, exact_norm, zero_exact_norm: true }
    } else {
        L2Error { relative: absolute / exact_norm, absolute, exact_norm, zero_exact_norm: false }
    }
}

fn element_error(
    bez: &BezierVolume,
    maps: [&[f64]; 3],
    local: &[f64],
    rule: &GaussRule,
    exact: &(dyn Fn([f64; 3]) -> f64 + Sync),
) -> (f64, f64) {
    let p = bez.degrees;
    let np = p.map(|x| x + 1);
    debug_assert_eq!(local.len(), count(p));
    let tabs: Vec<_> = (0..3).map(|d| mapped_basis(p[d], maps[d], rule)).collect();
    let (mut e2, mut t2) = (0.0, 0.0);
    let m = rule.len();
    for qw in 0..m {
        for qv in 0..m {
            for qu in 0..m {
                let u = [rule.points[qu], rule.points[qv], rule.points[qw]];
                let w = rule.weights[qu] * rule.weights[qv] * rule.weights[qw] * det3(&bez.jacobian_matrix(u));
                let (vu, vv, vw) = (&tabs[0].0[qu], &tabs[1].0[qv], &tabs[2].0[qw]);
                let mut th = 0.0;
                let mut idx = 0;
                for cw in 0..np[2] {
                    for cv in 0..np[1] {
                        let s = vv[cv] * vw[cw];
                        for cu in 0..np[0] {
                            th += local[idx] * s * vu[cu];
                            idx += 1;
                        }
                    }
                }
                let t = exact(bez.evaluate(u));
                e2 += w * (th - t) * (th - t);
                t2 += w * t * t;
            }
        }
    }
    (e2, t2)
}

/// Everything produced by one solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub system: GlobalSystem,
    pub solution: SolutionField,
    pub report: SolveReport,
    pub error: Option<L2Error>,
}

/// Assemble, impose boundary data, solve, and measure the error when an exact field is known.
pub fn run(problem: &HeatProblem, entry: &CacheEntry, method: StiffnessMethod) -> Result<SolveOutcome> {
    let system = assemble_with(problem, entry, method)?;
    let reduced = impose_dirichlet(&system, problem, entry)?;
    let (solution, report) = solve(&reduced, &problem.model)?;
    let error = problem.exact.as_ref().map(|e| l2_relative_error(&solution, entry, e.as_ref()));
    Ok(SolveOutcome { system, solution, report, error })
}
