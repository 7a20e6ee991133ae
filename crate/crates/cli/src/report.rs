use std::fmt::Write;

use serde::Serialize;

use qfiga_core::assembly::SolveOutcome;
use qfiga_core::cache::CacheEntry;
use qfiga_core::problem::HeatProblem;
use qfiga_core::workflow::BenchReport;

use crate::commands::{BenchLevel, Method, VerifyRow};
use crate::problem_file::ProblemSpec;

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub relative_l2: f64,
    pub absolute_l2: f64,
    pub exact_norm: f64,
}

#[derive(Debug, Serialize)]
pub struct SolveSummary {
    pub problem: String,
    pub model: String,
    pub method: &'static str,
    pub dofs: usize,
    pub elements: usize,
    pub dirichlet_faces: usize,
    pub solver: String,
    pub iterations: usize,
    pub relative_residual: f64,
    pub min_jacobian_coefficient: f64,
    pub suspect_elements: usize,
    pub cache_hash: String,
    pub cache_nnz: usize,
    pub cache_bytes: usize,
    pub cache_seconds: f64,
    pub stiffness_seconds: f64,
    pub load_seconds: f64,
    pub error: Option<ErrorReport>,
}

impl SolveSummary {
    pub fn new(
        spec: &ProblemSpec,
        problem: &HeatProblem,
        entry: &CacheEntry,
        outcome: &SolveOutcome,
        method: Method,
        cache_seconds: f64,
    ) -> SolveSummary {
        let info = &outcome.system.info;
        SolveSummary {
            problem: spec.path.display().to_string(),
            model: spec.model_path().display().to_string(),
            method: match method {
                Method::Qf => "quadrature-free",
                Method::Gauss => "gauss",
            },
            dofs: problem.model.num_dofs(),
            elements: info.elements,
            dirichlet_faces: problem.dirichlet_faces.len(),
            solver: outcome.report.method.to_string(),
            iterations: outcome.report.iterations,
            relative_residual: outcome.report.relative_residual,
            min_jacobian_coefficient: info.min_jacobian_coefficient,
            suspect_elements: info.suspect_elements,
            cache_hash: entry.hash.clone(),
            cache_nnz: entry.stats.total_nnz(),
            cache_bytes: entry.stats.total_bytes(),
            cache_seconds,
            stiffness_seconds: info.stiffness_seconds,
            load_seconds: info.load_seconds,
            error: outcome.error.map(|e| ErrorReport {
                relative_l2: e.relative,
                absolute_l2: e.absolute,
                exact_norm: e.exact_norm,
            }),
        }
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model       {}", self.model);
        let _ = writeln!(s, "method      {}", self.method);
        let _ = writeln!(s, "dofs        {} ({} elements)", self.dofs, self.elements);
        let _ = writeln!(s, "solver      {} ({} iterations, residual {:.3e})", self.solver, self.iterations, self.relative_residual);
        let _ = writeln!(s, "assembly    {:.3} s stiffness, {:.3} s load", self.stiffness_seconds, self.load_seconds);
        if let Some(e) = &self.error {
            let _ = writeln!(s, "L2 error    {:.6e} relative, {:.6e} absolute", e.relative_l2, e.absolute_l2);
        }
        s
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

pub fn bench_table(rep: &BenchReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "threads {}  repetitions {} (min taken)", rep.threads, rep.repetitions);
    let _ = writeln!(
        s,
        "{:<28} {:>9} {:>10} {:>10} {:>7} {:>12} {:>12} {:>12} {:>9}",
        "model", "dofs", "cold s", "warm s", "ratio", "cache nnz", "cache bytes", "L2 rel", "checksum"
    );
    for m in &rep.models {
        let check = match m.checksum_match {
            Some(true) => "match",
            Some(false) => "MISMATCH",
            None => "-",
        };
        let _ = writeln!(
            s,
            "{:<28} {:>9} {:>10} {:>10} {:>7} {:>12} {:>12} {:>12} {:>9}",
            m.name,
            m.dofs,
            opt(m.cold_seconds, 4),
            opt(m.warm_seconds, 4),
            opt(m.ratio, 2),
            m.cache_nnz,
            m.cache_bytes,
            m.l2_relative_error.map_or_else(|| "-".into(), |e| format!("{e:.4e}")),
            check
        );
    }
    s
}

pub fn level_table(rows: &[BenchLevel]) -> String {
    let mut s = String::new();
    if let Some(r) = rows.first() {
        let _ = writeln!(s, "threads {}  repetitions {} (min taken)", r.reuse.threads, r.reuse.repetitions);
    }
    let _ = writeln!(
        s,
        "{:>5} {:>9} {:>9} {:>10} {:>10} {:>7} {:>10} {:>12}",
        "level", "elements", "dofs", "cold s", "warm s", "ratio", "gauss s", "cache nnz"
    );
    for r in rows {
        let m = &r.reuse.models[1];
        let _ = writeln!(
            s,
            "{:>5} {:>9} {:>9} {:>10} {:>10} {:>7} {:>10.4} {:>12}",
            r.level,
            r.elements,
            m.dofs,
            opt(m.cold_seconds, 4),
            opt(m.warm_seconds, 4),
            opt(m.ratio, 2),
            r.gauss_seconds,
            m.cache_nnz
        );
    }
    s
}

pub fn verify_table(rows: &[VerifyRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<7} {:>5} {:>8} {:>14} {:>14}", "suite", "level", "dofs", "L2 qf", "L2 gauss");
    for r in rows {
        let _ = writeln!(s, "{:<7} {:>5} {:>8} {:>14.6e} {:>14.6e}", r.suite, r.level, r.dofs, r.qf, r.gauss);
    }
    s
}
