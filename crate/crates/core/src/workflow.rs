//! Cold versus warm-cache timing over a sequence of structurally related models.

use std::time::Instant;

use serde::Serialize;

use crate::assembly::{assemble, impose_dirichlet, l2_relative_error, solve, ReducedSystem};
use crate::cache::{CacheEntry, ReuseCache};
use crate::error::Result;
use crate::problem::HeatProblem;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ModelTiming {
    pub name: String,
    pub dofs: usize,
    /// Cache build plus assembly, starting from an empty cache.
    pub cold_seconds: Option<f64>,
    /// Assembly with the cache entry already present.
    pub warm_seconds: Option<f64>,
    /// `cold / warm`.
    pub ratio: Option<f64>,
    pub cache_nnz: usize,
    pub cache_bytes: usize,
    pub l2_relative_error: Option<f64>,
    pub stiffness_digest: String,
    /// Warm and cold stiffness digests agree; absent when only one path ran.
    pub checksum_match: Option<bool>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BenchReport {
    pub threads: usize,
    /// Timings are the minimum over this many runs.
    pub repetitions: usize,
    pub models: Vec<ModelTiming>,
}

#[derive(Debug, Clone, Copy)]
pub struct ReuseOptions {
    pub repetitions: usize,
    /// Time the first model as well; otherwise it only fills the cache.
    pub time_first: bool,
    /// Solve each warm system and report the L² error when an exact field is known.
    pub solve: bool,
}

impl Default for ReuseOptions {
    fn default() -> Self {
        ReuseOptions { repetitions: 3, time_first: true, solve: true }
    }
}

fn setup(problem: &HeatProblem, entry: &CacheEntry) -> Result<ReducedSystem> {
    let system = assemble(problem, entry)?;
    impose_dirichlet(&system, problem, entry)
}

/// Minimum wall time of `reps` runs of `f`, with the last result.
fn timed<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let out = f()?;
        best = best.min(t.elapsed().as_secs_f64());
        last = Some(out);
    }
    Ok((best, last.expect("at least one run")))
}

/// The first model populates `cache`; every later model is timed cold (fresh
/// entry) and warm (cached entry), and the two stiffness matrices are compared.
pub fn reuse_benchmark(problems: &[(String, HeatProblem)], cache: &ReuseCache, opts: ReuseOptions) -> Result<BenchReport> {
    let mut models = Vec::with_capacity(problems.len());
    for (i, (name, problem)) in problems.iter().enumerate() {
        problem.validate()?;
        let faces = &problem.dirichlet_faces;
        let cold = if i > 0 || opts.time_first {
            Some(timed(opts.repetitions, || {
                let entry = CacheEntry::build(&problem.model, problem.approx, faces)?;
                setup(problem, &entry)
            })?)
        } else {
            None
        };
        let entry = cache.get_or_build(&problem.model, problem.approx, faces)?;
        let warm = if i > 0 || opts.time_first {
            Some(timed(opts.repetitions, || {
                let entry = cache.get_or_build(&problem.model, problem.approx, faces)?;
                setup(problem, &entry)
            })?)
        } else {
            None
        };
        let reduced = match &warm {
            Some((_, r)) => r.clone(),
            None => setup(problem, &entry)?,
        };
        let digest = reduced.matrix.digest();
        let checksum_match = cold.as_ref().map(|(_, c)| c.matrix.digest() == digest && c.rhs == reduced.rhs);
        let l2 = match (&problem.exact, opts.solve) {
            (Some(exact), true) => {
                let (sol, _) = solve(&reduced, &problem.model)?;
                Some(l2_relative_error(&sol, &entry, exact.as_ref()).relative)
            }
            _ => None,
        };
        let cold_s = cold.map(|(t, _)| t);
        let warm_s = warm.map(|(t, _)| t);
        let ratio = match (cold_s, warm_s) {
            (Some(c), Some(w)) if w > 0.0 => Some(c / w),
            _ => None,
        };
        log::info!("{name}: cold {cold_s:?} s, warm {warm_s:?} s");
        models.push(ModelTiming {
            name: name.clone(),
            dofs: problem.model.num_dofs(),
            cold_seconds: cold_s,
            warm_seconds: warm_s,
            ratio,
            cache_nnz: entry.stats.total_nnz(),
            cache_bytes: entry.stats.total_bytes(),
            l2_relative_error: l2,
            stiffness_digest: digest,
            checksum_match,
        });
    }
    Ok(BenchReport { threads: rayon::current_num_threads(), repetitions: opts.repetitions.max(1), models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{cube_problem, unit_cube};

    #[test]
    fn warm_matches_cold_on_a_second_model() {
        let a = unit_cube(2, [2, 2, 2]);
        let b = a.map_control(|x| [x[0] + 0.1 * x[1] * x[2], x[1], x[2] * (1.0 + 0.1 * x[0])]).unwrap();
        let problems = vec![("a".to_string(), cube_problem(a)), ("b".to_string(), cube_problem(b))];
        let cache = ReuseCache::in_memory();
        let opts = ReuseOptions { repetitions: 1, time_first: false, solve: true };
        let r = reuse_benchmark(&problems, &cache, opts).unwrap();
        assert_eq!(cache.builds(), 1);
        assert!(r.models[0].cold_seconds.is_none());
        assert_eq!(r.models[1].checksum_match, Some(true));
        assert!(r.models[1].ratio.unwrap() > 0.0);
        assert!(r.models[1].l2_relative_error.unwrap() < 0.2);
    }
}
