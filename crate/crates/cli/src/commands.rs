use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use qfiga_core::assembly::{assemble_method, run, StiffnessMethod};
use qfiga_core::cache::{self, CacheStats, ItemStats, ReuseCache};
use qfiga_core::csrbf::{self, FitOptions, SampleKind, SampleSet};
use qfiga_core::domains;
use qfiga_core::error::Error;
use qfiga_core::export;
use qfiga_core::problem::HeatProblem;
use qfiga_core::spline::io::{from_json_str, model_to_json, read_model};
use qfiga_core::spline::knots::KnotVector;
use qfiga_core::spline::multiblock::MultiBlockVolume;
use qfiga_core::workflow::{reuse_benchmark, BenchReport, ReuseOptions};

use crate::problem_file::ProblemSpec;
use crate::report;

/// Checks that ran but did not meet their threshold (exit code 3).
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Qf,
    Gauss,
}

impl Method {
    fn stiffness(self) -> StiffnessMethod {
        match self {
            Method::Qf => StiffnessMethod::QuadratureFree,
            Method::Gauss => StiffnessMethod::Gauss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Domain {
    Cube,
    Sphere,
}

pub fn open_cache(dir: Option<&Path>) -> ReuseCache {
    match dir {
        Some(d) => ReuseCache::with_dir(d),
        None => ReuseCache::from_env(),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(BufWriter::new(f))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| Error::Io { path: p.to_path_buf(), source })?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(from_json_str(&text, &path.display().to_string())?)
}

// ---------------------------------------------------------------------------

pub struct SolveArgs {
    pub problem: PathBuf,
    pub out: PathBuf,
    pub samples: usize,
    pub vtk: bool,
    pub method: Method,
}

pub fn solve(args: &SolveArgs, cache: &ReuseCache) -> Result<()> {
    let spec = ProblemSpec::read(&args.problem)?;
    let problem = spec.load()?;
    let t = Instant::now();
    let entry = cache.get_or_build(&problem.model, problem.approx, &problem.dirichlet_faces)?;
    let cache_seconds = t.elapsed().as_secs_f64();
    let outcome = run(&problem, &entry, args.method.stiffness())?;
    let info = &outcome.system.info;
    if info.suspect_elements > 0 {
        log::warn!(
            "{} elements have nonpositive Jacobian coefficients (min {:e})",
            info.suspect_elements,
            info.min_jacobian_coefficient
        );
    }

    fs::create_dir_all(&args.out).map_err(|source| Error::Io { path: args.out.clone(), source })?;
    let csv = args.out.join("solution.csv");
    let mut w = create(&csv)?;
    export::write_csv(&outcome.solution, args.samples, &mut w).with_context(|| format!("writing {}", csv.display()))?;
    w.flush()?;
    if args.vtk {
        for b in 0..problem.model.blocks().len() {
            let path = args.out.join(format!("block_{b}.vtk"));
            let mut w = create(&path)?;
            export::write_vtk_block(&outcome.solution, b, args.samples.max(2) - 1, &mut w)?;
            w.flush()?;
        }
    }
    let rep = report::SolveSummary::new(&spec, &problem, &entry, &outcome, args.method, cache_seconds);
    let rpath = args.out.join("report.json");
    fs::write(&rpath, serde_json::to_string_pretty(&rep)?).map_err(|source| Error::Io { path: rpath.clone(), source })?;
    print!("{}", rep.text());
    Ok(())
}

// ---------------------------------------------------------------------------

pub struct ReuseArgs {
    pub problem: PathBuf,
    pub models: Vec<PathBuf>,
    pub repeat: usize,
    pub out: Option<PathBuf>,
}

pub fn reuse(args: &ReuseArgs, cache: &ReuseCache) -> Result<()> {
    let spec = ProblemSpec::read(&args.problem)?;
    let mut problems = Vec::with_capacity(args.models.len());
    for m in &args.models {
        let model = read_model(m)?;
        problems.push((m.display().to_string(), spec.instantiate(&model)?));
    }
    if problems.len() > 1 {
        let first = &problems[0].1.model;
        for (name, p) in &problems[1..] {
            if p.model.num_dofs() != first.num_dofs() || p.model.degrees() != first.degrees() {
                log::warn!("{name} is not structurally identical to the first model; it will not reuse the cache");
            }
        }
    }
    let opts = ReuseOptions { repetitions: args.repeat, time_first: true, solve: true };
    let rep = reuse_benchmark(&problems, cache, opts)?;
    print!("{}", report::bench_table(&rep));
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&rep)?).map_err(|source| Error::Io { path: out.clone(), source })?;
    }
    if let Some(m) = rep.models.iter().find(|m| m.checksum_match == Some(false)) {
        bail!(NumericFailure(format!("{}: warm-cache system differs from the cold assembly", m.name)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub struct BenchArgs {
    pub domain: Domain,
    pub degree: usize,
    pub base: [usize; 3],
    pub levels: Vec<usize>,
    pub repeat: usize,
    pub out: Option<PathBuf>,
}

fn domain_problem(domain: Domain, model: MultiBlockVolume) -> HeatProblem {
    match domain {
        Domain::Cube => domains::cube_problem(model),
        Domain::Sphere => domains::sphere_problem(model),
    }
}

fn domain_model(domain: Domain, degree: usize, base: [usize; 3]) -> Result<MultiBlockVolume> {
    Ok(match domain {
        Domain::Cube => domains::unit_cube(degree, base),
        Domain::Sphere => domains::hollow_sphere_octant(degree, base)?,
    })
}

#[derive(Debug, Serialize)]
pub struct BenchLevel {
    pub level: usize,
    pub elements: usize,
    pub gauss_seconds: f64,
    pub reuse: BenchReport,
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let base = domain_model(args.domain, args.degree, args.base)?;
    let mut rows = Vec::new();
    for &level in &args.levels {
        let a = base.h_refine(level)?;
        let b = domains::perturbed(&a, 0.04)?;
        let elements = a.num_elements();
        let problems = vec![
            (format!("h{level}-a"), domain_problem(args.domain, a)),
            (format!("h{level}-b"), domain_problem(args.domain, b)),
        ];
        let cache = ReuseCache::in_memory();
        let rep = reuse_benchmark(&problems, &cache, ReuseOptions { repetitions: args.repeat, time_first: false, solve: false })?;
        let pb = &problems[1].1;
        let entry = cache.get_or_build(&pb.model, pb.approx, &pb.dirichlet_faces)?;
        let mut gauss = f64::INFINITY;
        for _ in 0..args.repeat.max(1) {
            let t = Instant::now();
            assemble_method(pb, &entry, StiffnessMethod::Gauss)?;
            gauss = gauss.min(t.elapsed().as_secs_f64());
        }
        rows.push(BenchLevel { level, elements, gauss_seconds: gauss, reuse: rep });
    }
    print!("{}", report::level_table(&rows));
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&rows)?).map_err(|source| Error::Io { path: out.clone(), source })?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub struct VerifyArgs {
    pub degree: usize,
    pub cube_base: usize,
    pub max_level: usize,
    pub sphere_elements: [usize; 3],
}

#[derive(Debug, Serialize)]
pub struct VerifyRow {
    pub suite: &'static str,
    pub level: usize,
    pub dofs: usize,
    pub qf: f64,
    pub gauss: f64,
}

fn errors(problem: &HeatProblem, cache: &ReuseCache) -> Result<(f64, f64)> {
    let entry = cache.get_or_build(&problem.model, problem.approx, &problem.dirichlet_faces)?;
    let get = |m| -> Result<f64> {
        let o = run(problem, &entry, m)?;
        Ok(o.error.expect("manufactured problems carry an exact field").relative)
    };
    Ok((get(StiffnessMethod::QuadratureFree)?, get(StiffnessMethod::Gauss)?))
}

pub fn verify(args: &VerifyArgs, cache: &ReuseCache) -> Result<()> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let cube = domains::unit_cube(args.degree, [args.cube_base; 3]);
    for level in 0..=args.max_level {
        let problem = domains::cube_problem(cube.h_refine(level)?);
        let (qf, gauss) = errors(&problem, cache)?;
        rows.push(VerifyRow { suite: "cube", level, dofs: problem.model.num_dofs(), qf, gauss });
    }
    let sphere = domains::sphere_problem(domains::hollow_sphere_octant(args.degree, args.sphere_elements)?);
    let (qf, gauss) = errors(&sphere, cache)?;
    rows.push(VerifyRow { suite: "sphere", level: 0, dofs: sphere.model.num_dofs(), qf, gauss });

    let cube_rows: Vec<&VerifyRow> = rows.iter().filter(|r| r.suite == "cube").collect();
    for w in cube_rows.windows(2) {
        let ratio = w[0].qf / w[1].qf;
        if !(ratio >= 2.0) {
            failures.push(format!("cube h{}→h{}: error ratio {ratio:.3} < 2", w[0].level, w[1].level));
        }
    }
    for r in &rows {
        let agree = match r.suite {
            "cube" => (r.qf - r.gauss).abs() <= 0.1 * r.qf.min(r.gauss),
            _ => r.qf <= 2.0 * r.gauss,
        };
        if !agree {
            failures.push(format!("{} h{}: quadrature-free {:.4e} vs Gauss {:.4e}", r.suite, r.level, r.qf, r.gauss));
        }
    }
    print!("{}", report::verify_table(&rows));
    if failures.is_empty() {
        println!("verify: all checks passed");
        Ok(())
    } else {
        for f in &failures {
            println!("FAIL {f}");
        }
        bail!(NumericFailure(format!("{} verification checks failed", failures.len())))
    }
}

// ---------------------------------------------------------------------------

pub struct FitArgs {
    pub samples: Vec<PathBuf>,
    pub degree: usize,
    pub elements: [usize; 3],
    pub smoothing: f64,
    pub boundary_weight: f64,
    pub template: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub interior: usize,
    pub out: Option<PathBuf>,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct Constraint {
    from: [f64; 3],
    to: [f64; 3],
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let mut sets: Vec<SampleSet> = Vec::new();
    for p in &args.samples {
        let set: SampleSet = read_json(p)?;
        set.validate().with_context(|| format!("in {}", p.display()))?;
        sets.push(set);
    }
    match (&args.template, &args.constraints) {
        (Some(tp), Some(cp)) => {
            let template = read_model(tp)?;
            let cons: Vec<Constraint> = read_json(cp)?;
            let pairs: Vec<_> = cons.iter().map(|c| (c.from, c.to)).collect();
            let lambda = args.lambda.unwrap_or_else(|| csrbf::default_lambda(&pairs));
            let map = csrbf::fit_elastic_map(&pairs, lambda)?;
            log::info!("elastic map: {} centers, λ = {lambda}, residual {:e}", pairs.len(), map.residual(&pairs));
            for (b, vol) in template.blocks().iter().enumerate() {
                let mut interior = csrbf::template_samples(vol, b, args.interior, &|x| map.eval(x));
                interior.samples.retain(|s| s.kind == SampleKind::Interior);
                match sets.iter_mut().find(|s| s.block == b) {
                    Some(s) => s.samples.extend(interior.samples),
                    None => sets.push(interior),
                }
            }
        }
        (None, None) => {}
        _ => bail!(Error::Config("--template and --constraints must be given together".into())),
    }
    if sets.is_empty() {
        bail!(Error::Config("no samples".into()));
    }
    let knots = args.elements.map(|e| KnotVector::uniform(args.degree, e));
    let opts = FitOptions { boundary_weight: args.boundary_weight, smoothing: args.smoothing };
    let model = csrbf::fit_multiblock(&sets, &knots, opts)?;
    log::info!("fitted {} blocks, {} interfaces", model.blocks().len(), model.interfaces().len());
    if model.blocks().len() > 1 && model.interfaces().is_empty() {
        log::warn!("no fitted block faces coincide; the blocks are not glued");
    }
    write_text(args.out.as_deref(), &(model_to_json(&model) + "\n"))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ElementDump {
    block: usize,
    element: [usize; 3],
    degrees: [usize; 3],
    sub_box: [[f64; 2]; 3],
    control_points: Vec<[f64; 3]>,
}

pub fn extract(model: &Path, out: Option<&Path>) -> Result<()> {
    let model = read_model(model)?;
    let elems: Vec<ElementDump> = model
        .blocks()
        .iter()
        .enumerate()
        .flat_map(|(b, v)| v.extract_bezier(b))
        .map(|e| ElementDump {
            block: e.block,
            element: e.element,
            degrees: e.degrees,
            sub_box: e.sub_box,
            control_points: e.control,
        })
        .collect();
    write_text(out, &(serde_json::to_string_pretty(&elems)? + "\n"))
}

// ---------------------------------------------------------------------------

fn cache_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    match explicit {
        Some(d) => Ok(d.to_path_buf()),
        None => match std::env::var_os(cache::CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => Ok(PathBuf::from(d)),
            _ => bail!(Error::Config(format!("no cache directory: pass --cache-dir or set {}", cache::CACHE_DIR_ENV))),
        },
    }
}

pub fn cache_stats(dir: Option<&Path>, timings: bool) -> Result<()> {
    let dir = cache_dir(dir)?;
    let manifests = cache::list_dir(&dir)?;
    println!("cache {}: {} entries", dir.display(), manifests.len());
    let (mut nnz, mut bytes) = (0, 0);
    for m in &manifests {
        let stats = CacheStats {
            items: m
                .items
                .iter()
                .map(|i| ItemStats { name: i.name.clone(), len: i.len, nnz: i.nnz, bytes: i.bytes, build_ms: i.build_ms })
                .collect(),
        };
        println!(
            "\n{}  degrees {:?}  approx {:?}  subdivisions {}  blocks {}",
            m.hash, m.key.degrees, m.key.approx_degrees, m.key.subdivisions, m.key.knots.len()
        );
        print!("{}", stats.report(timings));
        nnz += stats.total_nnz();
        bytes += stats.total_bytes();
    }
    println!("\ntotal nnz {nnz} bytes {bytes}");
    Ok(())
}

pub fn cache_clear(dir: Option<&Path>) -> Result<()> {
    let dir = cache_dir(dir)?;
    let n = cache::clear_dir(&dir)?;
    println!("removed {n} files from {}", dir.display());
    Ok(())
}
