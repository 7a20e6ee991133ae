//! Problem files.
//!
//! ```json
//! {"model": "cube.json",
//!  "source": "-3*pi^2*sin(pi*x)*sin(pi*y)*sin(pi*z)",
//!  "dirichlet": {"faces": "all", "value": "0"},
//!  "refine_h": 1, "approx_degree_bump": 0,
//!  "exact": "sin(pi*x)*sin(pi*y)*sin(pi*z)"}
//! ```
//!
//! `model` is resolved relative to the problem file. `faces` is `"all"` (every
//! exterior face) or a list of `[block, face]` pairs.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use qfiga_core::approx::ApproxConfig;
use qfiga_core::error::{Error, Result};
use qfiga_core::expr;
use qfiga_core::problem::{Field, HeatProblem};
use qfiga_core::spline::io::{from_json_str, read_model};
use qfiga_core::spline::multiblock::MultiBlockVolume;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FaceSpec {
    Named(String),
    List(Vec<[usize; 2]>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletSpec {
    pub faces: FaceSpec,
    #[serde(default = "zero")]
    pub value: String,
}

fn zero() -> String {
    "0".into()
}

fn all_faces() -> DirichletSpec {
    DirichletSpec { faces: FaceSpec::Named("all".into()), value: zero() }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub model: PathBuf,
    pub source: String,
    #[serde(default = "all_faces")]
    pub dirichlet: DirichletSpec,
    #[serde(default)]
    pub refine_h: usize,
    #[serde(default)]
    pub approx_degree_bump: usize,
    #[serde(default)]
    pub approx_subdivisions: usize,
    #[serde(default)]
    pub exact: Option<String>,
}

/// A parsed problem file with its expressions compiled, independent of the model.
#[derive(Clone)]
pub struct ProblemSpec {
    pub path: PathBuf,
    pub file: ProblemFile,
    source: Field,
    value: Field,
    exact: Option<Field>,
}

fn pointer_err(path: &Path, pointer: &str, message: impl Into<String>) -> Error {
    Error::Json { path: path.to_path_buf(), pointer: pointer.into(), message: message.into() }
}

fn compile(path: &Path, pointer: &str, src: &str) -> Result<Field> {
    expr::parse(src).map(|e| e.into_field()).map_err(|e| pointer_err(path, pointer, e.to_string()))
}

impl ProblemSpec {
    pub fn read(path: &Path) -> Result<ProblemSpec> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        ProblemSpec::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<ProblemSpec> {
        let file: ProblemFile = from_json_str(text, &path.display().to_string())?;
        if let FaceSpec::Named(n) = &file.dirichlet.faces {
            if n != "all" {
                return Err(pointer_err(path, "/dirichlet/faces", format!("expected \"all\" or [[block, face], ...], found \"{n}\"")));
            }
        }
        let source = compile(path, "/source", &file.source)?;
        let value = compile(path, "/dirichlet/value", &file.dirichlet.value)?;
        let exact = file.exact.as_deref().map(|s| compile(path, "/exact", s)).transpose()?;
        Ok(ProblemSpec { path: path.to_path_buf(), file, source, value, exact })
    }

    /// The model path, resolved against the problem file's directory.
    pub fn model_path(&self) -> PathBuf {
        match self.path.parent() {
            Some(dir) if self.file.model.is_relative() => dir.join(&self.file.model),
            _ => self.file.model.clone(),
        }
    }

    pub fn approx(&self) -> ApproxConfig {
        ApproxConfig { degree_bump: self.file.approx_degree_bump, subdivisions: self.file.approx_subdivisions }
    }

    /// Applies the problem to `model` (refined by `refine_h`).
    pub fn instantiate(&self, model: &MultiBlockVolume) -> Result<HeatProblem> {
        let model = model.h_refine(self.file.refine_h)?;
        let faces = match &self.file.dirichlet.faces {
            FaceSpec::Named(_) => model.exterior_faces(),
            FaceSpec::List(list) => {
                for (i, f) in list.iter().enumerate() {
                    if f[0] >= model.blocks().len() || f[1] >= 6 || !model.is_exterior((f[0], f[1])) {
                        return Err(pointer_err(
                            &self.path,
                            &format!("/dirichlet/faces/{i}"),
                            format!("[{}, {}] is not an exterior face of the model", f[0], f[1]),
                        ));
                    }
                }
                list.iter().map(|f| (f[0], f[1])).collect()
            }
        };
        let mut p = HeatProblem::new(model, self.source.clone())
            .with_dirichlet(faces, self.value.clone())
            .with_approx(self.approx());
        if let Some(e) = &self.exact {
            p = p.with_exact(e.clone());
        }
        p.validate()?;
        Ok(p)
    }

    /// Reads the referenced model and instantiates the problem on it.
    pub fn load(&self) -> Result<HeatProblem> {
        self.instantiate(&read_model(&self.model_path())?)
    }
}
