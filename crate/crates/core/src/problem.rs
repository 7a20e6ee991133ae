//! Heat-conduction problem description.

use std::fmt;
use std::sync::Arc;

use crate::approx::ApproxConfig;
use crate::error::{Error, Result};
use crate::spline::multiblock::MultiBlockVolume;

/// Scalar field over physical space.
pub type Field = Arc<dyn Fn([f64; 3]) -> f64 + Send + Sync>;

pub fn field(f: impl Fn([f64; 3]) -> f64 + Send + Sync + 'static) -> Field {
    Arc::new(f)
}

pub fn constant(c: f64) -> Field {
    Arc::new(move |_| c)
}

/// `ΔT = g` in the domain, `T = T₀` on the selected faces.
///
/// The weak form used throughout is `∫∇T·∇ψ = −∫gψ`.
#[derive(Clone)]
pub struct HeatProblem {
    pub model: MultiBlockVolume,
    pub source: Field,
    /// `(block, face)` pairs; faces 0..6 are u0, u1, v0, v1, w0, w1.
    pub dirichlet_faces: Vec<(usize, usize)>,
    pub dirichlet_value: Field,
    pub exact: Option<Field>,
    pub approx: ApproxConfig,
}

impl fmt::Debug for HeatProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HeatProblem")
            .field("blocks", &self.model.blocks().len())
            .field("dofs", &self.model.num_dofs())
            .field("dirichlet_faces", &self.dirichlet_faces)
            .field("exact", &self.exact.is_some())
            .field("approx", &self.approx)
            .finish()
    }
}

impl HeatProblem {
    /// Homogeneous Dirichlet data on every exterior face.
    pub fn new(model: MultiBlockVolume, source: Field) -> HeatProblem {
        let dirichlet_faces = model.exterior_faces();
        HeatProblem {
            model,
            source,
            dirichlet_faces,
            dirichlet_value: constant(0.0),
            exact: None,
            approx: ApproxConfig::default(),
        }
    }

    pub fn with_dirichlet(mut self, faces: Vec<(usize, usize)>, value: Field) -> HeatProblem {
        self.dirichlet_faces = faces;
        self.dirichlet_value = value;
        self
    }

    pub fn with_exact(mut self, exact: Field) -> HeatProblem {
        self.exact = Some(exact);
        self
    }

    pub fn with_approx(mut self, approx: ApproxConfig) -> HeatProblem {
        self.approx = approx;
        self
    }

    /// Same problem on another model (e.g. after h-refinement).
    pub fn with_model(mut self, model: MultiBlockVolume) -> HeatProblem {
        self.model = model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let nb = self.model.blocks().len();
        for &(b, f) in &self.dirichlet_faces {
            if b >= nb || f >= 6 {
                return Err(Error::Domain(format!("face ({b}, {f}) does not exist on a {nb}-block model")));
            }
            if !self.model.is_exterior((b, f)) {
                return Err(Error::Domain(format!("face ({b}, {f}) is an interface, not a boundary face")));
            }
        }
        Ok(())
    }
}
