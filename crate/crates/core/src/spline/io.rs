//! JSON model files.
//!
//! ```json
//! {"degrees": [3,3,3],
//!  "blocks": [{"knots_u": [...], "knots_v": [...], "knots_w": [...],
//!              "control_points": [[x,y,z], ...]}],
//!  "interfaces": [{"a": [0,1], "b": [1,0], "orientation": 0}]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::knots::KnotVector;
use crate::spline::multiblock::{Interface, MultiBlockVolume};
use crate::spline::volume::BSplineVolume;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub degrees: [usize; 3],
    pub blocks: Vec<BlockFile>,
    #[serde(default)]
    pub interfaces: Vec<InterfaceFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFile {
    pub knots_u: Vec<f64>,
    pub knots_v: Vec<f64>,
    pub knots_w: Vec<f64>,
    pub control_points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceFile {
    pub a: [usize; 2],
    pub b: [usize; 2],
    pub orientation: u8,
}

fn json_err(path: &str, pointer: String, message: impl Into<String>) -> Error {
    Error::Json { path: path.into(), pointer, message: message.into() }
}

impl ModelFile {
    /// Validates and builds the model. `origin` names the source in errors.
    pub fn to_model(&self, origin: &str) -> Result<MultiBlockVolume> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, blk) in self.blocks.iter().enumerate() {
            let mut kvs = Vec::with_capacity(3);
            for (axis, (name, knots)) in
                [("knots_u", &blk.knots_u), ("knots_v", &blk.knots_v), ("knots_w", &blk.knots_w)].into_iter().enumerate()
            {
                let kv = KnotVector::new(self.degrees[axis], knots.clone())
                    .map_err(|e| json_err(origin, format!("/blocks/{b}/{name}"), e.to_string()))?;
                kvs.push(kv);
            }
            let kvs: [KnotVector; 3] = kvs.try_into().expect("three directions");
            let vol = BSplineVolume::new(kvs, blk.control_points.clone())
                .map_err(|e| json_err(origin, format!("/blocks/{b}/control_points"), e.to_string()))?;
            blocks.push(vol);
        }
        let interfaces = self
            .interfaces
            .iter()
            .map(|i| Interface { a: (i.a[0], i.a[1]), b: (i.b[0], i.b[1]), orientation: i.orientation })
            .collect();
        MultiBlockVolume::new(blocks, interfaces).map_err(|e| json_err(origin, "/interfaces".into(), e.to_string()))
    }

    pub fn from_model(model: &MultiBlockVolume) -> ModelFile {
        ModelFile {
            degrees: model.degrees(),
            blocks: model
                .blocks()
                .iter()
                .map(|b| BlockFile {
                    knots_u: b.knots()[0].knots().to_vec(),
                    knots_v: b.knots()[1].knots().to_vec(),
                    knots_w: b.knots()[2].knots().to_vec(),
                    control_points: b.control().to_vec(),
                })
                .collect(),
            interfaces: model
                .interfaces()
                .iter()
                .map(|i| InterfaceFile { a: [i.a.0, i.a.1], b: [i.b.0, i.b.1], orientation: i.orientation })
                .collect(),
        }
    }
}

/// JSON pointer for a serde path.
pub fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// Deserializes `text`, reporting failures with `origin` and a JSON pointer.
pub fn from_json_str<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        let inner = e.into_inner();
        json_err(origin, pointer, format!("line {} column {}: {inner}", inner.line(), inner.column()))
    })
}

pub fn parse_model(text: &str, origin: &str) -> Result<MultiBlockVolume> {
    let file: ModelFile = from_json_str(text, origin)?;
    file.to_model(origin)
}

pub fn read_model(path: &Path) -> Result<MultiBlockVolume> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_model(&text, &path.display().to_string())
}

pub fn model_to_json(model: &MultiBlockVolume) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(model)).expect("model serializes")
}

pub fn write_model(model: &MultiBlockVolume, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model)).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
