//! B-spline volumes, knot vectors, Bézier extraction and multi-block models.

pub mod io;
pub mod knots;
pub mod multiblock;
pub mod volume;

pub use knots::{ExtractionOperator, KnotVector};
pub use multiblock::{Interface, MultiBlockVolume};
pub use volume::{BSplineVolume, BezierVolume, Point};
