//! Point-supervised pseudo-mask generation: distance fields with epoch-driven
//! expansion, a pixel-adaptive refiner, random-walker point blots, and the
//! evaluation and simulation tooling around them.

pub mod blot;
pub mod components;
pub mod distance;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod io;
mod multigrid;
pub mod overlay;
pub mod pac;
pub mod pseudomask;
pub mod raster;
pub mod synthetic;
pub mod walker;

pub use error::{Error, Result};
pub use raster::{LabelMask, Point, PointSet, RasterImage, ScoreStack, IGNORE};
