//! Point-supervised oriented object detection toolkit.
//!
//! The deterministic parts of a point-to-rotated-box detector: synthetic
//! pattern overlays with exact box labels ([`pattern`]), transform
//! consistency losses with analytic gradients ([`losses`], [`transform`]),
//! score-based label assignment on fixed-size anchors ([`assign`]),
//! rotated-box geometry ([`geometry`]), DOTA tooling ([`dataset`]) and
//! rotated AP evaluation ([`eval`]).
//!
//! Boxes are `(x, y, w, h, theta)` in pixel coordinates with the origin at
//! the top-left and y pointing down; `theta` lies in `[-pi/2, pi/2)` and
//! measures the w-edge from the +x axis.
//!
//! ```
//! use p2rkit::geometry::{rotated_iou, RBox};
//!
//! let a = RBox::new(0.0, 0.0, 1.0, 1.0, 0.0);
//! let b = RBox::new(0.0, 0.0, 1.0, 1.0, std::f64::consts::FRAC_PI_4);
//! assert!((rotated_iou(&a, &b) - 2f64.sqrt() / 2.0).abs() < 1e-12);
//! ```

pub mod assign;
pub mod batch;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod pattern;
pub mod raster;
pub mod render;
pub mod transform;

pub use error::{Error, Result};
pub use geometry::{HBox, ImageSize, Point, RBox};
