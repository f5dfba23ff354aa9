//! Snap-angle prediction for 360° panoramas.
//!
//! The crate renders equirectangular panoramas to cubemaps at arbitrary
//! azimuth rotations, scores how much foreground straddles the lateral cube
//! edges, and searches for the rotation (the *snap angle*) that minimizes that
//! disruption. Search comes in several flavors: an exhaustive grid scan, the
//! budgeted heuristics (random, uniform, coarse-to-fine, saliency window), and
//! a small recurrent policy trained from scratch with REINFORCE.
//!
//! Module map:
//!
//! - [`geometry`]: spherical coordinates, face rays, equirect sampling and
//!   cubemap projection.
//! - [`objective`]: the boundary-band disruption score and synthetic scenes.
//! - [`search`]: budgeted search policies over an [`geometry::AngleGrid`].
//! - [`policy`]: the learned predictor, its manual backprop and training.
//! - [`harness`]: datasets, budget curves, difficulty gains and the object
//!   preservation metric.
//! - [`io`]: PNG and raw-float file formats.
//! - [`cli`]: the `snapcube` command line.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod objective;
pub mod policy;
pub mod search;

pub use error::{Error, Result};
pub use geometry::{AngleGrid, Cubemap, EquirectImage, EquirectMask, Face, SnapAngle, SphericalCoord};
pub use objective::{DenominatorMode, ForegroundCubemap, ObjectiveConfig};
pub use search::{Scorer, SearchResult};
