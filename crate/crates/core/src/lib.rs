//! Geometry and detection utilities for 360-degree (equirectangular) images.
//!
//! * [`geom`]: spherical boxes, the box-local rotation, gnomonic projection.
//! * [`iou`]: fast interval spherical IoU and the integral oracle.
//! * [`anchors`]: anchor grids, regression targets, matching and the loss.
//! * [`offsets`]: per-latitude 3x3 spherical-convolution sampling offsets.
//! * [`resample`]: tangent-plane patch extraction and compositing.
//! * [`eval`]: NMS, the two-stage selection pipeline and mAP.
//! * [`synth`]: synthetic dataset generation.

pub mod anchors;
pub mod error;
pub mod eval;
pub mod geom;
pub mod iou;
pub mod offsets;
pub mod raster;
pub mod resample;
pub mod synth;

pub use error::{Error, Result};
pub use geom::{ErpGeometry, LatLon, SphericalBox, TangentCoord};
