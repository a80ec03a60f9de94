//! Coarse-to-fine morphological segmentation of pulmonary nodules in ROI
//! crops.
//!
//! Stages, in order: lung-wall removal by chord coverage ([`pleural`]),
//! candidate selection ([`coarse`]), dividing-line noise reduction and
//! self-adapting box correction ([`fine`]), and slice-to-slice box
//! propagation ([`volume`]). [`phantom`] renders synthetic cases with exact
//! ground truth and [`metrics`] scores predictions.

pub mod coarse;
pub mod config;
pub mod error;
pub mod fine;
pub mod io;
pub mod metrics;
pub mod morphology;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod pleural;
pub mod raster;
pub mod volume;

pub use config::{CoarseMethod, PipelineConfig};
pub use error::{Error, Result};
pub use raster::{BBox, BinaryMask, GrayImage, Point};
