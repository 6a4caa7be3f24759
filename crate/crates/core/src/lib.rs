//! Robust consensus over keypoint predictions made from many object
//! proposals, with part-box construction, localization metrics,
//! training-target preparation and a synthetic predictor.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases. File I/O, the
//! simulator and the command pipeline work in `f64`.

pub mod annotation;
pub mod consensus;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod partbox;
pub mod pipeline;
pub mod scalar;
pub mod simulator;
pub mod training_prep;

pub use annotation::{ImageId, Keypoint};
pub use consensus::{Bandwidth, InlierLocation, Method};
pub use error::{Error, FormatError, Result};
pub use metrics::{AeUnits, Tally};
pub use scalar::Scalar;

pub type Point64 = geometry::Point<f64>;
pub type Point32 = geometry::Point<f32>;
pub type NormalizedPoint64 = geometry::NormalizedPoint<f64>;
pub type NormalizedPoint32 = geometry::NormalizedPoint<f32>;
pub type Rect64 = geometry::Rect<f64>;
pub type Rect32 = geometry::Rect<f32>;
pub type ScoredBox64 = partbox::ScoredBox<f64>;
pub type KeypointObservation64 = consensus::KeypointObservation<f64>;
pub type KeypointObservation32 = consensus::KeypointObservation<f32>;
pub type ConsensusConfig64 = consensus::ConsensusConfig<f64>;
pub type ConsensusConfig32 = consensus::ConsensusConfig<f32>;
pub type ConsensusResult64 = consensus::ConsensusResult<f64>;
pub type ConsensusResult32 = consensus::ConsensusResult<f32>;
pub type ImageAnnotation64 = annotation::ImageAnnotation<f64>;
pub type PredictionSet64 = annotation::PredictionSet<f64>;
pub type AnnotatorStd64 = metrics::AnnotatorStd<f64>;
pub type TrainingExample64 = training_prep::TrainingExample<f64>;
