//! Tongue-image diagnostic pipeline: affine registration onto a reference
//! frame, five-region decomposition, per-region sigmoid feature networks,
//! composite-image fusion, mutual-information layer selection and SVM/CNN
//! classification with the usual binary diagnostic metrics.

pub mod classify;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod fusion;
pub mod image;
pub mod infotheory;
pub mod nnet;
pub mod pipeline;
pub mod regionizer;
pub mod registration;
pub mod rng;
pub mod synth;

pub use dataset::{BoundingQuad, Dataset, Label, LabeledSample, Point, ReferenceModel, Split};
pub use error::{Error, ExitClass, Result};
pub use image::{load_image, ImageTensor};
pub use rng::RngSeed;
