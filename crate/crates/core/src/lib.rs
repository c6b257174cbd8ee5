//! Event-camera photon-noise toolkit: forward noise-event model,
//! synthetic data generation, model calibration, and static-scene
//! reconstruction from two-polarity noise-event counts.

pub mod calibration;
pub mod error;
pub mod event;
pub mod image;
pub mod math;
pub mod metrics;
pub mod noise_model;
pub mod optim;
pub mod pgm;
pub mod reconstruction;
pub mod stream_io;
pub mod stream_ops;
pub mod synthesis;

pub use error::{Error, Result};
pub use event::{Event, EventStream, Polarity};
pub use image::{CountImage, ImageUnit, IntensityImage};
pub use noise_model::{CameraParams, DispersionModel, DispersionTable};
