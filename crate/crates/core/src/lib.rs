//! Flow-driven Markov neural operator for pedestrian trajectory prediction.
//!
//! The pipeline estimates dense optical flow between consecutive frames
//! ([`farneback`]), advances that flow one frame at a time with a learned
//! spectral operator ([`mno`]), steps detected pedestrian centroids through the
//! predicted flow ([`trajectory`]) and feeds the predicted positions to a
//! velocity-obstacle planner ([`gvo`]). [`synth`] generates labelled crowd
//! scenes for training and verification, and [`io`] holds the file formats.

pub mod detect;
pub mod error;
pub mod farneback;
pub mod grid;
pub mod gvo;
pub mod io;
pub mod mno;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use grid::{FlowField, GrayFrame, Vec2};
