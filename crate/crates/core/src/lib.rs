//! Drum transcription toolkit.
//!
//! The processing chain mirrors a classic activation-function ADT system:
//!
//! 1. [`dsp`] turns 44.1 kHz audio into 168-wide log-filterbank frames.
//! 2. [`model`] runs a CNN or CRNN (built on the [`nn`] kernel) to produce
//!    per-class onset activations.
//! 3. [`peakpick`] converts activations into discrete onsets.
//! 4. [`eval`] scores onsets with mean/sum F-measures and pseudo-confusions.
//!
//! [`smf`] and [`datafactory`] build synthetic training corpora from MIDI
//! files, and [`pipeline`] ties everything into dataset builds and
//! cross-validated experiments.

pub mod annotation;
pub mod audio;
pub mod datafactory;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod label;
pub mod model;
pub mod nn;
pub mod peakpick;
pub mod pipeline;
pub mod smf;

pub use annotation::{Onset, OnsetAnnotation};
pub use audio::AudioBuffer;
pub use datafactory::schema::{LabelSchema, SchemaName};
pub use dsp::{FeatureConfig, FeatureExtractor, FeatureMatrix, FilterbankMatrix};
pub use error::{Error, Result};
pub use label::Label;
pub use model::{ModelKind, Network, NetworkSpec, TrainConfig, TrainHistory};
pub use peakpick::{ActivationMatrix, PeakParams};
pub use smf::MidiSong;
