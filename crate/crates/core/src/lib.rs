//! Masked-autoencoder pretraining and visual prompt tuning of a small Vision
//! Transformer for distributed acoustic sensing (DAS) event recognition.
//!
//! The pipeline runs end to end on a CPU:
//!
//! * [`signal`] denoises multi-channel DAS series and renders them as images
//!   (spatiotemporal, GASF or STFT), then augments and patchifies them.
//! * [`synth`] generates labelled synthetic DAS scenarios on disk.
//! * [`nn`] is the ViT encoder with explicit backward passes.
//! * [`mae`] pretrains the encoder by masked-patch reconstruction.
//! * [`vpt`] and [`finetune`] adapt the frozen encoder with prompt vectors,
//!   or with full fine-tuning / linear probing as baselines.
//! * [`checkpoint`], [`config`], [`metrics`] and [`experiment`] form the
//!   command-line harness.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod finetune;
pub mod mae;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod signal;
pub mod synth;
pub mod vpt;

pub use error::{Error, Result};
