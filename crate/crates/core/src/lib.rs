//! A desk-scale laboratory for knowledge distillation with a known ground truth.
//!
//! An oracle model stands in for the true distribution, a teacher is fitted to
//! oracle samples, and a smaller student is distilled from the teacher. Because
//! the oracle is explicit, the student's distance to the truth (the golden
//! metric) can be tracked next to its distance to the teacher (the proxy
//! metric), which exposes teacher hacking.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod data;
pub mod divergences;
pub mod error;
pub mod experiment;
pub mod lm;
pub mod losses;
pub mod rng;
pub mod training;

pub use error::{LabError, Result};
