//! Diffusion-based domain extension for domain-generalized semantic segmentation.
pub mod adapt;
pub mod dataset;
pub mod diffusion;
pub mod eval;
pub mod label;
pub mod par;
pub mod prompt;
pub mod seed;
