//! Graph denoising by joint clustering and generative edge refinement.

pub mod autodiff;
pub mod graph;
pub mod noise;
pub mod rng;
pub mod synth;
pub mod tu;
pub mod cluster;
pub mod layers;
pub mod gvae;
pub mod trainer;
pub mod metrics;
pub mod spectral;
pub mod checkpoint;
