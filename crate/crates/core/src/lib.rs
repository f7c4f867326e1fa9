//! Graph autoencoders with residual modules for link prediction.
//!
//! The crate implements four encoder architectures over graph
//! convolutional layers — GAE, VGAE, and their residual counterparts
//! ResGAE and ResVGAE — together with everything needed to benchmark them
//! on citation networks at desk scale: a reverse-mode tensor engine, the
//! self-loop symmetric graph normalization, edge-split protocol, Adam
//! training loop, and exact AUC/AP metrics.
//!
//! Randomness is always drawn from the seedable, portable ChaCha8
//! generator (`rand_chacha::ChaCha8Rng`), so identical seeds reproduce
//! identical runs within one build. With the default `parallel` feature
//! the hot kernels and multi-run training use rayon; disabling it falls
//! back to the sequential kernels with bit-identical results.

pub mod graph;
pub mod metrics;
pub mod models;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;
