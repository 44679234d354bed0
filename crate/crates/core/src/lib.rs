//! Robust-training laboratory.
//!
//! The crate hosts the full experiment stack: deterministic data generation,
//! desk-scale classifiers, adversarial attacks, training strategies
//! (natural, Gaussian augmentation, PGD adversarial training, progressive
//! augmentation), procedural corruptions with CE/mCE/RmCE scoring, and the
//! analysis instruments (Fourier sensitivity maps, gradient visualization,
//! empirical bound probes).
//!
//! Attack families, training strategies, and corruption kinds are each a
//! registry of trait objects selected by name at runtime.

pub mod analysis;
pub mod attacks;
pub mod config;
pub mod corruptions;
pub mod data;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod pgm;
pub mod rng;
pub mod train;
