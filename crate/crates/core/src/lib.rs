//! Frequency-aware feature pyramid detection, from scratch.
//!
//! This crate is the pure compute half of the project: a dense rank-4
//! tensor type with reverse-mode automatic differentiation, 2-D real
//! FFTs, the Fourier Unit spectral block, a miniature residual backbone
//! whose stage outputs carry spectral global context, a bilateral
//! spectral-aware feature pyramid, and a minimal anchor-based detection
//! head with losses, NMS, and mAP evaluation.
//!
//! Everything is `no_std + alloc` and deterministic: fixed summation
//! orders, an owned seeded RNG, and `libm` for transcendentals, so the
//! same seed produces bit-identical numbers on every platform.
//!
//! File formats, the CLI, and dataset generation live in the companion
//! `ffpf-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backbone;
pub mod detect;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod pyramid;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Axis, CoreError, CoreResult};
pub use scalar::Scalar;
pub use tape::{Mode, NodeId, Tape};
pub use tensor::{Parameter, Tensor};
