//! IO half of the detector: synthetic dataset generation, PPM images,
//! line-delimited JSON annotations, the bit-exact checkpoint format, and
//! the command implementations behind the `ffpf` binary.

pub mod checkpoint;
pub mod commands;
pub mod data;
pub mod threads;
