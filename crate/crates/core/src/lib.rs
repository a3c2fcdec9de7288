//! Single-image 3D reconstruction with hierarchical (parent + view-conditioned
//! child) Gaussian splats.
//!
//! The crate is `no_std` + `alloc`: it owns the math (tensors and reverse-mode
//! differentiation, the splatting rasterizer, the networks, the optimizer and
//! the metrics) and leaves files, command lines and clocks to the `hsplat`
//! companion crate.

#![no_std]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

pub mod linalg;
pub mod dataset;
pub mod encoder;
pub mod evaluate;
pub mod hierarchy;
pub mod numerics;
pub mod rasterizer;
pub mod scene;
pub mod trainer;
pub mod verify;
