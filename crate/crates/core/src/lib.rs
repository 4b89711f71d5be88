//! Data-regularized actor-critic: environments, augmentations, PPO with
//! augmentation regularizers, and automatic augmentation selection.
//!
//! The crate is `no_std` with `alloc`; the default `std` feature only
//! enables runtime SIMD detection in the matrix kernels.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod augment;
pub mod categorical;
pub mod config;
pub mod drac;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod ppo;
pub mod scalar;
pub mod select;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{Dual, Scalar};
