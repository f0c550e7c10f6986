//! Deterministic laboratory core for input-attribution experiments on
//! in-context learning.
//!
//! The crate is organised around a small dense-tensor reverse-mode
//! autodiff engine ([`tape`]), a toy decoder-only transformer built on it
//! ([`model`]), generators for six synthetic poverty-of-stimulus tasks
//! ([`tasks`]), the attribution methods and baselines under study
//! ([`attribution`]), and the evaluation statistics ([`eval`]).
//!
//! Everything here is `no_std + alloc` and strictly sequential: identical
//! inputs and seeds produce bit-identical outputs. IO, file formats, and
//! the CLI live in the companion `eureka-lab` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attribution;
pub mod eval;
pub mod gradcheck;
mod math;
pub mod model;
pub mod tape;
pub mod tasks;
pub mod tensor;

pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
