//! Core of evograd: a small language of backward-pass update equations, its
//! interpreter, a from-scratch MLP trainer whose hidden-layer signals come
//! from an equation, the evolutionary controller that searches over
//! equations, and deterministic benchmark tasks.
//!
//! The crate is `no_std` (with `alloc`); file IO, the worker pool and the CLI
//! live in the `evograd` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dsl;
pub mod evolution;
pub mod tensor;
pub mod task;
pub mod trainer;
