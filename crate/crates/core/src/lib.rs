//! Desk-scale simulation of two stage-by-stage constructions from the theory of
//! strongly jump-traceable sets, together with the cost-function calculus they
//! rely on.
//!
//! * [`bitstr`]: binary strings, antichains and clopen sets.
//! * [`costfn`]: monotone cost approximations, markers, benignity, obedience.
//! * [`approx`]: Δ⁰₂ approximations, change sets and speed-ups.
//! * [`tracer`]: box layout, the functional Ψ and pluggable trace oracles.
//! * [`boxpromo`]: the box-promotion engine and its justification checks.
//! * [`synth`]: the cost-function synthesis engine and its charge audit.
//! * [`gen`]: seeded random instance generators for fuzzing.

#![forbid(unsafe_code)]

pub mod approx;
pub mod bitstr;
pub mod boxpromo;
pub mod costfn;
mod error;
pub mod gen;
pub mod rational;
pub mod synth;
pub mod tracer;

pub use error::{Error, Result};
pub use rational::Q;
