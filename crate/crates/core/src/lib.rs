#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod controller;
pub mod doa;
pub mod error;
pub mod expr;
pub mod grid;
pub mod lyapunov;
pub mod ndd;
pub mod optimizer;
mod par;
pub mod plant;
pub mod sampler;
pub mod simulator;

pub use error::{Error, EvalError, ParseError, Result};
