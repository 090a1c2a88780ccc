//! Hedging under permanent price impact.
//!
//! Trades move the quoted price persistently: buying `delta` shares at price
//! `x` shifts it by `delta f(x)`. This crate implements the resulting market
//! dynamics and the super-hedging machinery built on them:
//!
//! - [`impact`]: the impact-curve flow `x(x, delta)`, liquidity cost, and
//!   inverse map, with the identities that make round trips costless;
//! - [`model`]: coefficient/claim registries and assumption validation;
//! - [`path`]: Euler-Maruyama simulation of the continuous trading dynamics
//!   with and without block orders;
//! - [`rebalance`]: discrete rebalancing and its `n^{-1}` mean-square
//!   convergence to the continuous limit;
//! - [`split`]: splitting block orders into short trading ramps and the
//!   `O(epsilon)` convergence back to the jump dynamics;
//! - [`pde`]: the quasi-linear super-hedging PDE solver, its terminal
//!   condition, and the change-of-variable cross-check solver;
//! - [`hedge`]: the verification hedging engine measuring replication error.

pub mod csvio;
pub mod error;
pub mod hedge;
pub mod impact;
pub mod interp;
pub mod model;
pub mod path;
pub mod pde;
pub mod rebalance;
pub mod rng;
pub mod split;
pub mod stats;

pub use error::{Error, Result};
