//! Arbitrage-free combinatorial prediction market engine.
//!
//! Securities are priced by a sum of LMSR cost functions, one per random
//! variable. Valid payoff vectors are described by a 0/1 integer program; the
//! market maker removes arbitrage either by trading along violated linear rows
//! ([`lcmm`]) or by Bregman projection onto the marginal polytope computed by
//! an adaptive fully-corrective Frank-Wolfe method ([`projection`]) that calls
//! an integer-programming oracle ([`oracle`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod cost;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod lcmm;
pub mod model;
pub mod oracle;
pub mod projection;
pub mod synth;

pub use error::{Error, Result};
