//! Forward imitation learning from observations on explicit finite-horizon
//! MDPs: exact dynamic programming, discriminator classes with best-response
//! oracles, a min-max game solver and the training drivers built on it.

// Negated float comparisons reject NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod discriminators;
pub mod environments;
pub mod error;
pub mod experiments;
pub mod fail;
pub mod game;
pub mod lp;
pub mod mdp;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
pub use rng::Seed;
