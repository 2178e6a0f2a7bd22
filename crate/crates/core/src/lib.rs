//! Point-goal navigation on occupancy grids with a learned "ask for help" gate.
//!
//! Everything in this crate is pure computation over owned values: the grid
//! simulator, dense networks with hand-written backpropagation, the scripted and
//! learned navigation agents, the help policy, the shortest-path expert, the
//! behavioral-cloning and PPO trainers, metrics and episode traces. File formats,
//! the command line and the operator session server live in the `helpnav` crate.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod agent;
pub mod env;
pub mod error;
pub mod expert;
pub mod help;
pub mod learn;
pub mod math;
pub mod metrics;
pub mod nnet;
pub mod runner;
pub mod suite;
pub mod trace;

pub use error::Error;

/// Deterministic generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate-wide generator from a seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
