//! Non-adaptive adversarial face generation on hyperspherical feature spaces.
//!
//! The crate covers subsphere geometry ([`sphere`]), PCA and pseudo-inverse
//! projections ([`subspace`]), a synthetic face-recognition world
//! ([`world`]), confidence calibration ([`calibration`]), the white-box,
//! black-box and transfer attacks ([`attack`]), the orthogonal face set
//! generator ([`ofs`]) and attack metrics ([`metrics`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod calibration;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod ofs;
pub mod rng;
pub mod sphere;
pub mod stats;
pub mod subspace;
pub mod world;

pub use error::{Error, Result};
pub use sphere::{SubsphereBasis, UnitVector};
