//! Catheter view-guidance core: rigid-body math, catheter kinematics, the
//! synthetic cardiac phantom, fan-slice rendering, the selective-scan pose
//! regressor and the closed guidance loop.
//!
//! The crate is `no_std` (with `alloc`) so the numerical pieces can be reused
//! outside a hosted environment; file formats, the CLI and the session service
//! live in the `icepilot` crate.

#![no_std]
// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

mod error;

pub mod estimator;
pub mod eval;
pub mod fan;
pub mod guidance;
pub mod kinematics;
pub mod nn;
pub mod phantom;
pub mod se3;
pub mod ssm;

pub use error::{
    EstimatorError, EvalError, FanError, GuidanceError, KinematicsError, ModelError, PhantomError,
    Se3Error,
};

/// Folds several values into one seed (SplitMix64 finalizer per step).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x1CE9_11D7_5EED_0001;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}
