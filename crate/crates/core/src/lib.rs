//! Numerics for the critical two-dimensional stochastic heat flow: Dickman
//! special functions, exact moment formulas, a Feynman-Kac Monte Carlo
//! simulator for the mollified equation at critical coupling, and the
//! space-time tube construction behind the lower-tail certificate.

pub mod certificate;
pub mod error;
pub mod fk;
pub mod moments;
pub mod noise;
pub mod plane;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod stats;
pub mod tubes;

pub use error::{Error, Result};
