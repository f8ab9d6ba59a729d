//! Body-centric human–scene interaction engine.

pub mod geometry;
pub mod rng;
pub mod sdf;
pub mod interaction;
pub mod meshnet;
pub mod autodiff;
pub mod cvae;
pub mod synthgen;
pub mod placement;
pub mod metrics;
pub mod pipeline;
