//! Stochastic models of relational content evolution.
//!
//! Insertions, deletions (including referential-integrity cascades) and
//! attribute modifications are modeled as nonhomogeneous compound Poisson
//! processes and continuous-time Markov chains. On top of those models the
//! crate offers parameter fitting from event logs, goodness-of-fit checks,
//! obsolescence/transcription cost evaluation for replica refresh schedules,
//! and a discrete-event simulator used as an independent oracle.

pub mod calendar;
pub mod intensity;
pub mod presets;
pub(crate) mod quad;

pub use intensity::{IntensityError, IntensityFunction, Segment};
pub mod markov;
pub mod stochastic;
pub mod evolution;
pub mod cost;
pub mod fitting;
pub mod policy;
pub mod simulator;
