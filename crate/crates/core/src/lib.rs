//! Peduncle attachment-point localization from wrist force/torque data.
//!
//! A grasped fruit is modeled as tethered to a fixed attachment point by an
//! ideal linear spring. Fitting the measured pull forces to that model over a
//! short tensioning motion recovers the attachment point.
//!
//! * [`geometry`] frames, rigid transforms, wrench mapping
//! * [`model`] spring force, fitting cost, tension constraints
//! * [`solver`] constrained fit with reseeding
//! * [`simulator`] synthetic pull trials with seeded noise and grasp compliance
//! * [`evaluation`] per-trial metrics, summary statistics, Welch comparison
//! * [`io`] trial/corpus files, [`batch`] corpus fitting and reports

pub mod batch;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod model;
pub mod qp;
pub mod simulator;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{RigidTransform, UnitQuaternion, Vec3, Wrench};
pub use model::{Label, SpringParams, Trial, TrialSample};
pub use solver::{fit, FitResult, SolverConfig};
