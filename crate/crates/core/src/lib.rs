//! Markov branching systems, their Markov Q-processes (the system conditioned
//! on never going extinct), and a Lotka-Nagaev type estimator of the
//! structural parameter β.
//!
//! * [`model`]: intensities, extinction root q, β, b, γ, Q-process densities,
//!   the Harris-Sevastyanov transform and the limit constant 𝒜.
//! * [`numerics`]: Φ(t;x), transition tables P_ij(t) and Q_ij(t), the Q-process
//!   generating function G_i(t;x), closed-form moments and limit constants.
//! * [`simulate`]: exact event-driven sampling of both processes.
//! * [`estimator`]: β̂(t), Monte Carlo studies and the exact variance series.

pub mod error;
pub mod estimator;
pub mod model;
pub mod numerics;
pub mod ode;
pub mod quad;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{build_model, model_from, BranchingModel, Criticality, IntensityVector, QProcessDensities};
pub use numerics::{MomentPair, TableOptions, TransitionTable};
