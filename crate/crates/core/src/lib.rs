//! Factor-augmented panel regression under heterogeneous effects.
//!
//! * [`panel`]: dense balanced panels, datasets and seeded streams.
//! * [`linalg`]: truncated SVD, low-rank approximation and small dense solves.
//! * [`estimators`]: pooled OLS, fixed effects, CCE, principal components,
//!   interactive fixed effects and two-way grouped fixed effects.
//! * [`dgp`]: location-scale factor simulators and oracle estimands.
//! * [`targeted`]: conditional second-moment fields, the weighted-effect
//!   plug-in and multi-regressor contamination weights.
//! * [`mc`]: the Monte Carlo harness and its CSV artifacts.

pub mod dgp;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod mc;
pub mod panel;
pub mod targeted;

pub use error::{Error, Result};
pub use panel::{PanelDataset, PanelMatrix, RandomStream, SeedSpec, StreamLane};
