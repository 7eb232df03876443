//! Differentiable modal logic over Kripke models.
//!
//! Truth values live on a scalar reverse-mode tape ([`autodiff`]). A
//! [`KripkeModel`] pairs worlds with a fixed or learnable accessibility
//! relation and a valuation; [`modal_ops`] turns necessity and possibility
//! into smooth min/max aggregations and compiles axioms into contradiction
//! losses that [`trainer`] minimizes alongside a task loss.
//!
//! The [`scenario`] modules exercise the library on four finance problems:
//! wash-sale compliance, collusion discovery, stress-world solvency and
//! belief-versus-knowledge contract review.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod kripke;
pub mod modal_ops;
pub mod rng;
pub mod scenario;
pub mod trainer;

pub use autodiff::{AutodiffError, Gradients, Op, Tape, Var, TAU_FLOOR};
pub use error::{Error, Result};
pub use kripke::{Accessibility, KripkeModel, Valuation, Weight, World};
pub use modal_ops::{ModalAxiom, Modality};
pub use trainer::{BetaSchedule, Objective, OptimizerKind, TrainResult, TrainingConfig};
pub use gradcheck::GradcheckConfig;
pub use scenario::{
    collusion::CollusionConfig, portfolio::PortfolioConfig, safesigner::SafeSignerConfig,
    washsale::WashSaleConfig,
};
