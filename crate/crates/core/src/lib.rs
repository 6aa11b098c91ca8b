//! Mesh-free neural solver for Poisson-type boundary-value problems.
//!
//! Trains sine-activated networks by minimizing Monte-Carlo residual losses
//! at randomly sampled interior and boundary points, optionally mapping
//! inputs through frozen Gaussian Fourier features, and refines solutions
//! with a recursive error-correction scheme that trains residual networks
//! against correction equations whose exact solution is the current error.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod jet;
pub mod linalg;
pub mod network;
pub mod problems;
pub mod sampling;
pub mod training;

pub use autodiff::{loss_param_gradient, LossEvaluator, ParameterGradient};
pub use error::{Result, SolverError};
pub use jet::{jet_affine, jet_cos, jet_sin, seed_jets, Jet};
pub use network::{
    apply_fourier, apply_fourier_jets, init_siren, sample_fourier_map, Activation,
    FourierConfig, FourierFeatureMap, Network, NetworkConfig,
};
pub use problems::{
    builtin_problem, boundary_target, residual_f0, residual_fk, residual_fk_recursive,
    AnalyticField, CorrectionStack, Domain, Nonlinearity, PdeProblem, ScalarField, StackEntry,
};
pub use sampling::{eval_grid, sample_boundary, sample_interior, Region, SampleBatch};
pub use training::{
    adam_step, minibatch_loss, run_error_correction, train_stage, AdamState, EpochLog,
    EvalContext, StageFailure, TrainConfig,
};
