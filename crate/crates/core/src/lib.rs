//! Identification of hidden linear subspaces and their dynamics from
//! high-dimensional observations.
//!
//! The observation model is `x_t = V h_t + z_t` with an orthonormal
//! `V`, latent linear dynamics `h_{t+1} = A_bar h_t + B_bar u_t`, and a
//! distractor `z_t` living in the orthogonal complement of `col(V)`.
//! Fitting a structured multi-step inverse-dynamics model (predicting
//! each control from the observations around it) recovers `col(V)` and
//! the lifted dynamics exactly in the noiseless finite-sample regime,
//! and stably under observation noise.
//!
//! Top-level layout:
//!
//! - [`model`]: system and dataset types.
//! - [`simulator`]: seeded data generation and distractor realization.
//! - [`linear`]: the exact multi-step inverse-model solver.
//! - [`noisy`]: the one-step noisy variant and its error split.
//! - [`nonlinear`]: feature-map lifting and rank-saturation scans.
//! - [`diagnostics`]: canonical correlations, controllability, and
//!   subspace-distance checks.
//! - [`numerics`]: SVD-based least squares, pseudoinverses, and
//!   principal angles.
//! - [`rng`]: deterministic stream derivation.

pub mod diagnostics;
pub mod linear;
pub mod model;
pub mod noisy;
pub mod nonlinear;
pub mod numerics;
pub mod rng;
pub mod simulator;

pub use diagnostics::{
    assumption1_estimate, check_v_controllability, empirical_cca, subspace_distance,
    Assumption1Report, CcaEstimate, ControllabilityCheck, DiagnosticsError, SubspaceDistance,
};
pub use linear::{
    analytic_solution, assemble_design, fit_inverse_model, recover_subspace, solve_design,
    verify_solution, DesignSystem, SolverError, VerificationReport,
};
pub use model::{
    DatasetMetadata, DistractorSpec, HiddenSubspaceSystem, InverseModelSolution, ModelError,
    SubspaceEstimate, TrajectoryDataset,
};
pub use noisy::{
    fit_noisy, fit_noisy_trial, sample_noisy_one_step, split_solution, verify_noisy_bound,
    NoisyBoundReport, NoisySample, NoisySplit,
};
pub use nonlinear::{
    evaluate_fit, extract_projection, fit_latent_dynamics, fit_nonlinear, rank_saturation_scan,
    FeatureMap, LatentDynamics, NonlinearFit, OptimizerConfig, ProjectionExtract,
    RankSaturationScan,
};
pub use numerics::{
    largest_principal_angle, min_norm_lstsq, min_norm_lstsq_tol, orth_basis, pinv,
    principal_angles, spectral_norm, two_stage_min_norm, two_stage_min_norm_tol, LstsqResult,
    NumericsError, DEFAULT_RANK_TOL,
};
pub use simulator::{
    monomial_exponents, random_system, random_warped_system, rollout, sample_batch,
    sample_warped_batch, GeneratedSystem, GenerationConfig, SimError, WarpedSystem,
};
