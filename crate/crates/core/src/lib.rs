//! Generalized-method-of-moments estimation for latent Dirichlet models over
//! mixed categorical, continuous and count data.
//!
//! Component mean parameters are recovered from second- (and optionally
//! third-) order cross moments with the Dirichlet memberships marginalised
//! out, by block-coordinate Newton–Raphson on a weighted least-squares
//! objective. The crate also ships the generative simulator and evaluation
//! tools used to check the estimator.

pub mod data;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod gmm;
pub mod layout;
pub mod moments;
pub mod params;
pub mod select;
pub mod simplex;
pub mod simulate;

pub use data::{encode_value, load_dataset, parse_schema, Column, Dataset, Encoded, Schema, VariableKind, VariableSpec};
pub use error::{MeldError, Result};
pub use estimator::{
    fit, fit_with_stats, gradient_block, init_params, objective, run_stage, update_block_q2, update_block_q3, BlockUpdate,
    ConvergenceScale, FitConfig, FitReport, MomentObjective, Retraction, StageReport, StoppingRule,
};
pub use eval::{align_components, ave_kl, marginal_frequency, param_mse, rank_variables_by_kl, Alignment, KlScore};
pub use gmm::{estimate_diag_s, stack_moment_vector, weights_from_s, WeightVector, Weights};
pub use layout::{MomentOrder, MomentVectorLayout};
pub use moments::{
    compute_stats, lambda_diagonals, population_mean, population_pair_moment, population_stats,
    population_triple_moment, DirichletPrior, LambdaDiagonals, MomentDump, MomentStats,
};
pub use params::{ModelParams, Phi};
pub use select::{fitness_index, sweep_k, Criterion, SelectionReport};
pub use simplex::project_to_simplex;
pub use simulate::{contaminate, presets, sample_dataset, sample_two_group_dataset, GenerativeSpec, SimulatedData};
