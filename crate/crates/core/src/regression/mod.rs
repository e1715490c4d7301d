//! Boundary-aware linear surrogate of the stability index.

pub mod dataset;
pub mod decision;
pub mod fit;
pub mod qp;

pub use dataset::{commitment_combinations, generate_dataset, wind_levels, Dataset, EnumerationPolicy, TrainingSample};
pub use decision::{AugmentedDecision, DecisionLayout};
pub use fit::{
    choose_nu, fit_hard, fit_smooth, fit_smooth_pruned, fit_smooth_with, gaussian_weight, partition, sigmoid_gamma,
    CoefficientFit, FitConfig, NuChoice, RegionPartition, RowFamily, RowOrigin, SmoothRegressionConfig, Switching,
};
pub use qp::{solve_qp, QpOptions, QpProblem, QpSolution};
