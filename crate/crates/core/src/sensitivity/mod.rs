//! Sensitivities of the fitted surrogate to the uncertain source
//! reactances, and Delta-method moments of its coefficients.

pub mod index;
pub mod kkt;
pub mod moments;
pub mod pipeline;

pub use index::{dg_dp, grad_f, index_central_difference, index_sensitivity, IndexDerivative, IndexSensitivity};
pub use kkt::{assemble_kkt_perturbation, dk_dg, retrain_column, CoefficientJacobian, JacobianMethod, KktPerturbation};
pub use moments::{
    analytic_moments, hessian_diag_f, pipeline_gradient, propagate_moments, HessianDiag, MeanCorrection, MomentEstimate,
    UncertainParameterSpec,
};
pub use pipeline::{CoefficientMap, MapValue, Pipeline, QuadraticMap};
