//! Stability-constrained unit commitment: instance format, model builder,
//! conic interior point relaxation solver and branch-and-bound.

pub mod build;
pub mod conic;
pub mod instance;
pub mod milp;
pub mod schedule;

pub use build::{build_uc, StabilityMode, UcProblem, VarIndex};
pub use conic::{solve_conic, ConeSpec, ConicProblem, ConicSolution, ConicStatus, IpmOptions};
pub use instance::{FixedSource, Scenario, SourceBinding, UcInstance, Unit, UnitType};
pub use milp::{branch_and_bound, solve_by_enumeration, solve_relaxation, Affine, BnbOptions, BnbResult, BnbStatus, MixedConicModel};
pub use schedule::{
    evaluate_schedule, solve_uc, solve_uc_with, Schedule, ScheduleEvaluation, ScheduleStatus, ScheduleSummary, ScenarioDispatch,
    StepCheck, UcSolver,
};
