//! The causal side: DAGs, the structural model for access, selection, and
//! measured dependence between variables.

mod dag;
mod dependence;
mod model;

pub use dag::{builtin_dag, CausalDag, DagError, DagSpec, Node, BuiltinDag};
pub use dependence::{dependence_report, DependenceError, DependenceReport, Variable};
pub use model::{
    analytic_selected_mi, apply_selection, expected_selection_rate, posterior_female_given_w,
    sample_population, sample_population_with, selected_joint, write_samples_csv, Gender,
    PopulationSample, ScmError, ScmParams,
};
