//! Data-generating process, closed-form bias terms and the replicated
//! simulation harness.

pub mod bias;
pub mod dgp;
pub mod experiment;
pub mod fixture;

pub use bias::{bias_lambda, decompose_group_group, BiasDecomposition, BiasError, GroupGroupDecomposition};
pub use dgp::{simulate_dataset, true_ate, Centering, DgpConfig, SimulationTruth};
pub use experiment::{run_experiment, Accumulator, ExperimentConfig, ExperimentResult, ResultRow, Scenario};
pub use fixture::make_ecls_fixture;
