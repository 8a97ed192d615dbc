//! Experiment harness: stream generators, file formats and the comparison
//! runner.

pub mod experiment;
pub mod graph;
pub mod io;
pub mod synthetic;

pub use experiment::{
    run_experiment, write_records, EstimatorKind, EstimatorSummary, ExperimentConfig, ExperimentOutput, RunRecord,
    TrialStream, Workload,
};
pub use graph::{graph_to_stream, random_graph_stream, GraphStream};
pub use io::{read_graph_file, read_sequence_file, Sequence};
pub use synthetic::{gen_perturbation, gen_synthetic_base, synthetic_stream, Regime, SyntheticConfig};
