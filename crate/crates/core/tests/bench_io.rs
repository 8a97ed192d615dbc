use std::sync::Arc;

use dyntrace::bench::{
    graph_to_stream, read_graph_file, read_sequence_file, run_experiment, EstimatorKind, ExperimentConfig, GraphStream,
    Regime, Sequence, SyntheticConfig, Workload,
};
use dyntrace::bench::io::{write_graph_file, write_sequence_file};
use dyntrace::oracle::{exact_trace, DenseSymmetricOperator};

#[test]
fn sequence_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seq.txt");
    let seq = Sequence {
        matrices: vec![
            DenseSymmetricOperator::from_rows(&[vec![1.0, 0.5, 0.0], vec![0.5, 2.0, 0.1], vec![0.0, 0.1, 3.0]]).unwrap(),
            DenseSymmetricOperator::from_rows(&[vec![1.5, 0.5, 0.0], vec![0.5, 2.0, 0.1], vec![0.0, 0.1, 2.5]]).unwrap(),
        ],
    };
    write_sequence_file(&path, &seq).unwrap();
    let back = read_sequence_file(&path).unwrap();
    assert_eq!(back.dim(), 3);
    let traces: Vec<f64> = back.matrices.iter().map(exact_trace).collect();
    assert_eq!(traces, vec![6.0, 6.0]);
    assert_eq!(back.matrices[1].matrix(), seq.matrices[1].matrix());
}

#[test]
fn sequence_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    std::fs::write(&path, "DYNTRACE-SEQ 1\nn 2 steps 1\nMATRIX 0\n1 0\n0 x\n").unwrap();
    let msg = read_sequence_file(&path).unwrap_err().to_string();
    assert!(msg.contains("bad.txt") && msg.contains('5'), "{msg}");
}

#[test]
fn k4_graph_file_and_clique_insertion() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k4.txt");
    let g = GraphStream {
        node_count: 5,
        initial_edges: vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        events: vec![vec![0, 1, 4]],
    };
    write_graph_file(&path, &g).unwrap();
    let back = read_graph_file(&path).unwrap();
    assert_eq!(back, g);
    assert_eq!(back.initial_edges.len(), 6);
    let series = graph_to_stream(&back).unwrap();
    assert_eq!(series.triangles, vec![4, 5]);
    assert_eq!(series.true_traces(), vec![24.0, 30.0]);
}

#[test]
fn matched_budgets_are_respected() {
    let workload = Workload::Synthetic(SyntheticConfig::new(40, 16, Regime::Low, 0));
    let config = ExperimentConfig {
        budget: Some(3000),
        ..ExperimentConfig::new(0.05, 0.1)
    };
    let kinds = [EstimatorKind::Tree, EstimatorKind::Hutch, EstimatorKind::DiffSum];
    let out = run_experiment(&workload, &config, &kinds, 2, 9).unwrap();
    for s in &out.summaries {
        for &q in &s.queries {
            assert!(q <= 3000, "{} used {q}", s.estimator);
        }
    }
}

#[test]
fn fixed_graph_workload_reuses_the_stream() {
    let g = GraphStream {
        node_count: 6,
        initial_edges: vec![(0, 1), (1, 2)],
        events: vec![vec![0, 2], vec![3, 4, 5]],
    };
    let workload = Workload::Graph(Arc::new(g));
    let out = run_experiment(&workload, &ExperimentConfig::new(1.0, 0.1), &[EstimatorKind::Exact], 2, 1).unwrap();
    let truth: Vec<f64> = out.records.iter().map(|r| r.true_value).collect();
    assert_eq!(truth, vec![0.0, 6.0, 12.0, 0.0, 6.0, 12.0]);
    assert!(out.records.iter().all(|r| r.abs_error < 1e-9));
}
