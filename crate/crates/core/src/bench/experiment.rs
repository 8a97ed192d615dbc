//! Runs several estimators on identical per-trial streams and records the
//! error of every estimate.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use super::graph::{cube_spectra, graph_to_stream, random_graph_stream, GraphStream};
use super::io::{Sequence, CSV_HEADER};
use super::synthetic::{synthetic_stream, SyntheticConfig, ALPHA_SAFETY};
use crate::baselines::{diffsum, per_step_hutchinson, per_step_probes, BudgetPolicy};
use crate::dynamic_tree::{calibrate_eps, dynamic_estimate, plan_cost, DriftParams, StepEstimate, TreeConfig, TreeMode};
use crate::error::{check_schatten_p, check_unit_open, invalid, Result, TraceError};
use crate::linalg::{schatten_norm_of_spectrum, schatten_norm_symmetric, symmetric_eigenvalues};
use crate::oracle::{exact_trace, probe_trace_exact, QueryLedger};
use crate::seed;
use crate::static_estimators::{HutchPlusPlus, ProbeKind};
use crate::stream::StreamSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Tree,
    Hutch,
    DiffSum,
    Exact,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Tree => "tree",
            EstimatorKind::Hutch => "hutch",
            EstimatorKind::DiffSum => "diffsum",
            EstimatorKind::Exact => "exact",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tree" => Ok(EstimatorKind::Tree),
            "hutch" => Ok(EstimatorKind::Hutch),
            "diffsum" => Ok(EstimatorKind::DiffSum),
            "exact" => Ok(EstimatorKind::Exact),
            other => Err(format!("unknown estimator `{other}` (expected tree, hutch, diffsum or exact)")),
        }
    }
}

/// One trial's stream with everything needed to score and tune estimators.
#[derive(Debug, Clone)]
pub struct TrialStream {
    pub stream: StreamSource,
    pub true_values: Vec<f64>,
    /// Declared drift between consecutive matrices, in absolute units.
    pub alpha: f64,
    /// Bound on the norm of every matrix (partitioned mode).
    pub norm_bound: f64,
    /// Norm of the first matrix (flat mode).
    pub first_norm: f64,
}

impl TrialStream {
    fn declared_bound(&self, mode: TreeMode) -> f64 {
        match mode {
            TreeMode::Partitioned => self.norm_bound,
            TreeMode::Flat => self.first_norm,
        }
    }
}

/// Where a trial's stream comes from.
#[derive(Debug, Clone)]
pub enum Workload {
    Synthetic(SyntheticConfig),
    /// A random graph with clique insertions, regenerated every trial.
    RandomGraph { nodes: usize, edge_prob: f64, steps: usize },
    /// A fixed graph stream shared by all trials.
    Graph(Arc<GraphStream>),
    /// A fixed matrix sequence shared by all trials.
    Sequence(Arc<Sequence>),
}

impl Workload {
    /// Builds the stream for a trial. `alpha` overrides the measured drift.
    pub fn trial(&self, stream_seed: u64, p: f64, alpha: Option<f64>) -> Result<TrialStream> {
        let (stream, true_values, measured, first_norm, norm_bound) = match self {
            Workload::Synthetic(cfg) => {
                let s = synthetic_stream(&SyntheticConfig { seed: stream_seed, ..*cfg })?;
                let measured = s.measured_alpha(p);
                let (first, bound) = (s.first_norm(p), s.norm_bound(p));
                (s.stream, s.true_traces, measured, first, bound)
            }
            Workload::RandomGraph { nodes, edge_prob, steps } => {
                let mut rng = seed::substream(stream_seed, &[0]);
                let g = random_graph_stream(*nodes, *edge_prob, *steps, &mut rng)?;
                graph_trial(&g, p)?
            }
            Workload::Graph(g) => graph_trial(g, p)?,
            Workload::Sequence(seq) => {
                let truth: Vec<f64> = seq.matrices.iter().map(exact_trace).collect();
                let spectra: Vec<Vec<f64>> = seq.matrices.iter().map(|m| symmetric_eigenvalues(m.matrix())).collect();
                let step_norms: Vec<f64> = seq
                    .matrices
                    .windows(2)
                    .map(|w| schatten_norm_symmetric(&(w[1].matrix() - w[0].matrix()), p))
                    .collect();
                let largest = spectra
                    .iter()
                    .map(|ev| schatten_norm_of_spectrum(ev, p))
                    .fold(0.0, f64::max);
                let first = schatten_norm_of_spectrum(&spectra[0], p);
                let measured = ALPHA_SAFETY * step_norms.iter().copied().fold(0.0, f64::max);
                (seq.to_stream()?, truth, measured, first, largest)
            }
        };
        let alpha = alpha.unwrap_or(measured);
        // A constant stream has no drift; any small positive value is valid.
        let alpha = if alpha > 0.0 { alpha } else { 1e-12 * norm_bound.max(1.0) };
        Ok(TrialStream {
            stream,
            true_values,
            alpha,
            norm_bound: norm_bound.max(alpha * 2.0).max(f64::MIN_POSITIVE),
            first_norm: first_norm.max(alpha * 2.0).max(f64::MIN_POSITIVE),
        })
    }
}

fn graph_trial(g: &GraphStream, p: f64) -> Result<(StreamSource, Vec<f64>, f64, f64, f64)> {
    let series = graph_to_stream(g)?;
    let spectra = cube_spectra(&series)?;
    let measured = ALPHA_SAFETY * spectra.step_norms(p).into_iter().fold(0.0, f64::max);
    let truth = series.true_traces();
    Ok((series.stream, truth, measured, spectra.first_norm(p), spectra.norm_bound(p)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    /// Target absolute error per step.
    pub eps: f64,
    pub delta: f64,
    pub p: f64,
    /// Overrides the measured drift.
    pub alpha: Option<f64>,
    /// Total query budget per estimator; `None` matches the tree's planned cost.
    pub budget: Option<u64>,
    pub tree: TreeConfig,
    pub probe: ProbeKind,
    pub first_fraction: f64,
}

impl ExperimentConfig {
    pub fn new(eps: f64, delta: f64) -> Self {
        Self {
            eps,
            delta,
            p: 1.0,
            alpha: None,
            budget: None,
            tree: TreeConfig::default(),
            probe: ProbeKind::Rademacher,
            first_fraction: BudgetPolicy::DEFAULT_FIRST_FRACTION,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(invalid("eps", format!("{} must be positive", self.eps)));
        }
        check_unit_open("delta", self.delta)?;
        check_schatten_p(self.p)?;
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(invalid("alpha", format!("{a} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub step: usize,
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub true_value: f64,
    pub abs_error: f64,
    /// `abs_error / max |true value|` over the trial, or `abs_error` when that
    /// maximum is 0.
    pub rel_error: f64,
    pub queries_cumulative: u64,
    pub trial: usize,
    pub trial_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    /// Mean absolute error over all steps and trials.
    pub mean_abs_error: f64,
    /// Mean absolute error over the last quarter of the steps.
    pub final_quartile_abs_error: f64,
    pub mean_rel_error: f64,
    /// Per-trial maximum relative error.
    pub max_rel_error: Vec<f64>,
    /// Per-trial total queries.
    pub queries: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<EstimatorSummary>,
}

impl ExperimentOutput {
    pub fn summary(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == kind)
    }
}

/// Per-trial budget and the tree parameters that fit it.
struct Tuning {
    budget: u64,
    drift: DriftParams,
}

fn tune(trial: &TrialStream, config: &ExperimentConfig, hpp: &HutchPlusPlus, with_tree: bool) -> Result<Tuning> {
    let bound = trial.declared_bound(config.tree.mode);
    let eps = config.eps.min(bound * (1.0 - 1e-9));
    let drift = DriftParams::with_norm_bound(trial.alpha, config.p, eps, config.delta, bound)?;
    let (m, n, cost) = (trial.stream.len(), trial.stream.dim(), trial.stream.step(0).cost());
    match config.budget {
        None => Ok(Tuning {
            budget: plan_cost(m, n, cost, &drift, &config.tree, hpp)?,
            drift,
        }),
        Some(budget) if with_tree => Ok(Tuning {
            budget,
            drift: calibrate_eps(budget, m, n, cost, &drift, &config.tree, hpp)?,
        }),
        Some(budget) => Ok(Tuning { budget, drift }),
    }
}

fn run_one(
    kind: EstimatorKind,
    trial: &TrialStream,
    tuning: &Tuning,
    config: &ExperimentConfig,
    hpp: &HutchPlusPlus,
    est_seed: u64,
) -> Result<Vec<StepEstimate>> {
    let mut ledger = QueryLedger::new();
    let s = &trial.stream;
    match kind {
        EstimatorKind::Tree => dynamic_estimate(s, &tuning.drift, &config.tree, hpp, est_seed, &mut ledger),
        EstimatorKind::Hutch => {
            let probes = per_step_probes(tuning.budget, s.len(), s.step(0).cost())?;
            per_step_hutchinson(s, probes, config.probe, est_seed, &mut ledger)
        }
        EstimatorKind::DiffSum => {
            let policy = BudgetPolicy::new(tuning.budget, config.first_fraction)?;
            diffsum(s, &policy, config.probe, est_seed, &mut ledger)
        }
        EstimatorKind::Exact => s
            .steps()
            .iter()
            .enumerate()
            .map(|(i, op)| {
                let value = probe_trace_exact(op.as_ref(), &mut ledger, "exact")?;
                Ok(StepEstimate {
                    step: i + 1,
                    value,
                    queries_cumulative: ledger.total(),
                    fresh: true,
                })
            })
            .collect(),
    }
}

/// Runs `estimators` for `trials` trials. Trial `t` uses the stream seed
/// `derive(master_seed, [t, 0])` shared by all estimators, and an independent
/// seed per estimator. Records are sorted by (estimator, trial, step).
pub fn run_experiment(
    workload: &Workload,
    config: &ExperimentConfig,
    estimators: &[EstimatorKind],
    trials: usize,
    master_seed: u64,
) -> Result<ExperimentOutput> {
    config.validate()?;
    if estimators.is_empty() {
        return Err(invalid("estimators", "at least one estimator is required"));
    }
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let hpp = HutchPlusPlus {
        probe: config.probe,
        ..HutchPlusPlus::new(config.p)?
    };
    // Fixed workloads give the same stream every trial; build it once.
    let fixed = match workload {
        Workload::Graph(_) | Workload::Sequence(_) => Some(workload.trial(0, config.p, config.alpha)?),
        _ => None,
    };
    let per_trial: Vec<Result<Vec<RunRecord>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = seed::derive(master_seed, &[t as u64]);
            let generated;
            let trial = match &fixed {
                Some(f) => f,
                None => {
                    generated = workload.trial(seed::derive(trial_seed, &[0]), config.p, config.alpha)?;
                    &generated
                }
            };
            let with_tree = estimators.contains(&EstimatorKind::Tree);
            let tuning = tune(trial, config, &hpp, with_tree).map_err(|e| labeled(EstimatorKind::Tree, e))?;
            let scale = trial.true_values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut records = Vec::new();
            for &kind in estimators {
                let est_seed = seed::derive(trial_seed, &[1, kind.tag()]);
                let out = run_one(kind, trial, &tuning, config, &hpp, est_seed).map_err(|e| labeled(kind, e))?;
                for (e, &truth) in out.iter().zip(&trial.true_values) {
                    let abs_error = (e.value - truth).abs();
                    records.push(RunRecord {
                        step: e.step,
                        estimator: kind,
                        estimate: e.value,
                        true_value: truth,
                        abs_error,
                        rel_error: if scale > 0.0 { abs_error / scale } else { abs_error },
                        queries_cumulative: e.queries_cumulative,
                        trial: t,
                        trial_seed,
                    });
                }
            }
            Ok(records)
        })
        .collect();
    let mut records = Vec::new();
    for r in per_trial {
        records.extend(r?);
    }
    records.sort_by_key(|r| (r.estimator, r.trial, r.step));
    let summaries = summarize(&records, estimators, trials);
    Ok(ExperimentOutput { records, summaries })
}

fn labeled(kind: EstimatorKind, e: TraceError) -> TraceError {
    TraceError::Estimator {
        label: kind.label().to_string(),
        source: Box::new(e),
    }
}

fn summarize(records: &[RunRecord], estimators: &[EstimatorKind], trials: usize) -> Vec<EstimatorSummary> {
    let mut kinds = estimators.to_vec();
    kinds.sort();
    kinds.dedup();
    kinds
        .into_iter()
        .map(|kind| {
            let rows: Vec<&RunRecord> = records.iter().filter(|r| r.estimator == kind).collect();
            let steps = rows.iter().map(|r| r.step).max().unwrap_or(0);
            let tail_start = steps - steps / 4;
            let tail: Vec<f64> = rows.iter().filter(|r| r.step > tail_start).map(|r| r.abs_error).collect();
            let mut max_rel_error = vec![0.0f64; trials];
            let mut queries = vec![0u64; trials];
            for r in &rows {
                max_rel_error[r.trial] = max_rel_error[r.trial].max(r.rel_error);
                queries[r.trial] = queries[r.trial].max(r.queries_cumulative);
            }
            EstimatorSummary {
                estimator: kind,
                mean_abs_error: mean(rows.iter().map(|r| r.abs_error)),
                final_quartile_abs_error: mean(tail.into_iter()),
                mean_rel_error: mean(rows.iter().map(|r| r.rel_error)),
                max_rel_error,
                queries,
            }
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Writes records as CSV in the order given.
pub fn write_records<W: Write>(records: &[RunRecord], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{:.15e},{:.15e},{:.15e},{:.15e},{},{}",
            r.step, r.estimator, r.estimate, r.true_value, r.abs_error, r.rel_error, r.queries_cumulative, r.trial_seed
        )?;
    }
    Ok(())
}
