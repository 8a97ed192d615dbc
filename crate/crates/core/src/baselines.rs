//! Comparison estimators: independent Hutchinson per step, and DiffSum, which
//! estimates the first trace and then accumulates estimated differences.

use crate::dynamic_tree::StepEstimate;
use crate::error::{invalid, Result, TraceError};
use crate::oracle::{DifferenceOperator, LinearOperator, QueryLedger};
use crate::seed;
use crate::static_estimators::{hutchinson_labeled, ProbeKind, TraceEstimator};
use crate::stream::StreamSource;

pub const LABEL_PER_STEP: &str = "hutch.step";
pub const LABEL_DIFF_FIRST: &str = "diffsum.first";
pub const LABEL_DIFF_STEP: &str = "diffsum.diff";

/// Independent Hutchinson estimates with `probes_per_step` probes each.
pub fn per_step_hutchinson(
    stream: &StreamSource,
    probes_per_step: usize,
    kind: ProbeKind,
    master_seed: u64,
    ledger: &mut QueryLedger,
) -> Result<Vec<StepEstimate>> {
    if probes_per_step == 0 {
        return Err(invalid("probes_per_step", "at least one probe is required"));
    }
    let mut out = Vec::with_capacity(stream.len());
    for (i, op) in stream.steps().iter().enumerate() {
        let mut rng = seed::substream(master_seed, &[i as u64]);
        let est = hutchinson_labeled(op.as_ref(), probes_per_step, kind, &mut rng, ledger, LABEL_PER_STEP)?;
        out.push(StepEstimate {
            step: i + 1,
            value: est.value,
            queries_cumulative: ledger.total(),
            fresh: true,
        });
    }
    Ok(out)
}

/// Largest per-step probe count whose total cost fits `budget`.
pub fn per_step_probes(budget: u64, steps: usize, op_cost: u64) -> Result<usize> {
    let probes = budget / (steps as u64 * op_cost).max(1);
    if probes == 0 {
        return Err(TraceError::Budget {
            reason: format!("{budget} queries cannot give each of {steps} steps one probe at cost {op_cost}"),
        });
    }
    Ok(probes as usize)
}

/// DiffSum budget split: the first step gets `ceil(first_fraction * total)`
/// queries and the rest is shared equally by the difference estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetPolicy {
    pub total_budget: u64,
    pub first_fraction: f64,
}

impl BudgetPolicy {
    pub const DEFAULT_FIRST_FRACTION: f64 = 0.2;

    pub fn new(total_budget: u64, first_fraction: f64) -> Result<Self> {
        if total_budget == 0 {
            return Err(invalid("total_budget", "must be positive"));
        }
        if !(first_fraction > 0.0 && first_fraction <= 1.0) {
            return Err(invalid("first_fraction", format!("{first_fraction} is outside (0, 1]")));
        }
        Ok(Self {
            total_budget,
            first_fraction,
        })
    }

    pub fn first_allocation(&self) -> u64 {
        ((self.first_fraction * self.total_budget as f64) * (1.0 - 1e-12)).ceil() as u64
    }

    /// Probe counts per step for a stream of `steps` operators of per-apply
    /// cost `op_cost`. Leftover difference probes go to the earliest steps.
    pub fn probes(&self, steps: usize, op_cost: u64) -> Result<Vec<usize>> {
        if steps == 0 {
            return Err(TraceError::EmptyStream);
        }
        let short = |what: &str| TraceError::Budget {
            reason: format!("{} queries leave no probe for {what}", self.total_budget),
        };
        if steps == 1 {
            let p = (self.total_budget / op_cost) as usize;
            return if p == 0 { Err(short("the first step")) } else { Ok(vec![p]) };
        }
        let first = (self.first_allocation() / op_cost) as usize;
        if first == 0 {
            return Err(short("the first step"));
        }
        let rest = self.total_budget.saturating_sub(self.first_allocation());
        let diff_probes = (rest / (2 * op_cost)) as usize;
        let diffs = steps - 1;
        let (each, extra) = (diff_probes / diffs, diff_probes % diffs);
        if each == 0 {
            return Err(short("every difference"));
        }
        let mut out = Vec::with_capacity(steps);
        out.push(first);
        out.extend((0..diffs).map(|d| each + usize::from(d < extra)));
        Ok(out)
    }
}

/// DiffSum with Hutchinson probes allocated by `policy`.
pub fn diffsum(
    stream: &StreamSource,
    policy: &BudgetPolicy,
    kind: ProbeKind,
    master_seed: u64,
    ledger: &mut QueryLedger,
) -> Result<Vec<StepEstimate>> {
    let probes = policy.probes(stream.len(), stream.step(0).cost())?;
    telescope(stream, ledger, |i, op, ledger| {
        let mut rng = seed::substream(master_seed, &[i as u64]);
        let label = if i == 0 { LABEL_DIFF_FIRST } else { LABEL_DIFF_STEP };
        Ok(hutchinson_labeled(op, probes[i], kind, &mut rng, ledger, label)?.value)
    })
}

/// DiffSum with an arbitrary estimator on the first matrix and each difference.
pub fn diffsum_with_estimator(
    stream: &StreamSource,
    estimator: &dyn TraceEstimator,
    eps: f64,
    delta: f64,
    master_seed: u64,
    ledger: &mut QueryLedger,
) -> Result<Vec<StepEstimate>> {
    telescope(stream, ledger, |i, op, ledger| {
        let mut rng = seed::substream(master_seed, &[i as u64]);
        Ok(estimator.estimate(op, eps, delta, &mut rng, ledger)?.value)
    })
}

fn telescope(
    stream: &StreamSource,
    ledger: &mut QueryLedger,
    mut trace: impl FnMut(usize, &dyn LinearOperator, &mut QueryLedger) -> Result<f64>,
) -> Result<Vec<StepEstimate>> {
    let mut out: Vec<StepEstimate> = Vec::with_capacity(stream.len());
    let mut running = 0.0;
    for i in 0..stream.len() {
        running += if i == 0 {
            trace(0, stream.step(0).as_ref(), ledger)?
        } else {
            let diff = DifferenceOperator::new(stream.step(i).clone(), stream.step(i - 1).clone())?;
            trace(i, &diff, ledger)?
        };
        out.push(StepEstimate {
            step: i + 1,
            value: running,
            queries_cumulative: ledger.total(),
            fresh: true,
        });
    }
    Ok(out)
}
