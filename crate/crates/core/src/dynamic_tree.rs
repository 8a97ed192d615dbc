//! Dynamic trace estimation with grouped binary trees of difference traces.
//!
//! The stream is split into groups of `s` consecutive matrices (a power of
//! two). Inside a group, `t0` estimates the trace of the first matrix and node
//! `(l, k)` estimates `tr(A_{k 2^l} - A_{(k-1) 2^l})`. The trace at offset `j`
//! is `t0` plus one node per set bit of `j`. A difference spanning `2^l` steps
//! has Schatten norm at most `2^l alpha`, so deeper nodes get proportionally
//! looser relative tolerances and the absolute error per node stays flat.
//!
//! All tolerances are taken relative to `norm_bound`, a declared bound on the
//! Schatten-p norm of the matrices (1 in the normalized setting).

use rayon::prelude::*;

use crate::error::{check_schatten_p, check_unit_open, invalid, Result, TraceError};
use crate::oracle::{DifferenceOperator, Operator, QueryLedger};
use crate::seed;
use crate::static_estimators::{ceil_tol, TraceEstimator};
use crate::stream::StreamSource;

pub const LABEL_BASE: &str = "tree.base";
pub const LABEL_NODE: &str = "tree.node";
pub const LABEL_STEP: &str = "tree.step";

// Substream tags distinguishing the base estimate and per-step estimates from
// tree nodes, which are keyed by their level.
const TAG_BASE: u64 = u64::MAX;
const TAG_STEP: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftParams {
    pub alpha: f64,
    pub p: f64,
    pub eps: f64,
    pub delta: f64,
    pub norm_bound: f64,
}

impl DriftParams {
    /// Normalized setting: every matrix has Schatten-p norm at most 1.
    pub fn new(alpha: f64, p: f64, eps: f64, delta: f64) -> Result<Self> {
        Self::with_norm_bound(alpha, p, eps, delta, 1.0)
    }

    /// `alpha` and `eps` are absolute; `norm_bound` bounds the matrix norms.
    pub fn with_norm_bound(alpha: f64, p: f64, eps: f64, delta: f64, norm_bound: f64) -> Result<Self> {
        if !(norm_bound.is_finite() && norm_bound > 0.0) {
            return Err(invalid("norm_bound", format!("{norm_bound} must be positive")));
        }
        check_unit_open("alpha", alpha / norm_bound)?;
        check_unit_open("eps", eps / norm_bound)?;
        check_unit_open("delta", delta)?;
        check_schatten_p(p)?;
        Ok(Self {
            alpha,
            p,
            eps,
            delta,
            norm_bound,
        })
    }

    pub fn with_eps(self, eps: f64) -> Result<Self> {
        Self::with_norm_bound(self.alpha, self.p, eps, self.delta, self.norm_bound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TreeMode {
    /// Groups of size about `1 / (2 alpha)`; assumes every matrix obeys the norm bound.
    #[default]
    Partitioned,
    /// A single tree over the whole stream; only the first matrix must obey it.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TreeConfig {
    pub mode: TreeMode,
    /// Overrides the group size so the thinned stream splits into about this many groups.
    pub groups: Option<usize>,
}

impl TreeConfig {
    pub fn flat() -> Self {
        Self {
            mode: TreeMode::Flat,
            groups: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupPlan {
    pub mode: TreeMode,
    pub group_size: usize,
    pub num_groups: usize,
    /// Dummy slots at the end of the last group.
    pub padded_tail: usize,
    pub refresh_stride: usize,
    /// Length of the thinned stream, `ceil(m / refresh_stride)`.
    pub effective_len: usize,
    /// Drift between consecutive thinned steps.
    pub tree_alpha: f64,
    /// Error budget left for the tree after thinning.
    pub tree_eps: f64,
}

impl GroupPlan {
    pub fn levels(&self) -> u32 {
        self.group_size.trailing_zeros()
    }

    /// Number of matrices of the thinned stream that fall in group `g`.
    pub fn real_len(&self, group: usize) -> usize {
        self.effective_len
            .saturating_sub(group * self.group_size)
            .min(self.group_size)
    }
}

/// Refresh stride: `1` when `alpha >= eps`, else `max(1, floor(eps / (2 alpha)))`.
pub fn refresh_stride(alpha: f64, eps: f64) -> usize {
    if alpha >= eps {
        1
    } else {
        ((eps / (2.0 * alpha)) * (1.0 + 1e-12)).floor().max(1.0) as usize
    }
}

/// Partitioned plan with the default group size.
pub fn plan_groups(m: usize, drift: &DriftParams) -> Result<GroupPlan> {
    plan(m, drift, &TreeConfig::default())
}

pub fn plan(m: usize, drift: &DriftParams, config: &TreeConfig) -> Result<GroupPlan> {
    if m == 0 {
        return Err(TraceError::EmptyStream);
    }
    let stride = refresh_stride(drift.alpha, drift.eps);
    let effective_len = m.div_ceil(stride);
    // Thinned steps drift by up to `stride * alpha <= eps / 2`; the other half
    // of the budget goes to estimation.
    let (tree_alpha, tree_eps) = if stride > 1 {
        (stride as f64 * drift.alpha, drift.eps / 2.0)
    } else {
        (drift.alpha, drift.eps)
    };
    let full = effective_len.next_power_of_two();
    let group_size = match (config.mode, config.groups) {
        (TreeMode::Flat, _) => full,
        (TreeMode::Partitioned, Some(0)) => return Err(invalid("groups", "must be at least 1")),
        (TreeMode::Partitioned, Some(g)) => effective_len.div_ceil(g).next_power_of_two(),
        (TreeMode::Partitioned, None) => {
            let alpha_hat = tree_alpha / drift.norm_bound;
            ceil_tol(1.0 / (2.0 * alpha_hat)).max(1).next_power_of_two().min(full)
        }
    };
    let num_groups = effective_len.div_ceil(group_size);
    Ok(GroupPlan {
        mode: config.mode,
        group_size,
        num_groups,
        padded_tail: num_groups * group_size - effective_len,
        refresh_stride: stride,
        effective_len,
        tree_alpha,
        tree_eps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelParams {
    pub level: u32,
    /// Tolerance relative to the node's Schatten-p norm.
    pub eps_level: f64,
    pub delta_level: f64,
}

/// Per-level tolerances: `eps / (2^(l+1) alpha log2 s)`, with failure rate
/// `alpha delta` (partitioned, `alpha` normalized) or `delta / m` (flat).
pub fn level_params(level: u32, plan: &GroupPlan, drift: &DriftParams) -> Result<LevelParams> {
    let levels = plan.levels();
    if level >= levels {
        return Err(invalid(
            "level",
            format!("{level} is outside [0, {levels}) for group size {}", plan.group_size),
        ));
    }
    let eps_level = plan.tree_eps / (2f64.powi(level as i32 + 1) * plan.tree_alpha * levels as f64);
    let delta_level = match plan.mode {
        TreeMode::Partitioned => (plan.tree_alpha / drift.norm_bound).min(1.0) * drift.delta,
        TreeMode::Flat => drift.delta / plan.effective_len as f64,
    };
    Ok(LevelParams {
        level,
        eps_level,
        delta_level,
    })
}

/// Relative tolerance and failure rate for a group's base estimate.
pub fn base_params(plan: &GroupPlan, drift: &DriftParams) -> (f64, f64) {
    if plan.group_size == 1 {
        (plan.tree_eps / drift.norm_bound, drift.delta)
    } else {
        (plan.tree_eps / (2.0 * drift.norm_bound), drift.delta / 2.0)
    }
}

/// Splits `(0, j]` into dyadic intervals `((k-1) 2^l, k 2^l]`, largest first.
pub fn sumtree_decompose(j: usize, s: usize) -> Result<Vec<(u32, usize)>> {
    if !s.is_power_of_two() {
        return Err(invalid("s", format!("{s} is not a power of two")));
    }
    if j >= s {
        return Err(invalid("j", format!("{j} is outside [0, {s})")));
    }
    let mut nodes = Vec::with_capacity(j.count_ones() as usize);
    let mut start = 0usize;
    for level in (0..usize::BITS).rev() {
        let gap = 1usize << level;
        if j & gap != 0 {
            nodes.push((level, (start + gap) / gap));
            start += gap;
        }
    }
    Ok(nodes)
}

/// Number of nodes on `level` of a tree over `s` matrices.
pub fn nodes_on_level(s: usize, level: u32) -> usize {
    (s - 1) >> level
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNodeTable {
    pub group_size: usize,
    pub base: f64,
    /// `levels[l][k - 1]` holds node `(l, k)`.
    pub levels: Vec<Vec<f64>>,
}

impl TreeNodeTable {
    pub fn get(&self, level: u32, k: usize) -> Option<f64> {
        if k == 0 {
            return None;
        }
        self.levels.get(level as usize)?.get(k - 1).copied()
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

/// `t0` plus the nodes covering `(0, j]`.
pub fn sum_tree(table: &TreeNodeTable, j: usize) -> Result<f64> {
    let mut total = table.base;
    for (level, k) in sumtree_decompose(j, table.group_size)? {
        total += table
            .get(level, k)
            .ok_or(TraceError::MissingNode { level, index: k })?;
    }
    Ok(total)
}

/// A built tree plus the queries it charged, attributed to the offset at which
/// each estimate first becomes computable.
#[derive(Debug, Clone)]
pub struct GroupTree {
    pub table: TreeNodeTable,
    pub arrival_charges: Vec<u64>,
}

/// Builds the tree for group `group_index`. `group` must have length `s`; only
/// the first `real_len` entries are real, the rest are padding. Nodes whose
/// both endpoints are padding are zero and cost nothing.
#[allow(clippy::too_many_arguments)]
pub fn build_group_tree(
    group: &[Operator],
    real_len: usize,
    group_index: usize,
    drift: &DriftParams,
    plan: &GroupPlan,
    estimator: &dyn TraceEstimator,
    master_seed: u64,
    ledger: &mut QueryLedger,
) -> Result<GroupTree> {
    let s = plan.group_size;
    if group.len() != s {
        return Err(invalid("group", format!("has {} matrices, expected {s}", group.len())));
    }
    if real_len == 0 || real_len > s {
        return Err(invalid("real_len", format!("{real_len} is outside [1, {s}]")));
    }
    let g = group_index as u64;
    let mut arrival_charges = vec![0u64; real_len];

    let (eps0, delta0) = base_params(plan, drift);
    let mut rng = seed::substream(master_seed, &[g, TAG_BASE]);
    let mut base_ledger = QueryLedger::new();
    let base = estimator
        .estimate(group[0].as_ref(), eps0, delta0, &mut rng, &mut base_ledger)?
        .value;
    arrival_charges[0] += base_ledger.total();
    absorb_as(ledger, &base_ledger, LABEL_BASE);

    let mut jobs = Vec::new();
    for level in 0..plan.levels() {
        let gap = 1usize << level;
        for k in 1..=nodes_on_level(s, level) {
            jobs.push((level, k, (k - 1) * gap, k * gap));
        }
    }
    let params: Vec<LevelParams> = (0..plan.levels())
        .map(|l| level_params(l, plan, drift))
        .collect::<Result<_>>()?;

    let results: Vec<Result<(f64, QueryLedger)>> = jobs
        .par_iter()
        .map(|&(level, k, lo, hi)| {
            let mut node_ledger = QueryLedger::new();
            if lo >= real_len {
                return Ok((0.0, node_ledger));
            }
            let diff = DifferenceOperator::new(group[hi].clone(), group[lo].clone())?;
            let lp = params[level as usize];
            let mut rng = seed::substream(master_seed, &[g, level as u64, k as u64]);
            let est = estimator.estimate(&diff, lp.eps_level, lp.delta_level, &mut rng, &mut node_ledger)?;
            Ok((est.value, node_ledger))
        })
        .collect();

    let mut levels: Vec<Vec<f64>> = (0..plan.levels())
        .map(|l| Vec::with_capacity(nodes_on_level(s, l)))
        .collect();
    for (&(level, _, _, hi), result) in jobs.iter().zip(results) {
        let (value, node_ledger) = result?;
        levels[level as usize].push(value);
        arrival_charges[hi.min(real_len - 1)] += node_ledger.total();
        absorb_as(ledger, &node_ledger, LABEL_NODE);
    }

    Ok(GroupTree {
        table: TreeNodeTable {
            group_size: s,
            base,
            levels,
        },
        arrival_charges,
    })
}

fn absorb_as(ledger: &mut QueryLedger, child: &QueryLedger, label: &str) {
    if child.total() > 0 {
        ledger.charge(label, child.total());
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEstimate {
    /// One-based step index.
    pub step: usize,
    pub value: f64,
    pub queries_cumulative: u64,
    /// False when the value repeats the latest refreshed estimate.
    pub fresh: bool,
}

/// Estimates `tr A_i` for every step of `stream`. Queries are charged to
/// `ledger`; `queries_cumulative` reports its running total as the stream
/// would be consumed online.
pub fn dynamic_estimate(
    stream: &StreamSource,
    drift: &DriftParams,
    config: &TreeConfig,
    estimator: &dyn TraceEstimator,
    master_seed: u64,
    ledger: &mut QueryLedger,
) -> Result<Vec<StepEstimate>> {
    let m = stream.len();
    let plan = plan(m, drift, config)?;
    let stride = plan.refresh_stride;
    let start = ledger.total();

    let mut fresh_values = Vec::with_capacity(plan.effective_len);
    let mut fresh_charges = Vec::with_capacity(plan.effective_len);

    if plan.group_size == 1 {
        let (eps, delta) = base_params(&plan, drift);
        for f in 0..plan.effective_len {
            let mut rng = seed::substream(master_seed, &[f as u64, TAG_STEP]);
            let mut step_ledger = QueryLedger::new();
            let est = estimator.estimate(stream.step(f * stride).as_ref(), eps, delta, &mut rng, &mut step_ledger)?;
            fresh_values.push(est.value);
            fresh_charges.push(step_ledger.total());
            absorb_as(ledger, &step_ledger, LABEL_STEP);
        }
    } else {
        let s = plan.group_size;
        for g in 0..plan.num_groups {
            let real_len = plan.real_len(g);
            let first = stream.step(g * s * stride).clone();
            let group: Vec<Operator> = (0..s)
                .map(|j| {
                    if j < real_len {
                        stream.step((g * s + j) * stride).clone()
                    } else {
                        first.clone()
                    }
                })
                .collect();
            let tree = build_group_tree(&group, real_len, g, drift, &plan, estimator, master_seed, ledger)?;
            for j in 0..real_len {
                fresh_values.push(sum_tree(&tree.table, j)?);
            }
            fresh_charges.extend_from_slice(&tree.arrival_charges);
        }
    }

    let mut out = Vec::with_capacity(m);
    let mut cumulative = start;
    for i in 0..m {
        let f = i / stride;
        let fresh = i % stride == 0;
        if fresh {
            cumulative += fresh_charges[f];
        }
        out.push(StepEstimate {
            step: i + 1,
            value: fresh_values[f],
            queries_cumulative: cumulative,
            fresh,
        });
    }
    Ok(out)
}

/// Queries [`dynamic_estimate`] plans to spend on a stream of `m` operators of
/// dimension `dim` and per-apply cost `op_cost`. For Hutch++ and exact probing
/// this is an upper bound on what a run charges.
pub fn plan_cost(
    m: usize,
    dim: usize,
    op_cost: u64,
    drift: &DriftParams,
    config: &TreeConfig,
    estimator: &dyn TraceEstimator,
) -> Result<u64> {
    let plan = plan(m, drift, config)?;
    let (eps0, delta0) = base_params(&plan, drift);
    let base = estimator.planned_queries(dim, op_cost, eps0, delta0)?;
    if plan.group_size == 1 {
        return Ok(base * plan.effective_len as u64);
    }
    let per_level: Vec<u64> = (0..plan.levels())
        .map(|l| {
            let lp = level_params(l, &plan, drift)?;
            estimator.planned_queries(dim, 2 * op_cost, lp.eps_level, lp.delta_level)
        })
        .collect::<Result<_>>()?;
    let mut total = 0u64;
    for g in 0..plan.num_groups {
        let real_len = plan.real_len(g);
        total += base;
        for (level, &cost) in per_level.iter().enumerate() {
            let gap = 1usize << level;
            let live = (1..=nodes_on_level(plan.group_size, level as u32))
                .filter(|k| (k - 1) * gap < real_len)
                .count();
            total += cost * live as u64;
        }
    }
    Ok(total)
}

/// Smallest `eps` (to bisection precision) whose planned cost fits `budget`.
pub fn calibrate_eps(
    budget: u64,
    m: usize,
    dim: usize,
    op_cost: u64,
    drift: &DriftParams,
    config: &TreeConfig,
    estimator: &dyn TraceEstimator,
) -> Result<DriftParams> {
    let cost = |eps: f64| -> Result<u64> {
        plan_cost(m, dim, op_cost, &drift.with_eps(eps)?, config, estimator)
    };
    let mut hi = drift.norm_bound * (1.0 - 1e-9);
    let hi_cost = cost(hi)?;
    if hi_cost > budget {
        return Err(TraceError::Budget {
            reason: format!("the tree needs at least {hi_cost} queries, budget is {budget}"),
        });
    }
    let mut lo = drift.norm_bound * 1e-9;
    if cost(lo)? <= budget {
        return drift.with_eps(lo);
    }
    // Bisect in log space; `hi` always fits, `lo` never does.
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        if cost(mid)? <= budget {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    drift.with_eps(hi)
}

/// Closed-form query count for a partitioned run with Hutch++ nodes at `p = 1`,
/// with the constants this implementation uses:
/// `12 (m alpha + 1) log2(1/alpha)^2 sqrt(ln(1/(alpha delta))) / eps
///  + 6 m min(1, alpha/eps) ln(1/(alpha delta))`.
pub fn query_formula(m: usize, alpha: f64, eps: f64, delta: f64) -> f64 {
    let m = m as f64;
    let log_term = (1.0 / (alpha * delta)).ln();
    let depth = (1.0 / alpha).log2().max(1.0);
    12.0 * (m * alpha + 1.0) * depth * depth * log_term.sqrt() / eps
        + 6.0 * m * (alpha / eps).min(1.0) * log_term
}
