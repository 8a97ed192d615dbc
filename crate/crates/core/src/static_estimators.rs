//! Static trace estimators: Hutchinson's method and Hutch++ with a Schatten-p
//! parameter schedule.
//!
//! Hutch++ splits `A` into the part captured by a randomized range finder,
//! whose trace is computed exactly, and the two-sided deflated remainder
//! `(I - QQ^T) A (I - QQ^T)`, whose trace is estimated with Hutchinson probes.
//! For an `eps * ||A||_p` guarantee at failure rate `delta` the sketch width
//! and residual probe count are both `(sqrt(ln(1/delta)) / eps)^p`, floored
//! at `ln(1/delta)`.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_schatten_p, check_unit_open, invalid, Result, TraceError};
use crate::linalg::orthonormal_basis;
use crate::oracle::{apply_block, probe_trace_exact, LinearOperator, QueryLedger};
use crate::seed;

/// Default constant in Hutchinson's `C ln(1/delta) / eps^2` probe count.
pub const HUTCHINSON_CONSTANT: f64 = 4.0;

/// Probes are generated and applied in blocks of this many columns.
const PROBE_BLOCK: usize = 128;

pub const LABEL_HUTCHINSON: &str = "hutchinson";
pub const LABEL_SKETCH: &str = "hutchpp.sketch";
pub const LABEL_LOW_RANK: &str = "hutchpp.trace";
pub const LABEL_RESIDUAL: &str = "hutchpp.residual";
pub const LABEL_EXACT: &str = "exact.probe";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum ProbeKind {
    /// Independent ±1 entries.
    #[default]
    Rademacher,
    /// Independent standard normal entries.
    Gaussian,
}

impl ProbeKind {
    pub fn sample_matrix<R: Rng + ?Sized>(self, rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
        match self {
            ProbeKind::Rademacher => {
                DMatrix::from_fn(rows, cols, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
            }
            ProbeKind::Gaussian => DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal)),
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Rademacher => "rademacher",
            ProbeKind::Gaussian => "gaussian",
        })
    }
}

/// Accuracy target `|t - tr A| <= eps ||A||_p` with probability `1 - delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticParams {
    pub eps: f64,
    pub delta: f64,
    pub p: f64,
}

impl StaticParams {
    pub fn new(eps: f64, delta: f64, p: f64) -> Result<Self> {
        check_unit_open("eps", eps)?;
        check_unit_open("delta", delta)?;
        check_schatten_p(p)?;
        Ok(Self { eps, delta, p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEstimate {
    pub value: f64,
    /// Ledger delta across the call.
    pub queries_used: u64,
}

/// Sketch width and residual probe count for Hutch++.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub sketch_width: usize,
    pub residual_probes: usize,
}

impl Schedule {
    /// Operator applications when no sketch column is dropped.
    pub fn applications(&self) -> usize {
        2 * self.sketch_width + self.residual_probes
    }
}

// Ceiling that ignores floating-point fuzz just above an integer.
pub(crate) fn ceil_tol(x: f64) -> usize {
    let fuzz = 1e-9 * x.abs().max(1.0);
    (x - fuzz).ceil().max(0.0) as usize
}

/// `ceil(C ln(1/delta) / eps^2)` Hutchinson probes.
pub fn hutch_budget(eps: f64, delta: f64) -> Result<usize> {
    hutch_budget_with_constant(eps, delta, HUTCHINSON_CONSTANT)
}

pub fn hutch_budget_with_constant(eps: f64, delta: f64, constant: f64) -> Result<usize> {
    // eps = 1 is allowed here: the bound is still meaningful at unit relative error.
    if !(eps.is_finite() && eps > 0.0 && eps <= 1.0) {
        return Err(invalid("eps", format!("{eps} is outside (0, 1]")));
    }
    check_unit_open("delta", delta)?;
    if !(constant.is_finite() && constant > 0.0) {
        return Err(invalid("constant", format!("{constant} must be positive")));
    }
    Ok(ceil_tol(constant * (1.0 / delta).ln() / (eps * eps)).max(1))
}

/// Hutch++ schedule for an `eps ||A||_p` target; rejects out-of-range input.
pub fn schatten_schedule(eps: f64, delta: f64, p: f64) -> Result<Schedule> {
    check_unit_open("eps", eps)?;
    level_schedule(eps, delta, p)
}

/// Same formula as [`schatten_schedule`] but accepts any positive `eps`.
/// Per-level tolerances inside the dynamic tree routinely exceed 1.
pub fn level_schedule(eps: f64, delta: f64, p: f64) -> Result<Schedule> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid("eps", format!("{eps} must be positive")));
    }
    check_unit_open("delta", delta)?;
    check_schatten_p(p)?;
    let log_inv = (1.0 / delta).ln();
    let width = ceil_tol((log_inv.sqrt() / eps).powf(p)).max(ceil_tol(log_inv)).max(1);
    Ok(Schedule {
        sketch_width: width,
        residual_probes: width,
    })
}

/// Hutchinson's estimator: mean of `q^T A q` over `num_probes` random probes.
pub fn hutchinson<R: Rng + ?Sized>(
    op: &dyn LinearOperator,
    num_probes: usize,
    kind: ProbeKind,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<TraceEstimate> {
    hutchinson_labeled(op, num_probes, kind, rng, ledger, LABEL_HUTCHINSON)
}

pub(crate) fn hutchinson_labeled<R: Rng + ?Sized>(
    op: &dyn LinearOperator,
    num_probes: usize,
    kind: ProbeKind,
    rng: &mut R,
    ledger: &mut QueryLedger,
    label: &str,
) -> Result<TraceEstimate> {
    if num_probes == 0 {
        return Err(invalid("num_probes", "at least one probe is required"));
    }
    let before = ledger.total();
    let n = op.dim();
    let mut sum = 0.0;
    let mut done = 0;
    while done < num_probes {
        let width = PROBE_BLOCK.min(num_probes - done);
        let probes = kind.sample_matrix(n, width, rng);
        let image = apply_block(op, &probes, ledger, label)?;
        sum += probes.dot(&image);
        done += width;
    }
    Ok(TraceEstimate {
        value: sum / num_probes as f64,
        queries_used: ledger.total() - before,
    })
}

/// Randomized range finder: orthonormal basis of `A S` for a `width`-column
/// sign sketch `S`. Uses exactly `width` applications of `op`.
pub fn range_finder<R: Rng + ?Sized>(
    op: &dyn LinearOperator,
    width: usize,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<DMatrix<f64>> {
    if width == 0 {
        return Err(invalid("width", "sketch width must be positive"));
    }
    if width > op.dim() {
        return Err(TraceError::DimensionBelowSchedule {
            dim: op.dim(),
            width,
        });
    }
    let sketch = ProbeKind::Rademacher.sample_matrix(op.dim(), width, rng);
    let image = apply_block(op, &sketch, ledger, LABEL_SKETCH)?;
    Ok(orthonormal_basis(&image))
}

/// `(I - QQ^T) A (I - QQ^T)` for an orthonormal `Q`.
#[derive(Debug)]
pub struct DeflatedOperator<'a> {
    op: &'a dyn LinearOperator,
    basis: &'a DMatrix<f64>,
}

impl<'a> DeflatedOperator<'a> {
    pub fn new(op: &'a dyn LinearOperator, basis: &'a DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != op.dim() {
            return Err(TraceError::DimensionMismatch {
                expected: op.dim(),
                actual: basis.nrows(),
            });
        }
        Ok(Self { op, basis })
    }

    fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.basis.ncols() == 0 {
            return x.clone();
        }
        x - self.basis * (self.basis.transpose() * x)
    }
}

impl LinearOperator for DeflatedOperator<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn cost(&self) -> u64 {
        self.op.cost()
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let col = DMatrix::from_column_slice(x.len(), 1, x);
        out.copy_from_slice(self.matmat(&col).as_slice());
    }

    fn matmat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.project(&self.op.matmat(&self.project(x)))
    }
}

/// Hutch++ at the Schatten-p schedule for `params`.
pub fn hutch_pp<R: Rng + ?Sized>(
    op: &dyn LinearOperator,
    params: StaticParams,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<TraceEstimate> {
    let schedule = schatten_schedule(params.eps, params.delta, params.p)?;
    hutch_pp_with_schedule(op, schedule, ProbeKind::Rademacher, rng, ledger)
}

pub fn hutch_pp_with_schedule<R: Rng + ?Sized>(
    op: &dyn LinearOperator,
    schedule: Schedule,
    kind: ProbeKind,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<TraceEstimate> {
    if schedule.sketch_width > op.dim() {
        return Err(TraceError::DimensionBelowSchedule {
            dim: op.dim(),
            width: schedule.sketch_width,
        });
    }
    let before = ledger.total();
    let basis = range_finder(op, schedule.sketch_width, rng, ledger)?;
    let mut low_rank = 0.0;
    if basis.ncols() > 0 {
        let image = apply_block(op, &basis, ledger, LABEL_LOW_RANK)?;
        low_rank = basis.dot(&image);
    }
    let residual = DeflatedOperator::new(op, &basis)?;
    let rest = hutchinson_labeled(&residual, schedule.residual_probes, kind, rng, ledger, LABEL_RESIDUAL)?;
    Ok(TraceEstimate {
        value: low_rank + rest.value,
        queries_used: ledger.total() - before,
    })
}

/// A trace estimator with a relative accuracy knob, as consumed by the
/// dynamic tree and the experiment harness.
pub trait TraceEstimator: Send + Sync + fmt::Debug {
    /// Estimates `tr A` to within `eps ||A||_p` with probability `1 - delta`.
    fn estimate(
        &self,
        op: &dyn LinearOperator,
        eps: f64,
        delta: f64,
        rng: &mut seed::Rng,
        ledger: &mut QueryLedger,
    ) -> Result<TraceEstimate>;

    /// Queries [`estimate`](Self::estimate) will charge at most, for an
    /// operator of dimension `dim` and per-apply cost `op_cost`.
    fn planned_queries(&self, dim: usize, op_cost: u64, eps: f64, delta: f64) -> Result<u64>;
}

/// Hutch++ at the Schatten-p schedule. With `exact_fallback`, an operator
/// whose schedule would need at least `dim` applications is traced exactly
/// through coordinate probes instead, which is both cheaper and exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HutchPlusPlus {
    pub p: f64,
    pub probe: ProbeKind,
    pub exact_fallback: bool,
}

impl HutchPlusPlus {
    pub fn new(p: f64) -> Result<Self> {
        check_schatten_p(p)?;
        Ok(Self {
            p,
            probe: ProbeKind::Rademacher,
            exact_fallback: true,
        })
    }

    pub fn strict(p: f64) -> Result<Self> {
        Ok(Self {
            exact_fallback: false,
            ..Self::new(p)?
        })
    }

    fn falls_back(&self, dim: usize, schedule: Schedule) -> bool {
        self.exact_fallback && schedule.applications() >= dim
    }
}

impl TraceEstimator for HutchPlusPlus {
    fn estimate(
        &self,
        op: &dyn LinearOperator,
        eps: f64,
        delta: f64,
        rng: &mut seed::Rng,
        ledger: &mut QueryLedger,
    ) -> Result<TraceEstimate> {
        let schedule = level_schedule(eps, delta, self.p)?;
        if self.falls_back(op.dim(), schedule) {
            return ExactTrace.estimate(op, eps, delta, rng, ledger);
        }
        hutch_pp_with_schedule(op, schedule, self.probe, rng, ledger)
    }

    fn planned_queries(&self, dim: usize, op_cost: u64, eps: f64, delta: f64) -> Result<u64> {
        let schedule = level_schedule(eps, delta, self.p)?;
        let applications = if self.falls_back(dim, schedule) {
            dim
        } else {
            schedule.applications()
        };
        Ok(applications as u64 * op_cost)
    }
}

/// Exact trace through `n` coordinate probes; ignores the accuracy knobs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExactTrace;

impl TraceEstimator for ExactTrace {
    fn estimate(
        &self,
        op: &dyn LinearOperator,
        _eps: f64,
        _delta: f64,
        _rng: &mut seed::Rng,
        ledger: &mut QueryLedger,
    ) -> Result<TraceEstimate> {
        let before = ledger.total();
        let value = probe_trace_exact(op, ledger, LABEL_EXACT)?;
        Ok(TraceEstimate {
            value,
            queries_used: ledger.total() - before,
        })
    }

    fn planned_queries(&self, dim: usize, op_cost: u64, _eps: f64, _delta: f64) -> Result<u64> {
        Ok(dim as u64 * op_cost)
    }
}
