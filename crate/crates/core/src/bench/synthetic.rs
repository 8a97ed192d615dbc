//! Synthetic streams: a random symmetric base matrix plus a small random
//! perturbation at every step.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::linalg::{compose_spectrum, random_orthogonal, schatten_norm_of_spectrum, symmetric_eigenvalues};
use crate::oracle::{DenseSymmetricOperator, Operator};
use crate::seed;
use crate::stream::StreamSource;

/// Scale of the rank-one low-regime perturbation.
pub const LOW_SCALE: f64 = 5e-5;
/// Rank of the high-regime perturbation.
pub const HIGH_RANK: usize = 20;
/// Per-component high-regime scale is this over `n`.
pub const HIGH_SCALE_NUMERATOR: f64 = 5e-3;
/// Declared drift is the largest observed step norm times this.
pub const ALPHA_SAFETY: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Low,
    High,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Low => "low",
            Regime::High => "high",
        })
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "low" => Ok(Regime::Low),
            "high" => Ok(Regime::High),
            other => Err(format!("unknown regime `{other}` (expected low or high)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub steps: usize,
    pub regime: Regime,
    pub seed: u64,
    /// Per-component scale of the high regime; `None` means `5e-3 / n`.
    pub high_scale: Option<f64>,
}

impl SyntheticConfig {
    pub fn new(n: usize, steps: usize, regime: Regime, seed: u64) -> Self {
        Self {
            n,
            steps,
            regime,
            seed,
            high_scale: None,
        }
    }

    pub fn high_component_scale(&self) -> f64 {
        self.high_scale.unwrap_or(HIGH_SCALE_NUMERATOR / self.n as f64)
    }
}

/// A dense symmetric matrix together with its eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralMatrix {
    pub matrix: DenseSymmetricOperator,
    pub eigenvalues: Vec<f64>,
}

/// `U diag(lambda) U^T` with `lambda` uniform on [-1, 1] and `U` Haar.
pub fn gen_synthetic_base<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SpectralMatrix> {
    if n < 2 {
        return Err(invalid("n", format!("{n} must be at least 2")));
    }
    let eigenvalues: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let u = random_orthogonal(n, rng);
    let matrix = DenseSymmetricOperator::new(compose_spectrum(&u, &eigenvalues))?;
    Ok(SpectralMatrix { matrix, eigenvalues })
}

/// A perturbation with its nonzero eigenvalues.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Perturbation {
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn schatten_norm(&self, p: f64) -> f64 {
        schatten_norm_of_spectrum(&self.eigenvalues, p)
    }
}

/// Low: `5e-5 r g g^T` with a random sign `r`. High: `scale * sum of 20 g g^T`.
pub fn gen_perturbation<R: Rng + ?Sized>(
    regime: Regime,
    n: usize,
    high_scale: f64,
    rng: &mut R,
) -> Result<Perturbation> {
    match regime {
        Regime::Low => {
            let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let r = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let c = LOW_SCALE * r;
            Ok(Perturbation {
                matrix: &g * g.transpose() * c,
                eigenvalues: vec![c * g.norm_squared()],
            })
        }
        Regime::High => {
            if n < HIGH_RANK {
                return Err(invalid("n", format!("{n} is below the perturbation rank {HIGH_RANK}")));
            }
            let g = DMatrix::from_fn(n, HIGH_RANK, |_, _| rng.sample::<f64, _>(StandardNormal));
            // Nonzero eigenvalues of G G^T are those of the small Gram matrix.
            let gram = g.transpose() * &g * high_scale;
            Ok(Perturbation {
                matrix: &g * g.transpose() * high_scale,
                eigenvalues: symmetric_eigenvalues(&gram),
            })
        }
    }
}

/// A generated stream with its exact traces and drift bounds.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub stream: StreamSource,
    pub true_traces: Vec<f64>,
    /// Eigenvalues of the first matrix.
    pub base_spectrum: Vec<f64>,
    /// Schatten-p norm of each step's perturbation (one fewer than steps).
    pub step_norms: Vec<Vec<f64>>,
}

impl SyntheticStream {
    pub fn step_norms(&self, p: f64) -> Vec<f64> {
        self.step_norms
            .iter()
            .map(|ev| schatten_norm_of_spectrum(ev, p))
            .collect()
    }

    /// Largest observed step norm times the safety factor.
    pub fn measured_alpha(&self, p: f64) -> f64 {
        ALPHA_SAFETY * self.step_norms(p).into_iter().fold(0.0, f64::max)
    }

    pub fn first_norm(&self, p: f64) -> f64 {
        schatten_norm_of_spectrum(&self.base_spectrum, p)
    }

    /// Bound on every matrix's norm by the triangle inequality.
    pub fn norm_bound(&self, p: f64) -> f64 {
        self.first_norm(p) + self.step_norms(p).iter().sum::<f64>()
    }
}

pub fn synthetic_stream(config: &SyntheticConfig) -> Result<SyntheticStream> {
    if config.steps == 0 {
        return Err(invalid("steps", "must be at least 1"));
    }
    let mut rng = seed::substream(config.seed, &[0]);
    let base = gen_synthetic_base(config.n, &mut rng)?;
    let mut current = base.matrix.matrix().clone();
    let mut trace = base.eigenvalues.iter().sum::<f64>();
    let mut steps: Vec<Operator> = Vec::with_capacity(config.steps);
    let mut true_traces = Vec::with_capacity(config.steps);
    let mut step_norms = Vec::with_capacity(config.steps.saturating_sub(1));
    steps.push(Arc::new(base.matrix));
    true_traces.push(trace);
    for _ in 1..config.steps {
        let delta = gen_perturbation(config.regime, config.n, config.high_component_scale(), &mut rng)?;
        current += &delta.matrix;
        trace += delta.trace();
        steps.push(Arc::new(DenseSymmetricOperator::new(current.clone())?));
        true_traces.push(trace);
        step_norms.push(delta.eigenvalues);
    }
    Ok(SyntheticStream {
        stream: StreamSource::new(steps)?,
        true_traces,
        base_spectrum: base.eigenvalues,
        step_norms,
    })
}
