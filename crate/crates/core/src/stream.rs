use crate::error::{Result, TraceError};
use crate::oracle::Operator;

/// Drift bounds a stream promises: consecutive Schatten-p differences are at
/// most `alpha`, and the first matrix has Schatten-p norm at most `norm_bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeclaredDrift {
    pub alpha: f64,
    pub p: f64,
    pub norm_bound: f64,
}

/// An ordered sequence of equally sized operators `A_1, ..., A_m`.
#[derive(Debug, Clone)]
pub struct StreamSource {
    steps: Vec<Operator>,
    declared: Option<DeclaredDrift>,
}

impl StreamSource {
    pub fn new(steps: Vec<Operator>) -> Result<Self> {
        let first = steps.first().ok_or(TraceError::EmptyStream)?;
        let dim = first.dim();
        for (i, op) in steps.iter().enumerate() {
            if op.dim() != dim {
                return Err(TraceError::StreamDimension {
                    step: i + 1,
                    expected: dim,
                    actual: op.dim(),
                });
            }
        }
        Ok(Self {
            steps,
            declared: None,
        })
    }

    pub fn with_declared(mut self, declared: DeclaredDrift) -> Self {
        self.declared = Some(declared);
        self
    }

    pub fn declared(&self) -> Option<DeclaredDrift> {
        self.declared
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.steps[0].dim()
    }

    /// Zero-based access: `step(0)` is `A_1`.
    pub fn step(&self, index: usize) -> &Operator {
        &self.steps[index]
    }

    pub fn steps(&self) -> &[Operator] {
        &self.steps
    }
}
