use serde::{Deserialize, Serialize};

use crate::{PipelineError, Result};

/// `(duration_ms, period_ms)` per periodic loop.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopBudget {
    pub entries: Vec<(f64, f64)>,
}

impl LoopBudget {
    pub fn new(entries: Vec<(f64, f64)>) -> Self {
        LoopBudget { entries }
    }

    /// The loop set of the reference HIF detector: acquisition, feature
    /// extraction and classification.
    pub fn reference_hif() -> Self {
        LoopBudget::new(vec![(3.5, 12.8), (1.0, 76.8), (20.9, 76.8)])
    }

    pub fn concat(&self, other: &LoopBudget) -> LoopBudget {
        LoopBudget::new(self.entries.iter().chain(&other.entries).copied().collect())
    }
}

/// Processor usage in percent, `100 * sum(duration / period)`. Loops with
/// zero duration carry no load and are skipped; a set with nothing left is
/// an error.
pub fn processor_budget(budget: &LoopBudget) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0;
    for &(d, p) in &budget.entries {
        if !(p > 0.0) || !p.is_finite() {
            return Err(PipelineError::Domain(format!("loop period {p} ms must be positive")));
        }
        if !(d >= 0.0) || !d.is_finite() {
            return Err(PipelineError::Domain(format!("loop duration {d} ms must be non-negative")));
        }
        if d == 0.0 {
            continue;
        }
        total += d / p;
        counted += 1;
    }
    if counted == 0 {
        return Err(PipelineError::Domain("no loops with a duration to budget".into()));
    }
    Ok(100.0 * total)
}
