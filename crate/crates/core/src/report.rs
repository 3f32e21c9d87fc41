use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
}

/// Diagnostics returned by both solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub objective_trace: Vec<TracePoint>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_gradient_norm: f64,
    pub iterations: usize,
    /// Excluded from reproducibility diffs.
    pub wall_time_secs: f64,
    /// Number of steps in which a singular covariance had to be regularized.
    #[serde(default)]
    pub regularized_steps: usize,
    pub config: serde_json::Value,
}
