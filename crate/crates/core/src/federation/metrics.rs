use serde::{Deserialize, Serialize};

/// One row of the per-round metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub division_event: bool,
    /// Per learned component; `None` when no client trained it this round.
    pub train_loss: Vec<Option<f64>>,
    /// Per learned component, on client test samples routed to it.
    pub test_acc: Vec<Option<f64>>,
    /// Mean absolute proportion error after alignment, when model and data
    /// component counts agree.
    pub alpha_mae: Option<f64>,
    pub division_error: Option<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

/// Bytes moved during one round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub up: u64,
    pub down: u64,
}

/// Serialized size of `params` f64 values.
pub fn param_bytes(params: usize) -> u64 {
    8 * params as u64
}
