use thiserror::Error;

use crate::domain::GpuId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no requests fall inside the window [{start}, {end})")]
    EmptyWindow { start: f64, end: f64 },

    #[error("no usable link between the prefill and decode replica")]
    NoPath,

    #[error("infeasible parallel configuration: {0}")]
    InfeasibleConfig(String),

    #[error("no feasible parallel configuration for group {0:?}")]
    NoFeasibleConfig(Vec<GpuId>),

    #[error("{0} pipeline stages exceed the routing limit of 16")]
    TooManyStages(usize),

    #[error("layer partition cannot satisfy per-stage memory limits")]
    InfeasiblePartition,

    #[error("routing problem is infeasible: {0}")]
    InfeasibleRouting(String),

    #[error("invalid deployment plan: {0}")]
    InvalidPlan(String),

    #[error("cluster cannot hold a single copy of the model ({required} bytes needed, {available} available)")]
    InsufficientMemory { required: f64, available: f64 },

    #[error("fewer than two serving groups survive; a prefill/decode pair cannot be formed")]
    NoSurvivingPhasePair,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
