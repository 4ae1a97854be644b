//! Shared domain types: cluster, model, workload and SLO descriptions.

mod cluster;
mod llm;
mod slo;
mod workload;

pub use cluster::{validate_cluster, ClusterSpec, Gpu, GpuId, GpuType, Violation, SYMMETRY_TOLERANCE};
pub use llm::ModelSpec;
pub use slo::SloSpec;
pub use workload::{
    detect_shift, profile_from_trace, Request, RequestTrace, WorkloadProfile, DEFAULT_SHIFT_THRESHOLD,
    DEFAULT_SHIFT_WINDOW,
};
