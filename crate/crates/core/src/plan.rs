//! Planning inputs and the deployment plan produced from them.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::cost::{CostParams, KvPrecision};
use crate::domain::{ClusterSpec, GpuId, ModelSpec, SloSpec, WorkloadProfile};
use crate::error::{Error, Result};
use crate::orchestrator::RoutingPlan;
use crate::parallel::{ParallelConfig, Phase, ServingGroup};

/// Everything the planner needs to know about one deployment problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub cluster: ClusterSpec,
    pub model: ModelSpec,
    pub workload: WorkloadProfile,
    pub slo: SloSpec,
    #[serde(default)]
    pub kv_precision: KvPrecision,
    #[serde(default)]
    pub cost: CostParams,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        let violations = crate::domain::validate_cluster(&self.cluster);
        if !violations.is_empty() {
            return Err(Error::InvalidInput(format!("cluster has {} violation(s)", violations.len())));
        }
        self.model.validate()?;
        self.workload.validate()?;
        self.slo.validate()?;
        self.cost.validate()
    }
}

/// One model replica: its GPUs, phase and parallel layout.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Replica {
    pub group: ServingGroup,
    pub config: ParallelConfig,
}

impl Replica {
    pub fn phase(&self) -> Phase {
        self.group.phase
    }
}

/// Groups with phases and configs plus request routing. Routing rows
/// follow the order of prefill replicas in `replicas`, columns the order of
/// decode replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub replicas: Vec<Replica>,
    pub routing: RoutingPlan,
    pub kv_precision: KvPrecision,
}

impl DeploymentPlan {
    pub fn prefills(&self) -> Vec<&Replica> {
        self.replicas.iter().filter(|r| r.phase() == Phase::Prefill).collect()
    }

    pub fn decodes(&self) -> Vec<&Replica> {
        self.replicas.iter().filter(|r| r.phase() == Phase::Decode).collect()
    }

    pub fn gpus(&self) -> Vec<GpuId> {
        let mut ids: Vec<GpuId> = self.replicas.iter().flat_map(|r| r.group.gpus.iter().copied()).collect();
        ids.sort_unstable();
        ids
    }

    pub fn validate(&self, cluster: &ClusterSpec, model: &ModelSpec) -> Result<()> {
        let (m, n) = (self.prefills().len(), self.decodes().len());
        if m == 0 || n == 0 {
            return Err(Error::InvalidPlan(format!("{m} prefill and {n} decode replicas; need at least one of each")));
        }
        let mut seen = HashSet::new();
        for r in &self.replicas {
            r.group.validate(cluster)?;
            for &id in &r.group.gpus {
                if !seen.insert(id) {
                    return Err(Error::InvalidPlan(format!("gpu {id} belongs to two groups")));
                }
            }
            r.config.validate(&r.group.gpus, model.n_layers, cluster)?;
            if r.config.gpus().count() != r.group.len() {
                return Err(Error::InvalidPlan("a config leaves GPUs of its group idle".into()));
            }
        }
        self.routing.validate(m, n)
    }
}
