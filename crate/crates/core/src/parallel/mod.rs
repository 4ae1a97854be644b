//! Per-group parallel configuration: candidate enumeration, pipeline
//! routing, layer partitioning and phase-aware selection.

mod enumerate;
mod partition;
mod route;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{ClusterSpec, GpuId};
use crate::error::{Error, Result};

pub use enumerate::{best_config, enumerate_configs, ConfigSkeleton};
pub use partition::partition_layers;
pub use route::{route_pipeline, stage_bandwidth, MAX_ROUTED_STAGES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

impl Phase {
    pub fn flipped(self) -> Phase {
        match self {
            Phase::Prefill => Phase::Decode,
            Phase::Decode => Phase::Prefill,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
        })
    }
}

/// GPUs hosting one model replica plus its phase designation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ServingGroup {
    /// Sorted, duplicate-free.
    pub gpus: Vec<GpuId>,
    pub phase: Phase,
}

impl ServingGroup {
    pub fn new(mut gpus: Vec<GpuId>, phase: Phase) -> Self {
        gpus.sort_unstable();
        gpus.dedup();
        ServingGroup { gpus, phase }
    }

    pub fn len(&self) -> usize {
        self.gpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gpus.is_empty()
    }

    /// GPU count per type name (the g_{i,t} of the group).
    pub fn type_counts(&self, cluster: &ClusterSpec) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for &id in &self.gpus {
            *counts.entry(cluster.spec(id).name.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn validate(&self, cluster: &ClusterSpec) -> Result<()> {
        if self.gpus.is_empty() {
            return Err(Error::InvalidPlan("empty serving group".into()));
        }
        if let Some(id) = self.gpus.iter().find(|id| !cluster.contains(**id)) {
            return Err(Error::InvalidPlan(format!("gpu {id} is not in the cluster")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stage {
    pub gpus: Vec<GpuId>,
    pub layers: usize,
}

/// Tensor/pipeline layout of one replica; stages are listed in pipeline
/// order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub tp: usize,
    pub pp: usize,
    pub stages: Vec<Stage>,
}

impl ParallelConfig {
    pub fn gpus(&self) -> impl Iterator<Item = GpuId> + '_ {
        self.stages.iter().flat_map(|s| s.gpus.iter().copied())
    }

    /// Checks the structural invariants: stage width equals `tp`, stages
    /// are single-type and single-node, disjoint, inside `group`, and the
    /// layer counts cover the model with at least one layer each. Memory is
    /// checked by the cost model.
    pub fn validate(&self, group: &[GpuId], n_layers: usize, cluster: &ClusterSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPlan(m));
        if self.tp == 0 || self.pp != self.stages.len() || self.stages.is_empty() {
            return bad(format!("tp={} pp={} with {} stages", self.tp, self.pp, self.stages.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for (k, s) in self.stages.iter().enumerate() {
            if s.gpus.len() != self.tp {
                return bad(format!("stage {k} has {} gpus, tp is {}", s.gpus.len(), self.tp));
            }
            if s.layers == 0 {
                return bad(format!("stage {k} has no layers"));
            }
            for &id in &s.gpus {
                if !group.contains(&id) {
                    return bad(format!("stage {k} uses gpu {id} outside its group"));
                }
                if !seen.insert(id) {
                    return bad(format!("gpu {id} appears in two stages"));
                }
            }
            let t0 = cluster.type_index(s.gpus[0]);
            let n0 = cluster.node(s.gpus[0]);
            if s.gpus.iter().any(|&id| cluster.type_index(id) != t0 || cluster.node(id) != n0) {
                return bad(format!("stage {k} mixes GPU types or nodes"));
            }
        }
        let total: usize = self.stages.iter().map(|s| s.layers).sum();
        if total != n_layers {
            return bad(format!("stages hold {total} layers, model has {n_layers}"));
        }
        Ok(())
    }
}
