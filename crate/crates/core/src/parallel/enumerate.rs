use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{partition_layers, route_pipeline, ParallelConfig, Phase, ServingGroup, Stage, MAX_ROUTED_STAGES};
use crate::cost::{group_memory_feasible, CostParams, ReplicaCost};
use crate::domain::{ClusterSpec, GpuId, ModelSpec, WorkloadProfile};
use crate::error::{Error, Result};

/// A (TP, PP) choice with its stage GPU sets, before routing and layer
/// partitioning.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigSkeleton {
    pub tp: usize,
    pub pp: usize,
    pub stages: Vec<Vec<GpuId>>,
}

impl ConfigSkeleton {
    /// Orders the stages for maximum bottleneck bandwidth and assigns
    /// layers to them.
    pub fn materialize(&self, model: &ModelSpec, cluster: &ClusterSpec) -> Result<ParallelConfig> {
        let (order, _) = route_pipeline(&self.stages, cluster)?;
        let ordered: Vec<&Vec<GpuId>> = order.iter().map(|&k| &self.stages[k]).collect();
        let caps: Vec<(f64, f64)> = ordered
            .iter()
            .map(|s| {
                let spec = cluster.spec(s[0]);
                (spec.mem_capacity, spec.peak_flops)
            })
            .collect();
        let layers = partition_layers(&caps, model, self.tp)?;
        Ok(ParallelConfig {
            tp: self.tp,
            pp: self.pp,
            stages: ordered
                .into_iter()
                .zip(layers)
                .map(|(gpus, layers)| Stage { gpus: gpus.clone(), layers })
                .collect(),
        })
    }
}

/// Candidate layouts that use every GPU of the group.
///
/// GPUs are sorted by (type, node, id) and cut into consecutive TP units,
/// so a TP degree qualifies only when it divides every same-type same-node
/// run and does not exceed the smallest per-type count. Skeletons with more
/// stages than layers or than the router accepts are skipped.
pub fn enumerate_configs(group: &ServingGroup, model: &ModelSpec, cluster: &ClusterSpec) -> Result<Vec<ConfigSkeleton>> {
    let none = || Error::NoFeasibleConfig(group.gpus.clone());
    if group.is_empty() || !group_memory_feasible(&group.gpus, model, cluster) {
        return Err(none());
    }
    let mut sorted = group.gpus.clone();
    sorted.sort_by(|&a, &b| {
        cluster
            .spec(a)
            .name
            .cmp(&cluster.spec(b).name)
            .then(cluster.node(a).cmp(&cluster.node(b)))
            .then(a.cmp(&b))
    });
    let key = |id: GpuId| (cluster.type_index(id), cluster.node(id));
    let mut runs = Vec::new();
    let mut start = 0;
    for k in 1..=sorted.len() {
        if k == sorted.len() || key(sorted[k]) != key(sorted[start]) {
            runs.push(k - start);
            start = k;
        }
    }
    let min_type = group.type_counts(cluster).into_values().min().unwrap_or(0);

    let mut out = Vec::new();
    for tp in (1..=min_type).rev() {
        if runs.iter().any(|r| r % tp != 0) {
            continue;
        }
        let pp = sorted.len() / tp;
        if pp > model.n_layers || pp > MAX_ROUTED_STAGES {
            continue;
        }
        out.push(ConfigSkeleton { tp, pp, stages: sorted.chunks(tp).map(|c| c.to_vec()).collect() });
    }
    if out.is_empty() {
        return Err(none());
    }
    Ok(out)
}

/// Phase objective of a materialized config; larger is better. `None` when
/// the config cannot serve the phase.
fn phase_score(cost: &ReplicaCost, phase: Phase, workload: &WorkloadProfile) -> Option<f64> {
    match phase {
        Phase::Prefill => Some(-cost.prefill_latency(workload.mean_input_len)),
        Phase::Decode => {
            let t = cost.decode_throughput(workload.mean_decode_context());
            (t > 0.0).then_some(t)
        }
    }
}

/// Latency-optimal config for prefill groups, throughput-optimal for decode.
///
/// Scores within 1e-9 relative are ties, resolved toward smaller PP, then
/// smaller TP, then lexicographically smaller stage lists.
pub fn best_config(
    group: &ServingGroup,
    model: &ModelSpec,
    cluster: &ClusterSpec,
    workload: &WorkloadProfile,
    params: &CostParams,
) -> Result<ParallelConfig> {
    let mut candidates: Vec<(f64, ParallelConfig)> = Vec::new();
    for sk in enumerate_configs(group, model, cluster)? {
        let Ok(cfg) = sk.materialize(model, cluster) else { continue };
        let Ok(cost) = ReplicaCost::new(&cfg, model, cluster, params) else { continue };
        if let Some(score) = phase_score(&cost, group.phase, workload) {
            candidates.push((score, cfg));
        }
    }
    candidates.sort_by(|a, b| {
        (a.1.pp, a.1.tp)
            .cmp(&(b.1.pp, b.1.tp))
            .then_with(|| a.1.stages.iter().map(|s| &s.gpus).cmp(b.1.stages.iter().map(|s| &s.gpus)))
    });
    let mut best: Option<(f64, ParallelConfig)> = None;
    for (score, cfg) in candidates {
        let better = match &best {
            None => true,
            Some((b, _)) => score.partial_cmp(b) == Some(Ordering::Greater) && score - b > 1e-9 * b.abs().max(score.abs()),
        };
        if better {
            best = Some((score, cfg));
        }
    }
    best.map(|(_, c)| c).ok_or_else(|| Error::NoFeasibleConfig(group.gpus.clone()))
}
