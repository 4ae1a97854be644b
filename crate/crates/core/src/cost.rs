//! Analytic latency and capacity estimates.
//!
//! Each pipeline stage is charged the larger of its compute time and its
//! memory-read time (a roofline), stage times add up along the pipeline,
//! and transfers between stages or replicas follow the alpha-beta model
//! `alpha + bytes / beta`.

use serde::{Deserialize, Serialize};

use crate::domain::{ClusterSpec, GpuId, GpuType, ModelSpec, SloSpec, WorkloadProfile};
use crate::error::{Error, Result};
use crate::parallel::ParallelConfig;

/// Element width used for KV-cache transfers between phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct KvPrecision {
    bits: u32,
}

impl KvPrecision {
    pub const BITS_16: KvPrecision = KvPrecision { bits: 16 };
    pub const BITS_4: KvPrecision = KvPrecision { bits: 4 };

    pub fn new(bits: u32) -> Result<Self> {
        match bits {
            16 | 8 | 4 | 2 => Ok(KvPrecision { bits }),
            _ => Err(Error::InvalidInput(format!("unsupported KV bitwidth {bits}; use 16, 8, 4 or 2"))),
        }
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    /// `bits / 8`; exact in binary floating point for every allowed width.
    pub fn bytes_per_element(self) -> f64 {
        self.bits as f64 / 8.0
    }
}

impl Default for KvPrecision {
    fn default() -> Self {
        KvPrecision::BITS_16
    }
}

impl TryFrom<u32> for KvPrecision {
    type Error = Error;
    fn try_from(bits: u32) -> Result<Self> {
        KvPrecision::new(bits)
    }
}

impl From<KvPrecision> for u32 {
    fn from(p: KvPrecision) -> u32 {
        p.bits
    }
}

/// Calibration constants of the cost model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Achievable fraction of peak FLOPS.
    pub flops_efficiency: f64,
    /// Achievable fraction of peak memory bandwidth.
    pub mem_efficiency: f64,
    /// Seconds per tensor-parallel collective; two collectives per layer.
    pub tp_allreduce_latency: f64,
    /// Prefill batches close once this many tokens are queued.
    pub batch_token_plateau: usize,
    /// Multiply the KV transfer volume by the layer count.
    pub kv_whole_model: bool,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            flops_efficiency: 0.6,
            mem_efficiency: 0.8,
            tp_allreduce_latency: 0.0,
            batch_token_plateau: 1024,
            kv_whole_model: true,
        }
    }
}

impl CostParams {
    /// Peak-hardware parameters: both efficiencies set to one.
    pub fn ideal() -> Self {
        CostParams { flops_efficiency: 1.0, mem_efficiency: 1.0, ..CostParams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !frac(self.flops_efficiency) || !frac(self.mem_efficiency) {
            return Err(Error::InvalidInput("efficiencies must lie in (0, 1]".into()));
        }
        if !(self.tp_allreduce_latency >= 0.0) || self.batch_token_plateau == 0 {
            return Err(Error::InvalidInput("allreduce latency must be >= 0 and the batch plateau >= 1".into()));
        }
        Ok(())
    }
}

/// A point-to-point link in the alpha-beta model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Link {
    pub alpha: f64,
    pub beta: f64,
}

impl Link {
    pub fn transfer_time(&self, bytes: f64) -> f64 {
        self.alpha + bytes / self.beta
    }
}

/// Bottleneck link for KV shipping: the lowest-bandwidth usable pair
/// between the last prefill stage and the first decode stage.
pub fn kv_link(prefill: &ParallelConfig, decode: &ParallelConfig, cluster: &ClusterSpec) -> Result<Link> {
    let src = &prefill.stages.last().ok_or(Error::NoPath)?.gpus;
    let dst = &decode.stages.first().ok_or(Error::NoPath)?.gpus;
    let mut best: Option<Link> = None;
    for &a in src {
        for &b in dst {
            let beta = cluster.beta(a, b);
            if beta > 0.0 && best.is_none_or(|l| beta < l.beta) {
                best = Some(Link { alpha: cluster.alpha(a, b), beta });
            }
        }
    }
    best.ok_or(Error::NoPath)
}

/// Exact KV-cache transfer volume in bits: `2 * b * s * h * bits`, times
/// the layer count when `whole_model` is set.
pub fn kv_volume_bits(batch: u64, seq_len: u64, model: &ModelSpec, prec: KvPrecision, whole_model: bool) -> u128 {
    let layers = if whole_model { model.n_layers as u128 } else { 1 };
    2 * batch as u128 * seq_len as u128 * model.hidden_size as u128 * prec.bits() as u128 * layers
}

/// Time to ship the KV cache of `batch` sequences of `seq_len` tokens from
/// a prefill replica to a decode replica.
pub fn kv_comm_cost(
    prefill: &ParallelConfig,
    decode: &ParallelConfig,
    batch: u64,
    seq_len: u64,
    model: &ModelSpec,
    prec: KvPrecision,
    cluster: &ClusterSpec,
    params: &CostParams,
) -> Result<f64> {
    if batch == 0 || seq_len == 0 {
        return Err(Error::InvalidInput("batch and sequence length must be at least 1".into()));
    }
    let link = kv_link(prefill, decode, cluster)?;
    let bytes = kv_volume_bits(batch, seq_len, model, prec, params.kv_whole_model) as f64 / 8.0;
    Ok(link.transfer_time(bytes))
}

/// KV shipping time for one request over `link`; `tokens` may be a mean.
pub fn kv_request_time(link: &Link, tokens: f64, model: &ModelSpec, prec: KvPrecision, params: &CostParams) -> f64 {
    let layers = if params.kv_whole_model { model.n_layers as f64 } else { 1.0 };
    link.transfer_time(2.0 * tokens * model.hidden_size as f64 * prec.bytes_per_element() * layers)
}

/// True when the group's combined memory holds one copy of the weights.
pub fn group_memory_feasible(gpus: &[GpuId], model: &ModelSpec, cluster: &ClusterSpec) -> bool {
    cluster.total_memory(gpus) >= model.weight_bytes()
}

#[derive(Clone, Debug, PartialEq)]
struct StageCost {
    layers: usize,
    tp: usize,
    peak_flops: f64,
    mem_bandwidth: f64,
    mem_capacity: f64,
}

/// Precomputed per-stage constants of one replica; evaluating a latency is
/// then a closed form over the stages.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaCost {
    stages: Vec<StageCost>,
    /// Link between consecutive stages, `stages.len() - 1` entries.
    hops: Vec<Link>,
    layer_params: f64,
    bytes_per_param: f64,
    hidden: f64,
    kv_token_layer: f64,
    params: CostParams,
}

impl ReplicaCost {
    /// Fails with `InfeasibleConfig` when a stage's weight shard exceeds
    /// per-GPU memory.
    pub fn new(cfg: &ParallelConfig, model: &ModelSpec, cluster: &ClusterSpec, params: &CostParams) -> Result<Self> {
        if cfg.stages.is_empty() || cfg.tp == 0 {
            return Err(Error::InfeasibleConfig("configuration has no stages".into()));
        }
        let mut stages = Vec::with_capacity(cfg.stages.len());
        for (k, s) in cfg.stages.iter().enumerate() {
            let spec = cluster.spec(s.gpus[0]);
            let per_gpu = s.layers as f64 * model.layer_bytes() / cfg.tp as f64;
            if per_gpu > spec.mem_capacity {
                return Err(Error::InfeasibleConfig(format!(
                    "stage {k} needs {per_gpu:.3e} bytes per GPU, {} holds {:.3e}",
                    spec.name, spec.mem_capacity
                )));
            }
            stages.push(StageCost {
                layers: s.layers,
                tp: cfg.tp,
                peak_flops: spec.peak_flops,
                mem_bandwidth: spec.mem_bandwidth,
                mem_capacity: spec.mem_capacity,
            });
        }
        let hops = cfg
            .stages
            .windows(2)
            .map(|w| best_link(&w[0].gpus, &w[1].gpus, cluster))
            .collect();
        Ok(Self::assemble(stages, hops, model, params))
    }

    /// A single unsharded device holding the whole model; memory is not
    /// checked. Used for reference latencies.
    pub fn single_device(gpu: &GpuType, model: &ModelSpec, params: &CostParams) -> Self {
        let stage = StageCost {
            layers: model.n_layers,
            tp: 1,
            peak_flops: gpu.peak_flops,
            mem_bandwidth: gpu.mem_bandwidth,
            mem_capacity: gpu.mem_capacity,
        };
        Self::assemble(vec![stage], Vec::new(), model, params)
    }

    fn assemble(stages: Vec<StageCost>, hops: Vec<Link>, model: &ModelSpec, params: &CostParams) -> Self {
        ReplicaCost {
            stages,
            hops,
            layer_params: model.params_per_layer(),
            bytes_per_param: model.bytes_per_param,
            hidden: model.hidden_size as f64,
            kv_token_layer: model.kv_bytes_per_token_layer_16bit(),
            params: params.clone(),
        }
    }

    fn allreduce(&self, s: &StageCost) -> f64 {
        if s.tp > 1 {
            2.0 * s.layers as f64 * self.params.tp_allreduce_latency
        } else {
            0.0
        }
    }

    fn hop_time(&self, tokens: f64) -> f64 {
        let bytes = tokens * self.hidden * 2.0;
        self.hops.iter().map(|l| l.transfer_time(bytes)).sum()
    }

    /// Latency of one prefill batch holding `tokens` prompt tokens.
    pub fn prefill_latency(&self, tokens: f64) -> f64 {
        let p = &self.params;
        let body: f64 = self
            .stages
            .iter()
            .map(|s| {
                let stage_params = s.layers as f64 * self.layer_params;
                let tp = s.tp as f64;
                let compute = 2.0 * stage_params * tokens / (tp * s.peak_flops * p.flops_efficiency);
                let memory = stage_params * self.bytes_per_param / (tp * s.mem_bandwidth * p.mem_efficiency);
                compute.max(memory) + self.allreduce(s)
            })
            .sum();
        body + self.hop_time(tokens)
    }

    /// Latency of one decode step for `batch` sequences of `context` tokens
    /// (fractional batches are accepted for analytic use).
    pub fn decode_step_latency(&self, batch: f64, context: f64) -> f64 {
        let p = &self.params;
        let body: f64 = self
            .stages
            .iter()
            .map(|s| {
                let layers = s.layers as f64;
                let stage_params = layers * self.layer_params;
                let tp = s.tp as f64;
                let read = stage_params * self.bytes_per_param + batch * context * self.kv_token_layer * layers;
                let memory = read / (tp * s.mem_bandwidth * p.mem_efficiency);
                let compute = 2.0 * stage_params * batch / (tp * s.peak_flops * p.flops_efficiency);
                memory.max(compute) + self.allreduce(s)
            })
            .sum();
        body + self.hop_time(batch)
    }

    /// Largest number of concurrent sequences whose KV cache fits next to
    /// the weights in every stage.
    pub fn max_decode_batch(&self, context: f64) -> usize {
        self.stages
            .iter()
            .map(|s| {
                let layers = s.layers as f64;
                let free = s.tp as f64 * s.mem_capacity - layers * self.layer_params * self.bytes_per_param;
                let per_request = context * self.kv_token_layer * layers;
                if free <= 0.0 || per_request <= 0.0 {
                    0
                } else {
                    (free / per_request).floor() as usize
                }
            })
            .min()
            .unwrap_or(0)
    }

    /// Requests per second one prefill replica sustains without batching.
    pub fn prefill_capacity(&self, mean_input: f64) -> f64 {
        1.0 / self.prefill_latency(mean_input)
    }

    /// Requests per second one decode replica sustains at full batch.
    pub fn decode_capacity(&self, context: f64, mean_output: f64) -> f64 {
        let b = self.max_decode_batch(context);
        if b == 0 {
            return 0.0;
        }
        b as f64 / (mean_output * self.decode_step_latency(b as f64, context))
    }

    /// Decode tokens per second at full batch.
    pub fn decode_throughput(&self, context: f64) -> f64 {
        let b = self.max_decode_batch(context);
        if b == 0 {
            return 0.0;
        }
        b as f64 / self.decode_step_latency(b as f64, context)
    }
}

/// The best single link (maximum bandwidth, then lowest latency) between
/// two GPU sets.
pub fn best_link(a: &[GpuId], b: &[GpuId], cluster: &ClusterSpec) -> Link {
    let mut best = Link { alpha: f64::INFINITY, beta: 0.0 };
    for &x in a {
        for &y in b {
            let l = Link { alpha: cluster.alpha(x, y), beta: cluster.beta(x, y) };
            if l.beta > best.beta || (l.beta == best.beta && l.alpha < best.alpha) {
                best = l;
            }
        }
    }
    best
}

pub fn prefill_latency(
    cfg: &ParallelConfig,
    model: &ModelSpec,
    cluster: &ClusterSpec,
    batch_tokens: usize,
    params: &CostParams,
) -> Result<f64> {
    if batch_tokens == 0 {
        return Err(Error::InvalidInput("batch must hold at least one token".into()));
    }
    Ok(ReplicaCost::new(cfg, model, cluster, params)?.prefill_latency(batch_tokens as f64))
}

pub fn decode_step_latency(
    cfg: &ParallelConfig,
    model: &ModelSpec,
    cluster: &ClusterSpec,
    batch_size: usize,
    context_len: f64,
    params: &CostParams,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::InvalidInput("decode batch must hold at least one request".into()));
    }
    Ok(ReplicaCost::new(cfg, model, cluster, params)?.decode_step_latency(batch_size as f64, context_len))
}

/// Returns 0 when the weights alone overflow a stage.
pub fn max_decode_batch(cfg: &ParallelConfig, model: &ModelSpec, cluster: &ClusterSpec, context_len: f64) -> usize {
    match ReplicaCost::new(cfg, model, cluster, &CostParams::default()) {
        Ok(cost) => cost.max_decode_batch(context_len),
        Err(_) => 0,
    }
}

/// Reference latencies of a single device: TTFT is one prefill of the mean
/// prompt, TPOT one decode step at batch 1.
pub fn reference_slo(
    gpu: &GpuType,
    model: &ModelSpec,
    workload: &WorkloadProfile,
    params: &CostParams,
    slo_scale: f64,
) -> SloSpec {
    let cost = ReplicaCost::single_device(gpu, model, params);
    SloSpec {
        ttft_ref: cost.prefill_latency(workload.mean_input_len),
        tpot_ref: cost.decode_step_latency(1.0, workload.mean_decode_context()),
        slo_scale,
        target_attainment: 0.9,
    }
}
