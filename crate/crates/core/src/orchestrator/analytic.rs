//! Closed-form attainment estimates for prefill/decode replica pairs.
//!
//! Prefill replicas are treated as M/D/1 queues with service time equal to
//! one unbatched prefill of the mean prompt. A decode replica's concurrency
//! follows Little's law, `N = rate * mean_output * step(N)`, and its step
//! time is taken at that fixed point.

use crate::cost::{kv_link, kv_request_time, CostParams, KvPrecision, Link, ReplicaCost};
use crate::domain::{ClusterSpec, ModelSpec, SloSpec, WorkloadProfile};
use crate::error::Result;
use crate::parallel::ParallelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct PrefillModel {
    pub cost: ReplicaCost,
    /// Seconds per request at the mean prompt length.
    pub service: f64,
}

impl PrefillModel {
    pub fn new(cfg: &ParallelConfig, model: &ModelSpec, cluster: &ClusterSpec, workload: &WorkloadProfile, params: &CostParams) -> Result<Self> {
        let cost = ReplicaCost::new(cfg, model, cluster, params)?;
        let service = cost.prefill_latency(workload.mean_input_len);
        Ok(PrefillModel { cost, service })
    }

    pub fn capacity(&self) -> f64 {
        1.0 / self.service
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeModel {
    pub cost: ReplicaCost,
    pub max_batch: usize,
    pub context: f64,
    pub mean_output: f64,
}

impl DecodeModel {
    pub fn new(cfg: &ParallelConfig, model: &ModelSpec, cluster: &ClusterSpec, workload: &WorkloadProfile, params: &CostParams) -> Result<Self> {
        let cost = ReplicaCost::new(cfg, model, cluster, params)?;
        let context = workload.mean_decode_context();
        let max_batch = cost.max_decode_batch(context);
        Ok(DecodeModel { cost, max_batch, context, mean_output: workload.mean_output_len })
    }

    pub fn step(&self, batch: f64) -> f64 {
        self.cost.decode_step_latency(batch.max(1.0), self.context)
    }

    /// Requests per second at a full batch; zero when no request fits.
    pub fn capacity(&self) -> f64 {
        if self.max_batch == 0 {
            return 0.0;
        }
        let b = self.max_batch as f64;
        b / (self.mean_output * self.step(b))
    }

    /// Step latency at the steady-state batch for `rate`, or `None` when the
    /// replica cannot keep up.
    pub fn steady_step(&self, rate: f64) -> Option<f64> {
        if self.max_batch == 0 {
            return None;
        }
        let excess = |n: f64| rate * self.mean_output * self.step(n) - n;
        let hi = self.max_batch as f64;
        if excess(hi) > 0.0 {
            return None;
        }
        let (mut lo, mut hi) = (0.0, hi);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(self.step(hi))
    }
}

/// Bottleneck link and per-request KV shipping time for a replica pair.
pub fn pair_kv_time(
    prefill: &ParallelConfig,
    decode: &ParallelConfig,
    model: &ModelSpec,
    cluster: &ClusterSpec,
    workload: &WorkloadProfile,
    prec: KvPrecision,
    params: &CostParams,
) -> Result<(Link, f64)> {
    let link = kv_link(prefill, decode, cluster)?;
    Ok((link, kv_request_time(&link, workload.mean_input_len, model, prec, params)))
}

/// Estimated fraction of requests meeting the E2E deadline when the
/// prefill replica receives `prefill_rate` and the decode replica
/// `decode_rate` requests per second.
pub fn pair_attainment(
    prefill: &PrefillModel,
    decode: &DecodeModel,
    kv_time: f64,
    prefill_rate: f64,
    decode_rate: f64,
    slo: &SloSpec,
) -> f64 {
    let rho = prefill_rate * prefill.service;
    if rho >= 1.0 {
        return 0.0;
    }
    let Some(step) = decode.steady_step(decode_rate) else { return 0.0 };
    let base = prefill.service + kv_time + decode.mean_output * step;
    let slack = slo.e2e_deadline(decode.mean_output) - base;
    if slack < 0.0 {
        return 0.0;
    }
    // Heavy-traffic tail of the M/D/1 waiting time.
    let miss = rho * (-2.0 * (1.0 - rho) * slack / prefill.service).exp();
    (1.0 - miss).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Gpu, GpuId, GpuType};
    use crate::parallel::Stage;

    fn fixture() -> (ClusterSpec, ModelSpec, ParallelConfig, ParallelConfig) {
        let t = GpuType { name: "g".into(), mem_bandwidth: 1e12, peak_flops: 1e14, mem_capacity: 80e9, price: 1.0 };
        let cluster = ClusterSpec::new(
            vec![t],
            vec![Gpu { id: GpuId(0), gpu_type: "g".into(), node: 0 }, Gpu { id: GpuId(1), gpu_type: "g".into(), node: 0 }],
            vec![vec![0.0, 1e-5], vec![1e-5, 0.0]],
            vec![vec![1e12, 2e10], vec![2e10, 1e12]],
        );
        let model = ModelSpec::new("m", 32, 4096, 6.7e9);
        let single = |id| ParallelConfig { tp: 1, pp: 1, stages: vec![Stage { gpus: vec![GpuId(id)], layers: 32 }] };
        (cluster, model, single(0), single(1))
    }

    #[test]
    fn idle_pair_with_slack_attains_fully() {
        let (cluster, model, p, d) = fixture();
        let w = WorkloadProfile::constant(1.0, 512, 64);
        let params = CostParams::default();
        let pm = PrefillModel::new(&p, &model, &cluster, &w, &params).unwrap();
        let dm = DecodeModel::new(&d, &model, &cluster, &w, &params).unwrap();
        let (_, kv) = pair_kv_time(&p, &d, &model, &cluster, &w, KvPrecision::BITS_16, &params).unwrap();
        let slo = SloSpec { ttft_ref: pm.service, tpot_ref: dm.step(1.0), slo_scale: 10.0, target_attainment: 0.9 };
        let a = pair_attainment(&pm, &dm, kv, 1e-6, 1e-6, &slo);
        assert!(a > 0.999, "{a}");
        // Deadline below the unloaded latency.
        let tight = slo.with_scale(0.5);
        assert_eq!(pair_attainment(&pm, &dm, kv, 1e-6, 1e-6, &tight), 0.0);
        // Prefill overload.
        assert_eq!(pair_attainment(&pm, &dm, kv, 2.0 * pm.capacity(), 1e-6, &slo), 0.0);
    }

    #[test]
    fn decode_fixed_point_satisfies_littles_law() {
        let (cluster, model, _, d) = fixture();
        let w = WorkloadProfile::constant(1.0, 512, 64);
        let dm = DecodeModel::new(&d, &model, &cluster, &w, &CostParams::default()).unwrap();
        let rate = 0.5 * dm.capacity();
        let step = dm.steady_step(rate).unwrap();
        let n = rate * dm.mean_output * step;
        assert!((dm.step(n) - step).abs() <= 1e-9 * step);
        assert!(dm.steady_step(1.01 * dm.capacity()).is_none());
    }
}
