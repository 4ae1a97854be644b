//! Built-in clusters, models and workload profiles.
//!
//! GPU figures follow vendor datasheets and public cloud list prices.
//! Links inside a node default to PCIe-class bandwidth; links between nodes
//! to a 40 Gbps network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{reference_slo, CostParams, KvPrecision};
use crate::domain::{ClusterSpec, Gpu, GpuId, GpuType, ModelSpec, WorkloadProfile};
use crate::error::{Error, Result};
use crate::plan::Problem;

pub const GB: f64 = 1e9;
pub const TFLOPS: f64 = 1e12;

pub fn gpu_type(name: &str) -> Option<GpuType> {
    let t = |bw: f64, tf: f64, mem: f64, price: f64| GpuType {
        name: name.to_string(),
        mem_bandwidth: bw * GB,
        peak_flops: tf * TFLOPS,
        mem_capacity: mem * GB,
        price,
    };
    Some(match name {
        "A100" => t(2000.0, 312.0, 80.0, 1.753),
        "A6000" => t(768.0, 38.7, 48.0, 0.483),
        "A5000" => t(626.8, 27.8, 24.0, 0.223),
        "A40" => t(696.0, 149.7, 48.0, 0.403),
        "3090Ti" => t(1008.0, 71.0, 24.0, 0.307),
        _ => return None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkSpec {
    pub alpha: f64,
    pub beta: f64,
}

pub const PCIE: LinkSpec = LinkSpec { alpha: 10e-6, beta: 20.0 * GB };
pub const NVLINK: LinkSpec = LinkSpec { alpha: 5e-6, beta: 300.0 * GB };
pub const NET_40G: LinkSpec = LinkSpec { alpha: 100e-6, beta: 5.0 * GB };

/// Builds a cluster from `(gpu type, count)` nodes with uniform intra- and
/// inter-node links. GPU ids are assigned in node order.
pub fn build_cluster(nodes: &[(&str, usize)], intra: LinkSpec, inter: LinkSpec) -> ClusterSpec {
    let mut types: Vec<GpuType> = Vec::new();
    let mut gpus = Vec::new();
    for (node, &(name, count)) in nodes.iter().enumerate() {
        if !types.iter().any(|t| t.name == name) {
            types.push(gpu_type(name).unwrap_or_else(|| panic!("unknown GPU type {name}")));
        }
        for _ in 0..count {
            gpus.push(Gpu { id: GpuId(gpus.len() as u32), gpu_type: name.to_string(), node: node as u32 });
        }
    }
    let n = gpus.len();
    let mut alpha = vec![vec![0.0; n]; n];
    let mut beta = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let link = if i == j {
                let bw = types.iter().find(|t| t.name == gpus[i].gpu_type).unwrap().mem_bandwidth;
                LinkSpec { alpha: 0.0, beta: bw.max(intra.beta) }
            } else if gpus[i].node == gpus[j].node {
                intra
            } else {
                inter
            };
            alpha[i][j] = link.alpha;
            beta[i][j] = link.beta;
        }
    }
    ClusterSpec::new(types, gpus, alpha, beta)
}

/// 32 rented GPUs: two 4xA6000, two 4xA5000, one 8xA40 and two 4x3090Ti
/// instances.
pub fn cloud_32() -> ClusterSpec {
    build_cluster(
        &[("A6000", 4), ("A6000", 4), ("A5000", 4), ("A5000", 4), ("A40", 8), ("3090Ti", 4), ("3090Ti", 4)],
        PCIE,
        NET_40G,
    )
}

/// One 8xA100 server with NVLink.
pub fn inhouse_a100_8() -> ClusterSpec {
    build_cluster(&[("A100", 8)], NVLINK, NET_40G)
}

/// Sixteen A5000s in four identical nodes.
pub fn symmetric_16() -> ClusterSpec {
    build_cluster(&[("A5000", 4); 4], PCIE, NET_40G)
}

/// Random mix of 4- and 8-GPU nodes of the cloud GPU types totalling
/// `n_gpus` (a multiple of 4).
pub fn synthetic_hetero(n_gpus: usize, seed: u64) -> ClusterSpec {
    assert!(n_gpus % 4 == 0 && n_gpus > 0, "GPU count must be a positive multiple of 4");
    let kinds = ["A6000", "A5000", "A40", "3090Ti"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let mut left = n_gpus;
    while left > 0 {
        let size = if left >= 8 && rng.random::<f64>() < 0.25 { 8 } else { 4 };
        nodes.push((kinds[rng.random_range(0..kinds.len())], size));
        left -= size;
    }
    build_cluster(&nodes, PCIE, NET_40G)
}

pub fn homogeneous_4() -> ClusterSpec {
    build_cluster(&[("A6000", 4)], PCIE, NET_40G)
}

pub fn two_type_4() -> ClusterSpec {
    build_cluster(&[("A40", 2), ("3090Ti", 2)], PCIE, NET_40G)
}

pub fn bandwidth_split_4() -> ClusterSpec {
    build_cluster(&[("A5000", 2), ("A5000", 2)], PCIE, NET_40G)
}

pub fn llama_7b() -> ModelSpec {
    ModelSpec::new("llama-7b", 32, 4096, 6.7e9)
}

pub fn llama_13b() -> ModelSpec {
    ModelSpec::new("llama-13b", 40, 5120, 13.0e9)
}

pub fn llama_30b() -> ModelSpec {
    ModelSpec::new("llama-30b", 60, 6656, 32.5e9)
}

fn sampled(rate: f64, seed: u64, input: (u32, u32), output: (u32, u32)) -> WorkloadProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 256;
    let ins = (0..n).map(|_| rng.random_range(input.0..=input.1)).collect();
    let outs = (0..n).map(|_| rng.random_range(output.0..=output.1)).collect();
    WorkloadProfile::from_samples(rate, ins, outs)
}

/// Long prompts, short answers.
pub fn coding(rate: f64) -> WorkloadProfile {
    sampled(rate, 11, (768, 2048), (4, 32))
}

/// Long prompts, long answers.
pub fn conversation(rate: f64) -> WorkloadProfile {
    sampled(rate, 12, (512, 1536), (64, 384))
}

pub fn long_input(rate: f64) -> WorkloadProfile {
    WorkloadProfile::constant(rate, 1024, 16)
}

pub fn short_input(rate: f64) -> WorkloadProfile {
    WorkloadProfile::constant(rate, 128, 256)
}

pub const CLUSTER_NAMES: &[&str] = &[
    "cloud_32",
    "inhouse_a100_8",
    "symmetric_16",
    "hetero_16",
    "hetero_24",
    "hetero_32",
    "homogeneous_4",
    "two_type_4",
    "bandwidth_split_4",
];

pub fn cluster(name: &str) -> Result<ClusterSpec> {
    Ok(match name {
        "cloud_32" => cloud_32(),
        "inhouse_a100_8" => inhouse_a100_8(),
        "symmetric_16" => symmetric_16(),
        "hetero_16" => synthetic_hetero(16, 16),
        "hetero_24" => synthetic_hetero(24, 24),
        "hetero_32" => synthetic_hetero(32, 32),
        "homogeneous_4" => homogeneous_4(),
        "two_type_4" => two_type_4(),
        "bandwidth_split_4" => bandwidth_split_4(),
        _ => return Err(Error::InvalidInput(format!("unknown cluster fixture {name}"))),
    })
}

pub const MODEL_NAMES: &[&str] = &["llama-7b", "llama-13b", "llama-30b"];

pub fn model(name: &str) -> Result<ModelSpec> {
    Ok(match name {
        "llama-7b" => llama_7b(),
        "llama-13b" => llama_13b(),
        "llama-30b" => llama_30b(),
        _ => return Err(Error::InvalidInput(format!("unknown model fixture {name}"))),
    })
}

pub const PROFILE_NAMES: &[&str] = &["coding", "conversation", "long_input", "short_input"];

pub fn profile(name: &str, rate: f64) -> Result<WorkloadProfile> {
    Ok(match name {
        "coding" => coding(rate),
        "conversation" => conversation(rate),
        "long_input" => long_input(rate),
        "short_input" => short_input(rate),
        _ => return Err(Error::InvalidInput(format!("unknown workload fixture {name}"))),
    })
}

/// A planning problem whose SLO references come from one A100 serving the
/// model alone.
pub fn problem(cluster: ClusterSpec, model: ModelSpec, workload: WorkloadProfile, slo_scale: f64) -> Problem {
    let cost = CostParams::default();
    let slo = reference_slo(&gpu_type("A100").unwrap(), &model, &workload, &cost, slo_scale);
    Problem { cluster, model, workload, slo, kv_precision: KvPrecision::default(), cost }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_cluster;

    #[test]
    fn every_fixture_cluster_validates() {
        for name in CLUSTER_NAMES {
            let c = cluster(name).unwrap();
            assert_eq!(validate_cluster(&c), vec![], "{name}");
        }
    }

    #[test]
    fn cloud_fixture_shape() {
        let c = cloud_32();
        assert_eq!(c.len(), 32);
        let count = |t: &str| c.gpus().iter().filter(|g| g.gpu_type == t).count();
        assert_eq!((count("A6000"), count("A5000"), count("A40"), count("3090Ti")), (8, 8, 8, 8));
        assert!((c.total_price(&c.ids()) - 11.328).abs() < 1e-9);
    }

    #[test]
    fn profiles_have_the_intended_shape() {
        let c = coding(1.0);
        assert!(c.mean_input_len > 50.0 * c.mean_output_len);
        let v = conversation(1.0);
        assert!(v.mean_output_len > 5.0 * c.mean_output_len);
        c.validate().unwrap();
        v.validate().unwrap();
    }

    #[test]
    fn synthetic_sizes() {
        for n in [16, 24, 32] {
            assert_eq!(synthetic_hetero(n, n as u64).len(), n);
        }
    }
}
