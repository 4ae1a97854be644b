#![allow(dead_code)]

use hetplan::domain::{ClusterSpec, Gpu, GpuId};
use hetplan::fixtures::gpu_type;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TYPES: [&str; 4] = ["A6000", "A5000", "A40", "3090Ti"];

/// Random cluster of `n` GPUs in nodes of 1 to 4 GPUs, one type per node,
/// with a random symmetric bandwidth matrix (faster inside nodes).
pub fn random_cluster(n: usize, seed: u64) -> ClusterSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gpus = Vec::new();
    let mut types = Vec::new();
    let mut node = 0;
    while gpus.len() < n {
        let size = rng.random_range(1..=4).min(n - gpus.len());
        let name = TYPES[rng.random_range(0..TYPES.len())];
        if !types.iter().any(|t: &hetplan::domain::GpuType| t.name == name) {
            types.push(gpu_type(name).unwrap());
        }
        for _ in 0..size {
            gpus.push(Gpu { id: GpuId(gpus.len() as u32), gpu_type: name.to_string(), node });
        }
        node += 1;
    }
    let mut alpha = vec![vec![0.0; n]; n];
    let mut beta = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let same = gpus[i].node == gpus[j].node;
            let b = if same { rng.random_range(10e9..300e9) } else { rng.random_range(1e9..10e9) };
            let a = if same { 1e-5 } else { 1e-4 };
            beta[i][j] = b;
            beta[j][i] = b;
            alpha[i][j] = a;
            alpha[j][i] = a;
        }
    }
    for i in 0..n {
        let row_max = beta[i].iter().cloned().fold(0.0, f64::max);
        beta[i][i] = row_max.max(600e9);
    }
    ClusterSpec::new(types, gpus, alpha, beta)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                go(prefix, used, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}
