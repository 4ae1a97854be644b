use rand::Rng;

use super::Solution;
use crate::cost::group_memory_feasible;
use crate::domain::{ClusterSpec, GpuId, ModelSpec};
use crate::error::{Error, Result};
use crate::parallel::{Phase, ServingGroup};

/// Agglomerative clustering of GPUs with average linkage on `1/beta`.
///
/// Returns the partition at every level, from `n` singletons down to one
/// cluster; entry `k` holds `n - k` clusters. Merges take the closest pair,
/// then the smaller merged size, then the pair with the lowest member ids.
pub fn average_linkage_levels(ids: &[GpuId], cluster: &ClusterSpec) -> Vec<Vec<Vec<GpuId>>> {
    let n = ids.len();
    let dist = |a: GpuId, b: GpuId| {
        let beta = cluster.beta(a, b);
        if beta > 0.0 { 1.0 / beta } else { f64::INFINITY }
    };
    let mut pair = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                pair[i * n + j] = dist(ids[i], ids[j]);
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let snapshot = |cs: &Vec<Vec<usize>>| -> Vec<Vec<GpuId>> {
        let mut out: Vec<Vec<GpuId>> = cs
            .iter()
            .map(|c| {
                let mut g: Vec<GpuId> = c.iter().map(|&i| ids[i]).collect();
                g.sort_unstable();
                g
            })
            .collect();
        out.sort();
        out
    };
    let mut levels = vec![snapshot(&clusters)];
    while clusters.len() > 1 {
        let linkage = |a: &[usize], b: &[usize]| {
            let mut s = 0.0;
            for &x in a {
                for &y in b {
                    s += pair[x * n + y];
                }
            }
            s / (a.len() * b.len()) as f64
        };
        let mut best: Option<(f64, usize, usize, usize, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let d = linkage(&clusters[a], &clusters[b]);
                let size = clusters[a].len() + clusters[b].len();
                let lo = clusters[a][0].min(clusters[b][0]);
                let hi = clusters[a][0].max(clusters[b][0]);
                let better = match best {
                    None => true,
                    Some((bd, bs, blo, bhi, _, _)) => d
                        .total_cmp(&bd)
                        .then(size.cmp(&bs))
                        .then((lo, hi).cmp(&(blo, bhi)))
                        .is_lt(),
                };
                if better {
                    best = Some((d, size, lo, hi, a, b));
                }
            }
        }
        let (_, _, _, _, a, b) = best.unwrap();
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
        clusters[a].sort_unstable();
        levels.push(snapshot(&clusters));
    }
    levels
}

/// Finest clustering level whose clusters can each hold the model.
pub fn memory_feasible_cut(cluster: &ClusterSpec, model: &ModelSpec) -> Result<Vec<Vec<GpuId>>> {
    let ids = cluster.ids();
    let available = cluster.total_memory(&ids);
    if !group_memory_feasible(&ids, model, cluster) {
        return Err(Error::InsufficientMemory { required: model.weight_bytes(), available });
    }
    let levels = average_linkage_levels(&ids, cluster);
    Ok(levels
        .into_iter()
        .find(|level| level.iter().all(|g| group_memory_feasible(g, model, cluster)))
        .expect("the single all-GPU cluster is feasible"))
}

/// Clustered groups with random phases, repaired so both phases appear
/// whenever there are at least two groups.
pub fn initial_solution<R: Rng>(cluster: &ClusterSpec, model: &ModelSpec, rng: &mut R) -> Result<Solution> {
    let groups = memory_feasible_cut(cluster, model)?;
    let mut phases: Vec<Phase> = groups.iter().map(|_| random_phase(rng)).collect();
    if phases.len() >= 2 && phases.iter().all(|p| *p == phases[0]) {
        let k = rng.random_range(0..phases.len());
        phases[k] = phases[k].flipped();
    }
    Ok(Solution::new(groups.into_iter().zip(phases).map(|(g, p)| ServingGroup::new(g, p)).collect()))
}

pub(crate) fn random_phase<R: Rng>(rng: &mut R) -> Phase {
    if rng.random::<bool>() {
        Phase::Prefill
    } else {
        Phase::Decode
    }
}
