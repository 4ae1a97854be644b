use crate::domain::{ClusterSpec, GpuId};
use crate::error::{Error, Result};

/// Widest stage count the bitmask DP accepts.
pub const MAX_ROUTED_STAGES: usize = 16;

/// Best single link between two stages: the maximum member-pair bandwidth.
pub fn stage_bandwidth(a: &[GpuId], b: &[GpuId], cluster: &ClusterSpec) -> f64 {
    let mut best = 0.0f64;
    for &x in a {
        for &y in b {
            best = best.max(cluster.beta(x, y));
        }
    }
    best
}

/// Orders pipeline stages to maximize the smallest bandwidth between
/// consecutive stages.
///
/// Returns the ordering and its bottleneck bandwidth (`+inf` for a single
/// stage). Among optimal orderings the lexicographically smallest is
/// returned.
pub fn route_pipeline(stage_sets: &[Vec<GpuId>], cluster: &ClusterSpec) -> Result<(Vec<usize>, f64)> {
    let n = stage_sets.len();
    if n > MAX_ROUTED_STAGES {
        return Err(Error::TooManyStages(n));
    }
    if n == 0 {
        return Err(Error::InvalidInput("no stages to route".into()));
    }
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let b = stage_bandwidth(&stage_sets[i], &stage_sets[j], cluster);
            w[i * n + j] = b;
            w[j * n + i] = b;
        }
    }
    Ok(route_weights(n, &w))
}

/// Bitmask DP over a dense symmetric weight matrix.
///
/// `tail[mask][last]` is the best bottleneck achievable when the stages in
/// `mask` are already placed and `last` is the current end of the path.
/// Working backwards lets the ordering be rebuilt greedily from the front,
/// picking the smallest index that keeps the optimum reachable.
pub(crate) fn route_weights(n: usize, w: &[f64]) -> (Vec<usize>, f64) {
    let full = (1usize << n) - 1;
    let mut tail = vec![f64::NEG_INFINITY; (full + 1) * n];
    for last in 0..n {
        tail[full * n + last] = f64::INFINITY;
    }
    for mask in (1..full).rev() {
        for last in 0..n {
            if mask & (1 << last) == 0 {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let v = w[last * n + next].min(tail[(mask | 1 << next) * n + next]);
                if v > best {
                    best = v;
                }
            }
            tail[mask * n + last] = best;
        }
    }
    let opt = (0..n).map(|s| tail[(1 << s) * n + s]).fold(f64::NEG_INFINITY, f64::max);
    let first = (0..n).find(|&s| tail[(1 << s) * n + s] == opt).unwrap();
    let mut order = vec![first];
    let mut mask = 1usize << first;
    while mask != full {
        let last = *order.last().unwrap();
        let next = (0..n)
            .filter(|&j| mask & (1 << j) == 0)
            .find(|&j| w[last * n + j].min(tail[(mask | 1 << j) * n + j]) >= opt)
            .unwrap();
        order.push(next);
        mask |= 1 << next;
    }
    (order, opt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bottleneck(order: &[usize], n: usize, w: &[f64]) -> f64 {
        order.windows(2).map(|p| w[p[0] * n + p[1]]).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn three_stage_example() {
        // b(0,1)=10, b(1,2)=1, b(0,2)=5
        let w = [0.0, 10.0, 5.0, 10.0, 0.0, 1.0, 5.0, 1.0, 0.0];
        let (order, b) = route_weights(3, &w);
        assert_eq!(b, 5.0);
        assert_eq!(order, vec![1, 0, 2]);
        assert_eq!(bottleneck(&order, 3, &w), 5.0);
    }

    #[test]
    fn single_stage_is_unbounded() {
        let (order, b) = route_weights(1, &[0.0]);
        assert_eq!(order, vec![0]);
        assert!(b.is_infinite() && b > 0.0);
    }

    #[test]
    fn two_stages_use_their_link() {
        let (order, b) = route_weights(2, &[0.0, 7.0, 7.0, 0.0]);
        assert_eq!(order, vec![0, 1]);
        assert_eq!(b, 7.0);
    }
}
