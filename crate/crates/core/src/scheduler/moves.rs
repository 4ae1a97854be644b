use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::init::random_phase;
use super::Solution;
use crate::cost::group_memory_feasible;
use crate::domain::{ClusterSpec, GpuId, ModelSpec};
use crate::parallel::ServingGroup;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Flip,
    Split,
    Merge,
    Transfer,
}

const MOVES: [Move; 4] = [Move::Flip, Move::Split, Move::Merge, Move::Transfer];

/// GPUs of a group bucketed by type name.
fn by_type(gpus: &[GpuId], cluster: &ClusterSpec) -> BTreeMap<usize, Vec<GpuId>> {
    let mut out: BTreeMap<usize, Vec<GpuId>> = BTreeMap::new();
    for &g in gpus {
        out.entry(cluster.type_index(g)).or_default().push(g);
    }
    out
}

/// Splits a group by ratio `r`: the first part takes `floor(count * r)`
/// randomly chosen GPUs of each type. `None` when either part is empty.
pub fn split_group<R: Rng>(gpus: &[GpuId], r: f64, cluster: &ClusterSpec, rng: &mut R) -> Option<(Vec<GpuId>, Vec<GpuId>)> {
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for (_, mut members) in by_type(gpus, cluster) {
        members.shuffle(rng);
        let take = (members.len() as f64 * r).floor() as usize;
        first.extend_from_slice(&members[..take]);
        second.extend_from_slice(&members[take..]);
    }
    (!first.is_empty() && !second.is_empty()).then_some((first, second))
}

/// Applies one move of the given kind with random parameters; `None` when
/// the move does not apply to `sol`.
pub fn apply_move<R: Rng>(sol: &Solution, mv: Move, cluster: &ClusterSpec, rng: &mut R) -> Option<Solution> {
    let groups = &sol.groups;
    let k = groups.len();
    let mut out = groups.clone();
    match mv {
        Move::Flip => {
            let i = rng.random_range(0..k);
            out[i].phase = out[i].phase.flipped();
        }
        Move::Split => {
            let splittable: Vec<usize> = (0..k).filter(|&i| groups[i].len() >= 2).collect();
            let &i = splittable.get(rng.random_range(0..splittable.len().max(1)))?;
            let r: f64 = rng.random_range(f64::EPSILON..1.0);
            let (first, second) = split_group(&groups[i].gpus, r, cluster, rng)?;
            out.remove(i);
            out.push(ServingGroup::new(first, random_phase(rng)));
            out.push(ServingGroup::new(second, random_phase(rng)));
        }
        Move::Merge => {
            if k < 2 {
                return None;
            }
            let i = rng.random_range(0..k);
            let mut j = rng.random_range(0..k - 1);
            if j >= i {
                j += 1;
            }
            let mut gpus = groups[i].gpus.clone();
            gpus.extend_from_slice(&groups[j].gpus);
            let merged = ServingGroup::new(gpus, random_phase(rng));
            out.retain(|g| *g != groups[i] && *g != groups[j]);
            out.push(merged);
        }
        Move::Transfer => {
            if k < 2 {
                return None;
            }
            let i = rng.random_range(0..k);
            let mut j = rng.random_range(0..k - 1);
            if j >= i {
                j += 1;
            }
            let types: Vec<Vec<GpuId>> = by_type(&groups[i].gpus, cluster).into_values().collect();
            let mut members = types[rng.random_range(0..types.len())].clone();
            // The source group keeps at least one GPU.
            let limit = members.len().min(groups[i].len() - 1);
            if limit == 0 {
                return None;
            }
            let m = rng.random_range(1..=limit);
            members.shuffle(rng);
            let moved: HashSet<GpuId> = members[..m].iter().copied().collect();
            let src: Vec<GpuId> = groups[i].gpus.iter().copied().filter(|g| !moved.contains(g)).collect();
            let mut dst = groups[j].gpus.clone();
            dst.extend(moved);
            out[i] = ServingGroup::new(src, groups[i].phase);
            out[j] = ServingGroup::new(dst, groups[j].phase);
        }
    }
    Some(Solution::new(out))
}

/// Draws up to `n` distinct neighbors with moves chosen uniformly.
///
/// Candidates with a group that cannot hold the model, or rejected by
/// `excluded`, are redrawn; at most `10 n` draws are made.
pub fn neighbors<R: Rng>(
    sol: &Solution,
    n: usize,
    cluster: &ClusterSpec,
    model: &ModelSpec,
    rng: &mut R,
    excluded: &dyn Fn(&Solution) -> bool,
) -> Vec<Solution> {
    let mut out: Vec<Solution> = Vec::with_capacity(n);
    for _ in 0..10 * n {
        if out.len() == n {
            break;
        }
        let mv = MOVES[rng.random_range(0..MOVES.len())];
        let Some(cand) = apply_move(sol, mv, cluster, rng) else { continue };
        let changed = cand.groups.iter().filter(|g| !sol.groups.contains(g));
        if changed.clone().any(|g| !group_memory_feasible(&g.gpus, model, cluster)) {
            continue;
        }
        if cand == *sol || excluded(&cand) || out.contains(&cand) {
            continue;
        }
        out.push(cand);
    }
    out
}

/// Up to `n` distinct single-group phase flips, for rescheduling with
/// frozen groups.
pub fn flip_neighbors<R: Rng>(sol: &Solution, n: usize, rng: &mut R, excluded: &dyn Fn(&Solution) -> bool) -> Vec<Solution> {
    let mut order: Vec<usize> = (0..sol.groups.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    for i in order {
        if out.len() == n {
            break;
        }
        let mut groups = sol.groups.clone();
        groups[i].phase = groups[i].phase.flipped();
        let cand = Solution::new(groups);
        if !excluded(&cand) {
            out.push(cand);
        }
    }
    out
}
