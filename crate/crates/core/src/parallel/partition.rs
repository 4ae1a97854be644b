use crate::domain::ModelSpec;
use crate::error::{Error, Result};

/// Splits the model's layers over pipeline stages.
///
/// `stage_capacities` holds per-GPU `(mem_bytes, flops)` for each stage;
/// a stage has `tp` such GPUs. Layers are assigned in proportion to the
/// geometric mean of each stage's normalized memory and normalized FLOPS,
/// rounded by largest remainder, then repaired so no GPU holds more weight
/// than it can.
pub fn partition_layers(stage_capacities: &[(f64, f64)], model: &ModelSpec, tp: usize) -> Result<Vec<usize>> {
    let k = stage_capacities.len();
    let n = model.n_layers;
    if k == 0 || tp == 0 {
        return Err(Error::InvalidInput("partition needs at least one stage and tp >= 1".into()));
    }
    if k > n {
        return Err(Error::InfeasiblePartition);
    }
    let layer_bytes = model.layer_bytes();
    let caps: Vec<usize> = stage_capacities
        .iter()
        .map(|&(mem, _)| {
            let mut cap = ((tp as f64 * mem / layer_bytes).floor() as usize).min(n);
            // Align with the cost model's per-GPU check despite rounding.
            while cap > 0 && cap as f64 * layer_bytes / tp as f64 > mem {
                cap -= 1;
            }
            cap
        })
        .collect();
    if caps.iter().sum::<usize>() < n || caps.contains(&0) {
        return Err(Error::InfeasiblePartition);
    }

    let mem_total: f64 = stage_capacities.iter().map(|c| c.0).sum();
    let flops_total: f64 = stage_capacities.iter().map(|c| c.1).sum();
    let scores: Vec<f64> = stage_capacities
        .iter()
        .map(|&(m, f)| ((m / mem_total) * (f / flops_total)).sqrt())
        .collect();
    let mut layers = largest_remainder(&scores, n);

    // Every stage holds at least one layer.
    for s in 0..k {
        if layers[s] == 0 {
            let donor = (0..k).max_by(|&a, &b| layers[a].cmp(&layers[b]).then(b.cmp(&a))).unwrap();
            layers[donor] -= 1;
            layers[s] = 1;
        }
    }

    // Move surplus layers to the stage with the most slack.
    while let Some(over) = (0..k).find(|&s| layers[s] > caps[s]) {
        let slack = |s: usize| caps[s] as isize - layers[s] as isize;
        let target = (0..k).max_by(|&a, &b| slack(a).cmp(&slack(b)).then(b.cmp(&a))).unwrap();
        if slack(target) <= 0 {
            return Err(Error::InfeasiblePartition);
        }
        let moved = (layers[over] - caps[over]).min(slack(target) as usize);
        layers[over] -= moved;
        layers[target] += moved;
    }
    Ok(layers)
}

/// Apportions `total` units by `weights`; leftover units go to the largest
/// fractional parts, lower index first on ties.
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}
