use hetplan::domain::{GpuId, WorkloadProfile};
use hetplan::fixtures;
use hetplan::orchestrator::{build_slo_matrix, solve_routing, CapacityVector, OrchestratorOptions, SloMatrix};
use hetplan::parallel::{best_config, Phase, ServingGroup};
use hetplan::plan::Replica;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Optimum of the routing LP by enumerating every basic solution: pick
/// `m*n - 1` tight inequalities next to the equality, solve, keep the best
/// feasible point.
fn vertex_optimum(d: &[Vec<f64>], caps: &CapacityVector, rate: f64) -> f64 {
    let (m, n) = (d.len(), d[0].len());
    let v = m * n;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..m {
        let mut r = vec![0.0; v];
        (0..n).for_each(|j| r[i * n + j] = rate);
        rows.push((r, caps.prefill_cap[i]));
    }
    for j in 0..n {
        let mut r = vec![0.0; v];
        (0..m).for_each(|i| r[i * n + j] = rate);
        rows.push((r, caps.decode_cap[j]));
    }
    for k in 0..v {
        let mut r = vec![0.0; v];
        r[k] = -1.0;
        rows.push((r, 0.0));
    }
    let feasible = |z: &DVector<f64>| {
        (z.sum() - 1.0).abs() < 1e-9
            && rows.iter().all(|(r, b)| r.iter().zip(z.iter()).map(|(a, x)| a * x).sum::<f64>() <= b + 1e-9)
    };
    let obj: Vec<f64> = d.iter().flatten().copied().collect();
    let mut best = f64::NEG_INFINITY;
    let mut pick = Vec::new();
    fn choose(start: usize, left: usize, total: usize, pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if left == 0 {
            f(pick);
            return;
        }
        for k in start..=total - left {
            pick.push(k);
            choose(k + 1, left - 1, total, pick, f);
            pick.pop();
        }
    }
    choose(0, v - 1, rows.len(), &mut pick, &mut |tight: &[usize]| {
        let mut a = DMatrix::zeros(v, v);
        let mut b = DVector::zeros(v);
        for c in 0..v {
            a[(0, c)] = 1.0;
        }
        b[0] = 1.0;
        for (r, &k) in tight.iter().enumerate() {
            for c in 0..v {
                a[(r + 1, c)] = rows[k].0[c];
            }
            b[r + 1] = rows[k].1;
        }
        if let Some(z) = a.lu().solve(&b) {
            if z.iter().all(|x| x.is_finite()) && feasible(&z) {
                best = best.max(z.iter().zip(&obj).map(|(x, o)| x * o).sum());
            }
        }
    });
    best
}

fn random_instance(m: usize, n: usize, rng: &mut ChaCha8Rng) -> (SloMatrix, CapacityVector, f64) {
    let d = SloMatrix { d: (0..m).map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).collect() };
    let rate = rng.random_range(1.0..10.0);
    let share = |k: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..k).map(|_| rate * rng.random_range(0.4..1.2)).collect()
    };
    let mut caps = CapacityVector { prefill_cap: share(m, rng), decode_cap: share(n, rng) };
    // Keep total capacity above the rate so the LP is not saturated.
    for c in [&mut caps.prefill_cap, &mut caps.decode_cap] {
        let total: f64 = c.iter().sum();
        if total < rate {
            c.iter_mut().for_each(|v| *v *= 1.05 * rate / total);
        }
    }
    (d, caps, rate)
}

#[test]
fn lp_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (m, n) in [(2, 2), (3, 3)] {
        for k in 0..100 {
            let (d, caps, rate) = random_instance(m, n, &mut rng);
            let r = solve_routing(&d, &caps, rate).unwrap();
            let oracle = vertex_optimum(&d.d, &caps, rate);
            assert!(!r.saturated);
            assert!((r.objective - oracle).abs() <= 1e-9, "{m}x{n} #{k}: {} vs {oracle}", r.objective);
            r.plan.validate(m, n).unwrap();
        }
    }
}

#[test]
fn lp_dominates_random_feasible_plans() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (m, n) = (5, 5);
    let mut checked = 0;
    while checked < 1000 {
        let (d, caps, rate) = random_instance(m, n, &mut rng);
        let best = solve_routing(&d, &caps, rate).unwrap();
        for _ in 0..50 {
            let raw: Vec<f64> = (0..m * n).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
            let total: f64 = raw.iter().sum();
            let z: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let rows_ok = (0..m).all(|i| rate * (0..n).map(|j| z[i * n + j]).sum::<f64>() <= caps.prefill_cap[i]);
            let cols_ok = (0..n).all(|j| rate * (0..m).map(|i| z[i * n + j]).sum::<f64>() <= caps.decode_cap[j]);
            if !(rows_ok && cols_ok) {
                continue;
            }
            let value: f64 = z.iter().zip(d.d.iter().flatten()).map(|(a, b)| a * b).sum();
            assert!(best.objective >= value - 1e-9, "{} < {value}", best.objective);
            checked += 1;
        }
    }
}

#[test]
fn scaling_d_scales_objective_and_keeps_routing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let m = rng.random_range(1..=4);
        let n = rng.random_range(1..=4);
        let (d, caps, rate) = random_instance(m, n, &mut rng);
        let c = rng.random_range(0.1..5.0);
        let scaled = SloMatrix { d: d.d.iter().map(|r| r.iter().map(|v| v * c).collect()).collect() };
        let a = solve_routing(&d, &caps, rate).unwrap();
        let b = solve_routing(&scaled, &caps, rate).unwrap();
        assert!((b.objective - c * a.objective).abs() <= 1e-9 * c.max(1.0));
        for (ra, rb) in a.plan.z.iter().zip(&b.plan.z) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-9, "{:?} vs {:?}", a.plan.z, b.plan.z);
            }
        }
    }
}

#[test]
fn routing_always_satisfies_plan_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let m = rng.random_range(1..=5);
        let n = rng.random_range(1..=5);
        let d = SloMatrix { d: (0..m).map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).collect() };
        let caps = CapacityVector {
            prefill_cap: (0..m).map(|_| rng.random_range(0.1..3.0)).collect(),
            decode_cap: (0..n).map(|_| rng.random_range(0.1..3.0)).collect(),
        };
        let rate = rng.random_range(0.5..10.0);
        let r = solve_routing(&d, &caps, rate).unwrap();
        r.plan.validate(m, n).unwrap();
        for (i, row) in r.plan.z.iter().enumerate() {
            assert!((r.plan.x[i] - row.iter().sum::<f64>()).abs() < 1e-9);
        }
    }
}

fn refs(v: &[Replica]) -> Vec<&Replica> {
    v.iter().collect()
}

fn single_gpu_replicas(problem: &hetplan::plan::Problem, pre: &[u32], dec: &[u32]) -> (Vec<Replica>, Vec<Replica>) {
    let make = |ids: &[u32], phase| {
        ids.iter()
            .map(|&g| {
                let group = ServingGroup::new(vec![GpuId(g)], phase);
                let config = best_config(&group, &problem.model, &problem.cluster, &problem.workload, &problem.cost).unwrap();
                Replica { group, config }
            })
            .collect()
    };
    (make(pre, Phase::Prefill), make(dec, Phase::Decode))
}

#[test]
fn slo_matrix_examples() {
    let w = WorkloadProfile::constant(0.01, 512, 32);
    let problem = fixtures::problem(fixtures::homogeneous_4(), fixtures::llama_7b(), w, 50.0);
    let (pre, dec) = single_gpu_replicas(&problem, &[0, 1], &[2, 3]);
    let opts = OrchestratorOptions::default();
    let d = build_slo_matrix(&refs(&pre), &refs(&dec), &problem, &opts).unwrap();
    // Identical replicas on one node: every pair looks the same.
    let first = d.d[0][0];
    assert!(d.d.iter().flatten().all(|&v| v == first));
    assert!(first > 0.999, "{first}");

    let tight = hetplan::plan::Problem { slo: problem.slo.with_scale(0.1), ..problem.clone() };
    let d = build_slo_matrix(&refs(&pre), &refs(&dec), &tight, &opts).unwrap();
    assert!(d.d.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn simulated_matrix_agrees_on_a_slack_pair() {
    let w = WorkloadProfile::constant(0.05, 256, 16);
    let problem = fixtures::problem(fixtures::homogeneous_4(), fixtures::llama_7b(), w, 50.0);
    let (pre, dec) = single_gpu_replicas(&problem, &[0], &[1]);
    let opts = OrchestratorOptions { mode: hetplan::orchestrator::AttainmentMode::Simulated, ..Default::default() };
    let d = build_slo_matrix(&[&pre[0]], &[&dec[0]], &problem, &opts).unwrap();
    assert_eq!(d.d, vec![vec![1.0]]);
}
