//! Pairwise SLO-attainment matrix and the routing LP between prefill and
//! decode replicas.

mod analytic;
mod simplex;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use analytic::{pair_attainment, pair_kv_time, DecodeModel, PrefillModel};
pub use simplex::{Cmp, Constraint, LinearProgram, LpSolution};

use crate::domain::RequestTrace;
use crate::error::{Error, Result};
use crate::plan::{DeploymentPlan, Problem, Replica};
use crate::simulator::simulate;

/// `d[i][j]`: estimated attainment of prefill replica `i` paired with
/// decode replica `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SloMatrix {
    pub d: Vec<Vec<f64>>,
}

impl SloMatrix {
    pub fn m(&self) -> usize {
        self.d.len()
    }

    pub fn n(&self) -> usize {
        self.d.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.d {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Sustainable request rates per replica.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityVector {
    pub prefill_cap: Vec<f64>,
    pub decode_cap: Vec<f64>,
}

/// `x[i]`: share of requests sent to prefill `i`; `y[i][j]`: share of those
/// forwarded to decode `j`; `z[i][j] = x[i] * y[i][j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingPlan {
    pub x: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

const ROUTING_TOLERANCE: f64 = 1e-9;

impl RoutingPlan {
    /// Recovers `x` and `y` from a joint distribution; rows that receive
    /// no traffic get a uniform `y`.
    pub fn from_joint(z: Vec<Vec<f64>>) -> Self {
        let x: Vec<f64> = z.iter().map(|row| row.iter().sum()).collect();
        let y = z
            .iter()
            .zip(&x)
            .map(|(row, &xi)| {
                if xi > 1e-15 {
                    row.iter().map(|v| v / xi).collect()
                } else {
                    vec![1.0 / row.len() as f64; row.len()]
                }
            })
            .collect();
        RoutingPlan { x, y, z }
    }

    /// Spreads traffic evenly over every pair.
    pub fn uniform(m: usize, n: usize) -> Self {
        RoutingPlan::from_joint(vec![vec![1.0 / (m * n) as f64; n]; m])
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidPlan(format!("routing: {msg}")));
        if self.x.len() != m || self.y.len() != m || self.z.len() != m {
            return bad(&format!("expected {m} prefill rows"));
        }
        if self.y.iter().chain(&self.z).any(|r| r.len() != n) {
            return bad(&format!("expected {n} decode columns"));
        }
        let all = self.x.iter().chain(self.y.iter().flatten()).chain(self.z.iter().flatten());
        if all.clone().any(|v| !v.is_finite() || *v < -ROUTING_TOLERANCE) {
            return bad("negative or non-finite entry");
        }
        let close = |v: f64| (v - 1.0).abs() <= 1e-6;
        if !close(self.x.iter().sum()) || !close(self.z.iter().flatten().sum()) {
            return bad("x and z must sum to one");
        }
        if self.y.iter().any(|r| !close(r.iter().sum())) {
            return bad("every row of y must sum to one");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingSolution {
    pub plan: RoutingPlan,
    pub objective: f64,
    /// True when the offered rate exceeds total prefill or decode capacity.
    pub saturated: bool,
    /// Rate the capacity constraints were written for.
    pub effective_rate: f64,
}

/// Maximizes expected attainment over joint routing shares under
/// per-replica capacity limits.
///
/// When the rate exceeds capacity the LP is solved at the largest
/// sustainable rate and the result is flagged. Among optimal routings the
/// one with the lowest peak utilization is returned.
pub fn solve_routing(d: &SloMatrix, caps: &CapacityVector, rate: f64) -> Result<RoutingSolution> {
    let (m, n) = (d.m(), d.n());
    if m == 0 || n == 0 || d.d.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("attainment matrix must be a non-empty rectangle".into()));
    }
    if caps.prefill_cap.len() != m || caps.decode_cap.len() != n {
        return Err(Error::InvalidInput("capacity vector does not match the attainment matrix".into()));
    }
    if caps.prefill_cap.iter().chain(&caps.decode_cap).any(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(Error::InfeasibleRouting("replica capacities must be positive".into()));
    }
    if !(rate > 0.0) {
        return Err(Error::InvalidInput("arrival rate must be positive".into()));
    }
    let total_p: f64 = caps.prefill_cap.iter().sum();
    let total_d: f64 = caps.decode_cap.iter().sum();
    let effective = rate.min(total_p).min(total_d);
    let saturated = effective < rate;

    let vars = m * n;
    let idx = |i: usize, j: usize| i * n + j;
    let base = |extra: usize| {
        let mut lp = LinearProgram::new(vec![0.0; vars + extra]);
        let mut row = vec![0.0; vars + extra];
        row[..vars].fill(1.0);
        lp.add(row, Cmp::Eq, 1.0);
        lp
    };
    let obj: Vec<f64> = d.d.iter().flatten().copied().collect();

    let mut first = base(0);
    first.objective = obj.clone();
    for i in 0..m {
        let mut row = vec![0.0; vars];
        (0..n).for_each(|j| row[idx(i, j)] = effective);
        first.add(row, Cmp::Le, caps.prefill_cap[i]);
    }
    for j in 0..n {
        let mut row = vec![0.0; vars];
        (0..m).for_each(|i| row[idx(i, j)] = effective);
        first.add(row, Cmp::Le, caps.decode_cap[j]);
    }
    let best = first.solve()?;

    // Second pass: keep the optimum, minimize the peak utilization u.
    let mut second = base(1);
    second.objective[vars] = -1.0;
    let mut keep = obj.clone();
    keep.push(0.0);
    second.add(keep, Cmp::Ge, best.objective - 1e-12 * best.objective.abs().max(1.0));
    for i in 0..m {
        let mut row = vec![0.0; vars + 1];
        (0..n).for_each(|j| row[idx(i, j)] = effective);
        let mut capped = row.clone();
        row[vars] = -caps.prefill_cap[i];
        second.add(row, Cmp::Le, 0.0);
        capped[vars] = 0.0;
        second.add(capped, Cmp::Le, caps.prefill_cap[i]);
    }
    for j in 0..n {
        let mut row = vec![0.0; vars + 1];
        (0..m).for_each(|i| row[idx(i, j)] = effective);
        let mut capped = row.clone();
        row[vars] = -caps.decode_cap[j];
        second.add(row, Cmp::Le, 0.0);
        capped[vars] = 0.0;
        second.add(capped, Cmp::Le, caps.decode_cap[j]);
    }
    let flat = match second.solve() {
        Ok(s) => s.x[..vars].to_vec(),
        Err(_) => best.x,
    };
    let total: f64 = flat.iter().map(|v| v.max(0.0)).sum();
    let z: Vec<Vec<f64>> = (0..m).map(|i| (0..n).map(|j| flat[idx(i, j)].max(0.0) / total).collect()).collect();
    let objective = z.iter().flatten().zip(&obj).map(|(a, b)| a * b).sum();
    Ok(RoutingSolution { plan: RoutingPlan::from_joint(z), objective, saturated, effective_rate: effective })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttainmentMode {
    #[default]
    Analytic,
    Simulated,
}

/// Load assumed for each pair when filling the attainment matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadBasis {
    /// Each replica sees its capacity-proportional share of the rate.
    #[default]
    Share,
    /// Each pair sees the whole arrival rate.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorOptions {
    pub mode: AttainmentMode,
    pub load_basis: LoadBasis,
    /// Trace length for simulated attainment entries.
    pub sim_requests: usize,
    pub sim_seed: u64,
}

impl Default for OrchestratorOptions {
    fn default() -> Self {
        OrchestratorOptions { mode: AttainmentMode::Analytic, load_basis: LoadBasis::Share, sim_requests: 300, sim_seed: 0 }
    }
}

/// Cost models of a set of replicas, ready for matrix construction.
#[derive(Clone, Debug)]
pub struct ReplicaModels {
    pub prefills: Vec<PrefillModel>,
    pub decodes: Vec<DecodeModel>,
    /// `kv[i][j]`: per-request KV shipping time.
    pub kv: Vec<Vec<f64>>,
}

impl ReplicaModels {
    pub fn new(prefills: &[&Replica], decodes: &[&Replica], problem: &Problem) -> Result<Self> {
        let Problem { cluster, model, workload, cost, kv_precision, .. } = problem;
        let p = prefills
            .iter()
            .map(|r| PrefillModel::new(&r.config, model, cluster, workload, cost))
            .collect::<Result<Vec<_>>>()?;
        let d = decodes
            .iter()
            .map(|r| DecodeModel::new(&r.config, model, cluster, workload, cost))
            .collect::<Result<Vec<_>>>()?;
        let mut kv = Vec::with_capacity(prefills.len());
        for a in prefills {
            let mut row = Vec::with_capacity(decodes.len());
            for b in decodes {
                row.push(pair_kv_time(&a.config, &b.config, model, cluster, workload, *kv_precision, cost)?.1);
            }
            kv.push(row);
        }
        Ok(ReplicaModels { prefills: p, decodes: d, kv })
    }

    pub fn capacities(&self) -> CapacityVector {
        CapacityVector {
            prefill_cap: self.prefills.iter().map(PrefillModel::capacity).collect(),
            decode_cap: self.decodes.iter().map(DecodeModel::capacity).collect(),
        }
    }

    /// Per-replica arrival rates assumed by the attainment matrix.
    pub fn pair_rates(&self, rate: f64, basis: LoadBasis) -> (Vec<f64>, Vec<f64>) {
        let caps = self.capacities();
        match basis {
            LoadBasis::Full => (vec![rate; caps.prefill_cap.len()], vec![rate; caps.decode_cap.len()]),
            LoadBasis::Share => {
                let share = |c: &[f64]| {
                    let total: f64 = c.iter().sum();
                    c.iter().map(|v| if total > 0.0 { rate * v / total } else { rate }).collect()
                };
                (share(&caps.prefill_cap), share(&caps.decode_cap))
            }
        }
    }

    /// Capacities handed to the routing LP. Under `Share` each replica is
    /// held to its proportional share so routed loads match the loads the
    /// attainment matrix assumed.
    pub fn routing_capacities(&self, rate: f64, basis: LoadBasis) -> CapacityVector {
        let caps = self.capacities();
        match basis {
            LoadBasis::Full => caps,
            LoadBasis::Share => {
                let (lp, ld) = self.pair_rates(rate, basis);
                let cap = |c: &[f64], s: Vec<f64>| c.iter().zip(s).map(|(c, s)| c.min(s)).collect();
                CapacityVector { prefill_cap: cap(&caps.prefill_cap, lp), decode_cap: cap(&caps.decode_cap, ld) }
            }
        }
    }

    pub fn analytic_matrix(&self, problem: &Problem, basis: LoadBasis) -> SloMatrix {
        let (lp, ld) = self.pair_rates(problem.workload.arrival_rate, basis);
        let d = (0..self.prefills.len())
            .map(|i| {
                (0..self.decodes.len())
                    .map(|j| pair_attainment(&self.prefills[i], &self.decodes[j], self.kv[i][j], lp[i], ld[j], &problem.slo))
                    .collect()
            })
            .collect();
        SloMatrix { d }
    }

    /// Expected E2E attainment of a routing, with every pair evaluated at
    /// the rates the routing actually sends it.
    pub fn routed_attainment(&self, routing: &RoutingPlan, problem: &Problem) -> f64 {
        let rate = problem.workload.arrival_rate;
        let col: Vec<f64> = (0..self.decodes.len()).map(|j| routing.z.iter().map(|r| r[j]).sum()).collect();
        let mut total = 0.0;
        for (i, row) in routing.z.iter().enumerate() {
            for (j, &z) in row.iter().enumerate() {
                if z > 0.0 {
                    let a = pair_attainment(
                        &self.prefills[i],
                        &self.decodes[j],
                        self.kv[i][j],
                        rate * routing.x[i],
                        rate * col[j],
                        &problem.slo,
                    );
                    total += z * a;
                }
            }
        }
        total.clamp(0.0, 1.0)
    }
}

/// Fills the pairwise attainment matrix, either from the closed form or by
/// simulating each pair in isolation on a seeded synthetic trace.
pub fn build_slo_matrix(
    prefills: &[&Replica],
    decodes: &[&Replica],
    problem: &Problem,
    opts: &OrchestratorOptions,
) -> Result<SloMatrix> {
    if prefills.is_empty() || decodes.is_empty() {
        return Err(Error::InvalidInput("need at least one prefill and one decode replica".into()));
    }
    let models = ReplicaModels::new(prefills, decodes, problem)?;
    match opts.mode {
        AttainmentMode::Analytic => Ok(models.analytic_matrix(problem, opts.load_basis)),
        AttainmentMode::Simulated => {
            let (lp, ld) = models.pair_rates(problem.workload.arrival_rate, opts.load_basis);
            let mut d = vec![vec![0.0; decodes.len()]; prefills.len()];
            for (i, p) in prefills.iter().enumerate() {
                for (j, q) in decodes.iter().enumerate() {
                    let rate = lp[i].max(ld[j]);
                    let trace = problem.workload.with_rate(rate).generate_trace(opts.sim_requests, opts.sim_seed);
                    d[i][j] = simulate_pair(p, q, &trace, problem, opts.sim_seed)?;
                }
            }
            Ok(SloMatrix { d })
        }
    }
}

fn simulate_pair(p: &Replica, q: &Replica, trace: &RequestTrace, problem: &Problem, seed: u64) -> Result<f64> {
    let plan = DeploymentPlan {
        replicas: vec![p.clone(), q.clone()],
        routing: RoutingPlan::uniform(1, 1),
        kv_precision: problem.kv_precision,
    };
    let r = simulate(&plan, &problem.cluster, &problem.model, trace, &problem.slo, &problem.cost, seed)?;
    Ok(r.attainment_e2e)
}
