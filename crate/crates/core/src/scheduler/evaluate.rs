use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{SearchOptions, Solution};
use crate::cost::group_memory_feasible;
use crate::domain::{GpuId, RequestTrace};
use crate::error::{Error, Result};
use crate::orchestrator::{build_slo_matrix, solve_routing, AttainmentMode, ReplicaModels, RoutingSolution};
use crate::parallel::{best_config, ParallelConfig, Phase};
use crate::plan::{DeploymentPlan, Problem, Replica};
use crate::simulator::simulate;

/// A solution turned into a deployment plan, with its score.
#[derive(Clone, Debug)]
pub struct Evaluated {
    pub plan: DeploymentPlan,
    pub routing: RoutingSolution,
    pub score: f64,
}

/// Memoized lower-level evaluation of upper-level solutions.
///
/// Configs are cached per (GPU set, phase) and scores per canonical
/// solution. `evaluations` counts distinct solutions scored.
pub struct Evaluator<'a> {
    problem: &'a Problem,
    opts: SearchOptions,
    /// Fixed configs by GPU set, used regardless of phase when present.
    frozen: Option<HashMap<Vec<GpuId>, ParallelConfig>>,
    configs: Mutex<HashMap<(Vec<GpuId>, Phase), Option<ParallelConfig>>>,
    scores: Mutex<HashMap<Solution, f64>>,
    evaluations: AtomicUsize,
    trace: Option<RequestTrace>,
}

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a Problem, opts: &SearchOptions) -> Self {
        let trace = (opts.mode == AttainmentMode::Simulated)
            .then(|| problem.workload.generate_trace(opts.sim_requests, opts.sim_seed));
        Evaluator {
            problem,
            opts: opts.clone(),
            frozen: None,
            configs: Mutex::new(HashMap::new()),
            scores: Mutex::new(HashMap::new()),
            evaluations: AtomicUsize::new(0),
            trace,
        }
    }

    /// Evaluator that never re-derives configs: each group keeps `configs`.
    pub fn with_frozen_configs(problem: &'a Problem, opts: &SearchOptions, configs: HashMap<Vec<GpuId>, ParallelConfig>) -> Self {
        Evaluator { frozen: Some(configs), ..Evaluator::new(problem, opts) }
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn config(&self, gpus: &[GpuId], phase: Phase) -> Option<ParallelConfig> {
        if let Some(frozen) = &self.frozen {
            return frozen.get(gpus).cloned();
        }
        let key = (gpus.to_vec(), phase);
        if let Some(hit) = self.configs.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let p = self.problem;
        let group = crate::parallel::ServingGroup::new(gpus.to_vec(), phase);
        let cfg = best_config(&group, &p.model, &p.cluster, &p.workload, &p.cost).ok();
        self.configs.lock().unwrap().insert(key, cfg.clone());
        cfg
    }

    /// Score in [0, 1]; infeasible or phase-incomplete solutions score 0.
    pub fn score(&self, sol: &Solution) -> f64 {
        if let Some(&s) = self.scores.lock().unwrap().get(sol) {
            return s;
        }
        let s = self.materialize(sol).map_or(0.0, |e| e.score);
        let mut cache = self.scores.lock().unwrap();
        if cache.insert(sol.clone(), s).is_none() {
            self.evaluations.fetch_add(1, Ordering::Relaxed);
        }
        s
    }

    /// Derives configs, routes requests and scores the plan.
    pub fn materialize(&self, sol: &Solution) -> Result<Evaluated> {
        let p = self.problem;
        if !sol.has_both_phases() {
            return Err(Error::InvalidPlan("a plan needs both a prefill and a decode group".into()));
        }
        let mut replicas = Vec::with_capacity(sol.groups.len());
        for g in &sol.groups {
            if !group_memory_feasible(&g.gpus, &p.model, &p.cluster) {
                return Err(Error::NoFeasibleConfig(g.gpus.clone()));
            }
            let config = self.config(&g.gpus, g.phase).ok_or_else(|| Error::NoFeasibleConfig(g.gpus.clone()))?;
            replicas.push(Replica { group: g.clone(), config });
        }
        self.route(replicas)
    }

    /// Routes and scores a fixed set of replicas.
    pub fn route(&self, replicas: Vec<Replica>) -> Result<Evaluated> {
        let p = self.problem;
        let pre: Vec<&Replica> = replicas.iter().filter(|r| r.phase() == Phase::Prefill).collect();
        let dec: Vec<&Replica> = replicas.iter().filter(|r| r.phase() == Phase::Decode).collect();
        let models = ReplicaModels::new(&pre, &dec, p)?;
        let d = match self.opts.mode {
            AttainmentMode::Analytic => models.analytic_matrix(p, self.opts.load_basis),
            AttainmentMode::Simulated => build_slo_matrix(&pre, &dec, p, &self.opts.orchestrator())?,
        };
        let routing = solve_routing(&d, &models.routing_capacities(p.workload.arrival_rate, self.opts.load_basis), p.workload.arrival_rate)?;
        let plan = DeploymentPlan { replicas: replicas.clone(), routing: routing.plan.clone(), kv_precision: p.kv_precision };
        let score = match &self.trace {
            None => models.routed_attainment(&plan.routing, p),
            Some(trace) => simulate(&plan, &p.cluster, &p.model, trace, &p.slo, &p.cost, self.opts.sim_seed)?.attainment_e2e,
        };
        Ok(Evaluated { plan, routing, score })
    }
}
