//! Upper-level search over GPU grouping and phase designation.

mod evaluate;
mod init;
mod moves;

use std::collections::{HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use evaluate::{Evaluated, Evaluator};
pub use init::{average_linkage_levels, initial_solution, memory_feasible_cut};
pub use moves::{apply_move, flip_neighbors, neighbors, split_group, Move};

use crate::domain::{detect_shift, GpuId, WorkloadProfile, DEFAULT_SHIFT_THRESHOLD};
use crate::error::{Error, Result};
use crate::orchestrator::{AttainmentMode, LoadBasis, OrchestratorOptions};
use crate::parallel::{ParallelConfig, Phase, ServingGroup};
use crate::plan::{DeploymentPlan, Problem, Replica};
use crate::simulator::simulate;

/// Groups with phases, kept in canonical (sorted) order so equal
/// solutions compare and hash equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Solution {
    pub groups: Vec<ServingGroup>,
}

impl Solution {
    pub fn new(mut groups: Vec<ServingGroup>) -> Self {
        groups.sort();
        Solution { groups }
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.groups.iter().filter(|g| g.phase == phase).count()
    }

    pub fn has_both_phases(&self) -> bool {
        self.count(Phase::Prefill) > 0 && self.count(Phase::Decode) > 0
    }

    pub fn from_plan(plan: &DeploymentPlan) -> Self {
        Solution::new(plan.replicas.iter().map(|r| r.group.clone()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabuParams {
    pub n_step: usize,
    pub n_nghb: usize,
    pub n_mem: usize,
    pub rng_seed: u64,
}

impl Default for TabuParams {
    fn default() -> Self {
        TabuParams { n_step: 100, n_nghb: 10, n_mem: 5, rng_seed: 0 }
    }
}

impl TabuParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_nghb == 0 || self.n_mem == 0 {
            return Err(Error::InvalidInput("neighbor count and tabu memory must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    /// How candidates are scored inside the search.
    pub mode: AttainmentMode,
    pub load_basis: LoadBasis,
    /// Trace length for simulated scoring and for the final re-score.
    pub sim_requests: usize,
    pub sim_seed: u64,
    /// Relative change that counts as a workload shift.
    pub shift_threshold: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            mode: AttainmentMode::Analytic,
            load_basis: LoadBasis::Share,
            sim_requests: 1000,
            sim_seed: 0,
            shift_threshold: DEFAULT_SHIFT_THRESHOLD,
        }
    }
}

impl SearchOptions {
    pub fn orchestrator(&self) -> OrchestratorOptions {
        OrchestratorOptions {
            mode: self.mode,
            load_basis: self.load_basis,
            sim_requests: self.sim_requests.min(OrchestratorOptions::default().sim_requests),
            sim_seed: self.sim_seed,
        }
    }
}

/// One row of the convergence trace; step 0 is the initial solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub best_score: f64,
    pub current_score: f64,
    /// Distinct solutions evaluated so far.
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub plan: DeploymentPlan,
    pub solution: Solution,
    /// Best score under the search's scoring mode.
    pub score: f64,
    /// E2E attainment of the final plan on a seeded synthetic trace.
    pub simulated_score: f64,
    pub steps: Vec<StepRecord>,
    pub evaluations: usize,
    pub seed: u64,
}

/// Scores every candidate (in parallel) and returns the best, breaking
/// ties toward the smallest canonical form.
fn pick_best(cands: Vec<Solution>, eval: &Evaluator) -> (Solution, f64) {
    let scored: Vec<(f64, Solution)> = cands.into_par_iter().map(|s| (eval.score(&s), s)).collect();
    scored
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
        .map(|(s, x)| (x, s))
        .unwrap()
}

/// The tabu loop shared by full and flip-only search.
fn run_tabu(
    start: Solution,
    params: &TabuParams,
    eval: &Evaluator,
    rng: &mut ChaCha8Rng,
    draw: &dyn Fn(&Solution, &mut ChaCha8Rng, &dyn Fn(&Solution) -> bool) -> Vec<Solution>,
) -> (Solution, f64, Vec<StepRecord>) {
    let mut current = start;
    let mut current_score = eval.score(&current);
    let mut best = current.clone();
    let mut best_score = current_score;
    let mut tabu: VecDeque<Solution> = VecDeque::with_capacity(params.n_mem + 1);
    let mut steps = vec![StepRecord { step: 0, best_score, current_score, evaluations: eval.evaluations() }];
    for step in 1..=params.n_step {
        let cands = draw(&current, rng, &|s: &Solution| tabu.contains(s));
        if cands.is_empty() {
            break;
        }
        let (next, score) = pick_best(cands, eval);
        if score > best_score {
            best = next.clone();
            best_score = score;
        }
        tabu.push_back(next.clone());
        while tabu.len() > params.n_mem {
            tabu.pop_front();
        }
        current = next;
        current_score = score;
        steps.push(StepRecord { step, best_score, current_score, evaluations: eval.evaluations() });
    }
    (best, best_score, steps)
}

fn final_score(plan: &DeploymentPlan, problem: &Problem, opts: &SearchOptions) -> Result<f64> {
    let trace = problem.workload.generate_trace(opts.sim_requests, opts.sim_seed);
    Ok(simulate(plan, &problem.cluster, &problem.model, &trace, &problem.slo, &problem.cost, opts.sim_seed)?.attainment_e2e)
}

/// Tabu search over groupings and phases, starting from the clustered
/// initial solution.
pub fn tabu_search(problem: &Problem, params: &TabuParams, opts: &SearchOptions) -> Result<SearchOutcome> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let start = initial_solution(&problem.cluster, &problem.model, &mut rng)?;
    search_from(start, problem, params, opts, &mut rng)
}

/// Tabu search from a given starting solution.
pub fn search_from(
    start: Solution,
    problem: &Problem,
    params: &TabuParams,
    opts: &SearchOptions,
    rng: &mut ChaCha8Rng,
) -> Result<SearchOutcome> {
    let eval = Evaluator::new(problem, opts);
    let (cluster, model) = (&problem.cluster, &problem.model);
    let draw = |s: &Solution, rng: &mut ChaCha8Rng, ex: &dyn Fn(&Solution) -> bool| neighbors(s, params.n_nghb, cluster, model, rng, ex);
    let (best, score, steps) = run_tabu(start, params, &eval, rng, &draw);
    let evaluated = eval.materialize(&best).map_err(|e| match e {
        Error::InsufficientMemory { .. } => e,
        other => Error::InfeasibleRouting(format!("no feasible plan found: {other}")),
    })?;
    let simulated_score = final_score(&evaluated.plan, problem, opts)?;
    Ok(SearchOutcome {
        plan: evaluated.plan,
        solution: best,
        score,
        simulated_score,
        steps,
        evaluations: eval.evaluations(),
        seed: params.rng_seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RescheduleEvent {
    WorkloadShift { profile: WorkloadProfile },
    GpusOffline { gpu_ids: Vec<GpuId> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescheduleOutcome {
    pub plan: DeploymentPlan,
    pub score: f64,
    pub simulated_score: f64,
    /// Groups dropped because they lost GPUs.
    pub removed_groups: Vec<ServingGroup>,
    pub steps: Vec<StepRecord>,
    pub evaluations: usize,
    /// False when the event did not call for any change.
    pub searched: bool,
}

/// Phase-flip-only re-search with group membership and configs frozen,
/// followed by re-routing.
///
/// `problem` describes the situation after the event; for a workload shift
/// its workload is replaced by the event's profile, and the search only
/// runs when the shift exceeds `opts.shift_threshold`.
pub fn lightweight_reschedule(
    plan: &DeploymentPlan,
    event: &RescheduleEvent,
    problem: &Problem,
    params: &TabuParams,
    opts: &SearchOptions,
) -> Result<RescheduleOutcome> {
    params.validate()?;
    let mut problem = problem.clone();
    let mut removed_groups = Vec::new();
    let mut survivors: Vec<Replica> = plan.replicas.clone();
    match event {
        RescheduleEvent::WorkloadShift { profile } => {
            profile.validate()?;
            if !detect_shift(&problem.workload, profile, opts.shift_threshold) {
                let score = Evaluator::new(&problem, opts).route(plan.replicas.clone())?.score;
                return Ok(RescheduleOutcome {
                    plan: plan.clone(),
                    score,
                    simulated_score: final_score(plan, &problem, opts)?,
                    removed_groups,
                    steps: Vec::new(),
                    evaluations: 0,
                    searched: false,
                });
            }
            problem.workload = profile.clone();
        }
        RescheduleEvent::GpusOffline { gpu_ids } => {
            let (hit, kept): (Vec<Replica>, Vec<Replica>) =
                survivors.into_iter().partition(|r| r.group.gpus.iter().any(|g| gpu_ids.contains(g)));
            removed_groups = hit.into_iter().map(|r| r.group).collect();
            survivors = kept;
        }
    }
    if survivors.len() < 2 {
        return Err(Error::NoSurvivingPhasePair);
    }
    let frozen: HashMap<Vec<GpuId>, ParallelConfig> = survivors.iter().map(|r| (r.group.gpus.clone(), r.config.clone())).collect();
    let eval = Evaluator::with_frozen_configs(&problem, opts, frozen);
    let start = Solution::new(survivors.iter().map(|r| r.group.clone()).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let draw = |s: &Solution, rng: &mut ChaCha8Rng, ex: &dyn Fn(&Solution) -> bool| flip_neighbors(s, params.n_nghb, rng, ex);
    let (best, score, steps) = run_tabu(start, params, &eval, &mut rng, &draw);
    let evaluated = eval.materialize(&best).map_err(|_| Error::NoSurvivingPhasePair)?;
    let simulated_score = final_score(&evaluated.plan, &problem, opts)?;
    Ok(RescheduleOutcome {
        plan: evaluated.plan,
        score,
        simulated_score,
        removed_groups,
        steps,
        evaluations: eval.evaluations(),
        searched: true,
    })
}

/// Every assignment of GPUs to groups and phases, for exhaustive search on
/// tiny clusters. Grows as Bell(n) * 2^groups.
pub fn enumerate_solutions(gpus: &[GpuId]) -> Vec<Solution> {
    let mut partitions: Vec<Vec<Vec<GpuId>>> = vec![Vec::new()];
    for &g in gpus {
        let mut next = Vec::new();
        for p in &partitions {
            for k in 0..p.len() {
                let mut q = p.clone();
                q[k].push(g);
                next.push(q);
            }
            let mut q = p.clone();
            q.push(vec![g]);
            next.push(q);
        }
        partitions = next;
    }
    let mut out = Vec::new();
    for p in partitions {
        for bits in 0..1u32 << p.len() {
            let groups = p
                .iter()
                .enumerate()
                .map(|(k, g)| ServingGroup::new(g.clone(), if bits >> k & 1 == 1 { Phase::Decode } else { Phase::Prefill }))
                .collect();
            out.push(Solution::new(groups));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts() {
        // Bell(3) partitions: {3}, {2,1} x3, {1,1,1}; phases double per group.
        let ids: Vec<GpuId> = (0..3).map(GpuId).collect();
        assert_eq!(enumerate_solutions(&ids).len(), 2 + 3 * 4 + 8);
        let two: Vec<GpuId> = (0..2).map(GpuId).collect();
        assert_eq!(enumerate_solutions(&two).len(), 6);
    }

    #[test]
    fn tabu_never_reselects_a_listed_solution() {
        let problem = crate::fixtures::problem(
            crate::fixtures::homogeneous_4(),
            crate::fixtures::llama_7b(),
            crate::fixtures::coding(2.0),
            3.0,
        );
        let params = TabuParams { n_step: 60, n_nghb: 4, n_mem: 5, rng_seed: 1 };
        let eval = Evaluator::new(&problem, &SearchOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start = initial_solution(&problem.cluster, &problem.model, &mut rng).unwrap();
        let visited = std::cell::RefCell::new(Vec::new());
        let draw = |s: &Solution, rng: &mut ChaCha8Rng, ex: &dyn Fn(&Solution) -> bool| {
            visited.borrow_mut().push(s.clone());
            neighbors(s, params.n_nghb, &problem.cluster, &problem.model, rng, ex)
        };
        let (_, _, steps) = run_tabu(start, &params, &eval, &mut rng, &draw);
        let visited = visited.into_inner();
        assert!(visited.len() > 10);
        // visited[t] is the solution selected at step t; the start is never
        // listed.
        for t in 1..visited.len() {
            let listed = &visited[t.saturating_sub(params.n_mem).max(1)..t];
            assert!(listed.len() <= params.n_mem);
            assert!(!listed.contains(&visited[t]), "step {t}");
        }
        assert!(steps.windows(2).all(|w| w[1].best_score >= w[0].best_score));
    }

    #[test]
    fn canonical_order() {
        let a = ServingGroup::new(vec![GpuId(2)], Phase::Decode);
        let b = ServingGroup::new(vec![GpuId(0), GpuId(1)], Phase::Prefill);
        assert_eq!(Solution::new(vec![a.clone(), b.clone()]), Solution::new(vec![b, a]));
    }
}
