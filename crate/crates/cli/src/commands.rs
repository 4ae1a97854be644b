use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use hetplan::domain::{GpuId, RequestTrace, SloSpec};
use hetplan::fixtures;
use hetplan::parallel::{Phase, ServingGroup};
use hetplan::plan::{DeploymentPlan, Problem};
use hetplan::scheduler::{lightweight_reschedule, tabu_search, RescheduleEvent, SearchOptions, TabuParams};
use hetplan::simulator::{write_curve_csv, Simulator};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::inputs::{self, read_json, RunConfig};
use crate::{
    CliError, CliResult, FixturesArgs, GenTraceArgs, PlanArgs, RescheduleArgs, SimulateArgs, SweepArgs, ValidateArgs,
};

/// How a plan was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Best score under the search's scoring mode.
    pub score: f64,
    /// E2E attainment on the trace drawn with `search.sim_requests` and
    /// `search.sim_seed`.
    pub simulated_score: f64,
    pub evaluations: usize,
    pub steps: usize,
    pub tabu: TabuParams,
    pub search: SearchOptions,
    /// Rental price of the GPUs in the plan, currency/hour.
    pub price: f64,
    pub prefill_replicas: usize,
    pub decode_replicas: usize,
}

/// Contents of plan.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub problem: Problem,
    pub plan: DeploymentPlan,
    pub provenance: Provenance,
}

impl PlanFile {
    fn new(problem: Problem, plan: DeploymentPlan, score: f64, simulated_score: f64, evaluations: usize, steps: usize, tabu: &TabuParams, search: &SearchOptions) -> Self {
        let provenance = Provenance {
            seed: tabu.rng_seed,
            score,
            simulated_score,
            evaluations,
            steps,
            tabu: tabu.clone(),
            search: search.clone(),
            price: problem.cluster.total_price(&plan.gpus()),
            prefill_replicas: plan.prefills().len(),
            decode_replicas: plan.decodes().len(),
        };
        PlanFile { problem, plan, provenance }
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let file: PlanFile = read_json(path)?;
        file.plan
            .validate(&file.problem.cluster, &file.problem.model)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Ok(file)
    }
}

/// Contents of run.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub out: String,
    pub seed: u64,
    pub tabu: TabuParams,
    pub search: SearchOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseFlip {
    pub gpus: Vec<GpuId>,
    pub from: Phase,
    pub to: Phase,
}

/// Traffic share of one group before and after rescheduling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareChange {
    pub gpus: Vec<GpuId>,
    pub phase: Phase,
    pub before: f64,
    pub after: f64,
}

/// Contents of diff.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDiff {
    pub searched: bool,
    pub removed_groups: Vec<ServingGroup>,
    pub phase_flips: Vec<PhaseFlip>,
    /// Groups of the new plan whose GPU set did not exist before.
    pub membership_changes: usize,
    /// Surviving groups whose parallel config changed.
    pub config_changes: usize,
    pub routing_delta: Vec<ShareChange>,
    pub score_before: f64,
    pub score_after: f64,
    pub simulated_before: f64,
    pub simulated_after: f64,
    pub evaluations: usize,
    /// Distinct candidates a fresh full search evaluated, with
    /// `--compare-full`.
    pub full_search_evaluations: Option<usize>,
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Input(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn manifest(command: &str, inputs: &[(&str, Option<String>)], out: &Path, tabu: &TabuParams, search: &SearchOptions) -> RunManifest {
    RunManifest {
        command: command.into(),
        inputs: inputs.iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))).collect(),
        out: out.display().to_string(),
        seed: tabu.rng_seed,
        tabu: tabu.clone(),
        search: search.clone(),
    }
}

fn problem_inputs(a: &crate::ProblemArgs) -> Vec<(&'static str, Option<String>)> {
    let path = |p: &Option<std::path::PathBuf>| p.as_ref().map(|p| p.display().to_string());
    vec![
        ("cluster", Some(a.cluster.clone())),
        ("model", Some(a.model.clone())),
        ("profile", a.profile.clone()),
        ("trace", path(&a.trace)),
        ("rate", a.rate.map(|r| r.to_string())),
        ("slo", path(&a.slo)),
        ("slo_scale", a.slo_scale.map(|s| s.to_string())),
        ("kv_bits", a.kv_bits.clone()),
        ("config", path(&a.config)),
    ]
}

pub fn plan(a: &PlanArgs) -> CliResult<()> {
    let config = inputs::load_config(a.problem.config.as_deref())?;
    let problem = inputs::build_problem(&a.problem, &config)?;
    let (tabu, search) = inputs::search_settings(&a.search, &config)?;
    let start = Instant::now();
    let out = tabu_search(&problem, &tabu, &search)?;
    eprintln!(
        "planned in {:.2?}: score {:.4}, simulated {:.4}, {} evaluations",
        start.elapsed(),
        out.score,
        out.simulated_score,
        out.evaluations
    );
    create_out(&a.out)?;
    let file = PlanFile::new(problem, out.plan, out.score, out.simulated_score, out.evaluations, out.steps.len() - 1, &tabu, &search);
    write_json(&a.out.join("plan.json"), &file)?;
    write_csv(&a.out.join("convergence.csv"), &out.steps)?;
    write_json(&a.out.join("run.json"), &manifest("plan", &problem_inputs(&a.problem), &a.out, &tabu, &search))
}

/// The trace a plan was scored on during planning.
fn planning_trace(file: &PlanFile) -> RequestTrace {
    let s = &file.provenance.search;
    file.problem.workload.generate_trace(s.sim_requests, s.sim_seed)
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let file = PlanFile::read(&a.plan)?;
    let scales = inputs::parse_sweep(&a.slo_scale_sweep)?;
    let trace = match &a.trace {
        Some(path) => inputs::load_trace(path)?,
        None => planning_trace(&file),
    };
    if trace.is_empty() {
        return Err(CliError::Input("trace is empty".into()));
    }
    let mut slo: SloSpec = match &a.slo {
        Some(path) => read_json(path)?,
        None => file.problem.slo.clone(),
    };
    if let Some(s) = a.slo_scale {
        slo = slo.with_scale(s);
    }
    slo.validate()?;
    let seed = a.seed.unwrap_or(file.provenance.search.sim_seed);
    let p = &file.problem;
    let start = Instant::now();
    let result = Simulator::new(&file.plan, &p.cluster, &p.model, &p.cost)?.run(&trace, &slo, seed, None)?;
    eprintln!("simulated {} requests in {:.2?}", trace.len(), start.elapsed());
    create_out(&a.out)?;
    write_json(&a.out.join("metrics.json"), &result.summary())?;
    let requests = File::create(a.out.join("requests.csv"))?;
    result.write_requests_csv(BufWriter::new(requests))?;
    let curve = File::create(a.out.join("attainment_curve.csv"))?;
    write_curve_csv(&result.curve(&slo, &scales), BufWriter::new(curve))?;
    let path = |p: &Option<std::path::PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let inputs = [
        ("plan", Some(a.plan.display().to_string())),
        ("trace", path(&a.trace)),
        ("slo", path(&a.slo)),
        ("slo_scale", a.slo_scale.map(|s| s.to_string())),
        ("slo_scale_sweep", Some(a.slo_scale_sweep.clone())),
    ];
    let search = SearchOptions { sim_seed: seed, ..file.provenance.search.clone() };
    write_json(&a.out.join("run.json"), &manifest("simulate", &inputs, &a.out, &file.provenance.tabu, &search))
}

/// Traffic share per group: `x` for prefill rows, column sums of `z` for
/// decode columns.
fn shares(plan: &DeploymentPlan) -> BTreeMap<Vec<GpuId>, f64> {
    let mut out = BTreeMap::new();
    for (i, r) in plan.prefills().into_iter().enumerate() {
        out.insert(r.group.gpus.clone(), plan.routing.x[i]);
    }
    for (j, r) in plan.decodes().into_iter().enumerate() {
        out.insert(r.group.gpus.clone(), plan.routing.z.iter().map(|row| row[j]).sum());
    }
    out
}

pub fn diff_plans(old: &DeploymentPlan, new: &DeploymentPlan) -> (Vec<PhaseFlip>, usize, usize, Vec<ShareChange>) {
    let before: BTreeMap<&[GpuId], _> = old.replicas.iter().map(|r| (r.group.gpus.as_slice(), r)).collect();
    let (old_share, new_share) = (shares(old), shares(new));
    let (mut flips, mut membership, mut configs, mut routing) = (Vec::new(), 0, 0, Vec::new());
    for r in &new.replicas {
        let gpus = &r.group.gpus;
        let Some(prev) = before.get(gpus.as_slice()) else {
            membership += 1;
            continue;
        };
        if prev.phase() != r.phase() {
            flips.push(PhaseFlip { gpus: gpus.clone(), from: prev.phase(), to: r.phase() });
        }
        if prev.config != r.config {
            configs += 1;
        }
        let (b, a) = (old_share[gpus], new_share[gpus]);
        if (a - b).abs() > 1e-9 || prev.phase() != r.phase() {
            routing.push(ShareChange { gpus: gpus.clone(), phase: r.phase(), before: b, after: a });
        }
    }
    (flips, membership, configs, routing)
}

pub fn reschedule(a: &RescheduleArgs) -> CliResult<()> {
    let file = PlanFile::read(&a.plan)?;
    let event: RescheduleEvent = read_json(&a.event)?;
    let config = RunConfig { tabu: file.provenance.tabu.clone(), search: file.provenance.search.clone(), ..RunConfig::default() };
    let (tabu, search) = inputs::search_settings(&a.search, &config)?;
    let mut problem = file.problem.clone();
    match &event {
        RescheduleEvent::GpusOffline { gpu_ids } => {
            if let Some(id) = gpu_ids.iter().find(|g| !problem.cluster.contains(**g)) {
                return Err(CliError::Input(format!("gpu {id} is not part of the cluster")));
            }
            problem.cluster = problem.cluster.without(gpu_ids);
        }
        RescheduleEvent::WorkloadShift { .. } => {}
    }
    let start = Instant::now();
    let out = lightweight_reschedule(&file.plan, &event, &problem, &tabu, &search)?;
    eprintln!("rescheduled in {:.2?}: score {:.4}, {} evaluations", start.elapsed(), out.score, out.evaluations);
    if let (RescheduleEvent::WorkloadShift { profile }, true) = (&event, out.searched) {
        problem.workload = profile.clone();
    }
    let full_search_evaluations = if a.compare_full && out.searched {
        let start = Instant::now();
        let full = tabu_search(&problem, &tabu, &search)?;
        eprintln!("full search in {:.2?}: score {:.4}, {} evaluations", start.elapsed(), full.score, full.evaluations);
        Some(full.evaluations)
    } else {
        None
    };
    let (phase_flips, membership_changes, config_changes, routing_delta) = diff_plans(&file.plan, &out.plan);
    let diff = PlanDiff {
        searched: out.searched,
        removed_groups: out.removed_groups.clone(),
        phase_flips,
        membership_changes,
        config_changes,
        routing_delta,
        score_before: file.provenance.score,
        score_after: out.score,
        simulated_before: file.provenance.simulated_score,
        simulated_after: out.simulated_score,
        evaluations: out.evaluations,
        full_search_evaluations,
    };
    create_out(&a.out)?;
    let steps = out.steps.len().saturating_sub(1);
    let new = PlanFile::new(problem, out.plan, out.score, out.simulated_score, out.evaluations, steps, &tabu, &search);
    write_json(&a.out.join("plan.json"), &new)?;
    write_json(&a.out.join("diff.json"), &diff)?;
    let inputs = [("plan", Some(a.plan.display().to_string())), ("event", Some(a.event.display().to_string()))];
    write_json(&a.out.join("run.json"), &manifest("reschedule", &inputs, &a.out, &tabu, &search))
}

#[derive(Serialize)]
struct SweepRow {
    slo_scale: f64,
    score: f64,
    simulated_score: f64,
    prefill_replicas: usize,
    decode_replicas: usize,
    evaluations: usize,
}

pub fn sweep(a: &SweepArgs) -> CliResult<()> {
    let config = inputs::load_config(a.problem.config.as_deref())?;
    let base = inputs::build_problem(&a.problem, &config)?;
    let (tabu, search) = inputs::search_settings(&a.search, &config)?;
    let scales = inputs::parse_sweep(&a.slo_scale_sweep)?;
    let mut rows = Vec::with_capacity(scales.len());
    for s in scales {
        let problem = Problem { slo: base.slo.with_scale(s), ..base.clone() };
        let start = Instant::now();
        let out = tabu_search(&problem, &tabu, &search)?;
        eprintln!("scale {s}: score {:.4} in {:.2?}", out.score, start.elapsed());
        rows.push(SweepRow {
            slo_scale: s,
            score: out.score,
            simulated_score: out.simulated_score,
            prefill_replicas: out.plan.prefills().len(),
            decode_replicas: out.plan.decodes().len(),
            evaluations: out.evaluations,
        });
    }
    create_out(&a.out)?;
    write_csv(&a.out.join("sweep.csv"), &rows)?;
    let mut inputs = problem_inputs(&a.problem);
    inputs.push(("slo_scale_sweep", Some(a.slo_scale_sweep.clone())));
    write_json(&a.out.join("run.json"), &manifest("sweep", &inputs, &a.out, &tabu, &search))
}

pub fn gen_trace(a: &GenTraceArgs) -> CliResult<()> {
    let profile = inputs::load_profile(&a.profile, a.rate)?;
    if a.requests == 0 {
        return Err(CliError::Input("--requests must be at least 1".into()));
    }
    let trace = profile.generate_trace(a.requests, a.seed);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_out(dir)?;
    }
    let mut w = BufWriter::new(File::create(&a.out)?);
    trace.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn validate(a: &ValidateArgs) -> CliResult<()> {
    let cluster = inputs::load_cluster(&a.cluster)?;
    if let Some(path) = &a.plan {
        let file: PlanFile = read_json(path)?;
        if let Err(e) = file.plan.validate(&cluster, &file.problem.model) {
            return Err(CliError::Violations(json!([{ "code": "InvalidPlan", "message": e.to_string() }])));
        }
    }
    println!("[]");
    Ok(())
}

pub fn fixtures(a: &FixturesArgs) -> CliResult<()> {
    for (kind, names) in [("clusters", fixtures::CLUSTER_NAMES), ("models", fixtures::MODEL_NAMES), ("profiles", fixtures::PROFILE_NAMES)] {
        let dir = a.out.join(kind);
        create_out(&dir)?;
        for name in names {
            let path = dir.join(format!("{name}.json"));
            match kind {
                "clusters" => write_json(&path, &fixtures::cluster(name)?)?,
                "models" => write_json(&path, &fixtures::model(name)?)?,
                _ => write_json(&path, &fixtures::profile(name, inputs::DEFAULT_RATE)?)?,
            }
        }
    }
    Ok(())
}
