use std::fs;
use std::path::{Path, PathBuf};

use hetplan::domain::GpuId;
use hetplan::parallel::Phase;
use hetplan_cli::{run, PlanDiff, PlanFile, EXIT_INFEASIBLE, EXIT_INPUT};
use serde_json::json;

fn hetplan(args: &[&str]) -> i32 {
    run(std::iter::once("hetplan").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn plan_into(dir: &Path, args: &[&str]) -> PlanFile {
    let mut full = vec!["plan", "--out", s(dir)];
    full.extend_from_slice(args);
    assert_eq!(hetplan(&full), 0);
    serde_json::from_str(&fs::read_to_string(dir.join("plan.json")).unwrap()).unwrap()
}

const SMALL: &[&str] = &["--cluster", "two_type_4", "--model", "llama-7b", "--profile", "coding", "--rate", "1", "--slo-scale", "2", "--steps", "30"];

fn gpus_of(file: &PlanFile, phase: Phase) -> Vec<GpuId> {
    file.plan.replicas.iter().filter(|r| r.phase() == phase).flat_map(|r| r.group.gpus.clone()).collect()
}

fn write_event(path: &Path, event: serde_json::Value) -> PathBuf {
    fs::write(path, event.to_string()).unwrap();
    path.to_path_buf()
}

#[test]
fn plan_writes_a_valid_plan_and_a_convergence_trace() {
    let dir = tempfile::tempdir().unwrap();
    let file = plan_into(dir.path(), SMALL);
    file.plan.validate(&file.problem.cluster, &file.problem.model).unwrap();
    assert!(file.provenance.score > 0.0);
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,best_score,current_score,evaluations"));
    let best: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(best.len(), 31);
    assert!(best.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*best.last().unwrap(), file.provenance.score);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "plan");
    assert_eq!(manifest["inputs"]["cluster"], "two_type_4");
}

#[test]
fn simulate_reproduces_the_planning_score() {
    let dir = tempfile::tempdir().unwrap();
    let file = plan_into(&dir.path().join("plan"), SMALL);
    let out = dir.path().join("sim");
    let plan = dir.path().join("plan/plan.json");
    assert_eq!(hetplan(&["simulate", "--plan", s(&plan), "--out", s(&out), "--slo-scale-sweep", "0.5:6:0.5"]), 0);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let e2e = metrics["attainment_e2e"].as_f64().unwrap();
    assert!(e2e >= file.provenance.simulated_score - 0.02, "{e2e} vs {}", file.provenance.simulated_score);
    assert!(metrics["throughput_tps"].as_f64().unwrap() > 0.0);

    let curve = fs::read_to_string(out.join("attainment_curve.csv")).unwrap();
    let rows: Vec<Vec<f64>> = curve.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 12);
    for col in 1..4 {
        assert!(rows.windows(2).all(|w| w[1][col] >= w[0][col]), "column {col} not monotone");
    }
    let requests = fs::read_to_string(out.join("requests.csv")).unwrap();
    assert_eq!(requests.lines().count(), 1 + file.provenance.search.sim_requests);
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"gpu_types\": [").unwrap();
    assert_eq!(hetplan(&["plan", "--cluster", s(&bad), "--model", "llama-7b", "--profile", "coding"]), EXIT_INPUT);
    assert_eq!(hetplan(&["validate", "--cluster", s(&bad)]), EXIT_INPUT);

    let mut cluster: serde_json::Value = serde_json::to_value(hetplan::fixtures::two_type_4()).unwrap();
    cluster["beta"][0][1] = json!(1.0);
    fs::write(&bad, cluster.to_string()).unwrap();
    assert_eq!(hetplan(&["validate", "--cluster", s(&bad)]), EXIT_INPUT);
    assert_eq!(hetplan(&["validate", "--cluster", "two_type_4"]), 0);

    assert_eq!(hetplan(&["plan", "--cluster", "nowhere", "--model", "llama-7b", "--profile", "coding"]), EXIT_INPUT);
    assert_eq!(hetplan(&["plan", "--cluster", "two_type_4", "--model", "llama-7b", "--profile", "coding", "--kv-bits", "3"]), EXIT_INPUT);
    assert_eq!(hetplan(&["plan", "--cluster", "two_type_4", "--model", "llama-7b"]), EXIT_INPUT);
}

#[test]
fn empty_trace_and_invalid_plan_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = plan_into(&dir.path().join("p"), SMALL);
    let plan = dir.path().join("p/plan.json");
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("s");
    assert_eq!(hetplan(&["simulate", "--plan", s(&plan), "--trace", s(&empty), "--out", s(&out)]), EXIT_INPUT);

    file.plan.routing.x[0] = 7.0;
    let broken = dir.path().join("broken.json");
    fs::write(&broken, serde_json::to_string(&file).unwrap()).unwrap();
    assert_eq!(hetplan(&["simulate", "--plan", s(&broken), "--out", s(&out)]), EXIT_INPUT);
    assert_eq!(hetplan(&["validate", "--cluster", "two_type_4", "--plan", s(&broken)]), EXIT_INPUT);
}

#[test]
fn noop_shift_gives_an_empty_diff() {
    let dir = tempfile::tempdir().unwrap();
    let file = plan_into(&dir.path().join("p"), SMALL);
    let event = write_event(&dir.path().join("ev.json"), json!({ "type": "workload_shift", "profile": file.problem.workload }));
    let out = dir.path().join("r");
    let plan = dir.path().join("p/plan.json");
    assert_eq!(hetplan(&["reschedule", "--plan", s(&plan), "--event", s(&event), "--out", s(&out)]), 0);
    let diff: PlanDiff = serde_json::from_str(&fs::read_to_string(out.join("diff.json")).unwrap()).unwrap();
    assert!(!diff.searched);
    assert!(diff.removed_groups.is_empty() && diff.phase_flips.is_empty() && diff.routing_delta.is_empty());
    assert_eq!((diff.membership_changes, diff.config_changes, diff.evaluations), (0, 0, 0));
    let new: PlanFile = serde_json::from_str(&fs::read_to_string(out.join("plan.json")).unwrap()).unwrap();
    assert_eq!(new.plan, file.plan);
}

#[test]
fn losing_every_prefill_gpu_of_a_two_group_plan_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let file = plan_into(&dir.path().join("p"), SMALL);
    assert_eq!(file.plan.replicas.len(), 2, "fixture expected to plan one prefill and one decode group");
    let event = write_event(&dir.path().join("ev.json"), json!({ "type": "gpus_offline", "gpu_ids": gpus_of(&file, Phase::Prefill) }));
    let plan = dir.path().join("p/plan.json");
    let out = dir.path().join("r");
    assert_eq!(hetplan(&["reschedule", "--plan", s(&plan), "--event", s(&event), "--out", s(&out)]), EXIT_INFEASIBLE);
    let unknown = write_event(&dir.path().join("unknown.json"), json!({ "type": "gpus_offline", "gpu_ids": [99] }));
    assert_eq!(hetplan(&["reschedule", "--plan", s(&plan), "--event", s(&unknown), "--out", s(&out)]), EXIT_INPUT);
}

const CLOUD: &[&str] = &["--cluster", "cloud_32", "--model", "llama-30b"];

#[test]
fn coding_plans_more_prefill_and_conversation_more_decode_replicas() {
    let dir = tempfile::tempdir().unwrap();
    let coding = plan_into(&dir.path().join("coding"), &[CLOUD, &["--profile", "coding", "--rate", "10", "--slo-scale", "3"]].concat());
    let p = &coding.provenance;
    assert!(p.prefill_replicas > p.decode_replicas, "coding: {} prefill, {} decode", p.prefill_replicas, p.decode_replicas);
    let conv = plan_into(&dir.path().join("conv"), &[CLOUD, &["--profile", "conversation", "--rate", "6", "--slo-scale", "2"]].concat());
    let p = &conv.provenance;
    assert!(p.decode_replicas > p.prefill_replicas, "conversation: {} prefill, {} decode", p.prefill_replicas, p.decode_replicas);
}

#[test]
fn offlining_the_coding_decode_groups_flips_one_group() {
    let dir = tempfile::tempdir().unwrap();
    let file = plan_into(&dir.path().join("p"), &[CLOUD, &["--profile", "coding", "--rate", "10", "--slo-scale", "3"]].concat());
    let event = write_event(&dir.path().join("ev.json"), json!({ "type": "gpus_offline", "gpu_ids": gpus_of(&file, Phase::Decode) }));
    let out = dir.path().join("r");
    let plan = dir.path().join("p/plan.json");
    assert_eq!(hetplan(&["reschedule", "--plan", s(&plan), "--event", s(&event), "--out", s(&out), "--compare-full"]), 0);
    let diff: PlanDiff = serde_json::from_str(&fs::read_to_string(out.join("diff.json")).unwrap()).unwrap();
    assert_eq!(diff.removed_groups.len(), file.provenance.decode_replicas);
    assert_eq!(diff.phase_flips.len(), 1);
    assert_eq!(diff.phase_flips[0].to, Phase::Decode);
    assert_eq!((diff.membership_changes, diff.config_changes), (0, 0));
    assert!(diff.evaluations * 10 <= diff.full_search_evaluations.unwrap());
    let new = PlanFile::read(&out.join("plan.json")).unwrap();
    assert!(new.plan.gpus().iter().all(|g| new.problem.cluster.contains(*g)));
    assert_eq!(hetplan(&["simulate", "--plan", s(&out.join("plan.json")), "--out", s(&dir.path().join("s"))]), 0);
}

#[test]
fn generated_traces_drive_planning() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t/trace.jsonl");
    let gen = ["gen-trace", "--profile", "coding", "--rate", "1", "--requests", "200", "--seed", "5", "--out", s(&trace)];
    assert_eq!(hetplan(&gen), 0);
    let first = fs::read(&trace).unwrap();
    assert_eq!(hetplan(&gen), 0);
    assert_eq!(fs::read(&trace).unwrap(), first);
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 200);
    assert!(text.lines().next().unwrap().contains("\"t\""));

    let file = plan_into(&dir.path().join("p"), &["--cluster", "two_type_4", "--model", "llama-7b", "--trace", s(&trace), "--steps", "5"]);
    let rate = file.problem.workload.arrival_rate;
    assert!((rate - 1.0).abs() < 0.2, "estimated rate {rate}");
    let out = dir.path().join("s");
    assert_eq!(hetplan(&["simulate", "--plan", s(&dir.path().join("p/plan.json")), "--trace", s(&trace), "--out", s(&out)]), 0);
}

#[test]
fn sweep_writes_one_row_per_scale() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--out", s(dir.path()), "--slo-scale-sweep", "1:3:1"];
    args.extend_from_slice(SMALL);
    assert_eq!(hetplan(&args), 0);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "slo_scale,score,simulated_score,prefill_replicas,decode_replicas,evaluations");
    assert_eq!(rows.len(), 4);
    let scores: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{scores:?}");
}

#[test]
fn config_file_sets_search_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, json!({ "tabu": { "n_step": 4 }, "kv_bits": 4, "slo_scale": 2.5 }).to_string()).unwrap();
    let file = plan_into(&dir.path().join("p"), &["--cluster", "two_type_4", "--model", "llama-7b", "--profile", "coding", "--config", s(&config)]);
    assert_eq!(file.provenance.steps, 4);
    assert_eq!(file.problem.kv_precision.bits(), 4);
    assert_eq!(file.problem.slo.slo_scale, 2.5);
    fs::write(&config, json!({ "tabu": { "n_stepz": 4 } }).to_string()).unwrap();
    let out = dir.path().join("q");
    assert_eq!(hetplan(&["plan", "--cluster", "two_type_4", "--model", "llama-7b", "--profile", "coding", "--config", s(&config), "--out", s(&out)]), EXIT_INPUT);
}

#[test]
fn shipped_fixture_files_match_the_built_in_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hetplan(&["fixtures", "--out", s(dir.path())]), 0);
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    for kind in ["clusters", "models", "profiles"] {
        for entry in fs::read_dir(dir.path().join(kind)).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap();
            assert_eq!(fs::read(&path).unwrap(), fs::read(shipped.join(kind).join(name)).unwrap(), "{kind}/{name:?}");
        }
    }
    assert_eq!(hetplan(&["plan", "--cluster", s(&shipped.join("clusters/two_type_4.json")), "--model", s(&shipped.join("models/llama-7b.json")),
        "--profile", s(&shipped.join("profiles/coding.json")), "--steps", "2", "--out", s(&dir.path().join("p"))]), 0);
}
