//! Resolving command-line inputs into planning problems.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hetplan::cost::{reference_slo, CostParams, KvPrecision};
use hetplan::domain::{validate_cluster, ClusterSpec, ModelSpec, RequestTrace, SloSpec, WorkloadProfile};
use hetplan::fixtures;
use hetplan::plan::Problem;
use hetplan::scheduler::{SearchOptions, TabuParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{CliError, CliResult, ProblemArgs, SearchArgs};

/// Used when neither the command line nor the config sets a scale.
pub const DEFAULT_SLO_SCALE: f64 = 3.0;
/// Arrival rate for fixture profiles without --rate.
pub const DEFAULT_RATE: f64 = 1.0;

/// Optional overrides read from --config.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tabu: TabuParams,
    pub search: SearchOptions,
    pub cost: CostParams,
    pub kv_bits: Option<u32>,
    pub slo_scale: Option<f64>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// A cluster from a file or fixture name. Unparseable files and invalid
/// specs come back as a violation list.
pub fn load_cluster(arg: &str) -> CliResult<ClusterSpec> {
    let path = Path::new(arg);
    let spec = if path.exists() {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str::<ClusterSpec>(&text).map_err(|e| {
            CliError::Violations(json!([{ "code": "Malformed", "message": format!("{}: {e}", path.display()) }]))
        })?
    } else {
        fixtures::cluster(arg).map_err(|_| CliError::Input(format!("{arg} is neither a file nor a cluster fixture")))?
    };
    let violations = validate_cluster(&spec);
    if !violations.is_empty() {
        return Err(CliError::Violations(serde_json::to_value(&violations).expect("violations serialize")));
    }
    Ok(spec)
}

pub fn load_model(arg: &str) -> CliResult<ModelSpec> {
    let path = Path::new(arg);
    let model: ModelSpec = if path.exists() {
        read_json(path)?
    } else {
        fixtures::model(arg).map_err(|_| CliError::Input(format!("{arg} is neither a file nor a model fixture")))?
    };
    model.validate()?;
    Ok(model)
}

pub fn load_profile(arg: &str, rate: Option<f64>) -> CliResult<WorkloadProfile> {
    let path = Path::new(arg);
    let mut profile: WorkloadProfile = if path.exists() {
        read_json(path)?
    } else {
        fixtures::profile(arg, DEFAULT_RATE)
            .map_err(|_| CliError::Input(format!("{arg} is neither a file nor a workload fixture")))?
    };
    if let Some(r) = rate {
        profile = profile.with_rate(r);
    }
    profile.validate()?;
    Ok(profile)
}

pub fn load_trace(path: &Path) -> CliResult<RequestTrace> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(RequestTrace::read_jsonl(BufReader::new(file))?)
}

/// Lengths of every request, with the rate estimated as count over the
/// last arrival time.
pub fn profile_of_trace(trace: &RequestTrace) -> CliResult<WorkloadProfile> {
    let last = trace.requests.last().ok_or_else(|| CliError::Input("trace is empty".into()))?.arrival;
    if !(last > 0.0) {
        return Err(CliError::Input("trace spans no time; cannot estimate the arrival rate".into()));
    }
    let profile = WorkloadProfile::from_samples(
        trace.len() as f64 / last,
        trace.requests.iter().map(|r| r.input_len).collect(),
        trace.requests.iter().map(|r| r.output_len).collect(),
    );
    profile.validate()?;
    Ok(profile)
}

pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let config: RunConfig = path.map_or_else(|| Ok(RunConfig::default()), read_json)?;
    config.cost.validate()?;
    Ok(config)
}

pub fn build_problem(args: &ProblemArgs, config: &RunConfig) -> CliResult<Problem> {
    let cluster = load_cluster(&args.cluster)?;
    let model = load_model(&args.model)?;
    let workload = match (&args.trace, &args.profile) {
        (Some(t), _) => {
            let mut p = profile_of_trace(&load_trace(t)?)?;
            if let Some(r) = args.rate {
                p = p.with_rate(r);
            }
            p
        }
        (None, Some(p)) => load_profile(p, args.rate)?,
        (None, None) => return Err(CliError::Input("need --profile or --trace".into())),
    };
    let scale = args.slo_scale.or(config.slo_scale);
    let slo = match &args.slo {
        Some(path) => {
            let slo: SloSpec = read_json(path)?;
            scale.map_or(slo.clone(), |s| slo.with_scale(s))
        }
        None => {
            let a100 = fixtures::gpu_type("A100").expect("A100 is a built-in type");
            reference_slo(&a100, &model, &workload, &config.cost, scale.unwrap_or(DEFAULT_SLO_SCALE))
        }
    };
    let bits = match &args.kv_bits {
        Some(b) => Some(b.parse::<u32>().map_err(|e| CliError::Input(e.to_string()))?),
        None => config.kv_bits,
    };
    let kv_precision = bits.map_or(Ok(KvPrecision::default()), KvPrecision::new)?;
    let problem = Problem { cluster, model, workload, slo, kv_precision, cost: config.cost.clone() };
    problem.validate()?;
    Ok(problem)
}

/// Config values with command-line flags laid over them.
pub fn search_settings(args: &SearchArgs, config: &RunConfig) -> CliResult<(TabuParams, SearchOptions)> {
    let mut tabu = config.tabu.clone();
    let mut opts = config.search.clone();
    if let Some(s) = args.seed {
        tabu.rng_seed = s;
        opts.sim_seed = s;
    }
    if let Some(m) = args.mode {
        opts.mode = m.into();
    }
    if let Some(n) = args.steps {
        tabu.n_step = n;
    }
    if let Some(n) = args.neighbors {
        tabu.n_nghb = n;
    }
    if let Some(n) = args.tabu_mem {
        tabu.n_mem = n;
    }
    tabu.validate()?;
    Ok((tabu, opts))
}

/// Parses `start:end:step` into an inclusive, increasing list of scales.
pub fn parse_sweep(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Input(format!("bad sweep {s:?}; expected start:end:step with 0 < start <= end, step > 0"));
    let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [start, end, step] = parts[..] else { return Err(bad()) };
    if !(start > 0.0 && end >= start && step > 0.0 && end.is_finite()) {
        return Err(bad());
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    if n > 10_000 {
        return Err(CliError::Input(format!("sweep {s:?} has more than 10000 points")));
    }
    // Computed by multiplication and rounded so files show 0.3, not
    // 0.30000000000000004.
    Ok((0..=n).map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_inclusive_and_rounded() {
        assert_eq!(parse_sweep("0.1:0.5:0.1").unwrap(), vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(parse_sweep("2:2:1").unwrap(), vec![2.0]);
        assert_eq!(parse_sweep("1:2.5:1").unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn bad_sweeps_are_rejected() {
        for s in ["", "1:2", "0:1:0.5", "2:1:0.5", "1:2:0", "a:b:c", "1:2:3:4"] {
            assert!(parse_sweep(s).is_err(), "{s}");
        }
    }

    #[test]
    fn flags_override_config() {
        let config = RunConfig { tabu: TabuParams { n_step: 7, ..TabuParams::default() }, ..RunConfig::default() };
        let args = SearchArgs { seed: Some(9), steps: None, neighbors: Some(3), ..SearchArgs::default() };
        let (tabu, opts) = search_settings(&args, &config).unwrap();
        assert_eq!((tabu.n_step, tabu.n_nghb, tabu.rng_seed, opts.sim_seed), (7, 3, 9, 9));
    }
}
