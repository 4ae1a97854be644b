//! Discrete-event simulation of phase-split serving.
//!
//! Prefill replicas serve FIFO batches capped by the token plateau. A
//! finished prompt waits out its KV transfer and then joins its decode
//! replica, which runs continuous batching: every step advances all
//! enrolled requests by one token and new requests enroll between steps.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{kv_link, kv_request_time, CostParams, KvPrecision, Link, ReplicaCost};
use crate::domain::{ClusterSpec, ModelSpec, RequestTrace, SloSpec};
use crate::error::{Error, Result};
use crate::plan::DeploymentPlan;

/// Stream id for routing draws, so routing never shares a stream with
/// anything else derived from the same seed.
const ROUTING_STREAM: u64 = 0x5254;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: usize,
    pub arrival: f64,
    pub input_len: u32,
    pub output_len: u32,
    pub prefill: usize,
    pub decode: usize,
    pub ttft: Option<f64>,
    pub kv: Option<f64>,
    pub tpot: Option<f64>,
    pub e2e: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub records: Vec<RequestRecord>,
    pub attainment_ttft: f64,
    pub attainment_tpot: f64,
    pub attainment_e2e: f64,
    pub throughput_rps: f64,
    pub throughput_tps: f64,
    pub arrived: usize,
    pub completed: usize,
    pub in_flight: usize,
    /// Mean output length of the trace; the E2E deadline depends on it.
    pub mean_output: f64,
    pub slo_scale: f64,
}

/// One row of an attainment-versus-SLO-scale curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub slo_scale: f64,
    pub ttft: f64,
    pub tpot: f64,
    pub e2e: f64,
}

/// Summary without the per-request records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub attainment_ttft: f64,
    pub attainment_tpot: f64,
    pub attainment_e2e: f64,
    pub throughput_rps: f64,
    pub throughput_tps: f64,
    pub arrived: usize,
    pub completed: usize,
    pub in_flight: usize,
    pub slo_scale: f64,
}

impl SimResult {
    /// Attainment fractions under `slo`'s deadlines; unfinished requests
    /// count as misses.
    pub fn attainment(&self, slo: &SloSpec) -> CurvePoint {
        let arrived = self.arrived.max(1) as f64;
        let frac = |hit: &dyn Fn(&RequestRecord) -> bool| self.records.iter().filter(|r| hit(r)).count() as f64 / arrived;
        let (t, p, e) = (slo.ttft_deadline(), slo.tpot_deadline(), slo.e2e_deadline(self.mean_output));
        CurvePoint {
            slo_scale: slo.slo_scale,
            ttft: frac(&|r| r.e2e.is_some() && r.ttft.is_some_and(|v| v <= t)),
            tpot: frac(&|r| r.tpot.is_some_and(|v| v <= p)),
            e2e: frac(&|r| r.e2e.is_some_and(|v| v <= e)),
        }
    }

    pub fn curve(&self, slo: &SloSpec, scales: &[f64]) -> Vec<CurvePoint> {
        scales.iter().map(|&s| self.attainment(&slo.with_scale(s))).collect()
    }

    pub fn summary(&self) -> SimSummary {
        SimSummary {
            attainment_ttft: self.attainment_ttft,
            attainment_tpot: self.attainment_tpot,
            attainment_e2e: self.attainment_e2e,
            throughput_rps: self.throughput_rps,
            throughput_tps: self.throughput_tps,
            arrived: self.arrived,
            completed: self.completed,
            in_flight: self.in_flight,
            slo_scale: self.slo_scale,
        }
    }

    /// One CSV row per request; unfinished metrics are left empty.
    pub fn write_requests_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in curve {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Arrival(usize),
    PrefillDone(usize),
    KvReady(usize),
    StepDone(usize),
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct PrefillState {
    queue: VecDeque<usize>,
    batch: Vec<usize>,
    busy: bool,
}

#[derive(Default)]
struct DecodeState {
    waiting: VecDeque<usize>,
    /// (request, tokens still to generate)
    running: Vec<(usize, u32)>,
    busy: bool,
}

/// Precomputed replica costs and links of one plan.
#[derive(Clone, Debug)]
pub struct Simulator {
    prefill: Vec<ReplicaCost>,
    decode: Vec<ReplicaCost>,
    links: Vec<Vec<Link>>,
    x: Vec<f64>,
    y: Vec<Vec<f64>>,
    model: ModelSpec,
    prec: KvPrecision,
    params: CostParams,
}

impl Simulator {
    pub fn new(plan: &DeploymentPlan, cluster: &ClusterSpec, model: &ModelSpec, params: &CostParams) -> Result<Self> {
        plan.validate(cluster, model)?;
        let as_plan_error = |e: Error| match e {
            Error::InfeasibleConfig(m) => Error::InvalidPlan(m),
            other => other,
        };
        let costs = |rs: &[&crate::plan::Replica]| {
            rs.iter()
                .map(|r| ReplicaCost::new(&r.config, model, cluster, params).map_err(as_plan_error))
                .collect::<Result<Vec<_>>>()
        };
        let (ps, ds) = (plan.prefills(), plan.decodes());
        let mut links = Vec::with_capacity(ps.len());
        for p in &ps {
            links.push(ds.iter().map(|d| kv_link(&p.config, &d.config, cluster)).collect::<Result<Vec<_>>>()?);
        }
        Ok(Simulator {
            prefill: costs(&ps)?,
            decode: costs(&ds)?,
            links,
            x: plan.routing.x.clone(),
            y: plan.routing.y.clone(),
            model: model.clone(),
            prec: plan.kv_precision,
            params: params.clone(),
        })
    }

    /// Runs the trace to completion, or until `horizon` simulated seconds
    /// when given.
    pub fn run(&self, trace: &RequestTrace, slo: &SloSpec, seed: u64, horizon: Option<f64>) -> Result<SimResult> {
        if trace.is_empty() {
            return Err(Error::InvalidInput("trace is empty".into()));
        }
        trace.validate()?;
        let context = trace.mean_input() + trace.mean_output() / 2.0;
        let max_batch: Vec<usize> = self.decode.iter().map(|c| c.max_decode_batch(context)).collect();
        if let Some(j) = max_batch.iter().position(|&b| b == 0) {
            return Err(Error::InvalidPlan(format!("decode replica {j} has no room for a KV cache")));
        }
        let horizon = horizon.unwrap_or(f64::INFINITY);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ROUTING_STREAM);
        let mut records: Vec<RequestRecord> = trace
            .requests
            .iter()
            .enumerate()
            .map(|(id, r)| {
                let i = pick(&self.x, rng.random::<f64>());
                let j = pick(&self.y[i], rng.random::<f64>());
                RequestRecord {
                    id,
                    arrival: r.arrival,
                    input_len: r.input_len,
                    output_len: r.output_len,
                    prefill: i,
                    decode: j,
                    ttft: None,
                    kv: None,
                    tpot: None,
                    e2e: None,
                }
            })
            .collect();

        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        let mut push = |heap: &mut BinaryHeap<Event>, time: f64, kind: Kind| {
            heap.push(Event { time, seq, kind });
            seq += 1;
        };
        for (id, r) in records.iter().enumerate() {
            push(&mut heap, r.arrival, Kind::Arrival(id));
        }
        let mut pstate: Vec<PrefillState> = self.prefill.iter().map(|_| PrefillState::default()).collect();
        let mut dstate: Vec<DecodeState> = self.decode.iter().map(|_| DecodeState::default()).collect();
        let plateau = self.params.batch_token_plateau as u64;

        while let Some(ev) = heap.pop() {
            let now = ev.time;
            if now > horizon {
                break;
            }
            match ev.kind {
                Kind::Arrival(id) => {
                    let i = records[id].prefill;
                    pstate[i].queue.push_back(id);
                }
                Kind::PrefillDone(i) => {
                    let batch = std::mem::take(&mut pstate[i].batch);
                    pstate[i].busy = false;
                    for id in batch {
                        let r = &mut records[id];
                        let kv = kv_request_time(&self.links[i][r.decode], r.input_len as f64, &self.model, self.prec, &self.params);
                        r.ttft = Some(now - r.arrival);
                        r.kv = Some(kv);
                        push(&mut heap, now + kv, Kind::KvReady(id));
                    }
                }
                Kind::KvReady(id) => {
                    let j = records[id].decode;
                    dstate[j].waiting.push_back(id);
                }
                Kind::StepDone(j) => {
                    let s = &mut dstate[j];
                    s.busy = false;
                    for (id, left) in &mut s.running {
                        *left -= 1;
                        if *left == 0 {
                            let r = &mut records[*id];
                            let e2e = now - r.arrival;
                            r.e2e = Some(e2e);
                            r.tpot = Some((e2e - r.ttft.unwrap() - r.kv.unwrap()) / r.output_len as f64);
                        }
                    }
                    s.running.retain(|&(_, left)| left > 0);
                }
            }
            // Start work on whichever replica the event touched.
            match ev.kind {
                Kind::Arrival(id) => self.start_prefill(records[id].prefill, now, &mut pstate, &records, plateau, &mut heap, &mut push),
                Kind::PrefillDone(i) => self.start_prefill(i, now, &mut pstate, &records, plateau, &mut heap, &mut push),
                Kind::KvReady(id) => {
                    let j = records[id].decode;
                    self.start_step(j, now, context, max_batch[j], &mut dstate, &records, &mut heap, &mut push)
                }
                Kind::StepDone(j) => self.start_step(j, now, context, max_batch[j], &mut dstate, &records, &mut heap, &mut push),
            }
        }

        let arrived = records.iter().filter(|r| r.arrival <= horizon).count();
        let completed = records.iter().filter(|r| r.e2e.is_some()).count();
        let first = records.first().map_or(0.0, |r| r.arrival);
        let last = records.iter().filter_map(|r| r.e2e.map(|e| r.arrival + e)).fold(first, f64::max);
        let span = last - first;
        let tokens: u64 = records.iter().filter(|r| r.e2e.is_some()).map(|r| r.output_len as u64).sum();
        let (rps, tps) = if span > 0.0 { (completed as f64 / span, tokens as f64 / span) } else { (0.0, 0.0) };
        let mut result = SimResult {
            records,
            attainment_ttft: 0.0,
            attainment_tpot: 0.0,
            attainment_e2e: 0.0,
            throughput_rps: rps,
            throughput_tps: tps,
            arrived,
            completed,
            in_flight: arrived - completed,
            mean_output: trace.mean_output(),
            slo_scale: slo.slo_scale,
        };
        let a = result.attainment(slo);
        result.attainment_ttft = a.ttft;
        result.attainment_tpot = a.tpot;
        result.attainment_e2e = a.e2e;
        Ok(result)
    }

    #[allow(clippy::too_many_arguments)]
    fn start_prefill(
        &self,
        i: usize,
        now: f64,
        pstate: &mut [PrefillState],
        records: &[RequestRecord],
        plateau: u64,
        heap: &mut BinaryHeap<Event>,
        push: &mut impl FnMut(&mut BinaryHeap<Event>, f64, Kind),
    ) {
        let s = &mut pstate[i];
        if s.busy || s.queue.is_empty() {
            return;
        }
        let mut tokens = 0u64;
        while let Some(&id) = s.queue.front() {
            let len = records[id].input_len as u64;
            if !s.batch.is_empty() && tokens + len > plateau {
                break;
            }
            tokens += len;
            s.batch.push(id);
            s.queue.pop_front();
        }
        s.busy = true;
        push(heap, now + self.prefill[i].prefill_latency(tokens as f64), Kind::PrefillDone(i));
    }

    #[allow(clippy::too_many_arguments)]
    fn start_step(
        &self,
        j: usize,
        now: f64,
        context: f64,
        max_batch: usize,
        dstate: &mut [DecodeState],
        records: &[RequestRecord],
        heap: &mut BinaryHeap<Event>,
        push: &mut impl FnMut(&mut BinaryHeap<Event>, f64, Kind),
    ) {
        let s = &mut dstate[j];
        if s.busy {
            return;
        }
        while s.running.len() < max_batch {
            let Some(id) = s.waiting.pop_front() else { break };
            s.running.push((id, records[id].output_len));
        }
        if s.running.is_empty() {
            return;
        }
        s.busy = true;
        let step = self.decode[j].decode_step_latency(s.running.len() as f64, context);
        push(heap, now + step, Kind::StepDone(j));
    }
}

/// Index drawn from a discrete distribution given a uniform `u` in [0, 1).
fn pick(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc && *w > 0.0 {
            return k;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

pub fn simulate(
    plan: &DeploymentPlan,
    cluster: &ClusterSpec,
    model: &ModelSpec,
    trace: &RequestTrace,
    slo: &SloSpec,
    params: &CostParams,
    seed: u64,
) -> Result<SimResult> {
    Simulator::new(plan, cluster, model, params)?.run(trace, slo, seed, None)
}

/// Simulates once and re-applies the deadlines for every scale.
pub fn attainment_at_scale(
    sim: &Simulator,
    trace: &RequestTrace,
    slo: &SloSpec,
    seed: u64,
    scales: &[f64],
) -> Result<Vec<CurvePoint>> {
    if scales.iter().any(|s| !(*s > 0.0)) || scales.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("SLO scales must be positive and sorted".into()));
    }
    Ok(sim.run(trace, slo, seed, None)?.curve(slo, scales))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pick_follows_cumulative_weights() {
        assert_eq!(pick(&[0.25, 0.75], 0.1), 0);
        assert_eq!(pick(&[0.25, 0.75], 0.3), 1);
        assert_eq!(pick(&[0.0, 1.0], 0.0), 1);
        assert_eq!(pick(&[1.0, 0.0], 0.999_999), 0);
    }

    #[test]
    fn events_pop_in_time_then_sequence_order() {
        let mut heap = BinaryHeap::new();
        heap.push(Event { time: 2.0, seq: 0, kind: Kind::Arrival(0) });
        heap.push(Event { time: 1.0, seq: 2, kind: Kind::Arrival(1) });
        heap.push(Event { time: 1.0, seq: 1, kind: Kind::Arrival(2) });
        let order: Vec<u64> = std::iter::from_fn(|| heap.pop().map(|e| e.seq)).collect();
        assert_eq!(order, vec![1, 2, 0]);
    }
}
