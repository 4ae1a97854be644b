//! Workload descriptions: request traces, aggregate profiles and the shift
//! detector that triggers lightweight rescheduling.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative-change threshold for [`detect_shift`].
pub const DEFAULT_SHIFT_THRESHOLD: f64 = 0.2;
/// Default profiling window, simulated seconds.
pub const DEFAULT_SHIFT_WINDOW: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(rename = "t")]
    pub arrival: f64,
    #[serde(rename = "in")]
    pub input_len: u32,
    #[serde(rename = "out")]
    pub output_len: u32,
}

/// Requests ordered by arrival time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RequestTrace {
    pub requests: Vec<Request>,
}

impl RequestTrace {
    pub fn new(requests: Vec<Request>) -> Result<Self> {
        let trace = RequestTrace { requests };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, r) in self.requests.iter().enumerate() {
            if !r.arrival.is_finite() || r.arrival < 0.0 {
                return Err(Error::InvalidInput(format!("request {k}: bad arrival time {}", r.arrival)));
            }
            if r.input_len == 0 || r.output_len == 0 {
                return Err(Error::InvalidInput(format!("request {k}: lengths must be at least 1")));
            }
            if k > 0 && r.arrival < self.requests[k - 1].arrival {
                return Err(Error::InvalidInput(format!("request {k}: arrivals must be non-decreasing")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn mean_input(&self) -> f64 {
        mean_u32(self.requests.iter().map(|r| r.input_len))
    }

    pub fn mean_output(&self) -> f64 {
        mean_u32(self.requests.iter().map(|r| r.output_len))
    }

    /// Reads one `{"t": .., "in": .., "out": ..}` object per line; blank
    /// lines are skipped.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut requests = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Request = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("trace line {}: {e}", n + 1)))?;
            requests.push(r);
        }
        RequestTrace::new(requests)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.requests {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Aggregate workload statistics driving cost estimates and planning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    /// Requests per second.
    pub arrival_rate: f64,
    pub mean_input_len: f64,
    pub mean_output_len: f64,
    pub input_len_samples: Vec<u32>,
    pub output_len_samples: Vec<u32>,
}

impl WorkloadProfile {
    pub fn from_samples(arrival_rate: f64, input_len_samples: Vec<u32>, output_len_samples: Vec<u32>) -> Self {
        WorkloadProfile {
            arrival_rate,
            mean_input_len: mean_u32(input_len_samples.iter().copied()),
            mean_output_len: mean_u32(output_len_samples.iter().copied()),
            input_len_samples,
            output_len_samples,
        }
    }

    /// Every request has the same input and output length.
    pub fn constant(arrival_rate: f64, input_len: u32, output_len: u32) -> Self {
        WorkloadProfile::from_samples(arrival_rate, vec![input_len], vec![output_len])
    }

    pub fn with_rate(&self, arrival_rate: f64) -> Self {
        WorkloadProfile { arrival_rate, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return Err(Error::InvalidInput("arrival rate must be positive".into()));
        }
        if self.input_len_samples.is_empty() || self.output_len_samples.is_empty() {
            return Err(Error::InvalidInput("length sample lists must be non-empty".into()));
        }
        if self.input_len_samples.contains(&0) || self.output_len_samples.contains(&0) {
            return Err(Error::InvalidInput("sampled lengths must be at least 1".into()));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        if !close(self.mean_input_len, mean_u32(self.input_len_samples.iter().copied()))
            || !close(self.mean_output_len, mean_u32(self.output_len_samples.iter().copied()))
        {
            return Err(Error::InvalidInput("profile means disagree with their samples".into()));
        }
        Ok(())
    }

    /// Mean decode context: the prompt plus half of the generated tokens.
    pub fn mean_decode_context(&self) -> f64 {
        self.mean_input_len + self.mean_output_len / 2.0
    }

    /// Samples `n` requests with Poisson arrivals at `arrival_rate`;
    /// lengths are drawn uniformly from the sample lists.
    pub fn generate_trace(&self, n: usize, seed: u64) -> RequestTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0.0;
        let mut requests = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / self.arrival_rate;
            let input_len = self.input_len_samples[rng.random_range(0..self.input_len_samples.len())];
            let output_len = self.output_len_samples[rng.random_range(0..self.output_len_samples.len())];
            requests.push(Request { arrival: t, input_len, output_len });
        }
        RequestTrace { requests }
    }
}

fn mean_u32(values: impl Iterator<Item = u32>) -> f64 {
    // Integer accumulation keeps the mean independent of summation order.
    let (sum, n) = values.fold((0u64, 0u64), |(s, n), v| (s + v as u64, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

/// Profiles the requests whose arrival time lies in `[start, end)`.
pub fn profile_from_trace(trace: &RequestTrace, start: f64, end: f64) -> Result<WorkloadProfile> {
    if !(end > start) {
        return Err(Error::InvalidInput(format!("window [{start}, {end}) is empty")));
    }
    let inside: Vec<&Request> = trace
        .requests
        .iter()
        .filter(|r| r.arrival >= start && r.arrival < end)
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptyWindow { start, end });
    }
    let rate = inside.len() as f64 / (end - start);
    Ok(WorkloadProfile::from_samples(
        rate,
        inside.iter().map(|r| r.input_len).collect(),
        inside.iter().map(|r| r.output_len).collect(),
    ))
}

/// True when mean input length, mean output length or arrival rate moved
/// by more than `rel_threshold` relative to `old`.
pub fn detect_shift(old: &WorkloadProfile, new: &WorkloadProfile, rel_threshold: f64) -> bool {
    let moved = |a: f64, b: f64| (b - a).abs() / a.abs() > rel_threshold;
    moved(old.mean_input_len, new.mean_input_len)
        || moved(old.mean_output_len, new.mean_output_len)
        || moved(old.arrival_rate, new.arrival_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_trace(n: usize, span: f64, input: u32, output: u32) -> RequestTrace {
        RequestTrace::new(
            (0..n)
                .map(|k| Request { arrival: k as f64 * span / n as f64, input_len: input, output_len: output })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_trace_profile() {
        let p = profile_from_trace(&uniform_trace(10, 10.0, 512, 16), 0.0, 10.0).unwrap();
        assert_eq!(p.arrival_rate, 1.0);
        assert_eq!(p.mean_input_len, 512.0);
        assert_eq!(p.mean_output_len, 16.0);
        p.validate().unwrap();
    }

    #[test]
    fn coding_like_trace_has_long_prompts() {
        let profile = WorkloadProfile::from_samples(2.0, vec![1500, 2000, 1800], vec![10, 13, 20]);
        let trace = profile.generate_trace(200, 7);
        let end = trace.requests.last().unwrap().arrival + 1.0;
        let p = profile_from_trace(&trace, 0.0, end).unwrap();
        assert!(p.mean_input_len > 50.0 * p.mean_output_len);
    }

    #[test]
    fn window_without_arrivals_is_empty() {
        let trace = uniform_trace(10, 5.0, 512, 16);
        assert!(matches!(profile_from_trace(&trace, 5.0, 10.0), Err(Error::EmptyWindow { .. })));
    }

    #[test]
    fn shift_examples() {
        let base = WorkloadProfile::constant(1.0, 1024, 16);
        assert!(!detect_shift(&base, &base, 0.2));
        assert!(detect_shift(&base, &WorkloadProfile::constant(1.0, 1024, 129), 0.2));
        assert!(!detect_shift(&base, &base.with_rate(1.1), 0.2));
    }

    #[test]
    fn jsonl_round_trip() {
        let trace = uniform_trace(3, 3.0, 100, 5);
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"t":0.0,"in":100,"out":5}"#);
        let back = RequestTrace::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn unordered_trace_is_rejected() {
        let r = |t| Request { arrival: t, input_len: 1, output_len: 1 };
        assert!(RequestTrace::new(vec![r(1.0), r(0.5)]).is_err());
    }

    #[test]
    fn generated_trace_rate_is_close() {
        let p = WorkloadProfile::constant(4.0, 128, 64);
        let trace = p.generate_trace(4000, 1);
        let span = trace.requests.last().unwrap().arrival;
        let rate = trace.len() as f64 / span;
        assert!((rate - 4.0).abs() < 0.3, "{rate}");
        trace.validate().unwrap();
    }
}
