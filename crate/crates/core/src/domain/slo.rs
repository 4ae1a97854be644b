use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latency objectives. Deadlines are `slo_scale` times the reference
/// latencies; the E2E reference is `ttft_ref + mean_output * tpot_ref`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SloSpec {
    pub ttft_ref: f64,
    pub tpot_ref: f64,
    pub slo_scale: f64,
    pub target_attainment: f64,
}

impl SloSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.ttft_ref, self.tpot_ref, self.slo_scale]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
            && self.target_attainment > 0.0
            && self.target_attainment <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("SLO references and scale must be positive, target in (0,1]".into()))
        }
    }

    pub fn with_scale(&self, slo_scale: f64) -> SloSpec {
        SloSpec { slo_scale, ..self.clone() }
    }

    pub fn ttft_deadline(&self) -> f64 {
        self.slo_scale * self.ttft_ref
    }

    pub fn tpot_deadline(&self) -> f64 {
        self.slo_scale * self.tpot_ref
    }

    pub fn e2e_deadline(&self, mean_output: f64) -> f64 {
        self.slo_scale * (self.ttft_ref + mean_output * self.tpot_ref)
    }
}
