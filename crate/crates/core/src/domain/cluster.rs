//! GPU inventory and the pairwise latency/bandwidth matrices.
//!
//! The matrices are indexed by position in [`ClusterSpec::gpus`]; every
//! public accessor takes a [`GpuId`] and resolves the position through a
//! lookup table built at construction.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Relative tolerance for matrix symmetry checks.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GpuId(pub u32);

impl fmt::Display for GpuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Hardware characteristics of one GPU model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpuType {
    pub name: String,
    /// Device memory bandwidth, bytes/second.
    pub mem_bandwidth: f64,
    /// Peak FP16 throughput, FLOP/second.
    pub peak_flops: f64,
    /// Device memory, bytes.
    pub mem_capacity: f64,
    /// Rental price, currency/hour. Reported, never optimized.
    pub price: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gpu {
    pub id: GpuId,
    #[serde(rename = "type")]
    pub gpu_type: String,
    pub node: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawCluster {
    gpu_types: Vec<GpuType>,
    gpus: Vec<Gpu>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

/// A GPU cluster: types, GPUs with node placement, latency matrix `alpha`
/// (seconds) and bandwidth matrix `beta` (bytes/second).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "RawCluster", into = "RawCluster")]
pub struct ClusterSpec {
    gpu_types: Vec<GpuType>,
    gpus: Vec<Gpu>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    position: HashMap<GpuId, usize>,
    type_of: Vec<Option<usize>>,
}

impl From<RawCluster> for ClusterSpec {
    fn from(raw: RawCluster) -> Self {
        ClusterSpec::new(raw.gpu_types, raw.gpus, raw.alpha, raw.beta)
    }
}

impl From<ClusterSpec> for RawCluster {
    fn from(spec: ClusterSpec) -> Self {
        RawCluster {
            gpu_types: spec.gpu_types,
            gpus: spec.gpus,
            alpha: spec.alpha,
            beta: spec.beta,
        }
    }
}

impl PartialEq for ClusterSpec {
    fn eq(&self, other: &Self) -> bool {
        self.gpu_types == other.gpu_types
            && self.gpus == other.gpus
            && self.alpha == other.alpha
            && self.beta == other.beta
    }
}

impl ClusterSpec {
    /// Builds a spec without validating it; see [`validate_cluster`].
    pub fn new(
        gpu_types: Vec<GpuType>,
        gpus: Vec<Gpu>,
        alpha: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
    ) -> Self {
        let mut position = HashMap::with_capacity(gpus.len());
        for (i, g) in gpus.iter().enumerate() {
            position.entry(g.id).or_insert(i);
        }
        let type_of = gpus
            .iter()
            .map(|g| gpu_types.iter().position(|t| t.name == g.gpu_type))
            .collect();
        ClusterSpec {
            gpu_types,
            gpus,
            alpha,
            beta,
            position,
            type_of,
        }
    }

    pub fn gpu_types(&self) -> &[GpuType] {
        &self.gpu_types
    }

    pub fn gpus(&self) -> &[Gpu] {
        &self.gpus
    }

    pub fn alpha_matrix(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn beta_matrix(&self) -> &[Vec<f64>] {
        &self.beta
    }

    pub fn len(&self) -> usize {
        self.gpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gpus.is_empty()
    }

    pub fn ids(&self) -> Vec<GpuId> {
        self.gpus.iter().map(|g| g.id).collect()
    }

    pub fn contains(&self, id: GpuId) -> bool {
        self.position.contains_key(&id)
    }

    pub fn position(&self, id: GpuId) -> Option<usize> {
        self.position.get(&id).copied()
    }

    pub fn gpu(&self, id: GpuId) -> Option<&Gpu> {
        self.position(id).map(|p| &self.gpus[p])
    }

    /// Index into [`Self::gpu_types`] of a GPU's type.
    ///
    /// Panics on unknown ids or dangling type references; callers are
    /// expected to validate the cluster and their GPU sets first.
    pub fn type_index(&self, id: GpuId) -> usize {
        let p = self.pos(id);
        self.type_of[p].unwrap_or_else(|| panic!("gpu {id} references an unknown type"))
    }

    /// Hardware spec of a GPU. Panics like [`Self::type_index`].
    pub fn spec(&self, id: GpuId) -> &GpuType {
        &self.gpu_types[self.type_index(id)]
    }

    /// Node id of a GPU. Panics on unknown ids.
    pub fn node(&self, id: GpuId) -> u32 {
        self.gpus[self.pos(id)].node
    }

    pub fn alpha(&self, a: GpuId, b: GpuId) -> f64 {
        self.alpha[self.pos(a)][self.pos(b)]
    }

    pub fn beta(&self, a: GpuId, b: GpuId) -> f64 {
        self.beta[self.pos(a)][self.pos(b)]
    }

    pub fn total_memory(&self, ids: &[GpuId]) -> f64 {
        ids.iter().map(|&id| self.spec(id).mem_capacity).sum()
    }

    pub fn total_price(&self, ids: &[GpuId]) -> f64 {
        ids.iter().map(|&id| self.spec(id).price).sum()
    }

    /// A copy of the cluster with the given GPUs dropped (rows and
    /// columns removed from both matrices).
    pub fn without(&self, removed: &[GpuId]) -> ClusterSpec {
        let removed: HashSet<GpuId> = removed.iter().copied().collect();
        let keep: Vec<usize> = (0..self.gpus.len())
            .filter(|&i| !removed.contains(&self.gpus[i].id))
            .collect();
        let pick = |m: &[Vec<f64>]| -> Vec<Vec<f64>> {
            keep.iter()
                .map(|&i| keep.iter().map(|&j| m[i][j]).collect())
                .collect()
        };
        ClusterSpec::new(
            self.gpu_types.clone(),
            keep.iter().map(|&i| self.gpus[i].clone()).collect(),
            pick(&self.alpha),
            pick(&self.beta),
        )
    }

    fn pos(&self, id: GpuId) -> usize {
        self.position(id)
            .unwrap_or_else(|| panic!("gpu {id} is not part of the cluster"))
    }
}

/// One invariant violation found by [`validate_cluster`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code")]
pub enum Violation {
    EmptyCluster,
    DuplicateTypeName { name: String },
    NonPositiveTypeField { gpu_type: String, field: String },
    DuplicateGpuId { id: GpuId },
    UnknownGpuType { id: GpuId, gpu_type: String },
    MatrixShape { matrix: String, expected: usize },
    InvalidEntry { matrix: String, a: GpuId, b: GpuId },
    AsymmetricBandwidth { a: GpuId, b: GpuId },
    AsymmetricLatency { a: GpuId, b: GpuId },
    DiagonalNotDominant { id: GpuId },
}

fn nearly_equal(x: f64, y: f64) -> bool {
    if x == y {
        return true;
    }
    (x - y).abs() <= SYMMETRY_TOLERANCE * x.abs().max(y.abs())
}

/// Reports every invariant violation of a cluster spec; an empty list means
/// the spec is valid.
pub fn validate_cluster(spec: &ClusterSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let g = spec.gpus.len();
    if g == 0 {
        out.push(Violation::EmptyCluster);
    }

    let mut names = HashSet::new();
    for t in &spec.gpu_types {
        if !names.insert(t.name.as_str()) {
            out.push(Violation::DuplicateTypeName { name: t.name.clone() });
        }
        for (field, v) in [
            ("mem_bandwidth", t.mem_bandwidth),
            ("peak_flops", t.peak_flops),
            ("mem_capacity", t.mem_capacity),
            ("price", t.price),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(Violation::NonPositiveTypeField {
                    gpu_type: t.name.clone(),
                    field: field.to_string(),
                });
            }
        }
    }

    let mut seen = HashSet::new();
    for (i, gpu) in spec.gpus.iter().enumerate() {
        if !seen.insert(gpu.id) {
            out.push(Violation::DuplicateGpuId { id: gpu.id });
        }
        if spec.type_of[i].is_none() {
            out.push(Violation::UnknownGpuType {
                id: gpu.id,
                gpu_type: gpu.gpu_type.clone(),
            });
        }
    }

    let square = |m: &[Vec<f64>]| m.len() == g && m.iter().all(|r| r.len() == g);
    let alpha_ok = square(&spec.alpha);
    let beta_ok = square(&spec.beta);
    if !alpha_ok {
        out.push(Violation::MatrixShape { matrix: "alpha".into(), expected: g });
    }
    if !beta_ok {
        out.push(Violation::MatrixShape { matrix: "beta".into(), expected: g });
    }
    let id = |i: usize| spec.gpus[i].id;

    if alpha_ok {
        for i in 0..g {
            for j in 0..g {
                let v = spec.alpha[i][j];
                if v.is_nan() || v < 0.0 || v.is_infinite() {
                    out.push(Violation::InvalidEntry { matrix: "alpha".into(), a: id(i), b: id(j) });
                }
            }
        }
        for i in 0..g {
            for j in (i + 1)..g {
                if !nearly_equal(spec.alpha[i][j], spec.alpha[j][i]) {
                    out.push(Violation::AsymmetricLatency { a: id(i), b: id(j) });
                }
            }
        }
    }
    if beta_ok {
        for i in 0..g {
            for j in 0..g {
                let v = spec.beta[i][j];
                if v.is_nan() || v < 0.0 {
                    out.push(Violation::InvalidEntry { matrix: "beta".into(), a: id(i), b: id(j) });
                }
            }
        }
        for i in 0..g {
            for j in (i + 1)..g {
                if !nearly_equal(spec.beta[i][j], spec.beta[j][i]) {
                    out.push(Violation::AsymmetricBandwidth { a: id(i), b: id(j) });
                }
            }
        }
        for i in 0..g {
            let diag = spec.beta[i][i];
            if (0..g).any(|j| j != i && spec.beta[i][j] > diag) {
                out.push(Violation::DiagonalNotDominant { id: id(i) });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_gpu(beta01: f64, beta10: f64) -> ClusterSpec {
        ClusterSpec::new(
            vec![GpuType {
                name: "A40".into(),
                mem_bandwidth: 696e9,
                peak_flops: 149.7e12,
                mem_capacity: 48e9,
                price: 0.403,
            }],
            vec![
                Gpu { id: GpuId(0), gpu_type: "A40".into(), node: 0 },
                Gpu { id: GpuId(1), gpu_type: "A40".into(), node: 0 },
            ],
            vec![vec![0.0, 1e-5], vec![1e-5, 0.0]],
            vec![vec![696e9, beta01], vec![beta10, 696e9]],
        )
    }

    #[test]
    fn symmetric_pair_is_valid() {
        assert_eq!(validate_cluster(&two_gpu(20e9, 20e9)), vec![]);
    }

    #[test]
    fn asymmetric_bandwidth_is_reported() {
        assert_eq!(
            validate_cluster(&two_gpu(20e9, 10e9)),
            vec![Violation::AsymmetricBandwidth { a: GpuId(0), b: GpuId(1) }]
        );
    }

    #[test]
    fn symmetry_tolerance_is_relative() {
        assert_eq!(validate_cluster(&two_gpu(20e9, 20e9 * (1.0 + 1e-12))), vec![]);
    }

    #[test]
    fn duplicate_id_is_reported() {
        let mut spec = two_gpu(20e9, 20e9);
        let mut gpus = spec.gpus().to_vec();
        gpus[0].id = GpuId(3);
        gpus[1].id = GpuId(3);
        spec = ClusterSpec::new(
            spec.gpu_types().to_vec(),
            gpus,
            spec.alpha_matrix().to_vec(),
            spec.beta_matrix().to_vec(),
        );
        assert_eq!(validate_cluster(&spec), vec![Violation::DuplicateGpuId { id: GpuId(3) }]);
    }

    #[test]
    fn off_diagonal_above_diagonal_is_reported() {
        let v = validate_cluster(&two_gpu(1e12, 1e12));
        assert!(v.contains(&Violation::DiagonalNotDominant { id: GpuId(0) }));
    }

    #[test]
    fn violation_json_carries_code() {
        let v = Violation::AsymmetricBandwidth { a: GpuId(0), b: GpuId(1) };
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"code":"AsymmetricBandwidth","a":0,"b":1}"#);
    }

    #[test]
    fn without_drops_rows_and_columns() {
        let spec = two_gpu(20e9, 20e9).without(&[GpuId(0)]);
        assert_eq!(spec.len(), 1);
        assert_eq!(spec.beta_matrix(), &[vec![696e9]]);
        assert_eq!(spec.beta(GpuId(1), GpuId(1)), 696e9);
    }

    #[test]
    fn json_round_trip_rebuilds_lookup() {
        let spec = two_gpu(20e9, 20e9);
        let s = serde_json::to_string(&spec).unwrap();
        let back: ClusterSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.beta(GpuId(0), GpuId(1)), 20e9);
    }
}
