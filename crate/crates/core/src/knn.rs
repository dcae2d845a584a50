//! Exact top-k retrieval and similarity-based aggregation.
//!
//! Retrieval is a linear scan of the whole store. Distances are accumulated
//! in `f64`; ties in distance are broken by ascending store index so results
//! do not depend on thread count or platform.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::{l2_norm, EmbeddingStore};
use crate::error::{Error, Result};

/// Input vectors must have unit norm within this tolerance.
pub const UNIT_INPUT_TOLERANCE: f64 = 1e-4;
/// Tolerance on the simplex constraint `sum == 1`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Rows per rayon task in the distance scan.
const SCAN_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Stored as `1 - cos(q, x)` so smaller is closer under both metrics.
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" | "cos" => Ok(Metric::Cosine),
            other => Err(Error::InvalidParameter(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
    pub label: u32,
}

/// Retrieved neighbors sorted ascending by `(distance, index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub entries: Vec<Neighbor>,
    pub k: usize,
    pub metric: Metric,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A length-C probability vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Wraps `probs`, checking nonnegativity and that they sum to 1.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("distribution must be nonempty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidParameter(
                "distribution has a negative or non-finite entry".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidParameter(format!("distribution sums to {sum}, not 1")));
        }
        Ok(ProbDist(probs))
    }

    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        ProbDist(probs)
    }

    pub fn uniform(classes: usize) -> Self {
        ProbDist(vec![1.0 / classes as f64; classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.0.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
    }
}

/// Distance kernel without input validation: both slices have equal length.
#[inline]
pub(crate) fn raw_distance(q: &[f32], x: &[f32], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => q
            .iter()
            .zip(x)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        Metric::Cosine => {
            let dot: f64 = q.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum();
            (1.0 - dot).max(0.0)
        }
    }
}

fn check_unit(v: &[f32]) -> Result<()> {
    let norm = l2_norm(v);
    if (norm - 1.0).abs() > UNIT_INPUT_TOLERANCE {
        return Err(Error::NotUnitNorm { norm });
    }
    Ok(())
}

/// Distance between two unit vectors: `‖q − x‖₂` or `1 − q·x`.
pub fn distance(q: &[f32], x: &[f32], metric: Metric) -> Result<f64> {
    if q.len() != x.len() {
        return Err(Error::ShapeMismatch {
            expected: q.len(),
            found: x.len(),
        });
    }
    check_unit(q)?;
    check_unit(x)?;
    Ok(raw_distance(q, x, metric))
}

fn by_distance_then_index(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// The `k` rows closest to `q`, optionally skipping row `exclude`.
///
/// When fewer than `k` candidates exist every candidate is returned and a
/// warning is logged. A store of one row with that row excluded yields an
/// empty set; callers that need a neighbor must check.
pub fn retrieve(
    store: &EmbeddingStore,
    q: &[f32],
    k: usize,
    metric: Metric,
    exclude: Option<usize>,
) -> Result<NeighborSet> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if q.len() != store.dim() {
        return Err(Error::ShapeMismatch {
            expected: store.dim(),
            found: q.len(),
        });
    }
    if let Some(index) = exclude {
        if index >= store.len() {
            return Err(Error::ExcludeOutOfRange {
                index,
                len: store.len(),
            });
        }
    }
    check_unit(q)?;

    let dim = store.dim();
    let mut scored: Vec<(usize, f64)> = store
        .vectors()
        .par_chunks(dim * SCAN_CHUNK)
        .enumerate()
        .flat_map_iter(|(chunk, block)| {
            let base = chunk * SCAN_CHUNK;
            block
                .chunks_exact(dim)
                .enumerate()
                .map(move |(i, row)| (base + i, raw_distance(q, row, metric)))
        })
        .filter(|(i, _)| Some(*i) != exclude)
        .collect();

    let available = scored.len();
    if k > available {
        log::warn!("k={k} exceeds {available} available rows; using k={available}");
    }
    let take = k.min(available);
    if take > 0 && take < available {
        scored.select_nth_unstable_by(take - 1, by_distance_then_index);
        scored.truncate(take);
    }
    scored.sort_unstable_by(by_distance_then_index);

    let entries = scored
        .into_iter()
        .map(|(index, distance)| Neighbor {
            index,
            distance,
            label: store.label(index),
        })
        .collect();
    Ok(NeighborSet { entries, k, metric })
}

/// Temperature-scaled class distribution from retrieved neighbors:
/// `p[c] ∝ Σ_{x ∈ N_c} exp(−d(q, x) / τ)`.
///
/// Classes without a retrieved neighbor get exactly zero.
pub fn aggregate(neighbors: &NeighborSet, tau: f64, class_count: usize) -> Result<ProbDist> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighbors);
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    // Shift by the smallest distance; the ratio is unchanged and the largest
    // weight is exactly 1, so nothing underflows to an all-zero sum.
    let min = neighbors
        .entries
        .iter()
        .map(|n| n.distance)
        .fold(f64::INFINITY, f64::min);
    let mut mass = vec![0.0f64; class_count];
    for n in &neighbors.entries {
        let slot = mass.get_mut(n.label as usize).ok_or(Error::LabelOutOfRange {
            row: n.index,
            label: n.label as u64,
            class_count,
        })?;
        *slot += (-(n.distance - min) / tau).exp();
    }
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    Ok(ProbDist(mass))
}

/// [`retrieve`] followed by [`aggregate`].
pub fn knn_predict(
    store: &EmbeddingStore,
    q: &[f32],
    k: usize,
    tau: f64,
    metric: Metric,
    exclude: Option<usize>,
) -> Result<ProbDist> {
    let neighbors = retrieve(store, q, k, metric, exclude)?;
    aggregate(&neighbors, tau, store.class_count())
}
