//! Modulating factors, the kNN-calibrated loss and leave-one-out priors.
//!
//! The calibrated loss scales cross-entropy by `1 + f(p)`, where `p` is the
//! kNN probability of the example's true label. Examples the kNN classifier
//! already gets right (`p` near 1) keep their plain loss; examples it gets
//! wrong are upweighted.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::EmbeddingStore;
use crate::error::{Error, Result};
use crate::knn::{knn_predict, Metric};

/// Floor applied to `p` before taking the logarithm in the NLL factor.
pub const NLL_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModulatingFactor {
    /// `f(p) = (1 − p)^γ`
    Focal { gamma: f64 },
    /// `f(p) = −α · ln(max(p, ε))`
    Nll { alpha: f64 },
}

impl Default for ModulatingFactor {
    fn default() -> Self {
        ModulatingFactor::Focal { gamma: 2.0 }
    }
}

impl ModulatingFactor {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            ModulatingFactor::Focal { gamma } => ("gamma", gamma),
            ModulatingFactor::Nll { alpha } => ("alpha", alpha),
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be a nonnegative number, got {v}"
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModulatingFactor::Focal { .. } => "focal",
            ModulatingFactor::Nll { .. } => "nll",
        }
    }
}

pub fn factor_value(factor: ModulatingFactor, p: f64) -> Result<f64> {
    factor.validate()?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
    }
    Ok(match factor {
        ModulatingFactor::Focal { gamma } => (1.0 - p).powf(gamma),
        // `-(α·ln p)` rather than `-α·ln p` keeps the p = 1 case at +0.0.
        ModulatingFactor::Nll { alpha } => {
            let v = -(alpha * p.max(NLL_EPSILON).ln());
            if v == 0.0 {
                0.0
            } else {
                v
            }
        }
    })
}

/// `(1 + f(p)) · ce_loss`.
pub fn calibrated_loss(ce_loss: f64, p_knn_true: f64, factor: ModulatingFactor) -> Result<f64> {
    if !(ce_loss >= 0.0 && ce_loss.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "cross-entropy must be nonnegative, got {ce_loss}"
        )));
    }
    Ok((1.0 + factor_value(factor, p_knn_true)?) * ce_loss)
}

/// Per-example kNN probability of the true label, computed leave-one-out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorTable {
    pub priors: Vec<f64>,
    pub k: usize,
    pub tau: f64,
    pub metric: Metric,
}

impl PriorTable {
    /// Every prior set to 1, which makes the calibrated loss plain cross-entropy.
    pub fn uniform_one(n: usize, k: usize, tau: f64, metric: Metric) -> Self {
        PriorTable {
            priors: vec![1.0; n],
            k,
            tau,
            metric,
        }
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# k={}\ttau={}\tmetric={}\n", self.k, self.tau, self.metric);
        for (i, p) in self.priors.iter().enumerate() {
            writeln!(out, "{i}\t{p}").expect("writing to a String");
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix("# "))
            .ok_or_else(|| Error::MalformedHeader("prior table must start with '# k=...'".into()))?;
        let (mut k, mut tau, mut metric) = (None, None, None);
        for field in header.split('\t') {
            match field.split_once('=') {
                Some(("k", v)) => k = v.parse().ok(),
                Some(("tau", v)) => tau = v.parse().ok(),
                Some(("metric", v)) => metric = v.parse().ok(),
                _ => return Err(Error::MalformedHeader(format!("unexpected field {field:?}"))),
            }
        }
        let missing = |name: &str| Error::MalformedHeader(format!("missing or invalid {name}"));
        let mut priors = Vec::new();
        for (row, line) in lines.filter(|l| !l.is_empty()).enumerate() {
            let bad = |message: String| Error::MalformedRow { row, message };
            let (idx, p) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected <index><TAB><prior>".into()))?;
            if idx.parse::<usize>().ok() != Some(row) {
                return Err(bad(format!("expected index {row}, found {idx:?}")));
            }
            let p: f64 = p.parse().map_err(|_| bad(format!("prior is not a float: {p:?}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(bad(format!("prior {p} outside [0, 1]")));
            }
            priors.push(p);
        }
        Ok(PriorTable {
            priors,
            k: k.ok_or_else(|| missing("k"))?,
            tau: tau.ok_or_else(|| missing("tau"))?,
            metric: metric.ok_or_else(|| missing("metric"))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }
}

/// For every row `i`, the kNN probability of `labels[i]` with row `i`
/// itself excluded from the neighbor search.
pub fn precompute_priors(store: &EmbeddingStore, k: usize, tau: f64, metric: Metric) -> Result<PriorTable> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if store.len() < 2 {
        return Err(Error::InvalidParameter(
            "leave-one-out priors need at least two rows".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > store.len() - 1 {
        log::warn!(
            "k={k} exceeds the {} leave-one-out candidates; clamping",
            store.len() - 1
        );
    }
    let priors = (0..store.len())
        .into_par_iter()
        .map(|i| {
            let dist = knn_predict(store, store.row(i), k, tau, metric, Some(i))?;
            Ok(dist.probs()[store.label(i) as usize])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PriorTable { priors, k, tau, metric })
}
