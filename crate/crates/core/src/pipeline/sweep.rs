//! Full-grid hyperparameter sweep ranked by dev accuracy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_split, train_calibrated, Mode, RunConfig};
use crate::calib::ModulatingFactor;
use crate::embedstore::EmbeddingStore;
use crate::error::{Error, Result};
use crate::model::ClassifierParams;

/// One list of values per hyperparameter. Empty `gamma` and `alpha` lists
/// keep the base config's modulating factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub k: Vec<usize>,
    pub tau: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Default for SweepGrid {
    /// k ∈ {16, 32, 128}, τ ∈ {0.01, 0.1, 1, 10}, λ ∈ {0.1, 0.2, …, 0.9}.
    fn default() -> Self {
        SweepGrid {
            k: vec![16, 32, 128],
            tau: vec![0.01, 0.1, 1.0, 10.0],
            lambda: (1..=9).map(|i| i as f64 / 10.0).collect(),
            gamma: Vec::new(),
            alpha: Vec::new(),
        }
    }
}

impl SweepGrid {
    fn factors(&self, base: ModulatingFactor) -> Vec<ModulatingFactor> {
        if self.gamma.is_empty() && self.alpha.is_empty() {
            return vec![base];
        }
        self.gamma
            .iter()
            .map(|&gamma| ModulatingFactor::Focal { gamma })
            .chain(self.alpha.iter().map(|&alpha| ModulatingFactor::Nll { alpha }))
            .collect()
    }

    /// Every configuration in grid order: factor, then k, then τ, then λ.
    pub fn configs(&self, base: &RunConfig) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for factor in self.factors(base.factor) {
            for &k in &self.k {
                for &tau in &self.tau {
                    for &lambda in &self.lambda {
                        out.push(RunConfig {
                            k,
                            tau,
                            lambda,
                            factor,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: RunConfig,
    pub effective_k: usize,
    pub best_step: u64,
    pub dev_accuracy: f64,
    pub dev_macro_f1: f64,
}

fn run_one(config: &RunConfig, train: &EmbeddingStore, dev: &EmbeddingStore) -> Result<SweepResult> {
    let (params, best_step) = if config.mode == Mode::KnnOnly {
        // The classifier is ignored in knn-only mode.
        let p = ClassifierParams::zeros(config.architecture, train.dim(), train.class_count())?;
        (p, 0)
    } else {
        let trained = train_calibrated(config, train, dev)?;
        (trained.params, trained.log.best_step)
    };
    let report = evaluate_split(config, &params, train, dev)?;
    Ok(SweepResult {
        config: config.clone(),
        effective_k: config.k.min(train.len()),
        best_step,
        dev_accuracy: report.accuracy,
        dev_macro_f1: report.macro_f1,
    })
}

/// Runs every grid configuration and sorts descending by dev accuracy, then
/// ascending by `(k, τ, λ)`, then by grid order.
pub fn sweep(
    base: &RunConfig,
    grid: &SweepGrid,
    train: &EmbeddingStore,
    dev: &EmbeddingStore,
) -> Result<Vec<SweepResult>> {
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    for c in &configs {
        c.validate()?;
    }
    let mut results = configs
        .par_iter()
        .map(|c| run_one(c, train, dev))
        .collect::<Result<Vec<_>>>()?;
    for r in &results {
        if r.effective_k < r.config.k {
            log::info!("k={} clamped to {}", r.config.k, r.effective_k);
        }
    }
    // Stable sort: equal keys keep grid order.
    results.sort_by(|a, b| {
        b.dev_accuracy
            .total_cmp(&a.dev_accuracy)
            .then(a.config.k.cmp(&b.config.k))
            .then(a.config.tau.total_cmp(&b.config.tau))
            .then(a.config.lambda.total_cmp(&b.config.lambda))
    });
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_108_points() {
        let g = SweepGrid::default();
        assert_eq!(g.configs(&RunConfig::default()).len(), 108);
        assert_eq!(g.lambda.len(), 9);
        assert!((g.lambda[0] - 0.1).abs() < 1e-15 && (g.lambda[8] - 0.9).abs() < 1e-15);
        let with_factors = SweepGrid {
            gamma: vec![1.0, 2.0],
            alpha: vec![0.5],
            ..SweepGrid::default()
        };
        assert_eq!(with_factors.configs(&RunConfig::default()).len(), 324);
    }

    #[test]
    fn grid_json_accepts_partial_overrides() {
        let g: SweepGrid = serde_json::from_str(r#"{"lambda": [0.0, 1.0]}"#).unwrap();
        assert_eq!(g.k, vec![16, 32, 128]);
        assert_eq!(g.lambda, vec![0.0, 1.0]);
    }
}
