//! Seeded Gaussian-mixture embeddings for desk-scale experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::embedstore::RawEmbeddings;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    /// Dev rows, assigned to classes round-robin.
    pub dev_size: usize,
    /// Norm of each class mean.
    pub separation: f64,
    /// Per-coordinate standard deviation around the mean.
    pub spread: f64,
    /// Fraction of training labels replaced by a different, uniformly drawn class.
    pub label_noise: f64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            classes: 5,
            dim: 16,
            train_per_class: 16,
            dev_size: 500,
            separation: 1.0,
            spread: 0.35,
            label_noise: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSplit {
    /// Training rows carrying the (possibly flipped) observed labels.
    pub train: RawEmbeddings,
    /// Generating labels of the training rows before noise.
    pub train_clean_labels: Vec<u32>,
    /// Clean dev rows.
    pub dev: RawEmbeddings,
}

fn sample_rows(rng: &mut ChaCha8Rng, means: &[Vec<f64>], labels: &[u32], noise: &Normal<f64>) -> Vec<f32> {
    labels
        .iter()
        .flat_map(|&l| {
            means[l as usize]
                .iter()
                .map(|m| (m + noise.sample(rng)) as f32)
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn gaussian_classes(spec: &GaussianSpec, seed: u64) -> Result<SyntheticSplit> {
    if spec.classes < 2 || spec.dim == 0 || spec.train_per_class == 0 || spec.dev_size == 0 {
        return Err(Error::InvalidParameter(format!("degenerate synthetic spec {spec:?}")));
    }
    if !(0.0..=1.0).contains(&spec.label_noise) {
        return Err(Error::InvalidParameter("label_noise must lie in [0, 1]".into()));
    }
    let noise = Normal::new(0.0, spec.spread).map_err(|e| Error::InvalidParameter(format!("spread: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break v.into_iter().map(|x| x * spec.separation / norm).collect();
            }
        })
        .collect();

    let clean: Vec<u32> = (0..spec.classes as u32)
        .flat_map(|c| std::iter::repeat_n(c, spec.train_per_class))
        .collect();
    let train_vectors = sample_rows(&mut rng, &means, &clean, &noise);

    let n = clean.len();
    let flips = (spec.label_noise * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut observed = clean.clone();
    for &i in &order[..flips] {
        let offset = rng.random_range(1..spec.classes as u32);
        observed[i] = (clean[i] + offset) % spec.classes as u32;
    }

    let dev_labels: Vec<u32> = (0..spec.dev_size).map(|i| (i % spec.classes) as u32).collect();
    let dev_vectors = sample_rows(&mut rng, &means, &dev_labels, &noise);

    Ok(SyntheticSplit {
        train: RawEmbeddings::new(train_vectors, spec.dim, observed, spec.classes)?,
        train_clean_labels: clean,
        dev: RawEmbeddings::new(dev_vectors, spec.dim, dev_labels, spec.classes)?,
    })
}
