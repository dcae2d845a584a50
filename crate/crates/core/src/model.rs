//! Softmax classifier over frozen embeddings, with analytic gradients of the
//! calibrated loss and an AdamW optimizer on a linear warmup/decay schedule.
//!
//! Parameters live in one flat `f64` buffer laid out as
//! `W_h (H×D), b_h (H), W_out (C×H), b_out (C)`; the linear architecture has
//! no hidden block and uses `H = D`. Gradients share the same layout.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::{factor_value, ModulatingFactor};
use crate::error::{Error, Result};
use crate::knn::ProbDist;

pub const PARAMS_MAGIC: [u8; 4] = *b"FCLS";
pub const PARAMS_VERSION: u32 = 1;
const PARAMS_HEADER_BYTES: usize = 4 + 4 + 1 + 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Architecture {
    #[default]
    Linear,
    /// One rectified hidden layer of the given width.
    OneHidden { hidden: usize },
}

impl Architecture {
    fn tag(&self) -> u8 {
        match self {
            Architecture::Linear => 0,
            Architecture::OneHidden { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    architecture: Architecture,
    dim: usize,
    classes: usize,
    values: Vec<f64>,
}

impl ClassifierParams {
    /// All-zero parameters.
    pub fn zeros(architecture: Architecture, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "need dim >= 1 and classes >= 2, got dim={dim}, classes={classes}"
            )));
        }
        if let Architecture::OneHidden { hidden: 0 } = architecture {
            return Err(Error::InvalidParameter("hidden width must be at least 1".into()));
        }
        let mut p = ClassifierParams {
            architecture,
            dim,
            classes,
            values: Vec::new(),
        };
        p.values = vec![0.0; p.b_out_range().end];
        Ok(p)
    }

    /// Weights uniform in `±1/√fan_in` from `seed`; biases zero.
    pub fn init(architecture: Architecture, dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(architecture, dim, classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (range, fan_in) in p.weight_blocks() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in &mut p.values[range] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(p)
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Width of the representation fed to the output layer.
    pub fn hidden(&self) -> usize {
        match self.architecture {
            Architecture::Linear => self.dim,
            Architecture::OneHidden { hidden } => hidden,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn hidden_block_len(&self) -> usize {
        match self.architecture {
            Architecture::Linear => 0,
            Architecture::OneHidden { hidden } => hidden * self.dim + hidden,
        }
    }

    fn w_h_range(&self) -> Range<usize> {
        match self.architecture {
            Architecture::Linear => 0..0,
            Architecture::OneHidden { hidden } => 0..hidden * self.dim,
        }
    }

    fn b_h_range(&self) -> Range<usize> {
        let start = self.w_h_range().end;
        start..self.hidden_block_len()
    }

    fn w_out_range(&self) -> Range<usize> {
        let start = self.hidden_block_len();
        start..start + self.classes * self.hidden()
    }

    fn b_out_range(&self) -> Range<usize> {
        let start = self.w_out_range().end;
        start..start + self.classes
    }

    /// Weight matrices with their fan-in; biases are excluded.
    fn weight_blocks(&self) -> Vec<(Range<usize>, usize)> {
        let mut blocks = Vec::with_capacity(2);
        if let Architecture::OneHidden { .. } = self.architecture {
            blocks.push((self.w_h_range(), self.dim));
        }
        blocks.push((self.w_out_range(), self.hidden()));
        blocks
    }

    pub fn w_h(&self) -> &[f64] {
        &self.values[self.w_h_range()]
    }

    pub fn b_h(&self) -> &[f64] {
        &self.values[self.b_h_range()]
    }

    pub fn w_out(&self) -> &[f64] {
        &self.values[self.w_out_range()]
    }

    pub fn b_out(&self) -> &[f64] {
        &self.values[self.b_out_range()]
    }

    pub fn w_out_mut(&mut self) -> &mut [f64] {
        let r = self.w_out_range();
        &mut self.values[r]
    }

    pub fn b_out_mut(&mut self) -> &mut [f64] {
        let r = self.b_out_range();
        &mut self.values[r]
    }

    fn same_shape(&self, other: &ClassifierParams) -> Result<()> {
        if self.architecture != other.architecture || self.dim != other.dim || self.classes != other.classes {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PARAMS_HEADER_BYTES + 8 * self.values.len());
        out.extend_from_slice(&PARAMS_MAGIC);
        out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        out.push(self.architecture.tag());
        for v in [self.dim, self.hidden(), self.classes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PARAMS_HEADER_BYTES {
            return Err(Error::Truncated {
                expected: PARAMS_HEADER_BYTES,
                actual: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
        if magic != PARAMS_MAGIC {
            return Err(Error::BadMagic {
                expected: PARAMS_MAGIC,
                found: magic,
            });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"));
        let version = word(4);
        if version != PARAMS_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (dim, hidden, classes) = (word(9) as usize, word(13) as usize, word(17) as usize);
        let architecture = match bytes[8] {
            0 if hidden == dim => Architecture::Linear,
            0 => {
                return Err(Error::MalformedHeader(format!(
                    "linear model must have H = D, got H={hidden}, D={dim}"
                )))
            }
            1 => Architecture::OneHidden { hidden },
            t => return Err(Error::MalformedHeader(format!("unknown architecture tag {t}"))),
        };
        let mut params = Self::zeros(architecture, dim, classes).map_err(|e| Error::MalformedHeader(e.to_string()))?;
        let expected = PARAMS_HEADER_BYTES + 8 * params.len();
        if bytes.len() < expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::MalformedHeader(format!(
                "{} trailing bytes after parameters",
                bytes.len() - expected
            )));
        }
        for (v, chunk) in params
            .values
            .iter_mut()
            .zip(bytes[PARAMS_HEADER_BYTES..].chunks_exact(8))
        {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        if params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedHeader("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// One training example: features, label, and its kNN prior.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub label: usize,
    pub prior: f64,
}

struct Activations {
    /// Input to the output layer (`x` itself for the linear model).
    features: Vec<f64>,
    logits: Vec<f64>,
}

fn activations(params: &ClassifierParams, x: &[f64]) -> Result<Activations> {
    if x.len() != params.dim {
        return Err(Error::ShapeMismatch {
            expected: params.dim,
            found: x.len(),
        });
    }
    let features = match params.architecture {
        Architecture::Linear => x.to_vec(),
        Architecture::OneHidden { hidden } => {
            let (w, b) = (params.w_h(), params.b_h());
            (0..hidden)
                .map(|j| {
                    let row = &w[j * params.dim..(j + 1) * params.dim];
                    let z = b[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    z.max(0.0)
                })
                .collect()
        }
    };
    let h = params.hidden();
    let (w, b) = (params.w_out(), params.b_out());
    let logits = (0..params.classes)
        .map(|c| {
            b[c] + w[c * h..(c + 1) * h]
                .iter()
                .zip(&features)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .collect();
    Ok(Activations { features, logits })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Logits and their softmax distribution.
pub fn forward(params: &ClassifierParams, x: &[f64]) -> Result<(Vec<f64>, ProbDist)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("input has a non-finite entry".into()));
    }
    let act = activations(params, x)?;
    let dist = ProbDist::from_vec_unchecked(softmax(&act.logits));
    Ok((act.logits, dist))
}

/// Mean calibrated loss `(1 + f(pᵢ))·CEᵢ` over the batch and its exact
/// gradient, laid out like the parameters.
pub fn loss_and_grad(
    params: &ClassifierParams,
    batch: &[Example<'_>],
    factor: ModulatingFactor,
) -> Result<(f64, ClassifierParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("batch must be nonempty".into()));
    }
    let mut grads = ClassifierParams::zeros(params.architecture, params.dim, params.classes)?;
    let (dim, h, classes) = (params.dim, params.hidden(), params.classes);
    let inv_batch = 1.0 / batch.len() as f64;
    let mut total = 0.0;

    let (w_h_r, b_h_r, w_out_r, b_out_r) = (
        params.w_h_range(),
        params.b_h_range(),
        params.w_out_range(),
        params.b_out_range(),
    );

    for (index, ex) in batch.iter().enumerate() {
        if ex.label >= classes {
            return Err(Error::LabelOutOfRange {
                row: index,
                label: ex.label as u64,
                class_count: classes,
            });
        }
        let act = activations(params, ex.x)?;
        let ce = log_sum_exp(&act.logits) - act.logits[ex.label];
        let weight = 1.0 + factor_value(factor, ex.prior)?;
        if !ce.is_finite() || !weight.is_finite() {
            return Err(Error::NonFiniteExample { index });
        }
        total += weight * ce;

        let scale = weight * inv_batch;
        let mut dlogits = softmax(&act.logits);
        dlogits[ex.label] -= 1.0;
        for d in &mut dlogits {
            *d *= scale;
        }

        let g = grads.values_mut();
        for c in 0..classes {
            let row = &mut g[w_out_r.start + c * h..w_out_r.start + (c + 1) * h];
            for (gw, f) in row.iter_mut().zip(&act.features) {
                *gw += dlogits[c] * f;
            }
            g[b_out_r.start + c] += dlogits[c];
        }

        if let Architecture::OneHidden { .. } = params.architecture {
            let w_out = params.w_out();
            for j in 0..h {
                if act.features[j] <= 0.0 {
                    continue;
                }
                let dz: f64 = (0..classes).map(|c| w_out[c * h + j] * dlogits[c]).sum();
                let row = &mut g[w_h_r.start + j * dim..w_h_r.start + (j + 1) * dim];
                for (gw, xv) in row.iter_mut().zip(ex.x) {
                    *gw += dz * xv;
                }
                g[b_h_r.start + j] += dz;
            }
        }
    }
    let loss = total * inv_batch;
    if !loss.is_finite() {
        return Err(Error::NonFiniteExample { index: batch.len() - 1 });
    }
    Ok((loss, grads))
}

/// AdamW state with a linear warmup then linear decay schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(
        params: &ClassifierParams,
        base_lr: f64,
        warmup_steps: u64,
        total_steps: u64,
        weight_decay: f64,
    ) -> Self {
        OptimizerState {
            step: 0,
            first_moment: vec![0.0; params.len()],
            second_moment: vec![0.0; params.len()],
            base_lr,
            warmup_steps,
            total_steps,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Learning rate applied at step `t` (0-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        if t < self.warmup_steps {
            self.base_lr * t as f64 / self.warmup_steps as f64
        } else if self.total_steps <= self.warmup_steps || t >= self.total_steps {
            0.0
        } else {
            let remaining = (self.total_steps - t) as f64 / (self.total_steps - self.warmup_steps) as f64;
            (self.base_lr * remaining).max(0.0)
        }
    }
}

/// One AdamW update with bias correction. Weight decay is decoupled and
/// applied to weight matrices only, not biases.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut ClassifierParams,
    grads: &ClassifierParams,
) -> Result<()> {
    params.same_shape(grads)?;
    if state.first_moment.len() != params.len() || state.second_moment.len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: params.len(),
            found: state.first_moment.len(),
        });
    }
    if state.step >= state.total_steps {
        return Err(Error::StepBudgetExhausted(state.total_steps));
    }
    let lr = state.lr_at(state.step);
    let t = (state.step + 1) as i32;
    let correction1 = 1.0 - state.beta1.powi(t);
    let correction2 = 1.0 - state.beta2.powi(t);

    let mut decays = vec![false; params.len()];
    for (range, _) in params.weight_blocks() {
        decays[range].iter_mut().for_each(|d| *d = true);
    }
    for (i, (&g, theta)) in grads.values.iter().zip(params.values.iter_mut()).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        let mut update = m_hat / (v_hat.sqrt() + state.epsilon);
        if decays[i] {
            update += state.weight_decay * *theta;
        }
        *theta -= lr * update;
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAIN: ModulatingFactor = ModulatingFactor::Focal { gamma: 2.0 };

    #[test]
    fn zero_model_is_uniform() {
        let p = ClassifierParams::zeros(Architecture::Linear, 4, 5).unwrap();
        let (_, dist) = forward(&p, &[0.1, 0.2, -0.3, 0.4]).unwrap();
        assert!(dist.probs().iter().all(|&q| (q - 0.2).abs() < 1e-15));
    }

    #[test]
    fn dominant_row_wins() {
        let mut p = ClassifierParams::zeros(Architecture::Linear, 3, 4).unwrap();
        p.w_out_mut()[2 * 3..3 * 3].copy_from_slice(&[5.0, 5.0, 5.0]);
        let (_, dist) = forward(&p, &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(dist.argmax(), 2);
    }

    #[test]
    fn shape_errors() {
        let p = ClassifierParams::zeros(Architecture::OneHidden { hidden: 3 }, 4, 2).unwrap();
        assert!(forward(&p, &[0.0; 3]).is_err());
        assert!(forward(&p, &[f64::NAN; 4]).is_err());
        assert!(ClassifierParams::zeros(Architecture::OneHidden { hidden: 0 }, 4, 2).is_err());
        assert!(ClassifierParams::zeros(Architecture::Linear, 4, 1).is_err());
        assert!(loss_and_grad(&p, &[], PLAIN).is_err());
        let x = [0.0; 4];
        assert!(loss_and_grad(
            &p,
            &[Example {
                x: &x,
                label: 2,
                prior: 1.0
            }],
            PLAIN
        )
        .is_err());
    }

    #[test]
    fn layout_and_init() {
        let p = ClassifierParams::init(Architecture::OneHidden { hidden: 5 }, 6, 3, 9).unwrap();
        assert_eq!(p.len(), 5 * 6 + 5 + 3 * 5 + 3);
        assert_eq!(
            (p.w_h().len(), p.b_h().len(), p.w_out().len(), p.b_out().len()),
            (30, 5, 15, 3)
        );
        assert!(p.b_h().iter().chain(p.b_out()).all(|&b| b == 0.0));
        let b1 = 1.0 / 6f64.sqrt();
        let b2 = 1.0 / 5f64.sqrt();
        assert!(p.w_h().iter().all(|w| w.abs() <= b1));
        assert!(p.w_out().iter().all(|w| w.abs() <= b2));
        assert_eq!(
            p,
            ClassifierParams::init(Architecture::OneHidden { hidden: 5 }, 6, 3, 9).unwrap()
        );
        assert_ne!(
            p,
            ClassifierParams::init(Architecture::OneHidden { hidden: 5 }, 6, 3, 10).unwrap()
        );
    }

    #[test]
    fn prior_one_is_plain_cross_entropy_and_prior_zero_doubles_it() {
        let p = ClassifierParams::init(Architecture::OneHidden { hidden: 4 }, 3, 3, 1).unwrap();
        let x = [0.3, -0.7, 0.2];
        let (logits, dist) = forward(&p, &x).unwrap();
        let (l1, g1) = loss_and_grad(
            &p,
            &[Example {
                x: &x,
                label: 1,
                prior: 1.0,
            }],
            PLAIN,
        )
        .unwrap();
        assert!((l1 + dist.probs()[1].ln()).abs() < 1e-12);
        assert!((l1 - (log_sum_exp(&logits) - logits[1])).abs() < 1e-15);
        let (l0, g0) = loss_and_grad(
            &p,
            &[Example {
                x: &x,
                label: 1,
                prior: 0.0,
            }],
            PLAIN,
        )
        .unwrap();
        assert_eq!(l0, 2.0 * l1);
        for (a, b) in g0.values().iter().zip(g1.values()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn params_blob_round_trip() {
        for arch in [Architecture::Linear, Architecture::OneHidden { hidden: 7 }] {
            let p = ClassifierParams::init(arch, 5, 3, 4).unwrap();
            let bytes = p.to_bytes();
            assert_eq!(&bytes[..4], b"FCLS");
            assert_eq!(ClassifierParams::from_bytes(&bytes).unwrap(), p);
            assert!(matches!(
                ClassifierParams::from_bytes(&bytes[..bytes.len() - 1]),
                Err(Error::Truncated { .. })
            ));
        }
        assert!(matches!(
            ClassifierParams::from_bytes(b"XXXX\x01\0\0\0\0\x01\0\0\0\x01\0\0\0\x02\0\0\0"),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn schedule_shape() {
        let p = ClassifierParams::zeros(Architecture::Linear, 2, 2).unwrap();
        let s = OptimizerState::new(&p, 0.1, 10, 100, 0.0);
        assert_eq!(s.lr_at(0), 0.0);
        assert!((s.lr_at(5) - 0.05).abs() < 1e-15);
        assert_eq!(s.lr_at(10), 0.1);
        assert!((s.lr_at(55) - 0.05).abs() < 1e-15);
        assert_eq!(s.lr_at(100), 0.0);
        let lrs: Vec<f64> = (0..=100).map(|t| s.lr_at(t)).collect();
        let peak = lrs.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(lrs.iter().position(|&l| l == peak), Some(10));
        for t in 1..10 {
            assert!((lrs[t] - lrs[t - 1] - 0.01).abs() < 1e-12);
        }
        for t in 11..=100 {
            assert!((lrs[t - 1] - lrs[t] - 0.1 / 90.0).abs() < 1e-12);
        }
    }

    #[test]
    fn optimizer_fixed_points() {
        let mut p = ClassifierParams::init(Architecture::Linear, 3, 2, 2).unwrap();
        let before = p.clone();
        let zero = ClassifierParams::zeros(Architecture::Linear, 3, 2).unwrap();
        let mut s = OptimizerState::new(&p, 0.1, 0, 10, 0.0);
        optimizer_step(&mut s, &mut p, &zero).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);

        let grads = ClassifierParams::init(Architecture::Linear, 3, 2, 3).unwrap();
        let mut s = OptimizerState::new(&p, 0.1, 5, 10, 0.01);
        optimizer_step(&mut s, &mut p, &grads).unwrap();
        assert_eq!(p, before, "step 0 of warmup has zero learning rate");
        optimizer_step(&mut s, &mut p, &grads).unwrap();
        assert_ne!(p, before);

        let mut s = OptimizerState::new(&p, 0.1, 0, 1, 0.0);
        optimizer_step(&mut s, &mut p, &grads).unwrap();
        assert!(matches!(
            optimizer_step(&mut s, &mut p, &grads),
            Err(Error::StepBudgetExhausted(1))
        ));
    }

    #[test]
    fn optimizer_is_deterministic() {
        let run = || {
            let mut p = ClassifierParams::init(Architecture::OneHidden { hidden: 3 }, 4, 3, 7).unwrap();
            let mut s = OptimizerState::new(&p, 0.05, 3, 30, 0.01);
            let xs = [[0.1, 0.2, 0.3, 0.4], [-0.5, 0.1, 0.0, 0.2], [0.3, -0.3, 0.3, -0.3]];
            for t in 0..30 {
                let batch: Vec<Example> = xs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| Example {
                        x,
                        label: (i + t) % 3,
                        prior: 0.5,
                    })
                    .collect();
                let (_, g) = loss_and_grad(&p, &batch, PLAIN).unwrap();
                optimizer_step(&mut s, &mut p, &g).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn weight_decay_skips_biases() {
        let mut p = ClassifierParams::zeros(Architecture::Linear, 2, 2).unwrap();
        p.values_mut().iter_mut().for_each(|v| *v = 1.0);
        let zero = ClassifierParams::zeros(Architecture::Linear, 2, 2).unwrap();
        let mut s = OptimizerState::new(&p, 0.1, 0, 10, 0.5);
        optimizer_step(&mut s, &mut p, &zero).unwrap();
        assert!(p.w_out().iter().all(|&w| (w - 0.95).abs() < 1e-15));
        assert!(p.b_out().iter().all(|&b| b == 1.0));
    }
}
