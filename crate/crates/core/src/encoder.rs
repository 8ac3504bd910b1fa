//! Contrastive training of a shared linear projection head.
//!
//! Both sides of a pair go through the same `k x d` matrix `W`; the loss is
//! the margin contrastive loss on the cosine distance of the projections:
//!
//! ```text
//! δ = 1 - cos(W x1, W x2)
//! ℓ = ½ (y δ² + (1 - y) max(0, m - δ)²)
//! ```
//!
//! Training uses Adam moments with decoupled weight decay.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linalg::dot;
use crate::metric::{check_finite, decode_matrix, encode_matrix};

pub(crate) const HEAD_MAGIC: &[u8; 4] = b"SCDP";
const NORM_FLOOR: f64 = 1e-12;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// `1 - <w1, w2> / (|w1| |w2|)`, in `[0, 2]`.
pub fn cosine_distance(w1: &[f64], w2: &[f64]) -> Result<f64> {
    if w1.len() != w2.len() {
        return Err(Error::Shape {
            expected: w1.len(),
            got: w2.len(),
        });
    }
    let n1 = dot(w1, w1);
    let n2 = dot(w2, w2);
    if !(n1.sqrt() > NORM_FLOOR) || !(n2.sqrt() > NORM_FLOOR) {
        return Err(Error::Numeric("cosine distance of a zero-norm vector".into()));
    }
    Ok((1.0 - dot(w1, w2) / (n1 * n2).sqrt()).clamp(0.0, 2.0))
}

fn check_margin(margin: f64) -> Result<()> {
    if !(margin > 0.0 && margin < 2.0) {
        return Err(Error::Input(format!("margin must lie in (0, 2), got {margin}")));
    }
    Ok(())
}

fn loss_from_distance(delta: f64, y: Label, margin: f64) -> f64 {
    match y {
        Label::Same => 0.5 * delta * delta,
        Label::Different => {
            let h = (margin - delta).max(0.0);
            0.5 * h * h
        }
    }
}

/// Margin contrastive loss on the cosine distance of two embeddings.
pub fn contrastive_loss(w1: &[f64], w2: &[f64], y: Label, margin: f64) -> Result<f64> {
    check_margin(margin)?;
    Ok(loss_from_distance(cosine_distance(w1, w2)?, y, margin))
}

/// Shared `out_dim x in_dim` linear map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    weights: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl ProjectionHead {
    pub fn new(out_dim: usize, in_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if out_dim == 0 || in_dim == 0 || out_dim > in_dim {
            return Err(Error::Input(format!(
                "projection head needs 0 < out_dim <= in_dim, got {out_dim} x {in_dim}"
            )));
        }
        if weights.len() != out_dim * in_dim {
            return Err(Error::Shape {
                expected: out_dim * in_dim,
                got: weights.len(),
            });
        }
        check_finite(&weights)?;
        Ok(Self {
            weights,
            in_dim,
            out_dim,
        })
    }

    /// First `out_dim` rows of the identity.
    pub fn identity(out_dim: usize, in_dim: usize) -> Result<Self> {
        let mut w = vec![0.0; out_dim * in_dim];
        for i in 0..out_dim.min(in_dim) {
            w[i * in_dim + i] = 1.0;
        }
        Self::new(out_dim, in_dim, w)
    }

    /// Gaussian init with standard deviation `1 / sqrt(in_dim)`.
    pub fn random(out_dim: usize, in_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt())
            .map_err(|e| Error::Input(e.to_string()))?;
        let w = (0..out_dim * in_dim).map(|_| normal.sample(&mut rng)).collect();
        Self::new(out_dim, in_dim, w)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape {
                expected: self.in_dim,
                got: x.len(),
            });
        }
        Ok(self.weights.chunks_exact(self.in_dim).map(|row| dot(row, x)).collect())
    }

    /// Loss of a pair after projection.
    pub fn loss(&self, w1: &[f64], w2: &[f64], y: Label, margin: f64) -> Result<f64> {
        contrastive_loss(&self.project(w1)?, &self.project(w2)?, y, margin)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_matrix(HEAD_MAGIC, 0, &[self.out_dim as u32, self.in_dim as u32], &self.weights)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (mode, dims, values) = decode_matrix(bytes, HEAD_MAGIC, 2, origin)?;
        if mode != 0 {
            return Err(Error::format(origin, format!("projection head mode flag must be 0, got {mode}")));
        }
        let (k, d) = (dims[0] as usize, dims[1] as usize);
        if values.len() != k * d {
            return Err(Error::format(
                origin,
                format!("expected {} values, found {}", k * d, values.len()),
            ));
        }
        Self::new(k, d, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// `∂ℓ/∂W` for one pair, row-major `out_dim x in_dim`.
///
/// At the hinge kink (`δ == m`, different meaning) the zero subgradient is used.
pub fn contrastive_grad(
    head: &ProjectionHead,
    w1: &[f64],
    w2: &[f64],
    y: Label,
    margin: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; head.weights.len()];
    accumulate_grad(head, w1, w2, y, margin, 1.0, &mut grad)?;
    Ok(grad)
}

/// Adds `scale * ∂ℓ/∂W` into `grad`; returns the pair loss.
fn accumulate_grad(
    head: &ProjectionHead,
    w1: &[f64],
    w2: &[f64],
    y: Label,
    margin: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_margin(margin)?;
    let a = head.project(w1)?;
    let b = head.project(w2)?;
    let na2 = dot(&a, &a);
    let nb2 = dot(&b, &b);
    let (na, nb) = (na2.sqrt(), nb2.sqrt());
    if !(na > NORM_FLOOR) || !(nb > NORM_FLOOR) {
        return Err(Error::Numeric("projected vector has zero norm".into()));
    }
    let cos = dot(&a, &b) / (na * nb);
    let delta = 1.0 - cos;
    let loss = loss_from_distance(delta, y, margin);
    let dl_ddelta = match y {
        Label::Same => delta,
        Label::Different if delta < margin => -(margin - delta),
        Label::Different => 0.0,
    };
    if dl_ddelta == 0.0 {
        return Ok(loss);
    }
    // ∂δ/∂a = -(b/(|a||b|) - cos a/|a|²), symmetric for b.
    let inv = 1.0 / (na * nb);
    let k = head.in_dim;
    for r in 0..head.out_dim {
        let ga = -(b[r] * inv - cos * a[r] / na2) * dl_ddelta * scale;
        let gb = -(a[r] * inv - cos * b[r] / nb2) * dl_ddelta * scale;
        let row = &mut grad[r * k..(r + 1) * k];
        for ((g, x1), x2) in row.iter_mut().zip(w1).zip(w2) {
            *g += ga * x1 + gb * x2;
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            learning_rate: 1e-5,
            weight_decay: 0.01,
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_margin(self.margin)?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Input("learning rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Input("weight decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Input("epochs and batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub label: Label,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    /// Mean minibatch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Minimizes the mean contrastive loss over `pairs`, starting from `head`.
pub fn train_projection(
    head: ProjectionHead,
    pairs: &[LabeledPair],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let same = pairs.iter().filter(|p| p.label.is_same()).count();
    if same == 0 || same == pairs.len() {
        return Err(Error::Input("training needs at least one pair of each label".into()));
    }
    let mut head = head;
    let n_params = head.weights.len();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0i32;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let p = &pairs[i];
                epoch_loss += accumulate_grad(&head, &p.w1, &p.w2, p.label, config.margin, scale, &mut grad)?;
            }
            step += 1;
            let bc1 = 1.0 - BETA1.powi(step);
            let bc2 = 1.0 - BETA2.powi(step);
            for (((w, g), m), v) in head.weights.iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                *w -= config.learning_rate * (update + config.weight_decay * *w);
            }
        }
        let mean = epoch_loss / pairs.len() as f64;
        trace.push(mean);
        if !mean.is_finite() || head.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch, trace });
        }
    }
    Ok(TrainOutcome {
        head,
        loss_trace: trace,
    })
}
