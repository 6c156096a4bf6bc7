//! The classification head and its exact gradients.
//!
//! Architecture: dropout on the embedding, linear E -> E, tanh, dropout,
//! linear E -> 2, softmax. The embedding itself is a learned linear
//! projection of the sparse input, standing in for a frozen encoder; rows of
//! the projection start at zero and are materialized lazily, which is exact
//! because a zero row receives no decay and no adaptive-moment drift.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BackendConfig, FeatureVector, StanceError};

/// Embedding width of the reference configuration.
pub const EMBED_DIM_DEFAULT: usize = 1024;

/// Dropout probability used at both dropout sites.
pub const DROPOUT_P_DEFAULT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMetadata {
    pub seed: u64,
    pub best_step: u64,
    pub best_val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StanceModel {
    pub backend: BackendConfig,
    pub embed_dim: usize,
    pub dropout_p: f64,
    /// Sparse rows of the input-dim x embed_dim projection; absent rows are zero.
    pub projection: BTreeMap<u32, Vec<f64>>,
    /// Row-major embed_dim x embed_dim.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major embed_dim x 2.
    pub w2: Vec<f64>,
    pub b2: [f64; 2],
    pub metadata: TrainMetadata,
}

/// Forward mode: evaluation is deterministic, training draws inverted
/// dropout masks from the supplied generator.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Per-example intermediate values kept for backpropagation.
struct Cache {
    mask1: Vec<f64>,
    e_drop: Vec<f64>,
    h: Vec<f64>,
    mask2: Vec<f64>,
    h_drop: Vec<f64>,
    p: [f64; 2],
}

/// Gradients in the same shapes as the parameters.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub projection: BTreeMap<u32, Vec<f64>>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: [f64; 2],
}

impl StanceModel {
    /// Fresh model with seeded uniform init for the dense layers. The
    /// projection starts at zero: gradients flowing back through the random
    /// dense layers differentiate its rows.
    pub fn new(backend: BackendConfig, embed_dim: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = embed_dim;
        let bound = 1.0 / (e as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        StanceModel {
            backend,
            embed_dim: e,
            dropout_p: DROPOUT_P_DEFAULT,
            projection: BTreeMap::new(),
            w1: draw(e * e),
            b1: vec![0.0; e],
            w2: draw(e * 2),
            b2: [0.0; 2],
            metadata: TrainMetadata {
                seed,
                best_step: 0,
                best_val_accuracy: 0.0,
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.backend.dim()
    }

    /// Class probabilities (p_left, p_right).
    pub fn forward(&self, x: &FeatureVector, mode: Mode) -> Result<(f64, f64), StanceError> {
        let cache = match mode {
            Mode::Eval => self.forward_cached(x, None)?,
            Mode::Train(rng) => self.forward_cached(x, Some(rng))?,
        };
        Ok((cache.p[0], cache.p[1]))
    }

    fn forward_cached(
        &self,
        x: &FeatureVector,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Cache, StanceError> {
        if x.dim != self.input_dim() {
            return Err(StanceError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.dim,
            });
        }
        let e_dim = self.embed_dim;
        let mut e = vec![0.0f64; e_dim];
        for &(i, v) in &x.entries {
            if let Some(row) = self.projection.get(&i) {
                for (ej, rj) in e.iter_mut().zip(row.iter()) {
                    *ej += v * rj;
                }
            }
        }
        let mask1 = self.draw_mask(rng.as_deref_mut());
        let e_drop: Vec<f64> = e.iter().zip(&mask1).map(|(v, m)| v * m).collect();

        let mut h = vec![0.0f64; e_dim];
        for (r, h_r) in h.iter_mut().enumerate() {
            let row = &self.w1[r * e_dim..(r + 1) * e_dim];
            let mut acc = self.b1[r];
            for (w, v) in row.iter().zip(&e_drop) {
                acc += w * v;
            }
            *h_r = acc.tanh();
        }
        let mask2 = self.draw_mask(rng);
        let h_drop: Vec<f64> = h.iter().zip(&mask2).map(|(v, m)| v * m).collect();

        let mut logits = [self.b2[0], self.b2[1]];
        for (j, hv) in h_drop.iter().enumerate() {
            logits[0] += self.w2[j * 2] * hv;
            logits[1] += self.w2[j * 2 + 1] * hv;
        }
        let m = logits[0].max(logits[1]);
        let e0 = (logits[0] - m).exp();
        let e1 = (logits[1] - m).exp();
        let z = e0 + e1;
        Ok(Cache {
            mask1,
            e_drop,
            h,
            mask2,
            h_drop,
            p: [e0 / z, e1 / z],
        })
    }

    /// Inverted dropout mask; identity when no generator is supplied or the
    /// rate is zero, so evaluation needs no rescaling.
    fn draw_mask(&self, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
        match rng {
            Some(rng) if self.dropout_p > 0.0 => {
                let keep_scale = 1.0 / (1.0 - self.dropout_p);
                (0..self.embed_dim)
                    .map(|_| {
                        if rng.random::<f64>() < self.dropout_p {
                            0.0
                        } else {
                            keep_scale
                        }
                    })
                    .collect()
            }
            _ => vec![1.0; self.embed_dim],
        }
    }

    /// Digest of all weights, for change detection and run provenance.
    pub fn weight_digest(&self) -> u64 {
        let mut h = crate::hash::FNV_OFFSET;
        let eat = |x: f64, h: &mut u64| {
            *h = crate::hash::fnv1a64_with(*h, &x.to_le_bytes());
        };
        for (i, row) in &self.projection {
            h = crate::hash::fnv1a64_with(h, &i.to_le_bytes());
            for &v in row {
                eat(v, &mut h);
            }
        }
        for &v in self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
        {
            eat(v, &mut h);
        }
        h
    }
}

/// Mean cross-entropy of a batch and the exact gradients of every parameter
/// group. `dropout_rng: None` disables dropout, which is the evaluation path
/// and the configuration under which gradients are finite-difference checked.
pub fn loss_and_gradients(
    model: &StanceModel,
    batch: &[(FeatureVector, crate::corpus::Stance)],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Gradients), StanceError> {
    let e_dim = model.embed_dim;
    let mut grads = Gradients {
        projection: BTreeMap::new(),
        w1: vec![0.0; e_dim * e_dim],
        b1: vec![0.0; e_dim],
        w2: vec![0.0; e_dim * 2],
        b2: [0.0; 2],
    };
    let mut loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;

    for (x, label) in batch {
        let cache = model.forward_cached(x, dropout_rng.as_deref_mut())?;
        let y = match label {
            crate::corpus::Stance::Left => 0usize,
            crate::corpus::Stance::Right => 1usize,
        };
        loss -= cache.p[y].max(f64::MIN_POSITIVE).ln() * scale;

        let dlogits = [
            (cache.p[0] - if y == 0 { 1.0 } else { 0.0 }) * scale,
            (cache.p[1] - if y == 1 { 1.0 } else { 0.0 }) * scale,
        ];
        grads.b2[0] += dlogits[0];
        grads.b2[1] += dlogits[1];
        let mut dh_pre = vec![0.0f64; e_dim];
        for (j, dh_pre_j) in dh_pre.iter_mut().enumerate() {
            grads.w2[j * 2] += cache.h_drop[j] * dlogits[0];
            grads.w2[j * 2 + 1] += cache.h_drop[j] * dlogits[1];
            let dh_drop = model.w2[j * 2] * dlogits[0] + model.w2[j * 2 + 1] * dlogits[1];
            let dh = dh_drop * cache.mask2[j];
            *dh_pre_j = dh * (1.0 - cache.h[j] * cache.h[j]);
        }
        let mut de_drop = vec![0.0f64; e_dim];
        for (r, &dh_pre_r) in dh_pre.iter().enumerate() {
            grads.b1[r] += dh_pre_r;
            let w_row = &model.w1[r * e_dim..(r + 1) * e_dim];
            let g_row = &mut grads.w1[r * e_dim..(r + 1) * e_dim];
            for c in 0..e_dim {
                g_row[c] += dh_pre_r * cache.e_drop[c];
                de_drop[c] += w_row[c] * dh_pre_r;
            }
        }
        let de: Vec<f64> = de_drop
            .iter()
            .zip(&cache.mask1)
            .map(|(v, m)| v * m)
            .collect();
        for &(i, v) in &x.entries {
            let row = grads
                .projection
                .entry(i)
                .or_insert_with(|| vec![0.0; e_dim]);
            for (g, d) in row.iter_mut().zip(&de) {
                *g += v * d;
            }
        }
    }
    Ok((loss, grads))
}
