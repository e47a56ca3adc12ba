//! Stochastic (VAE) and discrete (VQ-VAE) latent bottlenecks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Reparameterized draw `z = μ + exp(log_var / 2) ⊙ ε`, `ε ~ N(0, 1)` from a
/// stream seeded by `seed`. Gradient reaches `mu` and `log_var` only.
pub fn vae_sample<T: Element>(g: &mut Graph<T>, mu: Var, log_var: Var, seed: u64) -> Result<Var> {
    if g.shape(mu) != g.shape(log_var) {
        return Err(Error::shape(
            "vae_sample",
            format!("mu {:?} vs log_var {:?}", g.shape(mu), g.shape(log_var)),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = g.constant(Tensor::randn(g.shape(mu), 1.0, &mut rng));
    let half = g.scale(log_var, T::c(0.5));
    let std = g.exp(half);
    let noise = g.mul(std, eps)?;
    g.add(mu, noise)
}

/// A set of embedding vectors `[entries, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    table: Tensor<T>,
}

impl<T: Element> Codebook<T> {
    pub fn new(table: Tensor<T>) -> Result<Self> {
        if table.rank() != 2 || table.shape()[1] == 0 {
            return Err(Error::shape(
                "codebook",
                format!("table {:?}", table.shape()),
            ));
        }
        if table.shape()[0] == 0 {
            return Err(Error::domain("codebook", "codebook is empty"));
        }
        Ok(Codebook { table })
    }

    /// Uniform entries in `[-1/entries, 1/entries)`, redrawn until distinct.
    pub fn random<R: Rng + ?Sized>(entries: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if entries < 2 {
            return Err(Error::Config("codebook needs at least 2 entries".into()));
        }
        let bound = 1.0 / entries as f64;
        loop {
            let table = Tensor::uniform(&[entries, dim], -bound, bound, rng);
            let book = Codebook { table };
            if !book.has_duplicates() {
                return Ok(book);
            }
        }
    }

    pub fn table(&self) -> &Tensor<T> {
        &self.table
    }

    pub fn into_table(self) -> Tensor<T> {
        self.table
    }

    pub fn entries(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn entry(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.table.data()[i * d..(i + 1) * d]
    }

    pub fn has_duplicates(&self) -> bool {
        (0..self.entries()).any(|i| (0..i).any(|j| self.entry(i) == self.entry(j)))
    }

    /// Index of the nearest entry (squared Euclidean); ties go to the lowest
    /// index.
    pub fn nearest(&self, v: &[T]) -> usize {
        let mut best = (0, T::infinity());
        for i in 0..self.entries() {
            let d: T = self
                .entry(i)
                .iter()
                .zip(v)
                .map(|(&e, &x)| (x - e) * (x - e))
                .sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// Replaces each vector along the last axis of `z_e` by its nearest entry.
/// Returns the quantized tensor and the chosen indices (row-major over the
/// leading axes).
pub fn vq_quantize<T: Element>(
    z_e: &Tensor<T>,
    codebook: &Codebook<T>,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let d = codebook.dim();
    if z_e.shape().last() != Some(&d) {
        return Err(Error::shape(
            "vq_quantize",
            format!("z_e {:?} vs codebook dim {d}", z_e.shape()),
        ));
    }
    let indices: Vec<usize> = z_e
        .data()
        .chunks_exact(d)
        .map(|v| codebook.nearest(v))
        .collect();
    let mut data = Vec::with_capacity(z_e.numel());
    for &i in &indices {
        data.extend_from_slice(codebook.entry(i));
    }
    Ok((Tensor::new(z_e.shape().to_vec(), data)?, indices))
}

/// Linearization point of the straight-through estimator: the code
/// assignment, the offset `z_q - z_e`, and the values seen through the
/// stop-gradients. Replaying it turns the surrogate objective into a smooth
/// function whose exact gradient is the estimator's (gradient checks).
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenCodes<T> {
    pub indices: Vec<usize>,
    pub offset: Tensor<T>,
    pub z_e: Tensor<T>,
    pub z_q: Tensor<T>,
}

/// Graph-level quantization of `z_e` (`[.., d]`) against `table` (`[e, d]`).
#[derive(Clone, Debug)]
pub struct Quantized<T> {
    /// Codebook rows, differentiable w.r.t. the table.
    pub z_q: Var,
    /// Straight-through value: forward equals `z_q`, gradient goes to `z_e`.
    pub z_st: Var,
    pub indices: Vec<usize>,
    pub offset: Tensor<T>,
    /// Stop-gradient views of `z_e` and `z_q` for the VQ loss.
    pub sg_z_e: Var,
    pub sg_z_q: Var,
}

impl<T: Element> Quantized<T> {
    /// Captures the current assignment and stop-gradient values.
    pub fn freeze(&self, g: &Graph<T>) -> FrozenCodes<T> {
        FrozenCodes {
            indices: self.indices.clone(),
            offset: self.offset.clone(),
            z_e: g.value(self.sg_z_e).clone(),
            z_q: g.value(self.sg_z_q).clone(),
        }
    }
}

pub fn quantize_straight_through<T: Element>(
    g: &mut Graph<T>,
    z_e: Var,
    table: Var,
    frozen: Option<&FrozenCodes<T>>,
) -> Result<Quantized<T>> {
    let shape = g.shape(z_e).to_vec();
    let (indices, offset) = match frozen {
        Some(f) => (f.indices.clone(), f.offset.clone()),
        None => {
            let book = Codebook::new(g.value(table).clone())?;
            let (zq, idx) = vq_quantize(g.value(z_e), &book)?;
            let off = Tensor::from_fn(&shape, |i| zq.data()[i] - g.value(z_e).data()[i]);
            (idx, off)
        }
    };
    let rows = g.gather_rows(table, &indices)?;
    let z_q = g.reshape(rows, &shape)?;
    let off = g.constant(offset.clone());
    let z_st = g.add(z_e, off)?;
    let (sg_z_e, sg_z_q) = match frozen {
        Some(f) => (g.constant(f.z_e.clone()), g.constant(f.z_q.clone())),
        None => (g.detach(z_e), g.detach(z_q)),
    };
    Ok(Quantized {
        z_q,
        z_st,
        indices,
        offset,
        sg_z_e,
        sg_z_q,
    })
}
