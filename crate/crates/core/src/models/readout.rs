//! Readouts mapping a tapped feature map `[n,k,k,f]` to positive firing
//! rates `[n,m]`.

use rand::Rng;

use super::arch::ReadoutKind;
use crate::autodiff::{Activation, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Readout parameters for `m` neurons over a `k×k×f` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutParams<T> {
    pub kind: ReadoutKind,
    /// Spatial masks `[k,k,m]` (fr, fm).
    pub mask: Option<Tensor<T>>,
    /// Feature weights `[f,m]` (fr, fm).
    pub weights: Option<Tensor<T>>,
    /// Dense weights `[k·k·f, m]` (fc).
    pub full: Option<Tensor<T>>,
    pub bias: Tensor<T>,
}

/// Graph handles for a bound [`ReadoutParams`].
#[derive(Clone, Copy, Debug)]
pub struct ReadoutVars {
    pub kind: ReadoutKind,
    pub mask: Option<Var>,
    pub weights: Option<Var>,
    pub full: Option<Var>,
    pub bias: Var,
}

/// Centered 2-D Gaussian bump with `σ = side/4`, normalized to unit sum.
pub fn gaussian_bump(side: usize) -> Vec<f64> {
    let sigma = side as f64 / 4.0;
    let c = (side as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..side * side)
        .map(|i| {
            let (y, x) = ((i / side) as f64, (i % side) as f64);
            (-((y - c).powi(2) + (x - c).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

impl<T: Element> ReadoutParams<T> {
    pub fn init<R: Rng + ?Sized>(
        kind: ReadoutKind,
        side: usize,
        features: usize,
        neurons: usize,
        rng: &mut R,
    ) -> Self {
        let bias = Tensor::zeros(&[neurons]);
        match kind {
            ReadoutKind::Fc => {
                let fan_in = side * side * features;
                ReadoutParams {
                    kind,
                    mask: None,
                    weights: None,
                    full: Some(Tensor::randn(
                        &[fan_in, neurons],
                        0.1 / (fan_in as f64).sqrt(),
                        rng,
                    )),
                    bias,
                }
            }
            ReadoutKind::Fr | ReadoutKind::Fm => {
                let bump = gaussian_bump(side);
                let peak = bump.iter().cloned().fold(0.0, f64::max);
                let noise = Tensor::<T>::randn(&[side * side, neurons], 0.05 * peak, rng);
                let mask = Tensor::from_fn(&[side, side, neurons], |i| {
                    T::c(bump[i / neurons]) + noise.data()[i]
                });
                ReadoutParams {
                    kind,
                    mask: Some(mask),
                    weights: Some(Tensor::randn(
                        &[features, neurons],
                        0.1 / (features as f64).sqrt(),
                        rng,
                    )),
                    full: None,
                    bias,
                }
            }
        }
    }

    pub fn neurons(&self) -> usize {
        self.bias.numel()
    }

    /// The fm mask is frozen; fr and fc train everything.
    pub fn mask_trainable(&self) -> bool {
        self.kind == ReadoutKind::Fr
    }

    pub fn bind(&self, g: &mut Graph<T>) -> ReadoutVars {
        let mask_rg = self.mask_trainable();
        ReadoutVars {
            kind: self.kind,
            mask: self.mask.clone().map(|t| g.leaf(t, mask_rg)),
            weights: self.weights.clone().map(|t| g.leaf(t, true)),
            full: self.full.clone().map(|t| g.leaf(t, true)),
            bias: g.leaf(self.bias.clone(), true),
        }
    }

    /// Dense weights reproducing this factorized readout:
    /// `W[(p,f), j] = mask[p,j] · weights[f,j]`.
    pub fn to_dense(&self) -> Option<ReadoutParams<T>> {
        let (mask, weights) = (self.mask.as_ref()?, self.weights.as_ref()?);
        let (p, m) = (mask.numel() / self.neurons(), self.neurons());
        let f = weights.shape()[0];
        let full = Tensor::from_fn(&[p * f, m], |i| {
            let (row, j) = (i / m, i % m);
            let (pp, ff) = (row / f, row % f);
            mask.data()[pp * m + j] * weights.data()[ff * m + j]
        });
        Some(ReadoutParams {
            kind: ReadoutKind::Fc,
            mask: None,
            weights: None,
            full: Some(full),
            bias: self.bias.clone(),
        })
    }
}

/// Predicted rates for `features` under readout `vars`.
pub fn apply<T: Element>(g: &mut Graph<T>, features: Var, vars: &ReadoutVars) -> Result<Var> {
    let missing =
        |what: &str| Error::shape("readout", format!("{:?} readout has no {what}", vars.kind));
    let drive = match vars.kind {
        ReadoutKind::Fr | ReadoutKind::Fm => {
            let mask = vars.mask.ok_or_else(|| missing("mask"))?;
            let weights = vars.weights.ok_or_else(|| missing("feature weights"))?;
            g.factorized_readout(features, mask, weights)?
        }
        ReadoutKind::Fc => {
            let full = vars.full.ok_or_else(|| missing("dense weights"))?;
            let shape = g.shape(features).to_vec();
            if shape.len() != 4 {
                return Err(Error::shape("readout_fc", format!("features {shape:?}")));
            }
            let flat = g.reshape(features, &[shape[0], shape[1] * shape[2] * shape[3]])?;
            g.matmul(flat, full)?
        }
    };
    let pre = g.add_bias(drive, vars.bias)?;
    Ok(g.activation(pre, Activation::EluPlusOne))
}

/// Bias such that `elu(b) + 1` equals `rate`.
pub fn bias_for_rate(rate: f64) -> f64 {
    let rate = rate.max(1e-3);
    if rate >= 1.0 {
        rate - 1.0
    } else {
        rate.ln()
    }
}
