//! Loss terms and the joint objective.
//!
//! Reductions: mean over the batch, sum over neurons inside a sample, and the
//! reconstruction term additionally normalized by pixel count (per-pixel MSE).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::{Backbone, ForwardOptions, ForwardOutput, LatentOut, Model};
use crate::tensor::{Element, Tensor};

fn same_shape<T: Element>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

/// Per-pixel squared error averaged over the batch.
pub fn recon_l2<T: Element>(g: &mut Graph<T>, x: Var, x_hat: Var) -> Result<Var> {
    same_shape(g, "recon_l2", x, x_hat)?;
    let d = g.sub(x_hat, x)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// `mean_batch Σ_m (ŝ_m − s_m log ŝ_m)`. Rates must be strictly positive.
pub fn poisson_loss<T: Element>(g: &mut Graph<T>, rates: Var, spikes: Var) -> Result<Var> {
    same_shape(g, "poisson_loss", rates, spikes)?;
    if let Some(bad) = g.value(rates).data().iter().find(|v| !(**v > T::zero())) {
        return Err(Error::domain(
            "poisson_loss",
            format!("predicted rate {bad} is not positive; apply a positive link first"),
        ));
    }
    let n = g.shape(rates).first().copied().unwrap_or(1).max(1);
    let log = g.log(rates);
    let weighted = g.mul(spikes, log)?;
    let per = g.sub(rates, weighted)?;
    let total = g.sum(per);
    Ok(g.scale(total, T::c(1.0 / n as f64)))
}

/// KL divergence of `N(μ, e^{log_var})` from `N(0, 1)`, summed over latent
/// units and averaged over the batch.
pub fn kl_gaussian<T: Element>(g: &mut Graph<T>, mu: Var, log_var: Var) -> Result<Var> {
    same_shape(g, "kl_gaussian", mu, log_var)?;
    let n = g.shape(mu).first().copied().unwrap_or(1).max(1);
    let mu2 = g.square(mu);
    let var = g.exp(log_var);
    let a = g.add(mu2, var)?;
    let b = g.sub(a, log_var)?;
    let c = g.add_scalar(b, -T::one());
    let total = g.sum(c);
    Ok(g.scale(total, T::c(0.5 / n as f64)))
}

/// Codebook plus commitment loss. `z_q` carries the codebook gradient, `z_e`
/// the encoder gradient; each side is detached in the other's term.
pub fn vq_losses<T: Element>(
    g: &mut Graph<T>,
    z_e: Var,
    z_q: Var,
    commit_weight: f64,
) -> Result<Var> {
    let ze_sg = g.detach(z_e);
    let zq_sg = g.detach(z_q);
    vq_losses_with(g, z_e, z_q, ze_sg, zq_sg, commit_weight)
}

/// [`vq_losses`] with explicit stop-gradient operands.
pub fn vq_losses_with<T: Element>(
    g: &mut Graph<T>,
    z_e: Var,
    z_q: Var,
    ze_sg: Var,
    zq_sg: Var,
    commit_weight: f64,
) -> Result<Var> {
    same_shape(g, "vq_losses", z_e, z_q)?;
    same_shape(g, "vq_losses", ze_sg, zq_sg)?;
    let d_book = g.sub(ze_sg, z_q)?;
    let sq = g.square(d_book);
    let book = g.mean(sq);
    let d_commit = g.sub(z_e, zq_sg)?;
    let sq = g.square(d_commit);
    let commit = g.mean(sq);
    let commit = g.scale(commit, T::c(commit_weight));
    g.add(book, commit)
}

/// `λ Σ |θ_s|`.
pub fn sparsity_penalty<T: Element>(g: &mut Graph<T>, mask: Var, lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::domain(
            "sparsity_penalty",
            format!("lambda {lambda} < 0"),
        ));
    }
    let a = g.abs(mask);
    let s = g.sum(a);
    Ok(g.scale(s, T::c(lambda)))
}

/// Unweighted loss terms of one forward pass; absent terms count as zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub recon: Option<Var>,
    pub neural: Option<Var>,
    pub kl: Option<Var>,
    pub vq: Option<Var>,
    pub sparsity: Option<Var>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub neural: f64,
    pub kl: f64,
    pub vq: f64,
    pub sparsity: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,recon,neural,kl,vq,sparsity,total";

    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{},{}",
            self.recon, self.neural, self.kl, self.vq, self.sparsity, self.total
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.recon,
            self.neural,
            self.kl,
            self.vq,
            self.sparsity,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Combines raw term values with the same rule as [`joint_loss`].
    pub fn compose(
        backbone: Backbone,
        alpha: f64,
        beta: f64,
        recon: f64,
        neural: f64,
        kl: f64,
        vq: f64,
        sparsity: f64,
    ) -> Self {
        let image = match backbone {
            Backbone::Cae => alpha * recon,
            Backbone::Vae => alpha * (recon + kl),
            Backbone::Vqvae => alpha * recon + vq,
        };
        LossBreakdown {
            recon,
            neural,
            kl,
            vq,
            sparsity,
            total: image + beta * (neural + sparsity),
            alpha,
            beta,
        }
    }
}

/// Joint objective.
///
/// * CAE: `α·recon + β·(neural + sparsity)`
/// * VAE: `α·(recon + kl) + β·(neural + sparsity)`
/// * VQ-VAE: `α·recon + vq + β·(neural + sparsity)`
///
/// The mask penalty is weighted together with the neural term, so `β = 0`
/// leaves exactly the backbone objective.
pub fn joint_loss<T: Element>(
    g: &mut Graph<T>,
    terms: &LossTerms,
    backbone: Backbone,
    alpha: f64,
    beta: f64,
) -> Result<(Var, LossBreakdown)> {
    let val = |g: &Graph<T>, v: Option<Var>| {
        v.map_or(0.0, |v| g.value(v).item().map_or(f64::NAN, |x| x.f64()))
    };
    let br = LossBreakdown::compose(
        backbone,
        alpha,
        beta,
        val(g, terms.recon),
        val(g, terms.neural),
        val(g, terms.kl),
        val(g, terms.vq),
        val(g, terms.sparsity),
    );
    let mut parts: Vec<Var> = Vec::new();
    let mut push = |g: &mut Graph<T>, v: Option<Var>, w: f64| {
        if let Some(v) = v {
            if w != 0.0 {
                parts.push(if w == 1.0 { v } else { g.scale(v, T::c(w)) });
            }
        }
    };
    push(g, terms.recon, alpha);
    if backbone == Backbone::Vae {
        push(g, terms.kl, alpha);
    }
    if backbone == Backbone::Vqvae {
        push(g, terms.vq, 1.0);
    }
    push(g, terms.neural, beta);
    push(g, terms.sparsity, beta);
    let mut total = match parts.first() {
        Some(&v) => v,
        None => g.constant(Tensor::scalar(T::zero())),
    };
    for &p in parts.iter().skip(1) {
        total = g.add(total, p)?;
    }
    Ok((total, br))
}

pub struct Objective<T> {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub output: ForwardOutput<T>,
}

/// Runs `model` on a batch and assembles its joint loss.
///
/// The readout is skipped when `β = 0`; the bottleneck and decoder are skipped
/// when `α = 0` (end-to-end CNM baseline).
pub fn model_objective<T: Element>(
    g: &mut Graph<T>,
    model: &Model<T>,
    vars: &[Var],
    stimuli: Var,
    responses: Option<Var>,
    opts: &ForwardOptions<'_, T>,
) -> Result<Objective<T>> {
    let cfg = model.config();
    let mut opts = *opts;
    opts.decode = opts.decode && !cfg.is_cnm_baseline();
    opts.readout = opts.readout && cfg.beta > 0.0 && responses.is_some();
    let out = model.forward(g, vars, stimuli, &opts)?;
    let mut terms = LossTerms::default();
    if let Some(x_hat) = out.recon {
        terms.recon = Some(recon_l2(g, stimuli, x_hat)?);
    }
    match &out.latent {
        Some(LatentOut::Gaussian { mu, log_var }) => {
            terms.kl = Some(kl_gaussian(g, *mu, *log_var)?)
        }
        Some(LatentOut::Quantized { z_e, quantized }) => {
            terms.vq = Some(vq_losses_with(
                g,
                *z_e,
                quantized.z_q,
                quantized.sg_z_e,
                quantized.sg_z_q,
                cfg.commit_weight,
            )?)
        }
        _ => {}
    }
    if let (Some(rates), Some(s)) = (out.rates, responses) {
        terms.neural = Some(poisson_loss(g, rates, s)?);
        if let Some(mask) = model.readout_mask_var(vars) {
            if model.config().readout == crate::models::ReadoutKind::Fr {
                terms.sparsity = Some(sparsity_penalty(g, mask, cfg.sparsity)?);
            }
        }
    }
    let (total, breakdown) = joint_loss(g, &terms, cfg.backbone(), cfg.alpha, cfg.beta)?;
    Ok(Objective {
        total,
        breakdown,
        output: out,
    })
}
