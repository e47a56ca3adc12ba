//! Adam and the two-phase early-stopping protocol.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Var};
use crate::data::{RegionDataset, Split};
use crate::error::{Error, Result};
use crate::losses::{model_objective, LossBreakdown};
use crate::models::{ForwardOptions, Model, Param, ParamGroup};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_initial: f64,
    /// Optimizer steps without a validation improvement before a phase ends.
    pub patience_steps: u64,
    pub lr_divisor: f64,
    pub phases: usize,
    pub batch_size: usize,
    /// Hard cap on optimizer steps in each phase.
    pub max_steps: u64,
    pub eval_every: u64,
    pub val_fraction: f64,
    /// Rows per forward pass when evaluating.
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 1e-3,
            patience_steps: 1000,
            lr_divisor: 2.0,
            phases: 2,
            batch_size: 64,
            max_steps: 20_000,
            eval_every: 100,
            val_fraction: 0.1,
            eval_batch: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_initial > 0.0
            && self.patience_steps > 0
            && self.lr_divisor > 0.0
            && self.phases > 0
            && self.batch_size > 0
            && self.max_steps > 0
            && self.eval_every > 0
            && self.eval_batch > 0;
        if !ok {
            return Err(Error::Config(
                "training settings must all be positive".into(),
            ));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment buffers, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters whose gradient is `None` are
/// left untouched; the step counter always advances.
pub fn adam_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<&Tensor<T>>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.shape() != params[i].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {i}: {:?} vs grad {:?}", params[i].shape(), g.shape()),
                ));
            }
            if g.data().iter().any(|v| v.is_nan()) {
                return Err(Error::domain(
                    "adam_step",
                    format!("NaN gradient for parameter {i}"),
                ));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let (b1, b2) = (T::c(ADAM_BETA1), T::c(ADAM_BETA2));
    let (one, eps) = (T::one(), T::c(ADAM_EPS));
    let (step_size, c2) = (T::c(lr / c1), T::c(c2));
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((p, &gi), mi), vi) in params[i]
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            *p = *p - step_size * *mi / ((*vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// One validation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub phase: usize,
    pub step: u64,
    pub lr: f64,
    /// Mean training objective since the previous record (NaN at step 0).
    pub train_total: f64,
    pub val_total: f64,
    pub val_recon: f64,
    pub val_neural: f64,
}

pub const HISTORY_HEADER: &str = "phase,step,lr,train_total,val_total,val_recon,val_neural";

impl HistoryRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.phase,
            self.step,
            self.lr,
            self.train_total,
            self.val_total,
            self.val_recon,
            self.val_neural
        )
    }
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters with the best validation objective seen in any phase.
    pub model: Model<T>,
    pub history: Vec<HistoryRow>,
    /// Validation loss breakdown at every record, keyed by step.
    pub val_losses: Vec<(u64, LossBreakdown)>,
    pub best_val_total: f64,
    pub best_step: u64,
    pub total_steps: u64,
    /// Parameter digest at the start of each phase.
    pub phase_start_digests: Vec<String>,
    /// Digest of the best parameters at the end of each phase.
    pub phase_best_digests: Vec<String>,
}

/// SHA-256 over every parameter and batch-norm statistic.
pub fn params_digest<T: Element>(model: &Model<T>) -> String {
    let mut h = Sha256::new();
    let mut buf = Vec::new();
    for p in model.params() {
        h.update(p.name.as_bytes());
        buf.clear();
        p.value.data().iter().for_each(|v| v.write_le(&mut buf));
        h.update(&buf);
    }
    for s in model.bn_states() {
        buf.clear();
        s.running_mean
            .iter()
            .chain(&s.running_var)
            .for_each(|v| v.write_le(&mut buf));
        h.update(&buf);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Which parameters the optimizer may touch.
pub fn is_trainable<T>(model: &Model<T>, p: &Param<T>) -> bool
where
    T: Element,
{
    let cfg = model.config();
    if p.frozen {
        return false;
    }
    match p.group {
        ParamGroup::Latent | ParamGroup::Decoder | ParamGroup::Codebook => !cfg.is_cnm_baseline(),
        ParamGroup::Readout => cfg.beta > 0.0,
        ParamGroup::Encoder => true,
    }
}

/// Rows of the dataset as model inputs.
pub fn batch<T: Element>(ds: &RegionDataset, rows: &[usize]) -> (Tensor<T>, Tensor<T>) {
    (
        ds.train_stimuli.select_rows(rows).cast(),
        ds.train_responses.select_rows(rows).cast(),
    )
}

/// Eval-mode objective averaged over `rows` of the training arrays.
pub fn evaluate_rows<T: Element>(
    model: &Model<T>,
    ds: &RegionDataset,
    rows: &[usize],
    chunk: usize,
) -> Result<LossBreakdown> {
    let mut acc = [0.0f64; 5];
    for part in rows.chunks(chunk.max(1)) {
        let (x, s) = batch::<T>(ds, part);
        let mut g = Graph::new();
        let vars = model.bind(&mut g, |_| false);
        let (xv, sv) = (g.constant(x), g.constant(s));
        let obj = model_objective(&mut g, model, &vars, xv, Some(sv), &ForwardOptions::eval())?;
        let b = obj.breakdown;
        let w = part.len() as f64;
        for (a, v) in acc
            .iter_mut()
            .zip([b.recon, b.neural, b.kl, b.vq, b.sparsity])
        {
            *a += w * v;
        }
    }
    let n = rows.len().max(1) as f64;
    let cfg = model.config();
    let [recon, neural, kl, vq, sparsity] = acc.map(|a| a / n);
    Ok(LossBreakdown::compose(
        cfg.backbone(),
        cfg.alpha,
        cfg.beta,
        recon,
        neural,
        kl,
        vq,
        sparsity,
    ))
}

fn noise_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

struct Batches {
    rows: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.rows.len());
        if self.pos + size > self.rows.len() {
            self.pos = 0;
        }
        if self.pos == 0 {
            self.rows.shuffle(&mut self.rng);
        }
        let out = self.rows[self.pos..self.pos + size].to_vec();
        self.pos += size;
        out
    }
}

/// Trains `model` on `split.train`, early-stopping on the validation objective.
///
/// Each phase runs until `patience_steps` optimizer steps pass without a new
/// best validation loss (or `max_steps`), then restores the best parameters.
/// Later phases restart from that best point with a fresh optimizer and the
/// learning rate divided by `lr_divisor`. `observer` sees every record.
pub fn train<T: Element>(
    mut model: Model<T>,
    ds: &RegionDataset,
    split: &Split,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    ds.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Config(
            "training and validation sets must be nonempty".into(),
        ));
    }
    if model.config().n_neurons != ds.n_neurons() {
        return Err(Error::Config(format!(
            "model predicts {} neurons, dataset has {}",
            model.config().n_neurons,
            ds.n_neurons()
        )));
    }
    model.set_readout_bias(&ds.mean_rates(&split.train))?;

    let trainable: Vec<usize> = (0..model.params().len())
        .filter(|&i| is_trainable(&model, &model.params()[i]))
        .collect();
    let mut batches = Batches {
        rows: split.train.clone(),
        pos: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };

    let init = evaluate_rows(&model, ds, &split.val, cfg.eval_batch)?;
    let mut history = vec![HistoryRow {
        phase: 1,
        step: 0,
        lr: cfg.lr_initial,
        train_total: f64::NAN,
        val_total: init.total,
        val_recon: init.recon,
        val_neural: init.neural,
    }];
    observer(&history[0]);
    let mut val_losses = vec![(0, init)];
    let mut best = (init.total, 0u64, model.clone());
    let mut step = 0u64;
    let mut last_finite = None;
    let mut phase_start_digests = Vec::new();
    let mut phase_best_digests = Vec::new();

    for phase in 1..=cfg.phases {
        let lr = cfg.lr_initial / cfg.lr_divisor.powi(phase as i32 - 1);
        model = best.2.clone();
        phase_start_digests.push(params_digest(&model));
        let values: Vec<Tensor<T>> = trainable
            .iter()
            .map(|&i| model.params()[i].value.clone())
            .collect();
        let mut adam = AdamState::new(&values);
        let mut since_best = 0u64;
        let mut train_acc = (0.0, 0usize);
        for phase_step in 1..=cfg.max_steps {
            let rows = batches.next(cfg.batch_size);
            let (x, s) = batch::<T>(ds, &rows);
            let mut g = Graph::new();
            let vars: Vec<Var> = {
                let m = &model;
                m.bind(&mut g, |p| is_trainable(m, p))
            };
            let (xv, sv) = (g.constant(x), g.constant(s));
            step += 1;
            let obj = model_objective(
                &mut g,
                &model,
                &vars,
                xv,
                Some(sv),
                &ForwardOptions::train(noise_seed(cfg.seed, step)),
            )?;
            if !obj.breakdown.total.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    last_finite_step: last_finite,
                });
            }
            last_finite = Some(step);
            train_acc = (train_acc.0 + obj.breakdown.total, train_acc.1 + 1);
            let grads = g.backward(obj.total)?;
            {
                let grad_refs: Vec<Option<&Tensor<T>>> =
                    trainable.iter().map(|&i| grads.get(vars[i])).collect();
                let mut params: Vec<&mut Tensor<T>> = model
                    .params_mut()
                    .iter_mut()
                    .enumerate()
                    .filter(|(i, _)| trainable.binary_search(i).is_ok())
                    .map(|(_, p)| &mut p.value)
                    .collect();
                adam_step(&mut params, &grad_refs, &mut adam, lr).map_err(|e| match e {
                    Error::Domain { .. } => Error::NonFinite {
                        step,
                        last_finite_step: last_finite,
                    },
                    e => e,
                })?;
            }
            model.apply_bn_stats(&obj.output.bn_stats);

            since_best += 1;
            if phase_step % cfg.eval_every == 0 {
                let val = evaluate_rows(&model, ds, &split.val, cfg.eval_batch)?;
                if !val.total.is_finite() {
                    return Err(Error::NonFinite {
                        step,
                        last_finite_step: last_finite,
                    });
                }
                let row = HistoryRow {
                    phase,
                    step,
                    lr,
                    train_total: train_acc.0 / train_acc.1.max(1) as f64,
                    val_total: val.total,
                    val_recon: val.recon,
                    val_neural: val.neural,
                };
                observer(&row);
                history.push(row);
                val_losses.push((step, val));
                train_acc = (0.0, 0);
                if val.total < best.0 {
                    best = (val.total, step, model.clone());
                    since_best = 0;
                }
                if since_best >= cfg.patience_steps {
                    break;
                }
            }
        }
        phase_best_digests.push(params_digest(&best.2));
    }

    Ok(TrainOutcome {
        model: best.2,
        history,
        val_losses,
        best_val_total: best.0,
        best_step: best.1,
        total_steps: step,
        phase_start_digests,
        phase_best_digests,
    })
}
