use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{Backbone, LayerSpec, ModelConfig, ReadoutKind, INPUT_SIZE};
use super::latent::{quantize_straight_through, vae_sample, Codebook, FrozenCodes, Quantized};
use super::readout::{self, bias_for_rate, ReadoutParams, ReadoutVars};
use crate::autodiff::{Activation, BatchStats, Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    /// Bottleneck heads on the encoder side (dense code, mu/log-var, VQ projection).
    Latent,
    Decoder,
    Codebook,
    Readout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub group: ParamGroup,
    /// Never updated (the fixed mask of an fm readout).
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub name: String,
    /// Indices of the scale and shift parameters in [`Model::params`].
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct ConvSlot {
    spec: LayerSpec,
    kernel: usize,
    bias: usize,
    bn: Option<usize>,
}

#[derive(Clone, Debug)]
enum Head {
    Dense {
        w: usize,
        b: usize,
    },
    Gaussian {
        mu_w: usize,
        mu_b: usize,
        lv_w: usize,
        lv_b: usize,
    },
    Quantized {
        proj: usize,
        proj_b: usize,
        codebook: usize,
    },
}

#[derive(Clone, Debug)]
struct ReadoutSlot {
    mask: Option<usize>,
    weights: Option<usize>,
    full: Option<usize>,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<ConvSlot>,
    head: Head,
    expand: Option<(usize, usize)>,
    decoder: Vec<ConvSlot>,
    readout: ReadoutSlot,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions<'a, T> {
    pub mode: Mode,
    /// Run the bottleneck and decoder. Off for the end-to-end CNM baseline.
    pub decode: bool,
    pub readout: bool,
    /// Seed for the VAE noise of this pass.
    pub noise_seed: u64,
    pub frozen_codes: Option<&'a FrozenCodes<T>>,
}

impl<T> ForwardOptions<'_, T> {
    pub fn train(noise_seed: u64) -> Self {
        ForwardOptions {
            mode: Mode::Train,
            decode: true,
            readout: true,
            noise_seed,
            frozen_codes: None,
        }
    }

    pub fn eval() -> Self {
        ForwardOptions {
            mode: Mode::Eval,
            decode: true,
            readout: true,
            noise_seed: 0,
            frozen_codes: None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum LatentOut<T> {
    Dense { code: Var },
    Gaussian { mu: Var, log_var: Var },
    Quantized { z_e: Var, quantized: Quantized<T> },
}

#[derive(Clone, Debug)]
pub struct EncoderOutput<T> {
    /// `h_1..h_k`, post-activation; truncated at the tap layer when the
    /// decoder is skipped.
    pub taps: Vec<Var>,
    pub latent: Option<LatentOut<T>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub taps: Vec<Var>,
    pub latent: Option<LatentOut<T>>,
    /// Decoder input actually used (z sample, dense code or straight-through codes).
    pub decoder_input: Option<Var>,
    pub recon: Option<Var>,
    pub rates: Option<Var>,
    /// Training-mode batch statistics, to fold into the running estimates.
    pub bn_stats: Vec<(usize, BatchStats<T>)>,
}

/// One DAE-NR variant: encoder, bottleneck, decoder and readout.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    bn: Vec<BatchNormState<T>>,
    layout: Layout,
}

struct Builder<T> {
    params: Vec<Param<T>>,
    bn: Vec<BatchNormState<T>>,
    rng: ChaCha8Rng,
}

impl<T: Element> Builder<T> {
    fn add(&mut self, name: String, value: Tensor<T>, group: ParamGroup) -> usize {
        self.params.push(Param {
            name,
            value,
            group,
            frozen: false,
        });
        self.params.len() - 1
    }

    fn batch_norm(&mut self, name: &str, channels: usize, group: ParamGroup) -> usize {
        let gamma = self.add(format!("{name}.bn.gamma"), Tensor::ones(&[channels]), group);
        let beta = self.add(format!("{name}.bn.beta"), Tensor::zeros(&[channels]), group);
        self.bn.push(BatchNormState {
            name: format!("{name}.bn"),
            gamma,
            beta,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        });
        self.bn.len() - 1
    }

    fn conv(
        &mut self,
        name: &str,
        spec: LayerSpec,
        cin: usize,
        with_bn: bool,
        group: ParamGroup,
        transpose: bool,
    ) -> ConvSlot {
        let k = spec.kernel;
        let (shape, fan_in) = if transpose {
            let eff = (k * k * cin) as f64 / (spec.stride * spec.stride) as f64;
            ([k, k, spec.filters, cin], eff.max(1.0))
        } else {
            ([k, k, cin, spec.filters], (k * k * cin) as f64)
        };
        let gain = if with_bn { 2.0 } else { 1.0 };
        let kernel = Tensor::randn(&shape, (gain / fan_in).sqrt(), &mut self.rng);
        let kernel = self.add(format!("{name}.kernel"), kernel, group);
        let bias = self.add(
            format!("{name}.bias"),
            Tensor::zeros(&[spec.filters]),
            group,
        );
        let bn = with_bn.then(|| self.batch_norm(name, spec.filters, group));
        ConvSlot {
            spec,
            kernel,
            bias,
            bn,
        }
    }

    fn dense(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        std: f64,
        group: ParamGroup,
    ) -> (usize, usize) {
        let w = Tensor::randn(&[fan_in, fan_out], std, &mut self.rng);
        let w = self.add(format!("{name}.w"), w, group);
        let b = self.add(format!("{name}.b"), Tensor::zeros(&[fan_out]), group);
        (w, b)
    }
}

impl<T: Element> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let arch = &config.arch;
        let mut b = Builder {
            params: Vec::new(),
            bn: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };

        let mut encoder = Vec::new();
        let mut cin = 1;
        for (i, spec) in arch.encoder().iter().enumerate() {
            encoder.push(b.conv(
                &format!("enc{}", i + 1),
                *spec,
                cin,
                true,
                ParamGroup::Encoder,
                false,
            ));
            cin = spec.filters;
        }
        let (side, feat) = arch.tap_shapes()[3];
        let flat = side * side * feat;
        let latent = arch.latent_dim;

        let (head, expand, dec_in) = match arch.backbone {
            Backbone::Cae => {
                let (w, bb) = b.dense(
                    "latent",
                    flat,
                    latent,
                    (1.0 / flat as f64).sqrt(),
                    ParamGroup::Latent,
                );
                let expand = b.dense(
                    "expand",
                    latent,
                    flat,
                    (2.0 / latent as f64).sqrt(),
                    ParamGroup::Decoder,
                );
                (Head::Dense { w, b: bb }, Some(expand), feat)
            }
            Backbone::Vae => {
                let (mu_w, mu_b) = b.dense(
                    "mu",
                    flat,
                    latent,
                    (1.0 / flat as f64).sqrt(),
                    ParamGroup::Latent,
                );
                let (lv_w, lv_b) = b.dense(
                    "log_var",
                    flat,
                    latent,
                    0.1 * (1.0 / flat as f64).sqrt(),
                    ParamGroup::Latent,
                );
                let expand = b.dense(
                    "expand",
                    latent,
                    flat,
                    (2.0 / latent as f64).sqrt(),
                    ParamGroup::Decoder,
                );
                (
                    Head::Gaussian {
                        mu_w,
                        mu_b,
                        lv_w,
                        lv_b,
                    },
                    Some(expand),
                    feat,
                )
            }
            Backbone::Vqvae => {
                let dim = arch.codebook.dim;
                let proj =
                    Tensor::randn(&[1, 1, feat, dim], (1.0 / feat as f64).sqrt(), &mut b.rng);
                let proj = b.add("pre_quant.kernel".into(), proj, ParamGroup::Latent);
                let proj_b = b.add(
                    "pre_quant.bias".into(),
                    Tensor::zeros(&[dim]),
                    ParamGroup::Latent,
                );
                let book = Codebook::<T>::random(arch.codebook.entries, dim, &mut b.rng)?;
                let codebook = b.add("codebook".into(), book.into_table(), ParamGroup::Codebook);
                (
                    Head::Quantized {
                        proj,
                        proj_b,
                        codebook,
                    },
                    None,
                    dim,
                )
            }
        };

        let mut decoder = Vec::new();
        let mut cin = dec_in;
        let n_dec = arch.decoder().len();
        for (j, spec) in arch.decoder().iter().enumerate() {
            let last = j + 1 == n_dec;
            decoder.push(b.conv(
                &format!("dec{}", j + 1),
                *spec,
                cin,
                !last,
                ParamGroup::Decoder,
                true,
            ));
            cin = spec.filters;
        }

        let (rside, rfeat) = arch.tap_shapes()[config.tap - 1];
        let rp =
            ReadoutParams::<T>::init(config.readout, rside, rfeat, config.n_neurons, &mut b.rng);
        let mask = rp.mask.map(|t| {
            let i = b.add("readout.mask".into(), t, ParamGroup::Readout);
            b.params[i].frozen = config.readout == ReadoutKind::Fm;
            i
        });
        let weights = rp
            .weights
            .map(|t| b.add("readout.weights".into(), t, ParamGroup::Readout));
        let full = rp
            .full
            .map(|t| b.add("readout.full".into(), t, ParamGroup::Readout));
        let bias = b.add("readout.bias".into(), rp.bias, ParamGroup::Readout);

        Ok(Model {
            config,
            params: b.params,
            bn: b.bn,
            layout: Layout {
                encoder,
                head,
                expand,
                decoder,
                readout: ReadoutSlot {
                    mask,
                    weights,
                    full,
                    bias,
                },
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn bn_states(&self) -> &[BatchNormState<T>] {
        &self.bn
    }

    pub fn bn_states_mut(&mut self) -> &mut [BatchNormState<T>] {
        &mut self.bn
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Inserts every parameter into `g` as a leaf. `trainable` decides which
    /// leaves record gradients; frozen parameters never do.
    pub fn bind(&self, g: &mut Graph<T>, trainable: impl Fn(&Param<T>) -> bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone(), !p.frozen && trainable(p)))
            .collect()
    }

    pub fn readout_params(&self) -> ReadoutParams<T> {
        let slot = &self.layout.readout;
        let get = |i: Option<usize>| i.map(|i| self.params[i].value.clone());
        ReadoutParams {
            kind: self.config.readout,
            mask: get(slot.mask),
            weights: get(slot.weights),
            full: get(slot.full),
            bias: self.params[slot.bias].value.clone(),
        }
    }

    pub fn readout_vars(&self, vars: &[Var]) -> ReadoutVars {
        let slot = &self.layout.readout;
        ReadoutVars {
            kind: self.config.readout,
            mask: slot.mask.map(|i| vars[i]),
            weights: slot.weights.map(|i| vars[i]),
            full: slot.full.map(|i| vars[i]),
            bias: vars[slot.bias],
        }
    }

    pub fn readout_mask_var(&self, vars: &[Var]) -> Option<Var> {
        self.layout.readout.mask.map(|i| vars[i])
    }

    /// Sets each neuron's bias so the initial predicted rate equals `rates`.
    pub fn set_readout_bias(&mut self, rates: &[f64]) -> Result<()> {
        let bias = &mut self.params[self.layout.readout.bias].value;
        if bias.numel() != rates.len() {
            return Err(Error::shape(
                "set_readout_bias",
                format!("{} neurons vs {} rates", bias.numel(), rates.len()),
            ));
        }
        for (b, &r) in bias.data_mut().iter_mut().zip(rates) {
            *b = T::c(bias_for_rate(r));
        }
        Ok(())
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_bn_stats(&mut self, stats: &[(usize, BatchStats<T>)]) {
        for (idx, s) in stats {
            let st = &mut self.bn[*idx];
            let m = T::c(st.momentum);
            let keep = T::one() - m;
            for (r, &v) in st.running_mean.iter_mut().zip(&s.mean) {
                *r = keep * *r + m * v;
            }
            for (r, &v) in st.running_var.iter_mut().zip(&s.var) {
                *r = keep * *r + m * v;
            }
        }
    }

    fn conv_block(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        slot: &ConvSlot,
        transpose: bool,
        mode: Mode,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<Var> {
        let k = vars[slot.kernel];
        let y = if transpose {
            g.conv_transpose2d(x, k, slot.spec.stride, Padding::Same)?
        } else {
            g.conv2d(x, k, slot.spec.stride, Padding::Same)?
        };
        let y = g.add_bias(y, vars[slot.bias])?;
        match slot.bn {
            Some(idx) => {
                let st = &self.bn[idx];
                let (gamma, beta) = (vars[st.gamma], vars[st.beta]);
                let y = match mode {
                    Mode::Train => {
                        let (y, s) = g.batch_norm_train(y, gamma, beta, T::c(st.eps))?;
                        stats.push((idx, s));
                        y
                    }
                    Mode::Eval => g.batch_norm_eval(
                        y,
                        gamma,
                        beta,
                        &st.running_mean,
                        &st.running_var,
                        T::c(st.eps),
                    )?,
                };
                Ok(g.activation(y, Activation::Elu))
            }
            None => Ok(g.activation(y, Activation::Tanh)),
        }
    }

    /// Encoder pass on `x` (`[n,32,32,1]`).
    pub fn encoder_forward(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        opts: &ForwardOptions<'_, T>,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<EncoderOutput<T>> {
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1..] != [INPUT_SIZE, INPUT_SIZE, 1] {
            return Err(Error::shape(
                "encoder_forward",
                format!("expected [n, {INPUT_SIZE}, {INPUT_SIZE}, 1] input, got {shape:?}"),
            ));
        }
        let depth = if opts.decode { 4 } else { self.config.tap };
        let mut taps = Vec::with_capacity(depth);
        let mut h = x;
        for slot in &self.layout.encoder[..depth] {
            h = self.conv_block(g, vars, h, slot, false, opts.mode, stats)?;
            taps.push(h);
        }
        if !opts.decode {
            return Ok(EncoderOutput { taps, latent: None });
        }
        let n = g.shape(h)[0];
        let latent = match &self.layout.head {
            Head::Dense { w, b } => {
                let flat = g.reshape(h, &[n, g.value(h).numel() / n.max(1)])?;
                let code = g.matmul(flat, vars[*w])?;
                LatentOut::Dense {
                    code: g.add_bias(code, vars[*b])?,
                }
            }
            Head::Gaussian {
                mu_w,
                mu_b,
                lv_w,
                lv_b,
            } => {
                let flat = g.reshape(h, &[n, g.value(h).numel() / n.max(1)])?;
                let mu = g.matmul(flat, vars[*mu_w])?;
                let mu = g.add_bias(mu, vars[*mu_b])?;
                let lv = g.matmul(flat, vars[*lv_w])?;
                let log_var = g.add_bias(lv, vars[*lv_b])?;
                LatentOut::Gaussian { mu, log_var }
            }
            Head::Quantized {
                proj,
                proj_b,
                codebook,
            } => {
                let z = g.conv2d(h, vars[*proj], 1, Padding::Same)?;
                let z_e = g.add_bias(z, vars[*proj_b])?;
                let quantized =
                    quantize_straight_through(g, z_e, vars[*codebook], opts.frozen_codes)?;
                LatentOut::Quantized { z_e, quantized }
            }
        };
        Ok(EncoderOutput {
            taps,
            latent: Some(latent),
        })
    }

    /// Decoder pass from the bottleneck value (`[n, latent_dim]` for dense
    /// and Gaussian bottlenecks, `[n,k,k,dim]` for VQ codes) to `[n,32,32,1]`.
    pub fn decoder_forward(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        input: Var,
        mode: Mode,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<Var> {
        let (side, feat) = self.config.arch.tap_shapes()[3];
        let shape = g.shape(input).to_vec();
        let n = shape[0];
        let mut h = match self.layout.expand {
            Some((w, b)) => {
                if shape.len() != 2 || shape[1] != self.config.arch.latent_dim {
                    return Err(Error::shape(
                        "decoder_forward",
                        format!(
                            "latent {shape:?}, expected [n, {}]",
                            self.config.arch.latent_dim
                        ),
                    ));
                }
                let e = g.matmul(input, vars[w])?;
                let e = g.add_bias(e, vars[b])?;
                let e = g.activation(e, Activation::Elu);
                g.reshape(e, &[n, side, side, feat])?
            }
            None => {
                let dim = self.config.arch.codebook.dim;
                if shape != [n, side, side, dim] {
                    return Err(Error::shape(
                        "decoder_forward",
                        format!("codes {shape:?}, expected [n, {side}, {side}, {dim}]"),
                    ));
                }
                input
            }
        };
        for slot in &self.layout.decoder {
            h = self.conv_block(g, vars, h, slot, true, mode, stats)?;
        }
        Ok(h)
    }

    /// Full pass: encoder, optional bottleneck + decoder, optional readout on
    /// the configured tap.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        opts: &ForwardOptions<'_, T>,
    ) -> Result<ForwardOutput<T>> {
        let mut stats = Vec::new();
        let enc = self.encoder_forward(g, vars, x, opts, &mut stats)?;
        let decoder_input = match &enc.latent {
            None => None,
            Some(LatentOut::Dense { code }) => Some(*code),
            Some(LatentOut::Gaussian { mu, log_var }) => Some(match opts.mode {
                Mode::Train => vae_sample(g, *mu, *log_var, opts.noise_seed)?,
                Mode::Eval => *mu,
            }),
            Some(LatentOut::Quantized { quantized, .. }) => Some(quantized.z_st),
        };
        let recon = match decoder_input {
            Some(z) => Some(self.decoder_forward(g, vars, z, opts.mode, &mut stats)?),
            None => None,
        };
        let rates = if opts.readout {
            let h = enc.taps[self.config.tap - 1];
            Some(readout::apply(g, h, &self.readout_vars(vars))?)
        } else {
            None
        };
        Ok(ForwardOutput {
            taps: enc.taps,
            latent: enc.latent,
            decoder_input,
            recon,
            rates,
            bn_stats: stats,
        })
    }

    /// Eval-mode reconstructions and rates for a batch of stimuli, without
    /// recording gradients.
    pub fn predict(&self, stimuli: &Tensor<T>) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, |_| false);
        let x = g.constant(stimuli.clone());
        let mut opts = ForwardOptions::eval();
        opts.decode = !self.config.is_cnm_baseline();
        let out = self.forward(&mut g, &vars, x, &opts)?;
        let recon = out.recon.map(|v| g.value(v).clone());
        let rates = g.value(out.rates.expect("readout enabled")).clone();
        Ok((recon, rates))
    }
}
