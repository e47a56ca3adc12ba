//! Independent oracles and shared checks for the integration tests and the
//! acceptance report.

#![allow(dead_code)]

use daenr::autodiff::{grad_check, grad_check_strided, Activation, Graph, Padding, Var};
use daenr::data::{synth_lnp, RegionDataset, SynthConfig};
use daenr::losses::model_objective;
use daenr::models::{
    parse_arch, quantize_straight_through, Backbone, ForwardOptions, LatentOut, Model, ModelConfig,
    ReadoutKind,
};
use daenr::tensor::Tensor;
use daenr::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const SMALL_ARCH: &str = "4C23-4C13-4C23-4C13-4DC13-4DC23-4DC13-1DC23";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// Values bounded away from zero, so kinks (abs, elu) stay out of the
/// finite-difference stencil.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    randn(shape, seed).map(|v| {
        if v.abs() < 0.1 {
            v.signum() * 0.1 + v
        } else {
            v
        }
    })
}

fn weighted_sum(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    // Random projection so every output coordinate matters.
    let w = g.constant(randn(g.shape(v), seed));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

/// `(name, worst relative error)` for every differentiable graph operation.
pub fn op_gradient_errors() -> Result<Vec<(&'static str, f64)>> {
    type Case = (
        &'static str,
        Vec<Tensor<f64>>,
        Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>,
    );
    let m = |s: &[usize], seed| away_from_zero(s, seed);
    let pos = |s: &[usize], seed| randn(s, seed).map(|v| v.abs() + 0.5);
    let cases: Vec<Case> = vec![
        (
            "add",
            vec![m(&[3, 4], 1), m(&[3, 4], 2)],
            Box::new(|g, v| {
                let o = g.add(v[0], v[1])?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "sub",
            vec![m(&[3, 4], 3), m(&[3, 4], 4)],
            Box::new(|g, v| {
                let o = g.sub(v[0], v[1])?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "mul",
            vec![m(&[3, 4], 5), m(&[3, 4], 6)],
            Box::new(|g, v| {
                let o = g.mul(v[0], v[1])?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "scale",
            vec![m(&[5], 7)],
            Box::new(|g, v| {
                let o = g.scale(v[0], -1.7);
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "add_scalar",
            vec![m(&[5], 8)],
            Box::new(|g, v| {
                let o = g.add_scalar(v[0], 0.3);
                let s = g.square(o);
                Ok(g.sum(s))
            }),
        ),
        (
            "add_bias",
            vec![m(&[2, 3, 4], 10), m(&[4], 11)],
            Box::new(|g, v| {
                let o = g.add_bias(v[0], v[1])?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "matmul",
            vec![m(&[3, 5], 12), m(&[5, 2], 13)],
            Box::new(|g, v| {
                let o = g.matmul(v[0], v[1])?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "reshape",
            vec![m(&[2, 6], 14)],
            Box::new(|g, v| {
                let o = g.reshape(v[0], &[3, 4])?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "elu",
            vec![m(&[12], 15)],
            Box::new(|g, v| {
                let o = g.activation(v[0], Activation::Elu);
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "elu_plus_one",
            vec![m(&[12], 16)],
            Box::new(|g, v| {
                let o = g.activation(v[0], Activation::EluPlusOne);
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "tanh",
            vec![m(&[12], 17)],
            Box::new(|g, v| {
                let o = g.activation(v[0], Activation::Tanh);
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "identity",
            vec![m(&[12], 18)],
            Box::new(|g, v| {
                let o = g.activation(v[0], Activation::Identity);
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "exp",
            vec![m(&[6], 19)],
            Box::new(|g, v| {
                let o = g.exp(v[0]);
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "log",
            vec![pos(&[6], 20)],
            Box::new(|g, v| {
                let o = g.log(v[0]);
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "square",
            vec![m(&[6], 21)],
            Box::new(|g, v| {
                let o = g.square(v[0]);
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "abs",
            vec![m(&[6], 22)],
            Box::new(|g, v| {
                let o = g.abs(v[0]);
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "mean",
            vec![m(&[2, 3], 23)],
            Box::new(|g, v| {
                let s = g.square(v[0]);
                Ok(g.mean(s))
            }),
        ),
        (
            "conv2d_stride1",
            vec![m(&[2, 5, 5, 2], 24), m(&[3, 3, 2, 3], 25)],
            Box::new(|g, v| {
                let o = g.conv2d(v[0], v[1], 1, Padding::Same)?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "conv2d_stride2",
            vec![m(&[1, 6, 5, 2], 26), m(&[3, 3, 2, 2], 27)],
            Box::new(|g, v| {
                let o = g.conv2d(v[0], v[1], 2, Padding::Same)?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "conv2d_valid",
            vec![m(&[1, 5, 5, 1], 28), m(&[2, 2, 1, 2], 29)],
            Box::new(|g, v| {
                let o = g.conv2d(v[0], v[1], 2, Padding::Valid)?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "conv_transpose2d",
            vec![m(&[2, 3, 3, 3], 30), m(&[3, 3, 2, 3], 31)],
            Box::new(|g, v| {
                let o = g.conv_transpose2d(v[0], v[1], 2, Padding::Same)?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "batch_norm_train",
            vec![m(&[3, 2, 2, 2], 32), m(&[2], 33), m(&[2], 34)],
            Box::new(|g, v| {
                let (o, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "batch_norm_eval",
            vec![m(&[3, 2, 2, 2], 35), m(&[2], 36), m(&[2], 37)],
            Box::new(|g, v| {
                let o = g.batch_norm_eval(v[0], v[1], v[2], &[0.2, -0.1], &[1.5, 0.7], 1e-5)?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "factorized_readout",
            vec![m(&[2, 3, 3, 4], 38), m(&[3, 3, 5], 39), m(&[4, 5], 40)],
            Box::new(|g, v| {
                let o = g.factorized_readout(v[0], v[1], v[2])?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "gather_rows",
            vec![m(&[4, 3], 41)],
            Box::new(|g, v| {
                let o = g.gather_rows(v[0], &[2, 0, 2, 3])?;
                weighted_sum(g, o, 9)
            }),
        ),
        (
            "detach",
            vec![m(&[4], 42)],
            Box::new(|g, v| {
                let d = g.detach(v[0]);
                let o = g.mul(v[0], d)?;
                weighted_sum(g, o, 9)
            }),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| {
            let err = if name == "detach" {
                // d/dx (x · sg(x)) = sg(x), not 2x; compare to that analytically.
                let mut g = Graph::new();
                let x = g.leaf(inputs[0].clone(), true);
                let loss = f(&mut g, &[x])?;
                let grads = g.backward(loss)?;
                let w = randn(&[4], 9);
                let expect = Tensor::from_fn(&[4], |i| inputs[0].data()[i] * w.data()[i]);
                grads.get(x).expect("gradient").max_abs_diff(&expect)
            } else {
                grad_check(|g, v| f(g, v), &inputs, GRAD_EPS)?
            };
            Ok((name, err))
        })
        .collect()
}

pub fn small_config(
    backbone: Backbone,
    readout: ReadoutKind,
    tap: usize,
    neurons: usize,
) -> ModelConfig {
    let mut arch = parse_arch(SMALL_ARCH).expect("valid arch");
    arch.backbone = backbone;
    arch.latent_dim = 6;
    arch.codebook.entries = 5;
    arch.codebook.dim = 3;
    let mut c = ModelConfig::new(backbone, readout, tap, neurons);
    c.arch = arch;
    c
}

/// Worst finite-difference error of the full joint loss of a small
/// `backbone`-FR model with respect to (a strided sample of) every trainable
/// parameter, in f64.
pub fn joint_loss_gradient_error(backbone: Backbone, tap: usize) -> Result<f64> {
    let mut cfg = small_config(backbone, ReadoutKind::Fr, tap, 3);
    cfg.beta = 0.5;
    cfg.sparsity = 1e-2;
    let model = Model::<f64>::new(cfg)?;
    let x = randn(&[2, 32, 32, 1], 50).map(|v| v.tanh());
    let s = Tensor::from_fn(&[2, 3], |i| (i % 3) as f64);
    let opts = ForwardOptions::<f64>::train(7);

    // Capture the VQ assignment once so the straight-through surrogate is a
    // smooth function of the parameters.
    let frozen = if backbone == Backbone::Vqvae {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, |_| true);
        let xv = g.constant(x.clone());
        let out = model.forward(&mut g, &vars, xv, &opts)?;
        match out.latent {
            Some(LatentOut::Quantized { quantized, .. }) => Some(quantized.freeze(&g)),
            _ => unreachable!("vq model yields quantized codes"),
        }
    } else {
        None
    };

    let params: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    let f = |g: &mut Graph<f64>, vars: &[Var]| -> Result<Var> {
        let xv = g.constant(x.clone());
        let sv = g.constant(s.clone());
        let mut o = opts;
        o.frozen_codes = frozen.as_ref();
        Ok(model_objective(g, &model, vars, xv, Some(sv), &o)?.total)
    };
    grad_check_strided(f, &params, GRAD_EPS, 6)
}

/// Frozen codes must make the straight-through surrogate exact: re-running
/// with the captured indices reproduces the same quantized value.
pub fn frozen_codes_replay_exact() -> Result<bool> {
    let mut g = Graph::<f64>::new();
    let z = g.leaf(randn(&[4, 3], 60), true);
    let table = g.leaf(randn(&[5, 3], 61), true);
    let q = quantize_straight_through(&mut g, z, table, None)?;
    let frozen = q.freeze(&g);
    let q2 = quantize_straight_through(&mut g, z, table, Some(&frozen))?;
    Ok(g.value(q.z_st).max_abs_diff(g.value(q2.z_st)) == 0.0)
}

/// TF-style same padding: `(output extent, leading pad)`.
fn same_geom(len: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(len);
    (out, total / 2)
}

/// Direct sliding-window convolution, NHWC input and `[kh,kw,cin,cout]` kernel.
pub fn conv2d_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let [n, h, w, cin] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [kh, kw, _, cout] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
    let (oh, pt) = same_geom(h, kh, stride);
    let (ow, pl) = same_geom(w, kw, stride);
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = 0.0;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (oy * stride + dy) as isize - pt as isize;
                            let ix = (ox * stride + dx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv =
                                    x.data()[((b * h + iy as usize) * w + ix as usize) * cin + ci];
                                acc += xv * k.data()[((dy * kw + dx) * cin + ci) * cout + co];
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow, cout], out).expect("shape")
}

/// Scatter form of the transposed convolution: every input pixel stamps the
/// kernel onto the (same-padded) upsampled grid.
pub fn conv_transpose2d_oracle(y: &Tensor<f64>, k: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let [n, h, w, cy] = [y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]];
    let [kh, kw, cx, _] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
    let (oh, ow) = (h * stride, w * stride);
    let (_, pt) = same_geom(oh, kh, stride);
    let (_, pl) = same_geom(ow, kw, stride);
    let mut out = vec![0.0; n * oh * ow * cx];
    for b in 0..n {
        for iy in 0..h {
            for ix in 0..w {
                for dy in 0..kh {
                    for dx in 0..kw {
                        let oy = (iy * stride + dy) as isize - pt as isize;
                        let ox = (ix * stride + dx) as isize - pl as isize;
                        if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                            continue;
                        }
                        for c_out in 0..cx {
                            for c_in in 0..cy {
                                out[((b * oh + oy as usize) * ow + ox as usize) * cx + c_out] += y
                                    .data()[((b * h + iy) * w + ix) * cy + c_in]
                                    * k.data()[((dy * kw + dx) * cx + c_out) * cy + c_in];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow, cx], out).expect("shape")
}

pub fn run1(f: impl FnOnce(&mut Graph<f64>) -> Result<Var>) -> Result<Tensor<f64>> {
    let mut g = Graph::new();
    let v = f(&mut g)?;
    Ok(g.value(v).clone())
}

/// Worst deviation of the library convolutions from the sliding-window and
/// scatter oracles over a few geometries.
pub fn conv_oracle_error() -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, &(shape, kshape, stride)) in [
        ([1usize, 5, 5, 2], [3usize, 3, 2, 4], 1usize),
        ([2, 7, 6, 3], [3, 3, 3, 2], 2),
        ([1, 8, 8, 1], [2, 2, 1, 3], 2),
    ]
    .iter()
    .enumerate()
    {
        let x = randn(&shape, 100 + i as u64);
        let k = randn(&kshape, 200 + i as u64);
        let got = run1(|g| {
            let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
            g.conv2d(xv, kv, stride, Padding::Same)
        })?;
        worst = worst.max(got.max_abs_diff(&conv2d_oracle(&x, &k, stride)));
    }
    for (i, &(shape, kshape, stride)) in [
        ([1usize, 2, 2, 3], [3usize, 3, 2, 3], 2usize),
        ([2, 3, 4, 2], [1, 3, 4, 2], 1),
        ([1, 4, 4, 1], [2, 2, 2, 1], 2),
    ]
    .iter()
    .enumerate()
    {
        let y = randn(&shape, 300 + i as u64);
        let k = randn(&kshape, 400 + i as u64);
        let got = run1(|g| {
            let (yv, kv) = (g.constant(y.clone()), g.constant(k.clone()));
            g.conv_transpose2d(yv, kv, stride, Padding::Same)
        })?;
        worst = worst.max(got.max_abs_diff(&conv_transpose2d_oracle(&y, &k, stride)));
    }
    Ok(worst)
}

/// `|⟨conv2d(x,K), y⟩ − ⟨x, conv_transpose2d(y,K)⟩|` on random tensors.
pub fn adjoint_error(seed: u64, stride: usize) -> Result<f64> {
    let x = randn(&[2, 6, 6, 3], seed);
    let k = randn(&[3, 3, 3, 4], seed + 1);
    let y_shape = [2, 6usize.div_ceil(stride), 6usize.div_ceil(stride), 4];
    let y = randn(&y_shape, seed + 2);
    let cx = run1(|g| {
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        g.conv2d(xv, kv, stride, Padding::Same)
    })?;
    let ty = run1(|g| {
        let (yv, kv) = (g.constant(y.clone()), g.constant(k.clone()));
        g.conv_transpose2d(yv, kv, stride, Padding::Same)
    })?;
    Ok((cx.dot(&y)? - x.dot(&ty)?).abs())
}

fn elu1(v: f64) -> f64 {
    if v > 0.0 {
        v + 1.0
    } else {
        v.exp()
    }
}

/// Factorized readout rates by explicit loops over batch, neurons, pixels
/// and features.
pub fn readout_fr_oracle(
    feat: &Tensor<f64>,
    mask: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: &Tensor<f64>,
) -> Tensor<f64> {
    let (n, p, f) = (
        feat.shape()[0],
        feat.shape()[1] * feat.shape()[2],
        feat.shape()[3],
    );
    let m = bias.numel();
    Tensor::from_fn(&[n, m], |i| {
        let (b, j) = (i / m, i % m);
        let mut drive = 0.0;
        for pp in 0..p {
            for ff in 0..f {
                drive += mask.data()[pp * m + j]
                    * w.data()[ff * m + j]
                    * feat.data()[(b * p + pp) * f + ff];
            }
        }
        elu1(drive + bias.data()[j])
    })
}

/// `(triple-loop error, FR vs its rank-1 FC expansion error)`.
pub fn readout_oracle_errors() -> Result<(f64, f64)> {
    let cfg = small_config(Backbone::Cae, ReadoutKind::Fr, 2, 5);
    let model = Model::<f64>::new(cfg)?;
    let mut rp = model.readout_params();
    rp.bias = randn(&[5], 71).map(|v| 0.3 * v);
    let (side, feats) = (
        rp.mask.as_ref().unwrap().shape()[0],
        rp.weights.as_ref().unwrap().shape()[0],
    );
    let feat = randn(&[3, side, side, feats], 70);

    let rates = |p: &daenr::models::ReadoutParams<f64>| -> Result<Tensor<f64>> {
        run1(|g| {
            let vars = p.bind(g);
            let fv = g.constant(feat.clone());
            daenr::models::readout::apply(g, fv, &vars)
        })
    };
    let fr = rates(&rp)?;
    let oracle = readout_fr_oracle(
        &feat,
        rp.mask.as_ref().unwrap(),
        rp.weights.as_ref().unwrap(),
        &rp.bias,
    );
    let dense = rp.to_dense().expect("factorized readout");
    let fc = rates(&dense)?;
    Ok((fr.max_abs_diff(&oracle), fr.max_abs_diff(&fc)))
}

fn scalar(f: impl FnOnce(&mut Graph<f64>) -> Result<Var>) -> Result<f64> {
    Ok(run1(f)?.item().expect("scalar"))
}

/// Worst deviation of the Poisson, KL, VQ, reconstruction and sparsity terms
/// from direct scalar formulas.
pub fn loss_formula_error() -> Result<f64> {
    use daenr::losses::{kl_gaussian, poisson_loss, recon_l2, sparsity_penalty, vq_losses};
    let rates = randn(&[4, 6], 80).map(|v| v.abs() + 0.1);
    let spikes = Tensor::from_fn(&[4, 6], |i| ((i * 7) % 5) as f64);
    let mu = randn(&[4, 3], 81);
    let lv = randn(&[4, 3], 82).map(|v| 0.5 * v);
    let ze = randn(&[4, 3], 83);
    let zq = randn(&[4, 3], 84);
    let x = randn(&[2, 4, 4, 1], 85);
    let xh = randn(&[2, 4, 4, 1], 86);
    let mask = randn(&[2, 2, 3], 87);

    let mut want_p = 0.0;
    for (r, s) in rates.data().iter().zip(spikes.data()) {
        want_p += r - s * r.ln();
    }
    want_p /= 4.0;
    let mut want_kl = 0.0;
    for (m, l) in mu.data().iter().zip(lv.data()) {
        want_kl += m * m + l.exp() - l - 1.0;
    }
    want_kl *= 0.5 / 4.0;
    let sq: f64 = ze
        .data()
        .iter()
        .zip(zq.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / 12.0;
    let want_vq = sq + 0.25 * sq;
    let want_recon = x
        .data()
        .iter()
        .zip(xh.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / 32.0;
    let want_sp = 0.01 * mask.data().iter().map(|v| v.abs()).sum::<f64>();

    let got = [
        (
            scalar(|g| {
                let (a, b) = (g.constant(rates.clone()), g.constant(spikes.clone()));
                poisson_loss(g, a, b)
            })?,
            want_p,
        ),
        (
            scalar(|g| {
                let (a, b) = (g.constant(mu.clone()), g.constant(lv.clone()));
                kl_gaussian(g, a, b)
            })?,
            want_kl,
        ),
        (
            scalar(|g| {
                let (a, b) = (g.constant(ze.clone()), g.constant(zq.clone()));
                vq_losses(g, a, b, 0.25)
            })?,
            want_vq,
        ),
        (
            scalar(|g| {
                let (a, b) = (g.constant(x.clone()), g.constant(xh.clone()));
                recon_l2(g, a, b)
            })?,
            want_recon,
        ),
        (
            scalar(|g| {
                let a = g.constant(mask.clone());
                sparsity_penalty(g, a, 0.01)
            })?,
            want_sp,
        ),
    ];
    Ok(got.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Two-sided correlation p-value computed without the incomplete beta
/// function: integrates the
/// Student-t density from 0 to |t| with composite Simpson's rule.
pub fn t_test_p_value_quadrature(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let t = r.abs() * (df / (1.0 - r * r)).sqrt();
    let ln_norm =
        ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |x: f64| (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let steps = 20_000;
    let h = t / steps as f64;
    let mut acc = density(0.0) + density(t);
    for i in 1..steps {
        acc += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let half = acc * h / 3.0;
    1.0 - 2.0 * half
}

/// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// A scaled-down synthetic region for quick training tests.
pub fn tiny_region(seed: u64, neurons: usize, n_train: usize) -> RegionDataset {
    synth_lnp(&SynthConfig {
        n_neurons: neurons,
        n_train,
        n_test: 12,
        repeats: 3,
        seed,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config")
}
