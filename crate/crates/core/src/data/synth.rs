//! Linear-nonlinear-Poisson surrogate for recorded V1 responses.
//!
//! Stimuli are Gaussian-smoothed white noise. An informative neuron fires at
//! `softplus(gain · ⟨gabor, x⟩) · poisson_scale`; an uninformative one at a
//! constant rate that ignores the image. Spike counts are Poisson draws.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::preprocess::{preprocess, GrayImage};
use super::RegionDataset;
use crate::error::{Error, Result};
use crate::models::INPUT_SIZE;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub region_name: String,
    pub n_neurons: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub repeats: usize,
    /// Number of evenly spaced Gabor orientations in the bank.
    pub orientations: usize,
    /// Spatial frequencies in cycles per pixel.
    pub frequencies: Vec<f64>,
    /// Gaussian envelope width of the Gabor filters, in pixels.
    pub gabor_sigma: f64,
    /// Width of the Gaussian blur applied to white-noise stimuli, in pixels.
    pub smoothing: f64,
    pub gain: f64,
    pub informative_fraction: f64,
    pub poisson_scale: f64,
    /// Range of the constant rate of uninformative neurons (before scaling).
    pub baseline_rate: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::preset("region3").expect("built-in preset")
    }
}

impl SynthConfig {
    /// Scale presets matching the three recorded regions.
    pub fn preset(name: &str) -> Result<Self> {
        let (n_train, repeats, n_neurons) = match name {
            "region1" => (1800, 10, 103),
            "region2" => (1260, 8, 55),
            "region3" => (1800, 12, 102),
            other => return Err(Error::Config(format!("unknown synthetic preset {other:?}"))),
        };
        Ok(SynthConfig {
            region_name: name.into(),
            n_neurons,
            n_train,
            n_test: 50,
            repeats,
            orientations: 8,
            frequencies: vec![0.08, 0.12, 0.16],
            gabor_sigma: 3.0,
            smoothing: 1.0,
            gain: 8.0,
            informative_fraction: 0.7,
            poisson_scale: 1.0,
            baseline_rate: (0.3, 1.2),
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_neurons == 0 || self.n_train == 0 || self.n_test == 0 || self.repeats == 0 {
            return fail("neuron, image and repeat counts must be >= 1".into());
        }
        if self.orientations == 0 || self.frequencies.is_empty() {
            return fail("the Gabor bank is empty".into());
        }
        if !(0.0..=1.0).contains(&self.informative_fraction) {
            return fail(format!(
                "informative fraction {} outside [0, 1]",
                self.informative_fraction
            ));
        }
        let nonneg = [
            self.gain,
            self.poisson_scale,
            self.smoothing,
            self.baseline_rate.0,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) || !(self.gabor_sigma > 0.0) {
            return fail("gain, scales and rates must be nonnegative".into());
        }
        if !(self.baseline_rate.1 >= self.baseline_rate.0) {
            return fail("baseline rate range is inverted".into());
        }
        Ok(())
    }
}

/// Unit-norm, zero-mean Gabor patch on the 32×32 grid.
pub fn gabor(center: (f64, f64), theta: f64, freq: f64, sigma: f64, phase: f64) -> Vec<f64> {
    let n = INPUT_SIZE;
    let mut g: Vec<f64> = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64 - center.0, (i % n) as f64 - center.1);
            let xr = x * theta.cos() + y * theta.sin();
            let yr = -x * theta.sin() + y * theta.cos();
            (-(xr * xr + yr * yr) / (2.0 * sigma * sigma)).exp()
                * (2.0 * PI * freq * xr + phase).cos()
        })
        .collect();
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter_mut().for_each(|v| *v -= mean);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    g.iter_mut().for_each(|v| *v /= norm);
    g
}

fn blur_1d(
    src: &[f64],
    dst: &mut [f64],
    kernel: &[f64],
    n: usize,
    stride: usize,
    lines: usize,
    step: usize,
) {
    let r = kernel.len() / 2;
    for l in 0..lines {
        let base = l * step;
        for i in 0..n {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = (i + k).saturating_sub(r).min(n - 1);
                acc += w * src[base + j * stride];
            }
            dst[base + i * stride] = acc;
        }
    }
}

/// White Gaussian noise blurred with a separable Gaussian of width `sigma`
/// (edge-clamped). `sigma = 0` returns the raw noise.
pub fn smooth_noise_image<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec<f64> {
    let n = INPUT_SIZE;
    let raw: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    if sigma == 0.0 {
        return raw;
    }
    let r = (3.0 * sigma).ceil() as usize;
    let mut kernel: Vec<f64> = (0..=2 * r)
        .map(|k| (-((k as f64 - r as f64).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= s);
    let mut tmp = vec![0.0; n * n];
    let mut out = vec![0.0; n * n];
    blur_1d(&raw, &mut tmp, &kernel, n, 1, n, n);
    blur_1d(&tmp, &mut out, &kernel, n, n, n, 1);
    out
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f32 {
    if rate <= 0.0 {
        return 0.0;
    }
    Poisson::new(rate)
        .expect("positive finite rate")
        .sample(rng) as f32
}

/// Generates a complete region with known informative neurons.
pub fn synth_lnp(cfg: &SynthConfig) -> Result<RegionDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.n_train + cfg.n_test;
    let images: Vec<GrayImage> = (0..total)
        .map(|_| {
            GrayImage::new(
                INPUT_SIZE,
                INPUT_SIZE,
                smooth_noise_image(&mut rng, cfg.smoothing),
            )
        })
        .collect::<Result<_>>()?;
    let stimuli = preprocess(&images)?;

    let m = cfg.n_neurons;
    let n_inf = (cfg.informative_fraction * m as f64).round() as usize;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut informative = vec![false; m];
    order[..n_inf].iter().for_each(|&j| informative[j] = true);

    // Receptive fields near the image centre, drawn from the filter bank.
    let c = (INPUT_SIZE as f64 - 1.0) / 2.0;
    let filters: Vec<Option<Vec<f64>>> = informative
        .iter()
        .map(|&inf| {
            let center = (
                c + rng.random_range(-6.0..6.0),
                c + rng.random_range(-6.0..6.0),
            );
            let theta = PI * rng.random_range(0..cfg.orientations) as f64 / cfg.orientations as f64;
            let freq = cfg.frequencies[rng.random_range(0..cfg.frequencies.len())];
            let phase = rng.random_range(0.0..2.0 * PI);
            inf.then(|| gabor(center, theta, freq, cfg.gabor_sigma, phase))
        })
        .collect();
    let baselines: Vec<f64> = (0..m)
        .map(|_| rng.random_range(cfg.baseline_rate.0..=cfg.baseline_rate.1))
        .collect();

    let px = INPUT_SIZE * INPUT_SIZE;
    let rate = |img: usize, j: usize| -> f64 {
        let rate = match &filters[j] {
            Some(f) => {
                let x = &stimuli.data()[img * px..(img + 1) * px];
                let drive: f64 = f.iter().zip(x).map(|(a, &b)| a * b as f64).sum();
                softplus(cfg.gain * drive)
            }
            None => baselines[j],
        };
        rate * cfg.poisson_scale
    };

    let mut train = Vec::with_capacity(cfg.n_train * m);
    for i in 0..cfg.n_train {
        for j in 0..m {
            let r = rate(i, j);
            train.push(poisson(&mut rng, r));
        }
    }
    let mut test = Vec::with_capacity(cfg.n_test * cfg.repeats * m);
    for t in 0..cfg.n_test {
        let rates: Vec<f64> = (0..m).map(|j| rate(cfg.n_train + t, j)).collect();
        for _ in 0..cfg.repeats {
            test.extend(rates.iter().map(|&r| poisson(&mut rng, r)));
        }
    }

    let data = stimuli.into_data();
    let split_at = cfg.n_train * px;
    let ds = RegionDataset {
        region_name: cfg.region_name.clone(),
        train_stimuli: Tensor::new(
            vec![cfg.n_train, INPUT_SIZE, INPUT_SIZE, 1],
            data[..split_at].to_vec(),
        )?,
        train_responses: Tensor::new(vec![cfg.n_train, m], train)?,
        test_stimuli: Tensor::new(
            vec![cfg.n_test, INPUT_SIZE, INPUT_SIZE, 1],
            data[split_at..].to_vec(),
        )?,
        test_responses: Tensor::new(vec![cfg.n_test, cfg.repeats, m], test)?,
        ground_truth_informative: Some(informative),
    };
    ds.validate()?;
    Ok(ds)
}
