//! Image-quality and neural-similarity metrics, and the significant-neuron
//! analysis.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::data::{split, RegionDataset};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, INPUT_SIZE};
use crate::tensor::{Element, Tensor};
use crate::training::{train, TrainConfig, TrainOutcome};

/// Intensity range width of `[-1, 1]` images.
pub const PEAK: f64 = 2.0;
/// Reported PSNR for a perfect reconstruction.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

pub fn psnr_db(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    g.iter()
        .flat_map(|a| g.iter().map(move |b| a * b))
        .collect()
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows.
pub fn ssim(a: &[f64], b: &[f64], height: usize, width: usize) -> f64 {
    let w = gaussian_window();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let (ny, nx) = (height + 1 - SSIM_WINDOW, width + 1 - SSIM_WINDOW);
    let mut total = 0.0;
    for y in 0..ny {
        for x in 0..nx {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let k = w[dy * SSIM_WINDOW + dx];
                    let i = (y + dy) * width + x + dx;
                    ma += k * a[i];
                    mb += k * b[i];
                    saa += k * a[i] * a[i];
                    sbb += k * b[i] * b[i];
                    sab += k * a[i] * b[i];
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (ny * nx) as f64
}

/// Per-image metrics for `[n,32,32,1]` stacks.
pub fn per_image_metrics<T: Element>(
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
) -> Result<Vec<ImageMetrics>> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape(
            "image_metrics",
            format!("{:?} vs {:?}", x.shape(), x_hat.shape()),
        ));
    }
    let s = x.shape();
    if s.len() != 4 || s[3] != 1 || s[1] < SSIM_WINDOW || s[2] < SSIM_WINDOW {
        return Err(Error::shape(
            "image_metrics",
            format!("expected [n,h,w,1] images, got {s:?}"),
        ));
    }
    let px = s[1] * s[2];
    let a: Vec<f64> = x.data().iter().map(|v| v.f64()).collect();
    let b: Vec<f64> = x_hat.data().iter().map(|v| v.f64()).collect();
    Ok(a.chunks(px)
        .zip(b.chunks(px))
        .map(|(a, b)| {
            let mse = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / px as f64;
            ImageMetrics {
                mse,
                psnr_db: psnr_db(mse),
                ssim: ssim(a, b, s[1], s[2]),
            }
        })
        .collect())
}

/// Per-image metrics averaged over the set.
pub fn image_metrics<T: Element>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<ImageMetrics> {
    let per = per_image_metrics(x, x_hat)?;
    let n = per.len().max(1) as f64;
    Ok(ImageMetrics {
        mse: per.iter().map(|m| m.mse).sum::<f64>() / n,
        psnr_db: per.iter().map(|m| m.psnr_db).sum::<f64>() / n,
        ssim: per.iter().map(|m| m.ssim).sum::<f64>() / n,
    })
}

/// Sample correlation; zero when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Correlation of each neuron's predicted rates (`[t,m]`) with its
/// repeat-averaged responses (`[t,m]`), and their unweighted mean.
pub fn pearson_per_neuron<T: Element>(
    pred: &Tensor<T>,
    mean_resp: &Tensor<T>,
) -> Result<(Vec<f64>, f64)> {
    if pred.shape() != mean_resp.shape() || pred.rank() != 2 {
        return Err(Error::shape(
            "pearson_per_neuron",
            format!("{:?} vs {:?}", pred.shape(), mean_resp.shape()),
        ));
    }
    let (t, m) = (pred.shape()[0], pred.shape()[1]);
    if t < 3 {
        return Err(Error::domain(
            "pearson_per_neuron",
            format!("{t} test stimuli, need at least 3"),
        ));
    }
    let col = |x: &Tensor<T>, j: usize| -> Vec<f64> {
        (0..t).map(|i| x.data()[i * m + j].f64()).collect()
    };
    let r: Vec<f64> = (0..m)
        .map(|j| pearson(&col(pred, j), &col(mean_resp, j)))
        .collect();
    let mean = r.iter().sum::<f64>() / m.max(1) as f64;
    Ok((r, mean))
}

/// Two-sided p-value of a sample correlation `r` over `n` pairs under the
/// null of no correlation (t-test with `n - 2` degrees of freedom).
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = n.saturating_sub(2) as f64;
    if df <= 0.0 {
        return 1.0;
    }
    let r2 = (r * r).min(1.0);
    if r2 >= 1.0 {
        return 0.0;
    }
    let t2 = r2 * df / (1.0 - r2);
    // P(|T| > t) = I_{df/(df+t²)}(df/2, 1/2)
    beta_reg(df / 2.0, 0.5, df / (df + t2)).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignificanceSplit {
    pub significant_ids: Vec<usize>,
    pub insignificant_ids: Vec<usize>,
}

pub fn significance_split(
    per_neuron_r: &[f64],
    n_samples: usize,
    p_threshold: f64,
) -> Result<SignificanceSplit> {
    if n_samples < 4 {
        return Err(Error::domain(
            "significance_split",
            format!("{n_samples} samples, need at least 4"),
        ));
    }
    let mut out = SignificanceSplit::default();
    for (i, &r) in per_neuron_r.iter().enumerate() {
        if correlation_p_value(r, n_samples) <= p_threshold {
            out.significant_ids.push(i);
        } else {
            out.insignificant_ids.push(i);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Image metrics are absent for models without a decoder path.
    pub mse: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub per_neuron_r: Vec<f64>,
    pub per_neuron_p: Vec<f64>,
    pub mean_r: f64,
    pub significant_ids: Vec<usize>,
    pub insignificant_ids: Vec<usize>,
    pub p_threshold: f64,
    pub n_test: usize,
}

impl MetricsReport {
    /// One row per neuron: `id,r,p,significant`.
    pub fn neuron_csv(&self) -> String {
        let mut s = String::from("id,r,p,significant\n");
        for (i, (r, p)) in self.per_neuron_r.iter().zip(&self.per_neuron_p).enumerate() {
            let sig = self.significant_ids.binary_search(&i).is_ok();
            s.push_str(&format!("{i},{r},{p},{sig}\n"));
        }
        s
    }
}

/// Eval-mode predictions on the test set: reconstructions (if the model has
/// a decoder path) and rates.
pub fn predict_test<T: Element>(
    model: &Model<T>,
    ds: &RegionDataset,
    chunk: usize,
) -> Result<(Option<Tensor<f32>>, Tensor<f32>)> {
    let t = ds.n_test();
    let px = INPUT_SIZE * INPUT_SIZE;
    let mut recon: Option<Vec<f32>> = None;
    let mut rates = Vec::with_capacity(t * model.config().n_neurons);
    let rows: Vec<usize> = (0..t).collect();
    for part in rows.chunks(chunk.max(1)) {
        let x: Tensor<T> = ds.test_stimuli.select_rows(part).cast();
        let (r, s) = model.predict(&x)?;
        if let Some(r) = r {
            recon
                .get_or_insert_with(|| Vec::with_capacity(t * px))
                .extend(r.data().iter().map(|v| v.f64() as f32));
        }
        rates.extend(s.data().iter().map(|v| v.f64() as f32));
    }
    let recon = match recon {
        Some(d) => Some(Tensor::new(vec![t, INPUT_SIZE, INPUT_SIZE, 1], d)?),
        None => None,
    };
    Ok((
        recon,
        Tensor::new(vec![t, model.config().n_neurons], rates)?,
    ))
}

/// Full test-set report for a trained model.
pub fn evaluate<T: Element>(
    model: &Model<T>,
    ds: &RegionDataset,
    p_threshold: f64,
) -> Result<(MetricsReport, Option<Tensor<f32>>)> {
    let (recon, rates) = predict_test(model, ds, 200)?;
    let img = match &recon {
        Some(r) => Some(image_metrics(&ds.test_stimuli, r)?),
        None => None,
    };
    let (per_neuron_r, mean_r) = pearson_per_neuron(&rates, &ds.test_mean_responses())?;
    let n = ds.n_test();
    let per_neuron_p = per_neuron_r
        .iter()
        .map(|&r| correlation_p_value(r, n))
        .collect();
    let sig = significance_split(&per_neuron_r, n, p_threshold)?;
    Ok((
        MetricsReport {
            mse: img.map(|m| m.mse),
            psnr_db: img.map(|m| m.psnr_db),
            ssim: img.map(|m| m.ssim),
            per_neuron_r,
            per_neuron_p,
            mean_r,
            significant_ids: sig.significant_ids,
            insignificant_ids: sig.insignificant_ids,
            p_threshold,
            n_test: n,
        },
        recon,
    ))
}

/// Retrains `config` from scratch on the responses of neurons `ids` only and
/// reports its test metrics.
pub fn neuron_subset_retrain(
    config: &ModelConfig,
    ds: &RegionDataset,
    ids: &[usize],
    train_cfg: &TrainConfig,
    p_threshold: f64,
) -> Result<(MetricsReport, TrainOutcome<f32>)> {
    let sub = ds.select_neurons(ids)?;
    let mut cfg = config.clone();
    cfg.n_neurons = ids.len();
    let model = Model::<f32>::new(cfg)?;
    let sp = split(sub.n_train(), train_cfg.val_fraction, train_cfg.seed)?;
    let outcome = train(model, &sub, &sp, train_cfg, |_| {})?;
    let (report, _) = evaluate(&outcome.model, &sub, p_threshold)?;
    Ok((report, outcome))
}
