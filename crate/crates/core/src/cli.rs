//! Command-line front end: `synth`, `train`, `eval`, `analyze`, `sweep`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_region, split, synth_lnp, RegionDataset, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::metrics::{evaluate, neuron_subset_retrain, significance_split, MetricsReport};
use crate::models::{
    checkpoint, parse_arch, Backbone, Model, ModelConfig, ReadoutKind, DEFAULT_ARCH,
};
use crate::presets::{lookup, region_index, PresetTable};
use crate::tensor::Tensor;
use crate::training::{history_csv, train, HistoryRow, TrainConfig};

/// Environment variable setting how many sweep runs execute at once.
pub const THREADS_ENV: &str = "DAENR_THREADS";
/// Number of test images dumped as PGM.
pub const N_DUMPED: usize = 10;

#[derive(Debug, Parser)]
#[command(
    name = "daenr",
    version,
    about = "Auto-encoders with a neural-response readout"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic region with known informative neurons.
    Synth(SynthArgs),
    /// Train one variant and evaluate it on the test set.
    Train(TrainArgs),
    /// Re-evaluate a trained run.
    Eval(EvalArgs),
    /// Split neurons by significance, optionally retraining on each group.
    Analyze(AnalyzeArgs),
    /// Train and evaluate every configuration in a grid file.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "region3")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub informative_fraction: Option<f64>,
    #[arg(long)]
    pub gain: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Full run configuration (as written to `config.json`); overrides the
    /// model and training flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "cae")]
    pub backbone: Backbone,
    #[arg(long, default_value = "fr")]
    pub readout: ReadoutKind,
    #[arg(long, default_value_t = 1)]
    pub tap: usize,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Take α and β from a published table: ir, nrs, ir-variants, nrs-variants.
    #[arg(long)]
    pub preset_table: Option<PresetTable>,
    /// Region for preset lookup; defaults to the dataset's region name.
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long, default_value = DEFAULT_ARCH)]
    pub arch: String,
    #[arg(long, default_value_t = 100)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1000)]
    pub patience: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 20_000)]
    pub max_steps: u64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: u64,
    #[arg(long, default_value_t = 0.05)]
    pub p: f64,
    /// Print every validation record.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub p: f64,
    #[arg(long)]
    pub retrain_subsets: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything that determines a run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub p_threshold: f64,
}

impl RunConfig {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub build_id: String,
    pub input_manifest: PathBuf,
    pub data_digest: String,
    pub output_dir: PathBuf,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn build_id() -> String {
    format!("daenr-core {}", env!("CARGO_PKG_VERSION"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, s)
}

/// Binary PGM (P5, 8-bit) with `[-1, 1]` mapped onto `0..=255`.
pub fn write_pgm(path: &Path, pixels: &[f32], height: usize, width: usize) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        pixels
            .iter()
            .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0).round() as u8),
    );
    write(path, out)
}

/// Dumps the first test stimuli and, if present, their reconstructions.
pub fn write_reconstructions(
    dir: &Path,
    ds: &RegionDataset,
    recon: Option<&Tensor<f32>>,
) -> Result<usize> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (ds.test_stimuli.shape()[1], ds.test_stimuli.shape()[2]);
    let px = h * w;
    let n = N_DUMPED.min(ds.n_test());
    let mut written = 0;
    for i in 0..n {
        let orig = &ds.test_stimuli.data()[i * px..(i + 1) * px];
        write_pgm(&dir.join(format!("original_{i:02}.pgm")), orig, h, w)?;
        written += 1;
        if let Some(r) = recon {
            write_pgm(
                &dir.join(format!("reconstructed_{i:02}.pgm")),
                &r.data()[i * px..(i + 1) * px],
                h,
                w,
            )?;
            written += 1;
        }
    }
    Ok(written)
}

fn ensure_finite_report(r: &MetricsReport) -> Result<()> {
    let img = [r.mse, r.psnr_db, r.ssim].into_iter().flatten();
    if img.chain([r.mean_r]).any(|v| !v.is_finite()) {
        return Err(Error::Domain {
            op: "evaluate",
            reason: "report contains non-finite metrics".into(),
        });
    }
    Ok(())
}

/// Resolves CLI flags into a validated run configuration.
pub fn run_config_from_args(args: &TrainArgs, ds: &RegionDataset) -> Result<RunConfig> {
    if let Some(path) = &args.config {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_slice(&raw)?;
        validate_run_config(&cfg, ds)?;
        return Ok(cfg);
    }
    let mut arch = parse_arch(&args.arch)?;
    arch.backbone = args.backbone;
    arch.latent_dim = args.latent_dim;
    let mut model = ModelConfig::new(args.backbone, args.readout, args.tap, ds.n_neurons());
    model.arch = arch;
    model.sparsity = args.sparsity;
    model.seed = args.seed;
    if let Some(table) = args.preset_table {
        let region = region_index(args.region.as_deref().unwrap_or(&ds.region_name))?;
        let (a, b) = lookup(table, region, args.backbone, args.readout, args.tap)?;
        model.alpha = a;
        model.beta = b;
    }
    if let Some(a) = args.alpha {
        model.alpha = a;
    }
    if let Some(b) = args.beta {
        model.beta = b;
    }
    let cfg = RunConfig {
        model,
        train: TrainConfig {
            lr_initial: args.lr,
            patience_steps: args.patience,
            batch_size: args.batch_size,
            max_steps: args.max_steps,
            eval_every: args.eval_every,
            seed: args.seed,
            ..TrainConfig::default()
        },
        p_threshold: args.p,
    };
    validate_run_config(&cfg, ds)?;
    Ok(cfg)
}

pub fn validate_run_config(cfg: &RunConfig, ds: &RegionDataset) -> Result<()> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    if cfg.model.n_neurons != ds.n_neurons() {
        return Err(Error::Config(format!(
            "config expects {} neurons, dataset has {}",
            cfg.model.n_neurons,
            ds.n_neurons()
        )));
    }
    if !(0.0..=1.0).contains(&cfg.p_threshold) {
        return Err(Error::Config(format!(
            "p threshold {} outside [0, 1]",
            cfg.p_threshold
        )));
    }
    Ok(())
}

/// Short result of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub report: MetricsReport,
    pub best_step: u64,
    pub total_steps: u64,
}

/// Trains, checkpoints and evaluates one configuration into `out`.
pub fn execute_run(
    cfg: &RunConfig,
    ds: &RegionDataset,
    data_path: &Path,
    out: &Path,
    mut log: impl FnMut(&HistoryRow),
) -> Result<RunSummary> {
    let started = now();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), cfg)?;
    let model = Model::<f32>::new(cfg.model.clone())?;
    let sp = split(ds.n_train(), cfg.train.val_fraction, cfg.train.seed)?;
    let outcome = train(model, ds, &sp, &cfg.train, &mut log)?;
    write(&out.join("history.csv"), history_csv(&outcome.history))?;
    let mut losses = String::from(LossBreakdown::CSV_HEADER);
    losses.push('\n');
    for (step, b) in &outcome.val_losses {
        losses.push_str(&b.csv_row(*step));
        losses.push('\n');
    }
    write(&out.join("losses.csv"), losses)?;
    checkpoint::save(
        &outcome.model,
        out.join("checkpoint"),
        outcome.best_step,
        serde_json::to_value(&outcome.history)?,
    )?;
    let report = evaluate_into(&outcome.model, ds, cfg.p_threshold, out)?;
    let hash = cfg.hash();
    write_json(
        &out.join("run_manifest.json"),
        &RunManifest {
            config_hash: hash.clone(),
            seed: cfg.train.seed,
            build_id: build_id(),
            input_manifest: data_path.to_path_buf(),
            data_digest: ds.digest(),
            output_dir: out.to_path_buf(),
            started_unix: started,
            finished_unix: now(),
        },
    )?;
    Ok(RunSummary {
        config_hash: hash,
        report,
        best_step: outcome.best_step,
        total_steps: outcome.total_steps,
    })
}

/// Writes `report.json`, `neurons.csv` and `reconstructions/` for a model.
pub fn evaluate_into(
    model: &Model<f32>,
    ds: &RegionDataset,
    p: f64,
    out: &Path,
) -> Result<MetricsReport> {
    let (report, recon) = evaluate(model, ds, p)?;
    ensure_finite_report(&report)?;
    write_json(&out.join("report.json"), &report)?;
    write(&out.join("neurons.csv"), report.neuron_csv())?;
    write_reconstructions(&out.join("reconstructions"), ds, recon.as_ref())?;
    Ok(report)
}

fn load_run(run: &Path) -> Result<(RunConfig, Model<f32>)> {
    let cfg_path = run.join("config.json");
    let raw = fs::read(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg: RunConfig = serde_json::from_slice(&raw)?;
    let ckpt = run.join("checkpoint");
    if !ckpt.join(checkpoint::MANIFEST).exists() {
        return Err(Error::Config(format!(
            "no checkpoint in {}",
            ckpt.display()
        )));
    }
    let (model, _) = checkpoint::load::<f32>(&ckpt)?;
    Ok((cfg, model))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub ids: Vec<usize>,
    pub mse: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub mean_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub p_threshold: f64,
    pub significant_ids: Vec<usize>,
    pub insignificant_ids: Vec<usize>,
    /// Fraction of truly informative neurons found significant, when the
    /// dataset carries ground truth.
    pub informative_recall: Option<f64>,
    pub retrain_significant: Option<SubsetResult>,
    pub retrain_insignificant: Option<SubsetResult>,
}

pub fn analyze(
    cfg: &RunConfig,
    model: &Model<f32>,
    ds: &RegionDataset,
    p: f64,
    retrain: bool,
) -> Result<Analysis> {
    let (report, _) = evaluate(model, ds, p)?;
    let sp = significance_split(&report.per_neuron_r, report.n_test, p)?;
    let informative_recall = ds.ground_truth_informative.as_ref().and_then(|gt| {
        let total = gt.iter().filter(|&&b| b).count();
        (total > 0)
            .then(|| sp.significant_ids.iter().filter(|&&i| gt[i]).count() as f64 / total as f64)
    });
    let subset = |ids: &[usize]| -> Result<Option<SubsetResult>> {
        if !retrain || ids.is_empty() {
            return Ok(None);
        }
        let (r, _) = neuron_subset_retrain(&cfg.model, ds, ids, &cfg.train, p)?;
        Ok(Some(SubsetResult {
            ids: ids.to_vec(),
            mse: r.mse,
            psnr_db: r.psnr_db,
            ssim: r.ssim,
            mean_r: r.mean_r,
        }))
    };
    Ok(Analysis {
        p_threshold: p,
        retrain_significant: subset(&sp.significant_ids)?,
        retrain_insignificant: subset(&sp.insignificant_ids)?,
        significant_ids: sp.significant_ids,
        insignificant_ids: sp.insignificant_ids,
        informative_recall,
    })
}

/// One grid entry; unset fields fall back to the grid's `base`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridRun {
    pub name: Option<String>,
    pub backbone: Option<Backbone>,
    pub readout: Option<ReadoutKind>,
    pub tap: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub preset_table: Option<PresetTable>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub base: RunConfig,
    /// Seed mixed with each run's config hash when a run sets no seed.
    #[serde(default)]
    pub master_seed: Option<u64>,
    pub runs: Vec<GridRun>,
}

pub const SWEEP_HEADER: &str =
    "name,backbone,readout,tap,alpha,beta,seed,status,mse,psnr_db,ssim,mean_r,error";

impl Grid {
    pub fn resolve(&self, run: &GridRun, ds: &RegionDataset) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        let m = &mut cfg.model;
        m.n_neurons = ds.n_neurons();
        if let Some(b) = run.backbone {
            m.arch.backbone = b;
        }
        if let Some(r) = run.readout {
            m.readout = r;
        }
        if let Some(t) = run.tap {
            m.tap = t;
        }
        if let Some(table) = run.preset_table {
            let (a, b) = lookup(
                table,
                region_index(&ds.region_name)?,
                m.arch.backbone,
                m.readout,
                m.tap,
            )?;
            m.alpha = a;
            m.beta = b;
        }
        if let Some(a) = run.alpha {
            m.alpha = a;
        }
        if let Some(b) = run.beta {
            m.beta = b;
        }
        let seed = match (run.seed, self.master_seed) {
            (Some(s), _) => s,
            (None, Some(master)) => {
                let h = Sha256::digest(format!("{master}:{}", cfg.hash()).as_bytes());
                u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
            }
            (None, None) => cfg.train.seed,
        };
        cfg.model.seed = seed;
        cfg.train.seed = seed;
        validate_run_config(&cfg, ds)?;
        Ok(cfg)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn sweep_row(name: &str, cfg: Option<&RunConfig>, result: &Result<RunSummary>) -> String {
    let cols = match cfg {
        Some(c) => format!(
            "{},{},{},{},{},{}",
            c.model.arch.backbone,
            c.model.readout,
            c.model.tap,
            c.model.alpha,
            c.model.beta,
            c.train.seed
        ),
        None => ",,,,,".into(),
    };
    match result {
        Ok(s) => format!(
            "{name},{cols},ok,{},{},{},{},",
            fmt_opt(s.report.mse),
            fmt_opt(s.report.psnr_db),
            fmt_opt(s.report.ssim),
            s.report.mean_r
        ),
        Err(e) => format!(
            "{name},{cols},failed,,,,,\"{}\"",
            e.to_string().replace('"', "'")
        ),
    }
}

/// Runs every grid entry (continuing past failures) and writes
/// `summary.csv`. Returns the number of failed runs.
pub fn sweep(
    grid: &Grid,
    ds: &RegionDataset,
    data_path: &Path,
    out: &Path,
    threads: usize,
) -> Result<usize> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let jobs: Vec<(String, Result<RunConfig>)> = grid
        .runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let name = r.name.clone().unwrap_or_else(|| format!("run{i:03}"));
            (name, grid.resolve(r, ds))
        })
        .collect();
    let run_one = |(name, cfg): &(String, Result<RunConfig>)| -> String {
        let result = match cfg {
            Ok(c) => execute_run(c, ds, data_path, &out.join(name), |_| {}),
            Err(e) => Err(Error::Config(e.to_string())),
        };
        sweep_row(name, cfg.as_ref().ok(), &result)
    };
    let threads = threads.max(1).min(jobs.len().max(1));
    let rows: Vec<String> = if threads == 1 {
        jobs.iter().map(run_one).collect()
    } else {
        let mut rows = vec![String::new(); jobs.len()];
        let chunk = jobs.len().div_ceil(threads);
        std::thread::scope(|s| {
            for (jc, rc) in jobs.chunks(chunk).zip(rows.chunks_mut(chunk)) {
                let run_one = &run_one;
                s.spawn(move || {
                    for (j, r) in jc.iter().zip(rc.iter_mut()) {
                        *r = run_one(j);
                    }
                });
            }
        });
        rows
    };
    let failed = rows.iter().filter(|r| r.contains(",failed,")).count();
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    write(&out.join("summary.csv"), csv)?;
    Ok(failed)
}

fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

fn print_row(r: &HistoryRow) {
    println!(
        "phase {} step {:>6} lr {:.2e} train {:.5} val {:.5} (recon {:.5}, neural {:.4})",
        r.phase, r.step, r.lr, r.train_total, r.val_total, r.val_recon, r.val_neural
    );
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let mut cfg = SynthConfig::preset(&a.preset)?;
            cfg.seed = a.seed;
            if let Some(f) = a.informative_fraction {
                cfg.informative_fraction = f;
            }
            if let Some(g) = a.gain {
                cfg.gain = g;
            }
            if let Some(n) = a.n_train {
                cfg.n_train = n;
            }
            let ds = synth_lnp(&cfg)?;
            let path = ds.save(&a.out)?;
            write_json(&a.out.join("synth_config.json"), &cfg)?;
            println!("{}", path.display());
        }
        Command::Train(a) => {
            let ds = load_region(&a.data)?;
            let cfg = run_config_from_args(&a, &ds)?;
            let verbose = a.verbose;
            let s = execute_run(&cfg, &ds, &a.data, &a.out, |r| {
                if verbose {
                    print_row(r)
                }
            })?;
            println!("{}", serde_json::to_string(&s.report_summary())?);
        }
        Command::Eval(a) => {
            let ds = load_region(&a.data)?;
            let (cfg, model) = load_run(&a.run)?;
            let p = a.p.unwrap_or(cfg.p_threshold);
            let report = evaluate_into(&model, &ds, p, &a.run)?;
            println!(
                "mse {:?} ssim {:?} mean_r {}",
                report.mse, report.ssim, report.mean_r
            );
        }
        Command::Analyze(a) => {
            let ds = load_region(&a.data)?;
            let (cfg, model) = load_run(&a.run)?;
            let analysis = analyze(&cfg, &model, &ds, a.p, a.retrain_subsets)?;
            write_json(&a.run.join("analysis.json"), &analysis)?;
            println!(
                "{} significant, {} insignificant",
                analysis.significant_ids.len(),
                analysis.insignificant_ids.len()
            );
        }
        Command::Sweep(a) => {
            let ds = load_region(&a.data)?;
            let raw = fs::read(&a.grid).map_err(|e| Error::io(&a.grid, e))?;
            let grid: Grid = serde_json::from_slice(&raw)?;
            let failed = sweep(&grid, &ds, &a.data, &a.out, threads_from_env())?;
            if failed > 0 {
                return Err(Error::Config(format!(
                    "{failed} of {} sweep runs failed",
                    grid.runs.len()
                )));
            }
        }
    }
    Ok(())
}

impl RunSummary {
    fn report_summary(&self) -> serde_json::Value {
        serde_json::json!({
            "config_hash": self.config_hash,
            "mse": self.report.mse,
            "psnr_db": self.report.psnr_db,
            "ssim": self.report.ssim,
            "mean_r": self.report.mean_r,
            "best_step": self.best_step,
            "total_steps": self.total_steps,
        })
    }
}

/// Entry point for the `daenr` binary; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            1
        }
    }
}
