//! Comparison harnesses: branch ablations, noise robustness, and forward
//! wall-clock scaling. Each runs variants under one shared setup so the
//! numbers are comparable across rows.

use std::time::Instant;

use fldmamba_core::data::{inject_noise, window_origins, Split};
use fldmamba_core::graph::Graph;
use fldmamba_core::model::{Model, ModelConfig};
use fldmamba_core::rng::{derive_seed, Rng};
use fldmamba_core::tensor::Tensor;

use crate::config::AppConfig;
use crate::train::{evaluate, load_dataset, train_loop};
use crate::{config_error, data_error, CliError};

/// Noise for robustness level `i` draws from substream `NOISE_STREAM + i`.
const NOISE_STREAM: u64 = 90_000;

/// Returns the config with one branch disabled: `ft` the frequency filter
/// inside the spectral encoder, `fm` that encoder entirely, `ma` the plain
/// encoder, `rbf` input smoothing, `ilt` the oscillator head.
pub fn apply_variant(app: &AppConfig, tag: &str) -> Result<AppConfig, CliError> {
    let mut out = app.clone();
    match tag {
        "ft" => out.model.use_ft = false,
        "fm" => out.model.use_fmamba = false,
        "ma" => out.model.use_mamba = false,
        "rbf" => out.model.use_rbf = false,
        "ilt" => out.model.use_ilt = false,
        other => {
            return Err(config_error(format!(
                "unknown ablation variant `{other}`; expected ft, fm, ma, rbf, or ilt"
            )))
        }
    }
    Ok(out)
}

#[derive(Debug)]
pub struct AblationRow {
    pub variant: String,
    pub val_mse: f64,
    pub test_mse: f64,
    pub n_params: usize,
    pub epochs_run: usize,
}

#[derive(Debug)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub data_hash: u64,
}

/// Trains the full model, then each requested variant, all on the same
/// dataset and seed. The first row is always `full`.
pub fn ablate(app: &AppConfig, variants: &[String]) -> Result<AblationOutcome, CliError> {
    // Fail on a bad tag before spending minutes training.
    let variant_apps: Vec<(String, AppConfig)> = variants
        .iter()
        .map(|tag| apply_variant(app, tag).map(|a| (tag.clone(), a)))
        .collect::<Result<_, _>>()?;

    let raw = load_dataset(app)?;
    let full = train_loop(app, &raw)?;
    let data_hash = full.report.data_hash;
    let mut rows = vec![row_from(String::from("full"), &full.report)];
    for (tag, variant_app) in &variant_apps {
        let run = train_loop(variant_app, &raw)?;
        rows.push(row_from(format!("w/o {tag}"), &run.report));
    }
    Ok(AblationOutcome { rows, data_hash })
}

fn row_from(variant: String, report: &crate::train::MetricsReport) -> AblationRow {
    AblationRow {
        variant,
        val_mse: report.val.mse,
        test_mse: report.test.mse,
        n_params: report.n_params,
        epochs_run: report.epochs_run,
    }
}

#[derive(Debug)]
pub struct RobustnessRow {
    pub level: f64,
    pub full_mse: f64,
    /// Degradation of the full model against its own clean-input MSE.
    pub full_delta: f64,
    pub worbf_mse: f64,
    pub worbf_delta: f64,
}

#[derive(Debug)]
pub struct RobustnessOutcome {
    pub clean_full: f64,
    pub clean_worbf: f64,
    pub rows: Vec<RobustnessRow>,
}

/// Trains the full model and the smoothing-free variant, then scores both
/// on test inputs corrupted at each noise level (targets stay clean). A
/// level of 0 reproduces the clean MSE bit for bit.
pub fn robustness(app: &AppConfig, levels: &[f64]) -> Result<RobustnessOutcome, CliError> {
    if levels.is_empty() {
        return Err(config_error("no noise levels given"));
    }
    for &level in levels {
        if !(0.0..1.0).contains(&level) {
            return Err(config_error(format!(
                "noise level {level} is outside [0, 1)"
            )));
        }
    }
    let raw = load_dataset(app)?;
    let full = train_loop(app, &raw)?;
    let worbf = train_loop(&apply_variant(app, "rbf")?, &raw)?;
    // Both runs normalized the same raw data, so either working dataset
    // serves as the shared clean copy.
    let ds = &full.ds;
    let (l, h) = (app.model.lookback, app.model.horizon);
    let batch = app.train.batch;
    let origins = window_origins(ds, Split::Test, l, h, 1).map_err(data_error)?;
    let clean_full = evaluate(&full.model, ds, ds, &origins, batch, l, h)?.0.mse;
    let clean_worbf = evaluate(&worbf.model, ds, ds, &origins, batch, l, h)?.0.mse;

    let mut rows = Vec::with_capacity(levels.len());
    for (i, &level) in levels.iter().enumerate() {
        let seed = derive_seed(app.train.seed, NOISE_STREAM + i as u64);
        let mut noisy = ds.clone();
        noisy.values = inject_noise(&ds.values, level, seed).map_err(data_error)?;
        let full_mse = evaluate(&full.model, &noisy, ds, &origins, batch, l, h)?.0.mse;
        let worbf_mse = evaluate(&worbf.model, &noisy, ds, &origins, batch, l, h)?.0.mse;
        rows.push(RobustnessRow {
            level,
            full_mse,
            full_delta: full_mse - clean_full,
            worbf_mse,
            worbf_delta: worbf_mse - clean_worbf,
        });
    }
    Ok(RobustnessOutcome {
        clean_full,
        clean_worbf,
        rows,
    })
}

#[derive(Debug)]
pub struct BenchRow {
    pub length: usize,
    pub median_seconds: f64,
    /// This row's median over the previous row's.
    pub ratio_vs_prev: Option<f64>,
}

const BENCH_BATCH: usize = 8;
const BENCH_VARIATES: usize = 8;
const BENCH_STATE: usize = 16;
const BENCH_WARMUP: usize = 2;
const BENCH_REPS: usize = 20;

/// Times one forward pass per lookback length on a fixed random batch and
/// reports the median of 20 runs after 2 warmups.
pub fn bench_scaling(lengths: &[usize]) -> Result<Vec<BenchRow>, CliError> {
    if lengths.is_empty() {
        return Err(config_error("no lengths given"));
    }
    let mut rows = Vec::with_capacity(lengths.len());
    let mut prev: Option<f64> = None;
    for &length in lengths {
        let median_seconds = median_forward_seconds(length)?;
        rows.push(BenchRow {
            length,
            median_seconds,
            ratio_vs_prev: prev.map(|p| median_seconds / p),
        });
        prev = Some(median_seconds);
    }
    Ok(rows)
}

fn median_forward_seconds(lookback: usize) -> Result<f64, CliError> {
    let cfg = ModelConfig {
        lookback,
        variates: BENCH_VARIATES,
        state_dim: BENCH_STATE,
        ..ModelConfig::default()
    };
    cfg.validate().map_err(config_error)?;
    let model = Model::init(&cfg, &mut Rng::new(derive_seed(17, 0))).map_err(config_error)?;
    let mut rng = Rng::new(derive_seed(17, 1));
    let x = Tensor::from_fn(&[BENCH_BATCH, lookback, BENCH_VARIATES], |_| rng.normal());
    for _ in 0..BENCH_WARMUP {
        forward_once(&model, &x)?;
    }
    let mut times = Vec::with_capacity(BENCH_REPS);
    for _ in 0..BENCH_REPS {
        let t0 = Instant::now();
        forward_once(&model, &x)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 0 {
        0.5 * (times[mid - 1] + times[mid])
    } else {
        times[mid]
    })
}

fn forward_once(model: &Model, x: &Tensor) -> Result<(), CliError> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let xid = g.leaf(x, false);
    let y = model.forward(&mut g, xid, &bound).map_err(config_error)?;
    std::hint::black_box(g.values(y));
    Ok(())
}
