//! The training loop and everything a run leaves behind: the metrics
//! report, the checkpoint, and the evaluation path shared by `eval`,
//! `ablate`, and `robust`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use fldmamba_core::data::{
    gather_windows, synth_generate, window_origins, SeriesDataset, Split,
};
use fldmamba_core::error::CoreError;
use fldmamba_core::graph::Graph;
use fldmamba_core::metrics::{horizon_profile, metrics, mse_loss, Metrics};
use fldmamba_core::model::Model;
use fldmamba_core::optim::{Adam, StepOutcome};
use fldmamba_core::rng::{derive_seed, Rng};
use fldmamba_core::tensor::Tensor;

use crate::checkpoint::{model_from_checkpoint, Checkpoint};
use crate::config::{fnv1a64, AppConfig, DataSource};
use crate::csvio::load_csv_with_choice;
use crate::{config_error, data_error, CliError};

/// Substream label for parameter initialization.
const MODEL_INIT_STREAM: u64 = 1;
/// Epoch `e` shuffles with substream `EPOCH_STREAM_BASE + e`, so adding
/// epochs never perturbs earlier ones.
const EPOCH_STREAM_BASE: u64 = 1000;

/// Core failures crossing into the CLI: values that blew up are a
/// divergence (exit 3), anything else is a configuration problem.
fn numeric_error(e: CoreError) -> CliError {
    match e {
        CoreError::NonFinite { .. } => CliError::Divergence(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

/// Materializes the configured data source. CSV paths are read from disk;
/// synthetic specs are generated in memory. Either way the split policy
/// comes from the config, resolved against the actual row count.
pub fn load_dataset(app: &AppConfig) -> Result<SeriesDataset, CliError> {
    match &app.data.source {
        DataSource::Csv { path } => load_csv_with_choice(
            Path::new(path),
            &app.data.name,
            &app.data.granularity,
            app.data.split,
        ),
        DataSource::Synth(spec) => {
            let generated = synth_generate(spec).map_err(data_error)?;
            let policy = app.data.split.policy(generated.len());
            SeriesDataset::new(
                &app.data.name,
                generated.values,
                None,
                &app.data.granularity,
                policy,
            )
            .map_err(data_error)
        }
    }
}

/// Fingerprint of the exact training data: dimensions, split boundaries,
/// and every value bit. Two runs with equal hashes saw the same rows.
pub fn data_hash(ds: &SeriesDataset) -> u64 {
    let mut bytes = Vec::with_capacity(ds.values.values.len() * 8 + 40);
    for n in [
        ds.len() as u64,
        ds.n_variates() as u64,
        ds.splits.train.end as u64,
        ds.splits.val.end as u64,
        ds.splits.test.end as u64,
    ] {
        bytes.extend_from_slice(&n.to_le_bytes());
    }
    for x in &ds.values.values {
        bytes.extend_from_slice(&x.to_bits().to_le_bytes());
    }
    fnv1a64(&bytes)
}

/// Everything `train` reports about a finished run. The body is
/// deterministic for a fixed seed, config, and dataset; wall-clock timing
/// lives in a separate section that [`MetricsReport::deterministic_body`]
/// excludes.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub dataset: String,
    pub rows: usize,
    pub variates: usize,
    pub seed: u64,
    pub config_hash: u64,
    pub data_hash: u64,
    pub n_params: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub val: Metrics,
    pub test: Metrics,
    pub horizon: Vec<Metrics>,
    pub peak_graph_bytes: usize,
    pub epoch_seconds: Vec<f64>,
    pub total_seconds: f64,
}

fn push_metrics(out: &mut String, prefix: &str, m: &Metrics) {
    let _ = writeln!(out, "{prefix}.mse = {}", m.mse);
    let _ = writeln!(out, "{prefix}.mae = {}", m.mae);
    match m.pearson {
        Some(r) => {
            let _ = writeln!(out, "{prefix}.pearson = {r}");
        }
        None => {
            let _ = writeln!(out, "{prefix}.pearson = undefined");
        }
    }
}

impl MetricsReport {
    /// The run's results without timing: identical runs produce identical
    /// bytes here. Floats print in shortest-roundtrip form.
    pub fn deterministic_body(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset = {}", self.dataset);
        let _ = writeln!(out, "rows = {}", self.rows);
        let _ = writeln!(out, "variates = {}", self.variates);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "config_hash = {:#018x}", self.config_hash);
        let _ = writeln!(out, "data_hash = {:#018x}", self.data_hash);
        let _ = writeln!(out, "params = {}", self.n_params);
        let _ = writeln!(out, "epochs_run = {}", self.epochs_run);
        let _ = writeln!(out, "best_epoch = {}", self.best_epoch);
        push_metrics(&mut out, "val", &self.val);
        push_metrics(&mut out, "test", &self.test);
        for (j, m) in self.horizon.iter().enumerate() {
            push_metrics(&mut out, &format!("horizon.{}", j + 1), m);
        }
        let _ = writeln!(out, "peak_graph_bytes = {}", self.peak_graph_bytes);
        out
    }

    /// Full report text: the deterministic body plus `timing.*` lines.
    pub fn to_text(&self) -> String {
        let mut out = self.deterministic_body();
        let n = self.epoch_seconds.len().max(1) as f64;
        let mean = self.epoch_seconds.iter().sum::<f64>() / n;
        let _ = writeln!(out, "timing.epoch_seconds_mean = {mean:.3}");
        let _ = writeln!(out, "timing.total_seconds = {:.3}", self.total_seconds);
        out
    }
}

/// A finished training run: the report, a checkpoint holding the best
/// weights, the restored model, and the working (possibly normalized)
/// dataset it trained on.
pub struct TrainResult {
    pub report: MetricsReport,
    pub checkpoint: Checkpoint,
    pub model: Model,
    pub ds: SeriesDataset,
}

/// Runs the model over `origins` windows, reading inputs from `input_ds`
/// and targets from `target_ds` (the two differ only in the noise
/// robustness harness). Returns overall metrics and the per-step profile.
pub fn evaluate(
    model: &Model,
    input_ds: &SeriesDataset,
    target_ds: &SeriesDataset,
    origins: &[usize],
    batch: usize,
    l: usize,
    h: usize,
) -> Result<(Metrics, Vec<Metrics>), CliError> {
    if origins.is_empty() {
        return Err(data_error("no evaluation windows"));
    }
    let v = target_ds.n_variates();
    let mut preds: Vec<f64> = Vec::with_capacity(origins.len() * h * v);
    let mut truths: Vec<f64> = Vec::with_capacity(origins.len() * h * v);
    for chunk in origins.chunks(batch.max(1)) {
        let inputs = gather_windows(input_ds, chunk, l, h)
            .map_err(data_error)?
            .inputs;
        let targets = gather_windows(target_ds, chunk, l, h)
            .map_err(data_error)?
            .targets;
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let x = g.leaf(&inputs, false);
        let pred = model.forward(&mut g, x, &bound).map_err(numeric_error)?;
        preds.extend_from_slice(g.values(pred));
        truths.extend_from_slice(&targets.values);
    }
    let n = origins.len();
    let p = Tensor::new(preds, &[n, h, v]).map_err(config_error)?;
    let t = Tensor::new(truths, &[n, h, v]).map_err(config_error)?;
    let overall = metrics(&p, &t).map_err(data_error)?;
    let profile = horizon_profile(&p, &t).map_err(data_error)?;
    Ok((overall, profile))
}

/// Trains on `raw` under `app`, early-stopping on validation MSE, and
/// returns the best-epoch weights. A training loss that is non-finite in
/// two consecutive steps aborts with a divergence error.
pub fn train_loop(app: &AppConfig, raw: &SeriesDataset) -> Result<TrainResult, CliError> {
    let started = Instant::now();
    let ds = if app.data.normalize {
        raw.normalize()
    } else {
        raw.clone()
    };
    let v = ds.n_variates();
    let cfg = app.model.to_model_config(v);
    cfg.validate().map_err(config_error)?;
    let (l, h) = (cfg.lookback, cfg.horizon);
    let seed = app.train.seed;
    let dhash = data_hash(&ds);

    let train_origins =
        window_origins(&ds, Split::Train, l, h, app.train.stride).map_err(data_error)?;
    let val_origins = window_origins(&ds, Split::Val, l, h, 1).map_err(data_error)?;
    let test_origins = window_origins(&ds, Split::Test, l, h, 1).map_err(data_error)?;

    let mut model = Model::init(&cfg, &mut Rng::new(derive_seed(seed, MODEL_INIT_STREAM)))
        .map_err(config_error)?;
    let mut adam = Adam::new(app.train.adam);

    // (val mse, weights, epoch) of the best epoch so far.
    let mut best: Option<(f64, BTreeMap<String, Tensor>, usize)> = None;
    let mut strikes = app.train.patience;
    let mut nonfinite_streak = 0u32;
    let mut peak_bytes = 0usize;
    let mut epoch_seconds = Vec::new();

    for epoch in 0..app.train.epochs {
        let t0 = Instant::now();
        let mut order = train_origins.clone();
        Rng::new(derive_seed(seed, EPOCH_STREAM_BASE + epoch as u64)).shuffle(&mut order);
        let mut sse = 0.0;
        let mut count = 0.0;
        for chunk in order.chunks(app.train.batch) {
            let batch = gather_windows(&ds, chunk, l, h).map_err(data_error)?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let x = g.leaf(&batch.inputs, false);
            let truth = g.leaf(&batch.targets, false);
            let pred = model.forward(&mut g, x, &bound).map_err(numeric_error)?;
            let loss = mse_loss(&mut g, pred, truth).map_err(config_error)?;
            let loss_v = g.values(loss)[0];
            // Backward roughly doubles the tape: one grad buffer per node.
            peak_bytes = peak_bytes.max(2 * g.approx_bytes());
            if !loss_v.is_finite() {
                nonfinite_streak += 1;
                log::warn!("epoch {epoch}: loss is {loss_v}, step skipped");
                if nonfinite_streak >= 2 {
                    return Err(CliError::Divergence(format!(
                        "loss was non-finite in two consecutive steps (epoch {epoch}); \
                         lower train.lr or tighten train.clip"
                    )));
                }
                continue;
            }
            nonfinite_streak = 0;
            sse += loss_v * batch.targets.numel() as f64;
            count += batch.targets.numel() as f64;
            g.backward(loss).map_err(numeric_error)?;
            let grads: Vec<Vec<f64>> = bound
                .params
                .iter()
                .map(|&(_, id)| match g.grad(id) {
                    Some(s) => s.to_vec(),
                    // A disabled branch leaves its leaves off the tape.
                    None => vec![0.0; g.values(id).len()],
                })
                .collect();
            match adam.begin_step(&grads) {
                StepOutcome::Applied { .. } => {
                    let mut idx = 0;
                    model.visit_mut(&mut |name, t| {
                        debug_assert_eq!(bound.params[idx].0, name);
                        adam.update_param(idx, &mut t.values, &grads[idx]);
                        idx += 1;
                    });
                }
                StepOutcome::Skipped => {
                    log::warn!("epoch {epoch}: non-finite gradient, step skipped");
                }
            }
        }

        let (val_m, _) = evaluate(&model, &ds, &ds, &val_origins, app.train.batch, l, h)?;
        let train_mse = if count > 0.0 { sse / count } else { f64::NAN };
        let secs = t0.elapsed().as_secs_f64();
        epoch_seconds.push(secs);
        println!(
            "epoch={epoch} train_mse={train_mse} val_mse={} val_mae={} steps={} seconds={secs:.3}",
            val_m.mse,
            val_m.mae,
            adam.steps_taken()
        );

        let improved = val_m.mse.is_finite()
            && best.as_ref().map_or(true, |(b, _, _)| val_m.mse < *b);
        if improved {
            best = Some((val_m.mse, model.state_dict(), epoch));
            strikes = app.train.patience;
        } else if strikes == 0 {
            log::info!("validation stalled, stopping after epoch {epoch}");
            break;
        } else {
            strikes -= 1;
        }
    }

    let epochs_run = epoch_seconds.len();
    let (best_epoch, best_state) = match best {
        Some((_, state, e)) => (e, state),
        None => {
            return Err(CliError::Divergence(String::from(
                "no epoch produced a finite validation loss",
            )))
        }
    };
    model.load_state_dict(&best_state).map_err(config_error)?;
    let (val_m, _) = evaluate(&model, &ds, &ds, &val_origins, app.train.batch, l, h)?;
    let (test_m, profile) = evaluate(&model, &ds, &ds, &test_origins, app.train.batch, l, h)?;

    // Normalization statistics ride along so `eval` can reproduce the
    // training-time transform on fresh data.
    let mut tensors = best_state;
    tensors.insert(
        String::from("stats.mean"),
        Tensor::new(ds.mean.clone(), &[v]).map_err(config_error)?,
    );
    tensors.insert(
        String::from("stats.std"),
        Tensor::new(ds.std.clone(), &[v]).map_err(config_error)?,
    );
    let checkpoint = Checkpoint {
        seed,
        config_hash: app.hash(),
        config_text: app.canonical(),
        tensors,
    };

    let report = MetricsReport {
        dataset: ds.name.clone(),
        rows: ds.len(),
        variates: v,
        seed,
        config_hash: app.hash(),
        data_hash: dhash,
        n_params: model.n_params(),
        epochs_run,
        best_epoch,
        val: val_m,
        test: test_m,
        horizon: profile,
        peak_graph_bytes: peak_bytes,
        epoch_seconds,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainResult {
        report,
        checkpoint,
        model,
        ds,
    })
}

/// What `eval` prints for a checkpoint applied to a dataset's test split.
#[derive(Debug)]
pub struct EvalOutcome {
    pub dataset: String,
    pub rows: usize,
    pub variates: usize,
    pub test: Metrics,
    pub horizon: Vec<Metrics>,
}

/// Rebuilds the model from a checkpoint and scores it on the test split of
/// `csv`. Normalization reuses the statistics stored at training time, not
/// the new file's own, so the model sees the scale it was trained on.
pub fn eval_checkpoint(
    cp: &Checkpoint,
    csv: &Path,
    horizon: usize,
) -> Result<EvalOutcome, CliError> {
    let (model, app) = model_from_checkpoint(cp)?;
    if horizon != app.model.horizon {
        return Err(config_error(format!(
            "horizon {horizon} does not match the checkpoint's {}; the \
             projection weights fix the horizon at training time",
            app.model.horizon
        )));
    }
    let stats_mean = cp
        .tensors
        .get("stats.mean")
        .ok_or_else(|| data_error("checkpoint is missing stats.mean"))?;
    let stats_std = cp
        .tensors
        .get("stats.std")
        .ok_or_else(|| data_error("checkpoint is missing stats.std"))?;

    let name = csv
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let mut ds = load_csv_with_choice(csv, &name, &app.data.granularity, app.data.split)?;
    let trained_v = stats_mean.values.len();
    if ds.n_variates() != trained_v {
        return Err(config_error(format!(
            "checkpoint was trained on {trained_v} variates, {} has {}",
            csv.display(),
            ds.n_variates()
        )));
    }
    if app.data.normalize {
        ds.mean = stats_mean.values.clone();
        ds.std = stats_std.values.clone();
        ds = ds.normalize();
    }
    let (l, h) = (app.model.lookback, app.model.horizon);
    let origins = window_origins(&ds, Split::Test, l, h, 1).map_err(data_error)?;
    let (test, profile) = evaluate(&model, &ds, &ds, &origins, app.train.batch, l, h)?;
    Ok(EvalOutcome {
        dataset: ds.name.clone(),
        rows: ds.len(),
        variates: ds.n_variates(),
        test,
        horizon: profile,
    })
}
