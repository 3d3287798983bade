//! Flat `key = value` configuration: one key per line, dotted sections,
//! `#` comments. Parsing is strict — an unknown key is an error, so typos
//! fail loudly instead of silently training the wrong model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use fldmamba_core::data::{SplitPolicy, SynthSpec};
use fldmamba_core::fmamba::FilterInit;
use fldmamba_core::model::ModelConfig;
use fldmamba_core::optim::AdamConfig;
use fldmamba_core::smoothing::RbfConfig;
use fldmamba_core::ssm::DiscretizationRule;

use crate::{config_error, CliError};

/// Model hyperparameters as configured. The variate count is a property of
/// the dataset, so the full `ModelConfig` only exists once data is loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub lookback: usize,
    pub horizon: usize,
    pub blocks: usize,
    pub state_dim: usize,
    pub ilt_modes: usize,
    pub rbf: RbfConfig,
    pub rule: DiscretizationRule,
    pub filter_init: FilterInit,
    pub use_rbf: bool,
    pub use_fmamba: bool,
    pub use_mamba: bool,
    pub use_ft: bool,
    pub use_ilt: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSettings {
            lookback: m.lookback,
            horizon: m.horizon,
            blocks: m.n_fmm_blocks,
            state_dim: m.state_dim,
            ilt_modes: m.ilt_modes,
            rbf: m.rbf,
            rule: m.rule,
            filter_init: m.filter_init,
            use_rbf: m.use_rbf,
            use_fmamba: m.use_fmamba,
            use_mamba: m.use_mamba,
            use_ft: m.use_ft,
            use_ilt: m.use_ilt,
        }
    }
}

impl ModelSettings {
    pub fn to_model_config(&self, variates: usize) -> ModelConfig {
        ModelConfig {
            lookback: self.lookback,
            horizon: self.horizon,
            variates,
            state_dim: self.state_dim,
            n_fmm_blocks: self.blocks,
            ilt_modes: self.ilt_modes,
            rbf: self.rbf,
            rule: self.rule,
            filter_init: self.filter_init,
            use_rbf: self.use_rbf,
            use_fmamba: self.use_fmamba,
            use_mamba: self.use_mamba,
            use_ft: self.use_ft,
            use_ilt: self.use_ilt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub adam: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            adam: AdamConfig::default(),
            batch: 32,
            epochs: 30,
            patience: 5,
            stride: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv { path: String },
    Synth(SynthSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitChoice {
    Auto,
    Hourly,
    Fractional { train: f64, val: f64 },
}

impl SplitChoice {
    pub fn policy(&self, t: usize) -> SplitPolicy {
        match *self {
            SplitChoice::Auto => SplitPolicy::auto(t),
            SplitChoice::Hourly => SplitPolicy::HourlyCalendar,
            SplitChoice::Fractional { train, val } => SplitPolicy::Fractional { train, val },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub source: DataSource,
    pub name: String,
    pub granularity: String,
    pub split: SplitChoice,
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub data: DataSettings,
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<AppConfig, CliError> {
        let mut raw = RawConfig::parse(text)?;
        let cfg = extract(&mut raw)?;
        raw.finish()?;
        Ok(cfg)
    }

    /// Every key, defaults included, one per sorted line. Parsing this text
    /// reproduces the config exactly, and its hash identifies the run.
    pub fn canonical(&self) -> String {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let m = &self.model;
        let mut push = |k: &str, v: String| pairs.push((k.to_string(), v));
        push("model.lookback", m.lookback.to_string());
        push("model.horizon", m.horizon.to_string());
        push("model.blocks", m.blocks.to_string());
        push("ssm.state_dim", m.state_dim.to_string());
        push("ssm.discretization", m.rule.as_str().to_string());
        push("ilt.modes", m.ilt_modes.to_string());
        push("rbf.enabled", m.rbf.enabled.to_string());
        push("rbf.radius", m.rbf.radius.to_string());
        push("rbf.bandwidth", m.rbf.bandwidth.to_string());
        push("fmamba.filter_init", m.filter_init.as_str().to_string());
        push("ablation.use_rbf", m.use_rbf.to_string());
        push("ablation.use_fmamba", m.use_fmamba.to_string());
        push("ablation.use_mamba", m.use_mamba.to_string());
        push("ablation.use_ft", m.use_ft.to_string());
        push("ablation.use_ilt", m.use_ilt.to_string());
        let t = &self.train;
        push("train.lr", t.adam.lr.to_string());
        push("train.beta1", t.adam.beta1.to_string());
        push("train.beta2", t.adam.beta2.to_string());
        push("train.eps", t.adam.eps.to_string());
        push("train.clip", t.adam.clip.to_string());
        push("train.batch", t.batch.to_string());
        push("train.epochs", t.epochs.to_string());
        push("train.patience", t.patience.to_string());
        push("train.stride", t.stride.to_string());
        push("train.seed", t.seed.to_string());
        let d = &self.data;
        push("data.name", d.name.clone());
        push("data.granularity", d.granularity.clone());
        push("data.normalize", d.normalize.to_string());
        match d.split {
            SplitChoice::Auto => push("data.split", "auto".to_string()),
            SplitChoice::Hourly => push("data.split", "hourly".to_string()),
            SplitChoice::Fractional { train, val } => {
                push("data.split", "fractional".to_string());
                push("data.train_frac", train.to_string());
                push("data.val_frac", val.to_string());
            }
        }
        match &d.source {
            DataSource::Csv { path } => push("data.path", path.clone()),
            DataSource::Synth(s) => {
                push("synth.t", s.t.to_string());
                push("synth.variates", s.variates.to_string());
                push("synth.periods", join_floats(&s.periods));
                push("synth.period_amps", join_floats(&s.period_amps));
                push("synth.burst_rate", s.burst_rate.to_string());
                push("synth.burst_amp", s.burst_amp.to_string());
                push("synth.burst_decay", s.burst_decay.to_string());
                push("synth.noise_std", s.noise_std.to_string());
                push("synth.seed", s.seed.to_string());
            }
        }
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical().as_bytes())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// The raw key/value layer. `take_*` removes entries so that anything left
/// at the end is an unknown key.
struct RawConfig {
    map: BTreeMap<String, String>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<RawConfig, CliError> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_error(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(config_error(format!("line {}: empty key", lineno + 1)));
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(config_error(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(RawConfig { map })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.map.keys().any(|k| k.starts_with(prefix))
    }

    fn finish(self) -> Result<(), CliError> {
        if self.map.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.map.keys().map(|s| s.as_str()).collect();
            Err(config_error(format!("unknown keys: {}", keys.join(", "))))
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|_| config_error(format!("key `{key}`: cannot parse `{value}`")))
}

fn take_or<T: std::str::FromStr>(
    raw: &mut RawConfig,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    match raw.take(key) {
        Some(v) => parse_as(key, &v),
        None => Ok(default),
    }
}

fn take_bool_or(raw: &mut RawConfig, key: &str, default: bool) -> Result<bool, CliError> {
    match raw.take(key) {
        None => Ok(default),
        Some(v) => match v.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(config_error(format!(
                "key `{key}`: expected true or false, got `{other}`"
            ))),
        },
    }
}

fn take_float_list(raw: &mut RawConfig, key: &str) -> Result<Option<Vec<f64>>, CliError> {
    match raw.take(key) {
        None => Ok(None),
        Some(v) => v
            .split(',')
            .map(|part| parse_as::<f64>(key, part.trim()))
            .collect::<Result<Vec<f64>, CliError>>()
            .map(Some),
    }
}

fn extract(raw: &mut RawConfig) -> Result<AppConfig, CliError> {
    let md = ModelSettings::default();
    let model = ModelSettings {
        lookback: take_or(raw, "model.lookback", md.lookback)?,
        horizon: take_or(raw, "model.horizon", md.horizon)?,
        blocks: take_or(raw, "model.blocks", md.blocks)?,
        state_dim: take_or(raw, "ssm.state_dim", md.state_dim)?,
        ilt_modes: take_or(raw, "ilt.modes", md.ilt_modes)?,
        rbf: RbfConfig {
            enabled: take_bool_or(raw, "rbf.enabled", md.rbf.enabled)?,
            radius: take_or(raw, "rbf.radius", md.rbf.radius)?,
            bandwidth: take_or(raw, "rbf.bandwidth", md.rbf.bandwidth)?,
        },
        rule: match raw.take("ssm.discretization") {
            None => md.rule,
            Some(v) => DiscretizationRule::parse(&v).ok_or_else(|| {
                config_error(format!("ssm.discretization: unknown rule `{v}`"))
            })?,
        },
        filter_init: match raw.take("fmamba.filter_init") {
            None => md.filter_init,
            Some(v) => FilterInit::parse(&v).ok_or_else(|| {
                config_error(format!("fmamba.filter_init: unknown mode `{v}`"))
            })?,
        },
        use_rbf: take_bool_or(raw, "ablation.use_rbf", md.use_rbf)?,
        use_fmamba: take_bool_or(raw, "ablation.use_fmamba", md.use_fmamba)?,
        use_mamba: take_bool_or(raw, "ablation.use_mamba", md.use_mamba)?,
        use_ft: take_bool_or(raw, "ablation.use_ft", md.use_ft)?,
        use_ilt: take_bool_or(raw, "ablation.use_ilt", md.use_ilt)?,
    };

    let td = TrainSettings::default();
    let train = TrainSettings {
        adam: AdamConfig {
            lr: take_or(raw, "train.lr", td.adam.lr)?,
            beta1: take_or(raw, "train.beta1", td.adam.beta1)?,
            beta2: take_or(raw, "train.beta2", td.adam.beta2)?,
            eps: take_or(raw, "train.eps", td.adam.eps)?,
            clip: take_or(raw, "train.clip", td.adam.clip)?,
        },
        batch: take_or(raw, "train.batch", td.batch)?,
        epochs: take_or(raw, "train.epochs", td.epochs)?,
        patience: take_or(raw, "train.patience", td.patience)?,
        stride: take_or(raw, "train.stride", td.stride)?,
        seed: take_or(raw, "train.seed", td.seed)?,
    };
    if !(train.adam.lr > 0.0) {
        return Err(config_error("train.lr must be positive"));
    }
    if train.batch == 0 || train.stride == 0 || train.epochs == 0 {
        return Err(config_error(
            "train.batch, train.stride, and train.epochs must be at least 1",
        ));
    }

    let csv_path = raw.take("data.path");
    let has_synth = raw.has_prefix("synth.");
    let source = match (csv_path, has_synth) {
        (Some(_), true) => {
            return Err(config_error(
                "config sets both data.path and synth.* keys; pick one source",
            ));
        }
        (None, false) => {
            return Err(config_error(
                "config needs a data source: data.path or a synth.* section",
            ));
        }
        (Some(path), false) => DataSource::Csv { path },
        (None, true) => {
            let sd = SynthSpec::default();
            let spec = SynthSpec {
                t: take_or(raw, "synth.t", sd.t)?,
                variates: take_or(raw, "synth.variates", sd.variates)?,
                periods: take_float_list(raw, "synth.periods")?.unwrap_or(sd.periods),
                period_amps: take_float_list(raw, "synth.period_amps")?
                    .unwrap_or(sd.period_amps),
                burst_rate: take_or(raw, "synth.burst_rate", sd.burst_rate)?,
                burst_amp: take_or(raw, "synth.burst_amp", sd.burst_amp)?,
                burst_decay: take_or(raw, "synth.burst_decay", sd.burst_decay)?,
                noise_std: take_or(raw, "synth.noise_std", sd.noise_std)?,
                seed: take_or(raw, "synth.seed", sd.seed)?,
            };
            spec.validate().map_err(config_error)?;
            DataSource::Synth(spec)
        }
    };

    let split = match raw.take("data.split").as_deref() {
        None | Some("auto") => SplitChoice::Auto,
        Some("hourly") => SplitChoice::Hourly,
        Some("fractional") => SplitChoice::Fractional {
            train: take_or(raw, "data.train_frac", 0.6)?,
            val: take_or(raw, "data.val_frac", 0.2)?,
        },
        Some(other) => {
            return Err(config_error(format!(
                "data.split: expected auto, hourly, or fractional, got `{other}`"
            )));
        }
    };
    // Fraction keys are meaningless under the other policies; reject rather
    // than ignore so configs stay unambiguous.
    if !matches!(split, SplitChoice::Fractional { .. })
        && (raw.has_prefix("data.train_frac") || raw.has_prefix("data.val_frac"))
    {
        return Err(config_error(
            "data.train_frac / data.val_frac require data.split = fractional",
        ));
    }

    let default_name = match &source {
        DataSource::Csv { path } => std::path::Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string()),
        DataSource::Synth(_) => "synth".to_string(),
    };
    let data = DataSettings {
        source,
        name: raw.take("data.name").unwrap_or(default_name),
        granularity: raw
            .take("data.granularity")
            .unwrap_or_else(|| "hour".to_string()),
        split,
        normalize: take_bool_or(raw, "data.normalize", true)?,
    };

    Ok(AppConfig { model, train, data })
}
