//! Dataset container, chronological splits, sliding windows, z-score
//! normalization, synthetic signals, and noise injection.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;
use core::ops::Range;

use crate::error::{CoreError, Result};
use crate::math;
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

/// Rows per split for the hourly calendar protocol: 12, 4, and 4 months of
/// 30 days at one sample per hour.
pub const HOURLY_TRAIN: usize = 12 * 30 * 24;
pub const HOURLY_EVAL: usize = 4 * 30 * 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitPolicy {
    /// Fixed 12/4/4-month prefix of an hourly series.
    HourlyCalendar,
    /// Leading fractions of the series; the remainder is the test split.
    Fractional { train: f64, val: f64 },
}

impl SplitPolicy {
    /// Hourly calendar when the series is long enough for it, otherwise
    /// the 60/20/20 fractional fallback.
    pub fn auto(t: usize) -> SplitPolicy {
        if t >= HOURLY_TRAIN + 2 * HOURLY_EVAL {
            SplitPolicy::HourlyCalendar
        } else {
            SplitPolicy::Fractional {
                train: 0.6,
                val: 0.2,
            }
        }
    }

    pub fn ranges(&self, t: usize) -> Result<SplitRanges> {
        let (a, b, c) = match *self {
            SplitPolicy::HourlyCalendar => {
                let need = HOURLY_TRAIN + 2 * HOURLY_EVAL;
                if t < need {
                    return Err(CoreError::InvalidArgument {
                        op: "SplitPolicy::ranges",
                        message: format!("hourly calendar needs {need} rows, got {t}"),
                    });
                }
                (
                    HOURLY_TRAIN,
                    HOURLY_TRAIN + HOURLY_EVAL,
                    HOURLY_TRAIN + 2 * HOURLY_EVAL,
                )
            }
            SplitPolicy::Fractional { train, val } => {
                if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
                    return Err(CoreError::InvalidArgument {
                        op: "SplitPolicy::ranges",
                        message: format!("fractions train={train} val={val} must be positive and sum below 1"),
                    });
                }
                let a = (t as f64 * train) as usize;
                let b = (t as f64 * (train + val)) as usize;
                (a, b, t)
            }
        };
        if a == 0 || a >= b || b >= c {
            return Err(CoreError::InvalidArgument {
                op: "SplitPolicy::ranges",
                message: format!("series of {t} rows splits into empty ranges"),
            });
        }
        Ok(SplitRanges {
            train: 0..a,
            val: a..b,
            test: b..c,
        })
    }
}

/// A multivariate series with chronological splits and train-range
/// statistics. `values` is [T, V], row-major in time.
#[derive(Debug, Clone)]
pub struct SeriesDataset {
    pub name: String,
    pub timestamps: Option<Vec<String>>,
    pub values: Tensor,
    pub granularity: String,
    pub splits: SplitRanges,
    /// Per-variate statistics over the train range of the ORIGINAL scale.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// True where the train range was constant; those stds are forced to 1.
    pub constant: Vec<bool>,
    pub normalized: bool,
}

impl SeriesDataset {
    pub fn new(
        name: &str,
        values: Tensor,
        timestamps: Option<Vec<String>>,
        granularity: &str,
        policy: SplitPolicy,
    ) -> Result<SeriesDataset> {
        if values.rank() != 2 || values.shape[1] == 0 {
            return Err(CoreError::InvalidArgument {
                op: "SeriesDataset::new",
                message: format!("values must be [T, V] with V >= 1, got {:?}", values.shape),
            });
        }
        let (t, v) = (values.shape[0], values.shape[1]);
        if let Some(ts) = &timestamps {
            if ts.len() != t {
                return Err(CoreError::InvalidArgument {
                    op: "SeriesDataset::new",
                    message: format!("{} timestamps for {t} rows", ts.len()),
                });
            }
        }
        let splits = policy.ranges(t)?;
        let train = splits.train.clone();
        let n = train.len() as f64;
        let mut mean = vec![0.0; v];
        let mut std = vec![0.0; v];
        let mut constant = vec![false; v];
        for row in train.clone() {
            for vi in 0..v {
                mean[vi] += values.values[row * v + vi];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        for row in train {
            for vi in 0..v {
                let d = values.values[row * v + vi] - mean[vi];
                std[vi] += d * d;
            }
        }
        for vi in 0..v {
            std[vi] = math::sqrt(std[vi] / n);
            if std[vi] == 0.0 {
                log::warn!("variate {vi} is constant over the train range; std forced to 1");
                std[vi] = 1.0;
                constant[vi] = true;
            }
        }
        Ok(SeriesDataset {
            name: String::from(name),
            timestamps,
            values,
            granularity: String::from(granularity),
            splits,
            mean,
            std,
            constant,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.values.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_variates(&self) -> usize {
        self.values.shape[1]
    }

    /// Z-scores every variate with the train-range statistics. Statistics
    /// on the result still describe the original scale, for `denormalize`.
    pub fn normalize(&self) -> SeriesDataset {
        let v = self.n_variates();
        let mut out = self.clone();
        for row in 0..self.len() {
            for vi in 0..v {
                let idx = row * v + vi;
                out.values.values[idx] = (self.values.values[idx] - self.mean[vi]) / self.std[vi];
            }
        }
        out.normalized = true;
        out
    }

    /// Maps normalized values of any [.., V] shape back to original scale.
    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        let v = self.n_variates();
        if x.shape.last() != Some(&v) {
            return Err(CoreError::ShapeMismatch {
                op: "denormalize",
                lhs: x.shape.clone(),
                rhs: vec![v],
            });
        }
        let mut out = x.clone();
        for (i, val) in out.values.iter_mut().enumerate() {
            let vi = i % v;
            *val = *val * self.std[vi] + self.mean[vi];
        }
        Ok(out)
    }
}

/// A batch of training examples. Target rows start exactly where the input
/// window ends.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub origins: Vec<usize>,
}

/// Absolute start indices of every window that fits inside the split.
pub fn window_origins(
    ds: &SeriesDataset,
    split: Split,
    l: usize,
    h: usize,
    stride: usize,
) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(CoreError::InvalidArgument {
            op: "window_origins",
            message: String::from("stride must be at least 1"),
        });
    }
    let range = ds.splits.range(split);
    let span = range.len();
    if span < l + h {
        return Err(CoreError::InvalidArgument {
            op: "window_origins",
            message: format!(
                "{} split has {span} rows, too short for lookback {l} + horizon {h}",
                split.as_str()
            ),
        });
    }
    let count = (span - l - h) / stride + 1;
    Ok((0..count).map(|i| range.start + i * stride).collect())
}

/// Materializes input/target tensors for the given window origins.
pub fn gather_windows(
    ds: &SeriesDataset,
    origins: &[usize],
    l: usize,
    h: usize,
) -> Result<WindowBatch> {
    let v = ds.n_variates();
    let t = ds.len();
    let b = origins.len();
    let mut inputs = vec![0.0; b * l * v];
    let mut targets = vec![0.0; b * h * v];
    for (bi, &o) in origins.iter().enumerate() {
        if o + l + h > t {
            return Err(CoreError::InvalidArgument {
                op: "gather_windows",
                message: format!("window at {o} overruns series of length {t}"),
            });
        }
        let src = &ds.values.values[o * v..(o + l) * v];
        inputs[bi * l * v..(bi + 1) * l * v].copy_from_slice(src);
        let src = &ds.values.values[(o + l) * v..(o + l + h) * v];
        targets[bi * h * v..(bi + 1) * h * v].copy_from_slice(src);
    }
    Ok(WindowBatch {
        inputs: Tensor::new(inputs, &[b, l, v])?,
        targets: Tensor::new(targets, &[b, h, v])?,
        origins: origins.to_vec(),
    })
}

/// All windows of a split in chronological order, chunked into batches of
/// at most `batch_size` (the final batch may be smaller).
pub fn make_windows(
    ds: &SeriesDataset,
    split: Split,
    l: usize,
    h: usize,
    stride: usize,
    batch_size: usize,
) -> Result<Vec<WindowBatch>> {
    if batch_size == 0 {
        return Err(CoreError::InvalidArgument {
            op: "make_windows",
            message: String::from("batch size must be at least 1"),
        });
    }
    let origins = window_origins(ds, split, l, h, stride)?;
    origins
        .chunks(batch_size)
        .map(|chunk| gather_windows(ds, chunk, l, h))
        .collect()
}

/// Recipe for a deterministic synthetic series: a sum of sinusoids, an
/// exponentially decaying burst process, and Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub t: usize,
    pub variates: usize,
    pub periods: Vec<f64>,
    pub period_amps: Vec<f64>,
    /// Per-step arrival probability of a new burst.
    pub burst_rate: f64,
    pub burst_amp: f64,
    /// Time constant (in steps) of the burst decay.
    pub burst_decay: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            t: 8192,
            variates: 1,
            periods: vec![24.0, 168.0],
            period_amps: vec![1.0, 0.5],
            burst_rate: 0.01,
            burst_amp: 1.0,
            burst_decay: 12.0,
            noise_std: 0.1,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| {
            Err(CoreError::InvalidArgument {
                op: "SynthSpec::validate",
                message,
            })
        };
        if self.t == 0 || self.variates == 0 {
            return bad(format!("t={} variates={} must be positive", self.t, self.variates));
        }
        if self.periods.len() != self.period_amps.len() {
            return bad(format!(
                "{} periods but {} amplitudes",
                self.periods.len(),
                self.period_amps.len()
            ));
        }
        for &p in &self.periods {
            if !(p > 0.0) {
                return bad(format!("period {p} must be positive"));
            }
            if (self.t as f64) < 4.0 * p {
                return bad(format!("series length {} below 4x period {p}", self.t));
            }
        }
        if !(0.0..1.0).contains(&self.burst_rate) {
            return bad(format!("burst rate {} outside [0, 1)", self.burst_rate));
        }
        if self.burst_rate > 0.0 && !(self.burst_decay > 0.0) {
            return bad(format!("burst decay {} must be positive", self.burst_decay));
        }
        if self.noise_std < 0.0 {
            return bad(format!("noise std {} is negative", self.noise_std));
        }
        Ok(())
    }
}

/// Generates the series described by `spec`. Every variate draws from its
/// own derived stream: a phase per sinusoid up front, then per step one
/// burst-arrival draw (when bursts are on) and one noise draw (when noise
/// is on). The burst sum is tracked as a running state multiplied by
/// exp(-1/decay) each step.
pub fn synth_generate(spec: &SynthSpec) -> Result<SeriesDataset> {
    spec.validate()?;
    let (t, v) = (spec.t, spec.variates);
    let mut values = vec![0.0; t * v];
    let decay_step = if spec.burst_rate > 0.0 {
        math::exp(-1.0 / spec.burst_decay)
    } else {
        0.0
    };
    for vi in 0..v {
        let mut rng = Rng::new(derive_seed(spec.seed, vi as u64));
        let phases: Vec<f64> = spec.periods.iter().map(|_| rng.uniform() * TAU).collect();
        let mut burst = 0.0;
        for ti in 0..t {
            let mut x = 0.0;
            for ((p, a), ph) in spec
                .periods
                .iter()
                .zip(spec.period_amps.iter())
                .zip(phases.iter())
            {
                x += a * math::sin(TAU * ti as f64 / p + ph);
            }
            if spec.burst_rate > 0.0 {
                burst *= decay_step;
                if rng.uniform() < spec.burst_rate {
                    burst += spec.burst_amp;
                }
                x += burst;
            }
            if spec.noise_std > 0.0 {
                x += spec.noise_std * rng.normal();
            }
            values[ti * v + vi] = x;
        }
    }
    SeriesDataset::new(
        "synth",
        Tensor::new(values, &[t, v])?,
        None,
        "step",
        SplitPolicy::Fractional {
            train: 0.6,
            val: 0.2,
        },
    )
}

/// Adds seeded Gaussian noise scaled per variate by `level` times that
/// variate's standard deviation within `x`. Level zero is the identity.
pub fn inject_noise(x: &Tensor, level: f64, seed: u64) -> Result<Tensor> {
    if level < 0.0 {
        return Err(CoreError::InvalidArgument {
            op: "inject_noise",
            message: format!("noise level {level} is negative"),
        });
    }
    if x.rank() == 0 || x.values.is_empty() {
        return Err(CoreError::InvalidArgument {
            op: "inject_noise",
            message: String::from("input must be a nonempty tensor of [.., V]"),
        });
    }
    if level == 0.0 {
        return Ok(x.clone());
    }
    let v = *x.shape.last().unwrap();
    let rows = x.values.len() / v;
    let mut mean = vec![0.0; v];
    for r in 0..rows {
        for vi in 0..v {
            mean[vi] += x.values[r * v + vi];
        }
    }
    for m in mean.iter_mut() {
        *m /= rows as f64;
    }
    let mut std = vec![0.0; v];
    for r in 0..rows {
        for vi in 0..v {
            let d = x.values[r * v + vi] - mean[vi];
            std[vi] += d * d;
        }
    }
    for s in std.iter_mut() {
        *s = math::sqrt(*s / rows as f64);
    }
    let mut out = x.clone();
    let mut rng = Rng::new(seed);
    for r in 0..rows {
        for vi in 0..v {
            out.values[r * v + vi] += level * std[vi] * rng.normal();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{dft_naive, ComplexTensor};

    fn ramp_dataset(t: usize, v: usize) -> SeriesDataset {
        let values = Tensor::from_fn(&[t, v], |i| i as f64);
        SeriesDataset::new(
            "ramp",
            values,
            None,
            "step",
            SplitPolicy::Fractional {
                train: 0.6,
                val: 0.2,
            },
        )
        .unwrap()
    }

    #[test]
    fn hourly_calendar_matches_month_arithmetic() {
        let r = SplitPolicy::HourlyCalendar.ranges(69_680).unwrap();
        assert_eq!(r.train, 0..8640);
        assert_eq!(r.val, 8640..11_520);
        assert_eq!(r.test, 11_520..14_400);
        assert!(SplitPolicy::HourlyCalendar.ranges(10_000).is_err());
    }

    #[test]
    fn auto_policy_prefers_calendar_on_long_hourly_series() {
        assert_eq!(SplitPolicy::auto(69_680), SplitPolicy::HourlyCalendar);
        assert_eq!(
            SplitPolicy::auto(1000),
            SplitPolicy::Fractional {
                train: 0.6,
                val: 0.2
            }
        );
    }

    #[test]
    fn fractional_ranges_are_ordered_and_disjoint() {
        let r = SplitPolicy::Fractional {
            train: 0.6,
            val: 0.2,
        }
        .ranges(100)
        .unwrap();
        assert_eq!(r.train, 0..60);
        assert_eq!(r.val, 60..80);
        assert_eq!(r.test, 80..100);
    }

    #[test]
    fn window_count_matches_closed_form() {
        let ds = ramp_dataset(1000, 1);
        // Train split is 0..600; 600 - 96 - 96 + 1 windows at stride 1.
        let origins = window_origins(&ds, Split::Train, 96, 96, 1).unwrap();
        assert_eq!(origins.len(), 409);
        // A 200-row split: 200 - 192 + 1 = 9.
        let ds2 = SeriesDataset::new(
            "toy",
            Tensor::from_fn(&[1000, 1], |i| i as f64),
            None,
            "step",
            SplitPolicy::Fractional {
                train: 0.2,
                val: 0.6,
            },
        )
        .unwrap();
        assert_eq!(ds2.splits.train.len(), 200);
        assert_eq!(window_origins(&ds2, Split::Train, 96, 96, 1).unwrap().len(), 9);
    }

    #[test]
    fn too_short_split_is_rejected() {
        let ds = SeriesDataset::new(
            "toy",
            Tensor::from_fn(&[955, 1], |i| i as f64),
            None,
            "step",
            SplitPolicy::Fractional {
                train: 0.2,
                val: 0.6,
            },
        )
        .unwrap();
        assert_eq!(ds.splits.train.len(), 191);
        assert!(window_origins(&ds, Split::Train, 96, 96, 1).is_err());
    }

    #[test]
    fn targets_abut_inputs_exactly() {
        let ds = ramp_dataset(400, 2);
        for split in [Split::Train, Split::Val, Split::Test] {
            let origins = window_origins(&ds, split, 16, 8, 3).unwrap();
            let batch = gather_windows(&ds, &origins, 16, 8).unwrap();
            for (bi, &o) in origins.iter().enumerate() {
                for vi in 0..2 {
                    assert_eq!(batch.inputs.at(&[bi, 0, vi]), ds.values.at(&[o, vi]));
                    assert_eq!(
                        batch.targets.at(&[bi, 0, vi]),
                        ds.values.at(&[o + 16, vi])
                    );
                    assert_eq!(
                        batch.inputs.at(&[bi, 15, vi]),
                        ds.values.at(&[o + 15, vi])
                    );
                    assert_eq!(
                        batch.targets.at(&[bi, 7, vi]),
                        ds.values.at(&[o + 23, vi])
                    );
                }
            }
        }
    }

    #[test]
    fn test_split_windows_never_touch_train_rows() {
        let ds = ramp_dataset(500, 1);
        let origins = window_origins(&ds, Split::Test, 12, 4, 1).unwrap();
        let train_end = ds.splits.train.end;
        for &o in &origins {
            assert!(o >= ds.splits.test.start);
            assert!(o > train_end);
        }
    }

    #[test]
    fn normalization_zeroes_train_statistics() {
        let mut rng = Rng::new(11);
        let values = Tensor::uniform(&[500, 3], -4.0, 9.0, &mut rng);
        let ds = SeriesDataset::new(
            "rand",
            values,
            None,
            "step",
            SplitPolicy::Fractional {
                train: 0.6,
                val: 0.2,
            },
        )
        .unwrap();
        let norm = ds.normalize();
        let v = 3;
        let train = norm.splits.train.clone();
        for vi in 0..v {
            let n = train.len() as f64;
            let mean: f64 = train
                .clone()
                .map(|r| norm.values.values[r * v + vi])
                .sum::<f64>()
                / n;
            let var: f64 = train
                .clone()
                .map(|r| {
                    let d = norm.values.values[r * v + vi] - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            assert!(mean.abs() <= 1e-10, "mean {mean}");
            assert!((var.sqrt() - 1.0).abs() <= 1e-10, "std {}", var.sqrt());
        }
    }

    #[test]
    fn denormalize_inverts_normalize() {
        let mut rng = Rng::new(13);
        let values = Tensor::uniform(&[300, 2], -5.0, 5.0, &mut rng);
        let ds = SeriesDataset::new(
            "rand",
            values.clone(),
            None,
            "step",
            SplitPolicy::Fractional {
                train: 0.6,
                val: 0.2,
            },
        )
        .unwrap();
        let norm = ds.normalize();
        let back = norm.denormalize(&norm.values).unwrap();
        for (a, b) in back.values.iter().zip(values.values.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_variate_is_flagged_and_zeroed() {
        let mut values = Tensor::zeros(&[200, 2]);
        for i in 0..200 {
            values.values[i * 2] = 7.0; // constant column
            values.values[i * 2 + 1] = i as f64;
        }
        let ds = SeriesDataset::new(
            "const",
            values,
            None,
            "step",
            SplitPolicy::Fractional {
                train: 0.6,
                val: 0.2,
            },
        )
        .unwrap();
        assert!(ds.constant[0]);
        assert!(!ds.constant[1]);
        let norm = ds.normalize();
        for r in norm.splits.train.clone() {
            assert_eq!(norm.values.values[r * 2], 0.0);
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = SynthSpec {
            t: 1024,
            variates: 3,
            ..SynthSpec::default()
        };
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a.values.values, b.values.values);
        let c = synth_generate(&SynthSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a.values.values, c.values.values);
    }

    #[test]
    fn clean_sinusoid_peaks_at_its_period_bin() {
        let spec = SynthSpec {
            t: 2400,
            variates: 1,
            periods: vec![24.0],
            period_amps: vec![1.0],
            burst_rate: 0.0,
            noise_std: 0.0,
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec).unwrap();
        let lane = Tensor::new(ds.values.values.clone(), &[2400]).unwrap();
        let spectrum = dft_naive(&ComplexTensor::from_real(&lane)).unwrap();
        let mut best = (0usize, 0.0f64);
        for k in 1..=1200 {
            let mag = spectrum.re[k] * spectrum.re[k] + spectrum.im[k] * spectrum.im[k];
            if mag > best.1 {
                best = (k, mag);
            }
        }
        assert_eq!(best.0, 100); // 2400 / 24
    }

    #[test]
    fn two_periods_dominate_the_spectrum() {
        let spec = SynthSpec {
            t: 1680,
            variates: 1,
            periods: vec![24.0, 168.0],
            period_amps: vec![1.0, 0.7],
            burst_rate: 0.0,
            noise_std: 0.0,
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec).unwrap();
        let lane = Tensor::new(ds.values.values.clone(), &[1680]).unwrap();
        let spectrum = dft_naive(&ComplexTensor::from_real(&lane)).unwrap();
        let mut mags: Vec<(usize, f64)> = (1..=840)
            .map(|k| {
                (
                    k,
                    spectrum.re[k] * spectrum.re[k] + spectrum.im[k] * spectrum.im[k],
                )
            })
            .collect();
        mags.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut top: [usize; 2] = [mags[0].0, mags[1].0];
        top.sort_unstable();
        assert_eq!(top, [10, 70]); // 1680/168 and 1680/24
    }

    #[test]
    fn bursts_superpose_on_sinusoids() {
        let with = SynthSpec {
            t: 700,
            variates: 1,
            periods: vec![24.0],
            period_amps: vec![1.0],
            burst_rate: 0.2,
            burst_amp: 1.5,
            burst_decay: 6.0,
            noise_std: 0.0,
            seed: 42,
        };
        let only_bursts = SynthSpec {
            period_amps: vec![0.0],
            ..with.clone()
        };
        let a = synth_generate(&with).unwrap();
        let b = synth_generate(&only_bursts).unwrap();
        // Same seed and draw pattern, so a - b is exactly the sinusoid.
        let mut rng = Rng::new(derive_seed(42, 0));
        let phase = rng.uniform() * TAU;
        for t in 0..700 {
            let want = (TAU * t as f64 / 24.0 + phase).sin();
            let got = a.values.values[t] - b.values.values[t];
            assert!((got - want).abs() <= 1e-12);
        }
        // Burst energy is nonnegative and decays between arrivals.
        assert!(b.values.values.iter().all(|&x| x >= 0.0));
        assert!(b.values.values.iter().any(|&x| x > 0.0));
    }

    #[test]
    fn zero_noise_level_is_identity() {
        let mut rng = Rng::new(3);
        let x = Tensor::uniform(&[64, 2], -1.0, 1.0, &mut rng);
        let y = inject_noise(&x, 0.0, 99).unwrap();
        assert_eq!(x.values, y.values);
    }

    #[test]
    fn noise_scale_tracks_requested_level() {
        let mut rng = Rng::new(5);
        let x = Tensor::from_fn(&[10_000, 1], |_| rng.normal());
        let y = inject_noise(&x, 0.1, 7).unwrap();
        let diffs: Vec<f64> = x
            .values
            .iter()
            .zip(y.values.iter())
            .map(|(a, b)| b - a)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / diffs.len() as f64;
        let std = var.sqrt();
        assert!((0.08..=0.12).contains(&std), "noise std {std}");
        let y2 = inject_noise(&x, 0.1, 7).unwrap();
        assert_eq!(y.values, y2.values);
        assert!(inject_noise(&x, -0.1, 7).is_err());
    }
}
