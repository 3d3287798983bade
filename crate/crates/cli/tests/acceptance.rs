//! Acceptance gate: ten numbered criteria covering gradients, the spectral
//! and scan oracles, discretization, the oscillator head, ablation and
//! robustness directions, scaling, an end-to-end hourly smoke run, and
//! determinism. Each test prints one `acceptance cNN <name>: PASS` (or
//! FAIL) line; run with `--nocapture` to see them all. Tolerances are
//! pinned as constants below and must not be loosened to make a run green.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use fldmamba_cli::config::AppConfig;
use fldmamba_cli::csvio::save_csv;
use fldmamba_cli::harness::{ablate, bench_scaling, robustness};
use fldmamba_cli::train::{load_dataset, train_loop};
use fldmamba_core::data::{synth_generate, SynthSpec};
use fldmamba_core::fmamba::FilterInit;
use fldmamba_core::graph::grad_check;
use fldmamba_core::metrics::mse_loss;
use fldmamba_core::model::{ilt_head_forward, BoundIlt, IltParams, Model, ModelConfig};
use fldmamba_core::rng::Rng;
use fldmamba_core::smoothing::RbfConfig;
use fldmamba_core::spectral::{dft_naive, fft_forward, ifft_inverse, padded_len, ComplexTensor};
use fldmamba_core::ssm::{discretize, DiscretizationRule};
use fldmamba_core::{Graph, NodeId, Result as CoreResult, Tensor};

// ---- pinned tolerances and budgets ----

const C1_OP_TOL: f64 = 1e-5;
const C1_MODEL_TOL: f64 = 1e-4;
const C1_TIME_LIMIT_S: f64 = 60.0;
const C2_ORACLE_TOL: f64 = 1e-9;
const C2_ROUNDTRIP_TOL: f64 = 1e-10;
const C2_PARSEVAL_TOL: f64 = 1e-9;
const C2_TIME_LIMIT_S: f64 = 10.0;
const C3_TOL: f64 = 1e-12;
const C3_SEEDS: u64 = 20;
const C3_TIME_LIMIT_S: f64 = 10.0;
const C4_DRAWS: usize = 10_000;
const C4_TAYLOR_STEP: f64 = 1e-3;
const C4_CLOSED_FORM_TOL: f64 = 1e-12;
// 1 - exp(-0.1) and exp(-0.1), the zero-order-hold outputs for A = -1,
// delta = 0.1, B = 1. Digits frozen from a 50-digit series evaluation.
const C4_BBAR_CLOSED: f64 = 0.095_162_581_964_040_43;
const C4_ABAR_CLOSED: f64 = 0.904_837_418_035_959_5;
const C5_TOL: f64 = 1e-12;
const C6_RUN_LIMIT_S: f64 = 600.0;
const C7_LEVELS: [f64; 2] = [0.10, 0.15];
const C8_RATIO_LIMIT: f64 = 2.6;
const C9_MSE_LIMIT: f64 = 1.0;
const C9_TIME_LIMIT_S: f64 = 900.0;

const GRAD_STEP: f64 = 1.0 / 8192.0;

/// Criteria share one lock so wall-clock budgets are measured on an
/// otherwise idle process, not against each other.
static GATE: Mutex<()> = Mutex::new(());

fn criterion(label: &str, body: impl FnOnce()) {
    let _lock = GATE.lock().unwrap_or_else(|e| e.into_inner());
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("acceptance {label}: PASS"),
        Err(cause) => {
            println!("acceptance {label}: FAIL");
            resume_unwind(cause);
        }
    }
}

fn rand(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut Rng::new(seed))
}

/// Quadratic readout: makes every output coordinate matter in the scalar.
fn quad(g: &mut Graph, y: NodeId) -> CoreResult<NodeId> {
    let sq = g.mul(y, y)?;
    Ok(g.sum_all(sq))
}

fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

// ---- c01: gradient integrity ----

#[test]
fn c01_gradient_integrity() {
    criterion("c01 gradient-integrity", || {
        let start = Instant::now();
        let check = |name: &str, tol: f64, err: CoreResult<f64>| {
            let err = err.unwrap();
            assert!(err <= tol, "{name}: gradient error {err} above {tol}");
        };

        // Every differentiable op, central differences at 2^-13.
        let x = rand(&[2, 3, 4], 11);
        let w = rand(&[2, 3, 4], 12);
        check(
            "add",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let o = g.leaf(&w, false);
                    let s = g.add(id, o)?;
                    quad(g, s)
                },
                &x,
                GRAD_STEP,
            ),
        );
        check(
            "sub+mul",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let o = g.leaf(&w, false);
                    let s = g.sub(id, o)?;
                    let m = g.mul(s, s)?;
                    Ok(g.sum_all(m))
                },
                &x,
                GRAD_STEP,
            ),
        );
        check(
            "broadcast mul+silu",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let o = g.leaf(&w, false);
                    let m = g.mul(o, id)?;
                    let s = g.silu(m);
                    Ok(g.sum_all(s))
                },
                &rand(&[4], 13),
                GRAD_STEP,
            ),
        );

        let u = rand(&[3, 5], 14);
        for (name, which) in [
            ("exp", 0usize),
            ("cos", 1),
            ("silu", 2),
            ("softplus", 3),
            ("scale", 4),
            ("offset+neg", 5),
        ] {
            check(
                name,
                C1_OP_TOL,
                grad_check(
                    |g, id| {
                        let y = match which {
                            0 => g.exp(id),
                            1 => g.cos(id),
                            2 => g.silu(id),
                            3 => g.softplus(id),
                            4 => g.scale(id, -2.5),
                            _ => {
                                let t = g.offset(id, 0.75);
                                g.neg(t)
                            }
                        };
                        quad(g, y)
                    },
                    &u,
                    GRAD_STEP,
                ),
            );
        }
        let pos = Tensor::uniform(&[3, 5], 0.5, 2.0, &mut Rng::new(15));
        check(
            "recip",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let y = g.recip(id);
                    quad(g, y)
                },
                &pos,
                GRAD_STEP,
            ),
        );

        let lhs = rand(&[3, 4], 16);
        let rhs = rand(&[4, 2], 17);
        let blhs = rand(&[2, 3, 4], 18);
        check(
            "matmul lhs",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let r = g.leaf(&rhs, false);
                    let y = g.matmul(id, r)?;
                    quad(g, y)
                },
                &lhs,
                GRAD_STEP,
            ),
        );
        check(
            "matmul rhs",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let l = g.leaf(&lhs, false);
                    let y = g.matmul(l, id)?;
                    quad(g, y)
                },
                &rhs,
                GRAD_STEP,
            ),
        );
        check(
            "batched matmul lhs",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let r = g.leaf(&rhs, false);
                    let y = g.matmul(id, r)?;
                    quad(g, y)
                },
                &blhs,
                GRAD_STEP,
            ),
        );
        check(
            "batched matmul rhs",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let l = g.leaf(&blhs, false);
                    let y = g.matmul(l, id)?;
                    quad(g, y)
                },
                &rhs,
                GRAD_STEP,
            ),
        );

        for axis in 0..3usize {
            check(
                "sum_axis",
                C1_OP_TOL,
                grad_check(
                    |g, id| {
                        let o = g.leaf(&w, false);
                        let m = g.mul(id, o)?;
                        let s = g.sum_axis(m, axis)?;
                        quad(g, s)
                    },
                    &x,
                    GRAD_STEP,
                ),
            );
            check(
                "mean_axis",
                C1_OP_TOL,
                grad_check(
                    |g, id| {
                        let o = g.leaf(&w, false);
                        let m = g.mul(id, o)?;
                        let s = g.mean_axis(m, axis)?;
                        quad(g, s)
                    },
                    &x,
                    GRAD_STEP,
                ),
            );
        }
        let flat = rand(&[4, 6], 19);
        check(
            "reshape+transpose",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let r = g.reshape(id, &[6, 4])?;
                    let t = g.transpose_last2(r)?;
                    let o = g.leaf(&flat, false);
                    let m = g.mul(t, o)?;
                    Ok(g.mean_all(m))
                },
                &x,
                GRAD_STEP,
            ),
        );

        let rbf = RbfConfig {
            radius: 2,
            bandwidth: 0.8,
            enabled: true,
        };
        check(
            "rbf_smooth",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let y = g.rbf_smooth(id, &rbf)?;
                    quad(g, y)
                },
                &rand(&[2, 8, 3], 20),
                GRAD_STEP,
            ),
        );

        // Lanes of 12 pad to 16, so the half-spectrum filter has 9 bins.
        let lanes = rand(&[2, 3, 12], 21);
        let w_re = Tensor::uniform(&[9], 0.5, 1.5, &mut Rng::new(22));
        let mut w_im = Tensor::uniform(&[9], -0.5, 0.5, &mut Rng::new(23));
        w_im.values[0] = 0.0;
        w_im.values[8] = 0.0;
        check(
            "spectral_filter d/dx",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let re = g.leaf(&w_re, false);
                    let im = g.leaf(&w_im, false);
                    let y = g.spectral_filter(id, re, im)?;
                    quad(g, y)
                },
                &lanes,
                GRAD_STEP,
            ),
        );
        check(
            "spectral_filter d/dw_re",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let xs = g.leaf(&lanes, false);
                    let im = g.leaf(&w_im, false);
                    let y = g.spectral_filter(xs, id, im)?;
                    quad(g, y)
                },
                &w_re,
                GRAD_STEP,
            ),
        );
        check(
            "spectral_filter d/dw_im",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let xs = g.leaf(&lanes, false);
                    let re = g.leaf(&w_re, false);
                    let y = g.spectral_filter(xs, re, id)?;
                    quad(g, y)
                },
                &w_im,
                GRAD_STEP,
            ),
        );
        check(
            "rfft_unpack",
            C1_OP_TOL,
            grad_check(
                |g, id| {
                    let y = g.rfft_unpack(id)?;
                    let o = g.leaf(&rand(&[2, 3, 18], 24), false);
                    let m = g.mul(y, o)?;
                    quad(g, m)
                },
                &lanes,
                GRAD_STEP,
            ),
        );

        let (b, l, v, n) = (2usize, 6usize, 2usize, 3usize);
        let mut srng = Rng::new(25);
        let a_bar = Tensor::uniform(&[b, l, v, n], 0.2, 0.9, &mut srng);
        let b_bar = Tensor::uniform(&[b, l, v, n], -1.0, 1.0, &mut srng);
        let sx = Tensor::uniform(&[b, l, v], -1.0, 1.0, &mut srng);
        let sc = Tensor::uniform(&[b, l, n], -1.0, 1.0, &mut srng);
        for probe in 0..4usize {
            check(
                "scan input",
                C1_OP_TOL,
                grad_check(
                    |g, id| {
                        let mut ids = [
                            g.leaf(&a_bar, false),
                            g.leaf(&b_bar, false),
                            g.leaf(&sx, false),
                            g.leaf(&sc, false),
                        ];
                        ids[probe] = id;
                        let y = g.scan(ids[0], ids[1], ids[2], ids[3])?;
                        quad(g, y)
                    },
                    [&a_bar, &b_bar, &sx, &sc][probe],
                    GRAD_STEP,
                ),
            );
        }

        // End to end at the pinned desk size: every parameter, then the
        // input itself, against the training loss.
        let cfg = ModelConfig {
            lookback: 16,
            horizon: 8,
            variates: 3,
            state_dim: 4,
            n_fmm_blocks: 1,
            ilt_modes: 2,
            filter_init: FilterInit::Random,
            ..ModelConfig::default()
        };
        let model = Model::init(&cfg, &mut Rng::new(90)).unwrap();
        let input = rand(&[1, 16, 3], 91);
        let targets = rand(&[1, 8, 3], 92);
        let dict = model.state_dict();
        let mut names = Vec::new();
        model.visit(&mut |name, _| names.push(name));
        for name in &names {
            let value = dict.get(name.as_str()).unwrap().clone();
            check(
                name,
                C1_MODEL_TOL,
                grad_check(
                    |g, id| {
                        let bound = model.bind_with(g, false, Some((name.as_str(), id)));
                        let xs = g.leaf(&input, false);
                        let ts = g.leaf(&targets, false);
                        let pred = model.forward(g, xs, &bound)?;
                        mse_loss(g, pred, ts)
                    },
                    &value,
                    GRAD_STEP,
                ),
            );
        }
        check(
            "model input",
            C1_MODEL_TOL,
            grad_check(
                |g, id| {
                    let bound = model.bind(g, false);
                    let ts = g.leaf(&targets, false);
                    let pred = model.forward(g, id, &bound)?;
                    mse_loss(g, pred, ts)
                },
                &input,
                GRAD_STEP,
            ),
        );

        let elapsed = start.elapsed().as_secs_f64();
        assert!(
            elapsed < C1_TIME_LIMIT_S,
            "gradient checks took {elapsed:.1}s, budget {C1_TIME_LIMIT_S}s"
        );
    });
}

// ---- c02: spectral oracle ----

#[test]
fn c02_spectral_oracle() {
    criterion("c02 spectral-oracle", || {
        let start = Instant::now();

        for l in 1..=64usize {
            let x = rand(&[l], 200 + l as u64);
            let p = padded_len(l);
            let mut padded = Tensor::zeros(&[p]);
            padded.values[..l].copy_from_slice(&x.values);
            let want = dft_naive(&ComplexTensor::from_real(&padded)).unwrap();
            let got = fft_forward(&x).unwrap();
            assert_eq!(got.shape, vec![p]);
            for k in 0..p {
                let dre = (got.re[k] - want.re[k]).abs();
                let dim = (got.im[k] - want.im[k]).abs();
                assert!(
                    dre <= C2_ORACLE_TOL && dim <= C2_ORACLE_TOL,
                    "L={l} bin {k}: fft ({}, {}) vs naive ({}, {})",
                    got.re[k],
                    got.im[k],
                    want.re[k],
                    want.im[k]
                );
            }
        }

        // Forward then inverse at L = 96 (pads to 128, truncates back).
        let x = rand(&[96], 300);
        let spectrum = fft_forward(&x).unwrap();
        let back = ifft_inverse(&spectrum, 96).unwrap();
        for (a, b) in back.values.iter().zip(x.values.iter()) {
            assert!(
                (a - b).abs() <= C2_ROUNDTRIP_TOL,
                "roundtrip: {a} vs {b}"
            );
        }

        // Parseval on the padded lane: sum x^2 == (1/P) sum |X|^2.
        for l in [5usize, 48, 96, 128] {
            let x = rand(&[l], 400 + l as u64);
            let p = padded_len(l) as f64;
            let spectrum = fft_forward(&x).unwrap();
            let time_energy: f64 = x.values.iter().map(|v| v * v).sum();
            let freq_energy: f64 = spectrum
                .re
                .iter()
                .zip(spectrum.im.iter())
                .map(|(re, im)| re * re + im * im)
                .sum::<f64>()
                / p;
            assert!(
                (time_energy - freq_energy).abs() <= C2_PARSEVAL_TOL,
                "L={l}: energies {time_energy} vs {freq_energy}"
            );
        }

        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < C2_TIME_LIMIT_S, "spectral oracle took {elapsed:.1}s");
    });
}

// ---- c03: scan oracle ----

/// Reference recurrence, written out longhand against raw indices so it
/// shares nothing with the graph kernel it checks.
fn reference_scan(a_bar: &Tensor, b_bar: &Tensor, x: &Tensor, c: &Tensor) -> Vec<f64> {
    let (b, l, v, n) = (
        a_bar.shape[0],
        a_bar.shape[1],
        a_bar.shape[2],
        a_bar.shape[3],
    );
    let mut out = vec![0.0; b * l * v];
    for bi in 0..b {
        let mut state = vec![0.0; v * n];
        for t in 0..l {
            for vi in 0..v {
                let drive = x.at(&[bi, t, vi]);
                let mut readout = 0.0;
                for ni in 0..n {
                    let s = &mut state[vi * n + ni];
                    *s = a_bar.at(&[bi, t, vi, ni]) * *s + b_bar.at(&[bi, t, vi, ni]) * drive;
                    readout += *s * c.at(&[bi, t, ni]);
                }
                out[(bi * l + t) * v + vi] = readout;
            }
        }
    }
    out
}

#[test]
fn c03_scan_oracle() {
    criterion("c03 scan-oracle", || {
        let start = Instant::now();
        let (b, l, v, n) = (2usize, 16usize, 4usize, 8usize);
        for seed in 0..C3_SEEDS {
            let mut rng = Rng::new(seed * 7 + 1);
            let a_bar = Tensor::uniform(&[b, l, v, n], 0.05, 0.95, &mut rng);
            let b_bar = Tensor::uniform(&[b, l, v, n], -1.0, 1.0, &mut rng);
            let x = Tensor::uniform(&[b, l, v], -1.0, 1.0, &mut rng);
            let c = Tensor::uniform(&[b, l, n], -1.0, 1.0, &mut rng);
            let want = reference_scan(&a_bar, &b_bar, &x, &c);

            let mut g = Graph::new();
            let ids = (
                g.leaf(&a_bar, false),
                g.leaf(&b_bar, false),
                g.leaf(&x, false),
                g.leaf(&c, false),
            );
            let y = g.scan(ids.0, ids.1, ids.2, ids.3).unwrap();
            for (i, (got, wanted)) in g.values(y).iter().zip(want.iter()).enumerate() {
                assert!(
                    (got - wanted).abs() <= C3_TOL,
                    "seed {seed} element {i}: {got} vs {wanted}"
                );
            }

            // Chunked evaluation must carry state across boundaries and
            // match the sequential numbers.
            for chunk in [1usize, 3, 7, 16, 64] {
                let mut g = Graph::new();
                let ids = (
                    g.leaf(&a_bar, false),
                    g.leaf(&b_bar, false),
                    g.leaf(&x, false),
                    g.leaf(&c, false),
                );
                let y = g.scan_chunked(ids.0, ids.1, ids.2, ids.3, chunk).unwrap();
                for (got, wanted) in g.values(y).iter().zip(want.iter()) {
                    assert!(
                        (got - wanted).abs() <= C3_TOL,
                        "seed {seed} chunk {chunk}: {got} vs {wanted}"
                    );
                }
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < C3_TIME_LIMIT_S, "scan oracle took {elapsed:.1}s");
    });
}

// ---- c04: discretization ----

#[test]
fn c04_discretization() {
    criterion("c04 discretization", || {
        // (a) 10^4 random (delta > 0, A < 0) pairs: 100 step sizes against
        // 100 decay rates in one vectorized call. A_bar must stay in (0, 1).
        let mut rng = Rng::new(404);
        let side = 100usize;
        assert_eq!(side * side, C4_DRAWS);
        let delta = Tensor::uniform(&[1, side, 1], 1e-6, 10.0, &mut rng);
        let a_log = Tensor::uniform(&[1, side], -2.0, 2.0, &mut rng);
        let b_proj = Tensor::full(&[1, side, side], 1.0);
        let mut g = Graph::new();
        let d_id = g.leaf(&delta, false);
        let b_id = g.leaf(&b_proj, false);
        let a_id = g.leaf(&a_log, false);
        let sys = discretize(&mut g, d_id, b_id, a_id, DiscretizationRule::Zoh).unwrap();
        let a_bar = g.values(sys.a_bar);
        assert_eq!(a_bar.len(), C4_DRAWS);
        for &v in a_bar {
            assert!(v > 0.0 && v < 1.0, "transition {v} left (0, 1)");
        }

        // (b) First-order accuracy at delta = 1e-3 with |A| <= 1:
        // |A_bar - (1 + delta A)| <= delta^2.
        let delta = Tensor::full(&[1, side, 1], C4_TAYLOR_STEP);
        let a_log = Tensor::uniform(&[1, side], -3.0, 0.0, &mut rng);
        let mut g = Graph::new();
        let d_id = g.leaf(&delta, false);
        let b_id = g.leaf(&b_proj, false);
        let a_id = g.leaf(&a_log, false);
        let sys = discretize(&mut g, d_id, b_id, a_id, DiscretizationRule::Zoh).unwrap();
        let a_bar = g.values(sys.a_bar);
        for li in 0..side {
            for ni in 0..side {
                let a = -a_log.values[ni].exp();
                let linear = 1.0 + C4_TAYLOR_STEP * a;
                let got = a_bar[li * side + ni];
                let err = (got - linear).abs();
                assert!(
                    err <= C4_TAYLOR_STEP * C4_TAYLOR_STEP,
                    "A={a}: |{got} - {linear}| = {err}"
                );
            }
        }

        // (c) Zero-order hold against the closed form at A = -1,
        // delta = 0.1, B = 1.
        let delta = Tensor::full(&[1, 1, 1], 0.1);
        let a_log = Tensor::zeros(&[1, 1]);
        let b_one = Tensor::full(&[1, 1, 1], 1.0);
        let mut g = Graph::new();
        let d_id = g.leaf(&delta, false);
        let b_id = g.leaf(&b_one, false);
        let a_id = g.leaf(&a_log, false);
        let sys = discretize(&mut g, d_id, b_id, a_id, DiscretizationRule::Zoh).unwrap();
        let a_bar = g.values(sys.a_bar)[0];
        let b_bar = g.values(sys.b_bar)[0];
        assert!(
            (a_bar - C4_ABAR_CLOSED).abs() <= C4_CLOSED_FORM_TOL,
            "transition {a_bar} vs closed form {C4_ABAR_CLOSED}"
        );
        assert!(
            (b_bar - C4_BBAR_CLOSED).abs() <= C4_CLOSED_FORM_TOL,
            "drive {b_bar} vs closed form {C4_BBAR_CLOSED}"
        );
    });
}

// ---- c05: oscillator head ----

fn softplus_ref(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Direct evaluation of y + sum_n amp_n exp(-dec_n t) cos(freq_n t + ph_n)
/// with the mode parameters affine in the horizon-mean of each variate.
/// Plain loops over raw slices; no graph, no shared helpers.
fn reference_head(y: &Tensor, p: &IltParams, horizon: usize) -> Vec<f64> {
    let (b, h, v) = (y.shape[0], y.shape[1], y.shape[2]);
    assert_eq!(h, horizon);
    let m = p.w_amp.shape[0];
    let mut out = vec![0.0; b * h * v];
    for bi in 0..b {
        for vi in 0..v {
            let mut pooled = 0.0;
            for j in 0..h {
                pooled += y.values[(bi * h + j) * v + vi];
            }
            pooled /= h as f64;
            for j in 0..h {
                let t = j as f64 / horizon as f64;
                let mut modes = 0.0;
                for n in 0..m {
                    let amp = pooled * p.w_amp.values[n] + p.b_amp.values[n];
                    let dec = softplus_ref(pooled * p.w_dec.values[n] + p.b_dec.values[n]);
                    let freq = pooled * p.w_freq.values[n] + p.b_freq.values[n];
                    let phase = pooled * p.w_phase.values[n] + p.b_phase.values[n];
                    modes += amp * (-dec * t).exp() * (freq * t + phase).cos();
                }
                let idx = (bi * h + j) * v + vi;
                out[idx] = y.values[idx] + modes;
            }
        }
    }
    out
}

fn bind_head(g: &mut Graph, p: &IltParams) -> BoundIlt {
    BoundIlt {
        w_amp: g.leaf(&p.w_amp, false),
        b_amp: g.leaf(&p.b_amp, false),
        w_dec: g.leaf(&p.w_dec, false),
        b_dec: g.leaf(&p.b_dec, false),
        w_freq: g.leaf(&p.w_freq, false),
        b_freq: g.leaf(&p.b_freq, false),
        w_phase: g.leaf(&p.w_phase, false),
        b_phase: g.leaf(&p.b_phase, false),
    }
}

#[test]
fn c05_oscillator_head() {
    criterion("c05 oscillator-head", || {
        let (b, h, v, m) = (2usize, 8usize, 3usize, 4usize);

        // General case: seeded parameters, tolerance 1e-12.
        let mut rng = Rng::new(505);
        let cfg = ModelConfig {
            lookback: 16,
            horizon: h,
            variates: v,
            state_dim: 4,
            n_fmm_blocks: 1,
            ilt_modes: m,
            ..ModelConfig::default()
        };
        let model = Model::init(&cfg, &mut rng).unwrap();
        let params = model.ilt.as_ref().unwrap();
        let y = rand(&[b, h, v], 506);

        let want = reference_head(&y, params, h);
        let mut g = Graph::new();
        let bound = bind_head(&mut g, params);
        let y_id = g.leaf(&y, false);
        let out = ilt_head_forward(&mut g, y_id, &bound, h).unwrap();
        for (i, (got, wanted)) in g.values(out).iter().zip(want.iter()).enumerate() {
            assert!(
                (got - wanted).abs() <= C5_TOL,
                "element {i}: {got} vs {wanted}"
            );
        }

        // Degenerate modes: zero phase and zero amplitude slope turn the
        // head at t = 0 into the plain sum of the amplitude biases, and
        // that must hold exactly, not to a tolerance.
        let amps = [0.3, -0.2, 0.05];
        let degenerate = IltParams {
            w_amp: Tensor::zeros(&[3]),
            b_amp: Tensor::from_fn(&[3], |n| amps[n]),
            w_dec: Tensor::zeros(&[3]),
            b_dec: Tensor::uniform(&[3], -1.0, 1.0, &mut rng),
            w_freq: Tensor::uniform(&[3], -1.0, 1.0, &mut rng),
            b_freq: Tensor::uniform(&[3], -5.0, 5.0, &mut rng),
            w_phase: Tensor::zeros(&[3]),
            b_phase: Tensor::zeros(&[3]),
        };
        // Same left-to-right accumulation order as the mode reduction.
        let amp_sum = amps.iter().fold(0.0, |acc, a| acc + a);

        let y = rand(&[b, h, v], 507);
        let mut g = Graph::new();
        let bound = bind_head(&mut g, &degenerate);
        let y_id = g.leaf(&y, false);
        let out = ilt_head_forward(&mut g, y_id, &bound, h).unwrap();
        let got = g.values(out);
        for bi in 0..b {
            for vi in 0..v {
                let idx = bi * h * v + vi; // j = 0
                let expect = y.values[idx] + amp_sum;
                assert_eq!(
                    got[idx], expect,
                    "constant-mode sum must be exact at the first step"
                );
            }
        }
    });
}

// ---- c06: ablation direction ----

/// Synthetic benchmark shared by the ablation and robustness criteria:
/// 8192 steps of daily (24) plus weekly (168) cycles, random decaying
/// bursts, and observation noise at 0.1. The narrow state width is
/// deliberate: with capacity tight, a missing branch costs accuracy
/// instead of hiding behind slack in the remaining one.
fn benchmark_config(seed: u64) -> AppConfig {
    let text = format!(
        "\
model.lookback = 192
model.horizon = 48
model.blocks = 1
ssm.state_dim = 4
ilt.modes = 8
train.lr = 2e-3
train.batch = 64
train.epochs = 60
train.patience = 10
train.stride = 2
train.seed = {seed}
synth.t = 8192
synth.variates = 2
synth.periods = 24,168
synth.period_amps = 1.0,0.5
synth.noise_std = 0.1
synth.seed = 11
"
    );
    AppConfig::parse(&text).unwrap()
}

#[test]
fn c06_ablation_direction() {
    criterion("c06 ablation-direction", || {
        let mut full = Vec::new();
        let mut wo_fm = Vec::new();
        let mut wo_ilt = Vec::new();
        for seed in [1u64, 2, 3] {
            let app = benchmark_config(seed);
            let start = Instant::now();
            let out = ablate(&app, &["fm".to_string(), "ilt".to_string()]).unwrap();
            let elapsed = start.elapsed().as_secs_f64();
            assert!(
                elapsed <= 3.0 * C6_RUN_LIMIT_S,
                "three runs took {elapsed:.0}s, budget {}s each",
                C6_RUN_LIMIT_S
            );
            assert_eq!(out.rows[0].variant, "full");
            assert_eq!(out.rows[1].variant, "w/o fm");
            assert_eq!(out.rows[2].variant, "w/o ilt");
            full.push(out.rows[0].val_mse);
            wo_fm.push(out.rows[1].val_mse);
            wo_ilt.push(out.rows[2].val_mse);
        }
        let (m_full, m_fm, m_ilt) = (median(full), median(wo_fm), median(wo_ilt));
        assert!(
            m_full < m_fm,
            "median val MSE: full {m_full} must beat w/o fm {m_fm}"
        );
        assert!(
            m_full < m_ilt,
            "median val MSE: full {m_full} must beat w/o ilt {m_ilt}"
        );
    });
}

// ---- c07: noise robustness ----

#[test]
fn c07_noise_robustness() {
    criterion("c07 noise-robustness", || {
        let mut full_delta = [Vec::new(), Vec::new()];
        let mut worbf_delta = [Vec::new(), Vec::new()];
        for seed in [1u64, 2, 3] {
            let app = benchmark_config(seed);
            let out = robustness(&app, &C7_LEVELS).unwrap();
            for (i, row) in out.rows.iter().enumerate() {
                assert_eq!(row.level, C7_LEVELS[i]);
                full_delta[i].push(row.full_delta);
                worbf_delta[i].push(row.worbf_delta);
            }
        }
        for (i, &level) in C7_LEVELS.iter().enumerate() {
            let m_full = median(full_delta[i].clone());
            let m_worbf = median(worbf_delta[i].clone());
            assert!(
                m_full <= m_worbf,
                "level {level}: smoothed degradation {m_full} must not exceed \
                 unsmoothed {m_worbf}"
            );
        }
    });
}

// ---- c08: scaling ----

#[test]
fn c08_scaling() {
    criterion("c08 scaling", || {
        let rows = bench_scaling(&[256, 512]).unwrap();
        assert_eq!(rows.len(), 2);
        let ratio = rows[1].ratio_vs_prev.unwrap();
        assert!(
            ratio <= C8_RATIO_LIMIT,
            "512 vs 256 forward time ratio {ratio:.2} above {C8_RATIO_LIMIT}"
        );
    });
}

// ---- c09: hourly smoke run ----

#[test]
fn c09_hourly_smoke() {
    criterion("c09 hourly-smoke", || {
        let start = Instant::now();
        // A stand-in for the usual seven-variate hourly benchmarks: exactly
        // 20 months of hourly rows so the 12/4/4-month calendar split
        // applies, pushed through the CSV pipeline like any external file.
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("hourly7.csv");
        let spec = SynthSpec {
            t: 14_400,
            variates: 7,
            seed: 5,
            ..SynthSpec::default()
        };
        save_csv(&csv, &synth_generate(&spec).unwrap()).unwrap();

        let text = format!(
            "\
data.path = {}
data.split = hourly
model.lookback = 96
model.horizon = 96
model.blocks = 2
ssm.state_dim = 16
train.lr = 1e-3
train.batch = 32
train.epochs = 12
train.patience = 3
train.stride = 4
train.seed = 1
",
            csv.display()
        );
        let app = AppConfig::parse(&text).unwrap();
        assert!(app.train.epochs <= 20);
        let raw = load_dataset(&app).unwrap();
        let run = train_loop(&app, &raw).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        assert!(
            run.report.test.mse <= C9_MSE_LIMIT,
            "test MSE {} above {C9_MSE_LIMIT}",
            run.report.test.mse
        );
        assert!(
            elapsed <= C9_TIME_LIMIT_S,
            "smoke run took {elapsed:.0}s, budget {C9_TIME_LIMIT_S}s"
        );
    });
}

// ---- c10: determinism and serialization ----

#[test]
fn c10_determinism() {
    criterion("c10 determinism", || {
        let text = "\
model.lookback = 24
model.horizon = 8
model.blocks = 1
ssm.state_dim = 4
ilt.modes = 2
train.lr = 1e-3
train.batch = 32
train.epochs = 3
train.seed = 9
synth.t = 960
synth.variates = 2
synth.periods = 24
synth.period_amps = 1.0
synth.noise_std = 0.05
synth.seed = 4
";
        let app = AppConfig::parse(text).unwrap();
        let raw = load_dataset(&app).unwrap();
        let first = train_loop(&app, &raw).unwrap();
        let second = train_loop(&app, &raw).unwrap();
        assert_eq!(
            first.report.deterministic_body(),
            second.report.deterministic_body(),
            "fixed-seed reports must be byte-identical"
        );
        assert_eq!(
            first.checkpoint.to_bytes(),
            second.checkpoint.to_bytes(),
            "fixed-seed checkpoints must be byte-identical"
        );

        // Save, load, save: both files and both byte images must agree.
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("a.fldm");
        let path_b = dir.path().join("b.fldm");
        fldmamba_cli::checkpoint::save_checkpoint(&path_a, &first.checkpoint).unwrap();
        let loaded = fldmamba_cli::checkpoint::load_checkpoint(&path_a).unwrap();
        fldmamba_cli::checkpoint::save_checkpoint(&path_b, &loaded).unwrap();
        let bytes_a = std::fs::read(&path_a).unwrap();
        let bytes_b = std::fs::read(&path_b).unwrap();
        assert_eq!(bytes_a, bytes_b, "checkpoint round-trip must be bit-exact");
        assert_eq!(loaded.to_bytes(), first.checkpoint.to_bytes());
    });
}
