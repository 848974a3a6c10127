//! Self-check suite: analytic gradients of every differentiable op and of
//! the full networks against central differences (64-bit), plus direct
//! oracles for the kernels and losses.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::began::{EquilibriumState, GanModel, NetConfig, Tracking};
use crate::classifier::{softmax_cross_entropy, Classifier, ClassifierConfig};
use crate::error::TensorError;
use crate::losses::{
    generated_loss, generated_loss_with, hard_histogram, hist_loss, soft_histogram, spatial_loss, LossConfig,
    TargetGrad,
};
use crate::rng::stream;
use crate::tensor::{conv2d_forward, grad_check_indices, matmul_forward, Graph, ParamSet, Tensor, Var};

const GRAD_TOL: f64 = 1e-4;
const HIST_TOL: f64 = 1e-3;
const ORACLE_TOL: f64 = 1e-10;
const EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Gradient,
    Oracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub kind: CheckKind,
    pub max_error: f64,
    pub tolerance: f64,
    /// Set when the check could not be evaluated.
    pub failure: Option<String>,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_error.is_finite() && self.max_error <= self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
    pub elapsed: Duration,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }

    pub fn failures(&self) -> Vec<&CheckRow> {
        self.rows.iter().filter(|r| !r.passed()).collect()
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<34} {:<8} {:>12} {:>10}  status\n", "check", "kind", "max_error", "tolerance");
        for r in &self.rows {
            let kind = match r.kind {
                CheckKind::Gradient => "grad",
                CheckKind::Oracle => "oracle",
            };
            let status = match (&r.failure, r.passed()) {
                (Some(e), _) => format!("ERROR {e}"),
                (None, true) => "ok".into(),
                (None, false) => "FAIL".into(),
            };
            let _ = writeln!(s, "{:<34} {:<8} {:>12.3e} {:>10.0e}  {status}", r.name, kind, r.max_error, r.tolerance);
        }
        let _ = writeln!(
            s,
            "{} checks, {} failed, {:.1}s",
            self.rows.len(),
            self.failures().len(),
            self.elapsed.as_secs_f64()
        );
        s
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    /// Test hook: corrupt the analytic gradient of this check.
    pub perturb: Option<String>,
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).expect("positive shape")
}

/// Values bounded away from zero, for kinked ops.
fn off_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(0.05..1.5);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("positive shape")
}

struct Suite {
    rows: Vec<CheckRow>,
    perturb: Option<String>,
}

type Unary<'a> = dyn for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>, TensorError> + 'a;

impl Suite {
    fn push(&mut self, name: &str, kind: CheckKind, tolerance: f64, result: Result<f64, TensorError>) {
        let (max_error, failure) = match result {
            Ok(e) => (e, None),
            Err(e) => (f64::INFINITY, Some(e.to_string())),
        };
        self.rows.push(CheckRow {
            name: name.to_string(),
            kind,
            max_error,
            tolerance,
            failure,
        });
    }

    fn corrupt(&self, name: &str, analytic: &mut Tensor<f64>) {
        if self.perturb.as_deref() == Some(name) {
            analytic.data_mut().iter_mut().for_each(|v| *v += 0.01 * (1.0 + v.abs()));
        }
    }

    /// Gradient row for `f` over several seeded inputs.
    fn unary(&mut self, name: &str, tol: f64, seeds: u64, input: impl Fn(&mut ChaCha8Rng) -> Tensor<f64>, f: &Unary<'_>) {
        let run = || -> Result<f64, TensorError> {
            let mut worst: f64 = 0.0;
            for seed in 0..seeds {
                let x = input(&mut stream(seed, &format!("verify.{name}")));
                let g = Graph::new();
                let leaf = g.leaf(x.clone());
                let grads = g.backward(f(&g, leaf)?)?;
                let mut analytic = grads.get(&leaf).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
                self.corrupt(name, &mut analytic);
                let eval = |t: &Tensor<f64>| {
                    let g = Graph::new();
                    Ok(f(&g, g.input(t.clone()))?.value().item())
                };
                let idx: Vec<usize> = (0..x.len()).collect();
                worst = worst.max(grad_check_indices(&analytic, eval, &x, &idx, EPS)?.max_rel_error);
            }
            Ok(worst)
        };
        let result = run();
        self.push(name, CheckKind::Gradient, tol, result);
    }

    /// Gradient row over sampled entries of named parameters.
    fn params<F>(&mut self, name: &str, tol: f64, params: &ParamSet<f64>, names: &[&str], f: F)
    where
        F: for<'g> Fn(&'g Graph<f64>, &ParamSet<f64>) -> Result<Var<'g, f64>, TensorError>,
    {
        let run = || -> Result<f64, TensorError> {
            let mut work = params.clone();
            work.zero_grad();
            let g = Graph::new();
            let loss = f(&g, &work)?;
            g.backward_into(loss, &mut work)?;
            let mut r = stream(0, &format!("verify.{name}.idx"));
            let mut worst: f64 = 0.0;
            for pname in names {
                let x = params.value(pname)?.clone();
                let mut analytic = work
                    .get(pname)
                    .and_then(|p| p.grad.clone())
                    .unwrap_or_else(|| Tensor::zeros(x.shape()));
                self.corrupt(name, &mut analytic);
                let idx: Vec<usize> = (0..4).map(|_| r.random_range(0..x.len())).collect();
                let eval = |t: &Tensor<f64>| {
                    let mut probe = params.clone();
                    probe.set(pname, t.clone());
                    let g = Graph::new();
                    Ok(f(&g, &probe)?.value().item())
                };
                worst = worst.max(grad_check_indices(&analytic, eval, &x, &idx, EPS)?.max_rel_error);
            }
            Ok(worst)
        };
        let result = run();
        self.push(name, CheckKind::Gradient, tol, result);
    }
}

/// Weighted sum with fixed pseudo-random weights, so every output element
/// gets a distinct upstream gradient.
fn probe<'g>(v: Var<'g, f64>) -> Result<Var<'g, f64>, TensorError> {
    let shape = v.shape();
    let w = uniform(&mut stream(99, "verify.probe"), &shape, -1.0, 1.0);
    Ok(v.mul(&v.graph().input(w))?.sum())
}

fn fixed(seed: u64, name: &str, shape: &[usize]) -> Tensor<f64> {
    uniform(&mut stream(seed, name), shape, -1.0, 1.0)
}

fn gradient_rows(s: &mut Suite) {
    let n = 4;
    let vec6 = |r: &mut ChaCha8Rng| uniform(r, &[2, 3], -2.0, 2.0);
    s.unary("add", GRAD_TOL, n, vec6, &|g, x| probe(x.add(&g.input(fixed(1, "b", &[2, 3])))?));
    s.unary("sub", GRAD_TOL, n, vec6, &|g, x| probe(g.input(fixed(1, "b", &[2, 3])).sub(&x)?));
    s.unary("mul", GRAD_TOL, n, vec6, &|g, x| probe(x.mul(&g.input(fixed(1, "b", &[2, 3])))?));
    s.unary("scale", GRAD_TOL, n, vec6, &|_, x| probe(x.scale(-1.7)));
    s.unary("add_scalar", GRAD_TOL, n, vec6, &|_, x| probe(x.add_scalar(0.3)));
    s.unary("square", GRAD_TOL, n, vec6, &|_, x| probe(x.square()));
    s.unary("sum", GRAD_TOL, n, vec6, &|_, x| Ok(x.square().sum()));
    s.unary("mean", GRAD_TOL, n, vec6, &|_, x| Ok(x.square().mean()));
    s.unary("reshape", GRAD_TOL, n, vec6, &|_, x| probe(x.reshape(&[3, 2])?));
    s.unary("matmul/left", GRAD_TOL, n, |r| uniform(r, &[3, 4], -1.0, 1.0), &|g, x| {
        probe(x.matmul(&g.input(fixed(2, "w", &[4, 5])))?)
    });
    s.unary("matmul/right", GRAD_TOL, n, |r| uniform(r, &[4, 5], -1.0, 1.0), &|g, w| {
        probe(g.input(fixed(2, "x", &[3, 4])).matmul(&w)?)
    });
    s.unary("fully_connected/input", GRAD_TOL, n, |r| uniform(r, &[3, 4], -1.0, 1.0), &|g, x| {
        probe(x.fully_connected(&g.input(fixed(3, "w", &[4, 2])), &g.input(fixed(3, "b", &[2])))?)
    });
    s.unary("fully_connected/weight", GRAD_TOL, n, |r| uniform(r, &[4, 2], -1.0, 1.0), &|g, w| {
        probe(g.input(fixed(3, "x", &[3, 4])).fully_connected(&w, &g.input(fixed(3, "b", &[2])))?)
    });
    s.unary("fully_connected/bias", GRAD_TOL, n, |r| uniform(r, &[2], -1.0, 1.0), &|g, b| {
        probe(g.input(fixed(3, "x", &[3, 4])).fully_connected(&g.input(fixed(3, "w", &[4, 2])), &b)?)
    });
    s.unary("add_bias", GRAD_TOL, n, |r| uniform(r, &[3], -1.0, 1.0), &|g, b| {
        probe(g.input(fixed(4, "x", &[2, 3])).add_bias(&b)?)
    });
    s.unary("channel_bias", GRAD_TOL, n, |r| uniform(r, &[3], -1.0, 1.0), &|g, b| {
        probe(g.input(fixed(4, "x", &[2, 3, 2, 2])).channel_bias(&b)?)
    });
    s.unary("conv2d/input", GRAD_TOL, n, |r| uniform(r, &[2, 2, 5, 5], -1.0, 1.0), &|g, x| {
        probe(x.conv2d(&g.input(fixed(5, "k", &[3, 2, 3, 3])), 1, 1)?)
    });
    s.unary("conv2d/kernel", GRAD_TOL, n, |r| uniform(r, &[3, 2, 3, 3], -1.0, 1.0), &|g, k| {
        probe(g.input(fixed(5, "x", &[2, 2, 5, 5])).conv2d(&k, 1, 1)?)
    });
    s.unary("conv2d/strided", GRAD_TOL, n, |r| uniform(r, &[1, 2, 6, 5], -1.0, 1.0), &|g, x| {
        probe(x.conv2d(&g.input(fixed(6, "k", &[2, 2, 2, 3])), 2, 1)?)
    });
    s.unary("elu", GRAD_TOL, n, |r| uniform(r, &[2, 8], -3.0, 3.0), &|_, x| probe(x.elu()));
    s.unary("relu", GRAD_TOL, n, |r| off_zero(r, &[2, 8]), &|_, x| probe(x.relu()));
    s.unary("tanh", GRAD_TOL, n, |r| uniform(r, &[2, 8], -3.0, 3.0), &|_, x| probe(x.tanh()));
    s.unary("upsample2x", GRAD_TOL, n, |r| uniform(r, &[1, 2, 3, 2], -1.0, 1.0), &|_, x| probe(x.upsample2x()?));
    s.unary("avgpool2x", GRAD_TOL, n, |r| uniform(r, &[1, 2, 4, 6], -1.0, 1.0), &|_, x| probe(x.avgpool2x()?));
    s.unary("global_avg_pool", GRAD_TOL, n, |r| uniform(r, &[2, 3, 3, 2], -1.0, 1.0), &|_, x| {
        probe(x.global_avg_pool()?)
    });
    s.unary("softmax_cross_entropy", GRAD_TOL, n, |r| uniform(r, &[3, 7], -3.0, 3.0), &|_, x| {
        softmax_cross_entropy(&x, &[0, 6, 2])
    });

    let img = |r: &mut ChaCha8Rng| uniform(r, &[1, 1, 8, 8], -0.95, 0.95);
    let target = || fixed(7, "target", &[1, 1, 8, 8]).map(|v| 0.95 * v);
    s.unary("soft_histogram", HIST_TOL, n, img, &|_, x| probe(soft_histogram(&x, &LossConfig::default())?));
    s.unary("hist_loss", HIST_TOL, n, img, &|g, x| hist_loss(&g.input(target()), &x, &LossConfig::default()));
    s.unary("spatial_loss", GRAD_TOL, n, img, &|g, x| spatial_loss(&g.input(target()), &x));
    s.unary("generated_loss", HIST_TOL, n, img, &|g, x| {
        generated_loss(&g.input(target()), &x, &LossConfig::default())
    });
    s.unary("generated_loss/target_through", HIST_TOL, n, img, &|_, x| {
        let r = x.scale(0.8).add_scalar(0.05);
        generated_loss_with(&x, &r, &LossConfig::default(), TargetGrad::Through)
    });

    let net = NetConfig {
        image_size: 16,
        base_filters: 4,
        latent_dim: 4,
        extra_convs_per_block: 1,
        final_nonlinear: true,
    };
    match GanModel::<f64>::new(&net, &LossConfig::default(), EquilibriumState::default(), 1e-4, 3) {
        Ok(mut model) => {
            model.eq.k = 0.3;
            let z = fixed(8, "z", &[2, 4]);
            let x = fixed(8, "x", &[2, 1, 16, 16]).map(|v| 0.9 * v);
            let gen_model = model.clone();
            s.params(
                "generator",
                HIST_TOL,
                &model.gen.params,
                &["gen.fc.w", "gen.l0.c1.w", "gen.head.w", "gen.out.w", "gen.out.b"],
                |g, ps| {
                    let mut m = gen_model.clone();
                    m.gen.params = ps.clone();
                    m.generator_losses(g, &z)
                },
            );
            s.params(
                "discriminator",
                HIST_TOL,
                &model.disc.params,
                &["disc.enc.in.w", "disc.enc.l1.c2.w", "disc.enc.fc.w", "disc.dec.fc.w", "disc.dec.out.w"],
                |g, ps| {
                    let mut m = model.clone();
                    m.disc.params = ps.clone();
                    Ok(m.discriminator_losses(g, &x, &z)?.0)
                },
            );
        }
        Err(e) => s.push("generator", CheckKind::Gradient, HIST_TOL, Err(e)),
    }

    let ccfg = ClassifierConfig {
        input_size: 8,
        base_width: 2,
        blocks_per_stage: vec![1, 1],
        head_dims: vec![6, 5, 7],
        n_classes: 7,
    };
    match Classifier::<f64>::new(&ccfg, 4) {
        Ok(model) => {
            let x = fixed(9, "img", &[3, 1, 8, 8]);
            s.params(
                "classifier",
                GRAD_TOL,
                &model.params,
                &["backbone.stem.w", "backbone.s0.b0.c2.w", "backbone.s1.proj.w", "head.fc0.w", "head.fc2.b"],
                |g, ps| {
                    let m = Classifier {
                        cfg: ccfg.clone(),
                        params: ps.clone(),
                    };
                    let logits = m.forward(g, g.input(x.clone()), Tracking::Train)?;
                    softmax_cross_entropy(&logits, &[1, 4, 6])
                },
            );
        }
        Err(e) => s.push("classifier", CheckKind::Gradient, GRAD_TOL, Err(e)),
    }
}

fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (&[n, c, h, w], &[f, _, kh, kw]) = (x.shape(), k.shape()) else {
        return Vec::new();
    };
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.data()[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                        * k.data()[((o * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[((b * f + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn oracle_rows(s: &mut Suite) {
    let conv = (|| -> Result<f64, TensorError> {
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let mut r = stream(seed, "verify.conv_oracle");
            let (n, c, f) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4));
            let (h, w) = (r.random_range(3..=9), r.random_range(3..=9));
            let (kh, kw) = (r.random_range(1..=3), r.random_range(1..=3));
            let (stride, pad) = (r.random_range(1..=2), r.random_range(0..=1));
            let x = uniform(&mut r, &[n, c, h, w], -1.0, 1.0);
            let k = uniform(&mut r, &[f, c, kh, kw], -1.0, 1.0);
            let got = conv2d_forward(&x, &k, stride, pad)?;
            worst = worst.max(max_diff(got.data(), &naive_conv(&x, &k, stride, pad)));
        }
        Ok(worst)
    })();
    s.push("conv2d vs direct loops", CheckKind::Oracle, ORACLE_TOL, conv);

    let mm = (|| -> Result<f64, TensorError> {
        let mut r = stream(1, "verify.mm_oracle");
        let a = uniform(&mut r, &[4, 6], -1.0, 1.0);
        let b = uniform(&mut r, &[6, 3], -1.0, 1.0);
        let got = matmul_forward(&a, &b)?;
        let mut want = vec![0.0; 12];
        for i in 0..4 {
            for j in 0..3 {
                for p in 0..6 {
                    want[i * 3 + j] += a.data()[i * 6 + p] * b.data()[p * 3 + j];
                }
            }
        }
        Ok(max_diff(got.data(), &want))
    })();
    s.push("matmul vs triple loop", CheckKind::Oracle, ORACLE_TOL, mm);

    let hard = LossConfig {
        omega: 0.001,
        n_bins: 64,
        value_range: (0.0, 255.0),
        ..LossConfig::default()
    }
    .hard_limit();
    let losses = (|| -> Result<f64, TensorError> {
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let mut r = stream(seed, "verify.loss_oracle");
            let a: Vec<f64> = (0..64).map(|_| r.random_range(0..=255u8) as f64).collect();
            let b: Vec<f64> = (0..64).map(|_| r.random_range(0..=255u8) as f64).collect();
            let count = |v: &[f64]| {
                let mut h = [0.0f64; 64];
                for &p in v {
                    h[((p / 255.0 * 64.0) as usize).min(63)] += 1.0;
                }
                h
            };
            let (ha, hb) = (count(&a), count(&b));
            let want_hist = ha.iter().zip(&hb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 64.0;
            let want_spatial = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 64.0;
            let g = Graph::new();
            let x = g.input(Tensor::new(&[1, 1, 8, 8], a.clone())?);
            let y = g.input(Tensor::new(&[1, 1, 8, 8], b.clone())?);
            let got_h = hist_loss(&x, &y, &hard)?.value().item();
            let got_s = spatial_loss(&x, &y)?.value().item();
            let got_g = generated_loss(&x, &y, &hard)?.value().item();
            let counts = hard_histogram(&a, 64, (0.0, 255.0))?;
            let counts: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            worst = worst
                .max((got_h - want_hist).abs())
                .max((got_s - want_spatial).abs())
                .max((got_g - (want_hist + 0.001 * want_spatial)).abs())
                .max(max_diff(&counts, &ha));
        }
        Ok(worst)
    })();
    s.push("hist/spatial/generated vs brute", CheckKind::Oracle, ORACLE_TOL, losses);

    let worked = (|| -> Result<f64, TensorError> {
        let cfg = LossConfig {
            omega: 0.001,
            n_bins: 2,
            value_range: (0.0, 255.0),
            ..LossConfig::default()
        }
        .hard_limit();
        let g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[1, 1, 2, 2], vec![0.0, 0.0, 255.0, 255.0])?);
        let y = g.input(Tensor::new(&[1, 1, 2, 2], vec![0.0, 255.0, 255.0, 255.0])?);
        Ok((generated_loss(&x, &y, &cfg)?.value().item() - 17.25625).abs())
    })();
    s.push("generated_loss worked example", CheckKind::Oracle, 1e-12, worked);

    let unity = (|| -> Result<f64, TensorError> {
        let mut r = stream(2, "verify.unity");
        let x = uniform(&mut r, &[50, 1, 8, 8], -1.2, 1.2);
        let g = Graph::new();
        let h = soft_histogram(&g.input(x), &LossConfig::default())?.value();
        Ok(h.data().chunks(64).map(|row| (row.iter().sum::<f64>() - 64.0).abs()).fold(0.0, f64::max))
    })();
    s.push("soft_histogram partition of unity", CheckKind::Oracle, 1e-6, unity);
}

/// Run every check. Never panics; problems become failing rows.
pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let start = Instant::now();
    let mut suite = Suite {
        rows: Vec::new(),
        perturb: opts.perturb.clone(),
    };
    gradient_rows(&mut suite);
    oracle_rows(&mut suite);
    if let Some(name) = &opts.perturb {
        if !suite.rows.iter().any(|r| &r.name == name && r.kind == CheckKind::Gradient) {
            suite.push(
                &format!("perturb:{name}"),
                CheckKind::Gradient,
                0.0,
                Err(TensorError::UnknownParam(name.clone())),
            );
        }
    }
    VerifyReport {
        rows: suite.rows,
        elapsed: start.elapsed(),
    }
}
