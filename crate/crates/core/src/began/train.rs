use rand::Rng;

use super::net::{AutoEncoder, Discriminator, Generator, NetConfig, Tracking};
use super::{equilibrium_update, EquilibriumState};
use crate::data::{GrayImage, Plane};
use crate::error::{CheckpointError, DataError, Error, TensorError};
use crate::losses::{generated_loss, generated_loss_with, LossConfig, TargetGrad};
use crate::rng;
use crate::tensor::{meta_tensor, meta_values, Adam, Graph, ParamSet, Real, Tensor, Var};

/// Losses of one discriminator update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_d: f64,
    pub l_real: f64,
    pub l_fake: f64,
}

/// Generator, autoencoder discriminator, controller state and optimizers.
#[derive(Clone, Debug)]
pub struct GanModel<T> {
    pub net: NetConfig,
    pub gen: Generator<T>,
    pub disc: Discriminator<T>,
    pub eq: EquilibriumState,
    pub loss_cfg: LossConfig,
    /// Whether the generator objective also differentiates through its own
    /// output used as the reconstruction target.
    pub generator_target: TargetGrad,
    pub step: u64,
    opt_g: Adam<T>,
    opt_d: Adam<T>,
}

fn to_f64<T: Real>(v: &Var<'_, T>) -> f64 {
    v.value().item().to_f64().unwrap_or(f64::NAN)
}

/// `L_G = L_generated(G(z), D(G(z)))`; only generator parameters are tracked.
pub fn generator_loss<'g, T: Real>(
    gen: &Generator<T>,
    disc: &impl AutoEncoder<T>,
    g: &'g Graph<T>,
    z: &Tensor<T>,
    cfg: &LossConfig,
    target: TargetGrad,
) -> Result<Var<'g, T>, TensorError> {
    let fake = gen.forward(g, g.input(z.clone()), Tracking::Train)?;
    let recon = disc.reconstruct(g, fake, Tracking::Frozen)?;
    generated_loss_with(&fake, &recon, cfg, target)
}

impl<T: Real> GanModel<T> {
    pub fn new(
        net: &NetConfig,
        loss_cfg: &LossConfig,
        eq: EquilibriumState,
        lr: f64,
        seed: u64,
    ) -> Result<Self, TensorError> {
        loss_cfg.validate()?;
        let gen = Generator::new(net, &mut rng::stream(seed, "gan.init.gen"))?;
        let disc = Discriminator::new(net, &mut rng::stream(seed, "gan.init.disc"))?;
        Ok(GanModel {
            net: net.clone(),
            gen,
            disc,
            eq,
            loss_cfg: loss_cfg.clone(),
            generator_target: TargetGrad::Through,
            step: 0,
            opt_g: Adam::with_lr(lr),
            opt_d: Adam::with_lr(lr),
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt_g.lr = lr;
        self.opt_d.lr = lr;
    }

    /// `(L_D, L_real, L_fake)` with `L_D = L_real - k * L_fake`. The fake
    /// batch is produced by a frozen generator, so only discriminator
    /// parameters are tracked.
    pub fn discriminator_losses<'g>(
        &self,
        g: &'g Graph<T>,
        x_real: &Tensor<T>,
        z: &Tensor<T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>, Var<'g, T>), TensorError> {
        let fake = self.gen.forward(g, g.input(z.clone()), Tracking::Frozen)?.detach();
        let real = g.input(x_real.clone());
        let rec_real = self.disc.reconstruct(g, real, Tracking::Train)?;
        let l_real = generated_loss(&real, &rec_real, &self.loss_cfg)?;
        let rec_fake = self.disc.reconstruct(g, fake, Tracking::Train)?;
        let l_fake = generated_loss(&fake, &rec_fake, &self.loss_cfg)?;
        let l_d = l_real.sub(&l_fake.scale(T::from_f64_lossy(self.eq.k)))?;
        Ok((l_d, l_real, l_fake))
    }

    /// One optimizer update of the discriminator.
    pub fn discriminator_step(&mut self, x_real: &Tensor<T>, z: &Tensor<T>) -> Result<StepLosses, TensorError> {
        let g = Graph::new();
        let (l_d, l_real, l_fake) = self.discriminator_losses(&g, x_real, z)?;
        self.disc.params.zero_grad();
        g.backward_into(l_d, &mut self.disc.params)?;
        self.opt_d.step(&mut self.disc.params)?;
        Ok(StepLosses {
            l_d: to_f64(&l_d),
            l_real: to_f64(&l_real),
            l_fake: to_f64(&l_fake),
        })
    }

    pub fn generator_losses<'g>(&self, g: &'g Graph<T>, z: &Tensor<T>) -> Result<Var<'g, T>, TensorError> {
        generator_loss(&self.gen, &self.disc, g, z, &self.loss_cfg, self.generator_target)
    }

    /// One optimizer update of the generator; returns `L_G`.
    pub fn generator_step(&mut self, z: &Tensor<T>) -> Result<f64, TensorError> {
        let g = Graph::new();
        let l_g = self.generator_losses(&g, z)?;
        self.gen.params.zero_grad();
        g.backward_into(l_g, &mut self.gen.params)?;
        self.opt_g.step(&mut self.gen.params)?;
        Ok(to_f64(&l_g))
    }

    /// Generator output for the given codes, no gradient tracking.
    pub fn generate(&self, z: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let g = Graph::new();
        let out = self.gen.forward(&g, g.input(z.clone()), Tracking::Frozen)?;
        Ok((*out.value()).clone())
    }

    /// Discriminator reconstruction of an image batch, no gradient tracking.
    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let g = Graph::new();
        let out = self.disc.reconstruct(&g, g.input(x.clone()), Tracking::Frozen)?;
        Ok((*out.value()).clone())
    }
}

/// Uniform(-1, 1) codes, `[n, latent_dim]`.
pub(crate) fn draw_codes<T: Real>(rng: &mut impl Rng, n: usize, latent: usize) -> Tensor<T> {
    let data = (0..n * latent)
        .map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
        .collect();
    Tensor::new(&[n, latent], data).expect("positive shape")
}

const META_NET: &str = "__meta.net";
const META_EQ: &str = "__meta.eq";
const META_LOSS: &str = "__meta.loss";

impl GanModel<f32> {
    /// All parameters plus `__meta.*` entries describing the architecture,
    /// controller state and loss settings.
    pub fn to_checkpoint(&self) -> ParamSet<f32> {
        let mut ps = self.gen.params.clone();
        ps.extend(self.disc.params.clone()).expect("disjoint prefixes");
        let n = &self.net;
        ps.set(
            META_NET,
            meta_tensor(&[
                n.image_size as f64,
                n.base_filters as f64,
                n.latent_dim as f64,
                n.extra_convs_per_block as f64,
                if n.final_nonlinear { 1.0 } else { 0.0 },
            ]),
        );
        ps.set(META_EQ, meta_tensor(&[self.eq.k, self.eq.gamma, self.eq.lambda_k]));
        let l = &self.loss_cfg;
        ps.set(
            META_LOSS,
            meta_tensor(&[l.omega, l.n_bins as f64, l.sharpness, l.value_range.0, l.value_range.1]),
        );
        ps
    }

    pub fn from_checkpoint(mut ps: ParamSet<f32>, lr: f64) -> Result<Self, CheckpointError> {
        let mut take = |name: &str, len: usize| -> Result<Vec<f64>, CheckpointError> {
            let p = ps
                .remove(name)
                .ok_or_else(|| CheckpointError::Meta(format!("missing `{name}`; not a GAN checkpoint")))?;
            if p.value.len() != 2 * len {
                return Err(CheckpointError::Meta(format!("`{name}` has {} entries", p.value.len())));
            }
            Ok(meta_values(&p.value))
        };
        let n = take(META_NET, 5)?;
        let e = take(META_EQ, 3)?;
        let l = take(META_LOSS, 5)?;
        let net = NetConfig {
            image_size: n[0] as usize,
            base_filters: n[1] as usize,
            latent_dim: n[2] as usize,
            extra_convs_per_block: n[3] as usize,
            final_nonlinear: n[4] != 0.0,
        };
        let loss_cfg = LossConfig {
            omega: l[0],
            n_bins: l[1] as usize,
            sharpness: l[2],
            value_range: (l[3], l[4]),
        };
        let eq = EquilibriumState {
            k: e[0],
            gamma: e[1],
            lambda_k: e[2],
        };
        let mut model = GanModel::new(&net, &loss_cfg, eq, lr, 0)
            .map_err(|e| CheckpointError::Meta(e.to_string()))?;
        for params in [&mut model.gen.params, &mut model.disc.params] {
            let names: Vec<String> = params.names().map(str::to_string).collect();
            for name in names {
                let src = ps
                    .remove(&name)
                    .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
                let dst = params.get_mut(&name).expect("listed name");
                if src.value.shape() != dst.value.shape() {
                    return Err(CheckpointError::ParamShape {
                        name,
                        expected: dst.value.shape().to_vec(),
                        got: src.value.shape().to_vec(),
                    });
                }
                dst.value = src.value;
            }
        }
        if let Some(extra) = ps.names().next() {
            return Err(CheckpointError::Meta(format!("unexpected parameter `{extra}`")));
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanTrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Emit a sample grid every this many steps (0 disables).
    pub sample_every: usize,
    pub grid_side: usize,
}

impl Default for GanTrainOptions {
    fn default() -> Self {
        GanTrainOptions {
            steps: 2000,
            batch: 16,
            seed: 0,
            sample_every: 0,
            grid_side: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub l_d: f64,
    pub l_g: f64,
    pub l_real: f64,
    pub l_fake: f64,
    pub k: f64,
    /// Convergence measure.
    pub m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanReport {
    pub seed: u64,
    pub records: Vec<StepRecord>,
    /// `(step, tiled sample grid)`.
    pub samples: Vec<(u64, GrayImage)>,
}

impl GanReport {
    pub fn convergence(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.m).collect()
    }

    /// `step,L_D,L_G,L_real,L_fake,k,M` with one row per step.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,L_D,L_G,L_real,L_fake,k,M\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.step, r.l_d, r.l_g, r.l_real, r.l_fake, r.k, r.m
            ));
        }
        s
    }
}

fn check_images(net: &NetConfig, data: &[Plane]) -> Result<(), Error> {
    if data.is_empty() {
        return Err(DataError::Empty.into());
    }
    let side = net.image_size;
    if let Some(p) = data.iter().find(|p| p.width != side || p.height != side) {
        return Err(TensorError::shape(
            "train_gan",
            format!("{side}x{side} training images"),
            &[p.height, p.width],
        )
        .into());
    }
    Ok(())
}

fn batch_tensor<T: Real>(data: &[Plane], idx: &[usize], side: usize) -> Tensor<T> {
    let mut v = Vec::with_capacity(idx.len() * side * side);
    for &i in idx {
        v.extend(data[i].data.iter().map(|&x| T::from_f64_lossy(x as f64)));
    }
    Tensor::new(&[idx.len(), 1, side, side], v).expect("checked sizes")
}

/// Alternating discriminator/generator updates with a controller step
/// after each pair. Bit-deterministic for a fixed seed, model and data.
pub fn train_gan<T: Real>(
    model: &mut GanModel<T>,
    data: &[Plane],
    opts: &GanTrainOptions,
) -> Result<GanReport, Error> {
    check_images(&model.net, data)?;
    if opts.batch == 0 {
        return Err(Error::Invalid("batch must be >= 1".into()));
    }
    let side = model.net.image_size;
    let latent = model.net.latent_dim;
    let mut batch_rng = rng::stream(opts.seed, "gan.batch");
    let mut z_rng = rng::stream(opts.seed, "gan.z");
    let fixed_z: Tensor<T> = draw_codes(
        &mut rng::stream(opts.seed, "gan.sample_z"),
        opts.grid_side * opts.grid_side,
        latent,
    );
    let mut report = GanReport {
        seed: opts.seed,
        records: Vec::with_capacity(opts.steps),
        samples: Vec::new(),
    };
    for _ in 0..opts.steps {
        let idx: Vec<usize> = (0..opts.batch)
            .map(|_| batch_rng.random_range(0..data.len()))
            .collect();
        let x = batch_tensor::<T>(data, &idx, side);
        let z_d = draw_codes(&mut z_rng, opts.batch, latent);
        let z_g = draw_codes(&mut z_rng, opts.batch, latent);
        let d = model.discriminator_step(&x, &z_d)?;
        let l_g = model.generator_step(&z_g)?;
        let (eq, m) = equilibrium_update(model.eq, d.l_real, d.l_fake);
        model.eq = eq;
        model.step += 1;
        report.records.push(StepRecord {
            step: model.step,
            l_d: d.l_d,
            l_g,
            l_real: d.l_real,
            l_fake: d.l_fake,
            k: eq.k,
            m,
        });
        if opts.sample_every > 0 && model.step % opts.sample_every as u64 == 0 {
            let imgs = planes_from(&model.generate(&fixed_z)?, side);
            report
                .samples
                .push((model.step, sample_grid(&imgs, opts.grid_side)));
        }
    }
    Ok(report)
}

fn planes_from<T: Real>(t: &Tensor<T>, side: usize) -> Vec<Plane> {
    t.data()
        .chunks(side * side)
        .map(|c| Plane {
            width: side,
            height: side,
            data: c.iter().map(|v| v.to_f64().unwrap_or(0.0) as f32).collect(),
        })
        .collect()
}

/// `n` generated images in [-1, 1]; codes come from `seed`.
pub fn sample<T: Real>(model: &GanModel<T>, n: usize, seed: u64) -> Result<Vec<Plane>, Error> {
    if n == 0 {
        return Err(Error::Invalid("sample count must be >= 1".into()));
    }
    let z: Tensor<T> = draw_codes(&mut rng::stream(seed, "sample.z"), n, model.net.latent_dim);
    let side = model.net.image_size;
    let mut out = Vec::with_capacity(n);
    // rows are independent, so chunking does not change any value
    for chunk in z.data().chunks(16 * model.net.latent_dim) {
        let rows = chunk.len() / model.net.latent_dim;
        let zc = Tensor::new(&[rows, model.net.latent_dim], chunk.to_vec())?;
        out.extend(planes_from(&model.generate(&zc)?, side));
    }
    Ok(out)
}

/// Tile equally sized images row-major into a `cols`-wide 8-bit grid.
pub fn sample_grid(images: &[Plane], cols: usize) -> GrayImage {
    let side = images.first().map_or(1, |p| p.width);
    let cols = cols.max(1);
    let rows = images.len().div_ceil(cols).max(1);
    let width = cols * side;
    let mut pixels = vec![0u8; rows * side * width];
    for (i, img) in images.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let bytes = img.to_bytes();
        for y in 0..side {
            let dst = (r * side + y) * width + c * side;
            pixels[dst..dst + side].copy_from_slice(&bytes[y * side..(y + 1) * side]);
        }
    }
    GrayImage {
        width,
        height: rows * side,
        pixels,
    }
}
