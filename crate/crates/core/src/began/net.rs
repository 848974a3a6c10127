//! Generator and autoencoder discriminator.
//!
//! Both decoders share one ladder: a fully connected map from the code to
//! the smallest feature map, then per resolution level `2 + extra` 3x3
//! conv+ELU layers followed by nearest-neighbour upsampling (none after the
//! last level). The output head is a ReLU conv (when `final_nonlinear`)
//! and a conv to one channel, bounded by tanh.
//!
//! The encoder mirrors the ladder with average pooling and channel widths
//! growing by `base_filters` per level, ending in a linear map to the code.

use rand::Rng;

use crate::error::TensorError;
use crate::tensor::{Graph, ParamSet, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub image_size: usize,
    pub base_filters: usize,
    pub latent_dim: usize,
    pub extra_convs_per_block: usize,
    pub final_nonlinear: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            image_size: 16,
            base_filters: 8,
            latent_dim: 16,
            extra_convs_per_block: 2,
            final_nonlinear: true,
        }
    }
}

impl NetConfig {
    /// `(smallest map side, number of resolution levels)`.
    pub fn ladder(&self) -> Result<(usize, usize), TensorError> {
        for base in [8usize, 5] {
            let mut side = base;
            let mut levels = 1;
            while side < self.image_size {
                side *= 2;
                levels += 1;
            }
            // 8 alone is not a supported size; 16 is the smallest power-of-two ladder
            if side == self.image_size && levels >= 2 && !(base == 5 && self.image_size < 80) {
                return Ok((base, levels));
            }
        }
        Err(TensorError::invalid(
            "net config",
            format!(
                "image_size {} is not of the form 16*2^k or 80*2^k",
                self.image_size
            ),
        ))
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        self.ladder()?;
        if self.base_filters < 4 {
            return Err(TensorError::invalid("net config", "base_filters must be >= 4"));
        }
        if self.latent_dim < 2 {
            return Err(TensorError::invalid("net config", "latent_dim must be >= 2"));
        }
        if self.latent_dim >= self.image_size * self.image_size {
            return Err(TensorError::invalid(
                "net config",
                "latent_dim must be smaller than the pixel count",
            ));
        }
        Ok(())
    }

    pub(crate) fn convs_per_level(&self) -> usize {
        2 + self.extra_convs_per_block
    }

    fn encoder_width(&self, level: usize) -> usize {
        self.base_filters * (level + 1)
    }
}

/// Whether a forward pass records gradients for the network's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tracking {
    Train,
    Frozen,
}

fn bind<'g, T: Real>(
    g: &'g Graph<T>,
    params: &ParamSet<T>,
    name: &str,
    tracking: Tracking,
) -> Result<Var<'g, T>, TensorError> {
    match tracking {
        Tracking::Train => g.param(params, name),
        Tracking::Frozen => g.frozen_param(params, name),
    }
}

pub(crate) fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("positive shape")
}

pub(crate) fn add_conv<T: Real>(
    ps: &mut ParamSet<T>,
    name: &str,
    out_ch: usize,
    in_ch: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<(), TensorError> {
    let bound = (3.0 / (in_ch * k * k) as f64).sqrt();
    ps.insert(&format!("{name}.w"), uniform(&[out_ch, in_ch, k, k], bound, rng))?;
    ps.insert(&format!("{name}.b"), Tensor::zeros(&[out_ch]))
}

pub(crate) fn add_fc<T: Real>(
    ps: &mut ParamSet<T>,
    name: &str,
    inputs: usize,
    outputs: usize,
    rng: &mut impl Rng,
) -> Result<(), TensorError> {
    let bound = (3.0 / inputs as f64).sqrt();
    ps.insert(&format!("{name}.w"), uniform(&[inputs, outputs], bound, rng))?;
    ps.insert(&format!("{name}.b"), Tensor::zeros(&[outputs]))
}

/// 3x3 same-padding conv plus per-channel bias.
pub(crate) fn conv<'g, T: Real>(
    g: &'g Graph<T>,
    ps: &ParamSet<T>,
    name: &str,
    x: Var<'g, T>,
    tracking: Tracking,
) -> Result<Var<'g, T>, TensorError> {
    let w = bind(g, ps, &format!("{name}.w"), tracking)?;
    let b = bind(g, ps, &format!("{name}.b"), tracking)?;
    let pad = w.value_ref().shape()[2] / 2;
    x.conv2d(&w, 1, pad)?.channel_bias(&b)
}

pub(crate) fn fc<'g, T: Real>(
    g: &'g Graph<T>,
    ps: &ParamSet<T>,
    name: &str,
    x: Var<'g, T>,
    tracking: Tracking,
) -> Result<Var<'g, T>, TensorError> {
    let w = bind(g, ps, &format!("{name}.w"), tracking)?;
    let b = bind(g, ps, &format!("{name}.b"), tracking)?;
    x.fully_connected(&w, &b)
}

fn build_decoder<T: Real>(
    cfg: &NetConfig,
    prefix: &str,
    ps: &mut ParamSet<T>,
    rng: &mut impl Rng,
) -> Result<(), TensorError> {
    let (min, levels) = cfg.ladder()?;
    let ch = cfg.base_filters;
    add_fc(ps, &format!("{prefix}.fc"), cfg.latent_dim, ch * min * min, rng)?;
    for l in 0..levels {
        for j in 0..cfg.convs_per_level() {
            add_conv(ps, &format!("{prefix}.l{l}.c{j}"), ch, ch, 3, rng)?;
        }
    }
    if cfg.final_nonlinear {
        add_conv(ps, &format!("{prefix}.head"), ch, ch, 3, rng)?;
    }
    add_conv(ps, &format!("{prefix}.out"), 1, ch, 3, rng)
}

fn decode<'g, T: Real>(
    cfg: &NetConfig,
    prefix: &str,
    ps: &ParamSet<T>,
    g: &'g Graph<T>,
    code: Var<'g, T>,
    tracking: Tracking,
) -> Result<Var<'g, T>, TensorError> {
    let (min, levels) = cfg.ladder()?;
    let n = code.shape()[0];
    let ch = cfg.base_filters;
    let mut x = fc(g, ps, &format!("{prefix}.fc"), code, tracking)?.reshape(&[n, ch, min, min])?;
    for l in 0..levels {
        for j in 0..cfg.convs_per_level() {
            x = conv(g, ps, &format!("{prefix}.l{l}.c{j}"), x, tracking)?.elu();
        }
        if l + 1 < levels {
            x = x.upsample2x()?;
        }
    }
    if cfg.final_nonlinear {
        x = conv(g, ps, &format!("{prefix}.head"), x, tracking)?.relu();
    }
    Ok(conv(g, ps, &format!("{prefix}.out"), x, tracking)?.tanh())
}

fn check_code<T: Real>(cfg: &NetConfig, code: &Var<'_, T>) -> Result<(), TensorError> {
    let s = code.shape();
    if s.len() != 2 || s[1] != cfg.latent_dim {
        return Err(TensorError::shape("decoder", format!("[N,{}]", cfg.latent_dim), &s));
    }
    Ok(())
}

fn check_image<T: Real>(cfg: &NetConfig, x: &Var<'_, T>) -> Result<(), TensorError> {
    let s = x.shape();
    let side = cfg.image_size;
    if s.len() != 4 || s[1] != 1 || s[2] != side || s[3] != side {
        return Err(TensorError::shape("discriminator", format!("[N,1,{side},{side}]"), &s));
    }
    Ok(())
}

/// Maps codes `[N, latent_dim]` to images `[N,1,S,S]` in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub cfg: NetConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(cfg: &NetConfig, rng: &mut impl Rng) -> Result<Self, TensorError> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        build_decoder(cfg, "gen", &mut params, rng)?;
        Ok(Generator {
            cfg: cfg.clone(),
            params,
        })
    }

    pub fn forward<'g>(
        &self,
        g: &'g Graph<T>,
        z: Var<'g, T>,
        tracking: Tracking,
    ) -> Result<Var<'g, T>, TensorError> {
        check_code(&self.cfg, &z)?;
        decode(&self.cfg, "gen", &self.params, g, z, tracking)
    }
}

/// Anything that reconstructs an image batch; the discriminator role.
pub trait AutoEncoder<T: Real> {
    fn reconstruct<'g>(
        &self,
        g: &'g Graph<T>,
        x: Var<'g, T>,
        tracking: Tracking,
    ) -> Result<Var<'g, T>, TensorError>;
}

/// Autoencoder discriminator: encoder to a `latent_dim` bottleneck, then
/// its own decoder ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub cfg: NetConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(cfg: &NetConfig, rng: &mut impl Rng) -> Result<Self, TensorError> {
        cfg.validate()?;
        let (min, levels) = cfg.ladder()?;
        let mut ps = ParamSet::new();
        add_conv(&mut ps, "disc.enc.in", cfg.base_filters, 1, 3, rng)?;
        let mut in_ch = cfg.base_filters;
        for l in 0..levels {
            let out_ch = cfg.encoder_width(l);
            for j in 0..cfg.convs_per_level() {
                add_conv(&mut ps, &format!("disc.enc.l{l}.c{j}"), out_ch, in_ch, 3, rng)?;
                in_ch = out_ch;
            }
        }
        add_fc(&mut ps, "disc.enc.fc", in_ch * min * min, cfg.latent_dim, rng)?;
        build_decoder(cfg, "disc.dec", &mut ps, rng)?;
        Ok(Discriminator {
            cfg: cfg.clone(),
            params: ps,
        })
    }

    pub fn encode<'g>(
        &self,
        g: &'g Graph<T>,
        x: Var<'g, T>,
        tracking: Tracking,
    ) -> Result<Var<'g, T>, TensorError> {
        check_image(&self.cfg, &x)?;
        let (_, levels) = self.cfg.ladder()?;
        let ps = &self.params;
        let mut h = conv(g, ps, "disc.enc.in", x, tracking)?.elu();
        for l in 0..levels {
            for j in 0..self.cfg.convs_per_level() {
                h = conv(g, ps, &format!("disc.enc.l{l}.c{j}"), h, tracking)?.elu();
            }
            if l + 1 < levels {
                h = h.avgpool2x()?;
            }
        }
        let s = h.shape();
        let flat = h.reshape(&[s[0], s[1] * s[2] * s[3]])?;
        fc(g, ps, "disc.enc.fc", flat, tracking)
    }
}

impl<T: Real> AutoEncoder<T> for Discriminator<T> {
    fn reconstruct<'g>(
        &self,
        g: &'g Graph<T>,
        x: Var<'g, T>,
        tracking: Tracking,
    ) -> Result<Var<'g, T>, TensorError> {
        let code = self.encode(g, x, tracking)?;
        check_code(&self.cfg, &code)?;
        decode(&self.cfg, "disc.dec", &self.params, g, code, tracking)
    }
}
