//! KL-regularised convolutional autoencoder that maps images to a compact
//! latent grid and back. Trained once, then frozen while demorphing.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::imaging::{Image, Tensor};
use crate::nn::{self, batch_tensor, Adam, AdamConfig, Conv2d, Forward, GroupNorm, ParamStore, ResBlock, Var, NORM_GROUPS};
use crate::seeding;

pub const CHECKPOINT_KIND: &str = "codec";
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub downscale_factor: usize,
    pub latent_channels: usize,
    pub base_width: usize,
    pub kl_weight: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            downscale_factor: 8,
            latent_channels: 4,
            base_width: 16,
            kl_weight: 1e-4,
            epochs: 10,
            learning_rate: 2e-3,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if ![2, 4, 8].contains(&self.downscale_factor) {
            return Err(Error::validation(
                "downscale_factor",
                format!("must be 2, 4 or 8, got {}", self.downscale_factor),
            ));
        }
        let positive = [
            ("latent_channels", self.latent_channels),
            ("base_width", self.base_width),
            ("batch_size", self.batch_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::validation("kl_weight", "must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be finite and positive"));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.downscale_factor.trailing_zeros() as usize
    }

    /// Latent `(channels, height, width)` for an `h × w` input.
    pub fn latent_shape(&self, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let f = self.downscale_factor;
        if h == 0 || w == 0 || !h.is_multiple_of(f) || !w.is_multiple_of(f) {
            return Err(Error::Config(format!("image {h}x{w} is not divisible by downscale factor {f}")));
        }
        Ok((self.latent_channels, h / f, w / f))
    }
}

/// Latent grid stored channel-major (`C × H × W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl Latent {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "latent {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("latent contains non-finite values".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// `(height, width, channels)`, matching [`Image::shape`].
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_raw(vec![self.channels, self.height, self.width], self.data.clone())
    }
}

/// Maps images to latents and back. The trained codec is one implementation;
/// [`IdentityCompressor`] keeps pixels as they are.
pub trait Compressor: Send + Sync {
    fn encode_batch(&self, images: &[&Image]) -> Result<Vec<Latent>>;
    fn decode_batch(&self, latents: &[&Latent]) -> Result<Vec<Image>>;
    /// Stable identifier of the frozen weights.
    fn fingerprint(&self) -> String;

    fn encode(&self, image: &Image) -> Result<Latent> {
        Ok(self.encode_batch(&[image])?.remove(0))
    }

    fn decode(&self, latent: &Latent) -> Result<Image> {
        Ok(self.decode_batch(&[latent])?.remove(0))
    }
}

/// Pixel-space "compressor": the latent is the planar image itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCompressor;

pub const IDENTITY_FINGERPRINT: &str = "identity";

impl Compressor for IdentityCompressor {
    fn encode_batch(&self, images: &[&Image]) -> Result<Vec<Latent>> {
        images
            .iter()
            .map(|im| {
                let (h, w, c) = im.shape();
                Latent::new(c, h, w, im.to_planar())
            })
            .collect()
    }

    fn decode_batch(&self, latents: &[&Latent]) -> Result<Vec<Image>> {
        latents
            .iter()
            .map(|z| Image::from_planar(z.height, z.width, z.channels, z.data()))
            .collect()
    }

    fn fingerprint(&self) -> String {
        IDENTITY_FINGERPRINT.to_string()
    }
}

struct Encoder {
    conv_in: Conv2d,
    stages: Vec<(Conv2d, ResBlock)>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

struct Decoder {
    conv_in: Conv2d,
    mid: ResBlock,
    stages: Vec<(Conv2d, Option<ResBlock>)>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

struct Network {
    store: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
}

impl Network {
    fn build(cfg: &CodecConfig) -> Self {
        let mut rng = seeding::rng(cfg.seed, 0x636f_6465_6300);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let widths: Vec<usize> = (0..cfg.stages()).map(|i| cfg.base_width << i).collect();
        let b = cfg.base_width;
        let c = cfg.latent_channels;

        let conv_in = Conv2d::same(s, "enc.conv_in", IMAGE_CHANNELS, b, rng);
        let mut stages = Vec::new();
        let mut prev = b;
        for (i, &w) in widths.iter().enumerate() {
            let down = Conv2d::down(s, &format!("enc.down{i}"), prev, w, rng);
            let res = ResBlock::new(s, &format!("enc.res{i}"), w, w, rng);
            stages.push((down, res));
            prev = w;
        }
        let encoder = Encoder {
            conv_in,
            stages,
            norm_out: GroupNorm::new(s, "enc.norm_out", prev, NORM_GROUPS),
            conv_out: Conv2d::same(s, "enc.conv_out", prev, 2 * c, rng),
        };

        let top = *widths.last().expect("at least one stage");
        let conv_in = Conv2d::same(s, "dec.conv_in", c, top, rng);
        let mid = ResBlock::new(s, "dec.mid", top, top, rng);
        let mut stages = Vec::new();
        for i in (0..widths.len()).rev() {
            let out = if i == 0 { b } else { widths[i - 1] };
            let conv = Conv2d::same(s, &format!("dec.up{i}"), widths[i], out, rng);
            let res = (i > 0).then(|| ResBlock::new(s, &format!("dec.res{i}"), out, out, rng));
            stages.push((conv, res));
        }
        let decoder = Decoder {
            conv_in,
            mid,
            stages,
            norm_out: GroupNorm::new(s, "dec.norm_out", b, NORM_GROUPS),
            conv_out: Conv2d::same(s, "dec.conv_out", b, IMAGE_CHANNELS, rng),
        };
        Self {
            store,
            encoder,
            decoder,
        }
    }

    /// Returns `(mean, logvar)`; the input is shifted to be zero-centred.
    fn encode(&self, f: &mut Forward, x: Var, latent_channels: usize) -> (Var, Var) {
        let e = &self.encoder;
        let x = f.g.scale_shift(x, 1.0, -0.5);
        let mut h = e.conv_in.forward(f, x);
        for (down, res) in &e.stages {
            h = down.forward(f, h);
            h = res.forward(f, h);
        }
        let h = e.norm_out.forward(f, h);
        let h = f.g.silu(h);
        let h = e.conv_out.forward(f, h);
        let mean = f.g.slice_channels(h, 0, latent_channels);
        let logvar = f.g.slice_channels(h, latent_channels, latent_channels);
        (mean, logvar)
    }

    fn decode(&self, f: &mut Forward, z: Var) -> Var {
        let d = &self.decoder;
        let mut h = d.conv_in.forward(f, z);
        h = d.mid.forward(f, h);
        for (conv, res) in &d.stages {
            h = f.g.upsample2x(h);
            h = conv.forward(f, h);
            if let Some(res) = res {
                h = res.forward(f, h);
            }
        }
        let h = d.norm_out.forward(f, h);
        let h = f.g.silu(h);
        let h = d.conv_out.forward(f, h);
        f.g.scale_shift(h, 1.0, 0.5)
    }
}

/// One epoch of codec training, averaged over batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecEpoch {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CodecMeta {
    config: CodecConfig,
    image_height: usize,
    image_width: usize,
    train_fingerprint: String,
    history: Vec<CodecEpoch>,
}

/// Trained, frozen codec: configuration, weights and training provenance.
pub struct CodecCheckpoint {
    config: CodecConfig,
    image_height: usize,
    image_width: usize,
    train_fingerprint: String,
    history: Vec<CodecEpoch>,
    net: Network,
}

impl std::fmt::Debug for CodecCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CodecCheckpoint")
            .field("config", &self.config)
            .field("image", &(self.image_height, self.image_width))
            .field("train_fingerprint", &self.train_fingerprint)
            .field("parameters", &self.net.store.scalar_count())
            .finish()
    }
}

/// SHA-256 over the training seed and the 8-bit quantised dataset.
pub fn dataset_fingerprint(images: &[Image], seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for im in images {
        let (height, width, c) = im.shape();
        for d in [height, width, c] {
            h.update((d as u64).to_le_bytes());
        }
        h.update(im.to_u8());
    }
    hex::encode(h.finalize())
}

fn check_dataset(images: &[Image], cfg: &CodecConfig) -> Result<(usize, usize)> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("codec training needs at least one image".into()))?;
    let (h, w, c) = first.shape();
    if c != IMAGE_CHANNELS {
        return Err(Error::Config(format!("codec expects {IMAGE_CHANNELS}-channel images, got {c}")));
    }
    if let Some(bad) = images.iter().find(|im| im.shape() != (h, w, c)) {
        return Err(Error::Config(format!(
            "images differ in shape: {:?} vs {:?}",
            bad.shape(),
            (h, w, c)
        )));
    }
    cfg.latent_shape(h, w)?;
    Ok((h, w))
}

/// Trains a codec on `images` with Adam on `L1 + kl_weight · KL`.
pub fn train_codec(images: &[Image], cfg: &CodecConfig) -> Result<CodecCheckpoint> {
    train_codec_with(images, cfg, |_| {})
}

/// [`train_codec`] with a callback after every epoch.
pub fn train_codec_with(
    images: &[Image],
    cfg: &CodecConfig,
    mut on_epoch: impl FnMut(&CodecEpoch),
) -> Result<CodecCheckpoint> {
    cfg.validate()?;
    let (h, w) = check_dataset(images, cfg)?;
    let mut net = Network::build(cfg);
    let mut adam = Adam::new(
        &net.store,
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let planar: Vec<Vec<f64>> = images.iter().map(Image::to_planar).collect();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut rng = seeding::rng(cfg.seed, 0x0074_7261_696e);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    let total_steps = cfg.epochs * images.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut recon_sum, mut kl_sum, mut batches) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&[f64]> = chunk.iter().map(|&i| planar[i].as_slice()).collect();
            let (recon, kl, grads) = codec_step(&net, cfg, &samples, h, w, &mut rng);
            if !(recon.is_finite() && kl.is_finite()) {
                return Err(Error::Training {
                    step,
                    reason: format!("loss became non-finite (recon {recon}, kl {kl})"),
                });
            }
            adam.set_lr(cosine_lr(cfg.learning_rate, step, total_steps));
            adam.apply(&mut net.store, &grads);
            recon_sum += recon;
            kl_sum += kl;
            batches += 1;
            step += 1;
        }
        let stats = CodecEpoch {
            epoch,
            recon: recon_sum / batches as f64,
            kl: kl_sum / batches as f64,
        };
        log::info!("codec epoch {epoch}: recon {:.5} kl {:.3}", stats.recon, stats.kl);
        on_epoch(&stats);
        history.push(stats);
    }
    net.store.round_to_f32();
    Ok(CodecCheckpoint {
        config: cfg.clone(),
        image_height: h,
        image_width: w,
        train_fingerprint: dataset_fingerprint(images, cfg.seed),
        history,
        net,
    })
}

/// Cosine decay from `base` to `base / 10` over the run.
fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let t = step as f64 / total.max(1) as f64;
    base * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Forward and backward pass of one batch; returns `(recon, kl, grads)`.
fn codec_step(
    net: &Network,
    cfg: &CodecConfig,
    samples: &[&[f64]],
    h: usize,
    w: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64, Vec<(usize, Vec<f64>)>) {
    let mut f = Forward::new(&net.store);
    let x = f.g.input(batch_tensor(samples, IMAGE_CHANNELS, h, w));
    let (mean, logvar) = net.encode(&mut f, x, cfg.latent_channels);
    let n = f.g.value(mean).len();
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let z = f.g.reparameterize(mean, logvar, noise);
    let out = net.decode(&mut f, z);
    let target: Vec<f64> = samples.iter().flat_map(|s| s.iter().copied()).collect();
    let recon = f.g.l1_to(out, target);
    let kl = f.g.kl_normal(mean, logvar);
    let loss = f.g.combine(&[(recon, 1.0), (kl, cfg.kl_weight)]);
    let grads = f.g.backward(loss);
    (f.g.scalar(recon), f.g.scalar(kl), grads)
}

impl CodecCheckpoint {
    /// Untrained codec with seeded initial weights.
    pub fn untrained(cfg: &CodecConfig, image_height: usize, image_width: usize) -> Result<Self> {
        cfg.validate()?;
        cfg.latent_shape(image_height, image_width)?;
        let mut net = Network::build(cfg);
        net.store.round_to_f32();
        Ok(Self {
            config: cfg.clone(),
            image_height,
            image_width,
            train_fingerprint: String::new(),
            history: Vec::new(),
            net,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.image_height, self.image_width, IMAGE_CHANNELS)
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let f = self.config.downscale_factor;
        (self.image_height / f, self.image_width / f, self.config.latent_channels)
    }

    pub fn train_fingerprint(&self) -> &str {
        &self.train_fingerprint
    }

    pub fn history(&self) -> &[CodecEpoch] {
        &self.history
    }

    pub fn params(&self) -> &ParamStore {
        &self.net.store
    }

    /// Hash of the frozen weights.
    pub fn weights_hash(&self) -> String {
        self.net.store.fingerprint()
    }

    fn check_image(&self, im: &Image) -> Result<()> {
        if im.shape() != self.image_shape() {
            return Err(Error::Config(format!(
                "codec expects {:?} images, got {:?}",
                self.image_shape(),
                im.shape()
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Latent) -> Result<()> {
        if z.shape() != self.latent_shape() {
            return Err(Error::Config(format!(
                "codec expects {:?} latents, got {:?}",
                self.latent_shape(),
                z.shape()
            )));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let meta = CodecMeta {
            config: self.config.clone(),
            image_height: self.image_height,
            image_width: self.image_width,
            train_fingerprint: self.train_fingerprint.clone(),
            history: self.history.clone(),
        };
        Container {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::to_value(meta).expect("codec metadata serialises"),
            tensors: self.net.store.to_named(),
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let meta: CodecMeta = serde_json::from_value(c.expect_kind(CHECKPOINT_KIND)?.clone())
            .map_err(|e| Error::Format(format!("codec metadata: {e}")))?;
        meta.config.validate()?;
        let mut net = Network::build(&meta.config);
        net.store.assign_from(c.tensors)?;
        Ok(Self {
            config: meta.config,
            image_height: meta.image_height,
            image_width: meta.image_width,
            train_fingerprint: meta.train_fingerprint,
            history: meta.history,
            net,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

/// Batches larger than this are split to bound graph memory.
const INFERENCE_BATCH: usize = 32;

impl Compressor for CodecCheckpoint {
    fn encode_batch(&self, images: &[&Image]) -> Result<Vec<Latent>> {
        for im in images {
            self.check_image(im)?;
        }
        let (lh, lw, lc) = self.latent_shape();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_BATCH) {
            let planar: Vec<Vec<f64>> = chunk.iter().map(|im| im.to_planar()).collect();
            let refs: Vec<&[f64]> = planar.iter().map(Vec::as_slice).collect();
            let mut f = Forward::new(&self.net.store);
            let x = f.g.input(batch_tensor(&refs, IMAGE_CHANNELS, self.image_height, self.image_width));
            let (mean, _) = self.net.encode(&mut f, x, lc);
            let per = lc * lh * lw;
            for s in f.g.value(mean).data().chunks_exact(per) {
                out.push(Latent::new(lc, lh, lw, s.to_vec())?);
            }
        }
        Ok(out)
    }

    fn decode_batch(&self, latents: &[&Latent]) -> Result<Vec<Image>> {
        for z in latents {
            self.check_latent(z)?;
        }
        let (lh, lw, lc) = self.latent_shape();
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(INFERENCE_BATCH) {
            let refs: Vec<&[f64]> = chunk.iter().map(|z| z.data()).collect();
            let mut f = Forward::new(&self.net.store);
            let z = f.g.input(batch_tensor(&refs, lc, lh, lw));
            let y = self.net.decode(&mut f, z);
            let per = IMAGE_CHANNELS * self.image_height * self.image_width;
            for s in f.g.value(y).data().chunks_exact(per) {
                // Image::from_planar clamps to [0, 1]
                out.push(Image::from_planar(self.image_height, self.image_width, IMAGE_CHANNELS, s)?);
            }
        }
        Ok(out)
    }

    fn fingerprint(&self) -> String {
        self.weights_hash()
    }
}

/// Worst relative disagreement between the analytic gradient of
/// `L1 + kl_weight · KL` and central differences, probed at `probes` random
/// weights of a freshly initialised network on `images`.
pub fn gradient_check(images: &[Image], cfg: &CodecConfig, probes: usize, seed: u64) -> Result<f64> {
    cfg.validate()?;
    let (h, w) = check_dataset(images, cfg)?;
    let (lc, lh, lw) = cfg.latent_shape(h, w)?;
    let net = Network::build(cfg);
    let n = images.len();
    let planar: Vec<Vec<f64>> = images.iter().map(Image::to_planar).collect();
    let samples: Vec<&[f64]> = planar.iter().map(Vec::as_slice).collect();
    let target: Vec<f64> = planar.concat();
    let mut rng = seeding::rng(seed, 0x6772_6164);
    let noise: Vec<f64> = (0..n * lc * lh * lw).map(|_| StandardNormal.sample(&mut rng)).collect();
    let objective = |store: &ParamStore, want_grads: bool| {
        let mut f = Forward::new(store);
        let x = f.g.input(batch_tensor(&samples, IMAGE_CHANNELS, h, w));
        let (mean, logvar) = net.encode(&mut f, x, lc);
        let z = f.g.reparameterize(mean, logvar, noise.clone());
        let out = net.decode(&mut f, z);
        let recon = f.g.l1_to(out, target.clone());
        let kl = f.g.kl_normal(mean, logvar);
        let loss = f.g.combine(&[(recon, 1.0), (kl, cfg.kl_weight)]);
        let grads = if want_grads { f.g.backward(loss) } else { Vec::new() };
        (f.g.scalar(loss), grads)
    };
    let (_, grads) = objective(&net.store, true);
    Ok(nn::gradient_check(&net.store, &grads, probes, &mut rng, |s| objective(s, false).0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::psnr;
    use crate::protocol::toy_face;

    fn small_cfg(f: usize) -> CodecConfig {
        CodecConfig {
            downscale_factor: f,
            base_width: 8,
            ..CodecConfig::default()
        }
    }

    #[test]
    fn shape_law() {
        for f in [2, 4, 8] {
            let codec = CodecCheckpoint::untrained(&small_cfg(f), 32, 16).unwrap();
            let (img, _) = toy_face(1, 0, 32).unwrap();
            let img = Image::from_fn(32, 16, 3, |y, x, c| img.get(y, x, c)).unwrap();
            let z = codec.encode(&img).unwrap();
            assert_eq!(z.shape(), (32 / f, 16 / f, 4));
            let back = codec.decode(&z).unwrap();
            assert_eq!(back.shape(), (32, 16, 3));
        }
    }

    #[test]
    fn paper_geometry_latent_shape() {
        let cfg = CodecConfig::default();
        assert_eq!(cfg.latent_shape(512, 512).unwrap(), (4, 64, 64));
        assert_eq!(cfg.latent_shape(64, 64).unwrap(), (4, 8, 8));
        assert!(matches!(cfg.latent_shape(60, 64), Err(Error::Config(_))));
    }

    #[test]
    fn bad_factor_is_a_validation_error() {
        let cfg = CodecConfig {
            downscale_factor: 16,
            ..CodecConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Validation { .. })));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let codec = CodecCheckpoint::untrained(&small_cfg(8), 32, 32).unwrap();
        let img = Image::filled(16, 16, 3, 0.5).unwrap();
        assert!(matches!(codec.encode(&img), Err(Error::Config(_))));
        assert!(matches!(codec.decode(&Latent::zeros(4, 2, 2)), Err(Error::Config(_))));
        let imgs = vec![Image::filled(16, 16, 3, 0.5).unwrap(), Image::filled(32, 32, 3, 0.5).unwrap()];
        assert!(matches!(train_codec(&imgs, &small_cfg(8)), Err(Error::Config(_))));
        assert!(matches!(train_codec(&[], &small_cfg(8)), Err(Error::Config(_))));
    }

    #[test]
    fn zero_latent_decodes_in_range_and_deterministically() {
        let codec = CodecCheckpoint::untrained(&small_cfg(8), 32, 32).unwrap();
        let z = Latent::zeros(4, 4, 4);
        let a = codec.decode(&z).unwrap();
        let b = codec.decode(&z).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let (img, _) = toy_face(2, 3, 32).unwrap();
        assert_eq!(codec.encode(&img).unwrap(), codec.encode(&img).unwrap());
    }

    #[test]
    fn batch_and_single_encode_agree() {
        let codec = CodecCheckpoint::untrained(&small_cfg(4), 16, 16).unwrap();
        let imgs: Vec<Image> = (0..3).map(|i| toy_face(5, i, 16).unwrap().0).collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let batch = codec.encode_batch(&refs).unwrap();
        for (im, z) in imgs.iter().zip(&batch) {
            let single = codec.encode(im).unwrap();
            for (a, b) in single.data().iter().zip(z.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_image_overfit() {
        let (img, _) = toy_face(3, 0, 16).unwrap();
        let cfg = CodecConfig {
            downscale_factor: 4,
            base_width: 16,
            epochs: 200,
            batch_size: 1,
            learning_rate: 3e-3,
            ..CodecConfig::default()
        };
        let codec = train_codec(std::slice::from_ref(&img), &cfg).unwrap();
        let rec = codec.decode(&codec.encode(&img).unwrap()).unwrap();
        let p = psnr(&img, &rec).unwrap();
        assert!(p >= 30.0, "psnr {p}");
        assert!(codec.history().iter().all(|e| e.kl >= 0.0));
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let imgs: Vec<Image> = (0..4).map(|i| toy_face(1, i, 16).unwrap().0).collect();
        let cfg = CodecConfig {
            downscale_factor: 4,
            base_width: 8,
            epochs: 2,
            batch_size: 2,
            ..CodecConfig::default()
        };
        let codec = train_codec(&imgs, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codec.ckpt");
        codec.save(&path).unwrap();
        let back = CodecCheckpoint::load(&path).unwrap();
        assert_eq!(back.weights_hash(), codec.weights_hash());
        assert_eq!(back.train_fingerprint(), codec.train_fingerprint());
        assert_eq!(back.history(), codec.history());
        let z = codec.encode(&imgs[0]).unwrap();
        assert_eq!(back.encode(&imgs[0]).unwrap(), z);
        assert_eq!(back.decode(&z).unwrap(), codec.decode(&z).unwrap());

        let again = train_codec(&imgs, &cfg).unwrap();
        assert_eq!(again.weights_hash(), codec.weights_hash());
    }

    #[test]
    fn identity_compressor_round_trip() {
        let (img, _) = toy_face(0, 0, 16).unwrap();
        let z = IdentityCompressor.encode(&img).unwrap();
        assert_eq!(z.shape(), (16, 16, 3));
        assert_eq!(IdentityCompressor.decode(&z).unwrap(), img);
    }

    #[test]
    fn gradient_check_recon_plus_kl() {
        let cfg = CodecConfig {
            downscale_factor: 4,
            base_width: 8,
            kl_weight: 0.5,
            ..CodecConfig::default()
        };
        let imgs: Vec<Image> = (0..4).map(|i| toy_face(9, i, 16).unwrap().0).collect();
        let worst = gradient_check(&imgs, &cfg, 24, 4).unwrap();
        assert!(worst < 1e-3, "worst relative error {worst}");
    }
}
