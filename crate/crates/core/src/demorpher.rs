//! Latent conditional GAN that splits a morph latent into an ordered pair of
//! constituent latents.
//!
//! The generator is a UNet over the codec latent with self-attention at the
//! bottleneck; it maps `c` channels to `2c` and the two halves are the ordered
//! outputs. The discriminator scores `(morph, first, second)` triplets.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::imaging::{kurtosis_of, Image, Tensor};
use crate::latentcodec::{Compressor, IdentityCompressor, Latent, IDENTITY_FINGERPRINT};
use crate::nn::kernels::{self, bce_with_logits};
use crate::nn::{
    self, batch_tensor, Adam, AdamConfig, Conv2d, Forward, GroupNorm, ParamStore, ResBlock, SelfAttention, Var, NORM_GROUPS,
};
use crate::protocol::Manifest;
use crate::seeding;

pub const CHECKPOINT_KIND: &str = "demorpher";
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Latent L1 plus the kurtosis term.
    L1Kurt,
    /// Latent L1 only (kurtosis weight forced to zero).
    L1Only,
    /// Everything in pixel space: the compressor is the identity.
    L1Image,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1_kurt" => Ok(LossVariant::L1Kurt),
            "l1_only" => Ok(LossVariant::L1Only),
            "l1_image" => Ok(LossVariant::L1Image),
            _ => Err(Error::validation(
                "loss_variant",
                format!("expected l1_kurt, l1_only or l1_image, got `{s}`"),
            )),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossVariant::L1Kurt => "l1_kurt",
            LossVariant::L1Only => "l1_only",
            LossVariant::L1Image => "l1_image",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemorphConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub dropout: f64,
    pub swap_prob: f64,
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub batch_size: usize,
    /// Channel width of each generator level; one entry per resolution.
    pub generator_widths: Vec<usize>,
    pub discriminator_width: usize,
    /// Adds `(zx, zx)` to the generator output so training starts from
    /// replication and learns the two deviations.
    pub residual: bool,
}

/// Epoch counts at paper scale (the default) and at desk scale.
pub const PAPER_EPOCHS: usize = 300;
pub const DESK_EPOCHS: usize = 30;
/// Learning rate of the desk schedule; 30 epochs at the paper's 1e-4 leave
/// the generator undertrained.
pub const DESK_LEARNING_RATE: f64 = 3e-4;

impl Default for DemorphConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.5,
            epochs: PAPER_EPOCHS,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            dropout: 0.1,
            swap_prob: 0.5,
            seed: 0,
            loss_variant: LossVariant::L1Kurt,
            batch_size: 8,
            generator_widths: vec![32, 64, 64],
            discriminator_width: 32,
            residual: false,
        }
    }
}

impl DemorphConfig {
    /// Desk-scale preset: the short schedule with a higher learning rate
    /// and the residual generator head.
    pub fn desk() -> Self {
        Self {
            epochs: DESK_EPOCHS,
            learning_rate: DESK_LEARNING_RATE,
            residual: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.swap_prob) {
            return Err(Error::validation("swap_prob", format!("must lie in [0, 1], got {}", self.swap_prob)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout", format!("must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be finite and positive"));
        }
        for (field, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(field, format!("must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if self.generator_widths.is_empty() || self.generator_widths.contains(&0) {
            return Err(Error::validation("generator_widths", "needs at least one positive width"));
        }
        if self.discriminator_width == 0 {
            return Err(Error::validation("discriminator_width", "must be positive"));
        }
        Ok(())
    }

    /// The kurtosis weight actually applied for the chosen variant.
    pub fn effective_lambda2(&self) -> f64 {
        match self.loss_variant {
            LossVariant::L1Only => 0.0,
            _ => self.lambda2,
        }
    }

    /// Checks that a `(c, h, w)` latent fits the generator and discriminator.
    pub fn check_latent_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<()> {
        let down = 1usize << (self.generator_widths.len() - 1);
        if c == 0 || h % down != 0 || w % down != 0 || h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!(
                "latent {c}x{h}x{w} does not fit {} generator levels and the 4-block discriminator",
                self.generator_widths.len()
            )));
        }
        Ok(())
    }
}

/// Ordered output or ground-truth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub first: Latent,
    pub second: Latent,
}

impl LatentPair {
    pub fn new(first: Latent, second: Latent) -> Result<Self> {
        if first.shape() != second.shape() {
            return Err(Error::Dimension(format!(
                "pair members differ in shape: {:?} vs {:?}",
                first.shape(),
                second.shape()
            )));
        }
        Ok(Self { first, second })
    }

    pub fn swapped(&self) -> Self {
        Self {
            first: self.second.clone(),
            second: self.first.clone(),
        }
    }

    fn concat(&self) -> Vec<f64> {
        let mut v = self.first.data().to_vec();
        v.extend_from_slice(self.second.data());
        v
    }

    fn split(c: usize, h: usize, w: usize, data: &[f64]) -> Result<Self> {
        let per = c * h * w;
        Self::new(
            Latent::new(c, h, w, data[..per].to_vec())?,
            Latent::new(c, h, w, data[per..2 * per].to_vec())?,
        )
    }
}

/// `(loss_D, loss_G)` from patch logits: BCE with logits, mean over patches.
pub fn cgan_loss(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64)> {
    if d_real.len() != d_fake.len() || d_real.is_empty() {
        return Err(Error::Dimension(format!(
            "logit maps differ: {} vs {}",
            d_real.len(),
            d_fake.len()
        )));
    }
    let mean = |v: &[f64], y: f64| v.iter().map(|&z| bce_with_logits(z, y)).sum::<f64>() / v.len() as f64;
    let loss_d = 0.5 * (mean(d_real, 1.0) + mean(d_fake, 0.0));
    let loss_g = mean(d_fake, 1.0);
    Ok((loss_d, loss_g))
}

fn check_pairs(o: &LatentPair, i: &LatentPair) -> Result<()> {
    if o.first.shape() != i.first.shape() || o.second.shape() != i.second.shape() {
        return Err(Error::Dimension(format!(
            "output pair {:?} vs target pair {:?}",
            o.first.shape(),
            i.first.shape()
        )));
    }
    Ok(())
}

/// Mean absolute difference over both members jointly.
pub fn l1_loss(o: &LatentPair, i: &LatentPair) -> Result<f64> {
    check_pairs(o, i)?;
    let (a, b) = (o.concat(), i.concat());
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64)
}

/// `Σ_j |Kurt(o_j) − Kurt(i_j)|` over the two members.
pub fn kurtosis_loss(o: &LatentPair, i: &LatentPair) -> Result<f64> {
    check_pairs(o, i)?;
    let first = (kurtosis_of(o.first.data())? - kurtosis_of(i.first.data())?).abs();
    let second = (kurtosis_of(o.second.data())? - kurtosis_of(i.second.data())?).abs();
    Ok(first + second)
}

/// Generator-side loss components of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub adversarial: f64,
    pub l1: f64,
    pub kurtosis: f64,
}

/// `L_G + λ1·L1 + λ2·L_kurt`.
pub fn total_loss(parts: LossParts, lambda1: f64, lambda2: f64) -> f64 {
    parts.adversarial + lambda1 * parts.l1 + lambda2 * parts.kurtosis
}

struct Generator {
    conv_in: Conv2d,
    downs: Vec<(ResBlock, Option<Conv2d>)>,
    mid: (ResBlock, SelfAttention, ResBlock),
    ups: Vec<ResBlock>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl Generator {
    fn build(store: &mut ParamStore, c: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let s = store;
        let levels = widths.len();
        let conv_in = Conv2d::same(s, "gen.conv_in", c, widths[0], rng);
        let mut downs = Vec::with_capacity(levels);
        let mut prev = widths[0];
        for (l, &w) in widths.iter().enumerate() {
            let res = ResBlock::new(s, &format!("gen.down{l}.res"), prev, w, rng);
            let down = (l + 1 < levels).then(|| Conv2d::down(s, &format!("gen.down{l}.down"), w, w, rng));
            downs.push((res, down));
            prev = w;
        }
        let deep = widths[levels - 1];
        let mid = (
            ResBlock::new(s, "gen.mid.res1", deep, deep, rng),
            SelfAttention::new(s, "gen.mid.attn", deep, rng),
            ResBlock::new(s, "gen.mid.res2", deep, deep, rng),
        );
        let mut ups = Vec::with_capacity(levels);
        let mut incoming = deep;
        for l in (0..levels).rev() {
            ups.push(ResBlock::new(s, &format!("gen.up{l}.res"), incoming + widths[l], widths[l], rng));
            incoming = widths[l];
        }
        Self {
            conv_in,
            downs,
            mid,
            ups,
            norm_out: GroupNorm::new(s, "gen.norm_out", widths[0], NORM_GROUPS),
            conv_out: Conv2d::same(s, "gen.conv_out", widths[0], 2 * c, rng),
        }
    }

    fn forward(&self, f: &mut Forward, x: Var, residual: bool) -> Var {
        let mut h = self.conv_in.forward(f, x);
        let mut skips = Vec::with_capacity(self.downs.len());
        for (res, down) in &self.downs {
            h = res.forward(f, h);
            skips.push(h);
            if let Some(d) = down {
                h = d.forward(f, h);
            }
        }
        h = self.mid.0.forward(f, h);
        h = self.mid.1.forward(f, h);
        h = self.mid.2.forward(f, h);
        for (k, up) in self.ups.iter().enumerate() {
            let skip = skips.pop().expect("one skip per level");
            h = f.g.concat(&[h, skip]);
            h = up.forward(f, h);
            if k + 1 < self.ups.len() {
                h = f.g.upsample2x(h);
            }
        }
        let h = self.norm_out.forward(f, h);
        let h = f.g.silu(h);
        let o = self.conv_out.forward(f, h);
        if residual {
            let base = f.g.concat(&[x, x]);
            f.g.add(o, base)
        } else {
            o
        }
    }
}

/// Four conv blocks (instance norm from the second on) and a 1-channel head.
struct Discriminator {
    blocks: Vec<(Conv2d, Option<GroupNorm>)>,
    head: Conv2d,
}

impl Discriminator {
    fn build(store: &mut ParamStore, c: usize, width: usize, spatial: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = store;
        let d = width;
        let specs = [(3 * c, d, 4, 2, 1), (d, 2 * d, 4, 2, 1), (2 * d, 4 * d, 3, 1, 1), (4 * d, 4 * d, 3, 1, 1)];
        let blocks = specs
            .iter()
            .enumerate()
            .map(|(b, &(ci, co, k, stride, pad))| {
                let conv = Conv2d::new(s, &format!("disc.block{b}.conv"), ci, co, k, stride, pad, rng);
                let norm = (b > 0).then(|| GroupNorm::new(s, &format!("disc.block{b}.norm"), co, co));
                (conv, norm)
            })
            .collect();
        let head_k = (spatial / 4).clamp(1, 2);
        let head = Conv2d::new(s, "disc.head", 4 * d, 1, head_k, 1, 0, rng);
        Self { blocks, head }
    }

    fn forward(&self, f: &mut Forward, x: Var) -> Var {
        let mut h = x;
        for (conv, norm) in &self.blocks {
            h = conv.forward(f, h);
            if let Some(n) = norm {
                h = n.forward(f, h);
            }
            h = f.g.leaky_relu(h, LEAKY_SLOPE);
        }
        self.head.forward(f, h)
    }
}

/// Generator and discriminator sharing one parameter store; generator
/// parameters come first.
struct Model {
    store: ParamStore,
    gen: Generator,
    disc: Discriminator,
    gen_params: usize,
    residual: bool,
}

impl Model {
    fn build(cfg: &DemorphConfig, (c, h, _w): (usize, usize, usize)) -> Self {
        let mut rng = seeding::rng(cfg.seed, 0x0064_656d_6f72_7068);
        let mut store = ParamStore::new();
        let gen = Generator::build(&mut store, c, &cfg.generator_widths, &mut rng);
        let gen_params = store.len();
        let disc = Discriminator::build(&mut store, c, cfg.discriminator_width, h, &mut rng);
        Self {
            store,
            gen,
            disc,
            gen_params,
            residual: cfg.residual,
        }
    }
}

/// A training batch laid out as contiguous `N × C × H × W` buffers.
struct GenBatch<'a> {
    zx: &'a [f64],
    /// `N × 2C × H × W`, already in the (possibly swapped) target order.
    target: &'a [f64],
    /// Kurtosis of each target member, `2N` values.
    target_kurt: &'a [f64],
    n: usize,
    shape: (usize, usize, usize),
}

/// Generator objective `L_G + λ1·L1 + λ2·L_kurt` evaluated with `store`.
/// Per-parameter gradients as returned by the graph's backward pass.
type Grads = Vec<(usize, Vec<f64>)>;

/// Returns the components, the generated pairs and the generator gradients.
fn generator_objective(
    model: &Model,
    store: &ParamStore,
    b: &GenBatch,
    lambda1: f64,
    lambda2: f64,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> (LossParts, Vec<f64>, Grads) {
    let (c, h, w) = b.shape;
    let mut f = match dropout {
        Some((rate, rng)) => Forward::training(store, rate, rng),
        None => Forward::new(store),
    };
    let x = f.g.input(Tensor::from_raw(vec![b.n, c, h, w], b.zx.to_vec()));
    let o = model.gen.forward(&mut f, x, model.residual);
    let trip = f.g.concat(&[x, o]);
    let d_fake = model.disc.forward(&mut f, trip);
    let adv = f.g.bce_logits(d_fake, 1.0);
    let l1 = f.g.l1_to(o, b.target.to_vec());
    let kurt = f.g.kurtosis_gap(o, b.target_kurt.to_vec(), b.n);
    let total = f.g.combine(&[(adv, 1.0), (l1, lambda1), (kurt, lambda2)]);
    let grads = f
        .g
        .backward(total)
        .into_iter()
        .filter(|(i, _)| *i < model.gen_params)
        .collect();
    let parts = LossParts {
        adversarial: f.g.scalar(adv),
        l1: f.g.scalar(l1),
        kurtosis: f.g.scalar(kurt),
    };
    (parts, f.g.value(o).data().to_vec(), grads)
}

/// Global affine standardisation of latents. The networks and losses work
/// on `(z − mean) / scale`; a single scalar pair leaves kurtosis unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentNormalizer {
    pub mean: f64,
    pub scale: f64,
}

impl Default for LatentNormalizer {
    fn default() -> Self {
        Self { mean: 0.0, scale: 1.0 }
    }
}

impl LatentNormalizer {
    /// Mean and standard deviation over every value of the morph latents.
    pub fn fit(morphs: &[Latent]) -> Self {
        let n: usize = morphs.iter().map(|z| z.data().len()).sum();
        if n == 0 {
            return Self::default();
        }
        let mean = morphs.iter().flat_map(|z| z.data()).sum::<f64>() / n as f64;
        let var = morphs.iter().flat_map(|z| z.data()).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, scale }
    }

    pub fn forward(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| (x - self.mean) / self.scale).collect()
    }

    pub fn inverse(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| x * self.scale + self.mean).collect()
    }
}

/// One epoch of demorpher training, averaged over batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTelemetry {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub l1: f64,
    pub kurt: f64,
}

impl EpochTelemetry {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("telemetry serialises")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DemorphMeta {
    config: DemorphConfig,
    latent_shape: (usize, usize, usize),
    normalizer: LatentNormalizer,
    codec_fingerprint: String,
    history: Vec<EpochTelemetry>,
}

/// Trained generator and discriminator plus the codec they belong to.
pub struct DemorphCheckpoint {
    config: DemorphConfig,
    /// `(channels, height, width)` of the latents the model works on.
    latent_shape: (usize, usize, usize),
    normalizer: LatentNormalizer,
    codec_fingerprint: String,
    history: Vec<EpochTelemetry>,
    model: Model,
}

impl std::fmt::Debug for DemorphCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DemorphCheckpoint")
            .field("config", &self.config)
            .field("latent_shape", &self.latent_shape)
            .field("codec_fingerprint", &self.codec_fingerprint)
            .field("parameters", &self.model.store.scalar_count())
            .finish()
    }
}

impl DemorphCheckpoint {
    /// Freshly initialised networks for latents of shape `(c, h, w)`.
    pub fn untrained(cfg: &DemorphConfig, latent_shape: (usize, usize, usize), codec_fingerprint: &str) -> Result<Self> {
        cfg.validate()?;
        cfg.check_latent_shape(latent_shape)?;
        let mut model = Model::build(cfg, latent_shape);
        model.store.round_to_f32();
        Ok(Self {
            config: cfg.clone(),
            latent_shape,
            normalizer: LatentNormalizer::default(),
            codec_fingerprint: codec_fingerprint.to_string(),
            history: Vec::new(),
            model,
        })
    }

    pub fn config(&self) -> &DemorphConfig {
        &self.config
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        self.latent_shape
    }

    pub fn normalizer(&self) -> LatentNormalizer {
        self.normalizer
    }

    pub fn codec_fingerprint(&self) -> &str {
        &self.codec_fingerprint
    }

    pub fn history(&self) -> &[EpochTelemetry] {
        &self.history
    }

    pub fn weights_hash(&self) -> String {
        self.model.store.fingerprint()
    }

    fn check_latent(&self, z: &Latent) -> Result<()> {
        let (c, h, w) = self.latent_shape;
        if z.shape() != (h, w, c) {
            return Err(Error::Config(format!(
                "demorpher expects {c}x{h}x{w} latents, got {:?} (h, w, c)",
                z.shape()
            )));
        }
        Ok(())
    }

    /// Runs the generator. With `train_rng` set, dropout is active and
    /// draws its masks from that generator.
    pub fn generator_forward(&self, zx: &[&Latent], train_rng: Option<&mut ChaCha8Rng>) -> Result<Vec<LatentPair>> {
        for z in zx {
            self.check_latent(z)?;
        }
        let (c, h, w) = self.latent_shape;
        let normed: Vec<Vec<f64>> = zx.iter().map(|z| self.normalizer.forward(z.data())).collect();
        let refs: Vec<&[f64]> = normed.iter().map(Vec::as_slice).collect();
        let mut f = match train_rng {
            Some(rng) => Forward::training(&self.model.store, self.config.dropout, rng),
            None => Forward::new(&self.model.store),
        };
        let x = f.g.input(batch_tensor(&refs, c, h, w));
        let o = self.model.gen.forward(&mut f, x, self.model.residual);
        f.g.value(o)
            .data()
            .chunks_exact(2 * c * h * w)
            .map(|s| LatentPair::split(c, h, w, &self.normalizer.inverse(s)))
            .collect()
    }

    /// Inference pass for a single morph latent.
    pub fn generate(&self, zx: &Latent) -> Result<LatentPair> {
        Ok(self.generator_forward(&[zx], None)?.remove(0))
    }

    /// Patch logits for the triplet `(zx, pair.first, pair.second)`.
    pub fn discriminator_forward(&self, zx: &Latent, pair: &LatentPair) -> Result<Vec<f64>> {
        for z in [zx, &pair.first, &pair.second] {
            self.check_latent(z)?;
        }
        let (c, h, w) = self.latent_shape;
        let mut triplet = zx.data().to_vec();
        triplet.extend(pair.concat());
        let triplet = self.normalizer.forward(&triplet);
        let mut f = Forward::new(&self.model.store);
        let x = f.g.input(batch_tensor(&[&triplet], 3 * c, h, w));
        let d = self.model.disc.forward(&mut f, x);
        Ok(f.g.value(d).data().to_vec())
    }

    /// Shape `(channels, height, width)` of the discriminator output.
    pub fn discriminator_map_shape(&self) -> Result<(usize, usize, usize)> {
        let (c, h, w) = self.latent_shape;
        let mut f = Forward::new(&self.model.store);
        let x = f.g.input(batch_tensor(&[&vec![0.0; 3 * c * h * w]], 3 * c, h, w));
        let d = self.model.disc.forward(&mut f, x);
        let s = f.g.shape(d);
        Ok((s[1], s[2], s[3]))
    }

    pub fn to_container(&self) -> Container {
        let meta = DemorphMeta {
            config: self.config.clone(),
            latent_shape: self.latent_shape,
            normalizer: self.normalizer,
            codec_fingerprint: self.codec_fingerprint.clone(),
            history: self.history.clone(),
        };
        Container {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::to_value(meta).expect("demorpher metadata serialises"),
            tensors: self.model.store.to_named(),
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let meta: DemorphMeta = serde_json::from_value(c.expect_kind(CHECKPOINT_KIND)?.clone())
            .map_err(|e| Error::Format(format!("demorpher metadata: {e}")))?;
        meta.config.validate()?;
        meta.config.check_latent_shape(meta.latent_shape)?;
        let mut model = Model::build(&meta.config, meta.latent_shape);
        model.store.assign_from(c.tensors)?;
        Ok(Self {
            config: meta.config,
            latent_shape: meta.latent_shape,
            normalizer: meta.normalizer,
            codec_fingerprint: meta.codec_fingerprint,
            history: meta.history,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    /// Checks that `compressor` is the one this model was trained against.
    pub fn check_compressor(&self, compressor: &dyn Compressor) -> Result<()> {
        let fp = compressor.fingerprint();
        if fp != self.codec_fingerprint {
            return Err(Error::Config(format!(
                "demorpher was trained against codec {}, got {}",
                short(&self.codec_fingerprint),
                short(&fp)
            )));
        }
        Ok(())
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

/// Encoded training triplets: morph latent and the ordered ground truth.
#[derive(Debug, Clone, Default)]
pub struct LatentDataset {
    pub morphs: Vec<Latent>,
    pub targets: Vec<LatentPair>,
}

impl LatentDataset {
    pub fn len(&self) -> usize {
        self.morphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.morphs.is_empty()
    }

    /// `(c, h, w)` of the latents, if any.
    pub fn latent_shape(&self) -> Option<(usize, usize, usize)> {
        self.morphs.first().map(|z| (z.channels, z.height, z.width))
    }
}

/// Loads the manifest's images and encodes them with `compressor`.
pub fn encode_manifest(manifest: &Manifest, compressor: &dyn Compressor) -> Result<LatentDataset> {
    const CHUNK: usize = 32;
    let chunks: Vec<_> = manifest.records.chunks(CHUNK).collect();
    let parts: Vec<(Vec<Latent>, Vec<LatentPair>)> = chunks
        .par_iter()
        .map(|recs| {
            let mut images = Vec::with_capacity(3 * recs.len());
            for r in *recs {
                for p in [&r.morph_path, &r.image_a, &r.image_b] {
                    images.push(Image::load_png(manifest.resolve(p))?);
                }
            }
            let refs: Vec<&Image> = images.iter().collect();
            let z = compressor.encode_batch(&refs)?;
            let mut morphs = Vec::with_capacity(recs.len());
            let mut targets = Vec::with_capacity(recs.len());
            for t in z.chunks_exact(3) {
                morphs.push(t[0].clone());
                targets.push(LatentPair::new(t[1].clone(), t[2].clone())?);
            }
            Ok((morphs, targets))
        })
        .collect::<Result<_>>()?;
    let mut set = LatentDataset::default();
    for (m, t) in parts {
        set.morphs.extend(m);
        set.targets.extend(t);
    }
    Ok(set)
}

/// The compressor a loss variant trains and infers with.
pub fn compressor_for(variant: LossVariant, codec: &dyn Compressor) -> &dyn Compressor {
    match variant {
        LossVariant::L1Image => &IdentityCompressor,
        _ => codec,
    }
}

/// Trains the demorpher on a manifest of morphs.
pub fn train(manifest: &Manifest, codec: &dyn Compressor, cfg: &DemorphConfig) -> Result<DemorphCheckpoint> {
    train_with(manifest, codec, cfg, |_| {})
}

/// [`train`] with a callback receiving each epoch's telemetry.
pub fn train_with(
    manifest: &Manifest,
    codec: &dyn Compressor,
    cfg: &DemorphConfig,
    on_epoch: impl FnMut(&EpochTelemetry),
) -> Result<DemorphCheckpoint> {
    cfg.validate()?;
    let compressor = compressor_for(cfg.loss_variant, codec);
    let data = encode_manifest(manifest, compressor)?;
    train_on_latents(&data, &compressor.fingerprint(), cfg, on_epoch)
}

/// Training loop over pre-encoded latents.
pub fn train_on_latents(
    data: &LatentDataset,
    codec_fingerprint: &str,
    cfg: &DemorphConfig,
    mut on_epoch: impl FnMut(&EpochTelemetry),
) -> Result<DemorphCheckpoint> {
    cfg.validate()?;
    let shape = data
        .latent_shape()
        .ok_or_else(|| Error::Config("demorpher training needs at least one morph".into()))?;
    let (c, h, w) = shape;
    for (z, t) in data.morphs.iter().zip(&data.targets) {
        for m in [z, &t.first, &t.second] {
            if m.shape() != (h, w, c) {
                return Err(Error::Config(format!(
                    "latent shapes disagree: {:?} vs {:?}",
                    m.shape(),
                    (h, w, c)
                )));
            }
        }
    }
    cfg.check_latent_shape(shape)?;
    let mut ckpt = DemorphCheckpoint {
        config: cfg.clone(),
        latent_shape: shape,
        normalizer: LatentNormalizer::fit(&data.morphs),
        codec_fingerprint: codec_fingerprint.to_string(),
        history: Vec::new(),
        model: Model::build(cfg, shape),
    };
    let norm = ckpt.normalizer;
    let morphs: Vec<Vec<f64>> = data.morphs.iter().map(|z| norm.forward(z.data())).collect();
    let targets: Vec<(Vec<f64>, Vec<f64>)> = data
        .targets
        .iter()
        .map(|t| (norm.forward(t.first.data()), norm.forward(t.second.data())))
        .collect();
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: 1e-8,
    };
    let mut adam_g = Adam::new(&ckpt.model.store, adam_cfg);
    let mut adam_d = Adam::new(&ckpt.model.store, adam_cfg);
    let mut rng = seeding::rng(cfg.seed, 0x0074_7261_696e);
    let lambda2 = cfg.effective_lambda2();
    let n = data.len();
    let per = c * h * w;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let bn = chunk.len();
            let mut zx = Vec::with_capacity(bn * per);
            let mut target = Vec::with_capacity(bn * 2 * per);
            for &k in chunk {
                zx.extend_from_slice(&morphs[k]);
                let t = &targets[k];
                let (a, b) = if rng.random::<f64>() < cfg.swap_prob {
                    (&t.1, &t.0)
                } else {
                    (&t.0, &t.1)
                };
                target.extend_from_slice(a);
                target.extend_from_slice(b);
            }
            let target_kurt: Vec<f64> = target
                .chunks_exact(per)
                .map(crate::nn::kernels::kurtosis_row)
                .collect();

            // generator step against the current discriminator
            let model = &ckpt.model;
            let batch = GenBatch {
                zx: &zx,
                target: &target,
                target_kurt: &target_kurt,
                n: bn,
                shape,
            };
            let (parts, fake, g_grads) = generator_objective(
                model,
                &model.store,
                &batch,
                cfg.lambda1,
                lambda2,
                Some((cfg.dropout, &mut rng)),
            );

            // discriminator step on real and (detached) fake triplets
            let (loss_d, d_grads) = {
                let mut real = Vec::with_capacity(bn * 3 * per);
                let mut fake_t = Vec::with_capacity(bn * 3 * per);
                for s in 0..bn {
                    let z = &zx[s * per..(s + 1) * per];
                    real.extend_from_slice(z);
                    real.extend_from_slice(&target[s * 2 * per..(s + 1) * 2 * per]);
                    fake_t.extend_from_slice(z);
                    fake_t.extend_from_slice(&fake[s * 2 * per..(s + 1) * 2 * per]);
                }
                let mut f = Forward::new(&model.store);
                let xr = f.g.input(Tensor::from_raw(vec![bn, 3 * c, h, w], real));
                let xf = f.g.input(Tensor::from_raw(vec![bn, 3 * c, h, w], fake_t));
                let dr = model.disc.forward(&mut f, xr);
                let df = model.disc.forward(&mut f, xf);
                let lr_ = f.g.bce_logits(dr, 1.0);
                let lf = f.g.bce_logits(df, 0.0);
                let loss = f.g.combine(&[(lr_, 0.5), (lf, 0.5)]);
                let grads: Vec<_> = f
                    .g
                    .backward(loss)
                    .into_iter()
                    .filter(|(i, _)| *i >= model.gen_params)
                    .collect();
                (f.g.scalar(loss), grads)
            };

            let values = [loss_d, parts.adversarial, parts.l1, parts.kurtosis];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training {
                    step,
                    reason: format!(
                        "non-finite loss (D {loss_d}, G {}, l1 {}, kurt {})",
                        parts.adversarial, parts.l1, parts.kurtosis
                    ),
                });
            }
            adam_g.apply(&mut ckpt.model.store, &g_grads);
            adam_d.apply(&mut ckpt.model.store, &d_grads);
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
            batches += 1;
            step += 1;
        }
        let b = batches.max(1) as f64;
        let t = EpochTelemetry {
            epoch,
            loss_d: sums[0] / b,
            loss_g: sums[1] / b,
            l1: sums[2] / b,
            kurt: sums[3] / b,
        };
        log::info!(
            "demorpher epoch {epoch}: D {:.4} G {:.4} l1 {:.4} kurt {:.4}",
            t.loss_d,
            t.loss_g,
            t.l1,
            t.kurt
        );
        on_epoch(&t);
        ckpt.history.push(t);
    }
    ckpt.model.store.round_to_f32();
    Ok(ckpt)
}

/// Splits a morph image into two face images: encode, generate, decode.
pub fn demorph(x: &Image, compressor: &dyn Compressor, ckpt: &DemorphCheckpoint) -> Result<(Image, Image)> {
    Ok(demorph_batch(&[x], compressor, ckpt)?.remove(0))
}

pub fn demorph_batch(
    xs: &[&Image],
    compressor: &dyn Compressor,
    ckpt: &DemorphCheckpoint,
) -> Result<Vec<(Image, Image)>> {
    let compressor = compressor_for(ckpt.config.loss_variant, compressor);
    ckpt.check_compressor(compressor)?;
    let zs = compressor.encode_batch(xs)?;
    let refs: Vec<&Latent> = zs.iter().collect();
    let pairs = ckpt.generator_forward(&refs, None)?;
    let mut flat = Vec::with_capacity(2 * pairs.len());
    for p in &pairs {
        flat.push(&p.first);
        flat.push(&p.second);
    }
    let images = compressor.decode_batch(&flat)?;
    let mut it = images.into_iter();
    let mut out = Vec::with_capacity(pairs.len());
    while let (Some(a), Some(b)) = (it.next(), it.next()) {
        out.push((a, b));
    }
    Ok(out)
}

/// Fingerprint recorded for pixel-space models.
pub fn is_pixel_space(ckpt: &DemorphCheckpoint) -> bool {
    ckpt.codec_fingerprint == IDENTITY_FINGERPRINT
}

/// Worst relative disagreement between the analytic generator gradient of
/// the total objective (adversarial + λ1·L1 + λ2·kurtosis) and central
/// differences, probed at `probes` random generator weights of a freshly
/// initialised model. Dropout is off so the objective is deterministic.
pub fn gradient_check(data: &LatentDataset, cfg: &DemorphConfig, probes: usize, seed: u64) -> Result<f64> {
    cfg.validate()?;
    let shape = data
        .latent_shape()
        .ok_or_else(|| Error::Config("gradient check needs at least one morph".into()))?;
    cfg.check_latent_shape(shape)?;
    let (c, h, w) = shape;
    let model = Model::build(cfg, shape);
    let zx: Vec<f64> = data.morphs.iter().flat_map(|z| z.data().to_vec()).collect();
    let target: Vec<f64> = data.targets.iter().flat_map(|t| t.concat()).collect();
    let target_kurt: Vec<f64> = target.chunks_exact(c * h * w).map(kernels::kurtosis_row).collect();
    let batch = GenBatch {
        zx: &zx,
        target: &target,
        target_kurt: &target_kurt,
        n: data.len(),
        shape,
    };
    let (l1, l2) = (cfg.lambda1, cfg.effective_lambda2());
    let objective = |s: &ParamStore| {
        let (p, _, g) = generator_objective(&model, s, &batch, l1, l2, None);
        (total_loss(p, l1, l2), g)
    };
    let (_, grads) = objective(&model.store);
    let mut rng = seeding::rng(seed, 0x6772_6164);
    Ok(nn::gradient_check(&model.store, &grads, probes, &mut rng, |s| objective(s).0))
}
