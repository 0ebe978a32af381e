//! Minimal neural-network toolkit: a differentiable [`Graph`], named
//! parameter storage, Adam, and the convolutional building blocks shared by
//! the latent codec and the demorphing GAN.

pub mod graph;
pub mod kernels;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::Tensor;

pub use graph::{Graph, Var};

/// Named, ordered parameter tensors of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Rounds every weight to the nearest `f32`, the precision of checkpoint files.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// SHA-256 over names, shapes and little-endian `f64` bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Replaces the values of a store with tensors loaded by name, checking
    /// that every name and shape lines up.
    pub fn assign_from(&mut self, loaded: Vec<(String, Tensor)>) -> Result<()> {
        if loaded.len() != self.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, network expects {}",
                loaded.len(),
                self.len()
            )));
        }
        for (i, (name, t)) in loaded.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::Format(format!(
                    "tensor {i}: found `{name}` {:?}, expected `{}` {:?}",
                    t.shape(),
                    self.names[i],
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &[(usize, Vec<f64>)]) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (idx, g) in grads {
            let (m, v) = (&mut self.m[*idx], &mut self.v[*idx]);
            let w = store.tensors[*idx].data_mut();
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// One forward pass: the graph plus the parameter leaves registered in it.
pub struct Forward<'s, 'r> {
    pub g: Graph,
    params: Vec<Option<Var>>,
    store: &'s ParamStore,
    dropout: Option<(f64, &'r mut ChaCha8Rng)>,
}

impl<'s, 'r> Forward<'s, 'r> {
    /// Inference pass (dropout disabled).
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            g: Graph::new(),
            params: vec![None; store.len()],
            store,
            dropout: None,
        }
    }

    /// Training pass with dropout at `rate` drawn from `rng`.
    pub fn training(store: &'s ParamStore, rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        let mut f = Self::new(store);
        if rate > 0.0 {
            f.dropout = Some((rate, rng));
        }
        f
    }

    pub fn param(&mut self, i: usize) -> Var {
        if let Some(v) = self.params[i] {
            return v;
        }
        let v = self.g.param(i, self.store.tensors[i].clone());
        self.params[i] = Some(v);
        v
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, x: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return x;
        };
        let keep = 1.0 - *rate;
        let n = self.g.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.g.mul_const(x, mask)
    }
}

fn uniform_tensor(shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_raw(shape, data)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (ci * k * k) as f64;
        let bound = (3.0 / fan_in).sqrt();
        let w = store.add(format!("{name}.weight"), uniform_tensor(vec![co, ci, k, k], bound, rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(vec![co]));
        Self {
            w,
            b,
            stride,
            pad,
            in_channels: ci,
            out_channels: co,
        }
    }

    /// 3×3, stride 1, same padding.
    pub fn same(store: &mut ParamStore, name: &str, ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(store, name, ci, co, 3, 1, 1, rng)
    }

    /// 3×3, stride 2, halves the spatial size.
    pub fn down(store: &mut ParamStore, name: &str, ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(store, name, ci, co, 3, 2, 1, rng)
    }

    pub fn pointwise(store: &mut ParamStore, name: &str, ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(store, name, ci, co, 1, 1, 0, rng)
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Var {
        let w = f.param(self.w);
        let b = f.param(self.b);
        f.g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Group normalisation with per-channel affine parameters. With
/// `groups == channels` it is instance normalisation.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: usize,
    beta: usize,
    groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        let groups = largest_divisor_at_most(channels, groups);
        let gamma = store.add(format!("{name}.gamma"), Tensor::from_raw(vec![channels], vec![1.0; channels]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        Self { gamma, beta, groups }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Var {
        let gamma = f.param(self.gamma);
        let beta = f.param(self.beta);
        f.g.group_norm(x, gamma, beta, self.groups)
    }
}

fn largest_divisor_at_most(n: usize, cap: usize) -> usize {
    (1..=cap.min(n)).rev().find(|d| n.is_multiple_of(*d)).unwrap_or(1)
}

pub const NORM_GROUPS: usize = 8;

/// Pre-activation residual block: `GN → SiLU → conv → GN → SiLU → dropout → conv`
/// plus a 1×1 projection on the skip path when the width changes.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, ci: usize, co: usize, rng: &mut ChaCha8Rng) -> Self {
        let norm1 = GroupNorm::new(store, &format!("{name}.norm1"), ci, NORM_GROUPS);
        let conv1 = Conv2d::same(store, &format!("{name}.conv1"), ci, co, rng);
        let norm2 = GroupNorm::new(store, &format!("{name}.norm2"), co, NORM_GROUPS);
        let conv2 = Conv2d::same(store, &format!("{name}.conv2"), co, co, rng);
        let skip = (ci != co).then(|| Conv2d::pointwise(store, &format!("{name}.skip"), ci, co, rng));
        Self {
            norm1,
            conv1,
            norm2,
            conv2,
            skip,
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Var {
        let h = self.norm1.forward(f, x);
        let h = f.g.silu(h);
        let h = self.conv1.forward(f, h);
        let h = self.norm2.forward(f, h);
        let h = f.g.silu(h);
        let h = f.dropout(h);
        let h = self.conv2.forward(f, h);
        let s = match &self.skip {
            Some(conv) => conv.forward(f, x),
            None => x,
        };
        f.g.add(h, s)
    }
}

/// Residual single-head self-attention over spatial positions.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    norm: GroupNorm,
    q: Conv2d,
    k: Conv2d,
    v: Conv2d,
    proj: Conv2d,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm: GroupNorm::new(store, &format!("{name}.norm"), channels, NORM_GROUPS),
            q: Conv2d::pointwise(store, &format!("{name}.q"), channels, channels, rng),
            k: Conv2d::pointwise(store, &format!("{name}.k"), channels, channels, rng),
            v: Conv2d::pointwise(store, &format!("{name}.v"), channels, channels, rng),
            proj: Conv2d::pointwise(store, &format!("{name}.proj"), channels, channels, rng),
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Var {
        let h = self.norm.forward(f, x);
        let q = self.q.forward(f, h);
        let k = self.k.forward(f, h);
        let v = self.v.forward(f, h);
        let a = f.g.attention(q, k, v);
        let out = self.proj.forward(f, a);
        f.g.add(x, out)
    }
}

/// Stacks `N` planar samples of identical shape `C × H × W` into one batch tensor.
pub fn batch_tensor(samples: &[&[f64]], c: usize, h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        debug_assert_eq!(s.len(), c * h * w);
        data.extend_from_slice(s);
    }
    Tensor::from_raw(vec![samples.len(), c, h, w], data)
}

/// Worst relative error between analytic gradients and central differences
/// over `probes` randomly chosen scalars. `loss` evaluates the objective at
/// the given parameters.
pub fn gradient_check(
    store: &ParamStore,
    grads: &[(usize, Vec<f64>)],
    probes: usize,
    rng: &mut ChaCha8Rng,
    loss: impl Fn(&ParamStore) -> f64,
) -> f64 {
    const STEP: f64 = 1e-6;
    let mut store = store.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let (pi, g) = &grads[rng.random_range(0..grads.len())];
        let k = rng.random_range(0..g.len());
        let orig = store.tensor(*pi).data()[k];
        store.tensor_mut(*pi).data_mut()[k] = orig + STEP;
        let lp = loss(&store);
        store.tensor_mut(*pi).data_mut()[k] = orig - STEP;
        let lm = loss(&store);
        store.tensor_mut(*pi).data_mut()[k] = orig;
        let fd = (lp - lm) / (2.0 * STEP);
        worst = worst.max((fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6));
    }
    worst
}
