//! Reverse-mode automatic differentiation over `N × C × H × W` tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! topological order, so backpropagation walks the tape from the end.

use crate::imaging::Tensor;

use super::kernels;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Upsample2x(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        /// Per (sample, group) mean and inverse std.
        stats: Vec<(f64, f64)>,
    },
    Silu(Var),
    LeakyRelu(Var, f64),
    Add(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<f64>,
    },
    Reparam {
        mean: Var,
        logvar: Var,
        noise: Vec<f64>,
    },
    KlNormal {
        mean: Var,
        logvar: Var,
    },
    L1 {
        a: Var,
        target: Vec<f64>,
    },
    L1Pair(Var, Var),
    KurtosisGap {
        x: Var,
        targets: Vec<f64>,
        batch: usize,
    },
    BceLogits {
        x: Var,
        target: f64,
    },
    Combine(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Registers parameter `index` of the caller's store as a leaf.
    pub fn param(&mut self, index: usize, t: Tensor) -> Var {
        self.push(t, Op::Param(index))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let geom = kernels::ConvGeom::new(&xs, &ws, stride, pad);
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let shape = vec![geom.n, geom.co, geom.ho, geom.wo];
        self.push(
            Tensor::from_raw(shape, out),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        )
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * h * w * 4];
        for plane in 0..n * c {
            let ip = &src[plane * h * w..(plane + 1) * h * w];
            let op = &mut out[plane * h * w * 4..(plane + 1) * h * w * 4];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    op[y * 2 * w + xx] = ip[(y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Tensor::from_raw(vec![n, c, 2 * h, 2 * w], out), Op::Upsample2x(x))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let s = self.shape(x).to_vec();
        let (n, c) = (s[0], s[1]);
        let hw: usize = s[2..].iter().product();
        assert!(c % groups == 0, "channels {c} not divisible by {groups} groups");
        let cg = c / groups;
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = vec![0.0; xd.len()];
        let mut stats = Vec::with_capacity(n * groups);
        for ni in 0..n {
            for gi in 0..groups {
                let start = (ni * c + gi * cg) * hw;
                let chunk = &xd[start..start + cg * hw];
                let m = chunk.len() as f64;
                let mean = chunk.iter().sum::<f64>() / m;
                let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                let inv = 1.0 / (var + kernels::NORM_EPS).sqrt();
                stats.push((mean, inv));
                for ci in 0..cg {
                    let ch = gi * cg + ci;
                    let base = start + ci * hw;
                    for i in 0..hw {
                        out[base + i] = (xd[base + i] - mean) * inv * g[ch] + bt[ch];
                    }
                }
            }
        }
        self.push(
            Tensor::from_raw(s, out),
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = v.data().iter().map(|&a| a * sigmoid(a)).collect();
        self.push(Tensor::from_raw(v.shape().to_vec(), out), Op::Silu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x);
        let out = v
            .data()
            .iter()
            .map(|&a| if a > 0.0 { a } else { slope * a })
            .collect();
        self.push(Tensor::from_raw(v.shape().to_vec(), out), Op::LeakyRelu(x, slope))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(p, q)| p + q)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_raw(shape, out), Op::Add(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.scale_shift(x, s, 0.0)
    }

    /// `s · x + shift`, elementwise.
    pub fn scale_shift(&mut self, x: Var, s: f64, shift: f64) -> Var {
        let v = self.value(x);
        let out = v.data().iter().map(|a| a * s + shift).collect();
        self.push(Tensor::from_raw(v.shape().to_vec(), out), Op::Scale(x, s))
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let v = self.value(x);
        assert_eq!(v.len(), mask.len());
        let out = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        self.push(Tensor::from_raw(v.shape().to_vec(), out), Op::MulConst(x, mask))
    }

    /// Channel concatenation of `N × C_i × H × W` tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = self.shape(parts[0]).to_vec();
        let n = first[0];
        let hw: usize = first[2..].iter().product();
        let total_c: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut out = Vec::with_capacity(n * total_c * hw);
        for ni in 0..n {
            for p in parts {
                let s = self.shape(*p);
                assert_eq!(s[0], n);
                assert_eq!(s[2..].iter().product::<usize>(), hw, "concat spatial mismatch");
                let per = s[1] * hw;
                out.extend_from_slice(&self.value(*p).data()[ni * per..(ni + 1) * per]);
            }
        }
        let mut shape = first;
        shape[1] = total_c;
        self.push(Tensor::from_raw(shape, out), Op::Concat(parts.to_vec()))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.shape(x).to_vec();
        let (n, c) = (s[0], s[1]);
        assert!(start + len <= c);
        let hw: usize = s[2..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * hw);
        for ni in 0..n {
            let base = (ni * c + start) * hw;
            out.extend_from_slice(&src[base..base + len * hw]);
        }
        let mut shape = s;
        shape[1] = len;
        self.push(Tensor::from_raw(shape, out), Op::Slice { x, start })
    }

    /// Single-head dot-product attention over spatial positions. `q`, `k`, `v`
    /// are `N × C × T`-shaped (any trailing spatial layout).
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Var {
        let s = self.shape(q).to_vec();
        let (n, c) = (s[0], s[1]);
        let t: usize = s[2..].iter().product();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let scale = 1.0 / (c as f64).sqrt();
        let mut probs = vec![0.0; n * t * t];
        let mut out = vec![0.0; n * c * t];
        for ni in 0..n {
            let off = ni * c * t;
            let p = &mut probs[ni * t * t..(ni + 1) * t * t];
            for i in 0..t {
                let row = &mut p[i * t..(i + 1) * t];
                for (j, r) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        acc += qd[off + ch * t + i] * kd[off + ch * t + j];
                    }
                    *r = acc * scale;
                }
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - mx).exp();
                    z += *r;
                }
                for r in row.iter_mut() {
                    *r /= z;
                }
            }
            for ch in 0..c {
                for i in 0..t {
                    let mut acc = 0.0;
                    for j in 0..t {
                        acc += p[i * t + j] * vd[off + ch * t + j];
                    }
                    out[off + ch * t + i] = acc;
                }
            }
        }
        self.push(Tensor::from_raw(s, out), Op::Attention { q, k, v, probs })
    }

    /// `mean + exp(logvar / 2) · noise`.
    pub fn reparameterize(&mut self, mean: Var, logvar: Var, noise: Vec<f64>) -> Var {
        let m = self.value(mean).data();
        let lv = self.value(logvar).data();
        let out = m
            .iter()
            .zip(lv)
            .zip(&noise)
            .map(|((mu, l), e)| mu + (0.5 * l).exp() * e)
            .collect();
        let shape = self.shape(mean).to_vec();
        self.push(
            Tensor::from_raw(shape, out),
            Op::Reparam {
                mean,
                logvar,
                noise,
            },
        )
    }

    /// KL divergence of a diagonal Gaussian from N(0, I), averaged over all
    /// latent elements (the same normalisation as the L1 terms).
    pub fn kl_normal(&mut self, mean: Var, logvar: Var) -> Var {
        let n = self.value(mean).len() as f64;
        let m = self.value(mean).data();
        let lv = self.value(logvar).data();
        let kl = m
            .iter()
            .zip(lv)
            .map(|(mu, l)| 0.5 * (mu * mu + l.exp() - 1.0 - l))
            .sum::<f64>()
            / n;
        self.push(Tensor::from_raw(vec![1], vec![kl]), Op::KlNormal { mean, logvar })
    }

    /// Mean absolute difference from a constant target.
    pub fn l1_to(&mut self, a: Var, target: Vec<f64>) -> Var {
        let v = self.value(a).data();
        assert_eq!(v.len(), target.len(), "l1 target length mismatch");
        let loss = v.iter().zip(&target).map(|(p, q)| (p - q).abs()).sum::<f64>() / v.len() as f64;
        self.push(Tensor::from_raw(vec![1], vec![loss]), Op::L1 { a, target })
    }

    /// Mean absolute difference between two graph values.
    pub fn l1_between(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let loss = x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64;
        self.push(Tensor::from_raw(vec![1], vec![loss]), Op::L1Pair(a, b))
    }

    /// `Σ_rows |Kurt(row) − target_row|` averaged over the batch dimension.
    /// Rows are the per-sample flattenings of `x` (`N` rows) and `targets`
    /// holds one kurtosis per row.
    pub fn kurtosis_gap(&mut self, x: Var, targets: Vec<f64>, batch: usize) -> Var {
        let v = self.value(x).data();
        let rows = targets.len();
        let d = v.len() / rows;
        let mut total = 0.0;
        for (r, tgt) in targets.iter().enumerate() {
            total += (kernels::kurtosis_row(&v[r * d..(r + 1) * d]) - tgt).abs();
        }
        let loss = total / batch as f64;
        self.push(Tensor::from_raw(vec![1], vec![loss]), Op::KurtosisGap { x, targets, batch })
    }

    /// Mean binary cross-entropy of logits against a constant label.
    pub fn bce_logits(&mut self, x: Var, target: f64) -> Var {
        let v = self.value(x).data();
        let loss = v.iter().map(|&z| kernels::bce_with_logits(z, target)).sum::<f64>() / v.len() as f64;
        self.push(Tensor::from_raw(vec![1], vec![loss]), Op::BceLogits { x, target })
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|(v, c)| self.scalar(*v) * c).sum();
        self.push(Tensor::from_raw(vec![1], vec![total]), Op::Combine(terms.to_vec()))
    }

    /// Backpropagates from scalar `root` and returns `(param index, gradient)`
    /// for every parameter leaf reached, in registration order.
    pub fn backward(&self, root: Var) -> Vec<(usize, Vec<f64>)> {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.len()]);
        let mut params = Vec::new();
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Param(index) => params.push((*index, g)),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let geom = kernels::ConvGeom::new(self.shape(*x), self.shape(*w), *stride, *pad);
                    let (dx, dw, db) =
                        kernels::conv2d_backward(&geom, self.value(*x).data(), self.value(*w).data(), &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Op::Upsample2x(x) => {
                    let s = self.shape(*x);
                    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                    let mut dx = vec![0.0; n * c * h * w];
                    for plane in 0..n * c {
                        let gp = &g[plane * h * w * 4..(plane + 1) * h * w * 4];
                        let dp = &mut dx[plane * h * w..(plane + 1) * h * w];
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                dp[(y / 2) * w + xx / 2] += gp[y * 2 * w + xx];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    stats,
                } => {
                    let s = self.shape(*x);
                    let (n, c) = (s[0], s[1]);
                    let hw: usize = s[2..].iter().product();
                    let cg = c / groups;
                    let xd = self.value(*x).data();
                    let gm = self.value(*gamma).data();
                    let mut dx = vec![0.0; xd.len()];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for ni in 0..n {
                        for gi in 0..*groups {
                            let (mean, inv) = stats[ni * groups + gi];
                            let start = (ni * c + gi * cg) * hw;
                            let m = (cg * hw) as f64;
                            // dxhat = g * gamma; dx = inv/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                            let mut sum_d = 0.0;
                            let mut sum_dx = 0.0;
                            for ci in 0..cg {
                                let ch = gi * cg + ci;
                                let base = start + ci * hw;
                                for i in 0..hw {
                                    let xhat = (xd[base + i] - mean) * inv;
                                    let gv = g[base + i];
                                    dgamma[ch] += gv * xhat;
                                    dbeta[ch] += gv;
                                    let d = gv * gm[ch];
                                    sum_d += d;
                                    sum_dx += d * xhat;
                                }
                            }
                            for ci in 0..cg {
                                let ch = gi * cg + ci;
                                let base = start + ci * hw;
                                for i in 0..hw {
                                    let xhat = (xd[base + i] - mean) * inv;
                                    let d = g[base + i] * gm[ch];
                                    dx[base + i] = inv * (d - sum_d / m - xhat * sum_dx / m);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::Silu(x) => {
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&a, gv)| {
                            let s = sigmoid(a);
                            gv * (s + a * s * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::LeakyRelu(x, slope) => {
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&a, gv)| if a > 0.0 { *gv } else { slope * gv })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale(x, s) => {
                    accumulate(&mut grads, *x, g.iter().map(|v| v * s).collect());
                }
                Op::MulConst(x, mask) => {
                    accumulate(&mut grads, *x, g.iter().zip(mask).map(|(v, m)| v * m).collect());
                }
                Op::Concat(parts) => {
                    let n = node.value.shape()[0];
                    let hw: usize = node.value.shape()[2..].iter().product();
                    let total_c = node.value.shape()[1];
                    let mut offset = 0;
                    for p in parts {
                        let c = self.shape(*p)[1];
                        let mut dp = Vec::with_capacity(n * c * hw);
                        for ni in 0..n {
                            let base = (ni * total_c + offset) * hw;
                            dp.extend_from_slice(&g[base..base + c * hw]);
                        }
                        accumulate(&mut grads, *p, dp);
                        offset += c;
                    }
                }
                Op::Slice { x, start } => {
                    let s = self.shape(*x);
                    let (n, c) = (s[0], s[1]);
                    let hw: usize = s[2..].iter().product();
                    let len = node.value.shape()[1];
                    let mut dx = vec![0.0; n * c * hw];
                    for ni in 0..n {
                        let dst = (ni * c + start) * hw;
                        let src = ni * len * hw;
                        dx[dst..dst + len * hw].copy_from_slice(&g[src..src + len * hw]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention { q, k, v, probs } => {
                    let s = self.shape(*q);
                    let (n, c) = (s[0], s[1]);
                    let t: usize = s[2..].iter().product();
                    let scale = 1.0 / (c as f64).sqrt();
                    let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                    let mut dq = vec![0.0; qd.len()];
                    let mut dk = vec![0.0; kd.len()];
                    let mut dv = vec![0.0; vd.len()];
                    let mut dp = vec![0.0; t * t];
                    for ni in 0..n {
                        let off = ni * c * t;
                        let p = &probs[ni * t * t..(ni + 1) * t * t];
                        // out[ch,i] = Σ_j p[i,j] v[ch,j]
                        for i in 0..t {
                            for j in 0..t {
                                let mut acc = 0.0;
                                for ch in 0..c {
                                    acc += g[off + ch * t + i] * vd[off + ch * t + j];
                                    dv[off + ch * t + j] += p[i * t + j] * g[off + ch * t + i];
                                }
                                dp[i * t + j] = acc;
                            }
                        }
                        // softmax backward then score = scale · q·k
                        for i in 0..t {
                            let dot: f64 = (0..t).map(|j| dp[i * t + j] * p[i * t + j]).sum();
                            for j in 0..t {
                                let ds = p[i * t + j] * (dp[i * t + j] - dot) * scale;
                                for ch in 0..c {
                                    dq[off + ch * t + i] += ds * kd[off + ch * t + j];
                                    dk[off + ch * t + j] += ds * qd[off + ch * t + i];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::Reparam {
                    mean,
                    logvar,
                    noise,
                } => {
                    let lv = self.value(*logvar).data();
                    let dlv = lv
                        .iter()
                        .zip(noise)
                        .zip(&g)
                        .map(|((l, e), gv)| gv * 0.5 * (0.5 * l).exp() * e)
                        .collect();
                    accumulate(&mut grads, *mean, g);
                    accumulate(&mut grads, *logvar, dlv);
                }
                Op::KlNormal { mean, logvar } => {
                    let n = self.value(*mean).len() as f64;
                    let scale = g[0] / n;
                    let dm = self.value(*mean).data().iter().map(|mu| scale * mu).collect();
                    let dlv = self
                        .value(*logvar)
                        .data()
                        .iter()
                        .map(|l| scale * 0.5 * (l.exp() - 1.0))
                        .collect();
                    accumulate(&mut grads, *mean, dm);
                    accumulate(&mut grads, *logvar, dlv);
                }
                Op::L1 { a, target } => {
                    let v = self.value(*a).data();
                    let scale = g[0] / v.len() as f64;
                    let da = v.iter().zip(target).map(|(p, q)| scale * sign(p - q)).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::L1Pair(a, b) => {
                    let (x, y) = (self.value(*a).data(), self.value(*b).data());
                    let scale = g[0] / x.len() as f64;
                    let da: Vec<f64> = x.iter().zip(y).map(|(p, q)| scale * sign(p - q)).collect();
                    let db = da.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::KurtosisGap { x, targets, batch } => {
                    let v = self.value(*x).data();
                    let rows = targets.len();
                    let d = v.len() / rows;
                    let batch = *batch as f64;
                    let mut dx = vec![0.0; v.len()];
                    for (r, tgt) in targets.iter().enumerate() {
                        let row = &v[r * d..(r + 1) * d];
                        let k = kernels::kurtosis_row(row);
                        let coef = g[0] * sign(k - tgt) / batch;
                        kernels::kurtosis_row_grad(row, coef, &mut dx[r * d..(r + 1) * d]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::BceLogits { x, target } => {
                    let v = self.value(*x).data();
                    let scale = g[0] / v.len() as f64;
                    let dx = v.iter().map(|&z| scale * (sigmoid(z) - target)).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Combine(terms) => {
                    for (v, c) in terms {
                        accumulate(&mut grads, *v, vec![g[0] * c]);
                    }
                }
            }
        }
        params.reverse();
        params
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
