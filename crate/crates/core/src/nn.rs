//! Small dense layers with explicit backward passes, and AdamW.
//!
//! Every layer keeps its parameters in [`Param`] cells (value plus
//! accumulated gradient). `forward` returns the output together with
//! whatever the backward pass needs; `backward` accumulates parameter
//! gradients and returns the gradient with respect to the input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f32>,
    pub grad: Array2<f32>,
    /// Whether AdamW applies weight decay to this tensor.
    pub decay: bool,
}

impl Param {
    pub fn new(value: Array2<f32>, decay: bool) -> Self {
        let grad = Array2::zeros(value.dim());
        Param { value, grad, decay }
    }

    pub fn uniform(rows: usize, cols: usize, bound: f32, rng: &mut impl Rng) -> Self {
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound));
        Self::new(value, true)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns parameters, visited in a fixed order.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// y = x W + b, with W stored input-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Scaled-uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f32).sqrt();
        let weight = Param::uniform(input, output, bound, rng);
        let mut bias = Param::uniform(1, output, bound, rng);
        bias.decay = false;
        Linear { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let mut y = x.dot(&self.weight.value);
        y += &self.bias.value;
        y
    }

    /// Accumulates parameter gradients only.
    pub fn backward_params(&mut self, x: ArrayView2<f32>, dy: ArrayView2<f32>) {
        general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut self.weight.grad);
        self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }

    pub fn backward(&mut self, x: ArrayView2<f32>, dy: ArrayView2<f32>) -> Array2<f32> {
        self.backward_params(x, dy);
        dy.dot(&self.weight.value.t())
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Row-wise layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    eps: f32,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Array2<f32>,
    inv_std: Array1<f32>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(Array2::ones((1, dim)), false),
            beta: Param::new(Array2::zeros((1, dim)), false),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: ArrayView2<f32>) -> (Array2<f32>, LayerNormCache) {
        let d = x.ncols() as f32;
        let mut normalized = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in normalized.outer_iter_mut().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f32>() / d;
            *is = 1.0 / (var + self.eps).sqrt();
            row *= *is;
        }
        let mut y = &normalized * &self.gamma.value;
        y += &self.beta.value;
        (
            y,
            LayerNormCache {
                normalized,
                inv_std,
            },
        )
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: ArrayView2<f32>) -> Array2<f32> {
        self.gamma.grad += &(&dy * &cache.normalized)
            .sum_axis(Axis(0))
            .insert_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = &dy * &self.gamma.value;
        let d = dy.ncols() as f32;
        let mut dx = Array2::zeros(dy.dim());
        for (((mut out, g), xh), &is) in dx
            .outer_iter_mut()
            .zip(dxhat.outer_iter())
            .zip(cache.normalized.outer_iter())
            .zip(cache.inv_std.iter())
        {
            let mean_g = g.sum() / d;
            let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f32>() / d;
            Zip::from(&mut out)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gi, &xi| *o = is * (gi - mean_g - xi * mean_gx));
        }
        dx
    }
}

impl Module for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)

/// tanh approximation of GELU.
pub fn gelu(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044_715 * v * v * v)).tanh()))
}

/// Multiplies `dy` by GELU'(x).
pub fn gelu_backward(x: &Array2<f32>, dy: ArrayView2<f32>) -> Array2<f32> {
    Zip::from(x).and(&dy).map_collect(|&v, &g| {
        let u = GELU_C * (v + 0.044_715 * v * v * v);
        let th = u.tanh();
        let du = GELU_C * (1.0 + 3.0 * 0.044_715 * v * v);
        g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
    })
}

/// In-place row softmax.
pub fn softmax_rows(x: &mut Array2<f32>) {
    for mut row in x.outer_iter_mut() {
        let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Full (unmasked) multi-head self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub out: Linear,
    heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    input: Array2<f32>,
    qkv: Array2<f32>,
    probs: Vec<Array2<f32>>,
    context: Array2<f32>,
}

impl SelfAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(dim.is_multiple_of(heads), "dim must divide into heads");
        SelfAttention {
            qkv: Linear::new(dim, 3 * dim, rng),
            out: Linear::new(dim, dim, rng),
            heads,
        }
    }

    pub fn forward(&self, x: ArrayView2<f32>) -> (Array2<f32>, AttentionCache) {
        let d = self.out.input_dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let qkv = self.qkv.forward(x);
        let n = x.nrows();
        let mut context = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut p = q.dot(&k.t());
            p *= scale;
            softmax_rows(&mut p);
            general_mat_mul(
                1.0,
                &p,
                &v,
                0.0,
                &mut context.slice_mut(s![.., h * dh..(h + 1) * dh]),
            );
            probs.push(p);
        }
        let y = self.out.forward(context.view());
        (
            y,
            AttentionCache {
                input: x.to_owned(),
                qkv,
                probs,
                context,
            },
        )
    }

    pub fn backward(&mut self, cache: &AttentionCache, dy: ArrayView2<f32>) -> Array2<f32> {
        let d = self.out.input_dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let dcontext = self.out.backward(cache.context.view(), dy);
        let mut dqkv = Array2::zeros(cache.qkv.dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let q = cache.qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = cache.qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = cache
                .qkv
                .slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let dctx = dcontext.slice(s![.., h * dh..(h + 1) * dh]);
            // dV = P^T dC
            general_mat_mul(
                1.0,
                &p.t(),
                &dctx,
                0.0,
                &mut dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]),
            );
            // dP = dC V^T, then through the softmax
            let mut ds = dctx.dot(&v.t());
            for (mut row, prow) in ds.outer_iter_mut().zip(p.outer_iter()) {
                let dot: f32 = row.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                Zip::from(&mut row)
                    .and(&prow)
                    .for_each(|g, &pv| *g = pv * (*g - dot) * scale);
            }
            general_mat_mul(
                1.0,
                &ds,
                &k,
                0.0,
                &mut dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]),
            );
            general_mat_mul(
                1.0,
                &ds.t(),
                &q,
                0.0,
                &mut dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh]),
            );
        }
        self.qkv.backward(cache.input.view(), dqkv.view())
    }
}

impl Module for SelfAttention {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.qkv.params();
        p.extend(self.out.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.qkv.params_mut();
        p.extend(self.out.params_mut());
        p
    }
}

/// Pre-norm transformer encoder block with a GELU feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attn: SelfAttention,
    pub norm2: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

#[derive(Debug, Clone)]
pub struct EncoderBlockCache {
    norm1: LayerNormCache,
    attn: AttentionCache,
    norm2: LayerNormCache,
    ff_input: Array2<f32>,
    ff_hidden: Array2<f32>,
    ff_activated: Array2<f32>,
}

impl EncoderBlock {
    pub fn new(dim: usize, heads: usize, ff_multiplier: usize, rng: &mut impl Rng) -> Self {
        EncoderBlock {
            norm1: LayerNorm::new(dim),
            attn: SelfAttention::new(dim, heads, rng),
            norm2: LayerNorm::new(dim),
            ff_in: Linear::new(dim, ff_multiplier * dim, rng),
            ff_out: Linear::new(ff_multiplier * dim, dim, rng),
        }
    }

    pub fn forward(&self, x: ArrayView2<f32>) -> (Array2<f32>, EncoderBlockCache) {
        let (n1, norm1) = self.norm1.forward(x);
        let (a, attn) = self.attn.forward(n1.view());
        let h = &x + &a;
        let (n2, norm2) = self.norm2.forward(h.view());
        let ff_hidden = self.ff_in.forward(n2.view());
        let ff_activated = gelu(&ff_hidden);
        let f = self.ff_out.forward(ff_activated.view());
        let y = h + f;
        (
            y,
            EncoderBlockCache {
                norm1,
                attn,
                norm2,
                ff_input: n2,
                ff_hidden,
                ff_activated,
            },
        )
    }

    pub fn backward(&mut self, cache: &EncoderBlockCache, dy: ArrayView2<f32>) -> Array2<f32> {
        let dact = self.ff_out.backward(cache.ff_activated.view(), dy);
        let dhidden = gelu_backward(&cache.ff_hidden, dact.view());
        let dn2 = self.ff_in.backward(cache.ff_input.view(), dhidden.view());
        let mut dh = self.norm2.backward(&cache.norm2, dn2.view());
        dh += &dy;
        let dn1 = self.attn.backward(&cache.attn, dh.view());
        let mut dx = self.norm1.backward(&cache.norm1, dn1.view());
        dx += &dh;
        dx
    }
}

impl Module for EncoderBlock {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.norm1.params();
        p.extend(self.attn.params());
        p.extend(self.norm2.params());
        p.extend(self.ff_in.params());
        p.extend(self.ff_out.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.norm1.params_mut();
        p.extend(self.attn.params_mut());
        p.extend(self.norm2.params_mut());
        p.extend(self.ff_in.params_mut());
        p.extend(self.ff_out.params_mut());
        p
    }
}

/// Fixed sinusoidal embedding of a (possibly fractional) position.
pub fn sinusoidal(position: f32, dim: usize) -> Array1<f32> {
    let mut out = Array1::zeros(dim);
    for i in 0..dim / 2 {
        let freq = (-(2.0 * i as f32 / dim as f32) * 10000f32.ln()).exp();
        let angle = position * freq;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    out
}

/// Sinusoidal positional table for positions 0..n.
pub fn positional_table(n: usize, dim: usize) -> Array2<f32> {
    let mut table = Array2::zeros((n, dim));
    for (k, mut row) in table.outer_iter_mut().enumerate() {
        row.assign(&sinusoidal(k as f32, dim));
    }
    table
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .map(|p| {
            p.grad
                .iter()
                .map(|&g| f64::from(g) * f64::from(g))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for p in params.iter_mut() {
            p.grad.mapv_inplace(|g| g * scale);
        }
    }
    norm
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f32,
    pub weight_decay: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: i32,
    first: Vec<Array2<f32>>,
    second: Vec<Array2<f32>>,
}

impl AdamW {
    pub fn new(learning_rate: f32, weight_decay: f32) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.first.is_empty() {
            self.first = params
                .iter()
                .map(|p| Array2::zeros(p.value.dim()))
                .collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter set changed");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (lr, wd, b1, b2, eps) = (
            self.learning_rate,
            self.weight_decay,
            self.beta1,
            self.beta2,
            self.eps,
        );
        for ((p, m), v) in params
            .iter_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let decay = if p.decay { wd } else { 0.0 };
            let Param { value, grad, .. } = &mut **p;
            Zip::from(value)
                .and(&*grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    *w -= lr * (update + decay * *w);
                });
        }
    }
}
