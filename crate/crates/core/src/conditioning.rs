//! Conditioning: deterministic text embeddings, the categorical duration
//! predictor and the condition encoder that assembles the denoiser's
//! prefix tokens.
//!
//! Token layout handed to the denoiser is `[ctx, time, frame_0 .. frame_{F-1}]`:
//!
//! * `ctx = past_proj(z_prev_motion || z_prev_text) + (masked ? 0 : text_proj(cur))`
//! * `time = MLP(sinusoid(t))`
//! * `frame_k = motion_in(x_t[k]) + PE(k)`
//!
//! The previous motion is mean-pooled through the same `motion_in` layer
//! as the noisy frames; a learned null token stands in for absent context.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionClip, FEATURE_DIM};
use crate::nn::{gelu, gelu_backward, positional_table, sinusoidal, Linear, Module, Param};
use crate::rng::{fnv1a, seeded};

/// Smallest duration class; class k spans 4k frames.
pub const DURATION_MIN_CLASS: usize = 10;
pub const DURATION_MAX_CLASS: usize = 50;
pub const DURATION_CLASSES: usize = DURATION_MAX_CLASS - DURATION_MIN_CLASS + 1;
pub const FRAMES_PER_CLASS_UNIT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: Array1<f32>,
}

impl TextEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_row(&self) -> ArrayView2<'_, f32> {
        self.vector.view().insert_axis(Axis(0))
    }
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hash embedder: every token maps to a fixed pseudo-random unit vector
/// seeded by its bytes; the text vector is their normalized mean.
pub fn embed_text(text: &str, dim: usize) -> TextEmbedding {
    let mut acc = vec![0.0f64; dim];
    let mut count = 0usize;
    for token in tokenize(text) {
        let mut rng = seeded(fnv1a(token.as_bytes()));
        let v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x / norm;
        }
        count += 1;
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    let vector = if count == 0 || norm == 0.0 {
        Array1::zeros(dim)
    } else {
        acc.iter().map(|x| (x / norm) as f32).collect()
    };
    TextEmbedding { vector }
}

pub fn class_to_frames(class: usize) -> usize {
    FRAMES_PER_CLASS_UNIT * class
}

/// Maps a frame count onto its duration class, if it is representable.
pub fn frames_to_class(frames: usize) -> Result<usize> {
    if !frames.is_multiple_of(FRAMES_PER_CLASS_UNIT) {
        return Err(Error::InvalidArgument(format!(
            "{frames} frames is not a multiple of {FRAMES_PER_CLASS_UNIT}"
        )));
    }
    let class = frames / FRAMES_PER_CLASS_UNIT;
    if !(DURATION_MIN_CLASS..=DURATION_MAX_CLASS).contains(&class) {
        return Err(Error::InvalidArgument(format!(
            "{frames} frames is outside [{}, {}]",
            class_to_frames(DURATION_MIN_CLASS),
            class_to_frames(DURATION_MAX_CLASS)
        )));
    }
    Ok(class)
}

/// Logits over duration classes `DURATION_MIN_CLASS..=DURATION_MAX_CLASS`.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationDistribution {
    pub logits: Array1<f32>,
}

impl DurationDistribution {
    pub fn probabilities(&self) -> Array1<f64> {
        let max = self.logits.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let e = self.logits.mapv(|v| f64::from(v - max).exp());
        let sum = e.sum();
        e / sum
    }

    /// Most likely class; ties resolve to the lowest class.
    pub fn argmax_class(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.logits.iter().enumerate() {
            if v > self.logits[best] {
                best = i;
            }
        }
        DURATION_MIN_CLASS + best
    }

    pub fn frames(&self) -> usize {
        class_to_frames(self.argmax_class())
    }
}

/// Two-layer feed-forward classifier from a text embedding to duration logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationPredictor {
    pub hidden: Linear,
    pub output: Linear,
}

pub struct DurationCache {
    input: Array2<f32>,
    pre: Array2<f32>,
    act: Array2<f32>,
}

impl DurationPredictor {
    pub fn new(text_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        DurationPredictor {
            hidden: Linear::new(text_dim, hidden, rng),
            output: Linear::new(hidden, DURATION_CLASSES, rng),
        }
    }

    pub fn text_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn forward_train(&self, text: &TextEmbedding) -> Result<(Array1<f32>, DurationCache)> {
        if text.dim() != self.text_dim() {
            return Err(Error::Shape(format!(
                "text embedding has {} dims, duration predictor expects {}",
                text.dim(),
                self.text_dim()
            )));
        }
        let input = text.as_row().to_owned();
        let pre = self.hidden.forward(input.view());
        let act = gelu(&pre);
        let logits = self.output.forward(act.view()).row(0).to_owned();
        Ok((logits, DurationCache { input, pre, act }))
    }

    pub fn predict(&self, text: &TextEmbedding) -> Result<DurationDistribution> {
        Ok(DurationDistribution {
            logits: self.forward_train(text)?.0,
        })
    }

    pub fn backward(&mut self, cache: &DurationCache, dlogits: &Array1<f32>) {
        let dl = dlogits.view().insert_axis(Axis(0));
        let dact = self.output.backward(cache.act.view(), dl);
        let dpre = gelu_backward(&cache.pre, dact.view());
        self.hidden.backward_params(cache.input.view(), dpre.view());
    }
}

impl Module for DurationPredictor {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.hidden.params();
        p.extend(self.output.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.hidden.params_mut();
        p.extend(self.output.params_mut());
        p
    }
}

pub fn predict_duration(
    text: &TextEmbedding,
    predictor: &DurationPredictor,
) -> Result<DurationDistribution> {
    predictor.predict(text)
}

/// Conditioning tokens for one denoiser call.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    pub ctx_token: Array1<f32>,
    pub time_token: Array1<f32>,
    /// F x d_model.
    pub frame_tokens: Array2<f32>,
    pub masked: bool,
}

impl ConditionBundle {
    pub fn token_count(&self) -> usize {
        2 + self.frame_tokens.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.frame_tokens.nrows()
    }

    /// Stacks `[ctx, time, frames..]` into a (2 + F) x d_model matrix.
    pub fn tokens(&self) -> Array2<f32> {
        let d = self.ctx_token.len();
        let mut out = Array2::zeros((self.token_count(), d));
        out.row_mut(0).assign(&self.ctx_token);
        out.row_mut(1).assign(&self.time_token);
        out.slice_mut(s![2.., ..]).assign(&self.frame_tokens);
        out
    }
}

/// What the current segment is conditioned on.
#[derive(Debug, Clone, Copy)]
pub struct SegmentContext<'a> {
    pub prev_motion: Option<&'a MotionClip>,
    pub prev_text: Option<&'a TextEmbedding>,
    pub cur_text: &'a TextEmbedding,
}

impl<'a> SegmentContext<'a> {
    pub fn first(cur_text: &'a TextEmbedding) -> Self {
        SegmentContext {
            prev_motion: None,
            prev_text: None,
            cur_text,
        }
    }
}

/// Learned layers of the context encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEncoder {
    pub motion_in: Linear,
    pub text_proj: Linear,
    pub past_proj: Linear,
    pub null_motion: Param,
    pub null_text: Param,
    pub time_in: Linear,
    pub time_out: Linear,
}

pub struct ConditionCache {
    noisy: Array2<f32>,
    prev_motion: Option<Array2<f32>>,
    prev_text: Option<Array2<f32>>,
    cur_text: Option<Array2<f32>>,
    past_input: Array2<f32>,
    time_input: Array2<f32>,
    time_pre: Array2<f32>,
    time_act: Array2<f32>,
}

impl ConditionEncoder {
    pub fn new(d_model: usize, text_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_model as f32).sqrt();
        ConditionEncoder {
            motion_in: Linear::new(FEATURE_DIM, d_model, rng),
            text_proj: Linear::new(text_dim, d_model, rng),
            past_proj: Linear::new(2 * d_model, d_model, rng),
            null_motion: Param::uniform(1, d_model, bound, rng),
            null_text: Param::uniform(1, d_model, bound, rng),
            time_in: Linear::new(d_model, d_model, rng),
            time_out: Linear::new(d_model, d_model, rng),
        }
    }

    pub fn d_model(&self) -> usize {
        self.motion_in.output_dim()
    }

    pub fn text_dim(&self) -> usize {
        self.text_proj.input_dim()
    }

    fn check_text(&self, text: &TextEmbedding) -> Result<()> {
        if text.dim() != self.text_dim() {
            return Err(Error::Shape(format!(
                "text embedding has {} dims, encoder expects {}",
                text.dim(),
                self.text_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        ctx: &SegmentContext<'_>,
        t: usize,
        noisy: &Array2<f32>,
        mask: bool,
    ) -> Result<(ConditionBundle, ConditionCache)> {
        let d = self.d_model();
        if noisy.ncols() != FEATURE_DIM {
            return Err(Error::Shape(format!(
                "noisy motion has {} channels",
                noisy.ncols()
            )));
        }
        self.check_text(ctx.cur_text)?;
        if let Some(p) = ctx.prev_text {
            self.check_text(p)?;
        }

        let prev_motion = match ctx.prev_motion {
            Some(m) if m.dim() != FEATURE_DIM || m.n_frames() == 0 => {
                return Err(Error::Shape(
                    "previous motion is not an F x 263 clip".into(),
                ))
            }
            Some(m) => Some(m.frames().clone()),
            None => None,
        };
        let z_prev_motion = match &prev_motion {
            Some(m) => self
                .motion_in
                .forward(m.view())
                .mean_axis(Axis(0))
                .expect("non-empty"),
            None => self.null_motion.value.row(0).to_owned(),
        };
        let prev_text = ctx.prev_text.map(|p| p.as_row().to_owned());
        let z_prev_text = match &prev_text {
            Some(p) => self.text_proj.forward(p.view()).row(0).to_owned(),
            None => self.null_text.value.row(0).to_owned(),
        };
        let mut past_input = Array2::zeros((1, 2 * d));
        past_input.slice_mut(s![0, ..d]).assign(&z_prev_motion);
        past_input.slice_mut(s![0, d..]).assign(&z_prev_text);
        let mut ctx_token = self.past_proj.forward(past_input.view()).row(0).to_owned();
        let cur_text = if mask {
            None
        } else {
            let row = ctx.cur_text.as_row().to_owned();
            ctx_token += &self.text_proj.forward(row.view()).row(0);
            Some(row)
        };

        let time_input = sinusoidal(t as f32, d).insert_axis(Axis(0));
        let time_pre = self.time_in.forward(time_input.view());
        let time_act = gelu(&time_pre);
        let time_token = self.time_out.forward(time_act.view()).row(0).to_owned();

        let mut frame_tokens = self.motion_in.forward(noisy.view());
        frame_tokens += &positional_table(noisy.nrows(), d);

        Ok((
            ConditionBundle {
                ctx_token,
                time_token,
                frame_tokens,
                masked: mask,
            },
            ConditionCache {
                noisy: noisy.clone(),
                prev_motion,
                prev_text,
                cur_text,
                past_input,
                time_input,
                time_pre,
                time_act,
            },
        ))
    }

    /// Backpropagates gradients of the stacked token matrix.
    pub fn backward(&mut self, cache: &ConditionCache, dtokens: ArrayView2<f32>) {
        let d = self.d_model();
        let dctx = dtokens.slice(s![0..1, ..]);
        let dtime = dtokens.slice(s![1..2, ..]);
        let dframes = dtokens.slice(s![2.., ..]);

        self.motion_in.backward_params(cache.noisy.view(), dframes);

        let dtime_act = self.time_out.backward(cache.time_act.view(), dtime);
        let dtime_pre = gelu_backward(&cache.time_pre, dtime_act.view());
        self.time_in
            .backward_params(cache.time_input.view(), dtime_pre.view());

        if let Some(cur) = &cache.cur_text {
            self.text_proj.backward_params(cur.view(), dctx);
        }
        let dpast = self.past_proj.backward(cache.past_input.view(), dctx);
        let dz_motion = dpast.slice(s![.., ..d]);
        let dz_text = dpast.slice(s![.., d..]);
        match &cache.prev_motion {
            Some(m) => {
                let n = m.nrows();
                let per_frame = dz_motion.to_owned() / n as f32;
                let spread = per_frame
                    .broadcast((n, d))
                    .expect("row broadcast")
                    .to_owned();
                self.motion_in.backward_params(m.view(), spread.view());
            }
            None => self.null_motion.grad += &dz_motion,
        }
        match &cache.prev_text {
            Some(p) => self.text_proj.backward_params(p.view(), dz_text),
            None => self.null_text.grad += &dz_text,
        }
    }
}

impl Module for ConditionEncoder {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.motion_in.params();
        p.extend(self.text_proj.params());
        p.extend(self.past_proj.params());
        p.push(&self.null_motion);
        p.push(&self.null_text);
        p.extend(self.time_in.params());
        p.extend(self.time_out.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.motion_in.params_mut();
        p.extend(self.text_proj.params_mut());
        p.extend(self.past_proj.params_mut());
        p.push(&mut self.null_motion);
        p.push(&mut self.null_text);
        p.extend(self.time_in.params_mut());
        p.extend(self.time_out.params_mut());
        p
    }
}

/// Assembles the condition tokens for one denoiser call.
#[allow(clippy::too_many_arguments)]
pub fn build_condition(
    prev_motion: Option<&MotionClip>,
    prev_text: Option<&TextEmbedding>,
    cur_text: &TextEmbedding,
    t: usize,
    n_frames: usize,
    noisy_motion: &MotionClip,
    mask: bool,
    encoder: &ConditionEncoder,
) -> Result<ConditionBundle> {
    if noisy_motion.n_frames() != n_frames {
        return Err(Error::Shape(format!(
            "noisy motion has {} frames, expected {n_frames}",
            noisy_motion.n_frames()
        )));
    }
    let ctx = SegmentContext {
        prev_motion,
        prev_text,
        cur_text,
    };
    Ok(encoder.forward(&ctx, t, noisy_motion.frames(), mask)?.0)
}

/// Configuration persisted alongside duration predictor weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationConfig {
    pub text_dim: usize,
    pub hidden: usize,
}
