//! Reverse diffusion for one segment, autoregressive multi-segment
//! generation and the joint, interpolation and infilling stitchers.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::conditioning::{
    embed_text, predict_duration, DurationPredictor, SegmentContext, TextEmbedding,
};
use crate::denoiser::{guide, Denoiser};
use crate::error::{Error, Result};
use crate::motion::{MotionClip, DEFAULT_FPS, FEATURE_DIM};
use crate::rng::{derive_seed, seeded, standard_normal};
use crate::schedule::{q_sample_array, renoise_step_array, NoiseSchedule};

/// Anything that maps a noisy segment and its context to a clean estimate.
pub trait CleanPredictor {
    fn predict_clean(
        &self,
        ctx: &SegmentContext<'_>,
        noisy: &Array2<f32>,
        t: usize,
        mask: bool,
    ) -> Result<Array2<f32>>;

    fn max_frames(&self) -> usize;

    fn text_dim(&self) -> usize;

    /// Number of diffusion steps the predictor was trained for, if known.
    fn diffusion_steps(&self) -> Option<usize> {
        None
    }
}

impl CleanPredictor for Denoiser {
    fn predict_clean(
        &self,
        ctx: &SegmentContext<'_>,
        noisy: &Array2<f32>,
        t: usize,
        mask: bool,
    ) -> Result<Array2<f32>> {
        Denoiser::predict_clean(self, ctx, noisy, t, mask)
    }

    fn max_frames(&self) -> usize {
        self.config().max_frames
    }

    fn text_dim(&self) -> usize {
        Denoiser::text_dim(self)
    }
}

/// A denoiser paired with the schedule length it was trained on.
pub struct TrainedDenoiser<'a> {
    pub model: &'a Denoiser,
    pub steps: usize,
}

impl CleanPredictor for TrainedDenoiser<'_> {
    fn predict_clean(
        &self,
        ctx: &SegmentContext<'_>,
        noisy: &Array2<f32>,
        t: usize,
        mask: bool,
    ) -> Result<Array2<f32>> {
        self.model.predict_clean(ctx, noisy, t, mask)
    }

    fn max_frames(&self) -> usize {
        self.model.config().max_frames
    }

    fn text_dim(&self) -> usize {
        self.model.text_dim()
    }

    fn diffusion_steps(&self) -> Option<usize> {
        Some(self.steps)
    }
}

/// Inputs for one segment.
#[derive(Debug, Clone, Copy)]
pub struct SegmentRequest<'a> {
    pub prev_motion: Option<&'a MotionClip>,
    pub prev_text: Option<&'a str>,
    pub cur_text: &'a str,
    pub frames: usize,
}

impl<'a> SegmentRequest<'a> {
    pub fn first(cur_text: &'a str, frames: usize) -> Self {
        SegmentRequest {
            prev_motion: None,
            prev_text: None,
            cur_text,
            frames,
        }
    }
}

fn check_model(model: &dyn CleanPredictor, sched: &NoiseSchedule, frames: usize) -> Result<()> {
    if frames == 0 || frames > model.max_frames() {
        return Err(Error::InvalidArgument(format!(
            "segment length {frames} outside 1..={}",
            model.max_frames()
        )));
    }
    if let Some(steps) = model.diffusion_steps() {
        if steps != sched.steps() {
            return Err(Error::InvalidArgument(format!(
                "model trained for T = {steps}, schedule has T = {}",
                sched.steps()
            )));
        }
    }
    Ok(())
}

/// Text-conditioned clean prediction, with classifier-free guidance when a
/// scale is given.
fn predict(
    model: &dyn CleanPredictor,
    ctx: &SegmentContext<'_>,
    x: &Array2<f32>,
    t: usize,
    guidance: Option<f32>,
) -> Result<Array2<f32>> {
    let cond = model.predict_clean(ctx, x, t, false)?;
    match guidance {
        None => Ok(cond),
        Some(scale) => {
            let uncond = model.predict_clean(ctx, x, t, true)?;
            Ok(guide(&cond, &uncond, scale))
        }
    }
}

/// Generates one segment by iterating clean prediction and renoising from
/// `X_T ~ N(0, I)` down to `t = 1`, whose prediction is returned.
pub fn sample_segment(
    req: &SegmentRequest<'_>,
    model: &dyn CleanPredictor,
    sched: &NoiseSchedule,
    seed: u64,
    guidance: Option<f32>,
) -> Result<MotionClip> {
    check_model(model, sched, req.frames)?;
    let dim = model.text_dim();
    let cur = embed_text(req.cur_text, dim);
    let prev = req.prev_text.map(|t| embed_text(t, dim));
    let ctx = SegmentContext {
        prev_motion: req.prev_motion,
        prev_text: prev.as_ref(),
        cur_text: &cur,
    };
    let mut rng = seeded(seed);
    let mut x = standard_normal(&mut rng, req.frames, FEATURE_DIM);
    for t in (1..=sched.steps()).rev() {
        let x0 = predict(model, &ctx, &x, t, guidance)?;
        if t == 1 {
            x = x0;
        } else {
            let noise = standard_normal(&mut rng, req.frames, FEATURE_DIM);
            x = renoise_step_array(&x0, t - 1, &noise, sched)?;
        }
    }
    let fps = req.prev_motion.map_or(DEFAULT_FPS, MotionClip::fps);
    let mut clip = MotionClip::new(x, fps);
    clip.clamp_contacts();
    Ok(clip)
}

pub const MIN_SEGMENT_FRAMES: usize = 40;
pub const MAX_SEGMENT_FRAMES: usize = 200;

fn check_segment_frames(frames: usize) -> Result<()> {
    if !(MIN_SEGMENT_FRAMES..=MAX_SEGMENT_FRAMES).contains(&frames) || !frames.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "segment length {frames} must be a multiple of 4 in [{MIN_SEGMENT_FRAMES}, {MAX_SEGMENT_FRAMES}]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSequence {
    pub prompts: Vec<String>,
    /// Empty, or one optional frame count per prompt.
    #[serde(default)]
    pub frames: Vec<Option<usize>>,
}

impl PromptSequence {
    pub fn new(prompts: Vec<String>) -> Self {
        PromptSequence {
            prompts,
            frames: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::InvalidArgument("need at least one prompt".into()));
        }
        if !self.frames.is_empty() && self.frames.len() != self.prompts.len() {
            return Err(Error::InvalidArgument(
                "frame overrides must match the prompt count".into(),
            ));
        }
        for f in self.frames.iter().flatten() {
            check_segment_frames(*f)?;
        }
        Ok(())
    }

    fn override_for(&self, i: usize) -> Option<usize> {
        self.frames.get(i).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSegment {
    pub prompt: String,
    pub seed: u64,
    pub clip: MotionClip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSequence {
    pub segments: Vec<GeneratedSegment>,
}

impl GeneratedSequence {
    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.clip.n_frames()).sum()
    }

    pub fn frame_counts(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.clip.n_frames()).collect()
    }

    /// All segments back to back.
    pub fn concatenated(&self) -> Result<MotionClip> {
        let mut iter = self.segments.iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty sequence".into()))?;
        iter.try_fold(first.clip.clone(), |acc, s| acc.concat(&s.clip))
    }
}

/// Segment length for a prompt: the override if given, otherwise the most
/// likely duration class. Without an override a predictor is required.
pub fn segment_frames(
    prompt: &str,
    override_frames: Option<usize>,
    durations: Option<&DurationPredictor>,
) -> Result<usize> {
    match (override_frames, durations) {
        (Some(f), _) => Ok(f),
        (None, Some(d)) => {
            let text: TextEmbedding = embed_text(prompt, d.text_dim());
            Ok(predict_duration(&text, d)?.frames())
        }
        (None, None) => Err(Error::InvalidArgument(format!(
            "no frame count for `{prompt}` and no duration predictor"
        ))),
    }
}

/// Generates one segment per prompt, each conditioned on the previous
/// prompt and the previously generated segment.
pub fn sample_long(
    prompts: &PromptSequence,
    model: &dyn CleanPredictor,
    sched: &NoiseSchedule,
    durations: Option<&DurationPredictor>,
    seed: u64,
    guidance: Option<f32>,
) -> Result<GeneratedSequence> {
    prompts.validate()?;
    let mut segments: Vec<GeneratedSegment> = Vec::with_capacity(prompts.prompts.len());
    for (i, prompt) in prompts.prompts.iter().enumerate() {
        let frames = segment_frames(prompt, prompts.override_for(i), durations)?;
        let child = derive_seed(seed, i as u64);
        let prev = segments.last();
        let req = SegmentRequest {
            prev_motion: prev.map(|p| &p.clip),
            prev_text: prev.map(|p| p.prompt.as_str()),
            cur_text: prompt,
            frames,
        };
        let clip = sample_segment(&req, model, sched, child, guidance)?;
        log::debug!("segment {i}: {frames} frames, seed {child:#x}");
        segments.push(GeneratedSegment {
            prompt: prompt.clone(),
            seed: child,
            clip,
        });
    }
    Ok(GeneratedSequence { segments })
}

/// Generates two prompts as one clip from their joined text.
pub fn sample_joint(
    prompts: (&str, &str),
    total_frames: usize,
    model: &dyn CleanPredictor,
    sched: &NoiseSchedule,
    seed: u64,
    guidance: Option<f32>,
) -> Result<MotionClip> {
    if !(MIN_SEGMENT_FRAMES..=2 * MAX_SEGMENT_FRAMES).contains(&total_frames) {
        return Err(Error::InvalidArgument(format!(
            "joint length {total_frames} outside [{MIN_SEGMENT_FRAMES}, {}]",
            2 * MAX_SEGMENT_FRAMES
        )));
    }
    let text = format!("{} {}", prompts.0, prompts.1);
    sample_segment(
        &SegmentRequest::first(&text, total_frames),
        model,
        sched,
        seed,
        guidance,
    )
}

/// Default blend or infill window: 10% of the combined length, rounded.
pub fn default_window(total_frames: usize) -> usize {
    (0.1 * total_frames as f64).round() as usize
}

fn check_pair(a: &MotionClip, b: &MotionClip) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "clips have {} and {} channels",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Joins two clips, cross-fading the last `window` frames of `a` into the
/// first `window` frames of `b`. Blend frame `i` weights `b` by
/// `(i + 1) / (window + 1)`.
pub fn stitch_interp(a: &MotionClip, b: &MotionClip, window: usize) -> Result<MotionClip> {
    check_pair(a, b)?;
    if window > a.n_frames().min(b.n_frames()) {
        return Err(Error::InvalidArgument(format!(
            "window {window} exceeds the shorter clip ({} frames)",
            a.n_frames().min(b.n_frames())
        )));
    }
    let (fa, fb) = (a.n_frames(), b.n_frames());
    let mut out = Array2::<f32>::zeros((fa + fb - window, a.dim()));
    out.slice_mut(s![..fa - window, ..])
        .assign(&a.frames().slice(s![..fa - window, ..]));
    out.slice_mut(s![fa.., ..])
        .assign(&b.frames().slice(s![window.., ..]));
    for i in 0..window {
        let w = (i + 1) as f64 / (window + 1) as f64;
        let ra = a.frames().row(fa - window + i);
        let rb = b.frames().row(i);
        for (c, o) in out.row_mut(fa - window + i).iter_mut().enumerate() {
            *o = ((1.0 - w) * f64::from(ra[c]) + w * f64::from(rb[c])) as f32;
        }
    }
    Ok(MotionClip::new(out, a.fps()))
}

/// Frame range regenerated by [`infill_stitch`] for clips of these lengths.
pub fn infill_window(fa: usize, fb: usize) -> Result<std::ops::Range<usize>> {
    let w = default_window(fa + fb);
    if w == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} frames leave an empty infill window",
            fa + fb
        )));
    }
    let half = w / 2;
    if half > fa || w - half > fb {
        return Err(Error::InvalidArgument(format!(
            "infill window of {w} frames does not fit clips of {fa} and {fb} frames"
        )));
    }
    Ok(fa - half..fa - half + w)
}

/// Regenerates a window around the junction of `a` and `b` by masked
/// reverse diffusion while every other frame is pinned to the forward-noised
/// inputs. Frames outside the window are returned unchanged.
pub fn infill_stitch(
    a: &MotionClip,
    b: &MotionClip,
    model: &dyn CleanPredictor,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<MotionClip> {
    check_pair(a, b)?;
    let window = infill_window(a.n_frames(), b.n_frames())?;
    let known = a.concat(b)?;
    let n = known.n_frames();
    check_model(model, sched, n)?;
    let empty = TextEmbedding {
        vector: ndarray::Array1::zeros(model.text_dim()),
    };
    let ctx = SegmentContext::first(&empty);
    let known = known.into_frames();
    let mut rng = seeded(seed);
    let pin = |x: &mut Array2<f32>, src: &Array2<f32>| {
        x.slice_mut(s![..window.start, ..])
            .assign(&src.slice(s![..window.start, ..]));
        x.slice_mut(s![window.end.., ..])
            .assign(&src.slice(s![window.end.., ..]));
    };
    let mut x = standard_normal(&mut rng, n, FEATURE_DIM);
    let noise = standard_normal(&mut rng, n, FEATURE_DIM);
    pin(
        &mut x,
        &q_sample_array(&known, sched.steps(), &noise, sched)?,
    );
    for t in (1..=sched.steps()).rev() {
        let x0 = model.predict_clean(&ctx, &x, t, true)?;
        if t == 1 {
            x = x0;
            pin(&mut x, &known);
        } else {
            let noise = standard_normal(&mut rng, n, FEATURE_DIM);
            x = renoise_step_array(&x0, t - 1, &noise, sched)?;
            let noise = standard_normal(&mut rng, n, FEATURE_DIM);
            pin(&mut x, &q_sample_array(&known, t - 1, &noise, sched)?);
        }
    }
    let mut clip = MotionClip::new(x, a.fps());
    clip.clamp_contacts();
    Ok(clip)
}
