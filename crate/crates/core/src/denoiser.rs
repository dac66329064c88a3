//! Transformer encoder that predicts the clean segment X_0 from a noisy
//! segment, its timestep and the conditioning tokens.

use ndarray::{s, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditionBundle, ConditionCache, ConditionEncoder, SegmentContext};
use crate::error::{Error, Result};
use crate::motion::{MotionClip, FEATURE_DIM};
use crate::nn::{
    EncoderBlock, EncoderBlockCache, LayerNorm, LayerNormCache, Linear, Module, Param,
};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_multiplier: usize,
    /// Longest sequence accepted. Joint and infill baselines generate two
    /// segments at once, hence twice the 200-frame segment limit.
    pub max_frames: usize,
}

impl DenoiserConfig {
    /// Full-size model: 6 layers, 6 heads. The reference width of 512 does
    /// not split into 6 heads, so the width is rounded up to 516 (86 per head).
    pub fn full() -> Self {
        DenoiserConfig {
            d_model: 516,
            n_layers: 6,
            n_heads: 6,
            ff_multiplier: 4,
            max_frames: 400,
        }
    }

    pub fn desk() -> Self {
        DenoiserConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ff_multiplier: 4,
            max_frames: 400,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0
            || self.n_layers == 0
            || self.n_heads == 0
            || self.ff_multiplier == 0
            || self.max_frames == 0
        {
            return Err(Error::Config("denoiser sizes must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(
                "d_model must be even for sinusoidal embeddings".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    pub condition: ConditionEncoder,
    pub blocks: Vec<EncoderBlock>,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

pub struct DenoiserCache {
    condition: ConditionCache,
    blocks: Vec<EncoderBlockCache>,
    final_norm: LayerNormCache,
    frame_features: Array2<f32>,
    n_tokens: usize,
}

/// Builds a denoiser whose text embeddings share its model width.
pub fn init_denoiser(config: DenoiserConfig, seed: u64) -> Result<Denoiser> {
    Denoiser::new(config, config.d_model, seed)
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, text_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let d = config.d_model;
        let condition = ConditionEncoder::new(d, text_dim, &mut rng);
        let blocks = (0..config.n_layers)
            .map(|_| EncoderBlock::new(d, config.n_heads, config.ff_multiplier, &mut rng))
            .collect();
        Ok(Denoiser {
            config,
            condition,
            blocks,
            final_norm: LayerNorm::new(d),
            head: Linear::new(d, FEATURE_DIM, &mut rng),
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn text_dim(&self) -> usize {
        self.condition.text_dim()
    }

    fn check_bundle(&self, bundle: &ConditionBundle) -> Result<()> {
        let d = self.config.d_model;
        if bundle.n_frames() == 0 || bundle.n_frames() > self.config.max_frames {
            return Err(Error::InvalidArgument(format!(
                "{} frames outside 1..={}",
                bundle.n_frames(),
                self.config.max_frames
            )));
        }
        if bundle.ctx_token.len() != d
            || bundle.time_token.len() != d
            || bundle.frame_tokens.ncols() != d
        {
            return Err(Error::Shape(format!("bundle tokens are not {d} wide")));
        }
        Ok(())
    }

    fn trunk(&self, tokens: Array2<f32>) -> (Array2<f32>, Vec<EncoderBlockCache>, LayerNormCache) {
        let mut x = tokens;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(x.view());
            caches.push(c);
            x = y;
        }
        let (normed, norm_cache) = self.final_norm.forward(x.view());
        (normed, caches, norm_cache)
    }

    /// Predicts the clean segment from prepared condition tokens.
    pub fn predict_x0(&self, bundle: &ConditionBundle) -> Result<Array2<f32>> {
        self.check_bundle(bundle)?;
        let (normed, _, _) = self.trunk(bundle.tokens());
        Ok(self.head.forward(normed.slice(s![2.., ..])))
    }

    /// Forward pass retaining activations for [`Denoiser::backward`].
    pub fn forward_train(
        &self,
        ctx: &SegmentContext<'_>,
        noisy: &Array2<f32>,
        t: usize,
        mask: bool,
    ) -> Result<(Array2<f32>, DenoiserCache)> {
        let (bundle, condition) = self.condition.forward(ctx, t, noisy, mask)?;
        self.check_bundle(&bundle)?;
        let n_tokens = bundle.token_count();
        let (normed, blocks, final_norm) = self.trunk(bundle.tokens());
        let frame_features = normed.slice(s![2.., ..]).to_owned();
        let out = self.head.forward(frame_features.view());
        Ok((
            out,
            DenoiserCache {
                condition,
                blocks,
                final_norm,
                frame_features,
                n_tokens,
            },
        ))
    }

    /// Accumulates parameter gradients given d(loss)/d(output).
    pub fn backward(&mut self, cache: &DenoiserCache, d_out: &Array2<f32>) {
        let dframes = self
            .head
            .backward(cache.frame_features.view(), d_out.view());
        let mut dnormed = Array2::zeros((cache.n_tokens, self.config.d_model));
        dnormed.slice_mut(s![2.., ..]).assign(&dframes);
        let mut dx = self.final_norm.backward(&cache.final_norm, dnormed.view());
        for (block, c) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            dx = block.backward(c, dx.view());
        }
        self.condition.backward(&cache.condition, dx.view());
    }

    /// Convenience: condition and predict in one call.
    pub fn predict_clean(
        &self,
        ctx: &SegmentContext<'_>,
        noisy: &Array2<f32>,
        t: usize,
        mask: bool,
    ) -> Result<Array2<f32>> {
        let (bundle, _) = self.condition.forward(ctx, t, noisy, mask)?;
        self.predict_x0(&bundle)
    }
}

impl Module for Denoiser {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.condition.params();
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.final_norm.params());
        p.extend(self.head.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.condition.params_mut();
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p.extend(self.final_norm.params_mut());
        p.extend(self.head.params_mut());
        p
    }
}

pub fn predict_x0(bundle: &ConditionBundle, model: &Denoiser) -> Result<MotionClip> {
    Ok(MotionClip::new(
        model.predict_x0(bundle)?,
        crate::motion::DEFAULT_FPS,
    ))
}

/// Classifier-free guidance: `uncond + scale (cond - uncond)`.
pub fn guide(cond: &Array2<f32>, uncond: &Array2<f32>, scale: f32) -> Array2<f32> {
    Zip::from(cond)
        .and(uncond)
        .map_collect(|&c, &u| u + scale * (c - u))
}

pub fn guided_predict_x0(
    bundle_cond: &ConditionBundle,
    bundle_masked: &ConditionBundle,
    model: &Denoiser,
    scale: f32,
) -> Result<MotionClip> {
    if bundle_cond.masked
        || !bundle_masked.masked
        || bundle_cond.time_token != bundle_masked.time_token
        || bundle_cond.frame_tokens != bundle_masked.frame_tokens
    {
        return Err(Error::InvalidArgument(
            "guidance bundles must differ only in the text mask".into(),
        ));
    }
    let cond = model.predict_x0(bundle_cond)?;
    let uncond = model.predict_x0(bundle_masked)?;
    Ok(MotionClip::new(
        guide(&cond, &uncond, scale),
        crate::motion::DEFAULT_FPS,
    ))
}
