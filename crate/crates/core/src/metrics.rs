//! Evaluation metrics over motion feature vectors: FID, diversity,
//! multimodality, R-precision (top 3) and multimodal distance, plus a small
//! contrastive text-motion evaluator that provides the feature space.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::embed_text;
use crate::error::{Error, Result};
use crate::motion::{validate_clip, MotionClip, FEATURE_DIM};
use crate::nn::{clip_grad_norm, gelu, gelu_backward, AdamW, Linear, Module, Param};
use crate::rng::{derive_seed, seeded, standard_normal};

pub const DEFAULT_FEATURE_DIM: usize = 32;
pub const DEFAULT_POOL_SIZE: usize = 32;
pub const DEFAULT_DIVERSITY_PAIRS: usize = 50;
/// Per-channel temporal mean, temporal std and mean absolute velocity.
pub const STATISTICS_DIM: usize = 3 * FEATURE_DIM;
const PROJECTION_SEED: u64 = 0x4d45_5452_4943_5331;

/// Temporal statistics of a clip: mean, population std and mean absolute
/// frame-to-frame change of every channel.
pub fn motion_statistics(clip: &MotionClip) -> Array1<f64> {
    let x = clip.to_f64();
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty clip");
    let var = x.map_axis(Axis(0), |col| {
        let m = col.sum() / n;
        col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
    });
    let mut vel = Array1::zeros(x.ncols());
    if x.nrows() > 1 {
        let d = &x.slice(s![1.., ..]) - &x.slice(s![..-1, ..]);
        vel = d.mapv(f64::abs).mean_axis(Axis(0)).expect("non-empty");
    }
    ndarray::concatenate![Axis(0), mean, var.mapv(f64::sqrt), vel]
}

/// Fixed random linear projection of [`motion_statistics`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicFeatures {
    projection: Array2<f64>,
}

impl DeterministicFeatures {
    pub fn new(feature_dim: usize, seed: u64) -> Self {
        let scale = 1.0 / (STATISTICS_DIM as f64).sqrt();
        let projection = standard_normal(&mut seeded(seed), STATISTICS_DIM, feature_dim)
            .mapv(|v| f64::from(v) * scale);
        DeterministicFeatures { projection }
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn extract(&self, clip: &MotionClip) -> Result<Array1<f64>> {
        validate_clip(clip)?;
        Ok(motion_statistics(clip).dot(&self.projection))
    }
}

impl Default for DeterministicFeatures {
    fn default() -> Self {
        Self::new(DEFAULT_FEATURE_DIM, PROJECTION_SEED)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    Deterministic,
    Learned,
}

pub fn extract_motion_features(
    clip: &MotionClip,
    mode: FeatureMode,
    evaluator: Option<&Evaluator>,
) -> Result<Array1<f64>> {
    match mode {
        FeatureMode::Deterministic => DeterministicFeatures::default().extract(clip),
        FeatureMode::Learned => evaluator
            .ok_or_else(|| Error::Metric("learned features need an evaluator".into()))?
            .encode_motion(clip),
    }
}

/// Stacks per-clip features into an N x d matrix.
pub fn feature_matrix(
    clips: &[&MotionClip],
    extract: impl Fn(&MotionClip) -> Result<Array1<f64>>,
) -> Result<Array2<f64>> {
    let rows = clips
        .iter()
        .map(|c| extract(c))
        .collect::<Result<Vec<_>>>()?;
    stack_rows(&rows)
}

fn stack_rows(rows: &[Array1<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::Metric(e.to_string()))
}

fn to_matrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn covariance(x: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (x.nrows() as f64 - 1.0);
    (mean, cov)
}

/// Square root of a symmetric positive semi-definite matrix; eigenvalues
/// below zero are clipped.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussian fits of two feature sets (rows).
pub fn fid(real: &Array2<f64>, generated: &Array2<f64>) -> Result<f64> {
    if real.nrows() < 2 || generated.nrows() < 2 {
        return Err(Error::Metric("FID needs at least 2 samples per set".into()));
    }
    if real.ncols() != generated.ncols() {
        return Err(Error::Metric(format!(
            "feature dimensions differ: {} vs {}",
            real.ncols(),
            generated.ncols()
        )));
    }
    let (mr, cr) = covariance(real);
    let (mg, cg) = covariance(generated);
    let mean_term: f64 = (&mr - &mg).mapv(|v| v * v).sum();
    let (cr, cg) = (to_matrix(&cr), to_matrix(&cg));
    // Tr((Cr Cg)^1/2) = Tr((Cr^1/2 Cg Cr^1/2)^1/2), a symmetric PSD product.
    let root_r = psd_sqrt(&cr);
    let inner = &root_r * &cg * &root_r;
    let sym = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    // Round-off can leave identical sets a hair below zero.
    Ok((mean_term + cr.trace() + cg.trace() - 2.0 * cross).max(0.0))
}

fn l2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean distance over `pairs` disjoint random pairs of rows.
pub fn diversity(feats: &Array2<f64>, pairs: usize, seed: u64) -> Result<f64> {
    if pairs == 0 || feats.nrows() < 2 * pairs {
        return Err(Error::Metric(format!(
            "diversity over {pairs} pairs needs at least {} features, got {}",
            2 * pairs,
            feats.nrows()
        )));
    }
    let mut idx: Vec<usize> = (0..feats.nrows()).collect();
    idx.shuffle(&mut seeded(seed));
    let total: f64 = idx[..2 * pairs]
        .chunks(2)
        .map(|p| l2(feats.row(p[0]), feats.row(p[1])))
        .sum();
    Ok(total / pairs as f64)
}

/// Mean over texts of the mean pairwise distance among that text's
/// generations. Every pair is used, so no sampling seed is involved.
pub fn multimodality(per_text: &BTreeMap<String, Array2<f64>>) -> Result<f64> {
    if per_text.is_empty() {
        return Err(Error::Metric(
            "multimodality needs at least one text".into(),
        ));
    }
    let mut total = 0.0;
    for (text, feats) in per_text {
        let n = feats.nrows();
        if n < 2 {
            return Err(Error::Metric(format!(
                "text `{text}` has {n} generation(s); need at least 2"
            )));
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += l2(feats.row(i), feats.row(j));
            }
        }
        total += sum / (n * (n - 1) / 2) as f64;
    }
    Ok(total / per_text.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub r_precision_top3: f64,
    pub multimodal_dist: f64,
}

/// R-precision (top 3) and multimodal distance on precomputed features.
///
/// `motion` row `i` belongs to text `text_ids[i]`, a row of `texts`. Each
/// motion is ranked against its own text plus `pool_size - 1` distinct
/// other texts drawn at random; a hit means fewer than 3 candidates lie
/// strictly closer than the true text.
pub fn r_precision_features(
    motion: &Array2<f64>,
    text_ids: &[usize],
    texts: &Array2<f64>,
    pool_size: usize,
    seed: u64,
) -> Result<RetrievalScores> {
    if motion.nrows() == 0 || motion.nrows() != text_ids.len() {
        return Err(Error::Metric("need one text id per motion feature".into()));
    }
    if motion.ncols() != texts.ncols() {
        return Err(Error::Metric(
            "motion and text feature dimensions differ".into(),
        ));
    }
    if pool_size < 2 || texts.nrows() < pool_size {
        return Err(Error::Metric(format!(
            "pool of {pool_size} needs at least that many distinct texts, got {}",
            texts.nrows()
        )));
    }
    if text_ids.iter().any(|&t| t >= texts.nrows()) {
        return Err(Error::Metric("text id out of range".into()));
    }
    let mut rng = seeded(seed);
    let mut hits = 0usize;
    let mut dist_sum = 0.0;
    for (i, &truth) in text_ids.iter().enumerate() {
        let m = motion.row(i);
        let d_true = l2(m, texts.row(truth));
        dist_sum += d_true;
        let others: Vec<usize> = (0..texts.nrows()).filter(|&t| t != truth).collect();
        let closer = others
            .choose_multiple(&mut rng, pool_size - 1)
            .filter(|&&t| l2(m, texts.row(t)) < d_true)
            .count();
        if closer < 3 {
            hits += 1;
        }
    }
    let n = text_ids.len() as f64;
    Ok(RetrievalScores {
        r_precision_top3: hits as f64 / n,
        multimodal_dist: dist_sum / n,
    })
}

/// Distinct texts in first-appearance order and each item's index into them.
pub fn index_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> (Vec<String>, Vec<usize>) {
    let mut distinct: Vec<String> = Vec::new();
    let mut lookup: BTreeMap<&str, usize> = BTreeMap::new();
    let mut ids = Vec::new();
    for t in texts {
        let id = *lookup.entry(t).or_insert_with(|| {
            distinct.push(t.to_string());
            distinct.len() - 1
        });
        ids.push(id);
    }
    (distinct, ids)
}

pub fn r_precision_and_mmdist(
    pairs: &[(String, MotionClip)],
    evaluator: &Evaluator,
    pool_size: usize,
    seed: u64,
) -> Result<RetrievalScores> {
    let (distinct, ids) = index_texts(pairs.iter().map(|(t, _)| t.as_str()));
    let clips: Vec<&MotionClip> = pairs.iter().map(|(_, c)| c).collect();
    let motion = feature_matrix(&clips, |c| evaluator.encode_motion(c))?;
    let texts = stack_rows(
        &distinct
            .iter()
            .map(|t| evaluator.encode_text(t))
            .collect::<Vec<_>>(),
    )?;
    r_precision_features(&motion, &ids, &texts, pool_size, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub text_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub temperature: f64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig {
            text_dim: 64,
            hidden: 128,
            feature_dim: DEFAULT_FEATURE_DIM,
            temperature: 0.1,
        }
    }
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.text_dim == 0 || self.hidden == 0 || self.feature_dim == 0 {
            return Err(Error::Config("evaluator sizes must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(
                "evaluator temperature must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Contrastive text-motion encoder pair with unit-norm outputs.
///
/// Motion: per-frame Linear, GELU, mean over frames, Linear.
/// Text: hash embedding, Linear, GELU, Linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    pub config: EvaluatorConfig,
    pub frame_in: Linear,
    pub motion_out: Linear,
    pub text_in: Linear,
    pub text_out: Linear,
}

struct EncoderCache {
    input: Array2<f32>,
    pre: Array2<f32>,
    pooled: Array2<f32>,
    raw: Array1<f64>,
}

fn normalize(raw: &Array1<f64>) -> Array1<f64> {
    let n = raw.dot(raw).sqrt().max(1e-12);
    raw / n
}

/// Gradient through `y = x / |x|`.
fn normalize_backward(raw: &Array1<f64>, dy: ArrayView1<f64>) -> Array1<f64> {
    let n = raw.dot(raw).sqrt().max(1e-12);
    let y = raw / n;
    (&dy - &(&y * y.dot(&dy))) / n
}

impl Evaluator {
    pub fn new(config: EvaluatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        Ok(Evaluator {
            config,
            frame_in: Linear::new(FEATURE_DIM, config.hidden, &mut rng),
            motion_out: Linear::new(config.hidden, config.feature_dim, &mut rng),
            text_in: Linear::new(config.text_dim, config.hidden, &mut rng),
            text_out: Linear::new(config.hidden, config.feature_dim, &mut rng),
        })
    }

    fn motion_forward(&self, clip: &MotionClip) -> Result<EncoderCache> {
        if clip.dim() != FEATURE_DIM || clip.n_frames() == 0 {
            return Err(Error::Shape(format!(
                "cannot encode a {:?} clip",
                clip.frames().dim()
            )));
        }
        let input = clip.frames().clone();
        let pre = self.frame_in.forward(input.view());
        let pooled = gelu(&pre)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        let raw = self
            .motion_out
            .forward(pooled.view())
            .row(0)
            .mapv(f64::from);
        Ok(EncoderCache {
            input,
            pre,
            pooled,
            raw,
        })
    }

    fn text_forward(&self, text: &str) -> EncoderCache {
        let input = embed_text(text, self.config.text_dim).as_row().to_owned();
        let pre = self.text_in.forward(input.view());
        let pooled = gelu(&pre);
        let raw = self.text_out.forward(pooled.view()).row(0).mapv(f64::from);
        EncoderCache {
            input,
            pre,
            pooled,
            raw,
        }
    }

    pub fn encode_motion(&self, clip: &MotionClip) -> Result<Array1<f64>> {
        Ok(normalize(&self.motion_forward(clip)?.raw))
    }

    pub fn encode_text(&self, text: &str) -> Array1<f64> {
        normalize(&self.text_forward(text).raw)
    }

    fn motion_backward(&mut self, cache: &EncoderCache, dfeat: ArrayView1<f64>) {
        let draw = normalize_backward(&cache.raw, dfeat)
            .mapv(|v| v as f32)
            .insert_axis(Axis(0));
        let dpooled = self.motion_out.backward(cache.pooled.view(), draw.view());
        let frames = cache.input.nrows();
        let dact = Array2::from_shape_fn((frames, dpooled.ncols()), |(_, j)| {
            dpooled[[0, j]] / frames as f32
        });
        let dpre = gelu_backward(&cache.pre, dact.view());
        self.frame_in
            .backward_params(cache.input.view(), dpre.view());
    }

    fn text_backward(&mut self, cache: &EncoderCache, dfeat: ArrayView1<f64>) {
        let draw = normalize_backward(&cache.raw, dfeat)
            .mapv(|v| v as f32)
            .insert_axis(Axis(0));
        let dact = self.text_out.backward(cache.pooled.view(), draw.view());
        let dpre = gelu_backward(&cache.pre, dact.view());
        self.text_in
            .backward_params(cache.input.view(), dpre.view());
    }

    /// Symmetric in-batch contrastive loss; accumulates gradients when
    /// `train` is set.
    pub fn contrastive_step(&mut self, batch: &[(&str, &MotionClip)], train: bool) -> Result<f64> {
        let b = batch.len();
        if b < 2 {
            return Err(Error::Metric(
                "contrastive batch needs at least 2 pairs".into(),
            ));
        }
        let tau = self.config.temperature;
        let mc: Vec<EncoderCache> = batch
            .iter()
            .map(|(_, c)| self.motion_forward(c))
            .collect::<Result<_>>()?;
        let tc: Vec<EncoderCache> = batch.iter().map(|(t, _)| self.text_forward(t)).collect();
        let m = stack_rows(&mc.iter().map(|c| normalize(&c.raw)).collect::<Vec<_>>())?;
        let t = stack_rows(&tc.iter().map(|c| normalize(&c.raw)).collect::<Vec<_>>())?;
        let logits = m.dot(&t.t()) / tau;
        let (loss_r, prob_r) = cross_entropy_diag(&logits);
        let (loss_c, prob_c) = cross_entropy_diag(&logits.t().to_owned());
        let loss = 0.5 * (loss_r + loss_c);
        if train {
            let eye = Array2::<f64>::eye(b);
            let dlogits = ((&prob_r - &eye) + (&prob_c - &eye).t()) * (0.5 / b as f64);
            let dm = dlogits.dot(&t) / tau;
            let dt = dlogits.t().dot(&m) / tau;
            for i in 0..b {
                self.motion_backward(&mc[i], dm.row(i));
                self.text_backward(&tc[i], dt.row(i));
            }
        }
        Ok(loss)
    }
}

/// Mean cross-entropy of each row against its diagonal entry, with the
/// row-wise softmax.
fn cross_entropy_diag(logits: &Array2<f64>) -> (f64, Array2<f64>) {
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (i, mut row) in probs.outer_iter_mut().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        loss += z.ln() + max - logits[[i, i]];
        row /= z;
    }
    (loss / logits.nrows() as f64, probs)
}

impl Module for Evaluator {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.frame_in.params();
        p.extend(self.motion_out.params());
        p.extend(self.text_in.params());
        p.extend(self.text_out.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.frame_in.params_mut();
        p.extend(self.motion_out.params_mut());
        p.extend(self.text_in.params_mut());
        p.extend(self.text_out.params_mut());
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorTraining {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

/// Trains the evaluator on (text, clip) pairs. Each batch holds distinct
/// texts so no in-batch negative shares the positive's text. Returns the
/// per-step losses.
pub fn train_evaluator(
    evaluator: &mut Evaluator,
    data: &[(String, MotionClip)],
    training: &EvaluatorTraining,
) -> Result<Vec<f64>> {
    let (distinct, ids) = index_texts(data.iter().map(|(t, _)| t.as_str()));
    if distinct.len() < 2 {
        return Err(Error::Metric(
            "evaluator training needs at least 2 distinct texts".into(),
        ));
    }
    let mut by_text: Vec<Vec<usize>> = vec![Vec::new(); distinct.len()];
    for (i, &t) in ids.iter().enumerate() {
        by_text[t].push(i);
    }
    let batch = training.batch_size.clamp(2, distinct.len());
    let mut opt = AdamW::new(training.learning_rate, 0.0);
    let mut losses = Vec::with_capacity(training.steps);
    let text_ids: Vec<usize> = (0..distinct.len()).collect();
    for step in 0..training.steps {
        let mut rng = seeded(derive_seed(training.seed, step as u64));
        let chosen: Vec<(&str, &MotionClip)> = text_ids
            .choose_multiple(&mut rng, batch)
            .map(|&t| {
                let i = by_text[t][rng.random_range(0..by_text[t].len())];
                (data[i].0.as_str(), &data[i].1)
            })
            .collect();
        evaluator.zero_grad();
        let loss = evaluator.contrastive_step(&chosen, true)?;
        if !loss.is_finite() {
            return Err(Error::Metric(format!(
                "non-finite evaluator loss at step {step}"
            )));
        }
        let mut params = evaluator.params_mut();
        clip_grad_norm(&mut params, 1.0);
        opt.step(&mut params);
        losses.push(loss);
    }
    Ok(losses)
}

/// Fraction of clips whose nearest text among all distinct texts is
/// their own.
pub fn retrieval_accuracy(evaluator: &Evaluator, data: &[(String, MotionClip)]) -> Result<f64> {
    let (distinct, ids) = index_texts(data.iter().map(|(t, _)| t.as_str()));
    let texts: Vec<Array1<f64>> = distinct.iter().map(|t| evaluator.encode_text(t)).collect();
    let mut hits = 0usize;
    for ((_, clip), &truth) in data.iter().zip(&ids) {
        let m = evaluator.encode_motion(clip)?;
        let best = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (i, l2(m.view(), t.view())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i);
        if best == Some(truth) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub mean: f64,
    /// Half-width of the 95% interval over repetitions.
    pub interval: f64,
}

impl MetricValue {
    fn from_runs(runs: &[f64]) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let interval = if runs.len() > 1 {
            let var = runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * var.sqrt() / n.sqrt()
        } else {
            0.0
        };
        MetricValue { mean, interval }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub fid: MetricValue,
    pub r_precision_top3: MetricValue,
    pub multimodal_dist: MetricValue,
    pub diversity: MetricValue,
    pub multimodality: MetricValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: MetricSummary,
    pub real_count: usize,
    pub generated_count: usize,
    pub pool_size: usize,
    pub diversity_pairs: usize,
    /// Texts with at least two generations.
    pub multimodality_texts: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub repetitions: usize,
    pub pool_size: usize,
    pub diversity_pairs: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            repetitions: 5,
            pool_size: DEFAULT_POOL_SIZE,
            diversity_pairs: DEFAULT_DIVERSITY_PAIRS,
            seed: 0,
        }
    }
}

/// Runs the five metrics in the evaluator's feature space.
///
/// FID and multimodality use every sample and do not vary across
/// repetitions; diversity and R-precision redraw their pairs and pools with
/// a fresh seed per repetition. The pool and the number of diversity pairs
/// shrink to what the data supports.
pub fn evaluate_suite(
    real: &[&MotionClip],
    generated: &[(String, MotionClip)],
    evaluator: &Evaluator,
    config: &SuiteConfig,
) -> Result<MetricReport> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::Metric(
            "evaluation needs real and generated clips".into(),
        ));
    }
    if config.repetitions == 0 {
        return Err(Error::Metric("need at least one repetition".into()));
    }
    let real_feats = feature_matrix(real, |c| evaluator.encode_motion(c))?;
    let gen_clips: Vec<&MotionClip> = generated.iter().map(|(_, c)| c).collect();
    let gen_feats = feature_matrix(&gen_clips, |c| evaluator.encode_motion(c))?;
    let (distinct, ids) = index_texts(generated.iter().map(|(t, _)| t.as_str()));
    let text_feats = stack_rows(
        &distinct
            .iter()
            .map(|t| evaluator.encode_text(t))
            .collect::<Vec<_>>(),
    )?;

    let fid_value = fid(&real_feats, &gen_feats)?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (t, _)) in generated.iter().enumerate() {
        groups.entry(t.clone()).or_default().push(i);
    }
    let per_text: BTreeMap<String, Array2<f64>> = groups
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(t, v)| (t, gen_feats.select(Axis(0), &v)))
        .collect();
    let mm = if per_text.is_empty() {
        0.0
    } else {
        multimodality(&per_text)?
    };
    let pool = config.pool_size.min(distinct.len());
    let pairs = config.diversity_pairs.min(gen_feats.nrows() / 2);

    let (mut rp, mut mmd, mut div) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..config.repetitions {
        let seed = derive_seed(config.seed, r as u64);
        if pool >= 2 {
            let s = r_precision_features(&gen_feats, &ids, &text_feats, pool, seed)?;
            rp.push(s.r_precision_top3);
            mmd.push(s.multimodal_dist);
        } else {
            rp.push(1.0);
            let d: f64 = ids
                .iter()
                .enumerate()
                .map(|(i, &t)| l2(gen_feats.row(i), text_feats.row(t)))
                .sum();
            mmd.push(d / ids.len() as f64);
        }
        div.push(if pairs > 0 {
            diversity(&gen_feats, pairs, derive_seed(seed, 1))?
        } else {
            0.0
        });
    }
    let fixed = |v: f64| MetricValue {
        mean: v,
        interval: 0.0,
    };
    Ok(MetricReport {
        metrics: MetricSummary {
            fid: fixed(fid_value),
            r_precision_top3: MetricValue::from_runs(&rp),
            multimodal_dist: MetricValue::from_runs(&mmd),
            diversity: MetricValue::from_runs(&div),
            multimodality: fixed(mm),
        },
        real_count: real.len(),
        generated_count: generated.len(),
        pool_size: pool,
        diversity_pairs: pairs,
        multimodality_texts: per_text.len(),
        repetitions: config.repetitions,
        seed: config.seed,
    })
}
