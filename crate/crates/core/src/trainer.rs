//! Training loops for the denoiser, the duration predictor and the
//! evaluator, and the flat `key = value` training configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{
    embed_text, frames_to_class, DurationConfig, DurationPredictor, SegmentContext,
    DURATION_CLASSES, DURATION_MIN_CLASS,
};
use crate::corpus::CorpusRecord;
use crate::denoiser::{init_denoiser, Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::losses::{loss_and_gradient, LossWeights};
use crate::metrics::{
    train_evaluator as fit_evaluator, Evaluator, EvaluatorConfig, EvaluatorTraining,
};
use crate::motion::{MotionClip, SkeletonSpec, FEATURE_DIM};
use crate::nn::{clip_grad_norm, AdamW, Module};
use crate::rng::{derive_seed, seeded, standard_normal};
use crate::schedule::{q_sample_array, NoiseSchedule};

/// Global gradient norm bound applied before every optimizer step.
pub const GRAD_CLIP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Desk,
}

impl Preset {
    pub fn denoiser(self) -> DenoiserConfig {
        match self {
            Preset::Full => DenoiserConfig::full(),
            Preset::Desk => DenoiserConfig::desk(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "paper",
            Preset::Desk => "desk",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub weight_decay: f32,
    pub seed: u64,
    pub loss: LossWeights,
    /// Probability of dropping the current text during training.
    pub p_mask: f64,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub preset: Preset,
    pub duration_steps: usize,
    pub duration_learning_rate: f32,
    pub evaluator_steps: usize,
    pub evaluator_learning_rate: f32,
}

/// Every key a config file must define, in canonical order.
pub const CONFIG_KEYS: [&str; 19] = [
    "steps",
    "learning_rate",
    "batch_size",
    "weight_decay",
    "seed",
    "lambda_h",
    "lambda_p",
    "lambda_r",
    "lambda_v",
    "lambda_f",
    "p_mask",
    "diffusion_steps",
    "beta_start",
    "beta_end",
    "preset",
    "duration_steps",
    "duration_learning_rate",
    "evaluator_steps",
    "evaluator_learning_rate",
];

impl TrainConfig {
    /// Full-scale settings: 200k steps at 1e-4, T = 1000.
    pub fn full() -> Self {
        TrainConfig {
            steps: 200_000,
            learning_rate: 1e-4,
            batch_size: 64,
            weight_decay: 0.01,
            seed: 0,
            loss: LossWeights::default(),
            p_mask: 0.1,
            diffusion_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            preset: Preset::Full,
            duration_steps: 5000,
            duration_learning_rate: 1e-3,
            evaluator_steps: 5000,
            evaluator_learning_rate: 1e-4,
        }
    }

    /// Small model and short schedule for runs of a few minutes.
    pub fn desk() -> Self {
        TrainConfig {
            steps: 3000,
            learning_rate: 1e-3,
            batch_size: 16,
            weight_decay: 0.01,
            seed: 0,
            loss: LossWeights::default(),
            p_mask: 0.1,
            diffusion_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            preset: Preset::Desk,
            duration_steps: 1000,
            duration_learning_rate: 1e-2,
            evaluator_steps: 500,
            evaluator_learning_rate: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.p_mask) {
            return bad("p_mask must lie in [0, 1]");
        }
        if !(self.duration_learning_rate >= 0.0 && self.evaluator_learning_rate >= 0.0) {
            return bad("learning rates must be >= 0");
        }
        self.loss.validate()?;
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        self.preset.denoiser()
    }

    pub fn evaluator_config(&self) -> EvaluatorConfig {
        EvaluatorConfig::default()
    }

    pub fn duration_config(&self) -> DurationConfig {
        DurationConfig {
            text_dim: 64,
            hidden: 64,
        }
    }

    /// Parses a `key = value` file. Blank lines and `#` comments are
    /// ignored; every key in [`CONFIG_KEYS`] is required exactly once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !CONFIG_KEYS.contains(&k) {
                return Err(Error::UnknownKey(k.to_string()));
            }
            if map.insert(k, v).is_some() {
                return Err(Error::Config(format!("key `{k}` given twice")));
            }
        }
        if let Some(missing) = CONFIG_KEYS.iter().find(|k| !map.contains_key(*k)) {
            return Err(Error::MissingKey(missing.to_string()));
        }
        fn get<T: FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
            map[key]
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{}` for `{key}`", map[key])))
        }
        let cfg = TrainConfig {
            steps: get(&map, "steps")?,
            learning_rate: get(&map, "learning_rate")?,
            batch_size: get(&map, "batch_size")?,
            weight_decay: get(&map, "weight_decay")?,
            seed: get(&map, "seed")?,
            loss: LossWeights {
                lambda_h: get(&map, "lambda_h")?,
                lambda_p: get(&map, "lambda_p")?,
                lambda_r: get(&map, "lambda_r")?,
                lambda_v: get(&map, "lambda_v")?,
                lambda_f: get(&map, "lambda_f")?,
            },
            p_mask: get(&map, "p_mask")?,
            diffusion_steps: get(&map, "diffusion_steps")?,
            beta_start: get(&map, "beta_start")?,
            beta_end: get(&map, "beta_end")?,
            preset: map["preset"].parse()?,
            duration_steps: get(&map, "duration_steps")?,
            duration_learning_rate: get(&map, "duration_learning_rate")?,
            evaluator_steps: get(&map, "evaluator_steps")?,
            evaluator_learning_rate: get(&map, "evaluator_learning_rate")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("steps", self.steps.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("seed", self.seed.to_string());
        kv("lambda_h", self.loss.lambda_h.to_string());
        kv("lambda_p", self.loss.lambda_p.to_string());
        kv("lambda_r", self.loss.lambda_r.to_string());
        kv("lambda_v", self.loss.lambda_v.to_string());
        kv("lambda_f", self.loss.lambda_f.to_string());
        kv("p_mask", self.p_mask.to_string());
        kv("diffusion_steps", self.diffusion_steps.to_string());
        kv("beta_start", self.beta_start.to_string());
        kv("beta_end", self.beta_end.to_string());
        kv("preset", self.preset.name().to_string());
        kv("duration_steps", self.duration_steps.to_string());
        kv(
            "duration_learning_rate",
            self.duration_learning_rate.to_string(),
        );
        kv("evaluator_steps", self.evaluator_steps.to_string());
        kv(
            "evaluator_learning_rate",
            self.evaluator_learning_rate.to_string(),
        );
        s
    }
}

/// Training examples resolved against their coherent predecessors.
pub struct TrainingSet<'a> {
    pub records: Vec<&'a CorpusRecord>,
    prev: Vec<Option<&'a CorpusRecord>>,
}

impl<'a> TrainingSet<'a> {
    /// `records` are trained on; predecessors are looked up in `all`.
    pub fn new(records: Vec<&'a CorpusRecord>, all: &'a [CorpusRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("empty training split".into()));
        }
        let prev = records
            .iter()
            .map(|r| match &r.prev_id {
                None => Ok(None),
                Some(p) => all.iter().find(|x| &x.id == p).map(Some).ok_or_else(|| {
                    Error::Corpus(format!("record `{}` has missing predecessor `{p}`", r.id))
                }),
            })
            .collect::<Result<_>>()?;
        Ok(TrainingSet { records, prev })
    }

    pub fn all(corpus: &'a [CorpusRecord]) -> Result<Self> {
        Self::new(corpus.iter().collect(), corpus)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Runs `config.steps` optimizer steps on `model` and returns the mean
/// batch loss of each step.
///
/// Step `s` draws its batch from a generator seeded with
/// `derive_seed(config.seed, s)`: per example a record, a timestep
/// `t ~ U{1..T}`, Gaussian noise and a text-mask coin.
pub fn train_denoiser_steps(
    model: &mut Denoiser,
    data: &TrainingSet<'_>,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let sched = config.schedule()?;
    let skeleton = SkeletonSpec::default();
    let dim = model.text_dim();
    let texts: Vec<_> = data
        .records
        .iter()
        .map(|r| embed_text(&r.text, dim))
        .collect();
    let prev_texts: Vec<_> = data
        .prev
        .iter()
        .map(|p| p.map(|p| embed_text(&p.text, dim)))
        .collect();
    let targets: Vec<_> = data.records.iter().map(|r| r.clip.to_f64()).collect();
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut history = Vec::with_capacity(config.steps);
    let scale = 1.0 / config.batch_size as f64;
    for step in 0..config.steps {
        let mut rng = seeded(derive_seed(config.seed, step as u64));
        model.zero_grad();
        let mut total = 0.0;
        for _ in 0..config.batch_size {
            let i = rng.random_range(0..data.len());
            let t = rng.random_range(1..=sched.steps());
            let record = data.records[i];
            let x0 = record.clip.frames();
            let noise = standard_normal(&mut rng, x0.nrows(), FEATURE_DIM);
            let mask = rng.random::<f64>() < config.p_mask;
            let xt = q_sample_array(x0, t, &noise, &sched)?;
            let ctx = SegmentContext {
                prev_motion: data.prev[i].map(|p| &p.clip),
                prev_text: prev_texts[i].as_ref(),
                cur_text: &texts[i],
            };
            let (pred, cache) = model.forward_train(&ctx, &xt, t, mask)?;
            let (loss, grad) = loss_and_gradient(
                pred.mapv(f64::from).view(),
                targets[i].view(),
                &skeleton,
                &config.loss,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    record: record.id.clone(),
                });
            }
            total += loss.total;
            model.backward(&cache, &grad.mapv(|g| (g * scale) as f32));
        }
        let mut params = model.params_mut();
        clip_grad_norm(&mut params, GRAD_CLIP);
        opt.step(&mut params);
        let mean = total * scale;
        if step % 100 == 0 {
            log::info!("denoiser step {step}: loss {mean:.5}");
        }
        history.push(mean);
    }
    Ok(history)
}

/// Fresh denoiser for the configured preset, trained on `data`.
pub fn train_denoiser(
    data: &TrainingSet<'_>,
    config: &TrainConfig,
) -> Result<(Denoiser, Vec<f64>)> {
    let mut model = init_denoiser(config.denoiser_config(), config.seed)?;
    let history = train_denoiser_steps(&mut model, data, config)?;
    Ok((model, history))
}

/// Moving average of the last `window` entries.
pub fn smoothed_tail(history: &[f64], window: usize) -> f64 {
    let w = window.clamp(1, history.len().max(1));
    let tail = &history[history.len().saturating_sub(w)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurationOutcome {
    pub predictor: DurationPredictor,
    pub losses: Vec<f64>,
    /// Train accuracy after each pass over the data.
    pub accuracy: Vec<f64>,
}

/// Cross-entropy training of the duration classifier. Each step is one
/// full pass over the (deduplicated) text-duration pairs.
pub fn train_duration(
    data: &[(String, usize)],
    config: DurationConfig,
    steps: usize,
    learning_rate: f32,
    seed: u64,
) -> Result<DurationOutcome> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let examples: Vec<_> = data
        .iter()
        .map(|(text, frames)| {
            Ok((
                embed_text(text, config.text_dim),
                frames_to_class(*frames)? - DURATION_MIN_CLASS,
            ))
        })
        .collect::<Result<_>>()?;
    let mut predictor = DurationPredictor::new(config.text_dim, config.hidden, &mut seeded(seed));
    let mut opt = AdamW::new(learning_rate, 0.0);
    let accuracy_of = |p: &DurationPredictor| -> Result<f64> {
        let mut hits = 0usize;
        for (text, class) in &examples {
            if p.predict(text)?.argmax_class() - DURATION_MIN_CLASS == *class {
                hits += 1;
            }
        }
        Ok(hits as f64 / examples.len() as f64)
    };
    let mut losses = Vec::with_capacity(steps);
    let mut accuracy = Vec::with_capacity(steps);
    let scale = 1.0 / examples.len() as f32;
    for _ in 0..steps {
        predictor.zero_grad();
        let mut total = 0.0;
        for (text, class) in &examples {
            let (logits, cache) = predictor.forward_train(text)?;
            let max = logits.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
            let e = logits.mapv(|v| f64::from(v - max).exp());
            let z = e.sum();
            total += z.ln() - f64::from(logits[*class] - max);
            let mut d: Array1<f32> = e.mapv(|v| (v / z) as f32);
            d[*class] -= 1.0;
            predictor.backward(&cache, &(d * scale));
        }
        let mut params = predictor.params_mut();
        clip_grad_norm(&mut params, GRAD_CLIP);
        opt.step(&mut params);
        losses.push(total / examples.len() as f64);
        accuracy.push(accuracy_of(&predictor)?);
    }
    debug_assert!(predictor.output.output_dim() == DURATION_CLASSES);
    Ok(DurationOutcome {
        predictor,
        losses,
        accuracy,
    })
}

/// Contrastive evaluator training on the given records.
pub fn train_evaluator(
    records: &[&CorpusRecord],
    config: EvaluatorConfig,
    training: &EvaluatorTraining,
) -> Result<(Evaluator, Vec<f64>)> {
    let mut motifs: Vec<&str> = records.iter().map(|r| r.motif.as_str()).collect();
    motifs.sort_unstable();
    motifs.dedup();
    if motifs.len() < 2 {
        log::warn!("evaluator trained on a single motif class; its features carry no contrast");
    }
    let data: Vec<(String, MotionClip)> = records
        .iter()
        .map(|r| (r.text.clone(), r.clip.clone()))
        .collect();
    let mut evaluator = Evaluator::new(config, training.seed)?;
    let losses = if data
        .iter()
        .map(|d| &d.0)
        .collect::<std::collections::HashSet<_>>()
        .len()
        >= 2
    {
        fit_evaluator(&mut evaluator, &data, training)?
    } else {
        Vec::new()
    };
    Ok((evaluator, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            steps: 3,
            batch_size: 2,
            diffusion_steps: 10,
            preset: Preset::Desk,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = TrainConfig::desk();
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let full = TrainConfig::full();
        assert_eq!(TrainConfig::parse(&full.to_text()).unwrap(), full);
    }

    #[test]
    fn config_errors_name_the_key() {
        let text = TrainConfig::desk().to_text();
        let missing: String = text
            .lines()
            .filter(|l| !l.starts_with("p_mask"))
            .map(|l| format!("{l}\n"))
            .collect();
        match TrainConfig::parse(&missing) {
            Err(Error::MissingKey(k)) => assert_eq!(k, "p_mask"),
            other => panic!("{other:?}"),
        }
        match TrainConfig::parse(&format!("{text}momentum = 0.9\n")) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "momentum"),
            other => panic!("{other:?}"),
        }
        assert!(TrainConfig::parse(&format!("{text}steps = 4\n")).is_err());
        assert!(TrainConfig::parse(&text.replace("preset = desk", "preset = huge")).is_err());
        assert!(TrainConfig::parse(&text.replace("p_mask = 0.1", "p_mask = 1.5")).is_err());
        let commented = format!("# desk run\n\n{text}");
        assert!(TrainConfig::parse(&commented).is_ok());
    }

    #[test]
    fn zero_steps_and_zero_learning_rate_keep_parameters() {
        let corpus = generate_corpus(&CorpusConfig::new(4, 1)).unwrap();
        let data = TrainingSet::all(&corpus.records).unwrap();
        let init = init_denoiser(DenoiserConfig::desk(), 0).unwrap();
        let (model, history) = train_denoiser(
            &data,
            &TrainConfig {
                steps: 0,
                ..tiny_config()
            },
        )
        .unwrap();
        assert!(history.is_empty());
        assert_eq!(model, init);
        let (model, history) = train_denoiser(
            &data,
            &TrainConfig {
                learning_rate: 0.0,
                ..tiny_config()
            },
        )
        .unwrap();
        assert_eq!(history.len(), 3);
        let values = |m: &Denoiser| {
            m.params()
                .iter()
                .map(|p| p.value.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(values(&model), values(&init));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = generate_corpus(&CorpusConfig::new(4, 2)).unwrap();
        let data = TrainingSet::all(&corpus.records).unwrap();
        let (a, ha) = train_denoiser(&data, &tiny_config()).unwrap();
        let (b, hb) = train_denoiser(&data, &tiny_config()).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert!(ha.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn non_finite_input_aborts_with_the_record() {
        let mut corpus = generate_corpus(&CorpusConfig::new(2, 3)).unwrap();
        corpus.records[1].prev_id = None;
        corpus.records[0].clip.frames_mut()[[0, 5]] = f32::NAN;
        let data = TrainingSet::new(vec![&corpus.records[0]], &corpus.records).unwrap();
        match train_denoiser(&data, &tiny_config()) {
            Err(Error::NonFiniteLoss { step, record }) => {
                assert_eq!(step, 0);
                assert_eq!(record, corpus.records[0].id);
            }
            other => panic!("{:?}", other.map(|r| r.1)),
        }
    }

    #[test]
    fn empty_split_is_an_error() {
        let corpus = generate_corpus(&CorpusConfig::new(2, 3)).unwrap();
        assert!(TrainingSet::new(vec![], &corpus.records).is_err());
    }

    #[test]
    fn duration_classes_must_be_representable() {
        let cfg = TrainConfig::desk().duration_config();
        assert!(train_duration(&[("a".into(), 41)], cfg, 1, 1e-2, 0).is_err());
        let out = train_duration(&[("a".into(), 40), ("b".into(), 40)], cfg, 1, 1e-2, 0).unwrap();
        assert_eq!(out.accuracy.len(), 1);
    }

    #[test]
    fn single_class_duration_is_learned_after_one_pass() {
        let cfg = TrainConfig::desk().duration_config();
        let data = vec![
            ("someone waves".to_string(), 64),
            ("a man waves".to_string(), 64),
        ];
        let out = train_duration(&data, cfg, 1, 1e-1, 0).unwrap();
        assert_eq!(out.accuracy[0], 1.0);
    }

    #[test]
    fn single_motif_evaluator_is_a_warning_not_an_error() {
        let mut cfg = CorpusConfig::new(3, 1);
        cfg.motif_set.truncate(1);
        cfg.pair_fraction = 0.0;
        let corpus = generate_corpus(&cfg).unwrap();
        let recs: Vec<&CorpusRecord> = corpus.records.iter().collect();
        let training = EvaluatorTraining {
            steps: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
        };
        assert!(train_evaluator(&recs, EvaluatorConfig::default(), &training).is_ok());
    }
}
