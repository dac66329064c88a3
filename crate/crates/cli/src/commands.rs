use std::fmt::Write as _;

use amd_core::checkpoint::{load_checkpoint, Checkpoint, DenoiserEntry, DiffusionSettings};
use amd_core::corpus::{
    generate_corpus, load_corpus, save_corpus, split_corpus, CorpusConfig, CorpusRecord,
    DEFAULT_SPLIT, META_FILE,
};
use amd_core::metrics::{evaluate_suite, EvaluatorTraining, SuiteConfig, DEFAULT_DIVERSITY_PAIRS};
use amd_core::motion::{MotionClip, SkeletonSpec};
use amd_core::rng::derive_seed;
use amd_core::sampler::{
    default_window, infill_stitch, sample_joint, sample_long, sample_segment, segment_frames,
    stitch_interp, PromptSequence, SegmentRequest, TrainedDenoiser,
};
use amd_core::sequence::{
    export_positions, load_sequence, SegmentMeta, SequenceFile, SequenceMeta,
};
use amd_core::trainer::{
    smoothed_tail, train_denoiser, train_duration, train_evaluator, TrainConfig, TrainingSet,
};

use crate::fsio::{read_text, replace_dir_atomic, write_atomic};
use crate::{
    Command, Component, EvalArgs, ExportArgs, ExportFormat, Failure, GenCorpusArgs, SampleArgs,
    SplitChoice, StitchArgs, StitchMode, TrainArgs,
};

type Outcome = Result<String, Failure>;

pub(crate) fn dispatch(command: Command) -> Outcome {
    match command {
        Command::GenCorpus(a) => gen_corpus(&a),
        Command::Train(a) => train(&a),
        Command::Sample(a) => sample(&a),
        Command::Stitch(a) => stitch(&a),
        Command::Eval(a) => eval(&a),
        Command::Export(a) => export(&a),
    }
}

fn gen_corpus(a: &GenCorpusArgs) -> Outcome {
    let config = CorpusConfig {
        fps: a.fps,
        ..CorpusConfig::new(a.clips, a.seed)
    };
    let corpus = generate_corpus(&config)?;
    replace_dir_atomic(&a.out, META_FILE, |tmp| Ok(save_corpus(&corpus, tmp)?))?;
    Ok(format!(
        "wrote {} clips to {} (fingerprint {})",
        corpus.len(),
        a.out.display(),
        corpus.fingerprint()
    ))
}

fn train(a: &TrainArgs) -> Outcome {
    let config = TrainConfig::parse(&read_text(&a.config)?)?;
    let corpus = load_corpus(&a.corpus)?;
    let fingerprint = corpus.fingerprint();
    let mut ckpt = if a.component != Component::All && a.out.exists() {
        let existing = load_checkpoint(&a.out)?;
        if existing
            .corpus_fingerprint
            .as_deref()
            .is_some_and(|f| f != fingerprint)
        {
            return Err(Failure::Runtime(format!(
                "{} was trained on a different corpus; write to a new checkpoint",
                a.out.display()
            )));
        }
        existing
    } else {
        Checkpoint::default()
    };
    ckpt.corpus_fingerprint = Some(fingerprint);
    ckpt.train_config = Some(config);

    let records: Vec<&CorpusRecord> = match a.split {
        SplitChoice::All => corpus.records.iter().collect(),
        SplitChoice::Train => split_corpus(&corpus, DEFAULT_SPLIT, config.seed)?
            .train
            .iter()
            .filter_map(|id| corpus.get(id))
            .collect(),
    };
    let wants = |c: Component| a.component == c || a.component == Component::All;
    let mut summary = String::new();

    if wants(Component::Denoiser) {
        let data = TrainingSet::new(records.clone(), &corpus.records)?;
        let (model, history) = train_denoiser(&data, &config)?;
        let first = history.first().copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            summary,
            "denoiser: {} steps on {} records, loss {first:.5} -> {:.5}",
            history.len(),
            data.len(),
            smoothed_tail(&history, 50)
        );
        ckpt.denoiser = Some(DenoiserEntry {
            model,
            diffusion: DiffusionSettings::from(&config),
        });
    }
    if wants(Component::Duration) {
        let data: Vec<(String, usize)> = records
            .iter()
            .map(|r| (r.text.clone(), r.clip.n_frames()))
            .collect();
        let outcome = train_duration(
            &data,
            config.duration_config(),
            config.duration_steps,
            config.duration_learning_rate,
            derive_seed(config.seed, 1),
        )?;
        let _ = writeln!(
            summary,
            "duration: {} steps, train accuracy {:.3}",
            outcome.losses.len(),
            outcome.accuracy.last().copied().unwrap_or(0.0)
        );
        ckpt.duration = Some(outcome.predictor);
    }
    if wants(Component::Evaluator) {
        let training = EvaluatorTraining {
            steps: config.evaluator_steps,
            batch_size: config.batch_size,
            learning_rate: config.evaluator_learning_rate,
            seed: derive_seed(config.seed, 2),
        };
        let (evaluator, losses) = train_evaluator(&records, config.evaluator_config(), &training)?;
        let _ = writeln!(
            summary,
            "evaluator: {} steps, contrastive loss {:.5}",
            losses.len(),
            smoothed_tail(&losses, 20)
        );
        ckpt.evaluator = Some(evaluator);
    }
    write_atomic(&a.out, &ckpt.to_bytes())?;
    let _ = write!(summary, "wrote {}", a.out.display());
    Ok(summary)
}

/// Non-empty lines of a prompts file, trimmed. Lines starting with `#` are
/// comments.
pub fn parse_prompts(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

fn read_prompts(path: &std::path::Path) -> Result<Vec<String>, Failure> {
    let prompts = parse_prompts(&read_text(path)?);
    if prompts.is_empty() {
        return Err(Failure::Runtime(format!(
            "{} holds no prompts",
            path.display()
        )));
    }
    Ok(prompts)
}

fn segment_meta(prompt: &str, seed: u64, clip: &MotionClip) -> SegmentMeta {
    SegmentMeta {
        prompt: prompt.to_owned(),
        seed,
        frames: clip.n_frames(),
    }
}

/// Generates a sequence for `prompts` with the given stitching method.
///
/// `auto` conditions each segment on the previous one. `joint` generates
/// consecutive pairs as one clip from the joined text. `interp` and `infill`
/// generate segments independently; `interp` cross-fades them into a single
/// clip, `infill` regenerates a window around each junction and keeps one
/// segment per prompt.
pub fn stitch_sequence(
    mode: StitchMode,
    ckpt: &Checkpoint,
    prompts: &[String],
    frames: Option<usize>,
    seed: u64,
    guidance: Option<f32>,
) -> Result<SequenceFile, amd_core::Error> {
    let entry = ckpt.require_denoiser()?;
    let model = TrainedDenoiser {
        model: &entry.model,
        steps: entry.diffusion.steps,
    };
    let sched = entry.diffusion.schedule()?;
    let durations = ckpt.duration.as_ref();
    let sequence = PromptSequence {
        prompts: prompts.to_vec(),
        frames: vec![frames; prompts.len()],
    };
    sequence.validate()?;
    let lengths: Vec<usize> = prompts
        .iter()
        .map(|p| segment_frames(p, frames, durations))
        .collect::<Result<_, _>>()?;
    let independent = || -> Result<Vec<(u64, MotionClip)>, amd_core::Error> {
        prompts
            .iter()
            .zip(&lengths)
            .enumerate()
            .map(|(i, (p, &n))| {
                let s = derive_seed(seed, i as u64);
                Ok((
                    s,
                    sample_segment(&SegmentRequest::first(p, n), &model, &sched, s, guidance)?,
                ))
            })
            .collect()
    };

    let (segments, clips): (Vec<SegmentMeta>, Vec<MotionClip>) = match mode {
        StitchMode::Auto => {
            let generated = sample_long(&sequence, &model, &sched, durations, seed, guidance)?;
            generated
                .segments
                .into_iter()
                .map(|s| (segment_meta(&s.prompt, s.seed, &s.clip), s.clip))
                .unzip()
        }
        StitchMode::Joint => {
            let mut out = Vec::new();
            for (i, pair) in prompts.chunks(2).enumerate() {
                let s = derive_seed(seed, i as u64);
                let (text, clip) = match pair {
                    [a, b] => {
                        let total = lengths[2 * i] + lengths[2 * i + 1];
                        let clip = sample_joint((a, b), total, &model, &sched, s, guidance)?;
                        (format!("{a} {b}"), clip)
                    }
                    [a] => {
                        let req = SegmentRequest::first(a, lengths[2 * i]);
                        (
                            a.clone(),
                            sample_segment(&req, &model, &sched, s, guidance)?,
                        )
                    }
                    _ => unreachable!("chunks of two"),
                };
                out.push((segment_meta(&text, s, &clip), clip));
            }
            out.into_iter().unzip()
        }
        StitchMode::Interp => {
            let parts = independent()?;
            let mut iter = parts.into_iter().map(|(_, c)| c);
            let mut acc = iter.next().expect("at least one prompt");
            let mut last_len = acc.n_frames();
            for next in iter {
                let window = default_window(last_len + next.n_frames());
                last_len = next.n_frames();
                acc = stitch_interp(&acc, &next, window)?;
            }
            (
                vec![segment_meta(&prompts.join(" "), seed, &acc)],
                vec![acc],
            )
        }
        StitchMode::Infill => {
            let mut parts = independent()?;
            let n = parts.len();
            for i in 0..n.saturating_sub(1) {
                let fa = parts[i].1.n_frames();
                let joined = infill_stitch(
                    &parts[i].1,
                    &parts[i + 1].1,
                    &model,
                    &sched,
                    derive_seed(seed, (n + i) as u64),
                )?;
                parts[i].1 = joined.slice(0..fa);
                parts[i + 1].1 = joined.slice(fa..joined.n_frames());
            }
            parts
                .into_iter()
                .zip(prompts)
                .map(|((s, c), p)| (segment_meta(p, s, &c), c))
                .unzip()
        }
    };
    let fps = clips[0].fps();
    Ok(SequenceFile {
        meta: SequenceMeta {
            mode: mode.name().into(),
            fps,
            seed,
            guidance,
            prompts: prompts.to_vec(),
            segments,
        },
        clips,
    })
}

fn generate(
    mode: StitchMode,
    ckpt_path: &std::path::Path,
    prompts_path: &std::path::Path,
    out: &std::path::Path,
    frames: Option<usize>,
    seed: u64,
    guidance: Option<f32>,
) -> Outcome {
    let ckpt = load_checkpoint(ckpt_path)?;
    let prompts = read_prompts(prompts_path)?;
    let seq = stitch_sequence(mode, &ckpt, &prompts, frames, seed, guidance)?;
    write_atomic(out, &seq.to_bytes())?;
    Ok(format!(
        "{}: {} segments, {} frames ({:?}), wrote {}",
        mode.name(),
        seq.clips.len(),
        seq.total_frames(),
        seq.meta
            .segments
            .iter()
            .map(|s| s.frames)
            .collect::<Vec<_>>(),
        out.display()
    ))
}

fn sample(a: &SampleArgs) -> Outcome {
    generate(
        StitchMode::Auto,
        &a.ckpt,
        &a.prompts,
        &a.out,
        a.frames,
        a.seed,
        a.guidance,
    )
}

fn stitch(a: &StitchArgs) -> Outcome {
    generate(
        a.mode, &a.ckpt, &a.prompts, &a.out, a.frames, a.seed, a.guidance,
    )
}

fn eval(a: &EvalArgs) -> Outcome {
    if a.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    let ckpt = load_checkpoint(&a.ckpt)?;
    let evaluator = ckpt.require_evaluator()?;
    let corpus = load_corpus(&a.corpus)?;
    if ckpt.check_fingerprint(&corpus.fingerprint()).is_err() {
        log::warn!("evaluating against a corpus the checkpoint was not trained on");
    }
    let mut generated = Vec::new();
    for path in &a.generated {
        let seq = load_sequence(path)?;
        for (meta, clip) in seq.meta.segments.iter().zip(seq.clips) {
            generated.push((meta.prompt.clone(), clip));
        }
    }
    let real: Vec<&MotionClip> = corpus.records.iter().map(|r| &r.clip).collect();
    let config = SuiteConfig {
        repetitions: a.reps,
        pool_size: a.pool,
        diversity_pairs: DEFAULT_DIVERSITY_PAIRS,
        seed: a.seed,
    };
    let report = evaluate_suite(&real, &generated, evaluator, &config)?;
    let mut json = report.to_json();
    json.push('\n');
    write_atomic(&a.out, json.as_bytes())?;
    let m = &report.metrics;
    Ok(format!(
        "FID {:.4} | R-precision@3 {:.4} +- {:.4} | MM-dist {:.4} | diversity {:.4} | multimodality {:.4}\nwrote {}",
        m.fid.mean,
        m.r_precision_top3.mean,
        m.r_precision_top3.interval,
        m.multimodal_dist.mean,
        m.diversity.mean,
        m.multimodality.mean,
        a.out.display()
    ))
}

fn export(a: &ExportArgs) -> Outcome {
    let seq = load_sequence(&a.input)?;
    match a.format {
        ExportFormat::Positions => {
            let export = export_positions(&seq, &SkeletonSpec::default())?;
            let mut json = serde_json::to_string(&export)
                .map_err(|e| Failure::Runtime(format!("serializing positions: {e}")))?;
            json.push('\n');
            write_atomic(&a.out, json.as_bytes())?;
            Ok(format!(
                "exported {} frames x {} joints to {}",
                export.frames,
                export.joints,
                a.out.display()
            ))
        }
    }
}
