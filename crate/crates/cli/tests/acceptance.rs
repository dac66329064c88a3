//! Acceptance criteria, one line each. Runs as a plain binary so the lines
//! are always printed; exits nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use amd_core::conditioning::{class_to_frames, SegmentContext};
use amd_core::corpus::{default_motifs, generate_corpus, Corpus, CorpusConfig};
use amd_core::denoiser::init_denoiser;
use amd_core::losses::loss_and_gradient;
use amd_core::metrics::{feature_matrix, fid, r_precision_features, DeterministicFeatures};
use amd_core::motion::{junction_gap, MotionClip, SkeletonSpec, FEATURE_DIM};
use amd_core::rng::{derive_seed, seeded, standard_normal};
use amd_core::sampler::{
    infill_stitch, sample_joint, sample_long, sample_segment, segment_frames, CleanPredictor,
    PromptSequence, SegmentRequest, TrainedDenoiser,
};
use amd_core::schedule::{q_sample_array, q_step_array, NoiseSchedule};
use amd_core::trainer::{smoothed_tail, train_denoiser, train_duration, TrainConfig, TrainingSet};
use amd_core::{geometric_losses, Denoiser, DurationPredictor, LossWeights, Result};
use ndarray::Array2;
use rand::Rng;
use sha2::{Digest, Sha256};

const OVERFIT_STEPS: usize = 2000;
const OVERFIT_SAMPLE_SEED: u64 = 77;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Check {
    Check { pass, detail }
}

struct Overfit {
    corpus: Corpus,
    config: TrainConfig,
    trained: Denoiser,
    history: Vec<f64>,
    durations: DurationPredictor,
    sched: NoiseSchedule,
    train_time: Duration,
}

impl Overfit {
    fn build() -> Result<Self> {
        let start = Instant::now();
        let corpus = generate_corpus(&CorpusConfig::new(8, 1))?;
        let config = TrainConfig {
            steps: OVERFIT_STEPS,
            seed: 11,
            ..TrainConfig::desk()
        };
        let (trained, history) = train_denoiser(&TrainingSet::all(&corpus.records)?, &config)?;
        let data: Vec<(String, usize)> = corpus
            .records
            .iter()
            .map(|r| (r.text.clone(), r.clip.n_frames()))
            .collect();
        let durations = train_duration(
            &data,
            config.duration_config(),
            config.duration_steps,
            config.duration_learning_rate,
            3,
        )?
        .predictor;
        let sched = config.schedule()?;
        Ok(Overfit {
            corpus,
            config,
            trained,
            history,
            durations,
            sched,
            train_time: start.elapsed(),
        })
    }

    fn model<'a>(&'a self, m: &'a Denoiser) -> TrainedDenoiser<'a> {
        TrainedDenoiser {
            model: m,
            steps: self.config.diffusion_steps,
        }
    }

    /// One sample per training record with the record's own context.
    fn reproduce_records(&self, m: &Denoiser) -> Result<Vec<MotionClip>> {
        let model = self.model(m);
        self.corpus
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let prev = r.prev_id.as_deref().and_then(|p| self.corpus.get(p));
                let req = SegmentRequest {
                    prev_motion: prev.map(|p| &p.clip),
                    prev_text: prev.map(|p| p.text.as_str()),
                    cur_text: &r.text,
                    frames: r.clip.n_frames(),
                };
                sample_segment(
                    &req,
                    &model,
                    &self.sched,
                    derive_seed(OVERFIT_SAMPLE_SEED, i as u64),
                    None,
                )
            })
            .collect()
    }
}

fn det_features(clips: &[&MotionClip]) -> Result<Array2<f64>> {
    let det = DeterministicFeatures::default();
    feature_matrix(clips, |c| det.extract(c))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// 1 ---------------------------------------------------------------------

fn schedule_conformance() -> Check {
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).expect("full schedule");
    let b1 = s.beta(1).unwrap();
    let bt = s.beta(1000).unwrap();
    let abar = s.alpha_bars();
    let decreasing = abar.windows(2).all(|w| w[1] < w[0]);
    let mut product = 1.0f64;
    let mut worst = 0.0f64;
    for t in 1..=1000 {
        let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0;
        product *= 1.0 - beta;
        worst = worst.max(rel(product, s.alpha_bar(t).unwrap()));
    }
    check(
        b1 == 1e-4 && bt == 0.02 && decreasing && worst <= 1e-12,
        format!(
            "beta_1={b1:e} beta_T={bt} decreasing={decreasing} max rel product error {worst:.2e}"
        ),
    )
}

// 2 ---------------------------------------------------------------------

fn stats(x: &Array2<f32>) -> (f64, f64) {
    let n = x.nrows() as f64;
    let grand = x.iter().map(|&v| f64::from(v)).sum::<f64>() / x.len() as f64;
    let mut var = 0.0;
    for col in x.columns() {
        let m = col.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        var += col.iter().map(|&v| (f64::from(v) - m).powi(2)).sum::<f64>() / (n - 1.0);
    }
    (grand, (var / x.ncols() as f64).sqrt())
}

fn marginal_consistency() -> Check {
    let corpus = generate_corpus(&CorpusConfig::new(2, 5)).unwrap();
    let frame = corpus.records[0].clip.frames().row(10).to_owned();
    let draws = 10_000;
    let x0 = Array2::from_shape_fn((draws, FEATURE_DIM), |(_, c)| frame[c]);
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let mut rng = seeded(21);
    let mut chained = x0.clone();
    for t in 1..=50 {
        let noise = standard_normal(&mut rng, draws, FEATURE_DIM);
        chained = q_step_array(&chained, t, &noise, &s).unwrap();
    }
    let noise = standard_normal(&mut rng, draws, FEATURE_DIM);
    let direct = q_sample_array(&x0, 50, &noise, &s).unwrap();
    let (m1, s1) = stats(&chained);
    let (m2, s2) = stats(&direct);
    let ab = s.alpha_bar(50).unwrap();
    let m_theory =
        ab.sqrt() * frame.iter().map(|&v| f64::from(v)).sum::<f64>() / FEATURE_DIM as f64;
    let s_theory = (1.0 - ab).sqrt();
    let (dm, ds) = (rel(m1, m2), rel(s1, s2));
    check(
        dm <= 0.01 && ds <= 0.01,
        format!(
            "mean {m1:.5} vs {m2:.5} (theory {m_theory:.5}), std {s1:.5} vs {s2:.5} (theory {s_theory:.5}); rel diff {dm:.2e}, {ds:.2e}"
        ),
    )
}

// 3 ---------------------------------------------------------------------

struct FixedOracle(Array2<f32>);

impl CleanPredictor for FixedOracle {
    fn predict_clean(
        &self,
        _: &SegmentContext<'_>,
        _: &Array2<f32>,
        _: usize,
        _: bool,
    ) -> Result<Array2<f32>> {
        Ok(self.0.clone())
    }
    fn max_frames(&self) -> usize {
        400
    }
    fn text_dim(&self) -> usize {
        16
    }
}

fn oracle_fixed_point() -> Check {
    let corpus = generate_corpus(&CorpusConfig::new(2, 9)).unwrap();
    let target = corpus.records[1].clip.clone();
    let oracle = FixedOracle(target.frames().clone());
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let req = SegmentRequest::first("a person waves", target.n_frames());
    let plain = sample_segment(&req, &oracle, &s, 4, None).unwrap();
    let guided = sample_segment(&req, &oracle, &s, 5, Some(2.5)).unwrap();
    check(
        plain == target && guided == target,
        format!(
            "{} frames, exact match unguided={} guided={}",
            target.n_frames(),
            plain == target,
            guided == target
        ),
    )
}

// 4 ---------------------------------------------------------------------

/// World positions from the feature definitions, written out directly.
fn oracle_world(x: &[Vec<f64>]) -> Vec<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    let (mut yaw, mut px, mut pz) = (0.0f64, 0.0f64, 0.0f64);
    for row in x {
        let r = [
            [yaw.cos(), 0.0, yaw.sin()],
            [0.0, 1.0, 0.0],
            [-yaw.sin(), 0.0, yaw.cos()],
        ];
        let apply = |v: [f64; 3]| {
            [
                r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
                r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
                r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
            ]
        };
        let root = [px, row[3], pz];
        let mut joints = vec![root];
        for j in 1..22 {
            let b = 4 + 3 * (j - 1);
            let w = apply([row[b], row[b + 1], row[b + 2]]);
            joints.push([root[0] + w[0], root[1] + w[1], root[2] + w[2]]);
        }
        out.push(joints);
        let v = apply([row[1], 0.0, row[2]]);
        px += v[0];
        pz += v[2];
        yaw += row[0];
    }
    out
}

fn oracle_losses(pred: &[Vec<f64>], gt: &[Vec<f64>], w: &LossWeights) -> [f64; 6] {
    let f = pred.len();
    let mse = |chans: &[usize]| {
        let mut s = 0.0;
        for k in 0..f {
            for &c in chans {
                s += (pred[k][c] - gt[k][c]).powi(2);
            }
        }
        s / (f * chans.len()) as f64
    };
    let height = mse(&[3]);
    let rotation = mse(&(67..193).collect::<Vec<_>>());
    let velocity = mse(&[0, 1, 2].into_iter().chain(193..259).collect::<Vec<_>>());
    let (wp, wg) = (oracle_world(pred), oracle_world(gt));
    let mut position = 0.0;
    for k in 0..f {
        for j in 0..22 {
            for c in 0..3 {
                position += (wp[k][j][c] - wg[k][j][c]).powi(2);
            }
        }
    }
    position /= (f * 66) as f64;
    let feet = [7, 10, 8, 11];
    let mut slide = 0.0;
    if f > 1 {
        for k in 0..f - 1 {
            for (i, &j) in feet.iter().enumerate() {
                let d2: f64 = (0..3)
                    .map(|c| (wp[k + 1][j][c] - wp[k][j][c]).powi(2))
                    .sum();
                slide += gt[k][259 + i] * d2;
            }
        }
        slide /= ((f - 1) * 4) as f64;
    }
    let total = w.lambda_h * height
        + w.lambda_p * position
        + w.lambda_r * rotation
        + w.lambda_v * velocity
        + w.lambda_f * slide;
    [height, position, rotation, velocity, slide, total]
}

fn random_clip(rng: &mut impl Rng, frames: usize) -> MotionClip {
    let data = Array2::from_shape_fn((frames, FEATURE_DIM), |(_, c)| {
        if c >= 259 {
            f32::from(u8::from(rng.random_bool(0.5)))
        } else {
            rng.random_range(-0.5f32..0.5)
        }
    });
    MotionClip::new(data, 20.0)
}

fn rows(c: &MotionClip) -> Vec<Vec<f64>> {
    c.frames()
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect()
}

fn loss_correctness() -> Check {
    let mut rng = seeded(404);
    let sk = SkeletonSpec::default();
    let w = LossWeights {
        lambda_h: 0.7,
        lambda_p: 1.3,
        lambda_r: 0.9,
        lambda_v: 1.1,
        lambda_f: 0.5,
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let f = rng.random_range(1..30);
        let (p, g) = (random_clip(&mut rng, f), random_clip(&mut rng, f));
        let b = geometric_losses(&p, &g, &sk, &w).unwrap();
        let o = oracle_losses(&rows(&p), &rows(&g), &w);
        let got = [
            b.height,
            b.position,
            b.rotation,
            b.velocity,
            b.foot_slide,
            b.total,
        ];
        for (x, y) in got.iter().zip(o) {
            worst = worst.max(rel(*x, y));
        }
    }
    let p = random_clip(&mut rng, 24).to_f64();
    let g = random_clip(&mut rng, 24).to_f64();
    let (_, grad) = loss_and_gradient(p.view(), g.view(), &sk, &w).unwrap();
    let total = |x: &Array2<f64>| {
        let r: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let gr: Vec<Vec<f64>> = g.rows().into_iter().map(|r| r.to_vec()).collect();
        oracle_losses(&r, &gr, &w)[5]
    };
    let mut worst_grad = 0.0f64;
    let h = 1e-5;
    for _ in 0..50 {
        let (k, c) = (rng.random_range(0..24), rng.random_range(0..FEATURE_DIM));
        let mut up = p.clone();
        up[[k, c]] += h;
        let mut down = p.clone();
        down[[k, c]] -= h;
        let fd = (total(&up) - total(&down)) / (2.0 * h);
        let a = grad[[k, c]];
        // Contact channels carry no gradient; both sides are then zero.
        let err = if a.abs().max(fd.abs()) < 1e-10 {
            0.0
        } else {
            rel(a, fd)
        };
        worst_grad = worst_grad.max(err);
    }
    check(
        worst <= 1e-9 && worst_grad <= 1e-3,
        format!("100 pairs: max rel error {worst:.2e}; 50 coordinates: max rel gradient error {worst_grad:.2e}"),
    )
}

// 5 ---------------------------------------------------------------------

fn overfit_run(o: &Overfit) -> Check {
    let initial = o.history[..10].iter().sum::<f64>() / 10.0;
    let last = smoothed_tail(&o.history, 100);
    let real: Vec<&MotionClip> = o.corpus.records.iter().map(|r| &r.clip).collect();
    let real_f = det_features(&real).unwrap();
    let trained = o.reproduce_records(&o.trained).unwrap();
    let untrained_model = init_denoiser(o.config.denoiser_config(), o.config.seed).unwrap();
    let untrained = o.reproduce_records(&untrained_model).unwrap();
    let fid_trained = fid(
        &real_f,
        &det_features(&trained.iter().collect::<Vec<_>>()).unwrap(),
    )
    .unwrap();
    let fid_untrained = fid(
        &real_f,
        &det_features(&untrained.iter().collect::<Vec<_>>()).unwrap(),
    )
    .unwrap();
    check(
        last < 0.1 * initial && fid_trained < 0.2 * fid_untrained,
        format!(
            "{} steps in {:.0} s: loss {initial:.4} -> {last:.4} ({:.1}%); FID trained {fid_trained:.4} vs untrained {fid_untrained:.4} ({:.1}%)",
            o.history.len(),
            o.train_time.as_secs_f64(),
            100.0 * last / initial,
            100.0 * fid_trained / fid_untrained
        ),
    )
}

// 6 ---------------------------------------------------------------------

fn duration_predictor() -> Check {
    let motifs: Vec<_> = default_motifs()
        .into_iter()
        .filter(|m| ["walk", "kick_left", "wave", "squat"].contains(&m.name.as_str()))
        .collect();
    let corpus = generate_corpus(&CorpusConfig {
        motif_set: motifs,
        ..CorpusConfig::new(16, 2)
    })
    .unwrap();
    let data: Vec<(String, usize)> = corpus
        .records
        .iter()
        .map(|r| (r.text.clone(), r.clip.n_frames()))
        .collect();
    let mut classes: Vec<usize> = data.iter().map(|d| d.1).collect();
    classes.sort_unstable();
    classes.dedup();
    let c = TrainConfig::desk();
    let out = train_duration(
        &data,
        c.duration_config(),
        1000,
        c.duration_learning_rate,
        8,
    )
    .unwrap();
    let first_perfect = out.accuracy.iter().position(|&a| a == 1.0);
    let mut exact = true;
    for (text, frames) in &data {
        let predicted = segment_frames(text, None, Some(&out.predictor)).unwrap();
        exact &= predicted == *frames;
    }
    let mapping = (10..=50).all(|k| class_to_frames(k) == 4 * k);
    let final_acc = *out.accuracy.last().unwrap();
    check(
        classes.len() == 4 && final_acc == 1.0 && exact && mapping,
        format!(
            "{} classes {:?}: accuracy {final_acc:.3} (first 100% at step {}), predicted frames exact={exact}, class k -> 4k frames={mapping}",
            classes.len(),
            classes,
            first_perfect.map_or("never".into(), |s| (s + 1).to_string())
        ),
    )
}

// 7 ---------------------------------------------------------------------

fn metric_sanity() -> Check {
    let mut rng = seeded(7);
    let a = Array2::from_shape_fn((200, 8), |_| rng.random_range(-1.0..1.0));
    let self_fid = fid(&a, &a).unwrap();
    let zero = Array2::<f64>::zeros((50, 1));
    let one = Array2::<f64>::ones((50, 1));
    let point = fid(&zero, &one).unwrap();
    let texts = Array2::from_shape_fn((32, 16), |_| rng.random_range(-1.0..1.0));
    let ids: Vec<usize> = (0..32).collect();
    let oracle = r_precision_features(&texts, &ids, &texts, 32, 1)
        .unwrap()
        .r_precision_top3;
    let motion = Array2::from_shape_fn((1000, 16), |_| rng.random_range(-1.0..1.0));
    let ids: Vec<usize> = (0..1000).map(|_| rng.random_range(0..32)).collect();
    let random = r_precision_features(&motion, &ids, &texts, 32, 2)
        .unwrap()
        .r_precision_top3;
    check(
        self_fid < 1e-6 && point == 1.0 && oracle == 1.0 && (random - 3.0 / 32.0).abs() <= 0.05,
        format!("fid(A,A)={self_fid:.2e}, point mass={point}, oracle R@3={oracle}, random R@3={random:.4} (3/32={:.4})", 3.0 / 32.0),
    )
}

// 8 ---------------------------------------------------------------------

fn autoregressive_contract(o: &Overfit) -> Check {
    let model = o.model(&o.trained);
    let texts = o.corpus.texts();
    let prefix = vec![texts[0].clone(), texts[2].clone()];
    let seed = 2024;
    let base = sample_long(
        &PromptSequence::new(prefix.clone()),
        &model,
        &o.sched,
        Some(&o.durations),
        seed,
        None,
    )
    .unwrap();
    let mut rng = seeded(88);
    let mut prefix_ok = true;
    let mut frames_ok = true;
    for _ in 0..10 {
        let extra = rng.random_range(1..=2);
        let mut prompts = prefix.clone();
        for _ in 0..extra {
            prompts.push(texts[rng.random_range(0..texts.len())].clone());
        }
        let seq = sample_long(
            &PromptSequence::new(prompts.clone()),
            &model,
            &o.sched,
            Some(&o.durations),
            seed,
            None,
        )
        .unwrap();
        prefix_ok &= seq.segments[..2] == base.segments[..];
        let expected: usize = prompts
            .iter()
            .map(|p| segment_frames(p, None, Some(&o.durations)).unwrap())
            .sum();
        frames_ok &=
            seq.total_frames() == expected && seq.concatenated().unwrap().n_frames() == expected;
    }
    check(
        prefix_ok && frames_ok,
        format!("10 suffixes: prefix bit-exact={prefix_ok}, total frames = sum of durations={frames_ok}"),
    )
}

// 9 ---------------------------------------------------------------------

fn directional_stitching(o: &Overfit) -> Check {
    let model = o.model(&o.trained);
    let sk = SkeletonSpec::default();
    let recs = &o.corpus.records;
    let (mut plain, mut infill) = (0.0, 0.0);
    let seeds = 20;
    for s in 0..seeds {
        let (ra, rb) = (&recs[s % recs.len()], &recs[(s + 3) % recs.len()]);
        let gen = |r: &amd_core::CorpusRecord, i: u64| {
            let req = SegmentRequest::first(&r.text, r.clip.n_frames());
            sample_segment(&req, &model, &o.sched, derive_seed(900 + s as u64, i), None).unwrap()
        };
        let (a, b) = (gen(ra, 0), gen(rb, 1));
        plain += junction_gap(&a, &b, &sk).unwrap();
        let joined =
            infill_stitch(&a, &b, &model, &o.sched, derive_seed(900 + s as u64, 2)).unwrap();
        let fa = a.n_frames();
        infill += junction_gap(
            &joined.slice(0..fa),
            &joined.slice(fa..joined.n_frames()),
            &sk,
        )
        .unwrap();
    }
    plain /= seeds as f64;
    infill /= seeds as f64;

    // Non-blocking: FID of autoregressive vs joint generation of prompt pairs.
    let real: Vec<&MotionClip> = recs.iter().map(|r| &r.clip).collect();
    let real_f = det_features(&real).unwrap();
    let (mut auto, mut joint) = (Vec::new(), Vec::new());
    for i in 0..recs.len() {
        let (a, b) = (&recs[i], &recs[(i + 1) % recs.len()]);
        let seq = PromptSequence {
            prompts: vec![a.text.clone(), b.text.clone()],
            frames: vec![Some(a.clip.n_frames()), Some(b.clip.n_frames())],
        };
        let out = sample_long(&seq, &model, &o.sched, None, 500 + i as u64, None).unwrap();
        auto.extend(out.segments.into_iter().map(|s| s.clip));
        let total = a.clip.n_frames() + b.clip.n_frames();
        let j = sample_joint(
            (&a.text, &b.text),
            total,
            &model,
            &o.sched,
            600 + i as u64,
            None,
        )
        .unwrap();
        joint.push(j.slice(0..a.clip.n_frames()));
        joint.push(j.slice(a.clip.n_frames()..total));
    }
    let fid_auto = fid(
        &real_f,
        &det_features(&auto.iter().collect::<Vec<_>>()).unwrap(),
    )
    .unwrap();
    let fid_joint = fid(
        &real_f,
        &det_features(&joint.iter().collect::<Vec<_>>()).unwrap(),
    )
    .unwrap();
    check(
        infill <= plain,
        format!(
            "mean junction gap over {seeds} seeds: infill {infill:.4} m vs concatenation {plain:.4} m; (non-blocking) FID auto {fid_auto:.4} vs joint {fid_joint:.4}"
        ),
    )
}

// 10 --------------------------------------------------------------------

fn hash_path(path: &Path) -> String {
    let mut h = Sha256::new();
    let mut entries = vec![path.to_path_buf()];
    let mut files = Vec::new();
    while let Some(p) = entries.pop() {
        if p.is_dir() {
            for e in fs::read_dir(&p).unwrap() {
                entries.push(e.unwrap().path());
            }
        } else {
            files.push(p);
        }
    }
    files.sort();
    for f in files {
        h.update(
            f.strip_prefix(path)
                .unwrap_or(&f)
                .to_string_lossy()
                .as_bytes(),
        );
        h.update(fs::read(&f).unwrap());
    }
    hex::encode(h.finalize())
}

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["amd"];
    argv.extend_from_slice(args);
    amd_cli::run(argv)
}

fn reproducibility() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let config = TrainConfig {
        steps: 40,
        batch_size: 4,
        diffusion_steps: 20,
        duration_steps: 100,
        evaluator_steps: 40,
        seed: 5,
        ..TrainConfig::desk()
    };
    fs::write(p("config.txt"), config.to_text()).unwrap();
    fs::write(
        p("prompts.txt"),
        "a person walks forward\na person waves\na person jumps\n",
    )
    .unwrap();
    let mut codes = Vec::new();
    let mut compared = Vec::new();
    for run in ["1", "2"] {
        let o = |name: &str| p(&format!("{name}{run}"));
        codes.push(cli(&[
            "gen-corpus",
            "--out",
            &o("corpus"),
            "--clips",
            "12",
            "--seed",
            "3",
        ]));
        codes.push(cli(&[
            "train",
            "--corpus",
            &o("corpus"),
            "--config",
            &p("config.txt"),
            "--out",
            &o("model"),
        ]));
        codes.push(cli(&[
            "sample",
            "--ckpt",
            &o("model"),
            "--prompts",
            &p("prompts.txt"),
            "--seed",
            "9",
            "--out",
            &o("sample"),
        ]));
        for mode in ["joint", "interp", "infill"] {
            codes.push(cli(&[
                "stitch",
                "--ckpt",
                &o("model"),
                "--mode",
                mode,
                "--prompts",
                &p("prompts.txt"),
                "--seed",
                "9",
                "--frames",
                "48",
                "--out",
                &o(mode),
            ]));
        }
        codes.push(cli(&[
            "eval",
            "--ckpt",
            &o("model"),
            "--corpus",
            &o("corpus"),
            "--generated",
            &o("sample"),
            &o("joint"),
            "--out",
            &o("report"),
            "--reps",
            "3",
            "--seed",
            "4",
        ]));
        codes.push(cli(&[
            "export",
            "--in",
            &o("sample"),
            "--out",
            &o("export"),
            "--format",
            "positions",
        ]));
    }
    let artifacts = [
        "corpus", "model", "sample", "joint", "interp", "infill", "report", "export",
    ];
    let mut identical = true;
    for a in artifacts {
        let same = hash_path(Path::new(&p(&format!("{a}1"))))
            == hash_path(Path::new(&p(&format!("{a}2"))));
        identical &= same;
        compared.push(format!("{a}={}", if same { "same" } else { "DIFFERENT" }));
    }
    let ok_codes = codes.iter().all(|&c| c == 0);
    check(
        ok_codes && identical,
        format!("exit codes all 0={ok_codes}; {}", compared.join(" ")),
    )
}

fn run_one(
    id: usize,
    name: &str,
    limit: Duration,
    f: impl FnOnce() -> Check,
    failures: &mut usize,
) {
    let start = Instant::now();
    let c = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        check(false, format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let pass = c.pass && elapsed <= limit;
    if !pass {
        *failures += 1;
    }
    println!(
        "[{}] {id:>2} {name}: {} [{:.2} s, limit {} s]",
        if pass { "PASS" } else { "FAIL" },
        c.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let secs = Duration::from_secs;
    let mut failures = 0;
    run_one(
        1,
        "schedule conformance",
        secs(1),
        schedule_conformance,
        &mut failures,
    );
    run_one(
        2,
        "marginal consistency",
        secs(60),
        marginal_consistency,
        &mut failures,
    );
    run_one(
        3,
        "oracle sampler fixed point",
        secs(1),
        oracle_fixed_point,
        &mut failures,
    );
    run_one(
        4,
        "loss correctness",
        secs(60),
        loss_correctness,
        &mut failures,
    );
    let mut built = None;
    run_one(
        5,
        "overfit run",
        secs(900),
        || {
            let o = Overfit::build().expect("overfit training");
            let c = overfit_run(&o);
            built = Some(o);
            c
        },
        &mut failures,
    );
    let overfit = built.expect("overfit model");
    run_one(
        6,
        "duration predictor",
        secs(60),
        duration_predictor,
        &mut failures,
    );
    run_one(7, "metric sanity", secs(60), metric_sanity, &mut failures);
    run_one(
        8,
        "autoregressive contract",
        secs(300),
        || autoregressive_contract(&overfit),
        &mut failures,
    );
    run_one(
        9,
        "directional stitching",
        secs(600),
        || directional_stitching(&overfit),
        &mut failures,
    );
    run_one(
        10,
        "reproducibility",
        secs(300),
        reproducibility,
        &mut failures,
    );
    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
