//! Autoregressive motion diffusion: motion representation, synthetic corpus,
//! noise schedule, conditioning, transformer denoiser, geometric losses,
//! segment-wise sampling, evaluation metrics and training.

pub mod checkpoint;
pub mod conditioning;
pub mod corpus;
pub mod denoiser;
pub mod error;
pub mod format;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod sequence;
pub mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, DenoiserEntry, DiffusionSettings,
};
pub use conditioning::{
    build_condition, embed_text, predict_duration, ConditionBundle, ConditionEncoder,
    DurationDistribution, DurationPredictor, SegmentContext, TextEmbedding,
};
pub use corpus::{
    generate_corpus, load_corpus, save_corpus, split_corpus, Corpus, CorpusConfig, CorpusRecord,
    CorpusSplit, MotifSpec,
};
pub use denoiser::{guide, guided_predict_x0, init_denoiser, predict_x0, Denoiser, DenoiserConfig};
pub use error::{ClipError, Error, Result};
pub use losses::{geometric_losses, LossBreakdown, LossWeights};
pub use metrics::{
    diversity, evaluate_suite, extract_motion_features, fid, multimodality, r_precision_and_mmdist,
    Evaluator, EvaluatorConfig, FeatureMode, MetricReport,
};
pub use motion::{
    detect_foot_contacts, junction_gap, recover_positions, validate_clip, ContactThresholds,
    GlobalPose, MotionClip, SkeletonSpec, FEATURE_DIM, JOINT_COUNT,
};
pub use sampler::{
    infill_stitch, sample_joint, sample_long, sample_segment, stitch_interp, CleanPredictor,
    GeneratedSequence, PromptSequence, SegmentRequest,
};
pub use schedule::{q_sample, renoise_step, NoiseSchedule};
pub use sequence::{export_positions, load_sequence, save_sequence, SequenceFile, SequenceMeta};
pub use trainer::{train_denoiser, train_duration, train_evaluator, TrainConfig};
