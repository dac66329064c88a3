//! Checkpoint files holding any subset of the denoiser, the duration
//! predictor and the evaluator.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AMDC"
//! 4       4     version (u32 LE)
//! 8       8     header length H (u64 LE)
//! 16      H     JSON header: configs, corpus fingerprint, tensor shapes
//! 16+H    4*P   parameters, f32 LE, section by section in module order
//! end-32  32    SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditioning::{DurationConfig, DurationPredictor};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::metrics::{Evaluator, EvaluatorConfig};
use crate::nn::Module;
use crate::rng::seeded;
use crate::schedule::NoiseSchedule;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AMDC";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSettings {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl DiffusionSettings {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

impl From<&TrainConfig> for DiffusionSettings {
    fn from(c: &TrainConfig) -> Self {
        DiffusionSettings {
            steps: c.diffusion_steps,
            beta_start: c.beta_start,
            beta_end: c.beta_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserEntry {
    pub model: Denoiser,
    pub diffusion: DiffusionSettings,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub corpus_fingerprint: Option<String>,
    pub train_config: Option<TrainConfig>,
    pub denoiser: Option<DenoiserEntry>,
    pub duration: Option<DurationPredictor>,
    pub evaluator: Option<Evaluator>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DenoiserHeader {
    config: DenoiserConfig,
    text_dim: usize,
    diffusion: DiffusionSettings,
    shapes: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DurationHeader {
    config: DurationConfig,
    shapes: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvaluatorHeader {
    config: EvaluatorConfig,
    shapes: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    corpus_fingerprint: Option<String>,
    train_config: Option<TrainConfig>,
    denoiser: Option<DenoiserHeader>,
    duration: Option<DurationHeader>,
    evaluator: Option<EvaluatorHeader>,
}

fn shapes(m: &dyn ModuleView) -> Vec<[usize; 2]> {
    m.values().iter().map(|v| [v.nrows(), v.ncols()]).collect()
}

/// Read-only access to parameter tensors in module order.
trait ModuleView {
    fn values(&self) -> Vec<&Array2<f32>>;
}

impl<T: Module> ModuleView for T {
    fn values(&self) -> Vec<&Array2<f32>> {
        self.params().into_iter().map(|p| &p.value).collect()
    }
}

fn write_values(out: &mut Vec<u8>, m: &dyn ModuleView) {
    for v in m.values() {
        for x in v.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn read_values(
    m: &mut dyn Module,
    expected: &[[usize; 2]],
    payload: &[u8],
    at: &mut usize,
    what: &str,
) -> Result<()> {
    let mut params = m.params_mut();
    if params.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{what}: {} tensors stored, model has {}",
            expected.len(),
            params.len()
        )));
    }
    for (p, shape) in params.iter_mut().zip(expected) {
        if p.value.dim() != (shape[0], shape[1]) {
            return Err(Error::Checkpoint(format!(
                "{what}: tensor shape {:?} does not match stored {shape:?}",
                p.value.dim()
            )));
        }
        let n = 4 * shape[0] * shape[1];
        let bytes = payload
            .get(*at..*at + n)
            .ok_or_else(|| Error::Checkpoint(format!("{what}: payload truncated")))?;
        for (dst, chunk) in p.value.iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
        p.zero_grad();
        *at += n;
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            corpus_fingerprint: self.corpus_fingerprint.clone(),
            train_config: self.train_config,
            denoiser: self.denoiser.as_ref().map(|d| DenoiserHeader {
                config: *d.model.config(),
                text_dim: d.model.text_dim(),
                diffusion: d.diffusion,
                shapes: shapes(&d.model),
            }),
            duration: self.duration.as_ref().map(|d| DurationHeader {
                config: DurationConfig {
                    text_dim: d.text_dim(),
                    hidden: d.hidden.output_dim(),
                },
                shapes: shapes(d),
            }),
            evaluator: self.evaluator.as_ref().map(|e| EvaluatorHeader {
                config: e.config,
                shapes: shapes(e),
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        if let Some(d) = &self.denoiser {
            write_values(&mut out, &d.model);
        }
        if let Some(d) = &self.duration {
            write_values(&mut out, d);
        }
        if let Some(e) = &self.evaluator {
            write_values(&mut out, e);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 + DIGEST_LEN {
            return Err(Error::Checkpoint("file too short".into()));
        }
        if bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let header_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let json = body
            .get(16..16 + header_len)
            .ok_or_else(|| Error::Checkpoint("header truncated".into()))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let payload = &body[16 + header_len..];
        let mut at = 0;

        let denoiser = match header.denoiser {
            None => None,
            Some(h) => {
                let mut model = Denoiser::new(h.config, h.text_dim, 0)?;
                read_values(&mut model, &h.shapes, payload, &mut at, "denoiser")?;
                h.diffusion.schedule()?;
                Some(DenoiserEntry {
                    model,
                    diffusion: h.diffusion,
                })
            }
        };
        let duration = match header.duration {
            None => None,
            Some(h) => {
                let mut p =
                    DurationPredictor::new(h.config.text_dim, h.config.hidden, &mut seeded(0));
                read_values(&mut p, &h.shapes, payload, &mut at, "duration predictor")?;
                Some(p)
            }
        };
        let evaluator = match header.evaluator {
            None => None,
            Some(h) => {
                let mut e = Evaluator::new(h.config, 0)?;
                read_values(&mut e, &h.shapes, payload, &mut at, "evaluator")?;
                Some(e)
            }
        };
        if at != payload.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing payload bytes",
                payload.len() - at
            )));
        }
        Ok(Checkpoint {
            corpus_fingerprint: header.corpus_fingerprint,
            train_config: header.train_config,
            denoiser,
            duration,
            evaluator,
        })
    }

    /// Fails unless the checkpoint was trained on the corpus with this
    /// fingerprint (or records none).
    pub fn check_fingerprint(&self, fingerprint: &str) -> Result<()> {
        match &self.corpus_fingerprint {
            Some(f) if f != fingerprint => Err(Error::Checkpoint(format!(
                "trained on corpus {f}, given corpus {fingerprint}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn require_denoiser(&self) -> Result<&DenoiserEntry> {
        self.denoiser
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("no denoiser in checkpoint".into()))
    }

    pub fn require_duration(&self) -> Result<&DurationPredictor> {
        self.duration
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("no duration predictor in checkpoint".into()))
    }

    pub fn require_evaluator(&self) -> Result<&Evaluator> {
        self.evaluator
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("no evaluator in checkpoint".into()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
