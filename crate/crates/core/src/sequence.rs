//! Generated-sequence files and world-position export.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AMDS"
//! 4       4     version (u32 LE, 1)
//! 8       8     metadata length M (u64 LE)
//! 16      M     JSON metadata
//! 16+M    4     segment count N (u32 LE)
//! ...           N clips in the binary clip format, back to back
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{decode_clip_prefix, encode_clip};
use crate::motion::{recover_positions, MotionClip, SkeletonSpec};

pub const SEQUENCE_MAGIC: [u8; 4] = *b"AMDS";
pub const SEQUENCE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub prompt: String,
    pub seed: u64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    /// How the clips were produced: `auto`, `joint`, `interp` or `infill`.
    pub mode: String,
    pub fps: f32,
    pub seed: u64,
    pub guidance: Option<f32>,
    pub prompts: Vec<String>,
    pub segments: Vec<SegmentMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFile {
    pub meta: SequenceMeta,
    pub clips: Vec<MotionClip>,
}

impl SequenceFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&SEQUENCE_MAGIC);
        out.extend_from_slice(&SEQUENCE_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.clips.len() as u32).to_le_bytes());
        for c in &self.clips {
            out.extend_from_slice(&encode_clip(c));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Metadata("sequence file truncated".into());
        if bytes.len() < 16 {
            return Err(short());
        }
        if bytes[..4] != SEQUENCE_MAGIC {
            return Err(Error::Metadata("not a sequence file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != SEQUENCE_VERSION {
            return Err(Error::Metadata(format!(
                "unsupported sequence version {version}"
            )));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(short)?;
        let meta: SequenceMeta =
            serde_json::from_slice(json).map_err(|e| Error::Metadata(e.to_string()))?;
        let mut at = 16 + len;
        let count_bytes = bytes.get(at..at + 4).ok_or_else(short)?;
        let count = u32::from_le_bytes(count_bytes.try_into().expect("4 bytes")) as usize;
        at += 4;
        let mut clips = Vec::with_capacity(count);
        for _ in 0..count {
            let (clip, used) = decode_clip_prefix(&bytes[at..], meta.fps)?;
            clips.push(clip);
            at += used;
        }
        if at != bytes.len() {
            return Err(Error::Metadata("trailing bytes after the last clip".into()));
        }
        if meta.segments.len() != clips.len()
            || meta
                .segments
                .iter()
                .zip(&clips)
                .any(|(s, c)| s.frames != c.n_frames())
        {
            return Err(Error::Metadata(
                "segment metadata does not match the stored clips".into(),
            ));
        }
        Ok(SequenceFile { meta, clips })
    }

    pub fn total_frames(&self) -> usize {
        self.clips.iter().map(MotionClip::n_frames).sum()
    }
}

pub fn save_sequence(seq: &SequenceFile, path: &Path) -> Result<()> {
    fs::write(path, seq.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_sequence(path: &Path) -> Result<SequenceFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    SequenceFile::from_bytes(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSegment {
    pub prompt: String,
    pub start: usize,
    pub frames: usize,
}

/// World joint positions of a whole sequence, frame-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionExport {
    pub fps: f32,
    pub joints: usize,
    pub frames: usize,
    pub parents: Vec<Option<usize>>,
    pub segments: Vec<ExportSegment>,
    /// frames x joints x [x, y, z], meters.
    pub positions: Vec<Vec<[f64; 3]>>,
}

/// Recovers world positions of the concatenated segments, so each segment
/// continues from the root position and heading where the previous ended.
pub fn export_positions(seq: &SequenceFile, skeleton: &SkeletonSpec) -> Result<PositionExport> {
    let mut iter = seq.clips.iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::InvalidArgument("sequence has no segments".into()))?;
    let all = iter.try_fold(first.clone(), |acc, c| acc.concat(c))?;
    let pose = recover_positions(&all, skeleton)?;
    let positions = (0..pose.n_frames())
        .map(|k| {
            (0..skeleton.joint_count)
                .map(|j| pose.joint(k, j))
                .collect()
        })
        .collect();
    let mut start = 0;
    let segments = seq
        .meta
        .segments
        .iter()
        .map(|s| {
            let seg = ExportSegment {
                prompt: s.prompt.clone(),
                start,
                frames: s.frames,
            };
            start += s.frames;
            seg
        })
        .collect();
    Ok(PositionExport {
        fps: seq.meta.fps,
        joints: skeleton.joint_count,
        frames: pose.n_frames(),
        parents: skeleton.parents.clone(),
        segments,
        positions,
    })
}
