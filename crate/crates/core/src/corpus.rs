//! Procedural text-motion corpus with coherent segment pairs, its on-disk
//! layout and train/test/validation splitting.
//!
//! Each motif drives a few joints with an analytic angle trajectory and
//! optionally moves the root. Joint positions come from forward kinematics
//! over [`SkeletonSpec`] and are encoded into the 263-channel layout.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ClipError, Error, Result};
use crate::format::{encode_clip, load_clip, save_clip};
use crate::motion::{
    detect_foot_contacts, position_channel, recover_positions, rotate_y, rotation_channel,
    velocity_channel, ContactThresholds, MotionClip, SkeletonSpec, CONTACTS, DEFAULT_FPS,
    JOINT_COUNT, ROOT_HEIGHT, ROOT_VELOCITY, ROOT_YAW,
};
use crate::rng::seeded;

pub const META_FILE: &str = "corpus.meta";
pub const CLIP_DIR: &str = "clips";
/// Frames over which the end pose of a pair's first motif fades out.
pub const CARRYOVER_FRAMES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn rotation(self, angle: f64) -> [[f64; 3]; 3] {
        let (s, c) = angle.sin_cos();
        match self {
            Axis::X => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
            Axis::Y => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            Axis::Z => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

/// Time profile shared by all joints of a motif.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    /// `sin(2 pi f t + phase)`.
    Periodic,
    /// A single `sin^2(pi k / (D - 1))` excursion over the whole clip.
    Burst,
    /// Smoothstep ramp to full amplitude over the first half, then held.
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDrive {
    pub axis: Axis,
    /// Multiplies the motif amplitude; the sign picks the direction.
    pub weight: f64,
    /// Phase offset for periodic motifs, radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifSpec {
    pub name: String,
    /// Verb phrase completing the prompt templates.
    pub phrase: String,
    pub duration_frames: usize,
    /// Peak joint angle, radians.
    pub amplitude: f64,
    /// Cycles per second.
    pub frequency: f64,
    pub pattern: Pattern,
    pub affected_joints: Vec<usize>,
    /// One drive per affected joint.
    pub drives: Vec<JointDrive>,
    /// Forward root speed in the heading frame, m/s.
    pub root_speed: f64,
    /// Heading change, rad/s.
    pub yaw_rate: f64,
    /// Peak root height offset, m, following the motif profile.
    pub height_amplitude: f64,
}

fn drive(axis: Axis, weight: f64, phase: f64) -> JointDrive {
    JointDrive {
        axis,
        weight,
        phase,
    }
}

impl MotifSpec {
    pub fn validate(&self, skeleton: &SkeletonSpec) -> Result<()> {
        let bad = |m: &str| Err(Error::Corpus(format!("motif `{}`: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(char::is_whitespace) {
            return bad("name must be a non-empty token");
        }
        if !(40..=200).contains(&self.duration_frames) || !self.duration_frames.is_multiple_of(4) {
            return bad("duration must be a multiple of 4 in [40, 200]");
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return bad("amplitude must be > 0");
        }
        if !(self.frequency >= 0.0 && self.frequency.is_finite()) {
            return bad("frequency must be >= 0");
        }
        if self.affected_joints.is_empty() || self.affected_joints.len() != self.drives.len() {
            return bad("need one drive per affected joint and at least one joint");
        }
        if self
            .affected_joints
            .iter()
            .any(|&j| j == 0 || j >= skeleton.joint_count)
        {
            return bad("affected joints must be non-root joint indices");
        }
        Ok(())
    }

    /// Profile value in [-1, 1] at frame `k`.
    pub fn profile(&self, k: usize, fps: f64, frequency_scale: f64, phase: f64) -> f64 {
        let d = self.duration_frames as f64;
        let k = k as f64;
        match self.pattern {
            Pattern::Periodic => {
                (2.0 * PI * self.frequency * frequency_scale * k / fps + phase).sin()
            }
            Pattern::Burst => (PI * k / (d - 1.0)).sin().powi(2),
            Pattern::Hold => {
                let u = (2.0 * k / (d - 1.0)).min(1.0);
                u * u * (3.0 - 2.0 * u)
            }
        }
    }

    /// Angle of the `i`-th affected joint at frame `k`.
    pub fn joint_angle(&self, i: usize, k: usize, fps: f64, jitter: Jitter) -> f64 {
        let d = &self.drives[i];
        self.amplitude
            * jitter.amplitude
            * d.weight
            * self.profile(k, fps, jitter.frequency, d.phase)
    }

    /// Root height offset at frame `k`.
    pub fn height_offset(&self, k: usize, fps: f64, jitter: Jitter) -> f64 {
        self.height_amplitude * self.profile(k, fps, jitter.frequency, 0.0)
    }
}

/// The eight built-in motifs.
pub fn default_motifs() -> Vec<MotifSpec> {
    let m = |name: &str,
             phrase: &str,
             duration_frames: usize,
             amplitude: f64,
             frequency: f64,
             pattern: Pattern,
             joints: &[(usize, JointDrive)],
             root: (f64, f64, f64)| MotifSpec {
        name: name.into(),
        phrase: phrase.into(),
        duration_frames,
        amplitude,
        frequency,
        pattern,
        affected_joints: joints.iter().map(|(j, _)| *j).collect(),
        drives: joints.iter().map(|(_, d)| *d).collect(),
        root_speed: root.0,
        yaw_rate: root.1,
        height_amplitude: root.2,
    };
    use Axis::*;
    vec![
        m(
            "walk",
            "walks forward",
            80,
            0.5,
            1.0,
            Pattern::Periodic,
            &[
                (1, drive(X, -1.0, 0.0)),
                (2, drive(X, -1.0, PI)),
                (4, drive(X, 0.8, PI / 2.0)),
                (5, drive(X, 0.8, 3.0 * PI / 2.0)),
            ],
            (1.0, 0.0, 0.0),
        ),
        m(
            "kick_left",
            "kicks with the left leg",
            48,
            1.1,
            0.0,
            Pattern::Burst,
            &[(1, drive(X, -1.0, 0.0)), (4, drive(X, 0.5, 0.0))],
            (0.0, 0.0, 0.0),
        ),
        m(
            "kick_right",
            "kicks with the right leg",
            48,
            1.1,
            0.0,
            Pattern::Burst,
            &[(2, drive(X, -1.0, 0.0)), (5, drive(X, 0.5, 0.0))],
            (0.0, 0.0, 0.0),
        ),
        m(
            "wave",
            "waves the right hand",
            64,
            0.6,
            1.5,
            Pattern::Periodic,
            &[(17, drive(Z, -1.5, 0.0)), (19, drive(Y, 1.0, 0.0))],
            (0.0, 0.0, 0.0),
        ),
        m(
            "squat",
            "squats down and stands up",
            56,
            1.2,
            0.0,
            Pattern::Burst,
            &[
                (1, drive(X, -1.0, 0.0)),
                (2, drive(X, -1.0, 0.0)),
                (4, drive(X, 1.6, 0.0)),
                (5, drive(X, 1.6, 0.0)),
            ],
            (0.0, 0.0, -0.3),
        ),
        m(
            "turn",
            "turns around to the left",
            72,
            0.2,
            1.0,
            Pattern::Periodic,
            &[(1, drive(X, -1.0, 0.0)), (2, drive(X, -1.0, PI))],
            (0.0, 1.2, 0.0),
        ),
        m(
            "raise_arms",
            "raises both arms",
            40,
            1.4,
            0.0,
            Pattern::Hold,
            &[(16, drive(Z, 1.0, 0.0)), (17, drive(Z, -1.0, 0.0))],
            (0.0, 0.0, 0.0),
        ),
        m(
            "jump",
            "jumps up",
            44,
            0.6,
            0.0,
            Pattern::Burst,
            &[
                (4, drive(X, 1.0, 0.0)),
                (5, drive(X, 1.0, 0.0)),
                (16, drive(Z, 1.0, 0.0)),
                (17, drive(Z, -1.0, 0.0)),
            ],
            (0.0, 0.0, 0.3),
        ),
    ]
}

pub const TEMPLATE_SUBJECTS: [&str; 4] = ["a person", "someone", "a man", "a woman"];

/// Per-record multiplicative perturbation of a motif.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub amplitude: f64,
    pub frequency: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            amplitude: 1.0,
            frequency: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_records: usize,
    pub motif_set: Vec<MotifSpec>,
    pub seed: u64,
    pub fps: f32,
    /// Fraction of records that continue a predecessor, in [0, 0.5].
    pub pair_fraction: f64,
    /// Number of subject templates used per motif, 1..=4.
    pub templates_per_motif: usize,
}

impl CorpusConfig {
    pub fn new(n_records: usize, seed: u64) -> Self {
        CorpusConfig {
            n_records,
            motif_set: default_motifs(),
            seed,
            fps: DEFAULT_FPS,
            pair_fraction: 0.5,
            templates_per_motif: TEMPLATE_SUBJECTS.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub text: String,
    pub motif: String,
    pub frames: usize,
    pub fps: f32,
    pub prev_id: Option<String>,
    pub jitter: Jitter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    pub motif: String,
    pub clip: MotionClip,
    pub prev_id: Option<String>,
    pub jitter: Jitter,
}

impl CorpusRecord {
    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            id: self.id.clone(),
            text: self.text.clone(),
            motif: self.motif.clone(),
            frames: self.clip.n_frames(),
            fps: self.clip.fps(),
            prev_id: self.prev_id.clone(),
            jitter: self.jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<CorpusRecord>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    /// Distinct prompt texts in first-appearance order.
    pub fn texts(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.text.as_str()))
            .map(|r| r.text.clone())
            .collect()
    }

    /// SHA-256 over the metadata lines and clip encodings, hex.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(serde_json::to_vec(&r.meta()).expect("metadata serializes"));
            h.update(encode_clip(&r.clip));
        }
        hex::encode(h.finalize())
    }
}

/// World-space motion before encoding.
struct Trajectory {
    /// F x 22 x 3 root-relative joint positions in the heading frame.
    local: Array3<f64>,
    /// F x 21 local joint rotations (joints 1..22).
    rotations: Vec<Vec<[[f64; 3]; 3]>>,
    root: Vec<[f64; 3]>,
    heading: Vec<f64>,
}

impl Trajectory {
    fn len(&self) -> usize {
        self.root.len()
    }

    fn world(&self, k: usize, j: usize) -> [f64; 3] {
        let r = self.root[k];
        let (x, z) = rotate_y(
            self.heading[k],
            self.local[[k, j, 0]],
            self.local[[k, j, 2]],
        );
        [r[0] + x, r[1] + self.local[[k, j, 1]], r[2] + z]
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Root-relative joint positions for one frame of local rotations.
fn forward_kinematics(skeleton: &SkeletonSpec, local: &[[[f64; 3]; 3]]) -> Vec<[f64; 3]> {
    let n = skeleton.joint_count;
    let mut global = vec![IDENTITY; n];
    let mut pos = vec![[0.0; 3]; n];
    // Parents precede children in the joint order.
    for j in 1..n {
        let p = skeleton.parents[j].expect("non-root joint has a parent");
        let off = mat_vec(&global[p], &skeleton.rest_offsets[j]);
        pos[j] = [pos[p][0] + off[0], pos[p][1] + off[1], pos[p][2] + off[2]];
        global[j] = mat_mul(&global[p], &local[j - 1]);
    }
    pos
}

/// Per-joint angle tracks for one or two chained motifs.
struct Segment<'a> {
    motif: &'a MotifSpec,
    jitter: Jitter,
}

fn build_trajectory(
    segments: &[Segment<'_>],
    skeleton: &SkeletonSpec,
    fps: f64,
) -> (Trajectory, Vec<usize>) {
    // Global frame counts; consecutive segments share their boundary frame.
    let mut starts = Vec::with_capacity(segments.len());
    let mut total = 0usize;
    for (i, s) in segments.iter().enumerate() {
        let start = if i == 0 { 0 } else { total - 1 };
        starts.push(start);
        total = start + s.motif.duration_frames;
    }
    let joints = skeleton.joint_count;
    let mut angles = vec![vec![[0.0f64; 3]; joints]; total];
    let mut height = vec![0.0f64; total];
    let mut speed = vec![0.0f64; total];
    let mut yaw = vec![0.0f64; total];
    for (si, seg) in segments.iter().enumerate() {
        let start = starts[si];
        let m = seg.motif;
        for k in 0..m.duration_frames {
            let g = start + k;
            if si > 0 && k == 0 {
                continue;
            }
            for (i, &j) in m.affected_joints.iter().enumerate() {
                let axis = m.drives[i].axis as usize;
                angles[g][j][axis] += m.joint_angle(i, k, fps, seg.jitter);
            }
            height[g] += m.height_offset(k, fps, seg.jitter);
            speed[g] = m.root_speed;
            yaw[g] = m.yaw_rate;
        }
        if si > 0 {
            // Fade the predecessor's final pose out over the carryover window.
            let end = angles[start].clone();
            let end_h = height[start];
            for k in 1..m.duration_frames {
                let w = 1.0 - k as f64 / CARRYOVER_FRAMES as f64;
                if w <= 0.0 {
                    break;
                }
                for j in 0..joints {
                    for a in 0..3 {
                        angles[start + k][j][a] += w * end[j][a];
                    }
                }
                height[start + k] += w * end_h;
            }
        }
    }

    let mut local = Array3::zeros((total, joints, 3));
    let mut rotations = Vec::with_capacity(total);
    let mut root = Vec::with_capacity(total);
    let mut heading = Vec::with_capacity(total);
    let (mut h, mut x, mut z) = (0.0f64, 0.0f64, 0.0f64);
    for g in 0..total {
        let rots: Vec<[[f64; 3]; 3]> = (1..joints)
            .map(|j| {
                let a = angles[g][j];
                let rx = Axis::X.rotation(a[0]);
                let ry = Axis::Y.rotation(a[1]);
                let rz = Axis::Z.rotation(a[2]);
                mat_mul(&mat_mul(&rx, &ry), &rz)
            })
            .collect();
        let pos = forward_kinematics(skeleton, &rots);
        for (j, p) in pos.iter().enumerate() {
            for c in 0..3 {
                local[[g, j, c]] = p[c];
            }
        }
        rotations.push(rots);
        root.push([x, skeleton.rest_root_height() + height[g], z]);
        heading.push(h);
        let (dx, dz) = rotate_y(h, 0.0, speed[g] / fps);
        x += dx;
        z += dz;
        h += yaw[g] / fps;
    }
    (
        Trajectory {
            local,
            rotations,
            root,
            heading,
        },
        starts,
    )
}

/// Encodes frames `range` of a trajectory as a standalone clip. Contact
/// labels are derived from the quantized clip itself.
fn encode_range(
    traj: &Trajectory,
    range: std::ops::Range<usize>,
    skeleton: &SkeletonSpec,
    fps: f32,
) -> Result<MotionClip> {
    let n = range.len();
    let mut f = Array2::<f64>::zeros((n, crate::motion::FEATURE_DIM));
    for i in 0..n {
        let k = range.start + i;
        // The last frame repeats the previous frame's velocities.
        let (a, b) = if i + 1 < n {
            (k, k + 1)
        } else if n > 1 {
            (k - 1, k)
        } else {
            (k, k)
        };
        let h = traj.heading[k];
        f[[i, ROOT_YAW]] = traj.heading[b] - traj.heading[a];
        let (vx, vz) = rotate_y(
            -traj.heading[a],
            traj.root[b][0] - traj.root[a][0],
            traj.root[b][2] - traj.root[a][2],
        );
        f[[i, ROOT_VELOCITY.start]] = vx;
        f[[i, ROOT_VELOCITY.start + 1]] = vz;
        f[[i, ROOT_HEIGHT]] = traj.root[k][1];
        for j in 1..JOINT_COUNT {
            let c = position_channel(j);
            f[[i, c]] = traj.local[[k, j, 0]];
            f[[i, c + 1]] = traj.local[[k, j, 1]];
            f[[i, c + 2]] = traj.local[[k, j, 2]];
            let r = &traj.rotations[k][j - 1];
            let c = rotation_channel(j);
            let six = [r[0][0], r[1][0], r[2][0], r[0][1], r[1][1], r[2][1]];
            for (o, v) in six.iter().enumerate() {
                f[[i, c + o]] = *v;
            }
        }
        for j in 0..JOINT_COUNT {
            let (p, q) = (traj.world(a, j), traj.world(b, j));
            let (dx, dz) = rotate_y(-h, q[0] - p[0], q[2] - p[2]);
            let c = velocity_channel(j);
            f[[i, c]] = dx;
            f[[i, c + 1]] = q[1] - p[1];
            f[[i, c + 2]] = dz;
        }
    }
    let mut clip = MotionClip::new(f.mapv(|v| v as f32), fps);
    let pose = recover_positions(&clip, skeleton)?;
    let contacts = detect_foot_contacts(&pose, skeleton, ContactThresholds::for_fps(fps))?;
    clip.frames_mut()
        .slice_mut(ndarray::s![.., CONTACTS])
        .assign(&contacts);
    Ok(clip)
}

pub fn prompt_text(motif: &MotifSpec, template: usize) -> String {
    format!("{} {}", TEMPLATE_SUBJECTS[template], motif.phrase)
}

/// Generates a deterministic synthetic corpus.
///
/// Record `i` uses motif `i mod |motif_set|`. The first
/// `2 * floor(n_records * pair_fraction)` records form pairs `(2p, 2p + 1)`
/// cut from one continuous two-motif trajectory, the second continuing the
/// first.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    let skeleton = SkeletonSpec::default();
    if config.motif_set.is_empty() {
        return Err(Error::Corpus("empty motif set".into()));
    }
    if config.n_records < 2 {
        return Err(Error::Corpus("need at least 2 records".into()));
    }
    if !(0.0..=0.5).contains(&config.pair_fraction) {
        return Err(Error::Corpus("pair fraction must lie in [0, 0.5]".into()));
    }
    if !(1..=TEMPLATE_SUBJECTS.len()).contains(&config.templates_per_motif) {
        return Err(Error::Corpus(format!(
            "templates per motif must lie in 1..={}",
            TEMPLATE_SUBJECTS.len()
        )));
    }
    if !(config.fps > 0.0 && config.fps.is_finite()) {
        return Err(Error::Corpus("fps must be positive".into()));
    }
    let mut names = HashSet::new();
    let mut phrases = HashSet::new();
    for m in &config.motif_set {
        m.validate(&skeleton)?;
        if !names.insert(m.name.as_str()) || !phrases.insert(m.phrase.as_str()) {
            return Err(Error::Corpus(format!(
                "motif `{}` duplicates a name or phrase",
                m.name
            )));
        }
    }

    let mut rng = seeded(config.seed);
    let fps = f64::from(config.fps);
    let n = config.n_records;
    let pairs = (n as f64 * config.pair_fraction).floor() as usize;
    let plan: Vec<(usize, Jitter, usize)> = (0..n)
        .map(|i| {
            let jitter = Jitter {
                amplitude: rng.random_range(0.85..1.15),
                frequency: rng.random_range(0.9..1.1),
            };
            let template = rng.random_range(0..config.templates_per_motif);
            (i % config.motif_set.len(), jitter, template)
        })
        .collect();

    let mut records = Vec::with_capacity(n);
    let make = |i: usize, clip: MotionClip, prev: Option<String>| {
        let (m, jitter, template) = plan[i];
        let motif = &config.motif_set[m];
        CorpusRecord {
            id: format!("r{i:05}"),
            text: prompt_text(motif, template),
            motif: motif.name.clone(),
            clip,
            prev_id: prev,
            jitter,
        }
    };
    let mut i = 0;
    while i < n {
        let seg = |i: usize| Segment {
            motif: &config.motif_set[plan[i].0],
            jitter: plan[i].1,
        };
        if i + 1 < n && i / 2 < pairs {
            let (traj, starts) = build_trajectory(&[seg(i), seg(i + 1)], &skeleton, fps);
            let a = encode_range(&traj, 0..starts[1] + 1, &skeleton, config.fps)?;
            let b = encode_range(&traj, starts[1]..traj.len(), &skeleton, config.fps)?;
            let first = make(i, a, None);
            let prev = Some(first.id.clone());
            records.push(first);
            records.push(make(i + 1, b, prev));
            i += 2;
        } else {
            let (traj, _) = build_trajectory(&[seg(i)], &skeleton, fps);
            records.push(make(
                i,
                encode_range(&traj, 0..traj.len(), &skeleton, config.fps)?,
                None,
            ));
            i += 1;
        }
    }
    Ok(Corpus { records })
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let clips = dir.join(CLIP_DIR);
    fs::create_dir_all(&clips).map_err(|e| Error::io(&clips, e))?;
    let mut meta = Vec::new();
    for r in &corpus.records {
        let path = clips.join(format!("{}.amdm", r.id));
        save_clip(&path, &r.clip).map_err(|source| Error::CorpusClip {
            id: r.id.clone(),
            source,
        })?;
        serde_json::to_writer(&mut meta, &r.meta()).map_err(|e| Error::Metadata(e.to_string()))?;
        meta.push(b'\n');
    }
    let path = dir.join(META_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&meta).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let meta: RecordMeta = serde_json::from_str(line)
            .map_err(|e| Error::Metadata(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
        if !ids.insert(meta.id.clone()) {
            return Err(Error::Metadata(format!(
                "duplicate record id `{}`",
                meta.id
            )));
        }
        let clip_path = dir.join(CLIP_DIR).join(format!("{}.amdm", meta.id));
        let clip = load_clip(&clip_path, meta.fps).map_err(|source| Error::CorpusClip {
            id: meta.id.clone(),
            source,
        })?;
        if clip.n_frames() != meta.frames {
            return Err(Error::CorpusClip {
                id: meta.id.clone(),
                source: ClipError::FrameMismatch {
                    expected: meta.frames,
                    found: clip.n_frames(),
                },
            });
        }
        records.push(CorpusRecord {
            id: meta.id,
            text: meta.text,
            motif: meta.motif,
            clip,
            prev_id: meta.prev_id,
            jitter: meta.jitter,
        });
    }
    for r in &records {
        if let Some(p) = &r.prev_id {
            if !ids.contains(p) {
                return Err(Error::Metadata(format!(
                    "record `{}` references missing predecessor `{p}`",
                    r.id
                )));
            }
        }
    }
    Ok(Corpus { records })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub validation: Vec<String>,
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.85, 0.10, 0.05];

/// Splits record ids into train/test/validation. Records linked through
/// `prev_id` always land in the same split.
pub fn split_corpus(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<CorpusSplit> {
    if ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument(
            "split ratios must be positive".into(),
        ));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("split ratios must sum to 1".into()));
    }
    // Union of prev_id chains.
    let index: HashMap<&str, usize> = corpus
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut root: Vec<usize> = (0..corpus.len()).collect();
    fn find(root: &mut [usize], mut i: usize) -> usize {
        while root[i] != i {
            root[i] = root[root[i]];
            i = root[i];
        }
        i
    }
    for (i, r) in corpus.records.iter().enumerate() {
        if let Some(p) = r.prev_id.as_deref().and_then(|p| index.get(p)) {
            let (a, b) = (find(&mut root, i), find(&mut root, *p));
            root[a] = b;
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..corpus.len() {
        let g = find(&mut root, i);
        groups.entry(g).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    if groups.len() < 3 {
        return Err(Error::Corpus(format!(
            "{} linked groups cannot fill three splits",
            groups.len()
        )));
    }
    groups.shuffle(&mut seeded(seed));
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));

    let n = corpus.len() as f64;
    let targets = ratios.map(|r| r * n);
    let mut sizes = [0usize; 3];
    let mut parts: [Vec<usize>; 3] = Default::default();
    let remaining_groups = groups.len();
    for (gi, g) in groups.into_iter().enumerate() {
        let left = remaining_groups - gi;
        let empty: Vec<usize> = (0..3).filter(|&s| sizes[s] == 0).collect();
        // Keep enough groups back to give every split at least one.
        let choice = if left <= empty.len() {
            empty[0]
        } else {
            (0..3)
                .max_by(|&a, &b| {
                    let da = targets[a] - sizes[a] as f64;
                    let db = targets[b] - sizes[b] as f64;
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("three splits")
        };
        sizes[choice] += g.len();
        parts[choice].extend(g);
    }
    let ids = |mut v: Vec<usize>| {
        v.sort_unstable();
        v.into_iter()
            .map(|i| corpus.records[i].id.clone())
            .collect::<Vec<_>>()
    };
    let [train, test, validation] = parts;
    Ok(CorpusSplit {
        train: ids(train),
        test: ids(test),
        validation: ids(validation),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{junction_gap, validate_clip};

    fn small(n: usize, seed: u64) -> Corpus {
        generate_corpus(&CorpusConfig::new(n, seed)).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small(8, 1);
        let b = small(8, 1);
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), small(8, 2).fingerprint());
    }

    #[test]
    fn half_the_records_continue_a_predecessor() {
        let c = small(8, 1);
        assert_eq!(c.records.iter().filter(|r| r.prev_id.is_some()).count(), 4);
    }

    #[test]
    fn clips_are_valid_and_contacts_are_self_consistent() {
        let sk = SkeletonSpec::default();
        for r in &small(16, 3).records {
            validate_clip(&r.clip).unwrap();
            let pose = recover_positions(&r.clip, &sk).unwrap();
            let contacts = detect_foot_contacts(&pose, &sk, ContactThresholds::default()).unwrap();
            assert_eq!(
                r.clip.frames().slice(ndarray::s![.., CONTACTS]),
                contacts,
                "{}",
                r.id
            );
        }
    }

    #[test]
    fn pairs_are_continuous() {
        let sk = SkeletonSpec::default();
        let c = small(16, 4);
        for r in &c.records {
            if let Some(p) = &r.prev_id {
                let gap = junction_gap(&c.get(p).unwrap().clip, &r.clip, &sk).unwrap();
                assert!(gap <= 1e-6, "{}: {gap}", r.id);
            }
        }
    }

    #[test]
    fn standing_feet_are_planted() {
        let mut cfg = CorpusConfig::new(8, 5);
        cfg.pair_fraction = 0.0;
        let c = generate_corpus(&cfg).unwrap();
        let wave = c.records.iter().find(|r| r.motif == "wave");
        let clip = &wave.unwrap().clip;
        assert!(clip
            .frames()
            .slice(ndarray::s![.., CONTACTS])
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn texts_identify_motifs() {
        let c = small(40, 6);
        let mut by_text: HashMap<&str, &str> = HashMap::new();
        for r in &c.records {
            let m = by_text.entry(r.text.as_str()).or_insert(r.motif.as_str());
            assert_eq!(*m, r.motif);
        }
    }

    #[test]
    fn durations_match_motifs() {
        let c = small(8, 7);
        for (i, r) in c.records.iter().enumerate() {
            assert_eq!(r.clip.n_frames(), default_motifs()[i % 8].duration_frames);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = CorpusConfig::new(8, 1);
        cfg.motif_set.clear();
        assert!(generate_corpus(&cfg).is_err());
        assert!(generate_corpus(&CorpusConfig::new(1, 1)).is_err());
        let mut cfg = CorpusConfig::new(8, 1);
        cfg.motif_set[0].duration_frames = 42;
        assert!(generate_corpus(&cfg).is_err());
        let mut cfg = CorpusConfig::new(8, 1);
        cfg.motif_set[0].affected_joints.clear();
        cfg.motif_set[0].drives.clear();
        assert!(generate_corpus(&cfg).is_err());
        let mut cfg = CorpusConfig::new(8, 1);
        cfg.pair_fraction = 0.6;
        assert!(generate_corpus(&cfg).is_err());
    }

    #[test]
    fn split_sizes_follow_ratios_for_unpaired_records() {
        let mut cfg = CorpusConfig::new(100, 9);
        cfg.pair_fraction = 0.0;
        let c = generate_corpus(&cfg).unwrap();
        let s = split_corpus(&c, DEFAULT_SPLIT, 1).unwrap();
        assert_eq!(
            (s.train.len(), s.test.len(), s.validation.len()),
            (85, 10, 5)
        );
    }

    #[test]
    fn split_rejects_bad_ratios_and_tiny_corpora() {
        let c = small(8, 1);
        assert!(split_corpus(&c, [1.0, 0.0, 0.0], 1).is_err());
        assert!(split_corpus(&c, [0.5, 0.3, 0.3], 1).is_err());
        let mut cfg = CorpusConfig::new(4, 1);
        cfg.pair_fraction = 0.5;
        assert!(split_corpus(&generate_corpus(&cfg).unwrap(), DEFAULT_SPLIT, 1).is_err());
    }

    #[test]
    fn split_keeps_pairs_together() {
        let c = small(40, 2);
        for seed in 0..100 {
            let s = split_corpus(&c, DEFAULT_SPLIT, seed).unwrap();
            let side = |id: &str| {
                if s.train.iter().any(|x| x == id) {
                    0
                } else if s.test.iter().any(|x| x == id) {
                    1
                } else {
                    assert!(s.validation.iter().any(|x| x == id));
                    2
                }
            };
            assert_eq!(s.train.len() + s.test.len() + s.validation.len(), 40);
            assert!(!s.test.is_empty() && !s.validation.is_empty());
            for r in &c.records {
                if let Some(p) = &r.prev_id {
                    assert_eq!(side(&r.id), side(p));
                }
            }
        }
    }

    #[test]
    fn split_is_deterministic() {
        let c = small(40, 2);
        assert_eq!(
            split_corpus(&c, DEFAULT_SPLIT, 5).unwrap(),
            split_corpus(&c, DEFAULT_SPLIT, 5).unwrap()
        );
    }
}
