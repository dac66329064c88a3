//! The 263-channel per-frame motion layout (HumanML3D ordering), world-space
//! recovery, foot-contact labelling and junction continuity.

use std::ops::Range;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

use crate::error::{ClipError, Error, Result};

pub const FEATURE_DIM: usize = 263;
pub const JOINT_COUNT: usize = 22;
pub const DEFAULT_FPS: f32 = 20.0;

/// Root yaw angular velocity, rad/frame.
pub const ROOT_YAW: usize = 0;
/// Root linear velocity in the root-local XZ plane, m/frame.
pub const ROOT_VELOCITY: Range<usize> = 1..3;
pub const ROOT_HEIGHT: usize = 3;
/// Root-relative positions of joints 1..22 in the heading frame.
pub const POSITIONS: Range<usize> = 4..67;
/// Continuous 6D local rotations of joints 1..22.
pub const ROTATIONS: Range<usize> = 67..193;
/// Local velocities of all 22 joints, m/frame.
pub const VELOCITIES: Range<usize> = 193..259;
pub const CONTACTS: Range<usize> = 259..263;

pub fn position_channel(joint: usize) -> usize {
    debug_assert!((1..JOINT_COUNT).contains(&joint));
    POSITIONS.start + 3 * (joint - 1)
}

pub fn rotation_channel(joint: usize) -> usize {
    debug_assert!((1..JOINT_COUNT).contains(&joint));
    ROTATIONS.start + 6 * (joint - 1)
}

pub fn velocity_channel(joint: usize) -> usize {
    debug_assert!(joint < JOINT_COUNT);
    VELOCITIES.start + 3 * joint
}

/// Rotates an XZ vector about the vertical axis by `heading` radians.
#[inline]
pub fn rotate_y(heading: f64, x: f64, z: f64) -> (f64, f64) {
    let (s, c) = heading.sin_cos();
    (c * x + s * z, -s * x + c * z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec {
    pub joint_count: usize,
    /// `None` marks the root.
    pub parents: Vec<Option<usize>>,
    /// Left ankle, left toe, right ankle, right toe.
    pub foot_joints: [usize; 4],
    /// Offset of each joint from its parent in the rest pose, meters.
    pub rest_offsets: Vec<[f64; 3]>,
}

impl SkeletonSpec {
    /// The 22-joint HumanML3D kinematic tree (SMPL body joint order).
    pub fn humanml3d() -> Self {
        let parents = [
            None,
            Some(0),
            Some(0),
            Some(0),
            Some(1),
            Some(2),
            Some(3),
            Some(4),
            Some(5),
            Some(6),
            Some(7),
            Some(8),
            Some(9),
            Some(9),
            Some(9),
            Some(12),
            Some(13),
            Some(14),
            Some(16),
            Some(17),
            Some(18),
            Some(19),
        ];
        // +X left, +Y up, +Z forward. Standing root height is 0.92 m,
        // which leaves the ankles 4 cm and the toes 2 cm above the floor.
        let rest_offsets = vec![
            [0.0, 0.0, 0.0],
            [0.09, -0.07, 0.0],
            [-0.09, -0.07, 0.0],
            [0.0, 0.10, -0.01],
            [0.0, -0.40, 0.01],
            [0.0, -0.40, 0.01],
            [0.0, 0.13, 0.0],
            [0.0, -0.41, -0.03],
            [0.0, -0.41, -0.03],
            [0.0, 0.05, 0.02],
            [0.0, -0.02, 0.12],
            [0.0, -0.02, 0.12],
            [0.0, 0.21, -0.02],
            [0.08, 0.11, 0.0],
            [-0.08, 0.11, 0.0],
            [0.0, 0.09, 0.04],
            [0.12, 0.04, 0.0],
            [-0.12, 0.04, 0.0],
            [0.26, 0.0, 0.0],
            [-0.26, 0.0, 0.0],
            [0.25, 0.0, 0.0],
            [-0.25, 0.0, 0.0],
        ];
        SkeletonSpec {
            joint_count: JOINT_COUNT,
            parents: parents.to_vec(),
            foot_joints: [7, 10, 8, 11],
            rest_offsets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Skeleton(m));
        if self.joint_count != JOINT_COUNT {
            return bad(format!("joint count {} != {JOINT_COUNT}", self.joint_count));
        }
        if self.parents.len() != self.joint_count || self.rest_offsets.len() != self.joint_count {
            return bad("per-joint tables have the wrong length".into());
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return bad(format!("expected exactly one root, found {roots}"));
        }
        for start in 0..self.joint_count {
            let mut cur = start;
            let mut hops = 0;
            while let Some(p) = self.parents[cur] {
                if p >= self.joint_count {
                    return bad(format!("joint {cur} has invalid parent {p}"));
                }
                cur = p;
                hops += 1;
                if hops > self.joint_count {
                    return bad(format!("cycle through joint {start}"));
                }
            }
        }
        let mut feet = self.foot_joints;
        feet.sort_unstable();
        if feet.windows(2).any(|w| w[0] == w[1]) || feet[3] >= self.joint_count {
            return bad("foot joints must be 4 distinct valid indices".into());
        }
        Ok(())
    }

    pub fn rest_root_height(&self) -> f64 {
        0.92
    }
}

impl Default for SkeletonSpec {
    fn default() -> Self {
        Self::humanml3d()
    }
}

/// An F x 263 frame-major feature array.
///
/// Construction does not enforce the layout invariants: noisy diffusion
/// states and raw network outputs are clips too. Use [`validate_clip`].
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    frames: Array2<f32>,
    fps: f32,
}

impl MotionClip {
    pub fn new(frames: Array2<f32>, fps: f32) -> Self {
        MotionClip { frames, fps }
    }

    pub fn zeros(n_frames: usize, fps: f32) -> Self {
        Self::new(Array2::zeros((n_frames, FEATURE_DIM)), fps)
    }

    pub fn frames(&self) -> &Array2<f32> {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut Array2<f32> {
        &mut self.frames
    }

    pub fn into_frames(self) -> Array2<f32> {
        self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.frames.mapv(f64::from)
    }

    pub fn slice(&self, range: Range<usize>) -> MotionClip {
        MotionClip::new(self.frames.slice(s![range, ..]).to_owned(), self.fps)
    }

    pub fn concat(&self, other: &MotionClip) -> Result<MotionClip> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "cannot concatenate {} and {} channels",
                self.dim(),
                other.dim()
            )));
        }
        let frames = ndarray::concatenate(Axis(0), &[self.frames.view(), other.frames.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(MotionClip::new(frames, self.fps))
    }

    /// Clamps the contact channels into [0, 1].
    pub fn clamp_contacts(&mut self) {
        self.frames
            .slice_mut(s![.., CONTACTS])
            .mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
}

pub fn validate_clip(clip: &MotionClip) -> Result<(), ClipError> {
    if clip.dim() != FEATURE_DIM {
        return Err(ClipError::Dimension { found: clip.dim() });
    }
    if clip.n_frames() == 0 {
        return Err(ClipError::Empty);
    }
    for (frame, row) in clip.frames.outer_iter().enumerate() {
        for (channel, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(ClipError::NonFinite { frame, channel });
            }
            if CONTACTS.contains(&channel) && !(0.0..=1.0).contains(&v) {
                return Err(ClipError::ContactOutOfRange {
                    frame,
                    channel,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// World-space joint positions recovered from a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPose {
    /// F x 22 x 3, meters.
    pub positions: Array3<f64>,
    /// Unwrapped heading per frame, radians.
    pub heading: Array1<f64>,
}

impl GlobalPose {
    pub fn n_frames(&self) -> usize {
        self.heading.len()
    }

    pub fn joint(&self, frame: usize, joint: usize) -> [f64; 3] {
        let p = &self.positions;
        [
            p[[frame, joint, 0]],
            p[[frame, joint, 1]],
            p[[frame, joint, 2]],
        ]
    }
}

pub fn recover_positions(clip: &MotionClip, skeleton: &SkeletonSpec) -> Result<GlobalPose> {
    validate_clip(clip)?;
    skeleton.validate()?;
    Ok(recover_positions_raw(clip.to_f64().view()))
}

/// Recovery without validation, for raw network outputs and noisy states.
/// `features` must have 263 columns.
pub fn recover_positions_raw(features: ArrayView2<f64>) -> GlobalPose {
    let n = features.nrows();
    let mut positions = Array3::zeros((n, JOINT_COUNT, 3));
    let mut heading = Array1::zeros(n);
    let (mut h, mut rx, mut rz) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..n {
        let row = features.row(k);
        heading[k] = h;
        let ry = row[ROOT_HEIGHT];
        positions[[k, 0, 0]] = rx;
        positions[[k, 0, 1]] = ry;
        positions[[k, 0, 2]] = rz;
        let (sin, cos) = h.sin_cos();
        for j in 1..JOINT_COUNT {
            let c = position_channel(j);
            let (lx, ly, lz) = (row[c], row[c + 1], row[c + 2]);
            positions[[k, j, 0]] = rx + cos * lx + sin * lz;
            positions[[k, j, 1]] = ry + ly;
            positions[[k, j, 2]] = rz - sin * lx + cos * lz;
        }
        let (vx, vz) = rotate_y(h, row[ROOT_VELOCITY.start], row[ROOT_VELOCITY.start + 1]);
        rx += vx;
        rz += vz;
        h += row[ROOT_YAW];
    }
    GlobalPose { positions, heading }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactThresholds {
    /// Per-frame foot displacement below which a foot counts as still, m.
    pub velocity: f64,
    /// Foot height below which a foot counts as grounded, m.
    pub height: f64,
}

impl ContactThresholds {
    pub fn for_fps(fps: f32) -> Self {
        ContactThresholds {
            velocity: 0.002 * (20.0 / f64::from(fps)),
            height: 0.05,
        }
    }
}

impl Default for ContactThresholds {
    fn default() -> Self {
        Self::for_fps(DEFAULT_FPS)
    }
}

/// Labels each foot joint as planted (1) or not (0) per frame.
///
/// A foot is planted when its displacement to the next frame is strictly
/// below `velocity` and its height is strictly below `height`. The final
/// frame repeats the label of the one before it.
pub fn detect_foot_contacts(
    pose: &GlobalPose,
    skeleton: &SkeletonSpec,
    thresholds: ContactThresholds,
) -> Result<Array2<f32>> {
    if !(thresholds.velocity > 0.0 && thresholds.height > 0.0) {
        return Err(Error::InvalidArgument(
            "contact thresholds must be positive".into(),
        ));
    }
    let n = pose.n_frames();
    let mut labels = Array2::zeros((n, 4));
    for (f, &joint) in skeleton.foot_joints.iter().enumerate() {
        for k in 0..n {
            let src = if k + 1 < n { k } else { k.saturating_sub(1) };
            let p = pose.joint(src, joint);
            let disp = if src + 1 < n {
                let q = pose.joint(src + 1, joint);
                dist(p, q)
            } else {
                0.0
            };
            let planted = disp < thresholds.velocity && p[1] < thresholds.height;
            labels[[k, f]] = if planted { 1.0 } else { 0.0 };
        }
    }
    Ok(labels)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Largest per-joint Euclidean distance between two poses.
pub fn max_joint_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| dist(*p, *q))
        .fold(0.0, f64::max)
}

/// World positions of one frame, indexed by joint.
pub type Pose = Vec<[f64; 3]>;

/// World positions of the last frame of `a` and of the first frame of `b`
/// after placing `b`'s root frame at `a`'s final root position and heading.
pub fn junction_poses(
    a: &MotionClip,
    b: &MotionClip,
    skeleton: &SkeletonSpec,
) -> Result<(Pose, Pose)> {
    let pa = recover_positions(a, skeleton)?;
    let pb = recover_positions(b, skeleton)?;
    let last = pa.n_frames() - 1;
    let heading = pa.heading[last];
    let root = pa.joint(last, 0);
    let end: Pose = (0..JOINT_COUNT).map(|j| pa.joint(last, j)).collect();
    let start: Pose = (0..JOINT_COUNT)
        .map(|j| {
            let p = pb.joint(0, j);
            let (x, z) = rotate_y(heading, p[0], p[2]);
            [root[0] + x, p[1], root[2] + z]
        })
        .collect();
    Ok((end, start))
}

/// Continuity of the transition from `a` into `b`, meters.
pub fn junction_gap(a: &MotionClip, b: &MotionClip, skeleton: &SkeletonSpec) -> Result<f64> {
    let (end, start) = junction_poses(a, b, skeleton)?;
    Ok(max_joint_distance(&end, &start))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_clip(n: usize) -> MotionClip {
        MotionClip::zeros(n, DEFAULT_FPS)
    }

    #[test]
    fn zero_clip_is_valid() {
        assert_eq!(validate_clip(&zero_clip(40)), Ok(()));
    }

    #[test]
    fn wrong_width_is_rejected() {
        let clip = MotionClip::new(Array2::zeros((40, 262)), DEFAULT_FPS);
        let err = validate_clip(&clip).unwrap_err();
        assert_eq!(err, ClipError::Dimension { found: 262 });
        assert_eq!(err.to_string(), "feature dimension 262 \u{2260} 263");
    }

    #[test]
    fn contact_out_of_range_is_rejected() {
        let mut clip = zero_clip(5);
        clip.frames_mut()[[2, CONTACTS.start + 1]] = 1.2;
        let err = validate_clip(&clip).unwrap_err();
        assert!(err.to_string().starts_with("contact out of range"));
    }

    #[test]
    fn non_finite_and_empty_are_rejected() {
        let mut clip = zero_clip(3);
        clip.frames_mut()[[1, 10]] = f32::NAN;
        assert_eq!(
            validate_clip(&clip),
            Err(ClipError::NonFinite {
                frame: 1,
                channel: 10
            })
        );
        assert_eq!(validate_clip(&zero_clip(0)), Err(ClipError::Empty));
    }

    #[test]
    fn skeleton_is_a_tree() {
        let sk = SkeletonSpec::humanml3d();
        sk.validate().unwrap();
        let mut cyclic = sk.clone();
        cyclic.parents[3] = Some(9);
        assert!(cyclic.validate().is_err());
        let mut two_roots = sk.clone();
        two_roots.parents[5] = None;
        assert!(two_roots.validate().is_err());
        let mut feet = sk;
        feet.foot_joints = [7, 7, 8, 11];
        assert!(feet.validate().is_err());
    }

    #[test]
    fn zero_root_channels_stay_at_origin() {
        let pose = recover_positions(&zero_clip(12), &SkeletonSpec::default()).unwrap();
        assert!(pose.heading.iter().all(|&h| h == 0.0));
        assert!(pose.positions.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_forward_velocity_integrates_linearly() {
        let v = 0.03f32;
        let mut clip = zero_clip(30);
        clip.frames_mut()
            .column_mut(ROOT_VELOCITY.start + 1)
            .fill(v);
        let pose = recover_positions(&clip, &SkeletonSpec::default()).unwrap();
        let mut expected = 0.0f64;
        for k in 0..30 {
            assert!((pose.positions[[k, 0, 2]] - expected).abs() < 1e-12);
            assert_eq!(pose.positions[[k, 0, 0]], 0.0);
            expected += f64::from(v);
        }
    }

    #[test]
    fn constant_yaw_rate_integrates_exactly() {
        let omega = 0.125f32;
        let mut clip = zero_clip(16);
        clip.frames_mut().column_mut(ROOT_YAW).fill(omega);
        let pose = recover_positions(&clip, &SkeletonSpec::default()).unwrap();
        for k in 0..16 {
            assert_eq!(pose.heading[k], k as f64 * f64::from(omega));
        }
    }

    #[test]
    fn prepending_a_frame_shifts_the_trajectory() {
        let mut clip = zero_clip(10);
        for k in 0..10 {
            clip.frames_mut()[[k, ROOT_VELOCITY.start]] = 0.01 * k as f32;
            clip.frames_mut()[[k, ROOT_YAW]] = 0.02;
        }
        let mut lead = zero_clip(1);
        lead.frames_mut()[[0, ROOT_VELOCITY.start]] = 0.05;
        lead.frames_mut()[[0, ROOT_VELOCITY.start + 1]] = -0.02;
        let longer = lead.concat(&clip).unwrap();
        let sk = SkeletonSpec::default();
        let a = recover_positions(&clip, &sk).unwrap();
        let b = recover_positions(&longer, &sk).unwrap();
        for k in 0..10 {
            assert!((b.positions[[k + 1, 0, 0]] - a.positions[[k, 0, 0]] - 0.05).abs() < 1e-7);
            assert!((b.positions[[k + 1, 0, 2]] - a.positions[[k, 0, 2]] + 0.02).abs() < 1e-7);
        }
    }

    fn pose_with_foot_track(track: &[[f64; 3]]) -> GlobalPose {
        let n = track.len();
        let mut positions = Array3::zeros((n, JOINT_COUNT, 3));
        for (k, p) in track.iter().enumerate() {
            for j in 0..JOINT_COUNT {
                for c in 0..3 {
                    positions[[k, j, c]] = p[c];
                }
            }
        }
        GlobalPose {
            positions,
            heading: Array1::zeros(n),
        }
    }

    #[test]
    fn static_grounded_foot_is_planted() {
        let pose = pose_with_foot_track(&[[0.1, 0.0, 0.2]; 8]);
        let labels = detect_foot_contacts(
            &pose,
            &SkeletonSpec::default(),
            ContactThresholds::default(),
        )
        .unwrap();
        assert!(labels.iter().all(|&l| l == 1.0));
    }

    #[test]
    fn fast_foot_is_never_planted() {
        let track: Vec<_> = (0..8).map(|k| [0.5 * k as f64, 0.0, 0.0]).collect();
        let labels = detect_foot_contacts(
            &pose_with_foot_track(&track),
            &SkeletonSpec::default(),
            ContactThresholds::default(),
        )
        .unwrap();
        assert!(labels.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn displacement_at_threshold_is_not_planted() {
        // Steps of exactly 0.25 m (exact in binary) against a 0.25 m threshold,
        // with one slower step in the middle.
        let xs = [0.0, 0.25, 0.5, 0.625, 0.875, 1.125];
        let track: Vec<_> = xs.iter().map(|&x| [x, 0.0, 0.0]).collect();
        let th = ContactThresholds {
            velocity: 0.25,
            height: 0.05,
        };
        let labels =
            detect_foot_contacts(&pose_with_foot_track(&track), &SkeletonSpec::default(), th)
                .unwrap();
        // brute-force recompute from the definition
        for k in 0..xs.len() {
            let src = k.min(xs.len() - 2);
            let expected = (xs[src + 1] - xs[src]).abs() < 0.25;
            assert_eq!(labels[[k, 0]] == 1.0, expected, "frame {k}");
        }
        assert_eq!(labels[[2, 0]], 1.0);
        assert_eq!(labels[[1, 0]], 0.0);
    }

    #[test]
    fn thresholds_must_be_positive() {
        let pose = pose_with_foot_track(&[[0.0; 3]; 2]);
        let th = ContactThresholds {
            velocity: 0.0,
            height: 0.05,
        };
        assert!(detect_foot_contacts(&pose, &SkeletonSpec::default(), th).is_err());
    }

    #[test]
    fn junction_of_repeated_frame_is_zero() {
        let mut a = zero_clip(6);
        for k in 0..6 {
            let mut row = a.frames_mut().row_mut(k);
            row[ROOT_YAW] = 0.1;
            row[ROOT_VELOCITY.start + 1] = 0.02;
            row[ROOT_HEIGHT] = 0.9;
            row[position_channel(20)] = 0.3 + 0.01 * k as f32;
        }
        let b = a.slice(5..6).concat(&zero_clip(3)).unwrap();
        let gap = junction_gap(&a, &b, &SkeletonSpec::default()).unwrap();
        assert!(gap < 1e-12, "gap {gap}");
    }

    #[test]
    fn uniform_offset_gap_is_delta_sqrt3() {
        let delta = 0.07;
        let a: Vec<[f64; 3]> = (0..JOINT_COUNT).map(|j| [j as f64, 1.0, -0.5]).collect();
        let b: Vec<[f64; 3]> = a
            .iter()
            .map(|p| [p[0] + delta, p[1] + delta, p[2] + delta])
            .collect();
        let gap = max_joint_distance(&a, &b);
        assert!((gap - delta * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn root_height_offset_moves_every_joint() {
        let a = zero_clip(4);
        let mut b = zero_clip(4);
        b.frames_mut()[[0, ROOT_HEIGHT]] = 0.25;
        let gap = junction_gap(&a, &b, &SkeletonSpec::default()).unwrap();
        assert!((gap - 0.25).abs() < 1e-12);
    }
}
