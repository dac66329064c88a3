//! Geometric training objective over predicted and ground-truth clean
//! motion: root height, world joint positions, 6D rotations, velocities and
//! contact-masked foot sliding. Gradients with respect to the prediction
//! are derived by hand, including through world-position recovery.

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{
    recover_positions_raw, GlobalPose, MotionClip, SkeletonSpec, CONTACTS, FEATURE_DIM,
    JOINT_COUNT, POSITIONS, ROOT_HEIGHT, ROOT_VELOCITY, ROOT_YAW, ROTATIONS, VELOCITIES,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_h: f64,
    pub lambda_p: f64,
    pub lambda_r: f64,
    pub lambda_v: f64,
    pub lambda_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_h: 1.0,
            lambda_p: 1.0,
            lambda_r: 1.0,
            lambda_v: 1.0,
            lambda_f: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_h,
            self.lambda_p,
            self.lambda_r,
            self.lambda_v,
            self.lambda_f,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub height: f64,
    pub position: f64,
    pub rotation: f64,
    pub velocity: f64,
    pub foot_slide: f64,
    pub total: f64,
}

/// Channels supervised by the velocity term: root yaw rate, root linear
/// velocity and the 22 joint velocities.
pub fn velocity_channels() -> impl Iterator<Item = usize> {
    [ROOT_YAW]
        .into_iter()
        .chain(ROOT_VELOCITY)
        .chain(VELOCITIES)
}

fn check_shapes(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if pred.ncols() != FEATURE_DIM || pred.nrows() == 0 {
        return Err(Error::Shape(format!(
            "expected F x {FEATURE_DIM} with F >= 1, got {:?}",
            pred.dim()
        )));
    }
    Ok(())
}

/// Mean squared error over a channel subset, accumulating its gradient.
fn channel_mse(
    pred: ArrayView2<f64>,
    gt: ArrayView2<f64>,
    channels: &[usize],
    grad: Option<(&mut Array2<f64>, f64)>,
) -> f64 {
    let n = (pred.nrows() * channels.len()) as f64;
    let mut sum = 0.0;
    for k in 0..pred.nrows() {
        for &c in channels {
            let d = pred[[k, c]] - gt[[k, c]];
            sum += d * d;
        }
    }
    if let Some((g, weight)) = grad {
        for k in 0..pred.nrows() {
            for &c in channels {
                g[[k, c]] += weight * 2.0 * (pred[[k, c]] - gt[[k, c]]) / n;
            }
        }
    }
    sum / n
}

/// Loss terms, weighted total and d(total)/d(pred).
pub fn loss_and_gradient(
    pred: ArrayView2<f64>,
    gt: ArrayView2<f64>,
    skeleton: &SkeletonSpec,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Array2<f64>)> {
    evaluate(pred, gt, skeleton, weights, true).map(|(b, g)| (b, g.expect("gradient requested")))
}

pub fn loss_terms(
    pred: ArrayView2<f64>,
    gt: ArrayView2<f64>,
    skeleton: &SkeletonSpec,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    evaluate(pred, gt, skeleton, weights, false).map(|(b, _)| b)
}

pub fn geometric_losses(
    pred: &MotionClip,
    gt: &MotionClip,
    skeleton: &SkeletonSpec,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    loss_terms(pred.to_f64().view(), gt.to_f64().view(), skeleton, weights)
}

fn evaluate(
    pred: ArrayView2<f64>,
    gt: ArrayView2<f64>,
    skeleton: &SkeletonSpec,
    w: &LossWeights,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Array2<f64>>)> {
    check_shapes(pred, gt)?;
    let n = pred.nrows();
    let mut grad = want_grad.then(|| Array2::zeros(pred.dim()));

    let height = channel_mse(
        pred,
        gt,
        &[ROOT_HEIGHT],
        grad.as_mut().map(|g| (g, w.lambda_h)),
    );
    let rot: Vec<usize> = ROTATIONS.collect();
    let rotation = channel_mse(pred, gt, &rot, grad.as_mut().map(|g| (g, w.lambda_r)));
    let vel: Vec<usize> = velocity_channels().collect();
    let velocity = channel_mse(pred, gt, &vel, grad.as_mut().map(|g| (g, w.lambda_v)));

    let wp = recover_positions_raw(pred);
    let wg = recover_positions_raw(gt);
    // d(total)/d(world positions of the prediction)
    let mut dworld = want_grad.then(|| Array3::<f64>::zeros((n, JOINT_COUNT, 3)));

    let count = (n * JOINT_COUNT * 3) as f64;
    let mut position = 0.0;
    for ((k, j, c), &p) in wp.positions.indexed_iter() {
        let d = p - wg.positions[[k, j, c]];
        position += d * d;
        if let Some(e) = dworld.as_mut() {
            e[[k, j, c]] += w.lambda_p * 2.0 * d / count;
        }
    }
    position /= count;

    let mut foot_slide = 0.0;
    if n > 1 {
        let count = ((n - 1) * 4) as f64;
        for (f, &joint) in skeleton.foot_joints.iter().enumerate() {
            for k in 0..n - 1 {
                let mask = gt[[k, CONTACTS.start + f]];
                for c in 0..3 {
                    let d = wp.positions[[k + 1, joint, c]] - wp.positions[[k, joint, c]];
                    foot_slide += mask * d * d;
                    if let Some(e) = dworld.as_mut() {
                        let g = w.lambda_f * 2.0 * mask * d / count;
                        e[[k + 1, joint, c]] += g;
                        e[[k, joint, c]] -= g;
                    }
                }
            }
        }
        foot_slide /= count;
    }

    if let (Some(g), Some(e)) = (grad.as_mut(), dworld.as_ref()) {
        backprop_recovery(pred, &wp, e, g);
    }

    let total = w.lambda_h * height
        + w.lambda_p * position
        + w.lambda_r * rotation
        + w.lambda_v * velocity
        + w.lambda_f * foot_slide;
    Ok((
        LossBreakdown {
            height,
            position,
            rotation,
            velocity,
            foot_slide,
            total,
        },
        grad,
    ))
}

/// Chains d(loss)/d(world positions) back onto the feature channels that
/// produced them: yaw rate, root velocity, root height and the root-relative
/// joint positions.
fn backprop_recovery(
    features: ArrayView2<f64>,
    pose: &GlobalPose,
    dworld: &Array3<f64>,
    grad: &mut Array2<f64>,
) {
    let n = features.nrows();
    let mut dheading = vec![0.0f64; n];
    let mut droot = vec![[0.0f64; 2]; n];
    for k in 0..n {
        let (s, c) = pose.heading[k].sin_cos();
        let mut dy = 0.0;
        for j in 0..JOINT_COUNT {
            let (ex, ey, ez) = (dworld[[k, j, 0]], dworld[[k, j, 1]], dworld[[k, j, 2]]);
            dy += ey;
            droot[k][0] += ex;
            droot[k][1] += ez;
            if j == 0 {
                continue;
            }
            let ch = POSITIONS.start + 3 * (j - 1);
            let (lx, lz) = (features[[k, ch]], features[[k, ch + 2]]);
            grad[[k, ch]] += c * ex - s * ez;
            grad[[k, ch + 1]] += ey;
            grad[[k, ch + 2]] += s * ex + c * ez;
            dheading[k] += ex * (-s * lx + c * lz) + ez * (-c * lx - s * lz);
        }
        grad[[k, ROOT_HEIGHT]] += dy;
    }
    // Root position k sums rotated velocities of frames < k.
    let mut suffix = [0.0f64; 2];
    for i in (0..n).rev() {
        if i + 1 < n {
            suffix[0] += droot[i + 1][0];
            suffix[1] += droot[i + 1][1];
        }
        let (s, c) = pose.heading[i].sin_cos();
        let (vx, vz) = (
            features[[i, ROOT_VELOCITY.start]],
            features[[i, ROOT_VELOCITY.start + 1]],
        );
        grad[[i, ROOT_VELOCITY.start]] += c * suffix[0] - s * suffix[1];
        grad[[i, ROOT_VELOCITY.start + 1]] += s * suffix[0] + c * suffix[1];
        dheading[i] += suffix[0] * (-s * vx + c * vz) + suffix[1] * (-c * vx - s * vz);
    }
    // Heading k sums yaw rates of frames < k.
    let mut acc = 0.0;
    for i in (0..n).rev() {
        if i + 1 < n {
            acc += dheading[i + 1];
        }
        grad[[i, ROOT_YAW]] += acc;
    }
}
