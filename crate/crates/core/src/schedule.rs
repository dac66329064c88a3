//! Linear variance schedule and the closed-form Gaussian transitions of the
//! forward process. Timesteps are 1-indexed; 0 denotes the clean signal.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::motion::MotionClip;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// beta_t rises linearly from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            // Endpoint-exact form of beta_start + (beta_end - beta_start) u.
            (0..steps)
                .map(|i| {
                    let u = i as f64 / (steps - 1) as f64;
                    beta_start * (1.0 - u) + beta_end * u
                })
                .collect()
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
        })
    }

    /// T = 1000, beta from 1e-4 to 0.02.
    pub fn full() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid constants")
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::Timestep {
                t,
                max: self.steps(),
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

fn check_shape(x0: &Array2<f32>, noise: &Array2<f32>) -> Result<()> {
    if x0.dim() != noise.dim() {
        return Err(Error::Shape(format!(
            "noise {:?} does not match signal {:?}",
            noise.dim(),
            x0.dim()
        )));
    }
    Ok(())
}

/// Draws from q(X_t | X_0): sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
pub fn q_sample_array(
    x0: &Array2<f32>,
    t: usize,
    noise: &Array2<f32>,
    sched: &NoiseSchedule,
) -> Result<Array2<f32>> {
    check_shape(x0, noise)?;
    let ab = sched.alpha_bar(t)?;
    let (a, b) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    Ok(Zip::from(x0).and(noise).map_collect(|&x, &n| a * x + b * n))
}

pub fn q_sample(
    x0: &MotionClip,
    t: usize,
    noise: &Array2<f32>,
    sched: &NoiseSchedule,
) -> Result<MotionClip> {
    Ok(MotionClip::new(
        q_sample_array(x0.frames(), t, noise, sched)?,
        x0.fps(),
    ))
}

/// One application of q(X_t | X_{t-1}): sqrt(1 - beta_t) x + sqrt(beta_t) noise.
pub fn q_step_array(
    x_prev: &Array2<f32>,
    t: usize,
    noise: &Array2<f32>,
    sched: &NoiseSchedule,
) -> Result<Array2<f32>> {
    check_shape(x_prev, noise)?;
    let beta = sched.beta(t)?;
    let (a, b) = ((1.0 - beta).sqrt() as f32, beta.sqrt() as f32);
    Ok(Zip::from(x_prev)
        .and(noise)
        .map_collect(|&x, &n| a * x + b * n))
}

/// Re-noises a clean estimate to noise scale `s`; `s = 0` returns it as is.
pub fn renoise_step_array(
    x0_hat: &Array2<f32>,
    s: usize,
    noise: &Array2<f32>,
    sched: &NoiseSchedule,
) -> Result<Array2<f32>> {
    if s > sched.steps() {
        return Err(Error::Timestep {
            t: s,
            max: sched.steps(),
        });
    }
    if s == 0 {
        return Ok(x0_hat.clone());
    }
    q_sample_array(x0_hat, s, noise, sched)
}

pub fn renoise_step(
    x0_hat: &MotionClip,
    s: usize,
    noise: &Array2<f32>,
    sched: &NoiseSchedule,
) -> Result<MotionClip> {
    Ok(MotionClip::new(
        renoise_step_array(x0_hat.frames(), s, noise, sched)?,
        x0_hat.fps(),
    ))
}
