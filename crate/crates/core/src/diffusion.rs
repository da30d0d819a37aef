//! Linear-β noise schedules, forward noising, the reverse-step posterior
//! and the multi-scale noise stack fed to the branch encoders.
//!
//! Timesteps are 1-based; index 0 of every table is the clean state
//! (`alpha_bar[0] = 1`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, shape_err, Result};
use crate::numkit::{Element, Tensor};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_TIMESTEPS: [usize; 7] = [0, 50, 100, 300, 500, 700, 900];

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma2: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        build_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// Cumulative product of α up to `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Posterior variance of step `t`; zero at `t = 1`.
    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2[t]
    }

    fn check_step(&self, t: usize, allow_zero: bool) -> Result<()> {
        let lo = if allow_zero { 0 } else { 1 };
        if t < lo || t > self.steps {
            return Err(invalid(format!(
                "timestep {t} outside [{lo}, {}]",
                self.steps
            )));
        }
        Ok(())
    }
}

/// Linear β interpolation from `beta_start` to `beta_end` over `steps`.
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(invalid("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(invalid(format!(
            "beta range must satisfy 0 < start ≤ end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let mut beta = vec![0.0; steps + 1];
    for (t, b) in beta.iter_mut().enumerate().skip(1) {
        *b = if steps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64
        };
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
    }
    let mut sigma2 = vec![0.0; steps + 1];
    for t in 1..=steps {
        sigma2[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
    }
    Ok(NoiseSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
        sigma2,
    })
}

fn combine<T: Element>(
    a: &Tensor<T>,
    ca: f64,
    b: &Tensor<T>,
    cb: f64,
    op: &'static str,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| T::of(ca * x.f64() + cb * y.f64()))
        .collect();
    Tensor::new(a.shape(), data)
}

/// One forward Markov step: `√αₜ·x + √(1−αₜ)·ε`.
pub fn q_step<T: Element>(
    x_prev: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    s: &NoiseSchedule,
) -> Result<Tensor<T>> {
    s.check_step(t, false)?;
    let a = s.alpha(t);
    combine(x_prev, a.sqrt(), eps, (1.0 - a).sqrt(), "q_step")
}

/// Closed-form noising to step `t`: `√ᾱₜ·x₀ + √(1−ᾱₜ)·ε`; `t = 0` returns
/// `x0` unchanged.
pub fn q_sample<T: Element>(
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    s: &NoiseSchedule,
) -> Result<Tensor<T>> {
    s.check_step(t, true)?;
    if eps.shape() != x0.shape() {
        return Err(shape_err(
            "q_sample",
            format!("{:?} vs {:?}", x0.shape(), eps.shape()),
        ));
    }
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = s.alpha_bar(t);
    combine(x0, ab.sqrt(), eps, (1.0 - ab).sqrt(), "q_sample")
}

/// Reverse-step mean `(xₜ − (1−αₜ)/√(1−ᾱₜ)·ε̂)/√αₜ`.
pub fn posterior_mean<T: Element>(
    x_t: &Tensor<T>,
    eps_pred: &Tensor<T>,
    t: usize,
    s: &NoiseSchedule,
) -> Result<Tensor<T>> {
    s.check_step(t, false)?;
    let a = s.alpha(t);
    let k = (1.0 - a) / (1.0 - s.alpha_bar(t)).sqrt();
    combine(x_t, 1.0 / a.sqrt(), eps_pred, -k / a.sqrt(), "posterior_step")
}

/// One reverse step: posterior mean plus `σₜ·noise`.
pub fn posterior_step<T: Element>(
    x_t: &Tensor<T>,
    eps_pred: &Tensor<T>,
    t: usize,
    s: &NoiseSchedule,
    noise: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mu = posterior_mean(x_t, eps_pred, t, s)?;
    combine(&mu, 1.0, noise, s.sigma2(t).sqrt(), "posterior_step")
}

/// Identifies one independent noise stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub stream: u64,
    pub round: u64,
    pub sample: u64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl NoiseKey {
    /// Counter-style generator: the same key always yields the same stream,
    /// independent of how many other streams were drawn before.
    pub fn rng(&self) -> ChaCha8Rng {
        let h = [self.stream, self.round, self.sample]
            .iter()
            .fold(mix(self.seed), |acc, &v| mix(acc ^ mix(v)));
        ChaCha8Rng::seed_from_u64(h)
    }
}

pub fn standard_normal<T: Element, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Channel-axis concatenation of one source noised at several timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleStack<T: Element = f32> {
    pub source_shape: [usize; 3],
    pub timesteps: Vec<usize>,
    /// `[h, w, c·len(timesteps)]`; slice `k` holds channels `k·c..(k+1)·c`
    pub stack: Tensor<T>,
}

pub fn check_timesteps(timesteps: &[usize], s: &NoiseSchedule) -> Result<()> {
    if timesteps.first() != Some(&0) {
        return Err(invalid("timestep list must start with 0"));
    }
    if timesteps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(format!(
            "timestep list {timesteps:?} must be strictly ascending"
        )));
    }
    if let Some(&t) = timesteps.iter().find(|&&t| t > s.steps()) {
        return Err(invalid(format!(
            "timestep {t} exceeds schedule length {}",
            s.steps()
        )));
    }
    Ok(())
}

/// Noises `x0` (`[h,w,c]`) at every timestep with independent ε and stacks
/// the results along channels. Noise for timestep 0 is not drawn.
pub fn multiscale_stack<T: Element, R: Rng + ?Sized>(
    x0: &Tensor<T>,
    timesteps: &[usize],
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<MultiScaleStack<T>> {
    check_timesteps(timesteps, s)?;
    let &[h, w, c] = x0.shape() else {
        return Err(shape_err(
            "multiscale_stack",
            format!("expected [h,w,c], got {:?}", x0.shape()),
        ));
    };
    let k = timesteps.len();
    let mut out = vec![T::ZERO; h * w * c * k];
    for (slot, &t) in timesteps.iter().enumerate() {
        let noised = if t == 0 {
            x0.clone()
        } else {
            let eps = standard_normal(x0.shape(), rng);
            q_sample(x0, t, &eps, s)?
        };
        for (p, px) in noised.data().chunks_exact(c).enumerate() {
            out[p * c * k + slot * c..p * c * k + (slot + 1) * c].copy_from_slice(px);
        }
    }
    Ok(MultiScaleStack {
        source_shape: [h, w, c],
        timesteps: timesteps.to_vec(),
        stack: Tensor::new(&[h, w, c * k], out)?,
    })
}

impl<T: Element> MultiScaleStack<T> {
    /// The `[h,w,c]` slice for the `k`-th timestep.
    pub fn slice(&self, k: usize) -> Tensor<T> {
        let [h, w, c] = self.source_shape;
        let n = self.timesteps.len();
        let data = self
            .stack
            .data()
            .chunks_exact(c * n)
            .flat_map(|px| px[k * c..(k + 1) * c].iter().copied())
            .collect();
        Tensor::new(&[h, w, c], data).expect("slice shape")
    }
}
