use crate::error::{invalid, shape_err, Result};
use crate::numkit::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// multiplicative decay applied every `decay_every` epochs
    pub gamma: f64,
    pub decay_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            gamma: 0.5,
            decay_every: 60,
        }
    }
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate {} must be finite and ≥ 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid("Adam epsilon must be > 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || self.decay_every == 0 {
            return Err(invalid("step decay needs 0 < gamma ≤ 1 and a positive interval"));
        }
        Ok(())
    }

    /// Step-decayed learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.gamma.powi((epoch / self.decay_every) as i32)
    }
}

/// Per-parameter optimizer memory.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new<T: Element>(params: &[Tensor<T>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// Applies the averaged gradient to `params` in place. Parameters whose
/// gradient is `None` are left untouched.
pub fn global_update<T: Element>(
    params: &mut [Tensor<T>],
    grads: &[Option<Tensor<T>>],
    cfg: &OptimConfig,
    lr: f64,
    state: &mut OptimState,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(shape_err(
            "global_update",
            format!("{} parameters, {} gradients, {} moment slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(shape_err(
                    "global_update",
                    format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (w, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *w = T::of(w.f64() - lr * gv.f64());
                }
            }
            OptimizerKind::Adam => {
                let (m, v) = (&mut state.m[i], &mut state.v[i]);
                for (j, (w, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                    let gv = gv.f64();
                    m[j] = b1 * m[j] + (1.0 - b1) * gv;
                    v[j] = b2 * v[j] + (1.0 - b2) * gv * gv;
                    let mh = m[j] / c1;
                    let vh = v[j] / c2;
                    *w = T::of(w.f64() - lr * mh / (vh.sqrt() + cfg.eps));
                }
            }
        }
    }
    Ok(())
}
