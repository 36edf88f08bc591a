use log::warn;

use crate::blocks::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("adam eps = {} must be positive", self.eps)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held a non-finite value; nothing was changed.
    Skipped,
}

/// Bias-corrected Adam over the trainable entries of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<E: Scalar = f32> {
    pub cfg: AdamConfig,
    /// First and second moments in `trainable_ids` order.
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
    /// Number of applied steps.
    pub t: u64,
}

impl<E: Scalar> Adam<E> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<E>) -> Self {
        let zeros: Vec<Tensor<E>> =
            store.trainable_ids().iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        Self { cfg, m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One update with learning rate `lr`. `grads` follow `trainable_ids`.
    pub fn step(&mut self, store: &mut ParamStore<E>, grads: &[Tensor<E>], lr: f64) -> Result<StepOutcome> {
        let ids = store.trainable_ids();
        if grads.len() != ids.len() || self.m.len() != ids.len() {
            return Err(Error::Contract(format!(
                "adam: {} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                ids.len()
            )));
        }
        for (&id, g) in ids.iter().zip(grads) {
            if g.shape() != store.get(id).shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{}: gradient {:?} vs parameter {:?}", store.name(id), g.shape(), store.get(id).shape()),
                ));
            }
        }
        if let Some((&id, _)) = ids.iter().zip(grads).find(|(_, g)| !g.all_finite()) {
            warn!("adam: non-finite gradient for {}; step skipped", store.name(id));
            return Ok(StepOutcome::Skipped);
        }
        let AdamConfig { beta1: b1, beta2: b2, eps } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (k, (&id, g)) in ids.iter().zip(grads).enumerate() {
            let mut p = store.get(id).clone();
            let (pd, md, vd) = (p.data_mut(), self.m[k].data_mut(), self.v[k].data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i].f64();
                let mi = b1 * md[i].f64() + (1.0 - b1) * gi;
                let vi = b2 * vd[i].f64() + (1.0 - b2) * gi * gi;
                md[i] = E::of(mi);
                vd[i] = E::of(vi);
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                pd[i] = E::of(pd[i].f64() - update);
            }
            store.set(id, p)?;
        }
        Ok(StepOutcome::Applied)
    }
}

/// Step decay: `lr0 * decay^(milestones reached)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiStep {
    pub lr0: f64,
    pub milestones: Vec<u64>,
    pub decay: f64,
}

impl MultiStep {
    /// Milestones at 50%, 75% and 90% of the run.
    pub fn default_milestones(max_steps: u64) -> Vec<u64> {
        let mut out: Vec<u64> = [0.5, 0.75, 0.9].iter().map(|f| (max_steps as f64 * f).round() as u64).collect();
        out.dedup();
        out.retain(|&m| m > 0);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay {} must lie in (0, 1]", self.decay)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("milestones {:?} must be strictly increasing", self.milestones)));
        }
        Ok(())
    }

    /// Rate for the 1-based update `step`; a milestone counts once `step`
    /// reaches it.
    pub fn lr_at(&self, step: u64) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| step >= m).count();
        self.lr0 * self.decay.powi(passed as i32)
    }
}
