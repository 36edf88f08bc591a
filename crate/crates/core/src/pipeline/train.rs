use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::Rng;

use super::augment::augment;
use super::config::RunConfig;
use super::dataset::{random_crop, Sample, SCALE};
use super::eval::{evaluate, EvalTable};
use super::optim::{Adam, StepOutcome};
use super::report::{loss, num, Csv};
use crate::blocks::{Builder, Ctx, ParamStore};
use crate::error::{Error, Result};
use crate::losses::{
    bicubic_resize, hinge_d_loss, hinge_g_loss, l1_loss, perceptual_loss, r1_penalty, Discriminator,
    MultiScaleDiscriminator,
};
use crate::model::{Checkpoint, HiTSRModel, ADAM_M, ADAM_V, TRAIN_STATE};
use crate::tensor::{Scalar, SeededRng, Tape, Tensor, Var};

/// RNG streams derived from the run seed.
const STREAM_POOL: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_DISC: u64 = 3;

/// Stacks `[1, C, H, W]` tensors along the batch axis.
pub fn stack(items: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = items.first().ok_or_else(|| Error::Contract("cannot stack an empty batch".into()))?;
    let s = first.shape();
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for t in items {
        if t.shape() != s {
            return Err(Error::shape("stack", format!("{:?} vs {s:?}", t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(&[items.len(), s[1], s[2], s[3]], data)
}

/// Per-run tables. Wall-clock time is kept out of the CSV files so that
/// identical runs write identical bytes.
#[derive(Clone, Debug)]
pub struct RunReport {
    /// `step, lr, loss, rec, per, adv, d_loss, applied`
    pub losses: Csv,
    /// `step, block, head, sigma`
    pub gates: Csv,
    /// `step` followed by the eval summary columns.
    pub evals: Csv,
    pub wall_clock_secs: f64,
}

impl RunReport {
    fn new() -> Self {
        Self {
            losses: Csv::new(&["step", "lr", "loss", "rec", "per", "adv", "d_loss", "applied"]),
            gates: Csv::new(&["step", "block", "head", "sigma"]),
            evals: Csv::new(&["step", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim"]),
            wall_clock_secs: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.losses.write(&dir.join("losses.csv"))?;
        self.gates.write(&dir.join("gates.csv"))?;
        self.evals.write(&dir.join("evals.csv"))
    }
}

/// Loss terms of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub rec: f64,
    pub per: f64,
    pub adv: f64,
    pub d_loss: f64,
    pub outcome: StepOutcome,
}

struct Critic<E: Scalar> {
    net: MultiScaleDiscriminator,
    params: ParamStore<E>,
    adam: Adam<E>,
}

/// A batch ready for the network.
struct Batch {
    lr: Tensor<f32>,
    hr: Tensor<f32>,
    reference: Tensor<f32>,
}

fn batch_of(samples: &[Sample]) -> Result<Batch> {
    let hr = stack(&samples.iter().map(|s| &s.hr).collect::<Vec<_>>())?;
    let reference = stack(&samples.iter().map(|s| &s.reference).collect::<Vec<_>>())?;
    let lr = bicubic_resize(&hr, hr.shape()[2] / SCALE, hr.shape()[3] / SCALE)?;
    Ok(Batch { lr, hr, reference })
}

fn trainable_grads<'t, E: Scalar>(
    store: &ParamStore<E>,
    ctx: &Ctx<'t, E>,
    grads: &crate::tensor::Gradients<E>,
) -> Vec<Tensor<E>> {
    store.trainable_ids().iter().map(|&id| grads.get_or_zeros(ctx.p(id))).collect()
}

/// The optimisation loop and all state needed to resume it exactly.
pub struct Trainer<E: Scalar = f32> {
    pub cfg: RunConfig,
    pub model: HiTSRModel<E>,
    adam: Adam<E>,
    critic: Option<Critic<E>>,
    data_rng: SeededRng,
    pub step: u64,
    pool: Vec<Sample>,
    fixed: bool,
    eval_set: Vec<Sample>,
    pub threads: usize,
    pub report: RunReport,
    last_checkpoint: Option<PathBuf>,
}

impl<E: Scalar> Trainer<E> {
    /// Fresh run: model weights from `cfg.train.seed`.
    pub fn new(cfg: RunConfig, train_set: Vec<Sample>, eval_set: Vec<Sample>) -> Result<Self> {
        let model = HiTSRModel::build(&cfg.model, cfg.train.seed)?;
        Self::assemble(cfg, model, train_set, eval_set)
    }

    fn assemble(cfg: RunConfig, model: HiTSRModel<E>, train_set: Vec<Sample>, eval_set: Vec<Sample>) -> Result<Self> {
        cfg.train.validate()?;
        let t = &cfg.train;
        if train_set.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let lr_side = t.crop / SCALE;
        cfg.model.check_input(lr_side, lr_side).map_err(|e| e.context(format!("crop {}", t.crop)))?;
        let fixed = t.fixed_crops > 0;
        let pool = if fixed {
            let mut rng = SeededRng::fork(t.seed, STREAM_POOL);
            (0..t.fixed_crops)
                .map(|i| random_crop(&train_set[i % train_set.len()], t.crop, &mut rng))
                .collect::<Result<_>>()?
        } else {
            train_set
        };
        let critic = if t.weights.w_adv > 0.0 {
            if !t.crop.is_multiple_of(8) {
                return Err(Error::Config(format!("adversarial training needs a crop multiple of 8, got {}", t.crop)));
            }
            let mut params = ParamStore::new();
            let mut rng = SeededRng::fork(t.seed, STREAM_DISC);
            let net = MultiScaleDiscriminator::new(&mut Builder::new(&mut params, &mut rng), t.disc_width)?;
            let adam = Adam::new(t.adam, &params);
            Some(Critic { net, params, adam })
        } else {
            None
        };
        Ok(Self {
            adam: Adam::new(t.adam, &model.params),
            data_rng: SeededRng::fork(t.seed, STREAM_DATA),
            critic,
            model,
            step: 0,
            pool,
            fixed,
            eval_set,
            threads: 1,
            report: RunReport::new(),
            last_checkpoint: None,
            cfg,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(cfg: RunConfig, train_set: Vec<Sample>, eval_set: Vec<Sample>, ckpt: &Checkpoint) -> Result<Self> {
        let (model, extra) = HiTSRModel::from_checkpoint(ckpt, Some(&cfg.model))?;
        let mut tr = Self::assemble(cfg, model, train_set, eval_set)?;
        tr.step = ckpt.step;
        let rng = ckpt.rng.as_ref().ok_or_else(|| Error::Format("checkpoint has no rng state".into()))?;
        tr.data_rng = SeededRng::from_state(rng)?;
        let find = |name: &str| extra.iter().find(|(n, _)| n == name).map(|(_, t)| t.cast::<E>());
        let scalar = |name: &str| -> Result<u64> {
            find(name)
                .map(|t| t.data()[0].f64() as u64)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
        };
        load_moments(&mut tr.adam, &tr.model.params, "", &find)?;
        tr.adam.t = scalar(&format!("{TRAIN_STATE}adam_t"))?;
        if let Some(c) = &mut tr.critic {
            let prefix = format!("{TRAIN_STATE}disc.");
            for id in c.params.ids().collect::<Vec<_>>() {
                let name = format!("{prefix}{}", c.params.name(id));
                let t = find(&name).ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
                c.params.set(id, t)?;
            }
            load_moments(&mut c.adam, &c.params, &prefix, &find)?;
            c.adam.t = scalar(&format!("{prefix}adam_t"))?;
        }
        info!("resumed at step {}", tr.step);
        Ok(tr)
    }

    /// Model, optimiser and data-stream state at the current step.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut extra = Vec::new();
        push_moments(&mut extra, &self.adam, &self.model.params, "");
        extra.push((format!("{TRAIN_STATE}adam_t"), Tensor::scalar(self.adam.t as f32)));
        if let Some(c) = &self.critic {
            let prefix = format!("{TRAIN_STATE}disc.");
            for id in c.params.ids() {
                extra.push((format!("{prefix}{}", c.params.name(id)), c.params.get(id).cast()));
            }
            push_moments(&mut extra, &c.adam, &c.params, &prefix);
            extra.push((format!("{prefix}adam_t"), Tensor::scalar(c.adam.t as f32)));
        }
        self.model.to_checkpoint(self.step, Some(self.data_rng.state()), &extra)
    }

    /// Training crops when `fixed_crops` is set, otherwise the full images.
    pub fn pool(&self) -> &[Sample] {
        &self.pool
    }

    fn next_batch(&mut self) -> Result<Batch> {
        let t = &self.cfg.train;
        let n = self.pool.len();
        let mut samples = Vec::with_capacity(t.batch);
        for i in 0..t.batch {
            let s = if self.fixed {
                self.pool[(self.step as usize * t.batch + i) % n].clone()
            } else {
                let j = self.data_rng.random_range(0..n);
                random_crop(&self.pool[j], t.crop, &mut self.data_rng)?
            };
            samples.push(if t.augment { augment(&s, &mut self.data_rng)? } else { s });
        }
        batch_of(&samples)
    }

    /// Mean L1 over the fixed crops (or every pool image), without updating.
    pub fn pool_loss(&self) -> Result<f64> {
        let b = batch_of(&self.pool)?;
        let tape = Tape::no_grad();
        let ctx = Ctx::bind(&tape, &self.model.params, false);
        let r = self.model.uses_reference().then(|| tape.constant(b.reference.cast()));
        let sr = self.model.forward(&ctx, &tape.constant(b.lr.cast()), r.as_ref())?;
        Ok(l1_loss(&sr, &tape.constant(b.hr.cast()))?.value().item().f64())
    }

    /// PSNR/SSIM of the model and bicubic on the training pool.
    pub fn pool_scores(&self) -> Result<EvalTable> {
        evaluate(&self.model, &self.pool, self.cfg.train.metric, self.threads)
    }

    fn critic_step(&mut self, b: &Batch, fake: &Tensor<E>, lr: f64) -> Result<f64> {
        let gamma = self.cfg.train.r1_gamma;
        let Some(c) = &mut self.critic else { return Ok(0.0) };
        let tape = Tape::new();
        let ctx = Ctx::bind(&tape, &c.params, true);
        let real = tape.constant(b.hr.cast());
        let d_real = c.net.logits(&ctx, &real)?;
        let d_fake = c.net.logits(&ctx, &tape.constant(fake.clone()))?;
        let mut d_loss = hinge_d_loss(&d_real, &d_fake)?;
        if gamma > 0.0 {
            d_loss = d_loss.add(&r1_penalty(&c.net, &ctx, &real, gamma)?)?;
        }
        let value = d_loss.value().item().f64();
        let grads = tape.backward(&d_loss)?;
        let g = trainable_grads(&c.params, &ctx, &grads);
        c.adam.step(&mut c.params, &g, lr)?;
        Ok(value)
    }

    /// One optimisation step.
    pub fn step_once(&mut self) -> Result<StepLog> {
        let b = self.next_batch()?;
        let lr = self.cfg.train.schedule().lr_at(self.step + 1);
        let w = self.cfg.train.weights;
        let tape = Tape::new();
        let ctx = Ctx::bind(&tape, &self.model.params, true);
        let r = self.model.uses_reference().then(|| tape.constant(b.reference.cast()));
        let sr = self.model.forward(&ctx, &tape.constant(b.lr.cast()), r.as_ref())?;
        let hr = tape.constant(b.hr.cast());
        let rec = l1_loss(&sr, &hr)?;
        let per = match (w.w_per > 0.0, self.model.feature_net()) {
            (true, Some(net)) => Some(perceptual_loss(&sr, &hr, &net)?),
            _ => None,
        };
        let (mut adv, mut d_loss) = (None, 0.0);
        if w.w_adv > 0.0 {
            d_loss = self.critic_step(&b, sr.value(), lr)?;
            let c = self.critic.as_ref().expect("critic exists when w_adv > 0");
            let dctx = Ctx::bind(&tape, &c.params, false);
            adv = Some(hinge_g_loss(&c.net.logits(&dctx, &sr)?)?);
        }
        let total = w.combine(&rec, per.as_ref(), adv.as_ref())?;
        let value = |v: Option<&Var<'_, E>>| v.map(|v| v.value().item().f64()).unwrap_or(0.0);
        let loss = total.value().item().f64();
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss} at step {}", self.step + 1)));
        }
        let grads = tape.backward(&total)?;
        let g = trainable_grads(&self.model.params, &ctx, &grads);
        let outcome = self.adam.step(&mut self.model.params, &g, lr)?;
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            lr,
            loss,
            rec: value(Some(&rec)),
            per: value(per.as_ref()),
            adv: value(adv.as_ref()),
            d_loss,
            outcome,
        })
    }

    fn telemetry(&mut self) -> Result<()> {
        for g in self.model.gate_readings() {
            for (h, s) in g.sigma.iter().enumerate() {
                let row = vec![self.step.to_string(), g.block.to_string(), h.to_string(), format!("{s:.9}")];
                self.report.gates.push(row)?;
            }
        }
        if !self.eval_set.is_empty() {
            let table = evaluate(&self.model, &self.eval_set, self.cfg.train.metric, self.threads)?;
            let (m, b) = table.mean();
            info!("step {}: eval psnr {:.3} (bicubic {:.3})", self.step, m.psnr, b.psnr);
            let row = vec![self.step.to_string(), num(m.psnr), num(m.ssim), num(b.psnr), num(b.ssim)];
            self.report.evals.push(row)?;
        }
        Ok(())
    }

    fn save(&mut self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("checkpoint-{:06}.ckpt", self.step));
        self.checkpoint().save(&path)?;
        self.last_checkpoint = Some(path.clone());
        Ok(path)
    }

    /// Runs until `cfg.train.max_steps`, writing checkpoints and reports to
    /// `out_dir` if given. A non-finite loss aborts with a pointer to the
    /// last checkpoint written.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        let start = Instant::now();
        let t = self.cfg.train.clone();
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            if self.step == 0 {
                self.save(dir)?;
            }
        }
        if self.report.gates.is_empty() {
            self.telemetry()?;
        }
        while self.step < t.max_steps {
            let log = match self.step_once() {
                Ok(log) => log,
                Err(e) if e.is_numeric() => {
                    let pointer = match &self.last_checkpoint {
                        Some(p) => format!("last good checkpoint: {}", p.display()),
                        None => "no checkpoint was written".to_string(),
                    };
                    return Err(Error::Numeric(format!("training aborted: {e}; {pointer}")));
                }
                Err(e) => return Err(e),
            };
            if log.outcome == StepOutcome::Skipped {
                warn!("step {}: update skipped", log.step);
            }
            self.report.losses.push(vec![
                log.step.to_string(),
                format!("{:e}", log.lr),
                loss(log.loss),
                loss(log.rec),
                loss(log.per),
                loss(log.adv),
                loss(log.d_loss),
                (log.outcome == StepOutcome::Applied).to_string(),
            ])?;
            let step = self.step;
            let at = |interval: u64| interval > 0 && step.is_multiple_of(interval);
            if at(t.eval_interval) || self.step == t.max_steps {
                info!("step {}: loss {:.6}", self.step, log.loss);
                self.telemetry()?;
            }
            if let Some(dir) = out_dir {
                if at(t.checkpoint_interval) || self.step == t.max_steps {
                    self.save(dir)?;
                }
            }
        }
        self.report.wall_clock_secs += start.elapsed().as_secs_f64();
        if let Some(dir) = out_dir {
            self.report.write(dir)?;
        }
        Ok(())
    }

    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.last_checkpoint.as_deref()
    }
}

fn push_moments<E: Scalar>(out: &mut Vec<(String, Tensor<f32>)>, adam: &Adam<E>, store: &ParamStore<E>, prefix: &str) {
    for (k, id) in store.trainable_ids().into_iter().enumerate() {
        out.push((format!("{prefix}{ADAM_M}{}", store.name(id)), adam.m[k].cast()));
        out.push((format!("{prefix}{ADAM_V}{}", store.name(id)), adam.v[k].cast()));
    }
}

fn load_moments<E: Scalar>(
    adam: &mut Adam<E>,
    store: &ParamStore<E>,
    prefix: &str,
    find: &dyn Fn(&str) -> Option<Tensor<E>>,
) -> Result<()> {
    for (k, id) in store.trainable_ids().into_iter().enumerate() {
        for (slot, kind) in [(&mut adam.m[k], ADAM_M), (&mut adam.v[k], ADAM_V)] {
            let name = format!("{prefix}{kind}{}", store.name(id));
            *slot = find(&name).ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
        }
    }
    Ok(())
}
