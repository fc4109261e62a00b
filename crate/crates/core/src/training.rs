//! Multi-scale L1 training of the vector field through the unrolled solver.
//!
//! Each step draws one scale `t` from the configured set, degrades a batch of
//! random ground-truth crops to `I(t)`, integrates them back to `t = 1`, and
//! takes one Adam step on the mean absolute error against the crops.

use std::sync::mpsc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AdamConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::odesolver::{ode_solve, SolverConfig, TapeField};
use crate::resample::make_scale_pair;
use crate::scalar::Scalar;
use crate::vectorfield::{VectorFieldConfig, VectorFieldParams};

/// Batches prepared ahead of the optimizer.
const PREFETCH: usize = 2;

/// `{1.1, 1.2, ..., 4.0}`
pub fn default_scale_set() -> Vec<f64> {
    (11..=40).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub scale_set: Vec<f64>,
    pub patch_size: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub lr_initial: f64,
    pub lr_halve_every: usize,
    pub seed: u64,
    /// Step size and method; the interval is set per batch to `[t, 1]`.
    pub solver: SolverConfig,
    pub adam: AdamConfig,
    /// Start from the identically zero field (bicubic baseline).
    pub zero_init_last: bool,
    pub record_every: usize,
    /// Write measured wall time into the log instead of `0`.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let total_steps = 5000;
        TrainConfig {
            scale_set: default_scale_set(),
            patch_size: 48,
            batch_size: 8,
            total_steps,
            lr_initial: 1e-4,
            lr_halve_every: total_steps / 3,
            seed: 0,
            solver: SolverConfig::default(),
            adam: AdamConfig::default(),
            zero_init_last: true,
            record_every: 50,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, field: &VectorFieldConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scale_set.is_empty() {
            return bad("scale_set is empty".into());
        }
        if let Some(t) = self.scale_set.iter().find(|t| !(t.is_finite() && **t >= 1.0)) {
            return bad(format!("scale_set entry {t} is below 1"));
        }
        if self.patch_size < 2 * field.kernel_size || self.patch_size < 8 {
            return bad(format!(
                "patch_size {} must be at least 8 and 2 x kernel_size ({})",
                self.patch_size, field.kernel_size
            ));
        }
        if self.batch_size == 0 || self.lr_halve_every == 0 || self.record_every == 0 {
            return bad("batch_size, lr_halve_every and record_every must be positive".into());
        }
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return bad(format!("lr_initial must be positive, got {}", self.lr_initial));
        }
        if !(self.solver.max_step.is_finite() && self.solver.max_step > 0.0) {
            return bad(format!("solver max_step must be positive, got {}", self.solver.max_step));
        }
        Ok(())
    }

    /// `lr_initial * 2^-floor(step / lr_halve_every)`
    pub fn lr_at(&self, step: usize) -> f64 {
        let halvings = (step / self.lr_halve_every.max(1)).min(1000) as i32;
        self.lr_initial * 0.5f64.powi(halvings)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `(batch, channels, patch, patch)` ground-truth crops.
    pub hr: Tensor<T>,
    /// `I(t)` of each crop, same shape.
    pub lr: Tensor<T>,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub t_sampled: f64,
    pub loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

impl TrainRecord {
    /// `step,t,loss,lr,seconds`
    pub fn csv_line(&self, with_wall_time: bool) -> String {
        let secs = if with_wall_time { self.wall_time } else { 0.0 };
        format!("{},{},{},{},{:.3}", self.step, self.t_sampled, self.loss, self.lr, secs)
    }
}

pub const LOG_HEADER: &str = "step,t,loss,lr,seconds";

/// Checks every image can supply a crop of `patch_size` with the right channel count.
pub fn check_corpus<T: Scalar>(corpus: &[(String, Image<T>)], patch_size: usize, channels: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Ingestion("training corpus is empty".into()));
    }
    for (name, img) in corpus {
        if img.height() < patch_size || img.width() < patch_size {
            return Err(Error::Ingestion(format!(
                "{name} is {}x{}, smaller than patch size {patch_size}",
                img.height(),
                img.width()
            )));
        }
        if img.channels() != channels {
            return Err(Error::Ingestion(format!(
                "{name} has {} channels, the network expects {channels}",
                img.channels()
            )));
        }
    }
    Ok(())
}

/// One scale for the whole batch, then `batch_size` random crops degraded to it.
pub fn sample_batch<T: Scalar>(
    corpus: &[(String, Image<T>)],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Batch<T>> {
    let channels = corpus.first().map(|(_, i)| i.channels()).unwrap_or(0);
    check_corpus(corpus, cfg.patch_size, channels)?;
    let t = *cfg
        .scale_set
        .choose(rng)
        .ok_or_else(|| Error::Config("scale_set is empty".into()))?;
    let p = cfg.patch_size;
    let mut hr = Vec::with_capacity(cfg.batch_size);
    let mut lr = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let (_, img) = &corpus[rng.gen_range(0..corpus.len())];
        let top = rng.gen_range(0..=img.height() - p);
        let left = rng.gen_range(0..=img.width() - p);
        let crop = img.crop(top, left, p, p)?;
        let pair = make_scale_pair(&crop, t)?;
        hr.push(crop.to_tensor());
        lr.push(pair.lr_upscaled.to_tensor());
    }
    Ok(Batch {
        hr: Tensor::stack(&hr)?,
        lr: Tensor::stack(&lr)?,
        t,
    })
}

/// Forward solve over `[t, 1]`, L1 against the ground truth, backward through
/// every unrolled step, one Adam update at `lr`. Returns the pre-update loss.
pub fn train_step<T: Scalar>(
    params: &mut VectorFieldParams<T>,
    adam: &mut Adam<T>,
    batch: &Batch<T>,
    lr: f64,
    solver: &SolverConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let init = tape.constant(batch.lr.clone());
    let target = tape.constant(batch.hr.clone());
    let cfg = solver.over(batch.t, 1.0);
    cfg.validate()?;
    let restored = ode_solve(
        &mut TapeField {
            tape: &mut tape,
            params: &vars,
        },
        &init,
        &cfg,
    )?;
    let loss = tape.l1_loss(restored, target)?;
    let loss_value = tape.value(loss).item().to_f64_lossy();
    let mut grads = tape.backward(loss)?;

    let grads: Vec<Tensor<T>> = vars
        .vars()
        .into_iter()
        .zip(params.tensors())
        .map(|(v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    let grad_refs: Vec<&Tensor<T>> = grads.iter().collect();
    adam.step(&mut params.tensors_mut(), &grad_refs, lr)?;
    Ok(loss_value)
}

/// Progress notifications from [`train_with`].
pub enum TrainEvent<'a, T> {
    Step {
        step: usize,
        t: f64,
        loss: f64,
        lr: f64,
    },
    Record(&'a TrainRecord),
    /// Emitted after `step` completed steps, every `lr_halve_every` steps.
    Checkpoint {
        step: usize,
        params: &'a VectorFieldParams<T>,
    },
}

pub struct TrainOutcome<T> {
    pub params: VectorFieldParams<T>,
    pub records: Vec<TrainRecord>,
}

pub fn initial_params<T: Scalar>(field: &VectorFieldConfig, cfg: &TrainConfig) -> Result<VectorFieldParams<T>> {
    let mut params = VectorFieldParams::init(*field)?;
    if cfg.zero_init_last {
        params.zero_last_layer();
    }
    Ok(params)
}

/// Runs `cfg.total_steps` steps, reporting progress to `observer`.
///
/// Batches are prepared on a helper thread in sampling order, so results depend
/// only on the corpus, the configs and the seed.
pub fn train_with<T: Scalar>(
    corpus: &[(String, Image<T>)],
    field: &VectorFieldConfig,
    cfg: &TrainConfig,
    mut observer: impl FnMut(TrainEvent<'_, T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate(field)?;
    check_corpus(corpus, cfg.patch_size, field.image_channels)?;
    let mut params = initial_params::<T>(field, cfg)?;
    let mut adam = Adam::new(cfg.adam, params.tensors().iter().map(|t| t.shape()));
    let mut records = Vec::with_capacity(cfg.total_steps / cfg.record_every);
    let started = Instant::now();

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel::<Result<Batch<T>>>(PREFETCH);
        scope.spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for _ in 0..cfg.total_steps {
                let batch = sample_batch(corpus, cfg, &mut rng);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });

        for step in 0..cfg.total_steps {
            let wrap = |e: Error| Error::TrainStep {
                step,
                source: Box::new(e),
            };
            let batch = rx
                .recv()
                .map_err(|_| wrap(Error::Ingestion("batch producer stopped".into())))?
                .map_err(wrap)?;
            let lr = cfg.lr_at(step);
            let loss = train_step(&mut params, &mut adam, &batch, lr, &cfg.solver).map_err(wrap)?;
            if !params.is_finite() {
                return Err(wrap(Error::Divergence { step, t: batch.t }));
            }
            observer(TrainEvent::Step {
                step,
                t: batch.t,
                loss,
                lr,
            })?;
            if (step + 1) % cfg.record_every == 0 {
                records.push(TrainRecord {
                    step,
                    t_sampled: batch.t,
                    loss,
                    lr,
                    wall_time: started.elapsed().as_secs_f64(),
                });
                observer(TrainEvent::Record(records.last().expect("just pushed")))?;
            }
            if (step + 1) % cfg.lr_halve_every == 0 {
                observer(TrainEvent::Checkpoint {
                    step: step + 1,
                    params: &params,
                })?;
            }
        }
        Ok(())
    })?;

    Ok(TrainOutcome { params, records })
}

pub fn train<T: Scalar>(
    corpus: &[(String, Image<T>)],
    field: &VectorFieldConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(corpus, field, cfg, |_| Ok(()))
}
