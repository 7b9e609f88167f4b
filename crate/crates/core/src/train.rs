//! Adam, the step learning-rate schedule and the patch-based training loop.

use std::sync::mpsc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Engine, Graph};
use crate::error::{Error, Result};
use crate::image::{augment, to_rgb, TrainingPair, AUGMENTATIONS};
use crate::model::{Checkpoint, Model, OptimizerState, ParameterStore};
use crate::tensor::{Real, Tensor};

/// Adam moments and step counter.
pub type AdamState<T = f32> = OptimizerState<T>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// LR patch side; the HR patch is `scale` times larger.
    pub patch_size: usize,
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_interval: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Total iteration budget, counted from zero even when resuming.
    pub iterations: u64,
    pub seed: u64,
    pub log_every: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub workers: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            patch_size: 48,
            lr: 2e-4,
            decay_factor: 0.85,
            decay_interval: 200_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iterations: 10_000,
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
            workers: 1,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0 || self.patch_size == 0 {
            return bad("batch_size and patch_size must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(self.lr > 0.0 && self.decay_factor > 0.0 && self.eps > 0.0) {
            return bad("lr, decay_factor and eps must be positive");
        }
        if self.decay_interval == 0 {
            return bad("decay_interval must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Stepwise decay: `lr * decay_factor ^ floor(iter / decay_interval)`.
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.decay_factor.powi((iter / cfg.decay_interval) as i32)
}

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Moments missing from `state` start at zero.
pub fn adam_step<T: Real>(
    params: &mut ParameterStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(Error::MissingGradient(name.to_string()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, eps, lr) = (T::of(cfg.beta1), T::of(cfg.beta2), T::of(cfg.eps), T::of(lr));
    let (c1, c2) = (T::of(c1), T::of(c2));
    let one = T::one();
    for (name, p) in params.iter_mut() {
        let grad = p.grad.as_ref().expect("checked above");
        let shape = p.value.shape();
        let m = state.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape));
        let v = state.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape));
        if m.shape() != shape || v.shape() != shape || grad.shape() != shape {
            return Err(Error::contract(
                "adam_step",
                format!("moment or gradient shape mismatch for `{name}`"),
            ));
        }
        let values = p.value.data_mut();
        for (((w, &g), m), v) in values.iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// A stacked mini-batch: LR input `(B, 3, p, p)` and HR target `(B, 3, sp, sp)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
}

/// Draws random aligned, optionally augmented, patch pairs.
pub struct BatchSampler<'a> {
    data: &'a [TrainingPair],
    patch: usize,
    batch: usize,
    augment: bool,
    rng: ChaCha8Rng,
}

impl<'a> BatchSampler<'a> {
    pub fn new(data: &'a [TrainingPair], cfg: &TrainConfig, rng: ChaCha8Rng) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("no training images".into()));
        }
        let p = cfg.patch_size;
        if !data.iter().any(|d| d.lr.height() >= p && d.lr.width() >= p) {
            return Err(Error::EmptyDataset(format!(
                "no training image has an LR side of at least {p}"
            )));
        }
        Ok(BatchSampler {
            data,
            patch: p,
            batch: cfg.batch_size,
            augment: cfg.augment,
            rng,
        })
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let mut lr = Vec::with_capacity(self.batch);
        let mut hr = Vec::with_capacity(self.batch);
        while lr.len() < self.batch {
            let pair = &self.data[self.rng.random_range(0..self.data.len())];
            let mut patch = match pair.sample(self.patch, &mut self.rng) {
                Ok(p) => p,
                Err(Error::ImageTooSmall { .. }) => continue,
                Err(e) => return Err(e),
            };
            if self.augment {
                patch = augment(&patch, self.rng.random_range(0..AUGMENTATIONS))?;
            }
            lr.push(to_rgb(&patch.lr).to_tensor());
            hr.push(to_rgb(&patch.hr).to_tensor());
        }
        Ok(Batch {
            lr: Tensor::stack(&lr)?,
            hr: Tensor::stack(&hr)?,
        })
    }
}

/// RNG for data worker `w`: one ChaCha stream per worker under the run seed.
pub fn worker_rng(seed: u64, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + worker as u64);
    rng
}

/// Forward, L1 loss and backward; leaves gradients on the model's parameters.
pub fn compute_gradients(model: &mut Model<f32>, batch: &Batch) -> Result<f64> {
    let mut g = Graph::new();
    let y = model.forward_graph(&mut g, batch.lr.clone())?;
    let t = g.constant(batch.hr.clone());
    let loss = g.l1_loss(y, t)?;
    let value = g.value(&loss).data()[0] as f64;
    let mut grads = g.backward(loss)?;
    for (name, var) in g.params() {
        if let Some(p) = model.params_mut().get_mut(name) {
            p.grad = grads.take(*var);
        }
    }
    Ok(value)
}

/// Name of the parameter holding the largest gradient magnitude (NaN wins).
fn largest_gradient(params: &ParameterStore<f32>) -> String {
    let mut best = (String::from("<none>"), -1.0f64);
    for (name, p) in params.iter() {
        if let Some(g) = &p.grad {
            let m = if g.all_finite() { g.max_abs() } else { f64::INFINITY };
            if m > best.1 {
                best = (name.to_string(), m);
            }
        }
    }
    best.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub lr: f64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub seconds: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "iter,lr,loss,seconds";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{:.3}", self.iteration, self.lr, self.loss, self.seconds)
    }
}

/// Receives progress from [`train`]. Both hooks default to doing nothing.
pub trait TrainObserver {
    fn log(&mut self, _row: &LogRow) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _ckpt: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Loss of every iteration run, in order.
    pub losses: Vec<f64>,
    pub log: Vec<LogRow>,
}

/// Runs from `start.iteration` up to `cfg.iterations`.
///
/// Batches are produced by `cfg.workers` threads; worker `w` builds the
/// batches of iterations `w, w + W, ...` from its own RNG stream, so a run is
/// reproducible for a fixed seed and worker count, including across a resume. Parameters are only
/// touched by the calling thread.
pub fn train(
    start: Checkpoint,
    data: &[TrainingPair],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let Checkpoint {
        mut model,
        iteration: first,
        optimizer,
    } = start;
    let mut state = optimizer.unwrap_or_default();
    let mut losses = Vec::new();
    let mut log = Vec::new();
    let clock = Instant::now();
    let total = cfg.iterations.max(first);
    let workers = cfg.workers;
    // Validate the dataset before any threads start.
    BatchSampler::new(data, cfg, worker_rng(cfg.seed, 0))?;

    std::thread::scope(|scope| -> Result<()> {
        let mut queues = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = mpsc::sync_channel::<Result<Batch>>(2);
            queues.push(rx);
            // Worker `w` owns the iterations `i` with `i % workers == w`.
            let owned = |end: u64| end.saturating_sub(w as u64).div_ceil(workers as u64);
            let (skip, count) = (owned(first), owned(total) - owned(first));
            scope.spawn(move || {
                let mut sampler = match BatchSampler::new(data, cfg, worker_rng(cfg.seed, w)) {
                    Ok(s) => s,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                };
                // A resumed run replays the stream up to where it stopped.
                for _ in 0..skip {
                    if let Err(e) = sampler.next_batch() {
                        let _ = tx.send(Err(e));
                        return;
                    }
                }
                for _ in 0..count {
                    if tx.send(sampler.next_batch()).is_err() {
                        return;
                    }
                }
            });
        }

        let mut window = (0.0, 0u64);
        for it in first..total {
            let batch = queues[(it % workers as u64) as usize]
                .recv()
                .map_err(|_| Error::contract("train", "data worker stopped early"))??;
            let loss = compute_gradients(&mut model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: it,
                    parameter: largest_gradient(model.params()),
                });
            }
            let lr = lr_at(it, cfg);
            adam_step(model.params_mut(), &mut state, lr, cfg)?;
            model.params_mut().clear_grads();
            losses.push(loss);
            window = (window.0 + loss, window.1 + 1);

            let done = it + 1;
            if (cfg.log_every > 0 && done % cfg.log_every == 0) || done == total {
                let row = LogRow {
                    iteration: done,
                    lr,
                    loss: window.0 / window.1 as f64,
                    seconds: clock.elapsed().as_secs_f64(),
                };
                window = (0.0, 0);
                observer.log(&row)?;
                log.push(row);
            }
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != total {
                observer.checkpoint(&Checkpoint {
                    model: model.clone(),
                    iteration: done,
                    optimizer: Some(state.clone()),
                })?;
            }
        }
        // Dropping the receivers stops any worker still blocked on send.
        drop(queues);
        Ok(())
    })?;

    let checkpoint = Checkpoint {
        model,
        iteration: total,
        optimizer: Some(state),
    };
    observer.checkpoint(&checkpoint)?;
    Ok(TrainOutcome {
        checkpoint,
        losses,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_store(w: f64, g: Option<f64>) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::full(Shape::new(1, 1, 1, 1), w)).unwrap();
        s.get_mut("w").unwrap().grad = g.map(|g| Tensor::full(Shape::new(1, 1, 1, 1), g));
        s
    }

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 2e-4);
        assert!((lr_at(200_000, &cfg) - 1.7e-4).abs() < 1e-18);
        assert!((lr_at(400_000, &cfg) - 1.445e-4).abs() < 1e-18);
        assert_eq!(lr_at(199_999, &cfg), 2e-4);
        let mut prev = f64::INFINITY;
        for it in (0..2_000_000).step_by(50_000) {
            assert!(lr_at(it, &cfg) <= prev);
            prev = lr_at(it, &cfg);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut s = scalar_store(1.0, Some(1.0));
        let mut st = AdamState::default();
        adam_step(&mut s, &mut st, 2e-4, &cfg).unwrap();
        assert!((s.value("w").data()[0] - (1.0 - 2e-4)).abs() < 1e-9);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let cfg = TrainConfig::default();
        let mut s = scalar_store(0.7, Some(0.0));
        let mut st = AdamState::default();
        for _ in 0..5 {
            adam_step(&mut s, &mut st, 1e-2, &cfg).unwrap();
        }
        assert_eq!(s.value("w").data()[0], 0.7);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = scalar_store(0.0, None);
        let err = adam_step(&mut s, &mut AdamState::default(), 1e-3, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(n) if n == "w"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::from_json(r#"{"batch_size": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"lr": -1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let c = TrainConfig::from_json(r#"{"iterations": 5, "seed": 3}"#).unwrap();
        assert_eq!((c.iterations, c.seed, c.batch_size), (5, 3, 16));
    }
}
