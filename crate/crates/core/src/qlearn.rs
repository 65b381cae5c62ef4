//! DQN training: experience replay, linear ε schedule, frozen target network.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mathcore::{Activation, DenseLayer, DenseNet, RmsProp, RmsPropConfig};
use crate::mdp::{self, Action};
use crate::process::Process;
use crate::rng::{substream, Purpose};
use crate::{Error, Result};

/// Replay tuple `(s, a, r, s', terminal)` with encoded states.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub s: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    /// All zeros when `terminal`.
    pub s_next: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO of experiences.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::with_capacity(capacity.min(1 << 20)), next: 0, inserted: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn extend<I: IntoIterator<Item = Experience>>(&mut self, items: I) {
        for e in items {
            self.push(e);
        }
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `batch_size` independent uniform draws, with replacement, from the
    /// current contents.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Experience>> {
        if self.items.is_empty() {
            return Err(Error::WarmUp { have: 0, need: batch_size.max(1) });
        }
        Ok((0..batch_size).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl EpsilonSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps.max(1) as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// `r` for terminal rows, else `r + max_a Q(s', a; θ*)`.
pub fn td_targets(batch: &[&Experience], target_net: &DenseNet) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let next = stack(batch.iter().map(|e| e.s_next.as_slice()), target_net.input_dim())?;
    let q = target_net.forward(next.view())?;
    Ok(batch
        .iter()
        .zip(q.rows())
        .map(|(e, row)| if e.terminal { e.reward } else { e.reward + row[0].max(row[1]) })
        .collect())
}

fn stack<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, width: usize) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((rows.len(), width));
    for (i, r) in rows.enumerate() {
        if r.len() != width {
            return Err(Error::Shape(format!("experience state width {} != {width}", r.len())));
        }
        out.row_mut(i).as_slice_mut().expect("standard layout").copy_from_slice(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Simulated training paths per epoch; one episode each.
    pub total_paths: usize,
    #[serde(default = "one")]
    pub epochs: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    #[serde(default = "default_eps_start")]
    pub eps_start: f64,
    #[serde(default = "default_eps_end")]
    pub eps_end: f64,
    /// Episodes over which ε decays; defaults to half of all episodes.
    #[serde(default)]
    pub eps_decay_steps: Option<usize>,
    /// Gradient steps between target-network syncs.
    #[serde(default = "default_sync")]
    pub target_sync: usize,
    /// Hidden layer sizes; empty means the default for the market dimension.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Learning rate reached by linear decay at the last episode; constant if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate_end: Option<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_eps_num")]
    pub eps_num: f64,
    /// Buffer size before the first gradient step; defaults to `10 * batch_size`.
    #[serde(default)]
    pub warmup: Option<usize>,
    #[serde(default = "one")]
    pub grad_steps_per_episode: usize,
}

fn one() -> usize {
    1
}
fn default_eps_start() -> f64 {
    1.0
}
fn default_eps_end() -> f64 {
    0.05
}
fn default_sync() -> usize {
    500
}
fn default_lr() -> f64 {
    1e-3
}
fn default_rho() -> f64 {
    0.99
}
fn default_eps_num() -> f64 {
    1e-8
}

impl TrainConfig {
    /// Hidden sizes used for a `d`-asset market: three layers of 32 up to
    /// ten assets, 90 beyond.
    pub fn default_hidden(d: usize) -> Vec<usize> {
        if d <= 10 {
            vec![32; 3]
        } else {
            vec![90; 3]
        }
    }

    pub fn desk(d: usize) -> Self {
        Self {
            total_paths: 200_000,
            epochs: 1,
            batch_size: 1000,
            buffer_capacity: 200_000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: None,
            target_sync: 500,
            hidden: Self::default_hidden(d),
            learning_rate: 1e-3,
            learning_rate_end: None,
            rho: 0.99,
            eps_num: 1e-8,
            warmup: None,
            grad_steps_per_episode: 1,
        }
    }

    pub fn episodes(&self) -> usize {
        self.total_paths * self.epochs
    }

    pub fn schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.eps_start,
            end: self.eps_end,
            decay_steps: self.eps_decay_steps.unwrap_or(self.episodes() / 2).max(1),
        }
    }

    pub fn warmup_len(&self) -> usize {
        self.warmup.unwrap_or(10 * self.batch_size)
    }

    /// Learning rate used after `episode` episodes.
    pub fn learning_rate_at(&self, episode: usize) -> f64 {
        match self.learning_rate_end {
            None => self.learning_rate,
            Some(end) => {
                let frac = episode as f64 / self.episodes().saturating_sub(1).max(1) as f64;
                self.learning_rate + (end - self.learning_rate) * frac.min(1.0)
            }
        }
    }

    pub fn optimizer(&self) -> RmsPropConfig {
        RmsPropConfig { lr: self.learning_rate, rho: self.rho, eps: self.eps_num }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("training: {msg}")));
        if self.total_paths == 0 || self.epochs == 0 {
            return bad("total_paths and epochs must be >= 1");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("need 1 <= batch_size <= buffer_capacity");
        }
        if self.target_sync == 0 {
            return bad("target_sync must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("eps_start and eps_end must lie in [0, 1]");
        }
        if self.eps_end > self.eps_start {
            return bad("eps_end must not exceed eps_start");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden needs at least one non-empty layer");
        }
        if self.learning_rate_end.is_some_and(|lr| !(lr > 0.0)) {
            return bad("learning_rate_end must be > 0");
        }
        if !(self.learning_rate > 0.0 && (0.0..1.0).contains(&self.rho) && self.eps_num > 0.0) {
            return bad("optimizer needs learning_rate > 0, 0 <= rho < 1, eps_num > 0");
        }
        if self.grad_steps_per_episode == 0 {
            return bad("grad_steps_per_episode must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainDiagnostics {
    /// Mini-batch loss per gradient step.
    pub loss_trace: Vec<f64>,
    pub final_epsilon: f64,
    pub episodes: usize,
    pub gradient_steps: usize,
    pub target_syncs: usize,
    pub experiences: u64,
    /// Buffered states whose continue head ended below -0.05.
    pub negative_continue: usize,
}

/// Trains a Q-network for `n` rights with waiting period `delta`.
///
/// Each episode simulates a path, plays it ε-greedily with the online network
/// and stores the transitions; after warm-up every episode is followed by
/// gradient steps on uniform mini-batches against targets from θ*, which is
/// re-synced every `target_sync` steps. Path `p` is the same in every epoch.
pub fn train<P: Process>(
    config: &TrainConfig,
    process: &P,
    n: usize,
    delta: usize,
    seed: u64,
) -> Result<(DenseNet, TrainDiagnostics)> {
    train_with(config, process, n, delta, seed, |_, _| {})
}

/// [`train`] with a callback `(gradient_step, &online_net)` after every step.
pub fn train_with<P: Process>(
    config: &TrainConfig,
    process: &P,
    n: usize,
    delta: usize,
    seed: u64,
    mut on_step: impl FnMut(usize, &DenseNet),
) -> Result<(DenseNet, TrainDiagnostics)> {
    config.validate()?;
    if n == 0 || delta == 0 {
        return Err(Error::Config("need n >= 1 and delta >= 1".into()));
    }
    let width = mdp::encoded_len(process);
    let mut arch = vec![width];
    arch.extend(&config.hidden);
    arch.push(2);

    let mut online = DenseNet::init(&arch, &mut substream(seed, Purpose::Init, 0))?;
    let mut target = online.sync_target();
    let mut opt = RmsProp::new(&online, config.optimizer());
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut explore = substream(seed, Purpose::Explore, 0);
    let mut batch_rng = substream(seed, Purpose::Batch, 0);
    let schedule = config.schedule();
    let warmup = config.warmup_len().max(1);

    let mut diag = TrainDiagnostics::default();
    let mut actions = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        for p in 0..config.total_paths {
            let episode = epoch * config.total_paths + p;
            let eps = schedule.at(episode);
            opt.config.lr = config.learning_rate_at(episode);
            diag.final_epsilon = eps;
            let path = process.sample_path(&mut substream(seed, Purpose::TrainPath, p as u64));
            let episode = mdp::generate_episode(&online, process, n, delta, eps, &path, &mut explore)?;
            buffer.extend(episode.experiences);
            diag.episodes += 1;
            if buffer.len() < warmup {
                continue;
            }
            for _ in 0..config.grad_steps_per_episode {
                let batch = buffer.sample_batch(config.batch_size, &mut batch_rng)?;
                let targets = td_targets(&batch, &target)?;
                let states = stack(batch.iter().map(|e| e.s.as_slice()), width)?;
                actions.clear();
                actions.extend(batch.iter().map(|e| e.action.index()));
                let (loss, grads) = online.loss_and_grads(states.view(), &actions, &targets)?;
                let step = diag.gradient_steps;
                if !loss.is_finite() {
                    return Err(Error::Diverged { step, loss });
                }
                opt.step(&mut online, &grads).map_err(|_| Error::Diverged { step, loss })?;
                diag.loss_trace.push(loss);
                diag.gradient_steps += 1;
                if diag.gradient_steps % config.target_sync == 0 {
                    target = online.sync_target();
                    diag.target_syncs += 1;
                }
                on_step(diag.gradient_steps, &online);
            }
        }
    }
    diag.experiences = buffer.inserted();
    diag.negative_continue = count_negative_continue(&online, &buffer)?;
    Ok((online, diag))
}

fn count_negative_continue(net: &DenseNet, buffer: &ReplayBuffer) -> Result<usize> {
    if buffer.is_empty() {
        return Ok(0);
    }
    let rows: Vec<&[f64]> = buffer.iter().map(|e| e.s.as_slice()).collect();
    let states = stack(rows.into_iter(), net.input_dim())?;
    let q = net.forward(states.view())?;
    Ok(q.column(0).iter().filter(|&&c| c < -0.05).count())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"QSWQNET\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: magic, version, layer count and sizes (u32 LE), then per
/// layer an activation byte, weights `(out, in)` row-major and bias, as f64 LE.
pub fn write_checkpoint<W: Write>(net: &DenseNet, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let arch = net.arch();
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for s in arch {
        w.write_all(&(s as u32).to_le_bytes())?;
    }
    for layer in net.layers() {
        w.write_all(&[match layer.activation {
            Activation::Relu => 1u8,
            Activation::Identity => 0u8,
        }])?;
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<DenseNet> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut word = [0u8; 4];
    let mut read_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
        Ok(u32::from_le_bytes(word))
    };
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let layers = read_u32(&mut r)? as usize;
    if layers == 0 || layers > 64 {
        return Err(bad("implausible layer count"));
    }
    let mut arch = Vec::with_capacity(layers + 1);
    for _ in 0..=layers {
        arch.push(read_u32(&mut r)? as usize);
    }
    let mut f = [0u8; 8];
    let mut read_f64 = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut f).map_err(|_| bad("truncated parameters"))?;
        Ok(f64::from_le_bytes(f))
    };
    let mut out = Vec::with_capacity(layers);
    for pair in arch.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(|_| bad("truncated parameters"))?;
        let activation = match tag[0] {
            0 => Activation::Identity,
            1 => Activation::Relu,
            t => return Err(Error::Checkpoint(format!("unknown activation tag {t}"))),
        };
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            w.push(read_f64(&mut r)?);
        }
        let mut b = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            b.push(read_f64(&mut r)?);
        }
        out.push(DenseLayer {
            weights: Array2::from_shape_vec((fan_out, fan_in), w).map_err(|e| bad(&e.to_string()))?,
            bias: Array1::from(b),
            activation,
        });
    }
    DenseNet::from_layers(out)
}

pub fn save_checkpoint(net: &DenseNet, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DenseNet> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
