//! Behavioral cloning of the rule expert.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cyber_lane::{StateVector, STATE_LEN};
use crate::error::{invalid, Error, Result};
use crate::policy::{AdamConfig, OptimizerState, PolicyParams};
use crate::rules::RuleConfig;
use crate::seeds;
use crate::selection::{SelectionConfig, Selector};
use crate::sim::{Controller, SimConfig, Simulation, StepReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub epsilon: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self { epsilon: 0.5 }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid("mix.epsilon", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn mixed_action(a_nn: f64, a_rule: f64, mix: &MixConfig, cfg: &SimConfig) -> f64 {
    (mix.epsilon * a_nn + (1.0 - mix.epsilon) * a_rule).clamp(cfg.a_min, cfg.a_max)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub trainer: u32,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub state: StateVector,
    /// Rule action clamped to the actuator bounds.
    pub action: f64,
    pub loss_tag: Option<f64>,
    pub origin: Origin,
}

/// Wire size of one experience: the state and the action as `f32`.
pub const EXPERIENCE_RECORD_BYTES: usize = 4 * (STATE_LEN + 1);

impl Experience {
    pub fn to_record(&self) -> [u8; EXPERIENCE_RECORD_BYTES] {
        let mut out = [0u8; EXPERIENCE_RECORD_BYTES];
        let vals = self.state.0.iter().copied().chain([self.action]);
        for (chunk, v) in out.chunks_exact_mut(4).zip(vals) {
            chunk.copy_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_record(rec: &[u8]) -> Result<Self> {
        if rec.len() != EXPERIENCE_RECORD_BYTES {
            return Err(Error::Format(format!(
                "experience record of {} bytes, expected {EXPERIENCE_RECORD_BYTES}",
                rec.len()
            )));
        }
        let mut vals = rec
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut state = [0.0; STATE_LEN];
        for s in &mut state {
            *s = vals.next().unwrap_or_default();
        }
        Ok(Self {
            state: StateVector(state),
            action: vals.next().unwrap_or_default(),
            loss_tag: None,
            origin: Origin::default(),
        })
    }
}

/// Writes `u32` length-prefixed experience records.
pub fn write_experience_dump<W: Write>(mut w: W, exps: &[Experience]) -> Result<()> {
    for e in exps {
        w.write_all(&(EXPERIENCE_RECORD_BYTES as u32).to_le_bytes())?;
        w.write_all(&e.to_record())?;
    }
    Ok(())
}

pub fn read_experience_dump<R: Read>(mut r: R) -> Result<Vec<Experience>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut out = Vec::new();
    let mut rest = bytes.as_slice();
    while !rest.is_empty() {
        if rest.len() < 4 {
            return Err(Error::Format("truncated record length".into()));
        }
        let len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        rest = &rest[4..];
        if rest.len() < len {
            return Err(Error::Format("truncated record".into()));
        }
        out.push(Experience::from_record(&rest[..len])?);
        rest = &rest[len..];
    }
    Ok(out)
}

/// Bounded FIFO with seeded sampling.
#[derive(Debug, Clone)]
pub struct ExperienceBuffer {
    items: VecDeque<Experience>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl ExperienceBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
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

    pub fn push(&mut self, exp: Experience) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(exp);
    }

    pub fn extend<I: IntoIterator<Item = Experience>>(&mut self, exps: I) {
        for e in exps {
            self.push(e);
        }
    }

    /// `b` distinct items, or `None` if fewer than `b` are stored.
    pub fn sample(&mut self, b: usize) -> Option<Vec<&Experience>> {
        if b == 0 || self.items.len() < b {
            return None;
        }
        let picks = index::sample(&mut self.rng, self.items.len(), b);
        Some(picks.iter().map(|i| &self.items[i]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }
}

/// Mean squared action error over `(state, target)` pairs.
pub fn il_loss(params: &PolicyParams, batch: &[(&[f64], f64)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sum = 0.0;
    for &(s, a) in batch {
        let r = params.forward(s)? - a;
        sum += r * r;
    }
    Ok(sum / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub loss: f64,
    pub sample_losses: Vec<f64>,
    /// Learning rate used for this update.
    pub lr: f64,
}

/// One Adam update on a sampled batch. `Ok(None)` when the buffer holds
/// fewer than `b` experiences.
pub fn train_step(
    params: &mut PolicyParams,
    opt: &mut OptimizerState,
    buffer: &mut ExperienceBuffer,
    b: usize,
) -> Result<Option<TrainOutcome>> {
    let Some(batch) = buffer.sample(b) else {
        return Ok(None);
    };
    let (sample_losses, grad) =
        params.backward_samples(batch.iter().map(|e| (e.state.as_slice(), e.action)))?;
    let lr = opt.learning_rate();
    opt.adam_step(params, &grad)?;
    let loss = sample_losses.iter().sum::<f64>() / sample_losses.len() as f64;
    Ok(Some(TrainOutcome {
        loss,
        sample_losses,
        lr,
    }))
}

/// One experience per observed vehicle, labeled with the rule action.
pub fn collect_experience(report: &StepReport, cfg: &SimConfig, trainer: u32) -> Vec<Experience> {
    report
        .observations
        .iter()
        .map(|o| Experience {
            state: o.state,
            action: o.rule.action.clamp(cfg.a_min, cfg.a_max),
            loss_tag: None,
            origin: Origin {
                trainer,
                step: report.step,
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Convergence {
    pub window: usize,
    pub horizon: usize,
    pub tolerance: f64,
    pub cap: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            window: 200,
            horizon: 500,
            tolerance: 1e-4,
            cap: 6000,
        }
    }
}

impl Convergence {
    /// Trailing moving averages; entry `i` covers `losses[i+1-window..=i]`.
    pub fn moving_average(&self, losses: &[f64]) -> Vec<f64> {
        let w = self.window.max(1);
        if losses.len() < w {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(losses.len() + 1 - w);
        let mut sum: f64 = losses[..w].iter().sum();
        out.push(sum / w as f64);
        for i in w..losses.len() {
            sum += losses[i] - losses[i - w];
            out.push(sum / w as f64);
        }
        out
    }

    /// First training step (1-based count of updates) at which the moving
    /// average moved less than `tolerance` over the last `horizon` steps, if
    /// that happens within `cap` steps.
    pub fn converged_at(&self, losses: &[f64]) -> Option<usize> {
        let ma = self.moving_average(losses);
        let offset = self.window.max(1) - 1;
        (self.horizon..ma.len())
            .find(|&k| (ma[k] - ma[k - self.horizon]).abs() < self.tolerance)
            .map(|k| k + offset + 1)
            .filter(|&steps| steps <= self.cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub batch_loss: f64,
    pub lr: f64,
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["step", "batch_loss", "lr"])?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Controller driving the training simulation. Labels always come from the
/// rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Driver {
    Rule,
    /// The current model mixed with the rule, as in evaluation.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Gradient steps per trainer; also the learning-rate decay horizon.
    pub total_steps: u64,
    pub base_lr: f64,
    pub convergence: Convergence,
    pub driver: Driver,
    pub mix: MixConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 48,
            buffer_capacity: 100_000,
            total_steps: 6000,
            base_lr: 1e-3,
            convergence: Convergence::default(),
            driver: Driver::Rule,
            mix: MixConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be >= 1"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(invalid("training.buffer_capacity", "must be >= batch_size"));
        }
        if !(self.base_lr >= 0.0) {
            return Err(invalid("training.base_lr", "must be >= 0"));
        }
        if self.convergence.window == 0 {
            return Err(invalid("training.convergence.window", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.mix.epsilon) {
            return Err(invalid("training.mix.epsilon", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.base_lr,
            decay_steps: self.total_steps,
            ..AdamConfig::default()
        }
    }
}

/// An edge trainer: a rule-driven intersection feeding a buffer through the
/// selection filter, and the model it trains.
pub struct EdgeTrainer {
    pub id: u32,
    pub params: PolicyParams,
    pub opt: OptimizerState,
    pub buffer: ExperienceBuffer,
    pub selector: Selector,
    pub curve: Vec<CurveRow>,
    sim: Simulation,
    sim_cfg: SimConfig,
    rules: RuleConfig,
    training: TrainingConfig,
    seed: u64,
    episode: u64,
    sim_steps: u64,
}

impl EdgeTrainer {
    /// `seed` feeds traffic, buffer sampling, and initial weights through
    /// separate derived streams.
    pub fn new(
        id: u32,
        sim_cfg: &SimConfig,
        rules: &RuleConfig,
        training: &TrainingConfig,
        selection: SelectionConfig,
        seed: u64,
    ) -> Result<Self> {
        training.validate()?;
        selection.validate()?;
        let episode_cfg = sim_cfg.with_density(
            sim_cfg.arrival_rate,
            seeds::derive(seed, &format!("trainer/{id}/episode/0")),
        );
        Ok(Self {
            id,
            params: PolicyParams::init(seeds::derive(seed, "init")),
            opt: OptimizerState::new(training.adam()),
            buffer: ExperienceBuffer::new(
                training.buffer_capacity,
                seeds::derive(seed, &format!("trainer/{id}/buffer")),
            ),
            selector: Selector::new(selection, id),
            curve: Vec::new(),
            sim: Simulation::new(episode_cfg, rules.clone())?,
            sim_cfg: sim_cfg.clone(),
            rules: rules.clone(),
            training: training.clone(),
            seed,
            episode: 0,
            sim_steps: 0,
        })
    }

    pub fn density(&self) -> f64 {
        self.sim_cfg.arrival_rate
    }

    pub fn train_steps(&self) -> u64 {
        self.opt.step
    }

    pub fn sim_steps(&self) -> u64 {
        self.sim_steps
    }

    /// One simulation step, the upload filter, and at most one update.
    pub fn tick(&mut self) -> Result<Option<TrainOutcome>> {
        if self.sim.world().step >= self.sim_cfg.episode_steps {
            self.episode += 1;
            let cfg = self.sim_cfg.with_density(
                self.sim_cfg.arrival_rate,
                seeds::derive(self.seed, &format!("trainer/{}/episode/{}", self.id, self.episode)),
            );
            self.sim = Simulation::new(cfg, self.rules.clone())?;
        }
        let controller = match self.training.driver {
            Driver::Rule => Controller::Rule,
            Driver::Mixed => Controller::Mixed(&self.params, self.training.mix),
        };
        let report = self.sim.step(&controller)?;
        let fresh = collect_experience(&report, &self.sim_cfg, self.id);
        let kept = self.selector.filter(self.sim_steps, fresh, &self.params)?;
        self.buffer.extend(kept);
        self.sim_steps += 1;

        let out = train_step(
            &mut self.params,
            &mut self.opt,
            &mut self.buffer,
            self.training.batch_size,
        )?;
        if let Some(o) = &out {
            self.curve.push(CurveRow {
                step: self.opt.step,
                batch_loss: o.loss,
                lr: o.lr,
            });
            self.selector.refresh(self.opt.step, &o.sample_losses)?;
        }
        Ok(out)
    }

    /// Ticks until `updates` more gradient steps are done; returns the number
    /// of experiences consumed by those updates.
    pub fn train_for(&mut self, updates: u64) -> Result<u64> {
        let target = self.opt.step + updates;
        let mut consumed = 0;
        while self.opt.step < target {
            if let Some(o) = self.tick()? {
                consumed += o.sample_losses.len() as u64;
            }
        }
        Ok(consumed)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.curve.iter().map(|r| r.batch_loss).collect()
    }

    pub fn converged_at(&self) -> Option<usize> {
        self.training.convergence.converged_at(&self.losses())
    }
}
