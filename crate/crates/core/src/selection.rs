//! Loss-aware experience selection.
//!
//! The trainer publishes a threshold taken from the sorted losses of its
//! latest training batch; interactors upload only experiences whose loss
//! under the current model is strictly above it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imitation::Experience;
use crate::policy::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub discard_rate: f64,
    pub enabled: bool,
    /// Consecutive steps without a single upload before the threshold is
    /// dropped back to zero.
    pub starvation_steps: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            discard_rate: 0.0,
            enabled: false,
            starvation_steps: 200,
        }
    }
}

impl SelectionConfig {
    /// Enabled for any `p > 0`; `p = 0` bypasses the filter entirely.
    pub fn with_rate(p: f64) -> Self {
        Self {
            discard_rate: p,
            enabled: p > 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discard_rate) {
            return Err(invalid("selection.discard_rate", "must lie in [0, 1)"));
        }
        if self.starvation_steps == 0 {
            return Err(invalid("selection.starvation_steps", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdState {
    pub threshold: f64,
    /// Trainer step at which the current value was issued.
    pub issued_step: Option<u64>,
    pub trainer: u32,
}

impl ThresholdState {
    pub fn new(trainer: u32) -> Self {
        Self {
            threshold: 0.0,
            issued_step: None,
            trainer,
        }
    }
}

/// Element `floor(p * B)` (zero-based) of the ascending batch losses.
pub fn compute_threshold(batch_losses: &[f64], p: f64) -> Result<f64> {
    if batch_losses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sorted = batch_losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((p * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    Ok(sorted[idx])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UploadDecision {
    pub upload: bool,
    pub loss: f64,
}

/// Tags `exp` with its loss under `params` and decides on upload.
pub fn should_upload(
    exp: &mut Experience,
    params: &PolicyParams,
    threshold: f64,
) -> Result<UploadDecision> {
    let pred = params.forward(exp.state.as_slice())?;
    let loss = (pred - exp.action).powi(2);
    exp.loss_tag = Some(loss);
    Ok(UploadDecision {
        upload: loss > threshold,
        loss,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub generated: u64,
    pub uploaded: u64,
    pub discarded: u64,
}

/// Cumulative counters after one simulation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavingsRow {
    pub step: u64,
    pub generated: u64,
    pub uploaded: u64,
    pub discarded: u64,
    pub threshold: f64,
}

/// Percentage of generated experiences discarded during the first
/// `horizon` logged steps.
pub fn savings_report(rows: &[SavingsRow], horizon: usize) -> Result<f64> {
    if horizon == 0 || horizon > rows.len() {
        return Err(Error::HorizonExceedsLog {
            horizon,
            logged: rows.len(),
        });
    }
    let last = &rows[horizon - 1];
    if last.generated == 0 {
        return Err(Error::UndefinedMetric("savings with no generated experience"));
    }
    Ok(100.0 * last.discarded as f64 / last.generated as f64)
}

pub fn write_savings_csv<W: Write>(rows: &[SavingsRow], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["step", "generated", "uploaded", "discarded", "threshold"])?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Interactor-side filter plus the trainer-side threshold it reads.
#[derive(Debug, Clone)]
pub struct Selector {
    pub config: SelectionConfig,
    pub state: ThresholdState,
    pub counters: Counters,
    pub log: Vec<SavingsRow>,
    idle_steps: u64,
}

impl Selector {
    pub fn new(config: SelectionConfig, trainer: u32) -> Self {
        Self {
            config,
            state: ThresholdState::new(trainer),
            counters: Counters::default(),
            log: Vec::new(),
            idle_steps: 0,
        }
    }

    /// Filters one step's worth of fresh experience.
    pub fn filter(
        &mut self,
        step: u64,
        batch: Vec<Experience>,
        params: &PolicyParams,
    ) -> Result<Vec<Experience>> {
        let generated = batch.len() as u64;
        let kept = if self.config.enabled {
            let mut kept = Vec::with_capacity(batch.len());
            for mut exp in batch {
                if should_upload(&mut exp, params, self.state.threshold)?.upload {
                    kept.push(exp);
                }
            }
            kept
        } else {
            batch
        };
        let uploaded = kept.len() as u64;
        self.counters.generated += generated;
        self.counters.uploaded += uploaded;
        self.counters.discarded += generated - uploaded;

        if self.config.enabled {
            if uploaded == 0 {
                self.idle_steps += 1;
                if self.idle_steps >= self.config.starvation_steps {
                    self.state.threshold = 0.0;
                    self.state.issued_step = Some(step);
                    self.idle_steps = 0;
                }
            } else {
                self.idle_steps = 0;
            }
        }

        self.log.push(SavingsRow {
            step,
            generated: self.counters.generated,
            uploaded: self.counters.uploaded,
            discarded: self.counters.discarded,
            threshold: self.state.threshold,
        });
        Ok(kept)
    }

    /// Reissues the threshold from a training batch's losses.
    pub fn refresh(&mut self, step: u64, batch_losses: &[f64]) -> Result<()> {
        if self.config.enabled {
            self.state.threshold = compute_threshold(batch_losses, self.config.discard_rate)?;
            self.state.issued_step = Some(step);
        }
        Ok(())
    }
}
