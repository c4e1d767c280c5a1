//! Edge trainers plus a cloud aggregator running synchronous rounds of
//! local imitation learning and weighted model averaging.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imitation::{EdgeTrainer, TrainingConfig, EXPERIENCE_RECORD_BYTES};
use crate::metrics::IndicatorSet;
use crate::policy::{PolicyParams, CHECKPOINT_BYTES, N_PARAMS};
use crate::rules::RuleConfig;
use crate::seeds;
use crate::selection::SelectionConfig;
use crate::sim::{run_episode, Controller, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Weights proportional to the data each trainer consumed.
    SameProportion,
    /// Weights proportional to density share times data consumed.
    DensityAware,
}

impl AggregationMode {
    pub fn label(&self) -> &'static str {
        match self {
            AggregationMode::SameProportion => "same",
            AggregationMode::DensityAware => "density",
        }
    }
}

/// Normalized aggregation weights. `None` when no trainer has data.
pub fn aggregation_weights(d: &[u64], densities: &[f64], mode: AggregationMode) -> Option<Vec<f64>> {
    let raw: Vec<f64> = match mode {
        AggregationMode::SameProportion => d.iter().map(|&n| n as f64).collect(),
        AggregationMode::DensityAware => {
            let total: f64 = densities.iter().sum();
            d.iter()
                .zip(densities)
                .map(|(&n, &rho)| if total > 0.0 { rho / total * n as f64 } else { 0.0 })
                .collect()
        }
    };
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) {
        return None;
    }
    Some(raw.into_iter().map(|w| w / sum).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub params: PolicyParams,
    pub weights: Vec<f64>,
    /// False when every `d_n` was zero and the previous global came back.
    pub updated: bool,
}

/// Element-wise weighted average of `models`.
pub fn aggregate(
    previous: &PolicyParams,
    models: &[PolicyParams],
    d: &[u64],
    densities: &[f64],
    mode: AggregationMode,
) -> Result<Aggregated> {
    if models.is_empty() {
        return Err(invalid("federation.trainers", "no models to aggregate"));
    }
    if models.len() != d.len() || models.len() != densities.len() {
        return Err(Error::Shape {
            expected: models.len(),
            got: d.len().min(densities.len()),
        });
    }
    let Some(weights) = aggregation_weights(d, densities, mode) else {
        return Ok(Aggregated {
            params: previous.clone(),
            weights: vec![0.0; models.len()],
            updated: false,
        });
    };
    let mut values = vec![0.0f32; N_PARAMS];
    let mut terms = Vec::with_capacity(models.len());
    for (i, v) in values.iter_mut().enumerate() {
        terms.clear();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (m, &w) in models.iter().zip(&weights) {
            let x = m.values()[i] as f64;
            terms.push(w * x);
            if w > 0.0 {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        // canonical summation order makes the result independent of how the
        // models were listed
        terms.sort_by(f64::total_cmp);
        let acc: f64 = terms.iter().sum();
        // rounding can push a weighted mean of equal values off by an ulp
        *v = acc.clamp(lo, hi) as f32;
    }
    let mut params = PolicyParams::from_values(values)?;
    params.version = previous.version + 1;
    Ok(Aggregated {
        params,
        weights,
        updated: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub densities: Vec<f64>,
    pub rounds: u32,
    /// Gradient steps per trainer per round.
    pub local_steps: u64,
    pub mode: AggregationMode,
    /// Steps of the per-round evaluation episode; 0 skips evaluation.
    pub eval_steps: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            densities: vec![300.0, 900.0, 1500.0, 2100.0],
            rounds: 10,
            local_steps: 600,
            mode: AggregationMode::DensityAware,
            eval_steps: 2000,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.densities.is_empty() {
            return Err(invalid("federation.densities", "need at least one trainer"));
        }
        if self.densities.iter().any(|&d| !(d > 0.0)) {
            return Err(invalid("federation.densities", "every density must be > 0"));
        }
        if self.rounds == 0 {
            return Err(invalid("federation.rounds", "must be >= 1"));
        }
        Ok(())
    }
}

pub struct TrainerNode {
    pub trainer: EdgeTrainer,
    /// Experiences consumed by updates since the last aggregation.
    pub d_n: u64,
    /// Experiences uploaded by interactors since the last aggregation.
    pub uploaded: u64,
}

impl TrainerNode {
    pub fn density(&self) -> f64 {
        self.trainer.density()
    }

    pub fn id(&self) -> u32 {
        self.trainer.id
    }
}

/// Adopts `global`, trains for `local_steps` updates, and returns the local
/// model with the number of experiences consumed.
pub fn local_round(
    node: &mut TrainerNode,
    global: &PolicyParams,
    local_steps: u64,
) -> Result<(PolicyParams, u64)> {
    node.trainer.params = global.clone();
    let before = node.trainer.selector.counters.uploaded;
    let consumed = node.trainer.train_for(local_steps)?;
    node.d_n = consumed;
    node.uploaded = node.trainer.selector.counters.uploaded - before;
    Ok((node.trainer.params.clone(), consumed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FederationRow {
    pub round: u32,
    pub trainer: u32,
    pub d_n: u64,
    pub weight: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub eval_density: f64,
    pub collision_ratio: Option<f64>,
    pub v_avg: Option<f64>,
    #[serde(rename = "J_avg")]
    pub j_avg: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ByteTotals {
    pub down: u64,
    pub up_models: u64,
    pub up_experience: u64,
}

#[derive(Debug, Clone)]
pub struct FederationLog {
    pub mode: AggregationMode,
    pub rows: Vec<FederationRow>,
    pub bytes: ByteTotals,
    /// Global model after each round, starting with the initial one.
    pub globals: Vec<PolicyParams>,
    /// Per-trainer local models of the last round, by trainer id.
    pub last_locals: Vec<PolicyParams>,
}

impl FederationLog {
    pub fn final_global(&self) -> &PolicyParams {
        self.globals.last().expect("initial model is always present")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record([
            "round",
            "trainer",
            "d_n",
            "weight",
            "bytes_up",
            "bytes_down",
            "eval_density",
            "collision_ratio",
            "v_avg",
            "J_avg",
        ])?;
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `model_round<r>_trainer<n>.bin` for the last round's locals
    /// and `model_round<r>_global.bin` for every round.
    pub fn write_checkpoints(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let last = self.globals.len() - 1;
        for (r, g) in self.globals.iter().enumerate() {
            let path = dir.join(format!("model_round{r}_global.bin"));
            std::fs::write(&path, g.to_bytes())?;
            written.push(path);
        }
        for (n, m) in self.last_locals.iter().enumerate() {
            let path = dir.join(format!("model_round{last}_trainer{n}.bin"));
            std::fs::write(&path, m.to_bytes())?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Evaluates `params` model-only for one episode at `density`.
pub fn evaluate_model(
    params: &PolicyParams,
    sim: &SimConfig,
    rules: &RuleConfig,
    density: f64,
    steps: u64,
    seed: u64,
) -> Result<IndicatorSet> {
    let cfg = SimConfig {
        episode_steps: steps,
        ..sim.with_density(density, seed)
    };
    let log = run_episode(&cfg, rules, &Controller::Model(params), Default::default())?;
    IndicatorSet::from_log(&log, &cfg)
}

/// Synchronous federated imitation learning. Trainer `n` runs at
/// `cfg.densities[n]`; every stream derives from `seed`, so two modes run
/// with the same seed see identical traffic.
pub fn run_federation(
    cfg: &FederationConfig,
    sim: &SimConfig,
    rules: &RuleConfig,
    training: &TrainingConfig,
    seed: u64,
) -> Result<FederationLog> {
    cfg.validate()?;
    let total = TrainingConfig {
        total_steps: cfg.local_steps * cfg.rounds as u64,
        ..training.clone()
    };
    let mut nodes = Vec::with_capacity(cfg.densities.len());
    for (n, &density) in cfg.densities.iter().enumerate() {
        let trainer = EdgeTrainer::new(
            n as u32,
            &sim.with_density(density, 0),
            rules,
            &total,
            SelectionConfig::default(),
            seed,
        )?;
        nodes.push(TrainerNode {
            trainer,
            d_n: 0,
            uploaded: 0,
        });
    }

    let mut global = PolicyParams::init(seeds::derive(seed, "init"));
    let mut log = FederationLog {
        mode: cfg.mode,
        rows: Vec::new(),
        bytes: ByteTotals::default(),
        globals: vec![global.clone()],
        last_locals: Vec::new(),
    };
    let ckpt = CHECKPOINT_BYTES as u64;

    for round in 1..=cfg.rounds {
        let mut locals = Vec::with_capacity(nodes.len());
        let mut d = Vec::with_capacity(nodes.len());
        for node in &mut nodes {
            let (p, d_n) = local_round(node, &global, cfg.local_steps)?;
            locals.push(p);
            d.push(d_n);
        }
        let agg = aggregate(&global, &locals, &d, &cfg.densities, cfg.mode)?;
        global = agg.params;

        for (i, node) in nodes.iter().enumerate() {
            let exp_bytes = node.uploaded * EXPERIENCE_RECORD_BYTES as u64;
            log.bytes.down += ckpt;
            log.bytes.up_models += ckpt;
            log.bytes.up_experience += exp_bytes;
            let eval = if cfg.eval_steps > 0 {
                let s = seeds::derive(seed, &format!("eval/round/{round}/trainer/{i}"));
                Some(evaluate_model(&global, sim, rules, node.density(), cfg.eval_steps, s)?)
            } else {
                None
            };
            log.rows.push(FederationRow {
                round,
                trainer: node.id(),
                d_n: d[i],
                weight: agg.weights[i],
                bytes_up: ckpt + exp_bytes,
                bytes_down: ckpt,
                eval_density: node.density(),
                collision_ratio: eval.map(|e| e.collision_ratio),
                v_avg: eval.map(|e| e.v_avg),
                j_avg: eval.map(|e| e.discomfort),
            });
        }
        log.globals.push(global.clone());
        log.last_locals = locals;
    }
    Ok(log)
}
