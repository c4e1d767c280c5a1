//! Experiment driver: configuration, the five commands, and their artifacts.
//!
//! Every command writes into one output directory, records what it wrote in
//! `<command>.manifest.json`, and returns the acceptance properties it
//! checked alongside any drift against a previous manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::federation::{run_federation, AggregationMode, FederationConfig, FederationLog};
use crate::imitation::{write_curve_csv, EdgeTrainer, MixConfig, TrainingConfig};
use crate::metrics::IndicatorSet;
use crate::policy::PolicyParams;
use crate::report::{fmt_f, version_hash, ArtifactWriter, Manifest, Table};
use crate::rules::RuleConfig;
use crate::seeds;
use crate::selection::{savings_report, write_savings_csv, SelectionConfig};
use crate::sim::{run_episode, Controller, EpisodeLog, EpisodeOptions, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Evaluation grid.
    pub densities: Vec<f64>,
    /// Densities at which single-intersection models are trained.
    pub train_densities: Vec<f64>,
    /// Episodes pooled per (controller, density) cell.
    pub episodes: u32,
    pub steps: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            densities: (1..=7).map(|k| 300.0 * k as f64).collect(),
            train_densities: vec![300.0, 900.0, 1500.0, 2100.0],
            episodes: 3,
            steps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub discard_rates: Vec<f64>,
    pub density: f64,
    pub starvation_steps: u64,
    /// Steps over which savings are counted.
    pub horizon: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            discard_rates: vec![0.0, 0.01, 0.02, 0.05, 0.10],
            density: 900.0,
            starvation_steps: 200,
            horizon: 6000,
        }
    }
}

impl SweepConfig {
    pub fn selection(&self, p: f64) -> SelectionConfig {
        SelectionConfig {
            starvation_steps: self.starvation_steps,
            ..SelectionConfig::with_rate(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub rules: RuleConfig,
    pub training: TrainingConfig,
    pub mix: MixConfig,
    pub federation: FederationConfig,
    pub selection: SweepConfig,
    pub evaluation: EvaluationConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.rules.validate()?;
        self.training.validate()?;
        self.mix.validate()?;
        self.federation.validate()?;
        for &p in &self.selection.discard_rates {
            self.selection.selection(p).validate()?;
        }
        if !(self.selection.density > 0.0) {
            return Err(invalid("selection.density", "must be > 0"));
        }
        let ev = &self.evaluation;
        if ev.densities.is_empty() || ev.densities.iter().any(|&d| !(d >= 0.0)) {
            return Err(invalid("evaluation.densities", "need one or more densities >= 0"));
        }
        if ev.train_densities.is_empty() || ev.train_densities.iter().any(|&d| !(d > 0.0)) {
            return Err(invalid("evaluation.train_densities", "need one or more densities > 0"));
        }
        if ev.episodes == 0 {
            return Err(invalid("evaluation.episodes", "must be >= 1"));
        }
        if ev.steps == 0 {
            return Err(invalid("evaluation.steps", "must be >= 1"));
        }
        Ok(())
    }
}

/// Command-line overrides applied on top of the file config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub densities: Option<Vec<f64>>,
    pub modes: Option<Vec<AggregationMode>>,
    pub discard_rates: Option<Vec<f64>>,
    pub model: Option<PathBuf>,
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Command {
    Simulate,
    TrainIl,
    TrainFl,
    SweepSelection,
    Evaluate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::TrainIl => "train-il",
            Command::TrainFl => "train-fl",
            Command::SweepSelection => "sweep-selection",
            Command::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Manifest,
    /// Acceptance properties that did not hold.
    pub violations: Vec<String>,
    /// Files that differ from the manifest found in the output directory.
    pub drift: Vec<String>,
}

/// Runs `cmd` and writes its artifacts under `out`.
pub fn run(cmd: Command, cfg: &ExperimentConfig, ov: &Overrides, out: &Path) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(ps) = &ov.discard_rates {
        cfg.selection.discard_rates = ps.clone();
    }
    if let Some(ds) = &ov.densities {
        if ds.is_empty() {
            return Err(invalid("--densities", "empty list"));
        }
        match cmd {
            Command::Simulate | Command::Evaluate => cfg.evaluation.densities = ds.clone(),
            Command::TrainIl => cfg.evaluation.train_densities = ds.clone(),
            Command::TrainFl => cfg.federation.densities = ds.clone(),
            Command::SweepSelection => cfg.selection.density = ds[0],
        }
    }
    cfg.validate()?;

    let previous = Manifest::load(out, cmd.name())?;
    let mut w = ArtifactWriter::new(out)?;
    w.write("config.resolved.toml", cfg.to_toml().as_bytes())?;
    let violations = match cmd {
        Command::Simulate => simulate(&cfg, ov, &mut w)?,
        Command::TrainIl => train_il(&cfg, &mut w)?,
        Command::TrainFl => {
            let modes = ov.modes.clone().unwrap_or_else(|| {
                vec![AggregationMode::SameProportion, AggregationMode::DensityAware]
            });
            train_fl(&cfg, &modes, &mut w)?
        }
        Command::SweepSelection => sweep_selection(&cfg, &mut w)?,
        Command::Evaluate => evaluate(&cfg, ov.model.as_deref(), &mut w)?,
    };
    let manifest = w.into_manifest(cmd.name(), serde_json::to_value(&cfg)?);
    let drift = previous.map(|p| manifest.drift(&p)).unwrap_or_default();
    manifest.save(out)?;
    Ok(Outcome {
        manifest,
        violations,
        drift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EvalMode {
    #[serde(rename = "rule")]
    Rule,
    #[serde(rename = "model")]
    Model,
    #[serde(rename = "model+rule")]
    ModelRule,
}

impl EvalMode {
    pub fn label(&self) -> &'static str {
        match self {
            EvalMode::Rule => "rule",
            EvalMode::Model => "model",
            EvalMode::ModelRule => "model+rule",
        }
    }
}

/// Seed of evaluation episode `e` at `density`; every controller sees the
/// same traffic for the same (density, e).
pub fn eval_seed(master: u64, density: f64, e: u32) -> u64 {
    seeds::derive(master, &format!("eval/{density}/{e}"))
}

pub fn eval_episodes(
    cfg: &ExperimentConfig,
    params: Option<&PolicyParams>,
    mode: EvalMode,
    density: f64,
    opts: EpisodeOptions,
) -> Result<Vec<EpisodeLog>> {
    let controller = match (mode, params) {
        (EvalMode::Rule, _) => Controller::Rule,
        (EvalMode::Model, Some(p)) => Controller::Model(p),
        (EvalMode::ModelRule, Some(p)) => Controller::Mixed(p, cfg.mix),
        (_, None) => return Err(invalid("model", "model evaluation needs parameters")),
    };
    (0..cfg.evaluation.episodes)
        .map(|e| {
            let sim = SimConfig {
                episode_steps: cfg.evaluation.steps,
                ..cfg.sim.with_density(density, eval_seed(cfg.seed, density, e))
            };
            run_episode(&sim, &cfg.rules, &controller, opts)
        })
        .collect()
}

pub fn eval_cell(
    cfg: &ExperimentConfig,
    params: Option<&PolicyParams>,
    mode: EvalMode,
    density: f64,
) -> Result<IndicatorSet> {
    let logs = eval_episodes(cfg, params, mode, density, EpisodeOptions::default())?;
    IndicatorSet::from_logs(&logs, &cfg.sim)
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRecord {
    density: f64,
    mode: String,
    seed: u64,
    collision_ratio: f64,
    v_avg: f64,
    discomfort: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_density: Option<f64>,
}

impl SummaryRecord {
    fn new(density: f64, mode: &str, seed: u64, ind: &IndicatorSet) -> Self {
        Self {
            density,
            mode: mode.to_string(),
            seed,
            collision_ratio: ind.collision_ratio,
            v_avg: ind.v_avg,
            discomfort: ind.discomfort,
            train_density: None,
        }
    }
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    version_hash: String,
    config: &'a ExperimentConfig,
    results: T,
}

fn write_summary<T: Serialize>(
    w: &mut ArtifactWriter,
    rel: &str,
    cfg: &ExperimentConfig,
    results: T,
) -> Result<()> {
    w.write_json(
        rel,
        &Summary {
            version_hash: version_hash(),
            config: cfg,
            results,
        },
    )?;
    Ok(())
}

fn indicator_cells(ind: &IndicatorSet) -> [String; 5] {
    [
        fmt_f(ind.collision_ratio, 4),
        fmt_f(ind.v_avg, 3),
        fmt_f(ind.discomfort, 2),
        ind.n_vehicles.to_string(),
        ind.n_collision.to_string(),
    ]
}

const INDICATOR_HEADERS: [&str; 5] = ["collision_ratio", "v_avg", "discomfort", "n_vehicles", "n_collision"];

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn simulate(cfg: &ExperimentConfig, ov: &Overrides, w: &mut ArtifactWriter) -> Result<Vec<String>> {
    let mut table = Table::new(["density", "mode"].into_iter().chain(INDICATOR_HEADERS));
    let mut records = Vec::new();
    let mut violations = Vec::new();
    for &d in &cfg.evaluation.densities {
        let opts = EpisodeOptions {
            record_steps: false,
            record_trace: ov.trace,
        };
        let logs = eval_episodes(cfg, None, EvalMode::Rule, d, opts)?;
        let ind = IndicatorSet::from_logs(&logs, &cfg.sim)?;
        let first = &logs[0];
        w.write(
            &format!("episodes/rule_d{d}_vehicles.csv"),
            &csv_bytes(|b| first.write_vehicles_csv(b))?,
        )?;
        w.write(
            &format!("episodes/rule_d{d}_collisions.csv"),
            &csv_bytes(|b| first.write_collisions_csv(b))?,
        )?;
        if ov.trace {
            w.write(
                &format!("trace/rule_d{d}.csv"),
                &csv_bytes(|b| first.write_trace_csv(b))?,
            )?;
        }
        if ind.collision_ratio != 0.0 {
            violations.push(format!(
                "rule-only collision ratio {} at density {d}",
                ind.collision_ratio
            ));
        }
        table.push([d.to_string(), "rule".into()].into_iter().chain(indicator_cells(&ind)));
        records.push(SummaryRecord::new(d, "rule", cfg.seed, &ind));
    }
    w.write_table("simulate", &table)?;
    write_summary(w, "simulate.json", cfg, &records)?;
    Ok(violations)
}

/// Trains a single-intersection model at `density` with the configured
/// budget and selection settings.
pub fn train_single(
    cfg: &ExperimentConfig,
    density: f64,
    selection: SelectionConfig,
    role: &str,
) -> Result<EdgeTrainer> {
    let mut t = EdgeTrainer::new(
        0,
        &cfg.sim.with_density(density, 0),
        &cfg.rules,
        &cfg.training,
        selection,
        seeds::derive(cfg.seed, role),
    )?;
    t.train_for(cfg.training.total_steps)?;
    Ok(t)
}

fn train_il(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Result<Vec<String>> {
    let mut violations = Vec::new();
    let mut models = Vec::new();
    let mut conv = Table::new(["train_density", "train_steps", "sim_steps", "converged_at", "final_ma_loss"]);
    for &d in &cfg.evaluation.train_densities {
        let t = train_single(cfg, d, SelectionConfig::default(), &format!("il/{d}"))?;
        w.write(&format!("il/model_d{d}.bin"), &t.params.to_bytes())?;
        w.write(
            &format!("il/curve_d{d}.csv"),
            &csv_bytes(|b| write_curve_csv(&t.curve, b))?,
        )?;
        let ma = cfg.training.convergence.moving_average(&t.losses());
        conv.push([
            d.to_string(),
            t.train_steps().to_string(),
            t.sim_steps().to_string(),
            t.converged_at().map_or("none".into(), |s| s.to_string()),
            ma.last().map_or("nan".into(), |l| fmt_f(*l, 6)),
        ]);
        models.push((d, t.params));
    }
    w.write_table("il_convergence", &conv)?;

    let mut matrix = Table::new(
        ["train_density", "eval_density", "mode"]
            .into_iter()
            .chain(INDICATOR_HEADERS),
    );
    let mut records = Vec::new();
    let mut model_cr = Vec::new();
    for &e in &cfg.evaluation.densities {
        let ind = eval_cell(cfg, None, EvalMode::Rule, e)?;
        matrix.push(["-".to_string(), e.to_string(), "rule".into()].into_iter().chain(indicator_cells(&ind)));
        records.push(SummaryRecord::new(e, "rule", cfg.seed, &ind));
    }
    for (d, params) in &models {
        for &e in &cfg.evaluation.densities {
            for mode in [EvalMode::Model, EvalMode::ModelRule] {
                let ind = eval_cell(cfg, Some(params), mode, e)?;
                matrix.push(
                    [d.to_string(), e.to_string(), mode.label().into()]
                        .into_iter()
                        .chain(indicator_cells(&ind)),
                );
                let mut rec = SummaryRecord::new(e, mode.label(), cfg.seed, &ind);
                rec.train_density = Some(*d);
                records.push(rec);
                if mode == EvalMode::ModelRule && ind.collision_ratio != 0.0 {
                    violations.push(format!(
                        "model+rule collision ratio {} (trained {d}, evaluated {e})",
                        ind.collision_ratio
                    ));
                }
                if mode == EvalMode::Model {
                    model_cr.push((*d, e, ind.collision_ratio));
                }
            }
        }
    }
    // low-density training should not beat matched training at the top density
    let (lo, hi) = (
        cfg.evaluation.train_densities.iter().cloned().fold(f64::INFINITY, f64::min),
        cfg.evaluation.train_densities.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let find = |t: f64| model_cr.iter().find(|c| c.0 == t && c.1 == hi).map(|c| c.2);
    if lo < hi {
        if let (Some(low), Some(matched)) = (find(lo), find(hi)) {
            if !(low > matched) {
                violations.push(format!(
                    "model trained at {lo} evaluated at {hi}: collision ratio {low} not above matched {matched}"
                ));
            }
        }
    }
    w.write_table("il_matrix", &matrix)?;
    write_summary(w, "il_summary.json", cfg, &records)?;
    Ok(violations)
}

fn train_fl(
    cfg: &ExperimentConfig,
    modes: &[AggregationMode],
    w: &mut ArtifactWriter,
) -> Result<Vec<String>> {
    let mut violations = Vec::new();
    let mut logs: Vec<FederationLog> = Vec::new();
    for &mode in modes {
        let fed = FederationConfig {
            mode,
            ..cfg.federation.clone()
        };
        let log = run_federation(&fed, &cfg.sim, &cfg.rules, &cfg.training, cfg.seed)?;
        let dir = format!("fl/{}", mode.label());
        w.write(&format!("{dir}/federation.csv"), &csv_bytes(|b| log.write_csv(b))?)?;
        let last = log.globals.len() - 1;
        for (r, g) in log.globals.iter().enumerate() {
            w.write(&format!("{dir}/model_round{r}_global.bin"), &g.to_bytes())?;
        }
        for (n, m) in log.last_locals.iter().enumerate() {
            w.write(&format!("{dir}/model_round{last}_trainer{n}.bin"), &m.to_bytes())?;
        }
        if mode == AggregationMode::DensityAware {
            let total: f64 = fed.densities.iter().sum();
            for r in 1..=fed.rounds {
                let rows: Vec<_> = log.rows.iter().filter(|x| x.round == r).collect();
                if rows.windows(2).all(|p| p[0].d_n == p[1].d_n) && rows[0].d_n > 0 {
                    for row in &rows {
                        let want = row.eval_density / total;
                        if (row.weight - want).abs() > 1e-12 {
                            violations.push(format!(
                                "round {r} trainer {}: weight {} != density share {want}",
                                row.trainer, row.weight
                            ));
                        }
                    }
                }
            }
        }
        logs.push(log);
    }
    if logs.len() == 2 && logs[0].bytes != logs[1].bytes {
        violations.push("byte accounting differs between aggregation modes".into());
    }

    let mut bytes = Table::new(["mode", "bytes_down", "bytes_up_models", "bytes_up_experience"]);
    let mut cmp = Table::new(
        ["agg_mode", "eval_density", "mode"]
            .into_iter()
            .chain(INDICATOR_HEADERS),
    );
    let mut records = Vec::new();
    let mut finals: Vec<(AggregationMode, Vec<(f64, f64)>)> = Vec::new();
    for log in &logs {
        bytes.push([
            log.mode.label().to_string(),
            log.bytes.down.to_string(),
            log.bytes.up_models.to_string(),
            log.bytes.up_experience.to_string(),
        ]);
        let mut js = Vec::new();
        for &e in &cfg.evaluation.densities {
            for mode in [EvalMode::Model, EvalMode::ModelRule] {
                let ind = eval_cell(cfg, Some(log.final_global()), mode, e)?;
                cmp.push(
                    [log.mode.label().to_string(), e.to_string(), mode.label().into()]
                        .into_iter()
                        .chain(indicator_cells(&ind)),
                );
                records.push(SummaryRecord::new(
                    e,
                    &format!("{}/{}", log.mode.label(), mode.label()),
                    cfg.seed,
                    &ind,
                ));
                if mode == EvalMode::Model {
                    js.push((e, ind.discomfort));
                }
            }
        }
        finals.push((log.mode, js));
    }
    w.write_table("fl_bytes", &bytes)?;
    w.write_table("fl_comparison", &cmp)?;
    if finals.len() == 2 {
        let mut delta = Table::new(["eval_density", "J_same", "J_density", "J_delta"]);
        let (same, dens) = if finals[0].0 == AggregationMode::SameProportion {
            (&finals[0].1, &finals[1].1)
        } else {
            (&finals[1].1, &finals[0].1)
        };
        for ((e, js), (_, jd)) in same.iter().zip(dens) {
            delta.push([e.to_string(), fmt_f(*js, 2), fmt_f(*jd, 2), fmt_f(jd - js, 2)]);
        }
        w.write_table("fl_discomfort_delta", &delta)?;
    }
    write_summary(w, "fl_summary.json", cfg, &records)?;
    Ok(violations)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub savings_pct: f64,
    pub converged_at: Option<usize>,
    pub model: IndicatorSet,
    pub model_rule: IndicatorSet,
}

fn sweep_selection(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Result<Vec<String>> {
    let sc = &cfg.selection;
    let mut rows = Vec::new();
    for &p in &sc.discard_rates {
        // one role for every p: all rates see the same traffic and init
        let t = train_single(cfg, sc.density, sc.selection(p), "sweep")?;
        w.write(
            &format!("selection/p{p}_curve.csv"),
            &csv_bytes(|b| write_curve_csv(&t.curve, b))?,
        )?;
        w.write(
            &format!("selection/p{p}_savings.csv"),
            &csv_bytes(|b| write_savings_csv(&t.selector.log, b))?,
        )?;
        let savings = savings_report(&t.selector.log, sc.horizon as usize)?;
        rows.push(SweepRow {
            p,
            savings_pct: savings,
            converged_at: t.converged_at(),
            model: eval_cell(cfg, Some(&t.params), EvalMode::Model, sc.density)?,
            model_rule: eval_cell(cfg, Some(&t.params), EvalMode::ModelRule, sc.density)?,
        });
    }

    let mut table = Table::new([
        "p",
        "savings_pct",
        "converged_at",
        "model_collision_ratio",
        "model_discomfort",
        "model_v_avg",
        "model_rule_collision_ratio",
        "model_rule_discomfort",
        "model_rule_v_avg",
    ]);
    for r in &rows {
        table.push([
            r.p.to_string(),
            fmt_f(r.savings_pct, 3),
            r.converged_at.map_or("none".into(), |s| s.to_string()),
            fmt_f(r.model.collision_ratio, 4),
            fmt_f(r.model.discomfort, 2),
            fmt_f(r.model.v_avg, 3),
            fmt_f(r.model_rule.collision_ratio, 4),
            fmt_f(r.model_rule.discomfort, 2),
            fmt_f(r.model_rule.v_avg, 3),
        ]);
    }
    w.write_table("selection_table", &table)?;
    write_summary(w, "selection_summary.json", cfg, &rows)?;

    let mut violations = Vec::new();
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.p.total_cmp(&b.p));
    for pair in sorted.windows(2) {
        if pair[1].savings_pct < pair[0].savings_pct {
            violations.push(format!(
                "savings not monotone: p={} gives {} < {} at p={}",
                pair[1].p, pair[1].savings_pct, pair[0].savings_pct, pair[0].p
            ));
        }
    }
    for r in &rows {
        if r.p == 0.0 && r.savings_pct != 0.0 {
            violations.push(format!("p=0 saved {}%", r.savings_pct));
        }
        if r.p > 0.0 && r.p <= 0.10 + 1e-12 && r.converged_at.is_none() {
            violations.push(format!("p={} did not converge", r.p));
        }
        if r.model_rule.collision_ratio != 0.0 {
            violations.push(format!("p={} model+rule collision ratio {}", r.p, r.model_rule.collision_ratio));
        }
    }
    Ok(violations)
}

fn evaluate(cfg: &ExperimentConfig, model: Option<&Path>, w: &mut ArtifactWriter) -> Result<Vec<String>> {
    let params = match model {
        Some(path) => Some(PolicyParams::from_bytes(&std::fs::read(path).map_err(|e| {
            Error::InvalidConfig {
                field: "--model".into(),
                reason: format!("{}: {e}", path.display()),
            }
        })?)?),
        None => None,
    };
    let mut modes = vec![EvalMode::Rule];
    if params.is_some() {
        modes.extend([EvalMode::Model, EvalMode::ModelRule]);
    }
    let mut table = Table::new(["density", "mode"].into_iter().chain(INDICATOR_HEADERS));
    let mut records = Vec::new();
    let mut violations = Vec::new();
    for &d in &cfg.evaluation.densities {
        for &mode in &modes {
            let ind = eval_cell(cfg, params.as_ref(), mode, d)?;
            if mode != EvalMode::Model && ind.collision_ratio != 0.0 {
                violations.push(format!(
                    "{} collision ratio {} at density {d}",
                    mode.label(),
                    ind.collision_ratio
                ));
            }
            table.push([d.to_string(), mode.label().into()].into_iter().chain(indicator_cells(&ind)));
            records.push(SummaryRecord::new(d, mode.label(), cfg.seed, &ind));
        }
    }
    w.write_table("evaluate", &table)?;
    write_summary(w, "evaluate.json", cfg, &records)?;
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn field_level_errors() {
        let err = ExperimentConfig::from_toml_str("[sim]\nlane_length = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("sim.lane_length"), "{err}");
        let err = ExperimentConfig::from_toml_str("[sim]\nlane_lenght = 10.0\n").unwrap_err();
        assert!(err.to_string().contains("lane_lenght"), "{err}");
        let err = ExperimentConfig::from_toml_str("[selection]\ndiscard_rates = [1.5]\n").unwrap_err();
        assert!(err.to_string().contains("selection.discard_rate"), "{err}");
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml_str("seed = 9\n[training]\ntotal_steps = 10\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.training.total_steps, 10);
        assert_eq!(cfg.training.batch_size, 48);
        assert_eq!(cfg.evaluation.densities.len(), 7);
    }
}
