//! Discrete-time longitudinal simulation of a four-approach unsignalized
//! intersection.
//!
//! `x_long` is the distance still to travel to the conflict point, so forward
//! motion shrinks it. A vehicle's trip ends (travel time stamped) when it
//! reaches the conflict point; it stays on the road until its body has
//! cleared the conflict zone.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::cyber_lane::{self, Normalizer, StateVector, N_SELECT};
use crate::error::{invalid, Error, Result};
use crate::imitation::{mixed_action, MixConfig};
use crate::metrics;
use crate::policy::PolicyParams;
use crate::rules::{self, RuleConfig, RuleEval, RuleInputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Lane(pub u8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub lane_length: f64,
    pub vehicle_size: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub v_init: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub step_t: f64,
    /// Vehicles per lane per hour.
    pub arrival_rate: f64,
    pub n_lanes: u8,
    pub episode_steps: u64,
    pub rng_seed: u64,
    /// Extra clearance behind the entry point before another vehicle may spawn.
    pub min_spawn_gap: f64,
    /// Added to half the vehicle size to get the conflict-zone half-width.
    pub conflict_margin: f64,
    /// Whether entry occupancy is judged on the spawning lane only or on the
    /// whole cyber-lane.
    pub spawn_gate: SpawnGate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpawnGate {
    Lane,
    CyberLane,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lane_length: 150.0,
            vehicle_size: 2.0,
            v_min: 6.0,
            v_max: 13.0,
            v_init: 10.0,
            a_min: -3.0,
            a_max: 3.0,
            step_t: 0.1,
            arrival_rate: 900.0,
            n_lanes: 4,
            episode_steps: 2000,
            rng_seed: 0,
            min_spawn_gap: 4.0,
            conflict_margin: 1.0,
            spawn_gate: SpawnGate::CyberLane,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lane_length > 0.0) {
            return Err(invalid("sim.lane_length", "must be > 0"));
        }
        if !(self.vehicle_size > 0.0) {
            return Err(invalid("sim.vehicle_size", "must be > 0"));
        }
        if !(self.v_min <= self.v_init && self.v_init <= self.v_max) {
            return Err(invalid("sim.v_init", "must lie in [v_min, v_max]"));
        }
        if !(self.a_min < 0.0 && self.a_max > 0.0) {
            return Err(invalid("sim.a_min", "need a_min < 0 < a_max"));
        }
        if !(self.step_t > 0.0) {
            return Err(invalid("sim.step_t", "must be > 0"));
        }
        if !(self.arrival_rate >= 0.0) {
            return Err(invalid("sim.arrival_rate", "must be >= 0"));
        }
        if self.n_lanes == 0 {
            return Err(invalid("sim.n_lanes", "must be >= 1"));
        }
        if !(self.min_spawn_gap >= 0.0) {
            return Err(invalid("sim.min_spawn_gap", "must be >= 0"));
        }
        if !(self.conflict_margin >= 0.0) {
            return Err(invalid("sim.conflict_margin", "must be >= 0"));
        }
        Ok(())
    }

    pub fn conflict_half_width(&self) -> f64 {
        self.vehicle_size / 2.0 + self.conflict_margin
    }

    pub fn with_density(&self, arrival_rate: f64, rng_seed: u64) -> Self {
        Self {
            arrival_rate,
            rng_seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u64,
    pub lane: Lane,
    pub x_long: f64,
    pub v: f64,
    pub a: f64,
    pub spawn_step: u64,
    /// Step at which the vehicle reached the conflict point.
    pub exit_step: Option<u64>,
}

/// Advances one vehicle by one step.
///
/// The command is clamped to the actuator bounds and drives the position
/// update; the resulting speed is clamped to the velocity bounds, and the
/// acceleration actually realized is what gets stored (and later
/// differentiated for jerk).
pub fn step_kinematics(s: &VehicleState, a_cmd: f64, cfg: &SimConfig) -> VehicleState {
    let t = cfg.step_t;
    let a = a_cmd.clamp(cfg.a_min, cfg.a_max);
    let v_next = (s.v + a * t).clamp(cfg.v_min, cfg.v_max);
    let a_eff = if v_next == s.v + a * t { a } else { (v_next - s.v) / t };
    VehicleState {
        x_long: s.x_long - s.v * t - 0.5 * a * t * t,
        v: v_next,
        a: a_eff,
        ..s.clone()
    }
}

/// Poisson arrival counts for one step on each of `n_lanes` lanes.
pub fn sample_arrivals<R: Rng + ?Sized>(
    rate_per_hour: f64,
    step_t: f64,
    n_lanes: usize,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if !(rate_per_hour >= 0.0) {
        return Err(Error::NegativeRate(rate_per_hour));
    }
    let mean = rate_per_hour / 3600.0 * step_t;
    if mean == 0.0 {
        return Ok(vec![0; n_lanes]);
    }
    let dist = Poisson::new(mean).map_err(|_| Error::NegativeRate(rate_per_hour))?;
    Ok((0..n_lanes).map(|_| dist.sample(rng) as u32).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub state: VehicleState,
    /// Realized acceleration at every step up to reaching the conflict point.
    pub accel_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletedVehicle {
    pub id: u64,
    pub lane: u8,
    pub spawn_step: u64,
    pub exit_step: u64,
    pub travel_time_s: f64,
    pub sum_sq_jerk: f64,
    #[serde(skip)]
    pub accel_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub step: u64,
    pub id_a: u64,
    pub id_b: u64,
}

#[derive(Debug, Clone, Default)]
pub struct WorldState {
    pub step: u64,
    pub vehicles: Vec<Vehicle>,
    pub completed: Vec<CompletedVehicle>,
    pub collision_log: Vec<CollisionEvent>,
    /// Vehicles removed by collisions.
    pub collided: u64,
    /// Sampled arrivals waiting for a free lane entry.
    pub spawn_queue: Vec<VecDeque<u64>>,
    next_id: u64,
}

impl WorldState {
    pub fn new(n_lanes: u8) -> Self {
        Self {
            spawn_queue: vec![VecDeque::new(); n_lanes as usize],
            ..Self::default()
        }
    }

    pub fn queue_len(&self, lane: Lane) -> usize {
        self.spawn_queue[lane.0 as usize].len()
    }

    pub fn states(&self) -> impl Iterator<Item = &VehicleState> {
        self.vehicles.iter().map(|v| &v.state)
    }
}

/// Queues one arrival on `lane` and spawns the head of that lane's queue if
/// the entry is free. Returns whether a vehicle entered the road.
pub fn spawn_vehicle(world: &mut WorldState, lane: Lane, cfg: &SimConfig) -> bool {
    world.spawn_queue[lane.0 as usize].push_back(world.step);
    release_queue(world, lane, cfg)
}

fn release_queue(world: &mut WorldState, lane: Lane, cfg: &SimConfig) -> bool {
    if world.spawn_queue[lane.0 as usize].is_empty() || !entry_free(world, lane, cfg) {
        return false;
    }
    world.spawn_queue[lane.0 as usize].pop_front();
    let id = world.next_id;
    world.next_id += 1;
    world.vehicles.push(Vehicle {
        state: VehicleState {
            id,
            lane,
            x_long: cfg.lane_length,
            v: cfg.v_init,
            a: 0.0,
            spawn_step: world.step,
            exit_step: None,
        },
        accel_history: Vec::new(),
    });
    true
}

fn entry_free(world: &WorldState, lane: Lane, cfg: &SimConfig) -> bool {
    let limit = cfg.lane_length - cfg.vehicle_size - cfg.min_spawn_gap;
    !world
        .states()
        .any(|s| (cfg.spawn_gate == SpawnGate::CyberLane || s.lane == lane) && s.x_long > limit)
}

/// Colliding id pairs (smaller id first), each reported once.
pub fn detect_collisions(vehicles: &[VehicleState], cfg: &SimConfig) -> Vec<(u64, u64)> {
    let mut pairs = Vec::new();

    let mut by_lane: Vec<&VehicleState> = vehicles.iter().collect();
    by_lane.sort_by(|a, b| a.lane.cmp(&b.lane).then(a.x_long.total_cmp(&b.x_long)));
    for (i, a) in by_lane.iter().enumerate() {
        for b in &by_lane[i + 1..] {
            if b.lane != a.lane || b.x_long - a.x_long >= cfg.vehicle_size {
                break;
            }
            pairs.push(ordered(a.id, b.id));
        }
    }

    let half = cfg.conflict_half_width();
    let in_zone: Vec<&VehicleState> = vehicles.iter().filter(|s| s.x_long.abs() < half).collect();
    for (i, a) in in_zone.iter().enumerate() {
        for b in &in_zone[i + 1..] {
            if a.lane != b.lane {
                pairs.push(ordered(a.id, b.id));
            }
        }
    }

    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn ordered(a: u64, b: u64) -> (u64, u64) {
    (a.min(b), a.max(b))
}

/// Where actions come from.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Rule,
    Model(&'a PolicyParams),
    Mixed(&'a PolicyParams, MixConfig),
}

impl Controller<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Controller::Rule => "rule",
            Controller::Model(_) => "model",
            Controller::Mixed(..) => "model+rule",
        }
    }
}

/// What one vehicle saw and did during a step.
#[derive(Debug, Clone, Copy)]
pub struct Observation {
    pub vehicle_id: u64,
    pub state: StateVector,
    pub inputs: RuleInputs,
    pub rule: RuleEval,
    /// Commanded acceleration before actuator clamping.
    pub executed: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub step: u64,
    pub observations: Vec<Observation>,
    pub spawned: u32,
    pub collisions: Vec<CollisionEvent>,
}

/// A running episode: world plus its arrival stream.
#[derive(Clone)]
pub struct Simulation {
    cfg: SimConfig,
    rules: RuleConfig,
    norm: Normalizer,
    rng: ChaCha8Rng,
    world: WorldState,
}

impl Simulation {
    pub fn new(cfg: SimConfig, rules: RuleConfig) -> Result<Self> {
        cfg.validate()?;
        rules.validate()?;
        Ok(Self {
            norm: Normalizer::from_sim(&cfg),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            world: WorldState::new(cfg.n_lanes),
            cfg,
            rules,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn rules(&self) -> &RuleConfig {
        &self.rules
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    /// arrivals -> observe -> act -> move -> collide -> retire
    pub fn step(&mut self, controller: &Controller<'_>) -> Result<StepReport> {
        let cfg = &self.cfg;
        let mut report = StepReport {
            step: self.world.step,
            ..StepReport::default()
        };

        let arrivals =
            sample_arrivals(cfg.arrival_rate, cfg.step_t, cfg.n_lanes as usize, &mut self.rng)?;
        for (queue, &count) in self.world.spawn_queue.iter_mut().zip(&arrivals) {
            for _ in 0..count {
                queue.push_back(self.world.step);
            }
        }
        // longest-waiting arrival first, so no approach has standing priority
        let mut order: Vec<(u64, u8)> = self
            .world
            .spawn_queue
            .iter()
            .enumerate()
            .filter_map(|(lane, q)| q.front().map(|&t| (t, lane as u8)))
            .collect();
        order.sort_unstable();
        for (_, lane) in order {
            if release_queue(&mut self.world, Lane(lane), cfg) {
                report.spawned += 1;
            }
        }

        let mut commands: Vec<(u64, f64)> = Vec::with_capacity(self.world.vehicles.len());
        let projections = cyber_lane::project(self.world.states());
        for (idx, proj) in projections.iter().enumerate() {
            let hood = cyber_lane::neighborhood_at(
                &projections,
                idx,
                N_SELECT,
                cfg.lane_length,
                &self.norm,
            );
            let inputs = RuleInputs::from_cues(&hood.cues);
            let rule = rules::evaluate(&inputs, &self.rules);
            let executed = match controller {
                Controller::Rule => rule.action,
                Controller::Model(p) => p.forward(hood.state.as_slice())?,
                Controller::Mixed(p, mix) => {
                    let a_nn = p.forward(hood.state.as_slice())?;
                    mixed_action(a_nn, rule.action, mix, cfg)
                }
            };
            commands.push((proj.vehicle_id, executed));
            report.observations.push(Observation {
                vehicle_id: proj.vehicle_id,
                state: hood.state,
                inputs,
                rule,
                executed,
            });
        }
        commands.sort_unstable_by_key(|c| c.0);

        let next_step = self.world.step + 1;
        for veh in &mut self.world.vehicles {
            let cmd = commands
                .binary_search_by_key(&veh.state.id, |c| c.0)
                .map(|i| commands[i].1)
                .expect("every live vehicle was observed");
            veh.state = step_kinematics(&veh.state, cmd, cfg);
            if veh.state.exit_step.is_none() {
                veh.accel_history.push(veh.state.a);
                if veh.state.x_long <= 0.0 {
                    veh.state.exit_step = Some(next_step);
                }
            }
        }

        let states: Vec<VehicleState> = self.world.states().cloned().collect();
        let pairs = detect_collisions(&states, cfg);
        if !pairs.is_empty() {
            let mut hit: Vec<u64> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
            hit.sort_unstable();
            hit.dedup();
            self.world.collided += hit.len() as u64;
            self.world
                .vehicles
                .retain(|v| hit.binary_search(&v.state.id).is_err());
            for (a, b) in pairs {
                let ev = CollisionEvent {
                    step: next_step,
                    id_a: a,
                    id_b: b,
                };
                self.world.collision_log.push(ev);
                report.collisions.push(ev);
            }
        }

        let clear = -cfg.conflict_half_width();
        let (gone, live): (Vec<Vehicle>, Vec<Vehicle>) = self
            .world
            .vehicles
            .drain(..)
            .partition(|v| v.state.x_long <= clear);
        self.world.vehicles = live;
        for v in gone {
            self.world.completed.push(complete(v, cfg));
        }

        self.world.step = next_step;
        Ok(report)
    }

    /// Closes the episode. Vehicles that reached the conflict point but have
    /// not yet cleared it count as completed.
    pub fn finish(mut self) -> EpisodeLog {
        let cfg = self.cfg.clone();
        let (done, _in_flight): (Vec<Vehicle>, Vec<Vehicle>) = self
            .world
            .vehicles
            .drain(..)
            .partition(|v| v.state.exit_step.is_some());
        for v in done {
            self.world.completed.push(complete(v, &cfg));
        }
        self.world.completed.sort_by_key(|c| c.id);
        EpisodeLog {
            completed: self.world.completed,
            collisions: self.world.collision_log,
            collided: self.world.collided,
            steps: Vec::new(),
            trace: Vec::new(),
        }
    }
}

fn complete(v: Vehicle, cfg: &SimConfig) -> CompletedVehicle {
    let exit = v.state.exit_step.expect("vehicle passed the conflict point");
    let sum_sq_jerk = metrics::jerk_energy(&v.accel_history, cfg.step_t).unwrap_or(0.0);
    CompletedVehicle {
        id: v.state.id,
        lane: v.state.lane.0,
        spawn_step: v.state.spawn_step,
        exit_step: exit,
        travel_time_s: (exit - v.state.spawn_step) as f64 * cfg.step_t,
        sum_sq_jerk,
        accel_history: v.accel_history,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub live: usize,
    pub spawned: u32,
    pub collisions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: u64,
    pub vehicle_id: u64,
    pub sv_s: f64,
    pub sv_t: f64,
    pub sv_acc: f64,
    pub sv: f64,
    pub action: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeLog {
    pub completed: Vec<CompletedVehicle>,
    pub collisions: Vec<CollisionEvent>,
    pub collided: u64,
    pub steps: Vec<StepRecord>,
    pub trace: Vec<TraceRow>,
}

impl EpisodeLog {
    pub fn write_vehicles_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.completed {
            out.serialize(c)?;
        }
        if self.completed.is_empty() {
            out.write_record([
                "id",
                "lane",
                "spawn_step",
                "exit_step",
                "travel_time_s",
                "sum_sq_jerk",
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_collisions_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "id_a", "id_b"])?;
        for c in &self.collisions {
            out.write_record([c.step.to_string(), c.id_a.to_string(), c.id_b.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(["step", "vehicle_id", "sv_s", "sv_t", "sv_acc", "sv", "action"])?;
        for t in &self.trace {
            out.serialize(t)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeOptions {
    pub record_steps: bool,
    pub record_trace: bool,
}

pub fn run_episode(
    cfg: &SimConfig,
    rules: &RuleConfig,
    controller: &Controller<'_>,
    opts: EpisodeOptions,
) -> Result<EpisodeLog> {
    let mut sim = Simulation::new(cfg.clone(), rules.clone())?;
    let mut steps = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..cfg.episode_steps {
        let report = sim.step(controller)?;
        if opts.record_steps {
            steps.push(StepRecord {
                step: report.step,
                live: report.observations.len(),
                spawned: report.spawned,
                collisions: report.collisions.len(),
            });
        }
        if opts.record_trace {
            trace.extend(report.observations.iter().map(|o| TraceRow {
                step: report.step,
                vehicle_id: o.vehicle_id,
                sv_s: o.rule.sv_s,
                sv_t: o.rule.sv_t,
                sv_acc: o.rule.sv_acc,
                sv: o.rule.sv,
                action: o.rule.action,
            }));
        }
    }
    let mut log = sim.finish();
    log.steps = steps;
    log.trace = trace;
    Ok(log)
}
