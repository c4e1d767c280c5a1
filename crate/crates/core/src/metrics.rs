//! Evaluation indicators: collision ratio, average velocity, discomfort.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{EpisodeLog, SimConfig};

pub fn collision_ratio(n_collision: u64, n_vehicles: u64) -> Result<f64> {
    if n_vehicles == 0 {
        return Err(Error::UndefinedMetric("collision ratio with zero vehicles"));
    }
    Ok(n_collision as f64 / n_vehicles as f64)
}

/// Mean of per-vehicle `l_road / t_i` over vehicles that completed the road.
pub fn average_velocity(travel_times: &[f64], l_road: f64) -> Result<f64> {
    if travel_times.is_empty() {
        return Err(Error::UndefinedMetric("average velocity with no completed vehicles"));
    }
    if travel_times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::UndefinedMetric("non-positive travel time"));
    }
    let sum: f64 = travel_times.iter().map(|t| l_road / t).sum();
    Ok(sum / travel_times.len() as f64)
}

/// `sum_t ((a_t - a_{t-1}) / T)^2` for one vehicle.
pub fn jerk_energy(history: &[f64], step_t: f64) -> Result<f64> {
    if history.len() < 2 {
        return Err(Error::HistoryTooShort(history.len()));
    }
    Ok(history
        .windows(2)
        .map(|w| {
            let j = (w[1] - w[0]) / step_t;
            j * j
        })
        .sum())
}

/// Mean per-vehicle jerk energy.
pub fn discomfort<H: AsRef<[f64]>>(histories: &[H], step_t: f64) -> Result<f64> {
    if histories.is_empty() {
        return Err(Error::UndefinedMetric("discomfort with no vehicles"));
    }
    let mut total = 0.0;
    for h in histories {
        total += jerk_energy(h.as_ref(), step_t)?;
    }
    Ok(total / histories.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSet {
    pub collision_ratio: f64,
    pub v_avg: f64,
    pub discomfort: f64,
    /// Vehicles that either completed the road or collided.
    pub n_vehicles: u64,
    pub n_collision: u64,
}

impl IndicatorSet {
    /// Collided vehicles count toward the ratio but not toward speed or
    /// comfort, whose trajectories they did not finish.
    pub fn from_log(log: &EpisodeLog, cfg: &SimConfig) -> Result<Self> {
        Self::from_logs(std::slice::from_ref(log), cfg)
    }

    /// Pools several episodes (e.g. seeds) as one population of vehicles.
    pub fn from_logs(logs: &[EpisodeLog], cfg: &SimConfig) -> Result<Self> {
        let n_collision: u64 = logs.iter().map(|l| l.collided).sum();
        let completed: Vec<_> = logs.iter().flat_map(|l| &l.completed).collect();
        let n_vehicles = completed.len() as u64 + n_collision;
        let travel: Vec<f64> = completed.iter().map(|c| c.travel_time_s).collect();
        let v_avg = average_velocity(&travel, cfg.lane_length)?;
        let discomfort =
            completed.iter().map(|c| c.sum_sq_jerk).sum::<f64>() / completed.len() as f64;
        Ok(Self {
            collision_ratio: collision_ratio(n_collision, n_vehicles)?,
            v_avg,
            discomfort,
            n_vehicles,
            n_collision,
        })
    }
}
