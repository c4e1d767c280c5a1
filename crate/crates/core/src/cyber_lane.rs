//! Cyber-lane projection.
//!
//! Every live vehicle, whatever its physical approach, is placed on one
//! virtual line by its remaining distance to the shared conflict point.
//! Precedence on that line ("front" = closer to the conflict point) is what
//! the safety rules and the policy network reason about.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::sim::{Lane, SimConfig, VehicleState};

/// Number of nearest cyber-lane neighbours in the state vector.
pub const N_SELECT: usize = 5;
/// Scalars per vehicle entry: position, velocity, acceleration.
pub const ENTRY_LEN: usize = 3;
/// Length of the flattened state vector fed to the policy.
pub const STATE_LEN: usize = ENTRY_LEN * (1 + N_SELECT);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyberProjection {
    pub vehicle_id: u64,
    /// Distance to the conflict point (negative once the vehicle has passed it).
    pub cyber_pos: f64,
    pub source_lane: Lane,
    pub v: f64,
    pub a: f64,
}

impl CyberProjection {
    fn order(&self, other: &Self) -> Ordering {
        self.cyber_pos
            .total_cmp(&other.cyber_pos)
            .then(self.vehicle_id.cmp(&other.vehicle_id))
    }
}

/// Scale factors mapping raw kinematics into roughly [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl Normalizer {
    pub fn from_sim(cfg: &SimConfig) -> Self {
        Self {
            position: cfg.lane_length,
            velocity: cfg.v_max,
            acceleration: cfg.a_max,
        }
    }

    fn encode(&self, pos: f64, v: f64, a: f64) -> [f64; ENTRY_LEN] {
        [pos / self.position, v / self.velocity, a / self.acceleration]
    }

    fn decode(&self, e: &[f64]) -> [f64; ENTRY_LEN] {
        [
            e[0] * self.position,
            e[1] * self.velocity,
            e[2] * self.acceleration,
        ]
    }
}

/// Fixed-size, normalized policy input: the ego entry followed by
/// [`N_SELECT`] neighbour entries sorted by absolute relative position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector(pub [f64; STATE_LEN]);

impl StateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Inverse of the normalization: returns `(pos, v, a)` per entry, the
    /// first being the ego's absolute cyber position and the rest relative.
    pub fn denormalize(&self, norm: &Normalizer) -> [[f64; ENTRY_LEN]; 1 + N_SELECT] {
        let mut out = [[0.0; ENTRY_LEN]; 1 + N_SELECT];
        for (slot, chunk) in out.iter_mut().zip(self.0.chunks_exact(ENTRY_LEN)) {
            *slot = norm.decode(chunk);
        }
        out
    }
}

/// Scalar cues the safety rules consume. Missing neighbours read as a
/// vehicle `lane_length` away with zero acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneCues {
    pub d_nearest: f64,
    pub d_front: f64,
    pub d_behind: f64,
    pub acc_front: f64,
    /// Rate at which the gap to the nearest vehicle shrinks (m/s).
    pub closing_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighborhood {
    pub state: StateVector,
    pub cues: LaneCues,
}

/// Maps live vehicles onto the cyber-lane, ordered front (closest to the
/// conflict point) to back. Equal positions are ordered by vehicle id.
pub fn project<'a, I>(vehicles: I) -> Vec<CyberProjection>
where
    I: IntoIterator<Item = &'a VehicleState>,
{
    let mut out: Vec<CyberProjection> = vehicles
        .into_iter()
        .map(|v| CyberProjection {
            vehicle_id: v.id,
            cyber_pos: v.x_long,
            source_lane: v.lane,
            v: v.v,
            a: v.a,
        })
        .collect();
    out.sort_by(|a, b| a.order(b));
    out
}

/// Builds the state vector and rule cues of `ego_id`.
///
/// `projections` must be in [`project`] order.
pub fn nearest_neighbors(
    projections: &[CyberProjection],
    ego_id: u64,
    n_select: usize,
    sentinel: f64,
    norm: &Normalizer,
) -> Result<Neighborhood> {
    let idx = projections
        .iter()
        .position(|p| p.vehicle_id == ego_id)
        .ok_or(Error::VehicleNotFound(ego_id))?;
    Ok(neighborhood_at(projections, idx, n_select, sentinel, norm))
}

/// Same as [`nearest_neighbors`] but addressed by position in the sorted
/// projection, which the simulator already knows.
pub fn neighborhood_at(
    projections: &[CyberProjection],
    idx: usize,
    n_select: usize,
    sentinel: f64,
    norm: &Normalizer,
) -> Neighborhood {
    debug_assert!(n_select <= N_SELECT);
    let ego = &projections[idx];

    // Candidates: n_select on each side, widened to keep whole tie groups at
    // the window edges.
    let mut lo = idx.saturating_sub(n_select);
    while lo > 0 && projections[lo - 1].cyber_pos == projections[lo].cyber_pos {
        lo -= 1;
    }
    let mut hi = (idx + n_select + 1).min(projections.len());
    while hi < projections.len() && projections[hi].cyber_pos == projections[hi - 1].cyber_pos {
        hi += 1;
    }
    let mut candidates: Vec<&CyberProjection> = projections[lo..hi]
        .iter()
        .enumerate()
        .filter(|(i, _)| lo + i != idx)
        .map(|(_, p)| p)
        .collect();
    candidates.sort_by(|a, b| {
        (a.cyber_pos - ego.cyber_pos)
            .abs()
            .total_cmp(&(b.cyber_pos - ego.cyber_pos).abs())
            .then(a.vehicle_id.cmp(&b.vehicle_id))
    });

    let mut state = [0.0; STATE_LEN];
    state[..ENTRY_LEN].copy_from_slice(&norm.encode(ego.cyber_pos, ego.v, ego.a));
    for k in 0..N_SELECT {
        let entry = match candidates.get(k) {
            Some(n) if k < n_select => norm.encode(n.cyber_pos - ego.cyber_pos, n.v, n.a),
            _ => norm.encode(sentinel, 0.0, 0.0),
        };
        let off = ENTRY_LEN * (1 + k);
        state[off..off + ENTRY_LEN].copy_from_slice(&entry);
    }

    let front = idx.checked_sub(1).map(|i| &projections[i]);
    let behind = projections.get(idx + 1);
    let d_front = front.map_or(sentinel, |f| ego.cyber_pos - f.cyber_pos);
    let d_behind = behind.map_or(sentinel, |b| b.cyber_pos - ego.cyber_pos);
    let acc_front = front.map_or(0.0, |f| f.a);

    let (d_nearest, closing_speed) = match (front, behind) {
        (Some(f), Some(_)) if d_front <= d_behind => (d_front, ego.v - f.v),
        (Some(f), None) => (d_front, ego.v - f.v),
        (_, Some(b)) => (d_behind, b.v - ego.v),
        (None, None) => (sentinel, 0.0),
    };

    Neighborhood {
        state: StateVector(state),
        cues: LaneCues {
            d_nearest,
            d_front,
            d_behind,
            acc_front,
            closing_speed,
        },
    }
}
