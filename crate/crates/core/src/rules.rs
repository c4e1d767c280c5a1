//! Analytic collision-avoidance expert.
//!
//! Three safety values (space, time-to-collision, front acceleration) are
//! summed, clipped, and converted into an acceleration command. Logarithms
//! are natural; exponents are folded out of the log (`b * ln x` rather than
//! `ln(x^b)`) so `beta_acc = 12` cannot overflow.

use serde::{Deserialize, Serialize};

use crate::cyber_lane::LaneCues;
use crate::error::{invalid, Result};

/// Time safety value outside the sensitive TTC window.
pub const SV_TIME_CLEAR: f64 = 2.0;

/// Which gap selects the absolute-value branch of the SV-to-action map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsBranch {
    /// `|sv/eta|` when the front gap is the smaller one (the printed form).
    FrontCloser,
    /// `|sv/eta|` when the rear gap is the smaller one: a vehicle crowded
    /// from behind never brakes, one crowded from the front brakes.
    BehindCloser,
}

/// Sign convention of the front vehicle's acceleration fed to the
/// acceleration safety value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccFrame {
    /// Positive when the front vehicle speeds up.
    Travel,
    /// Measured along the `x_long` axis, which points away from the conflict
    /// point: positive when the front vehicle brakes.
    Axis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub alpha_s: f64,
    pub beta_s: f64,
    pub alpha_t: f64,
    /// Must be even: the printed form raises a negative base to this power.
    pub beta_t: u32,
    pub alpha_acc: f64,
    pub beta_acc: f64,
    pub lambda_acc: f64,
    pub sv_max: f64,
    pub sv_min: f64,
    pub eta_conversion: f64,
    pub d_threshold: f64,
    pub abs_branch: AbsBranch,
    pub acc_frame: AccFrame,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            alpha_s: 10.0,
            beta_s: 10.0,
            alpha_t: 1.5,
            beta_t: 2,
            alpha_acc: 1.5,
            beta_acc: 12.0,
            lambda_acc: 0.2,
            sv_max: 20.0,
            sv_min: -20.0,
            eta_conversion: 3.0,
            d_threshold: 10.0,
            abs_branch: AbsBranch::BehindCloser,
            acc_frame: AccFrame::Axis,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_s > 0.0) {
            return Err(invalid("rules.alpha_s", "must be > 0"));
        }
        if !(self.sv_min < self.sv_max) {
            return Err(invalid("rules.sv_min", "must be < sv_max"));
        }
        if !(self.eta_conversion > 0.0) {
            return Err(invalid("rules.eta_conversion", "must be > 0"));
        }
        if self.beta_t == 0 || self.beta_t % 2 != 0 {
            return Err(invalid("rules.beta_t", "must be an even positive integer"));
        }
        if !(self.d_threshold > 0.0) {
            return Err(invalid("rules.d_threshold", "must be > 0"));
        }
        if !(self.alpha_acc > 0.0) {
            return Err(invalid("rules.alpha_acc", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleInputs {
    pub d_nearest: f64,
    /// Time to collision with the nearest vehicle; `f64::INFINITY` when the
    /// gap is not closing.
    pub t_nearest: f64,
    pub d_front: f64,
    pub d_behind: f64,
    pub acc_front: f64,
}

impl RuleInputs {
    pub fn from_cues(c: &LaneCues) -> Self {
        Self {
            d_nearest: c.d_nearest,
            t_nearest: time_to_collision(c.d_nearest, c.closing_speed),
            d_front: c.d_front,
            d_behind: c.d_behind,
            acc_front: c.acc_front,
        }
    }
}

pub fn time_to_collision(gap: f64, closing_speed: f64) -> f64 {
    if closing_speed > 0.0 {
        gap.max(0.0) / closing_speed
    } else {
        f64::INFINITY
    }
}

pub fn sv_space(d_nearest: f64, cfg: &RuleConfig) -> f64 {
    if d_nearest <= 0.0 {
        return cfg.sv_min;
    }
    cfg.beta_s * (d_nearest / cfg.alpha_s).ln()
}

/// Written with a positive base; equal to the printed
/// `-(alpha_t / tanh(-t))^beta_t` because `beta_t` is even.
pub fn sv_time(t_nearest: f64, cfg: &RuleConfig) -> f64 {
    if t_nearest <= 0.0 {
        cfg.sv_min
    } else if t_nearest < 1.0 {
        -(cfg.alpha_t / t_nearest.tanh()).powi(cfg.beta_t as i32)
    } else {
        SV_TIME_CLEAR
    }
}

pub fn sv_accel(d_front: f64, acc_front: f64, cfg: &RuleConfig) -> f64 {
    if acc_front == 0.0 {
        return 0.0;
    }
    let ratio = (d_front / cfg.d_threshold).min(cfg.alpha_acc).max(f64::MIN_POSITIVE);
    cfg.lambda_acc * acc_front * cfg.beta_acc * ratio.ln()
}

pub fn combine_sv(sv_s: f64, sv_t: f64, sv_acc: f64, cfg: &RuleConfig) -> f64 {
    (sv_s + sv_t + sv_acc).clamp(cfg.sv_min, cfg.sv_max)
}

/// Unclamped acceleration; the simulator applies the actuator bounds.
pub fn sv_to_action(sv: f64, d_front: f64, d_behind: f64, cfg: &RuleConfig) -> f64 {
    let a = sv / cfg.eta_conversion;
    if d_front <= d_behind {
        a.abs()
    } else {
        a
    }
}

/// Intermediate values of one rule evaluation, kept for trace dumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuleEval {
    pub sv_s: f64,
    pub sv_t: f64,
    pub sv_acc: f64,
    pub sv: f64,
    pub action: f64,
}

pub fn evaluate(inputs: &RuleInputs, cfg: &RuleConfig) -> RuleEval {
    let sv_s = sv_space(inputs.d_nearest, cfg);
    let sv_t = sv_time(inputs.t_nearest, cfg);
    let acc_front = match cfg.acc_frame {
        AccFrame::Travel => inputs.acc_front,
        AccFrame::Axis => -inputs.acc_front,
    };
    let sv_acc = sv_accel(inputs.d_front, acc_front, cfg);
    let sv = combine_sv(sv_s, sv_t, sv_acc, cfg);
    let action = match cfg.abs_branch {
        AbsBranch::FrontCloser => sv_to_action(sv, inputs.d_front, inputs.d_behind, cfg),
        AbsBranch::BehindCloser => sv_to_action(sv, inputs.d_behind, inputs.d_front, cfg),
    };
    RuleEval {
        sv_s,
        sv_t,
        sv_acc,
        sv,
        action,
    }
}

pub fn rule_action(inputs: &RuleInputs, cfg: &RuleConfig) -> f64 {
    evaluate(inputs, cfg).action
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RuleConfig {
        RuleConfig::default()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn space_values() {
        close(sv_space(10.0, &cfg()), 0.0, 1e-12);
        close(sv_space(20.0, &cfg()), 6.931471805599453, 1e-9);
        assert_eq!(sv_space(0.0, &cfg()), -20.0);
        close(combine_sv(sv_space(1e-9, &cfg()), 2.0, 0.0, &cfg()), -20.0, 0.0);
    }

    #[test]
    fn time_values() {
        assert_eq!(sv_time(5.0, &cfg()), 2.0);
        assert_eq!(sv_time(f64::INFINITY, &cfg()), 2.0);
        close(sv_time(0.5, &cfg()), -10.536062347870132, 1e-9);
        // left limit at 1 then the jump to the clear value
        close(sv_time(1.0 - 1e-12, &cfg()), -3.879, 1e-3);
        assert_eq!(sv_time(1.0, &cfg()), 2.0);
        assert_eq!(sv_time(0.0, &cfg()), -20.0);
        assert_eq!(sv_time(-1.0, &cfg()), -20.0);
    }

    #[test]
    fn accel_values() {
        assert_eq!(sv_accel(5.0, 0.0, &cfg()), 0.0);
        close(sv_accel(5.0, -2.0, &cfg()), 3.327106466687738, 1e-9);
        close(sv_accel(20.0, 1.0, &cfg()), 0.9731162594595947, 1e-9);
        assert!(sv_accel(0.0, 1.0, &cfg()).is_finite());
    }

    #[test]
    fn combination_clips() {
        assert_eq!(combine_sv(10.0, 2.0, 0.0, &cfg()), 12.0);
        assert_eq!(combine_sv(19.0, 2.0, 5.0, &cfg()), 20.0);
        assert_eq!(combine_sv(-30.0, 2.0, 0.0, &cfg()), -20.0);
    }

    #[test]
    fn action_branches() {
        assert_eq!(sv_to_action(-9.0, 10.0, 5.0, &cfg()), -3.0);
        assert_eq!(sv_to_action(-9.0, 5.0, 10.0, &cfg()), 3.0);
        close(sv_to_action(20.0, 5.0, 10.0, &cfg()), 20.0 / 3.0, 1e-12);
        close(sv_to_action(20.0, 10.0, 5.0, &cfg()), 20.0 / 3.0, 1e-12);
    }

    #[test]
    fn lone_vehicle_accelerates() {
        let inputs = RuleInputs {
            d_nearest: 150.0,
            t_nearest: f64::INFINITY,
            d_front: 150.0,
            d_behind: 150.0,
            acc_front: 0.0,
        };
        let e = evaluate(&inputs, &cfg());
        assert!(e.sv_s > 20.0);
        assert_eq!(e.sv_t, 2.0);
        assert_eq!(e.sv_acc, 0.0);
        assert_eq!(e.sv, 20.0);
        close(e.action, 20.0 / 3.0, 1e-12);
    }

    #[test]
    fn closing_on_front_vehicle_brakes() {
        let t = time_to_collision(3.0, 6.0);
        close(t, 0.5, 1e-15);
        let inputs = RuleInputs {
            d_nearest: 3.0,
            t_nearest: t,
            d_front: 3.0,
            d_behind: 40.0,
            acc_front: 0.0,
        };
        let e = evaluate(&inputs, &cfg());
        assert!(e.sv < -15.0);
        assert!(e.action < -3.0);
    }

    #[test]
    fn equal_gaps_take_absolute_branch() {
        let inputs = RuleInputs {
            d_nearest: 4.0,
            t_nearest: f64::INFINITY,
            d_front: 4.0,
            d_behind: 4.0,
            acc_front: 0.0,
        };
        for branch in [AbsBranch::FrontCloser, AbsBranch::BehindCloser] {
            let c = RuleConfig {
                abs_branch: branch,
                ..cfg()
            };
            assert!(evaluate(&inputs, &c).sv < 0.0);
            assert!(rule_action(&inputs, &c) > 0.0);
        }
    }

    #[test]
    fn braking_front_vehicle_lowers_sv_when_close() {
        let inputs = RuleInputs {
            d_nearest: 5.0,
            t_nearest: f64::INFINITY,
            d_front: 5.0,
            d_behind: 50.0,
            acc_front: -2.0,
        };
        close(evaluate(&inputs, &cfg()).sv_acc, -3.327106466687738, 1e-9);
        let travel = RuleConfig {
            acc_frame: AccFrame::Travel,
            ..cfg()
        };
        close(evaluate(&inputs, &travel).sv_acc, 3.327106466687738, 1e-9);
    }

    #[test]
    fn ttc_is_infinite_when_separating() {
        assert_eq!(time_to_collision(5.0, 0.0), f64::INFINITY);
        assert_eq!(time_to_collision(5.0, -1.0), f64::INFINITY);
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_ok());
        let odd = RuleConfig { beta_t: 3, ..cfg() };
        assert!(odd.validate().is_err());
        let inverted = RuleConfig {
            sv_min: 30.0,
            ..cfg()
        };
        assert!(inverted.validate().is_err());
    }
}
