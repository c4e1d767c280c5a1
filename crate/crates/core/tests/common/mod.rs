//! Scalar oracles and randomized checks shared by the test targets.
#![allow(dead_code)]

use fedcav_core::cyber_lane::STATE_LEN;
use fedcav_core::federation::{aggregate, aggregation_weights};
use fedcav_core::imitation::il_loss;
use fedcav_core::policy::{AdamConfig, Gradient, OptimizerState, N_PARAMS};
use fedcav_core::rules::{combine_sv, sv_accel, sv_space, sv_time, sv_to_action};
use fedcav_core::selection::compute_threshold;
use fedcav_core::{AggregationMode, PolicyParams, RuleConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst observed error of one check against its limit.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub worst: f64,
    pub limit: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, worst: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            worst,
            limit,
        }
    }

    pub fn pass(&self) -> bool {
        self.worst <= self.limit
    }

    pub fn line(&self) -> String {
        format!("{} worst={:.3e} limit={:.0e}", self.name, self.worst, self.limit)
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        return 0.0;
    }
    if !got.is_finite() || !want.is_finite() {
        return f64::INFINITY;
    }
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

pub mod oracle {
    use super::*;

    pub fn space(d: f64, c: &RuleConfig) -> f64 {
        c.beta_s * f64::ln(d / c.alpha_s)
    }

    pub fn time(t: f64, c: &RuleConfig) -> f64 {
        if t > 0.0 && t < 1.0 {
            -f64::powf(c.alpha_t / f64::tanh(-t), c.beta_t as f64)
        } else {
            2.0
        }
    }

    pub fn accel(d_front: f64, acc: f64, c: &RuleConfig) -> f64 {
        let m = if d_front / c.d_threshold < c.alpha_acc {
            d_front / c.d_threshold
        } else {
            c.alpha_acc
        };
        c.lambda_acc * acc * c.beta_acc * f64::ln(m)
    }

    pub fn combine(s: f64, t: f64, a: f64, c: &RuleConfig) -> f64 {
        let sum = s + t + a;
        if sum > c.sv_max {
            c.sv_max
        } else if sum < c.sv_min {
            c.sv_min
        } else {
            sum
        }
    }

    pub fn action(sv: f64, d_front: f64, d_behind: f64, c: &RuleConfig) -> f64 {
        if d_front <= d_behind {
            f64::abs(sv) / c.eta_conversion
        } else {
            sv / c.eta_conversion
        }
    }

    /// Direct transcription of the policy network over its flat layout.
    pub fn forward(values: &[f32], x: &[f64]) -> f64 {
        let p = |i: usize| values[i] as f64;
        let (n_in, h) = (STATE_LEN, 64);
        let mut off = 0;
        let mut layer = |input: &[f64], fan_in: usize| -> Vec<f64> {
            let w = off;
            let b = w + h * fan_in;
            let g = b + h;
            let s = g + h;
            off = s + h;
            let pre: Vec<f64> = (0..h)
                .map(|o| p(b + o) + (0..fan_in).map(|i| p(w + o * fan_in + i) * input[i]).sum::<f64>())
                .collect();
            let mean = pre.iter().sum::<f64>() / h as f64;
            let var = pre.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h as f64;
            (0..h)
                .map(|o| {
                    let n = (pre[o] - mean) / (var + 1e-5).sqrt();
                    f64::max(0.0, p(g + o) * n + p(s + o))
                })
                .collect()
        };
        let r1 = layer(x, n_in);
        let r2 = layer(&r1, h);
        let w3 = off;
        let b3 = w3 + h;
        let z = p(b3) + (0..h).map(|i| p(w3 + i) * r2[i]).sum::<f64>();
        3.0 * z.tanh()
    }

    pub fn mse(values: &[f32], batch: &[(Vec<f64>, f64)]) -> f64 {
        batch
            .iter()
            .map(|(s, a)| (forward(values, s) - a).powi(2))
            .sum::<f64>()
            / batch.len() as f64
    }

    /// The element at zero-based rank `floor(p * n)` of the ascending batch,
    /// found by counting rather than sorting.
    pub fn threshold(batch: &[f64], p: f64) -> f64 {
        let k = ((p * batch.len() as f64).floor() as usize).min(batch.len() - 1);
        *batch
            .iter()
            .find(|&&v| {
                let below = batch.iter().filter(|&&u| u < v).count();
                let at_most = batch.iter().filter(|&&u| u <= v).count();
                below <= k && k < at_most
            })
            .expect("some element holds every rank")
    }
}

pub fn random_state(rng: &mut impl Rng) -> Vec<f64> {
    (0..STATE_LEN).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Parameters with perturbed layer-norm scales and shifts so every block
/// contributes.
pub fn random_params(rng: &mut impl Rng) -> PolicyParams {
    let mut p = PolicyParams::init(rng.random());
    for v in p.values_mut() {
        *v += rng.random_range(-0.05f32..0.05);
    }
    p
}

/// Formula oracles over `n` random valid inputs each.
pub fn formula_checks(n: usize, seed: u64) -> Vec<Check> {
    let c = RuleConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 7];
    let params = random_params(&mut rng);
    for _ in 0..n {
        let d = rng.random_range(0.01..200.0);
        worst[0] = worst[0].max(rel_err(sv_space(d, &c), oracle::space(d, &c)));
        let t = rng.random_range(1e-3..3.0);
        worst[1] = worst[1].max(rel_err(sv_time(t, &c), oracle::time(t, &c)));
        let (df, acc) = (rng.random_range(0.5..100.0), rng.random_range(-3.0..3.0));
        worst[2] = worst[2].max(rel_err(sv_accel(df, acc, &c), oracle::accel(df, acc, &c)));
        let (s, tt, a) = (
            rng.random_range(-40.0..40.0),
            rng.random_range(-40.0..2.0),
            rng.random_range(-15.0..15.0),
        );
        worst[3] = worst[3].max(rel_err(combine_sv(s, tt, a, &c), oracle::combine(s, tt, a, &c)));
        let (sv, db) = (rng.random_range(-20.0..20.0), rng.random_range(0.5..100.0));
        worst[4] = worst[4].max(rel_err(sv_to_action(sv, df, db, &c), oracle::action(sv, df, db, &c)));

        let b = rng.random_range(1..=4);
        let batch: Vec<(Vec<f64>, f64)> = (0..b)
            .map(|_| (random_state(&mut rng), rng.random_range(-3.0..3.0)))
            .collect();
        let refs: Vec<(&[f64], f64)> = batch.iter().map(|(s, a)| (s.as_slice(), *a)).collect();
        worst[5] = worst[5].max(rel_err(
            il_loss(&params, &refs).unwrap(),
            oracle::mse(params.values(), &batch),
        ));

        let len = rng.random_range(1..=64);
        let losses: Vec<f64> = (0..len)
            .map(|_| (rng.random_range(0..40) as f64) * 0.01)
            .collect();
        let p = rng.random_range(0.0..1.0);
        worst[6] = worst[6].max(rel_err(
            compute_threshold(&losses, p).unwrap(),
            oracle::threshold(&losses, p),
        ));
    }
    let names = [
        "sv_space",
        "sv_time",
        "sv_accel",
        "combine_sv",
        "sv_to_action",
        "il_loss",
        "compute_threshold",
    ];
    names
        .iter()
        .zip(worst)
        .map(|(name, w)| Check::new(*name, w, 1e-9))
        .collect()
}

pub fn forward_check(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let p = random_params(&mut rng);
        let x = random_state(&mut rng);
        worst = worst.max((p.forward(&x).unwrap() - oracle::forward(p.values(), &x)).abs());
    }
    Check::new("forward", worst, 1e-6)
}

/// Analytic gradient against central differences on sampled coordinates;
/// the error is relative in the Euclidean norm.
pub fn gradient_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = random_params(&mut rng);
    let batch: Vec<(Vec<f64>, f64)> = (0..8)
        .map(|_| (random_state(&mut rng), rng.random_range(-2.0..2.0)))
        .collect();
    let (_, grad) = params
        .backward(batch.iter().map(|(s, a)| (s.as_slice(), *a)))
        .unwrap();

    let mut idx: Vec<usize> = (0..400).map(|_| rng.random_range(0..N_PARAMS)).collect();
    idx.extend(N_PARAMS - 65..N_PARAMS);
    // a power of two keeps `w + h` exact in f32 for |w| < 1
    let h = 2f64.powi(-12);
    let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    for &i in &idx {
        let mut plus = params.clone();
        plus.values_mut()[i] += h as f32;
        let mut minus = params.clone();
        minus.values_mut()[i] -= h as f32;
        let step = plus.values()[i] as f64 - minus.values()[i] as f64;
        let num = (oracle::mse(plus.values(), &batch) - oracle::mse(minus.values(), &batch)) / step;
        diff += (num - grad.0[i]).powi(2);
        norm_a += grad.0[i].powi(2);
        norm_n += num * num;
    }
    Check::new("gradient", diff.sqrt() / norm_a.sqrt().max(norm_n.sqrt()), 1e-3)
}

/// After one update from zero moments, each parameter moves by
/// `lr * g / (|g| + eps)`.
pub fn adam_first_step(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = random_params(&mut rng);
    let before: Vec<f64> = p.values().iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = (0..N_PARAMS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cfg = AdamConfig::default();
    let mut opt = OptimizerState::new(cfg);
    opt.adam_step(&mut p, &Gradient(g.clone())).unwrap();
    let worst = (0..N_PARAMS)
        .map(|i| {
            let want = before[i] - cfg.base_lr * g[i] / (g[i].abs() + cfg.epsilon);
            (p.values()[i] as f64 - want).abs()
        })
        .fold(0.0, f64::max);
    Check::new("adam_first_step", worst, 1e-6)
}

/// Weight normalization, fixed point, convexity, and permutation
/// invariance of aggregation over `cases` random setups.
pub fn aggregation_checks(cases: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut w_err, mut fixed, mut convex, mut perm) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cases {
        let n = rng.random_range(1..=5);
        let models: Vec<PolicyParams> = (0..n)
            .map(|_| {
                let v = (0..N_PARAMS).map(|_| rng.random_range(-2.0f32..2.0)).collect();
                PolicyParams::from_values(v).unwrap()
            })
            .collect();
        let mut d: Vec<u64> = (0..n)
            .map(|_| if rng.random_bool(0.2) { 0 } else { rng.random_range(1..5000) })
            .collect();
        if d.iter().all(|&x| x == 0) {
            d[0] = 1;
        }
        let rho: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..3000.0)).collect();
        let mode = if rng.random_bool(0.5) {
            AggregationMode::SameProportion
        } else {
            AggregationMode::DensityAware
        };
        let prev = PolicyParams::zeros();

        let w = aggregation_weights(&d, &rho, mode).unwrap();
        w_err = w_err.max((w.iter().sum::<f64>() - 1.0).abs());

        let copies = vec![models[0].clone(); n];
        let same = aggregate(&prev, &copies, &d, &rho, mode).unwrap();
        fixed = fixed.max(max_abs_diff(same.params.values(), models[0].values()));

        let agg = aggregate(&prev, &models, &d, &rho, mode).unwrap();
        let live: Vec<&PolicyParams> = models.iter().zip(&w).filter(|(_, &w)| w > 0.0).map(|(m, _)| m).collect();
        for (k, &v) in agg.params.values().iter().enumerate() {
            let lo = live.iter().map(|m| m.values()[k]).fold(f32::INFINITY, f32::min);
            let hi = live.iter().map(|m| m.values()[k]).fold(f32::NEG_INFINITY, f32::max);
            convex = convex.max(((lo - v).max(v - hi)).max(0.0) as f64);
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let pm: Vec<PolicyParams> = order.iter().map(|&i| models[i].clone()).collect();
        let pd: Vec<u64> = order.iter().map(|&i| d[i]).collect();
        let pr: Vec<f64> = order.iter().map(|&i| rho[i]).collect();
        let shuffled = aggregate(&prev, &pm, &pd, &pr, mode).unwrap();
        perm = perm.max(max_abs_diff(shuffled.params.values(), agg.params.values()));
    }
    vec![
        Check::new("weights_sum_to_one", w_err, 1e-12),
        Check::new("fixed_point", fixed, 0.0),
        Check::new("convexity", convex, 0.0),
        Check::new("permutation_invariance", perm, 0.0),
    ]
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
}
