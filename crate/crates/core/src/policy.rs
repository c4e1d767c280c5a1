//! Feed-forward policy `18 -> 64 -> 64 -> 1`.
//!
//! Each hidden block is dense -> layer norm (learned scale/shift) -> ReLU.
//! The head is `ACTION_SCALE * tanh(z)`. Parameters are stored as `f32`
//! (that is what goes on the wire); arithmetic is carried out in `f64`.
//!
//! Flat parameter order, also the checkpoint order:
//!
//! | block | contents                          | len        |
//! |-------|-----------------------------------|------------|
//! | 1     | W1 `[64][18]`, b1, ln1 scale, ln1 shift | 1152+3*64 |
//! | 2     | W2 `[64][64]`, b2, ln2 scale, ln2 shift | 4096+3*64 |
//! | 3     | W3 `[1][64]`, b3                  | 65         |
//!
//! Matrices are row-major `[out][in]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cyber_lane::STATE_LEN;
use crate::error::{Error, Result};

pub const INPUT: usize = STATE_LEN;
pub const HIDDEN: usize = 64;
pub const ACTION_SCALE: f64 = 3.0;
const LN_EPS: f64 = 1e-5;

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * INPUT;
const G1: usize = B1 + HIDDEN;
const S1: usize = G1 + HIDDEN;
const W2: usize = S1 + HIDDEN;
const B2: usize = W2 + HIDDEN * HIDDEN;
const G2: usize = B2 + HIDDEN;
const S2: usize = G2 + HIDDEN;
const W3: usize = S2 + HIDDEN;
const B3: usize = W3 + HIDDEN;
/// Total number of scalar parameters.
pub const N_PARAMS: usize = B3 + 1;

const MAGIC: &[u8; 4] = b"FCAV";
const FORMAT_VERSION: u16 = 1;
const WIDTHS: [u32; 4] = [INPUT as u32, HIDDEN as u32, HIDDEN as u32, 1];
const HEADER_LEN: usize = 4 + 2 + 2 + 4 * WIDTHS.len() + 8 + 4;

/// Size in bytes of a serialized checkpoint.
pub const CHECKPOINT_BYTES: usize = HEADER_LEN + 4 * N_PARAMS;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    values: Vec<f32>,
    /// Number of optimizer updates applied since initialization.
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; N_PARAMS],
            version: 0,
        }
    }

    /// Fan-in scaled uniform weights, zero biases and shifts, unit scales.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros();
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in &mut p.values[range] {
                *w = rng.random_range(-bound..bound) as f32;
            }
        };
        fill(W1..B1, INPUT);
        fill(W2..B2, HIDDEN);
        fill(W3..B3, HIDDEN);
        p.values[G1..S1].fill(1.0);
        p.values[G2..S2].fill(1.0);
        p
    }

    pub fn from_values(values: Vec<f32>) -> Result<Self> {
        if values.len() != N_PARAMS {
            return Err(Error::Shape {
                expected: N_PARAMS,
                got: values.len(),
            });
        }
        Ok(Self { values, version: 0 })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn forward(&self, state: &[f64]) -> Result<f64> {
        check_input(state)?;
        Ok(self.run(state).output)
    }

    /// Mean squared action error over `batch` and its gradient.
    pub fn backward<'a, I>(&self, batch: I) -> Result<(f64, Gradient)>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let (losses, grad) = self.backward_samples(batch)?;
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        Ok((loss, grad))
    }

    /// Like [`Self::backward`] but keeps every sample's squared error.
    pub fn backward_samples<'a, I>(&self, batch: I) -> Result<(Vec<f64>, Gradient)>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut grad = Gradient::zeros();
        let mut losses = Vec::new();
        for (state, target) in batch {
            check_input(state)?;
            let act = self.run(state);
            let residual = act.output - target;
            losses.push(residual * residual);
            // per-sample d(residual^2)/d(output); divided by B at the end
            self.accumulate(&act, state, 2.0 * residual, &mut grad.0);
        }
        if losses.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let inv = 1.0 / losses.len() as f64;
        grad.0.iter_mut().for_each(|g| *g *= inv);
        Ok((losses, grad))
    }

    fn p(&self, i: usize) -> f64 {
        self.values[i] as f64
    }

    fn run(&self, x: &[f64]) -> Activations {
        let mut a = Activations::default();
        for o in 0..HIDDEN {
            let row = &self.values[W1 + o * INPUT..W1 + (o + 1) * INPUT];
            a.h1[o] = self.p(B1 + o) + dot32(row, x);
        }
        layer_norm(&a.h1, &mut a.xhat1, &mut a.inv_std1);
        for o in 0..HIDDEN {
            a.r1[o] = (a.xhat1[o] * self.p(G1 + o) + self.p(S1 + o)).max(0.0);
        }
        for o in 0..HIDDEN {
            let row = &self.values[W2 + o * HIDDEN..W2 + (o + 1) * HIDDEN];
            a.h2[o] = self.p(B2 + o) + dot32(row, &a.r1);
        }
        layer_norm(&a.h2, &mut a.xhat2, &mut a.inv_std2);
        for o in 0..HIDDEN {
            a.r2[o] = (a.xhat2[o] * self.p(G2 + o) + self.p(S2 + o)).max(0.0);
        }
        a.z = self.p(B3) + dot32(&self.values[W3..B3], &a.r2);
        a.output = ACTION_SCALE * a.z.tanh();
        a
    }

    fn accumulate(&self, a: &Activations, x: &[f64], d_out: f64, g: &mut [f64]) {
        let t = a.z.tanh();
        let dz = d_out * ACTION_SCALE * (1.0 - t * t);

        g[B3] += dz;
        let mut dr2 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            g[W3 + i] += dz * a.r2[i];
            dr2[i] = dz * self.p(W3 + i);
        }

        let dh2 = self.norm_block_backward(&dr2, &a.r2, &a.xhat2, a.inv_std2, G2, S2, g);
        let mut dr1 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            g[B2 + o] += dh2[o];
            let row = W2 + o * HIDDEN;
            for i in 0..HIDDEN {
                g[row + i] += dh2[o] * a.r1[i];
                dr1[i] += dh2[o] * self.p(row + i);
            }
        }

        let dh1 = self.norm_block_backward(&dr1, &a.r1, &a.xhat1, a.inv_std1, G1, S1, g);
        for o in 0..HIDDEN {
            g[B1 + o] += dh1[o];
            let row = W1 + o * INPUT;
            for i in 0..INPUT {
                g[row + i] += dh1[o] * x[i];
            }
        }
    }

    /// Back through ReLU and layer norm; returns d(loss)/d(pre-norm).
    #[allow(clippy::too_many_arguments)]
    fn norm_block_backward(
        &self,
        d_relu_out: &[f64; HIDDEN],
        relu_out: &[f64; HIDDEN],
        xhat: &[f64; HIDDEN],
        inv_std: f64,
        scale: usize,
        shift: usize,
        g: &mut [f64],
    ) -> [f64; HIDDEN] {
        let mut dxhat = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            let dn = if relu_out[i] > 0.0 { d_relu_out[i] } else { 0.0 };
            g[scale + i] += dn * xhat[i];
            g[shift + i] += dn;
            dxhat[i] = dn * self.p(scale + i);
        }
        let n = HIDDEN as f64;
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / n;
        let mut dh = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            dh[i] = inv_std * (dxhat[i] - mean_d - xhat[i] * mean_dx);
        }
        dh
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CHECKPOINT_BYTES);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(WIDTHS.len() as u16).to_le_bytes());
        for w in WIDTHS {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(N_PARAMS as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let fmt = u16::from_le_bytes(r.array()?);
        if fmt != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {fmt}")));
        }
        let n_widths = u16::from_le_bytes(r.array()?) as usize;
        if n_widths != WIDTHS.len() {
            return Err(Error::Format(format!("expected 4 layer widths, got {n_widths}")));
        }
        for expected in WIDTHS {
            let w = u32::from_le_bytes(r.array()?);
            if w != expected {
                return Err(Error::Format(format!("layer width {w}, expected {expected}")));
            }
        }
        let version = u64::from_le_bytes(r.array()?);
        let count = u32::from_le_bytes(r.array()?) as usize;
        if count != N_PARAMS {
            return Err(Error::Format(format!("{count} parameters, expected {N_PARAMS}")));
        }
        let mut values = Vec::with_capacity(N_PARAMS);
        for _ in 0..N_PARAMS {
            values.push(f32::from_le_bytes(r.array()?));
        }
        if !r.0.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.0.len())));
        }
        Ok(Self { values, version })
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Format(format!(
                "truncated checkpoint: need {n} more bytes, have {}",
                self.0.len()
            )));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

fn check_input(state: &[f64]) -> Result<()> {
    if state.len() != INPUT {
        return Err(Error::Shape {
            expected: INPUT,
            got: state.len(),
        });
    }
    Ok(())
}

fn dot32(w: &[f32], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(&w, &x)| w as f64 * x).sum()
}

fn layer_norm(h: &[f64; HIDDEN], xhat: &mut [f64; HIDDEN], inv_std: &mut f64) {
    let n = HIDDEN as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    *inv_std = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..HIDDEN {
        xhat[i] = (h[i] - mean) * *inv_std;
    }
}

struct Activations {
    h1: [f64; HIDDEN],
    xhat1: [f64; HIDDEN],
    inv_std1: f64,
    r1: [f64; HIDDEN],
    h2: [f64; HIDDEN],
    xhat2: [f64; HIDDEN],
    inv_std2: f64,
    r2: [f64; HIDDEN],
    z: f64,
    output: f64,
}

impl Default for Activations {
    fn default() -> Self {
        Self {
            h1: [0.0; HIDDEN],
            xhat1: [0.0; HIDDEN],
            inv_std1: 0.0,
            r1: [0.0; HIDDEN],
            h2: [0.0; HIDDEN],
            xhat2: [0.0; HIDDEN],
            inv_std2: 0.0,
            r2: [0.0; HIDDEN],
            z: 0.0,
            output: 0.0,
        }
    }
}

/// Gradient laid out like [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros() -> Self {
        Self(vec![0.0; N_PARAMS])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub base_lr: f64,
    /// Updates over which the learning rate decays linearly to zero.
    pub decay_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            base_lr: 1e-3,
            decay_steps: 6000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    /// Updates applied so far.
    pub step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; N_PARAMS],
            v: vec![0.0; N_PARAMS],
            step: 0,
        }
    }

    /// Learning rate for the next update.
    pub fn learning_rate(&self) -> f64 {
        let c = &self.config;
        if c.decay_steps == 0 {
            return 0.0;
        }
        let frac = 1.0 - self.step as f64 / c.decay_steps as f64;
        c.base_lr * frac.clamp(0.0, 1.0)
    }

    pub fn adam_step(&mut self, params: &mut PolicyParams, grad: &Gradient) -> Result<()> {
        if grad.0.len() != self.m.len() || params.values.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: grad.0.len().min(params.values.len()),
            });
        }
        let lr = self.learning_rate();
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powf(self.step as f64);
        let bc2 = 1.0 - c.beta2.powf(self.step as f64);
        for (((p, &g), m), v) in params
            .values
            .iter_mut()
            .zip(&grad.0)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
            if update != 0.0 {
                *p = (*p as f64 - update) as f32;
            }
        }
        params.version += 1;
        Ok(())
    }
}
