//! One-hidden-layer ReLU probe trained with AdamW on mean squared error.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{dot, Matrix};
use crate::ridge::clip_unit;
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpFitConfig {
    pub hidden: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for MlpFitConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            weight_decay: 0.1,
            batch_size: 2048,
            learning_rate: 1e-3,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl MlpFitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden > 0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite()
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid MLP config {self:?}")))
        }
    }
}

/// `y = w2 · relu(W1 x + b1) + b2`, clipped to `[0, 1]` at prediction time.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpProbe {
    /// `hidden × d`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpProbe {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, input_dim),
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for every parameter.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden);
        let draw = |fan_in: usize, rng: &mut ChaCha8Rng, out: &mut [f64]| {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let u = Uniform::new(-bound, bound).expect("finite bound");
            out.iter_mut().for_each(|v| *v = u.sample(rng));
        };
        let mut w1 = p.w1.clone().into_vec();
        draw(input_dim, rng, &mut w1);
        p.w1 = Matrix::from_vec(hidden, input_dim, w1).expect("shape");
        draw(input_dim, rng, &mut p.b1);
        draw(hidden, rng, &mut p.w2);
        let mut b2 = [0.0];
        draw(hidden, rng, &mut b2);
        p.b2 = b2[0];
        p
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.b1.iter().chain(&self.w2).all(|v| v.is_finite())
            && self.b2.is_finite()
    }

    /// Unclipped output for one row.
    pub fn raw_response(&self, x: &[f64]) -> f64 {
        let mut out = self.b2;
        for k in 0..self.hidden() {
            let z = dot(self.w1.row(k), x) + self.b1[k];
            if z > 0.0 {
                out += self.w2[k] * z;
            }
        }
        out
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        Ok(x.row_iter().map(|r| clip_unit(self.raw_response(r))).collect())
    }

    /// All parameters as mutable slices, in a fixed order.
    fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        let Self { w1, b1, w2, b2 } = self;
        [w1.as_mut_slice(), &mut b1[..], &mut w2[..], core::slice::from_mut(b2)]
    }

    fn blocks(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            &self.b1,
            &self.w2,
            core::slice::from_ref(&self.b2),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Flattened parameters (`W1`, `b1`, `w2`, `b2`).
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    /// Inverse of [`MlpProbe::flatten`] for a probe of the same shape.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for b in self.blocks_mut() {
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        }
        Ok(())
    }
}

/// Mean squared error of the unclipped output over `rows`, with its gradient
/// with respect to every parameter (flattened like [`MlpProbe::flatten`]).
pub fn loss_and_gradient(
    probe: &MlpProbe,
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; probe.parameter_count()];
    let loss = accumulate(probe, x, y, rows, &mut grad)?;
    Ok((loss, grad))
}

#[allow(clippy::needless_range_loop)]
fn accumulate(
    probe: &MlpProbe,
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    grad: &mut [f64],
) -> Result<f64> {
    let (h, d) = (probe.hidden(), probe.input_dim());
    if x.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.cols(),
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("batch"));
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    let (gw1, rest) = grad.split_at_mut(h * d);
    let (gb1, rest) = rest.split_at_mut(h);
    let (gw2, gb2) = rest.split_at_mut(h);
    let scale = 1.0 / rows.len() as f64;
    let mut act = vec![0.0; h];
    let mut loss = 0.0;
    for &i in rows {
        let xi = x.row(i);
        let mut out = probe.b2;
        for k in 0..h {
            let z = dot(probe.w1.row(k), xi) + probe.b1[k];
            act[k] = if z > 0.0 { z } else { 0.0 };
            out += probe.w2[k] * act[k];
        }
        let err = out - y[i];
        loss += err * err;
        let g = 2.0 * err * scale;
        gb2[0] += g;
        for k in 0..h {
            if act[k] > 0.0 {
                gw2[k] += g * act[k];
                let delta = g * probe.w2[k];
                gb1[k] += delta;
                for (gw, &xv) in gw1[k * d..(k + 1) * d].iter_mut().zip(xi) {
                    *gw += delta * xv;
                }
            }
        }
    }
    Ok(loss * scale)
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
    weight_decay: f64,
}

impl AdamW {
    fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            weight_decay,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(BETA1, self.step as f64);
        let bc2 = 1.0 - libm::pow(BETA2, self.step as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *p -= self.lr * self.weight_decay * *p;
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (libm::sqrt(v_hat) + EPS);
        }
    }
}

/// Trains an [`MlpProbe`] and returns it with the mean training loss of each
/// epoch.
///
/// Rows are reshuffled every epoch with a generator seeded from
/// `config.seed`; the last batch of an epoch may be smaller than
/// `batch_size`. There is no early stopping.
pub fn fit_mlp(x: &Matrix, y: &[f64], config: &MlpFitConfig) -> Result<(MlpProbe, Vec<f64>)> {
    config.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::Empty("training rows"));
    }
    if x.cols() == 0 {
        return Err(Error::Empty("feature dimension"));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("activations"));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = MlpProbe::init(x.cols(), config.hidden, &mut rng);
    let mut params = probe.flatten();
    let mut grad = vec![0.0; params.len()];
    let mut opt = AdamW::new(params.len(), config.learning_rate, config.weight_decay);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(config.max_epochs);
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            probe.set_flat(&params)?;
            let loss = accumulate(&probe, x, y, batch, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * batch.len() as f64;
            opt.update(&mut params, &grad);
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        curve.push(mean);
    }
    probe.set_flat(&params)?;
    if !probe.is_finite() {
        return Err(Error::Diverged {
            epoch: config.max_epochs,
            loss: f64::NAN,
        });
    }
    Ok((probe, curve))
}
