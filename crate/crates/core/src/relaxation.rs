//! Gumbel-max sampling and the Concrete (relaxed one-hot) distribution.
//!
//! A Concrete sample with logits `a` and temperature `t` is
//! `softmax((a + g) / t)` for i.i.d. standard Gumbel `g`. Sharing `g` with a
//! Gumbel-max draw makes the relaxed sample round to the same index for any
//! temperature. The log-density on the simplex (with respect to the first
//! `K - 1` coordinates) is
//!
//! ```text
//! log (K-1)! + (K-1) log t + sum_k (log p_k - (t+1) log x_k)
//!            - K log sum_k p_k x_k^(-t),          p = softmax(a)
//! ```

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diffnet::{argmax, log_softmax, log_sum_exp, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Lower clamp applied to relaxed coordinates before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Point on the open simplex together with the temperature that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteSample {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub temperature: f64,
}

impl ConcreteSample {
    /// Wraps an explicit simplex point.
    pub fn from_probs(probs: Vec<f64>, temperature: f64) -> Self {
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        ConcreteSample {
            probs,
            log_probs,
            temperature,
        }
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.log_probs)
    }
}

pub fn gumbel_noise<R: RngCore>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k).map(|_| rng::gumbel(rng)).collect()
}

/// `argmax_k (logits_k + noise_k)`, ties to the lowest index.
pub fn gumbel_max_with_noise(logits: &[f64], noise: &[f64]) -> usize {
    let perturbed: Vec<f64> = logits.iter().zip(noise).map(|(a, g)| a + g).collect();
    argmax(&perturbed)
}

/// Exact categorical draw from `softmax(logits)`.
pub fn gumbel_max<R: RngCore>(logits: &[f64], rng: &mut R) -> usize {
    let noise = gumbel_noise(logits.len(), rng);
    gumbel_max_with_noise(logits, &noise)
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )))
    }
}

/// Relaxed sample for a fixed Gumbel draw.
pub fn concrete_from_noise(logits: &[f64], noise: &[f64], temperature: f64) -> Result<ConcreteSample> {
    check_temperature(temperature)?;
    if noise.len() != logits.len() {
        return Err(Error::Shape(format!(
            "{} noise values for {} logits",
            noise.len(),
            logits.len()
        )));
    }
    let scaled: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(a, g)| (a + g) / temperature)
        .collect();
    let log_probs = log_softmax(&scaled);
    Ok(ConcreteSample {
        probs: log_probs.iter().map(|v| v.exp()).collect(),
        log_probs,
        temperature,
    })
}

pub fn concrete_sample<R: RngCore>(logits: &[f64], temperature: f64, rng: &mut R) -> Result<ConcreteSample> {
    check_temperature(temperature)?;
    let noise = gumbel_noise(logits.len(), rng);
    concrete_from_noise(logits, &noise, temperature)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Log-density of `point` under Concrete(`model_logits`, `temperature`).
pub fn concrete_log_density(model_logits: &[f64], temperature: f64, point: &ConcreteSample) -> Result<f64> {
    check_temperature(temperature)?;
    let k = model_logits.len();
    if point.probs.len() != k {
        return Err(Error::Shape(format!(
            "point has {} coordinates, model has {k}",
            point.probs.len()
        )));
    }
    let total: f64 = point.probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 || point.probs.iter().any(|&p| p.is_nan() || p < -1e-6) {
        return Err(Error::Domain(format!(
            "point is off the simplex (sum {total})"
        )));
    }
    let floor = PROB_FLOOR.ln();
    let log_x: Vec<f64> = point.log_probs.iter().map(|v| v.max(floor)).collect();
    let log_pi = log_softmax(model_logits);
    let t = temperature;
    let mixed: Vec<f64> = log_pi.iter().zip(&log_x).map(|(p, x)| p - t * x).collect();
    let body: f64 = log_pi.iter().zip(&log_x).map(|(p, x)| p - (t + 1.0) * x).sum();
    Ok(ln_factorial(k - 1) + (k as f64 - 1.0) * t.ln() + body - k as f64 * log_sum_exp(&mixed))
}

/// Differentiable relaxed samples for a batch of logits (`B x K`) and fixed
/// Gumbel noise. Returns the log of the relaxed one-hot rows.
pub fn concrete_log_sample_tape(tape: &mut Tape, logits: Var, noise: &Matrix, temperature: f64) -> Result<Var> {
    check_temperature(temperature)?;
    let g = tape.constant(noise.clone());
    let perturbed = tape.add(logits, g)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    Ok(tape.log_softmax(scaled))
}

/// Row-wise Concrete log-density (`B x 1`) of relaxed points given by their
/// logs `log_x` under model log-probabilities `log_pi` (both `B x K`).
pub fn concrete_log_density_tape(tape: &mut Tape, log_pi: Var, log_x: Var, temperature: f64) -> Result<Var> {
    check_temperature(temperature)?;
    let k = tape.value(log_pi).cols;
    let t = temperature;
    let log_x = tape.clamp_min(log_x, PROB_FLOOR.ln());
    let sum_pi = tape.sum_cols(log_pi);
    let sum_x = tape.sum_cols(log_x);
    let sum_x = tape.scale(sum_x, t + 1.0);
    let body = tape.sub(sum_pi, sum_x)?;
    let tx = tape.scale(log_x, t);
    let mixed = tape.sub(log_pi, tx)?;
    let lse = tape.log_sum_exp(mixed);
    let lse = tape.scale(lse, k as f64);
    let out = tape.sub(body, lse)?;
    Ok(tape.add_scalar(out, ln_factorial(k - 1) + (k as f64 - 1.0) * t.ln()))
}

/// Log-space Concrete log-density: the density of `y = log x` rather than of
/// `x`, i.e. [`concrete_log_density`] plus `sum_k y_k`. It is bounded above on
/// the whole domain and needs no probability floor.
pub fn exp_concrete_log_density(model_logits: &[f64], temperature: f64, log_point: &[f64]) -> Result<f64> {
    check_temperature(temperature)?;
    let k = model_logits.len();
    if log_point.len() != k {
        return Err(Error::Shape(format!("point has {} coordinates, model has {k}", log_point.len())));
    }
    let log_pi = log_softmax(model_logits);
    let t = temperature;
    let mixed: Vec<f64> = log_pi.iter().zip(log_point).map(|(p, y)| p - t * y).collect();
    let body: f64 = mixed.iter().sum();
    Ok(ln_factorial(k - 1) + (k as f64 - 1.0) * t.ln() + body - k as f64 * log_sum_exp(&mixed))
}

/// Row-wise [`exp_concrete_log_density`] on the tape (`B x 1`).
pub fn exp_concrete_log_density_tape(tape: &mut Tape, log_pi: Var, log_x: Var, temperature: f64) -> Result<Var> {
    check_temperature(temperature)?;
    let k = tape.value(log_pi).cols;
    let t = temperature;
    let tx = tape.scale(log_x, t);
    let mixed = tape.sub(log_pi, tx)?;
    let body = tape.sum_cols(mixed);
    let lse = tape.log_sum_exp(mixed);
    let lse = tape.scale(lse, k as f64);
    let out = tape.sub(body, lse)?;
    Ok(tape.add_scalar(out, ln_factorial(k - 1) + (k as f64 - 1.0) * t.ln()))
}

/// Geometric annealing `max(min, initial * decay^epoch)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureSchedule {
    pub initial: f64,
    pub min: f64,
    pub decay: f64,
}

impl TemperatureSchedule {
    /// Schedule that reaches `min` exactly at `epoch`.
    pub fn reaching_floor_at(initial: f64, min: f64, epoch: usize) -> Self {
        let decay = if epoch == 0 {
            0.0
        } else {
            (min / initial).powf(1.0 / epoch as f64)
        };
        TemperatureSchedule { initial, min, decay }
    }

    /// Default annealing for a run of `epochs` epochs: from 1.0 down to 0.1
    /// at 80% of the run.
    pub fn for_epochs(epochs: usize) -> Self {
        Self::reaching_floor_at(1.0, 0.1, (epochs * 4).div_ceil(5))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.min > 0.0 && self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("invalid temperature schedule {self:?}")));
        }
        Ok(())
    }
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self::for_epochs(500)
    }
}

pub fn temperature_at(epoch: usize, schedule: &TemperatureSchedule) -> f64 {
    (schedule.initial * schedule.decay.powi(epoch as i32)).max(schedule.min)
}
