//! Gaussian primitive relay channel with fixed real constellations.
//!
//! The source sends `X`, the relay sees `Y_R = X + N_R` and the destination
//! sees `Y_D = X + N_D` with independent Gaussian noises. Symbols are always
//! addressed by their index `W` (increasing amplitude order); amplitudes only
//! appear when a batch is drawn.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Pam4,
}

impl Modulation {
    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Pam4 => "pam4",
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "pam4" | "4pam" | "4-pam" => Ok(Modulation::Pam4),
            other => Err(Error::Config(format!("unsupported modulation `{other}`"))),
        }
    }
}

/// Equiprobable real constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub modulation: Modulation,
    pub symbols: Vec<f64>,
    pub prior: Vec<f64>,
    /// Average energy `E[X^2]`.
    pub power: f64,
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        let symbols = match modulation {
            Modulation::Bpsk => vec![-1.0, 1.0],
            Modulation::Pam4 => vec![-3.0, -1.0, 1.0, 3.0],
        };
        let m = symbols.len();
        let prior = vec![1.0 / m as f64; m];
        let power = symbols.iter().zip(&prior).map(|(x, p)| p * x * x).sum();
        Constellation {
            modulation,
            symbols,
            prior,
            power,
        }
    }

    /// Number of symbols `|X|`.
    pub fn order(&self) -> usize {
        self.symbols.len()
    }

    pub fn bits(&self) -> f64 {
        (self.order() as f64).log2()
    }
}

/// Builds the canonical constellation for a modulation name.
pub fn make_constellation(scheme: &str) -> Result<Constellation> {
    Ok(Constellation::new(scheme.parse()?))
}

/// Noise standard deviation giving SNR `snr_db` (with `P / sigma^2 = 10^(snr_db/10)`).
pub fn sigma_from_snr(constellation: &Constellation, snr_db: f64) -> f64 {
    (constellation.power / db_to_linear(snr_db)).sqrt()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub sigma_r: f64,
    pub sigma_d: f64,
    pub snr_db: f64,
}

impl ChannelParams {
    /// Equal relay and destination noise at the given SNR.
    pub fn from_snr(constellation: &Constellation, snr_db: f64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::Parameter(format!("snr_db must be finite, got {snr_db}")));
        }
        let sigma = sigma_from_snr(constellation, snr_db);
        Ok(ChannelParams {
            sigma_r: sigma,
            sigma_d: sigma,
            snr_db,
        })
    }

    /// Arbitrary noise levels; `snr_db` is then the destination-link SNR.
    pub fn with_sigmas(constellation: &Constellation, sigma_r: f64, sigma_d: f64) -> Result<Self> {
        if !(sigma_r > 0.0 && sigma_d > 0.0 && sigma_r.is_finite() && sigma_d.is_finite()) {
            return Err(Error::Parameter(format!(
                "noise deviations must be positive, got ({sigma_r}, {sigma_d})"
            )));
        }
        Ok(ChannelParams {
            sigma_r,
            sigma_d,
            snr_db: 10.0 * (constellation.power / (sigma_d * sigma_d)).log10(),
        })
    }

    /// Noise level of the maximum-ratio combination of both observations.
    pub fn combined_sigma(&self) -> f64 {
        let inv = 1.0 / (self.sigma_r * self.sigma_r) + 1.0 / (self.sigma_d * self.sigma_d);
        (1.0 / inv).sqrt()
    }
}

/// Aligned channel samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub w: Vec<usize>,
    pub x: Vec<f64>,
    pub y_r: Vec<f64>,
    pub y_d: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Draws `n` i.i.d. channel uses. Symbol indices come first, then relay
/// noise, then destination noise, all from `rng`.
pub fn sample_batch<R: RngCore>(
    constellation: &Constellation,
    params: &ChannelParams,
    n: usize,
    rng: &mut R,
) -> Batch {
    let m = constellation.order();
    let w: Vec<usize> = (0..n).map(|_| rng::index(rng, m)).collect();
    let x: Vec<f64> = w.iter().map(|&i| constellation.symbols[i]).collect();
    let mut y_r = vec![0.0; n];
    let mut y_d = vec![0.0; n];
    rng::fill_normal(rng, &mut y_r);
    rng::fill_normal(rng, &mut y_d);
    for i in 0..n {
        y_r[i] = x[i] + params.sigma_r * y_r[i];
        y_d[i] = x[i] + params.sigma_d * y_d[i];
    }
    Batch { w, x, y_r, y_d }
}
