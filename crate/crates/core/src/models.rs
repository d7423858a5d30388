//! Relay encoder, entropy models and demodulators for the three relaying
//! schemes.
//!
//! * `marginal`: encoder `y_R -> U`, free-logit entropy model `q(u)`,
//!   demodulator `p(w | y_D, u)`.
//! * `conditional`: as marginal, but the entropy model is a network of the
//!   destination observation, `q(u | y_D)`.
//! * `p2p`: marginal entropy model; the encoder is trained against a
//!   demodulator `p(w | u)` that never sees `y_D`, after which a side-information
//!   demodulator is fitted with the encoder frozen.
//!
//! Encoders only ever receive `y_R` and entropy models/demodulators only `y_D`
//! and `U`; the type signatures below make any other information path
//! impossible.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, Constellation, Modulation};
use crate::diffnet::{argmax, log_softmax, softmax, Dense, Matrix, Network, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::relaxation::{concrete_log_density, concrete_sample, ConcreteSample};

/// Default number of relay indices.
pub const DEFAULT_K: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Marginal,
    Conditional,
    P2p,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Marginal, Scheme::Conditional, Scheme::P2p];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Marginal => "marginal",
            Scheme::Conditional => "conditional",
            Scheme::P2p => "p2p",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(Scheme::Marginal),
            "conditional" => Ok(Scheme::Conditional),
            "p2p" => Ok(Scheme::P2p),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

fn column(values: &[f64], scale: f64) -> Matrix {
    Matrix::from_vec(values.len(), 1, values.iter().map(|v| v * scale).collect()).unwrap()
}

/// Deterministic relay quantizer: `K` logits from the scaled relay observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub net: Network,
    /// Multiplies `y_R` before it enters the network (`1 / sigma_R`).
    pub input_scale: f64,
}

impl EncoderModel {
    pub fn k(&self) -> usize {
        self.net.output_width()
    }

    pub fn logits(&self, y_r: f64) -> Vec<f64> {
        self.net.forward(&[y_r * self.input_scale]).expect("encoder takes one input")
    }

    pub fn logits_batch(&self, y_r: &[f64]) -> Matrix {
        self.net
            .forward_batch(&column(y_r, self.input_scale))
            .expect("encoder takes one input")
    }

    pub fn encode_hard_batch(&self, y_r: &[f64]) -> Vec<usize> {
        self.logits_batch(y_r).argmax_rows()
    }
}

/// Relay index for `y_r`: argmax of the encoder logits, ties to the lowest index.
pub fn encode_hard(enc: &EncoderModel, y_r: f64) -> usize {
    argmax(&enc.logits(y_r))
}

/// Relaxed relay index (training path).
pub fn encode_soft<R: RngCore>(enc: &EncoderModel, y_r: f64, temperature: f64, rng: &mut R) -> Result<ConcreteSample> {
    concrete_sample(&enc.logits(y_r), temperature, rng)
}

/// Probability model of the relay index used to price its description.
#[derive(Debug, Clone, PartialEq)]
pub enum EntropyModel {
    /// Free logits `1 x K`.
    Marginal { logits: Matrix },
    /// Logits computed from the scaled destination observation.
    Conditional { net: Network, input_scale: f64 },
}

impl EntropyModel {
    pub fn k(&self) -> usize {
        match self {
            EntropyModel::Marginal { logits } => logits.cols,
            EntropyModel::Conditional { net, .. } => net.output_width(),
        }
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self, EntropyModel::Conditional { .. })
    }

    /// Logits for one destination observation.
    pub fn logits(&self, y_d: Option<f64>) -> Result<Vec<f64>> {
        match self {
            EntropyModel::Marginal { logits } => Ok(logits.data.clone()),
            EntropyModel::Conditional { net, input_scale } => {
                let y = y_d.ok_or_else(|| {
                    Error::Usage("conditional entropy model needs the destination observation".into())
                })?;
                net.forward(&[y * input_scale])
            }
        }
    }

    /// `-log2 P(u | y_d)` for a batch of hard indices (deployment rate).
    pub fn code_lengths(&self, u: &[usize], y_d: &[f64]) -> Result<Vec<f64>> {
        let ln2 = std::f64::consts::LN_2;
        match self {
            EntropyModel::Marginal { logits } => {
                let lp = log_softmax(&logits.data);
                Ok(u.iter().map(|&k| -lp[k] / ln2).collect())
            }
            EntropyModel::Conditional { net, input_scale } => {
                if y_d.len() != u.len() {
                    return Err(Error::Usage(
                        "conditional entropy model needs one destination observation per index".into(),
                    ));
                }
                let logits = net.forward_batch(&column(y_d, *input_scale))?;
                Ok(u
                    .iter()
                    .enumerate()
                    .map(|(r, &k)| -log_softmax(logits.row(r))[k] / ln2)
                    .collect())
            }
        }
    }
}

/// Relay index handed to the entropy model.
#[derive(Debug, Clone, Copy)]
pub enum RelayIndex<'a> {
    Hard(usize),
    Relaxed(&'a ConcreteSample),
}

/// Log-probability in bits of the relay index under `em`. A hard index is
/// scored with the discrete pmf `softmax(logits)`; a relaxed sample with the
/// Concrete density at `temperature`.
pub fn entropy_logprob(em: &EntropyModel, u: RelayIndex<'_>, y_d: Option<f64>, temperature: f64) -> Result<f64> {
    let logits = em.logits(y_d)?;
    let ln2 = std::f64::consts::LN_2;
    match u {
        RelayIndex::Hard(k) => {
            if k >= logits.len() {
                return Err(Error::Usage(format!("index {k} out of range for K = {}", logits.len())));
            }
            Ok(log_softmax(&logits)[k] / ln2)
        }
        RelayIndex::Relaxed(sample) => Ok(concrete_log_density(&logits, temperature, sample)? / ln2),
    }
}

/// Soft symbol detector. With `side_info` the input is `(scaled y_D, u)`,
/// otherwise `u` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct DemodulatorModel {
    pub net: Network,
    pub side_info: bool,
    pub input_scale: f64,
}

impl DemodulatorModel {
    pub fn order(&self) -> usize {
        self.net.output_width()
    }

    pub fn k(&self) -> usize {
        self.net.input_width() - usize::from(self.side_info)
    }

    fn input(&self, y_d: &[f64], u: &Matrix) -> Result<Matrix> {
        if self.side_info {
            column(y_d, self.input_scale).hcat(u)
        } else {
            Ok(u.clone())
        }
    }

    /// Log-posteriors `B x |X|` for destination observations and relay
    /// index rows (one-hot or relaxed).
    pub fn log_posterior_batch(&self, y_d: &[f64], u: &Matrix) -> Result<Matrix> {
        let mut out = self.net.forward_batch(&self.input(y_d, u)?)?;
        for r in 0..out.rows {
            let lp = log_softmax(out.row(r));
            out.row_mut(r).copy_from_slice(&lp);
        }
        Ok(out)
    }

    pub fn decide_batch(&self, y_d: &[f64], u: &Matrix) -> Result<Vec<usize>> {
        Ok(self.log_posterior_batch(y_d, u)?.argmax_rows())
    }
}

pub fn demod_posterior(dm: &DemodulatorModel, y_d: f64, u_onehot: &[f64]) -> Result<Vec<f64>> {
    let u = Matrix::row_vector(u_onehot);
    let logits = dm.net.forward_batch(&dm.input(&[y_d], &u)?)?;
    Ok(softmax(&logits.data))
}

/// Hard decision: argmax of the posterior, ties to the lowest symbol index.
pub fn demod_hard(dm: &DemodulatorModel, y_d: f64, u_onehot: &[f64]) -> Result<usize> {
    Ok(argmax(&demod_posterior(dm, y_d, u_onehot)?))
}

pub fn one_hot(k: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[index] = 1.0;
    v
}

/// One-hot rows for a batch of indices.
pub fn one_hot_rows(k: usize, indices: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(indices.len(), k);
    for (r, &i) in indices.iter().enumerate() {
        m.data[r * k + i] = 1.0;
    }
    m
}

/// Parameter slot ranges of a bundle, in [`ModelBundle::params_mut`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotMap {
    pub encoder: Range<usize>,
    pub entropy: Range<usize>,
    pub demod: Range<usize>,
    pub pre_demod: Option<Range<usize>>,
}

impl SlotMap {
    pub fn total(&self) -> usize {
        self.pre_demod.as_ref().map_or(self.demod.end, |r| r.end)
    }
}

/// Everything needed to deploy or evaluate one trained relaying scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub scheme: Scheme,
    pub encoder: EncoderModel,
    pub entropy: EntropyModel,
    pub demod: DemodulatorModel,
    pub pre_demod: Option<DemodulatorModel>,
    pub constellation: Constellation,
    pub channel: ChannelParams,
    pub lambda: f64,
}

impl ModelBundle {
    /// Randomly initialised bundle with `k` relay indices.
    pub fn new<R: RngCore>(
        scheme: Scheme,
        constellation: Constellation,
        channel: ChannelParams,
        k: usize,
        lambda: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        let m = constellation.order();
        let scale_r = 1.0 / channel.sigma_r;
        let scale_d = 1.0 / channel.sigma_d;
        let encoder = EncoderModel {
            net: Network::standard(1, k, rng)?,
            input_scale: scale_r,
        };
        let entropy = match scheme {
            Scheme::Conditional => EntropyModel::Conditional {
                net: Network::standard(1, k, rng)?,
                input_scale: scale_d,
            },
            Scheme::Marginal | Scheme::P2p => EntropyModel::Marginal {
                logits: Matrix::zeros(1, k),
            },
        };
        let demod = DemodulatorModel {
            net: Network::standard(1 + k, m, rng)?,
            side_info: true,
            input_scale: scale_d,
        };
        let pre_demod = match scheme {
            Scheme::P2p => Some(DemodulatorModel {
                net: Network::standard(k, m, rng)?,
                side_info: false,
                input_scale: scale_d,
            }),
            _ => None,
        };
        Ok(ModelBundle {
            scheme,
            encoder,
            entropy,
            demod,
            pre_demod,
            constellation,
            channel,
            lambda,
        })
    }

    pub fn k(&self) -> usize {
        self.encoder.k()
    }

    pub fn slot_map(&self) -> SlotMap {
        let enc = self.encoder.net.param_count();
        let ent = match &self.entropy {
            EntropyModel::Marginal { .. } => 1,
            EntropyModel::Conditional { net, .. } => net.param_count(),
        };
        let dem = self.demod.net.param_count();
        let encoder = 0..enc;
        let entropy = enc..enc + ent;
        let demod = entropy.end..entropy.end + dem;
        let pre_demod = self
            .pre_demod
            .as_ref()
            .map(|p| demod.end..demod.end + p.net.param_count());
        SlotMap {
            encoder,
            entropy,
            demod,
            pre_demod,
        }
    }

    /// Every parameter matrix in slot order.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.encoder.net.params().collect();
        match &self.entropy {
            EntropyModel::Marginal { logits } => out.push(logits),
            EntropyModel::Conditional { net, .. } => out.extend(net.params()),
        }
        out.extend(self.demod.net.params());
        if let Some(p) = &self.pre_demod {
            out.extend(p.net.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.encoder.net.params_mut().collect();
        match &mut self.entropy {
            EntropyModel::Marginal { logits } => out.push(logits),
            EntropyModel::Conditional { net, .. } => out.extend(net.params_mut()),
        }
        out.extend(self.demod.net.params_mut());
        if let Some(p) = &mut self.pre_demod {
            out.extend(p.net.params_mut());
        }
        out
    }

    pub fn to_record(&self) -> BundleRecord {
        let mut arrays = Vec::new();
        push_network(&mut arrays, "encoder", &self.encoder.net);
        match &self.entropy {
            EntropyModel::Marginal { logits } => arrays.push(NamedArray::new("entropy.logits", logits)),
            EntropyModel::Conditional { net, .. } => push_network(&mut arrays, "entropy", net),
        }
        push_network(&mut arrays, "demod", &self.demod.net);
        if let Some(p) = &self.pre_demod {
            push_network(&mut arrays, "pre_demod", &p.net);
        }
        BundleRecord {
            scheme: self.scheme,
            modulation: self.constellation.modulation,
            channel: self.channel,
            lambda: self.lambda,
            k: self.k(),
            arrays,
        }
    }

    pub fn from_record(record: &BundleRecord) -> Result<Self> {
        let constellation = Constellation::new(record.modulation);
        let channel = record.channel;
        if !(channel.sigma_r > 0.0 && channel.sigma_d > 0.0) {
            return Err(Error::Artifact("non-positive noise level".into()));
        }
        let scale_r = 1.0 / channel.sigma_r;
        let scale_d = 1.0 / channel.sigma_d;
        let encoder = EncoderModel {
            net: read_network(&record.arrays, "encoder")?,
            input_scale: scale_r,
        };
        let entropy = match record.scheme {
            Scheme::Conditional => EntropyModel::Conditional {
                net: read_network(&record.arrays, "entropy")?,
                input_scale: scale_d,
            },
            _ => EntropyModel::Marginal {
                logits: find_array(&record.arrays, "entropy.logits")?,
            },
        };
        let demod = DemodulatorModel {
            net: read_network(&record.arrays, "demod")?,
            side_info: true,
            input_scale: scale_d,
        };
        let pre_demod = match record.scheme {
            Scheme::P2p => Some(DemodulatorModel {
                net: read_network(&record.arrays, "pre_demod")?,
                side_info: false,
                input_scale: scale_d,
            }),
            _ => None,
        };
        let bundle = ModelBundle {
            scheme: record.scheme,
            encoder,
            entropy,
            demod,
            pre_demod,
            constellation,
            channel,
            lambda: record.lambda,
        };
        bundle.check_shapes(record.k)?;
        Ok(bundle)
    }

    fn check_shapes(&self, k: usize) -> Result<()> {
        let m = self.constellation.order();
        let bad = |what: &str| Err(Error::Artifact(format!("{what} has the wrong shape")));
        if self.encoder.net.input_width() != 1 || self.encoder.k() != k {
            return bad("encoder");
        }
        match &self.entropy {
            EntropyModel::Marginal { logits } if logits.shape() != (1, k) => return bad("entropy model"),
            EntropyModel::Conditional { net, .. } if net.input_width() != 1 || net.output_width() != k => {
                return bad("entropy model")
            }
            _ => {}
        }
        if self.demod.net.input_width() != 1 + k || self.demod.order() != m {
            return bad("demodulator");
        }
        if let Some(p) = &self.pre_demod {
            if p.net.input_width() != k || p.order() != m {
                return bad("pre-training demodulator");
            }
        }
        Ok(())
    }
}

/// Flat named parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl NamedArray {
    fn new(name: &str, m: &Matrix) -> Self {
        NamedArray {
            name: name.to_string(),
            shape: [m.rows, m.cols],
            data: m.data.clone(),
        }
    }

    fn to_matrix(&self) -> Result<Matrix> {
        Matrix::from_vec(self.shape[0], self.shape[1], self.data.clone())
            .map_err(|e| Error::Artifact(format!("{}: {e}", self.name)))
    }
}

/// Serializable form of a [`ModelBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleRecord {
    pub scheme: Scheme,
    pub modulation: Modulation,
    pub channel: ChannelParams,
    pub lambda: f64,
    pub k: usize,
    pub arrays: Vec<NamedArray>,
}

fn push_network(out: &mut Vec<NamedArray>, prefix: &str, net: &Network) {
    for (i, layer) in net.layers.iter().enumerate() {
        out.push(NamedArray::new(&format!("{prefix}.{i}.weight"), &layer.weight));
        out.push(NamedArray::new(&format!("{prefix}.{i}.bias"), &layer.bias));
    }
}

fn find_array(arrays: &[NamedArray], name: &str) -> Result<Matrix> {
    arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::Artifact(format!("missing array `{name}`")))?
        .to_matrix()
}

fn read_network(arrays: &[NamedArray], prefix: &str) -> Result<Network> {
    let mut layers = Vec::new();
    loop {
        let i = layers.len();
        let w = format!("{prefix}.{i}.weight");
        if !arrays.iter().any(|a| a.name == w) {
            break;
        }
        layers.push(Dense {
            weight: find_array(arrays, &w)?,
            bias: find_array(arrays, &format!("{prefix}.{i}.bias"))?,
        });
    }
    if layers.is_empty() {
        return Err(Error::Artifact(format!("missing network `{prefix}`")));
    }
    Network::from_layers(layers, LEAKY_SLOPE).map_err(|e| Error::Artifact(format!("{prefix}: {e}")))
}
