//! Rate/detection trade-off training.
//!
//! The loss of one batch is `L = R + lambda * D` where `R` is the mean code
//! length (bits) of the relaxed relay index under the entropy model and `D` is
//! the demodulator cross-entropy (bits) of the transmitted symbol index.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_batch, Batch, ChannelParams, Constellation, Modulation};
use crate::diffnet::{Adam, AdamConfig, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_with, TradeoffPoint};
use crate::models::{one_hot_rows, EntropyModel, ModelBundle, Scheme, DEFAULT_K};
use crate::parallel::{self, Exec};
use crate::relaxation::{concrete_log_density_tape, exp_concrete_log_density_tape, concrete_log_sample_tape, temperature_at, TemperatureSchedule};
use crate::rng;

const LN_2: f64 = std::f64::consts::LN_2;

/// How the relaxed relay index is priced during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateEstimator {
    /// Concrete log-density of the relaxed sample under the entropy model's
    /// logits at the same temperature.
    Concrete,
    /// Concrete log-density of the log of the relaxed sample (log-space
    /// parameterisation), which stays bounded as samples approach vertices.
    ExpConcrete,
    /// Cross-entropy `-sum_k u_k log2 P_k` between the relaxed one-hot and the
    /// discrete pmf; equals the deployment code length as the temperature
    /// goes to zero.
    RelaxedCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub modulation: Modulation,
    pub snr_db: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub k: usize,
    pub seed: u64,
    /// Annealing schedule; defaults to [`TemperatureSchedule::for_epochs`].
    pub temperature: Option<TemperatureSchedule>,
    pub optimizer: AdamConfig,
    pub rate_estimator: RateEstimator,
    /// Epochs of side-information demodulator fitting after p2p pre-training.
    pub finetune_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scheme: Scheme::Marginal,
            modulation: Modulation::Pam4,
            snr_db: 13.0,
            lambda: 1.0,
            epochs: 500,
            steps_per_epoch: 64,
            batch_size: 1024,
            k: DEFAULT_K,
            seed: 0,
            temperature: None,
            optimizer: AdamConfig::default(),
            rate_estimator: RateEstimator::RelaxedCrossEntropy,
            finetune_epochs: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("batch_size", self.batch_size),
            ("k", self.k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("`lambda` must be positive, got {}", self.lambda)));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("`snr_db` must be finite".into()));
        }
        if self.scheme == Scheme::P2p && self.finetune_epochs == 0 {
            return Err(Error::Config("p2p training needs `finetune_epochs` > 0".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        self.schedule().validate()
    }

    pub fn schedule(&self) -> TemperatureSchedule {
        self.temperature.unwrap_or_else(|| TemperatureSchedule::for_epochs(self.epochs))
    }

    pub fn constellation(&self) -> Constellation {
        Constellation::new(self.modulation)
    }

    pub fn channel(&self) -> Result<ChannelParams> {
        ChannelParams::from_snr(&self.constellation(), self.snr_db)
    }
}

/// Mean loss terms over one epoch (or one batch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub loss: f64,
    pub rate_bits: f64,
    pub distortion_bits: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub temperature: f64,
    pub loss: f64,
    pub rate_bits: f64,
    pub distortion_bits: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub history: Vec<EpochMetrics>,
    /// Demodulator fitting epochs after p2p pre-training (empty otherwise).
    pub finetune_history: Vec<EpochMetrics>,
    pub bundle: ModelBundle,
}

impl TrainReport {
    /// Trailing moving average of the epoch losses.
    pub fn smoothed_loss(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let losses: Vec<f64> = self.history.iter().map(|m| m.loss).collect();
        (0..losses.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                losses[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }
}

/// Which parameters a training stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    /// Encoder, entropy model and side-information demodulator.
    Joint,
    /// Encoder, entropy model and the demodulator without side information.
    PreTrain,
    /// Side-information demodulator only, on hard relay indices.
    FineTune,
}

struct LossGraph {
    loss: Var,
    rate: Var,
    distortion: Var,
}

fn scaled_column(values: &[f64], scale: f64) -> Matrix {
    Matrix::from_vec(values.len(), 1, values.iter().map(|v| v * scale).collect()).unwrap()
}

/// Records the loss of `batch` on `tape`. `noise` holds one Gumbel row per
/// sample.
#[allow(clippy::too_many_arguments)]
fn build_loss(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &Batch,
    noise: &Matrix,
    lambda: f64,
    temperature: f64,
    estimator: RateEstimator,
    stage: Stage,
) -> Result<LossGraph> {
    let slots = bundle.slot_map();
    let n = batch.len();
    let k = bundle.k();
    let trains_encoder = stage != Stage::FineTune;
    let slot = |range: &std::ops::Range<usize>, on: bool| on.then_some(range.start);

    let y_d = tape.constant(scaled_column(&batch.y_d, bundle.demod.input_scale));

    // Rate term.
    let (rate, relay) = if stage == Stage::FineTune {
        let u = bundle.encoder.encode_hard_batch(&batch.y_r);
        let lengths = bundle.entropy.code_lengths(&u, &batch.y_d)?;
        let r = tape.constant(Matrix::column(&lengths));
        let rate = tape.mean(r)?;
        (rate, tape.constant(one_hot_rows(k, &u)))
    } else {
        let y_r = tape.constant(scaled_column(&batch.y_r, bundle.encoder.input_scale));
        let logits = bundle
            .encoder
            .net
            .forward_tape(tape, y_r, slot(&slots.encoder, trains_encoder))?;
        let log_x = concrete_log_sample_tape(tape, logits, noise, temperature)?;
        let log_pi = match &bundle.entropy {
            EntropyModel::Marginal { logits } => {
                let l = tape.param(slots.entropy.start, logits);
                let lp = tape.log_softmax(l);
                tape.broadcast_rows(lp, n)?
            }
            EntropyModel::Conditional { net, input_scale } => {
                let input = if (*input_scale - bundle.demod.input_scale).abs() == 0.0 {
                    y_d
                } else {
                    tape.constant(scaled_column(&batch.y_d, *input_scale))
                };
                let l = net.forward_tape(tape, input, Some(slots.entropy.start))?;
                tape.log_softmax(l)
            }
        };
        let x = tape.exp(log_x);
        let nats = match estimator {
            RateEstimator::Concrete => {
                let dens = concrete_log_density_tape(tape, log_pi, log_x, temperature)?;
                tape.mean(dens)?
            }
            RateEstimator::ExpConcrete => {
                let dens = exp_concrete_log_density_tape(tape, log_pi, log_x, temperature)?;
                tape.mean(dens)?
            }
            RateEstimator::RelaxedCrossEntropy => {
                let prod = tape.mul(x, log_pi)?;
                let s = tape.sum(prod);
                tape.scale(s, 1.0 / n as f64)
            }
        };
        (tape.scale(nats, -1.0 / LN_2), x)
    };

    // Detection term.
    let (demod, demod_slot, input) = match stage {
        Stage::PreTrain => {
            let pre = bundle
                .pre_demod
                .as_ref()
                .ok_or_else(|| Error::Usage("pre-training needs a p2p bundle".into()))?;
            (pre, slots.pre_demod.clone().map(|r| r.start), relay)
        }
        Stage::Joint | Stage::FineTune => {
            let input = tape.concat_cols(y_d, relay)?;
            (&bundle.demod, Some(slots.demod.start), input)
        }
    };
    let logits = demod.net.forward_tape(tape, input, demod_slot)?;
    let log_post = tape.log_softmax(logits);
    let picked = tape.gather(log_post, &batch.w)?;
    let mean = tape.mean(picked)?;
    let distortion = tape.scale(mean, -1.0 / LN_2);

    let weighted = tape.scale(distortion, lambda);
    let loss = tape.add(rate, weighted)?;
    Ok(LossGraph {
        loss,
        rate,
        distortion,
    })
}

fn gumbel_matrix<R: RngCore>(rows: usize, k: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::zeros(rows, k);
    rng::fill_gumbel(rng, &mut m.data);
    m
}

/// Training-path loss terms of one batch (relaxed relay index).
pub fn loss_batch<R: RngCore>(
    bundle: &ModelBundle,
    batch: &Batch,
    lambda: f64,
    temperature: f64,
    estimator: RateEstimator,
    rng: &mut R,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::Usage("loss of an empty batch".into()));
    }
    let noise = gumbel_matrix(batch.len(), bundle.k(), rng);
    let mut tape = Tape::new();
    let stage = if bundle.scheme == Scheme::P2p {
        Stage::PreTrain
    } else {
        Stage::Joint
    };
    let g = build_loss(&mut tape, bundle, batch, &noise, lambda, temperature, estimator, stage)?;
    Ok(LossTerms {
        loss: tape.scalar(g.loss),
        rate_bits: tape.scalar(g.rate),
        distortion_bits: tape.scalar(g.distortion),
    })
}

/// Gradient of the training loss for every trainable slot of `stage`.
/// Exposed for gradient checking.
pub fn loss_gradients(
    bundle: &ModelBundle,
    batch: &Batch,
    noise: &Matrix,
    lambda: f64,
    temperature: f64,
    estimator: RateEstimator,
) -> Result<(f64, Vec<Option<Matrix>>)> {
    let stage = if bundle.scheme == Scheme::P2p {
        Stage::PreTrain
    } else {
        Stage::Joint
    };
    let mut tape = Tape::new();
    let g = build_loss(&mut tape, bundle, batch, noise, lambda, temperature, estimator, stage)?;
    let grads = tape.backward(g.loss)?;
    Ok((tape.scalar(g.loss), grads.into_slots()))
}

/// Loss value for fixed noise, without gradients.
pub fn loss_value(
    bundle: &ModelBundle,
    batch: &Batch,
    noise: &Matrix,
    lambda: f64,
    temperature: f64,
    estimator: RateEstimator,
) -> Result<f64> {
    let stage = if bundle.scheme == Scheme::P2p {
        Stage::PreTrain
    } else {
        Stage::Joint
    };
    let mut tape = Tape::new();
    let g = build_loss(&mut tape, bundle, batch, noise, lambda, temperature, estimator, stage)?;
    Ok(tape.scalar(g.loss))
}

fn trainable_slots(bundle: &ModelBundle, stage: Stage) -> Vec<usize> {
    let map = bundle.slot_map();
    match stage {
        Stage::Joint => map.encoder.chain(map.entropy).chain(map.demod).collect(),
        Stage::PreTrain => map
            .encoder
            .chain(map.entropy)
            .chain(map.pre_demod.unwrap_or(0..0))
            .collect(),
        Stage::FineTune => map.demod.collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    bundle: &mut ModelBundle,
    config: &TrainConfig,
    stage: Stage,
    epochs: usize,
    schedule: impl Fn(usize) -> f64,
    data_rng: &mut rng::Stream,
    noise_rng: &mut rng::Stream,
    history: &mut Vec<EpochMetrics>,
) -> Result<()> {
    let slots = trainable_slots(bundle, stage);
    let shapes: Vec<(usize, usize)> = {
        let params = bundle.params();
        slots.iter().map(|&s| params[s].shape()).collect()
    };
    let mut adam = Adam::new(config.optimizer, &shapes);
    let constellation = bundle.constellation.clone();
    let channel = bundle.channel;
    let k = bundle.k();
    let steps = config.steps_per_epoch;

    for epoch in 0..epochs {
        let temperature = schedule(epoch);
        let mut acc = [0.0; 3];
        for _ in 0..steps {
            let batch = sample_batch(&constellation, &channel, config.batch_size, data_rng);
            let noise = if stage == Stage::FineTune {
                Matrix::zeros(0, k)
            } else {
                gumbel_matrix(config.batch_size, k, noise_rng)
            };
            let mut tape = Tape::new();
            let g = build_loss(
                &mut tape,
                bundle,
                &batch,
                &noise,
                config.lambda,
                temperature,
                config.rate_estimator,
                stage,
            )?;
            let loss = tape.scalar(g.loss);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            acc[0] += loss;
            acc[1] += tape.scalar(g.rate);
            acc[2] += tape.scalar(g.distortion);
            let grads = tape.backward(g.loss)?;
            let mut params = bundle.params_mut();
            let mut selected: Vec<&mut Matrix> = Vec::with_capacity(slots.len());
            // slots are increasing, so a single pass picks them in order
            let mut want = slots.iter().peekable();
            for (i, p) in params.drain(..).enumerate() {
                if want.peek() == Some(&&i) {
                    want.next();
                    selected.push(p);
                }
            }
            let grad_refs: Vec<Option<&Matrix>> = slots.iter().map(|&s| grads.slot(s)).collect();
            adam.step(&mut selected, &grad_refs)?;
        }
        let s = steps as f64;
        history.push(EpochMetrics {
            epoch,
            temperature,
            loss: acc[0] / s,
            rate_bits: acc[1] / s,
            distortion_bits: acc[2] / s,
        });
    }
    Ok(())
}

/// Trains one model from scratch. p2p models are trained in two stages: the
/// encoder and entropy model against a demodulator without side information,
/// then the side-information demodulator alone with everything else frozen.
pub fn train(config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let constellation = config.constellation();
    let channel = config.channel()?;
    let mut init_rng = rng::stream(config.seed, 0);
    let mut data_rng = rng::stream(config.seed, 1);
    let mut noise_rng = rng::stream(config.seed, 2);
    let mut bundle = ModelBundle::new(
        config.scheme,
        constellation,
        channel,
        config.k,
        config.lambda,
        &mut init_rng,
    )?;
    let schedule = config.schedule();
    let mut history = Vec::with_capacity(config.epochs);
    let mut finetune_history = Vec::new();
    let first = if config.scheme == Scheme::P2p {
        Stage::PreTrain
    } else {
        Stage::Joint
    };
    run_stage(
        &mut bundle,
        config,
        first,
        config.epochs,
        |e| temperature_at(e, &schedule),
        &mut data_rng,
        &mut noise_rng,
        &mut history,
    )?;
    if config.scheme == Scheme::P2p {
        let mut ft_rng = rng::stream(config.seed, 3);
        let final_t = temperature_at(config.epochs.saturating_sub(1), &schedule);
        run_stage(
            &mut bundle,
            config,
            Stage::FineTune,
            config.finetune_epochs,
            |_| final_t,
            &mut ft_rng,
            &mut noise_rng,
            &mut finetune_history,
        )
        .map_err(|e| match e {
            Error::Divergence { epoch } => Error::Divergence {
                epoch: config.epochs + epoch,
            },
            other => other,
        })?;
    }
    Ok(TrainReport {
        config: config.clone(),
        history,
        finetune_history,
        bundle,
    })
}

/// Trains only the side-information demodulator of `bundle` on hard relay
/// indices for `config.epochs` epochs; encoder and entropy model stay fixed.
pub fn fit_demodulator(bundle: &mut ModelBundle, config: &TrainConfig) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    let mut data_rng = rng::stream(config.seed, 3);
    let mut noise_rng = rng::stream(config.seed, 2);
    let mut history = Vec::with_capacity(config.epochs);
    let t = temperature_at(config.epochs.saturating_sub(1), &config.schedule());
    run_stage(
        bundle,
        config,
        Stage::FineTune,
        config.epochs,
        |_| t,
        &mut data_rng,
        &mut noise_rng,
        &mut history,
    )?;
    Ok(history)
}

/// Seed for the sweep entry with trade-off weight `lambda`.
pub fn sweep_seed(master: u64, lambda: f64) -> u64 {
    rng::mix_seed(master, lambda.to_bits())
}

/// Seed of the held-out evaluation batch for a model trained with `seed`.
pub fn holdout_seed(seed: u64) -> u64 {
    rng::mix_seed(seed, 0xE7A1)
}

/// Trains one model per `lambda` and evaluates each on `n_test` held-out
/// samples. Entries are independent and may run in parallel; the output
/// order follows `lambdas`.
pub fn sweep_lambda(
    base: &TrainConfig,
    lambdas: &[f64],
    n_test: usize,
    exec: Exec,
) -> Result<Vec<(TrainReport, TradeoffPoint)>> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty lambda list".into()));
    }
    let results = parallel::map(exec, lambdas, |&lambda| {
        let config = TrainConfig {
            lambda,
            seed: sweep_seed(base.seed, lambda),
            ..base.clone()
        };
        let report = train(&config)?;
        let point = evaluate_with(&report.bundle, n_test, holdout_seed(config.seed), Exec::Sequential)?;
        Ok((report, point))
    });
    results.into_iter().collect()
}
