//! Fast invariant suite behind `ncf selftest`.

use crate::channel::{sample_batch, ChannelParams, Constellation, Modulation};
use crate::diffnet::{softmax, Matrix};
use crate::evaluation::{c_cf, mi_quadrature, RelayMode};
use crate::models::{ModelBundle, Scheme, DEFAULT_K};
use crate::relaxation::{concrete_from_noise, gumbel_max_with_noise, gumbel_noise};
use crate::rng;
use crate::stats::chi_square;
use crate::training::{loss_gradients, loss_value, RateEstimator};

/// Deliberate defects for negative-control runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Scale every analytic gradient by 1.01 before checking it.
    pub corrupt_gradients: bool,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: std::result::Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult { name, passed: true, detail },
        Err(detail) => CheckResult { name, passed: false, detail },
    }
}

/// Finite-difference check of the training loss on production shapes.
/// Tally of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GradientTally {
    pub checked: usize,
    pub failed: usize,
    /// Entries whose loss is not smooth within the stencil width.
    pub skipped: usize,
}

impl GradientTally {
    pub fn add(&mut self, other: GradientTally) {
        self.checked += other.checked;
        self.failed += other.failed;
        self.skipped += other.skipped;
    }

    /// At most 1% of checked entries disagree.
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.failed * 100 <= self.checked
    }
}

const FD_STEP: f64 = 1e-4;
const FD_TOLERANCE: f64 = 1e-4;

pub fn gradient_check(scheme: Scheme, estimator: RateEstimator, samples_per_slot: usize, faults: Faults, seed: u64) -> GradientTally {
    let c = Constellation::new(Modulation::Pam4);
    let ch = ChannelParams::from_snr(&c, 13.0).expect("finite snr");
    let bundle = ModelBundle::new(scheme, c.clone(), ch, DEFAULT_K, 1.0, &mut rng::stream(seed, 0)).expect("valid shapes");
    let batch = sample_batch(&c, &ch, 16, &mut rng::stream(seed, 1));
    let mut noise = Matrix::zeros(batch.len(), DEFAULT_K);
    rng::fill_gumbel(&mut rng::stream(seed, 2), &mut noise.data);
    let (lambda, t) = (2.0, 0.5);
    let (_, grads) = loss_gradients(&bundle, &batch, &noise, lambda, t, estimator).expect("loss graph builds");
    let mut r = rng::stream(seed, 3);
    let mut tally = GradientTally::default();
    for (slot, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        for _ in 0..samples_per_slot {
            let j = rng::index(&mut r, g.len());
            let analytic = if faults.corrupt_gradients { g.data[j] * 1.01 } else { g.data[j] };
            let at = |offset: f64| {
                let mut moved = bundle.clone();
                moved.params_mut()[slot].data[j] += offset;
                loss_value(&moved, &batch, &noise, lambda, t, estimator).expect("loss evaluates")
            };
            let h = FD_STEP;
            let d1 = (at(h) - at(-h)) / (2.0 * h);
            let d2 = (at(2.0 * h) - at(-2.0 * h)) / (4.0 * h);
            // five-point stencil
            let fd = (4.0 * d1 - d2) / 3.0;
            // below 1e-5 the stencil's roundoff dominates
            let scale = fd.abs().max(analytic.abs()).max(1e-5);
            // a kink inside [-2h, 2h] makes the two central differences disagree
            if (d1 - d2).abs() / scale > FD_TOLERANCE {
                tally.skipped += 1;
                continue;
            }
            tally.checked += 1;
            if (fd - analytic).abs() / scale > FD_TOLERANCE {
                tally.failed += 1;
            }
        }
    }
    tally
}

fn gradients(faults: Faults) -> std::result::Result<String, String> {
    let mut notes = Vec::new();
    let mut total = GradientTally::default();
    for scheme in Scheme::ALL {
        let t = gradient_check(scheme, RateEstimator::RelaxedCrossEntropy, 20, faults, 17);
        notes.push(format!("{scheme} {}/{} ({} non-smooth)", t.failed, t.checked, t.skipped));
        total.add(t);
    }
    if !total.passes() {
        return Err(format!("finite-difference mismatch: {}", notes.join(", ")));
    }
    Ok(notes.join(", "))
}

fn sampler() -> std::result::Result<String, String> {
    let mut r = rng::stream(23, 0);
    for k in [4usize, 32] {
        let logits: Vec<f64> = (0..k).map(|i| (i as f64 * 0.37).sin()).collect();
        let probs = softmax(&logits);
        let mut counts = vec![0u64; k];
        for _ in 0..200_000 {
            counts[gumbel_max_with_noise(&logits, &gumbel_noise(k, &mut r))] += 1;
        }
        let (_, p) = chi_square(&counts, &probs);
        if p < 1e-4 {
            return Err(format!("gumbel-max frequencies off for K={k} (p={p:.2e})"));
        }
    }
    for _ in 0..2000 {
        let logits: Vec<f64> = (0..8).map(|_| 3.0 * rng::standard_normal(&mut r)).collect();
        let g = gumbel_noise(8, &mut r);
        let t = 0.05 + 2.0 * rng::uniform_open(&mut r);
        let x = concrete_from_noise(&logits, &g, t).map_err(|e| e.to_string())?;
        if x.argmax() != gumbel_max_with_noise(&logits, &g) {
            return Err("relaxed sample disagrees with gumbel-max under shared noise".into());
        }
    }
    Ok("chi-square and shared-noise rounding".into())
}

fn quadrature() -> std::result::Result<String, String> {
    let c = Constellation::new(Modulation::Bpsk);
    let n = 400_000;
    let mut r = rng::stream(29, 0);
    let sigma = 1.0;
    let mut acc = 0.0;
    for _ in 0..n {
        let i = rng::index(&mut r, 2);
        let y = c.symbols[i] + sigma * rng::standard_normal(&mut r);
        let l: Vec<f64> = c.symbols.iter().map(|s| (-(y - s) * (y - s) / 2.0).exp()).collect();
        acc += (2.0 * l[i] / (l[0] + l[1])).log2();
    }
    let mc = acc / n as f64;
    let q = mi_quadrature(&c, 1.0, RelayMode::WithoutRelay);
    if (q - mc).abs() > 4e-3 {
        return Err(format!("quadrature {q:.5} vs monte carlo {mc:.5}"));
    }
    Ok(format!("quadrature {q:.5}, monte carlo {mc:.5}"))
}

fn cf_limits() -> std::result::Result<String, String> {
    for g in [0.5, 1.0, 2.0, 10.0] {
        let lo = c_cf(g, 0.0).map_err(|e| e.to_string())?;
        let hi = c_cf(g, 50.0).map_err(|e| e.to_string())?;
        if (lo - 0.5 * (1.0 + g).log2()).abs() > 1e-6 || (hi - 0.5 * (1.0 + 2.0 * g).log2()).abs() > 1e-6 {
            return Err(format!("limits wrong at gamma {g}"));
        }
    }
    let v = c_cf(1.0, 1.0).map_err(|e| e.to_string())?;
    if (v - 0.70752).abs() > 1e-5 {
        return Err(format!("c_cf(1, 1) = {v}"));
    }
    Ok("R = 0, R = 50 and (1, 1)".into())
}

pub fn run(faults: Faults) -> Vec<CheckResult> {
    vec![
        check("gradients", gradients(faults)),
        check("sampler", sampler()),
        check("quadrature", quadrature()),
        check("c_cf", cf_limits()),
    ]
}
