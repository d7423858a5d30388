//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ncf_core::artifact::{history_csv, RunArtifact};
use ncf_core::channel::{db_to_linear, Constellation, Modulation};
use ncf_core::diffnet::softmax;
use ncf_core::evaluation::{
    c_cf, detect_binning, evaluate, extract_lut, mi_quadrature, ser_closed_form, RelayMode, TradeoffPoint, LUT_POINTS,
};
use ncf_core::models::Scheme;
use ncf_core::parallel::Exec;
use ncf_core::relaxation::{concrete_from_noise, gumbel_max_with_noise, gumbel_noise};
use ncf_core::rng;
use ncf_core::selftest::{gradient_check, Faults, GradientTally};
use ncf_core::stats::chi_square;
use ncf_core::training::{holdout_seed, sweep_lambda, train, RateEstimator, TrainConfig};

const N_TEST: usize = 100_000;
/// Spans the active range of all three schemes at 4-PAM / 13 dB.
const TRADEOFF_LAMBDAS: [f64; 8] = [0.3, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0];
const SANDWICH_LAMBDAS: [f64; 7] = [0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0];

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn desk(scheme: Scheme, modulation: Modulation, snr_db: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        scheme,
        modulation,
        snr_db,
        epochs: 150,
        steps_per_epoch: 32,
        batch_size: 256,
        seed,
        ..TrainConfig::default()
    }
}

fn ccf_limits() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for g in [0.5, 1.0, 2.0, 10.0] {
        worst = worst.max((c_cf(g, 0.0).unwrap() - 0.5 * (1.0 + g).log2()).abs());
        worst = worst.max((c_cf(g, 50.0).unwrap() - 0.5 * (1.0 + 2.0 * g).log2()).abs());
    }
    let mid = c_cf(1.0, 1.0).unwrap();
    let elapsed = start.elapsed();
    let ok = worst <= 1e-6 && (mid - 0.70752).abs() <= 1e-5 && elapsed < Duration::from_secs(1);
    (ok, format!("max limit error {worst:.2e}, c_cf(1,1)={mid:.6}, {elapsed:.2?}"))
}

/// Sample estimate of I(X; Y) from the exact posterior, with one or two
/// independent observations of the symbol.
fn mc_mi(c: &Constellation, sigma: f64, observations: usize, n: usize, seed: u64) -> f64 {
    let mut r = rng::stream(seed, 0);
    let m = c.order();
    let mut acc = 0.0;
    let mut log_post = vec![0.0; m];
    for _ in 0..n {
        let i = rng::index(&mut r, m);
        log_post.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..observations {
            let y = c.symbols[i] + sigma * rng::standard_normal(&mut r);
            for (lp, s) in log_post.iter_mut().zip(&c.symbols) {
                *lp -= (y - s) * (y - s) / (2.0 * sigma * sigma);
            }
        }
        let top = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = log_post.iter().map(|v| (v - top).exp()).sum();
        acc += (log_post[i] - top - norm.ln()) / std::f64::consts::LN_2;
    }
    (m as f64).log2() + acc / n as f64
}

fn quadrature_vs_mc() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut seed = 0;
    for modulation in [Modulation::Bpsk, Modulation::Pam4] {
        let c = Constellation::new(modulation);
        for db in [3.0, 13.0] {
            let gamma = db_to_linear(db);
            let sigma = (c.power / gamma).sqrt();
            for (mode, obs) in [(RelayMode::WithoutRelay, 1), (RelayMode::PerfectRelay, 2)] {
                seed += 1;
                let diff = (mi_quadrature(&c, gamma, mode) - mc_mi(&c, sigma, obs, 1_000_000, seed)).abs();
                worst = worst.max(diff);
            }
        }
    }
    let elapsed = start.elapsed();
    (worst <= 2e-3 && elapsed < Duration::from_secs(30), format!("max |quadrature - MC| {worst:.2e} bits, {elapsed:.2?}"))
}

fn ser_vs_simulation() -> Outcome {
    let start = Instant::now();
    let n = 10_000_000u64;
    let mut worst: f64 = 0.0;
    let mut seed = 100;
    for modulation in [Modulation::Bpsk, Modulation::Pam4] {
        let c = Constellation::new(modulation);
        for db in [0.0, 3.0, 13.0] {
            seed += 1;
            let gamma = db_to_linear(db);
            let sigma = (c.power / gamma).sqrt();
            let mut r = rng::stream(seed, 0);
            let mut errors = 0u64;
            for _ in 0..n {
                let i = rng::index(&mut r, c.order());
                let y = c.symbols[i] + sigma * rng::standard_normal(&mut r);
                let nearest = (0..c.order())
                    .min_by(|&a, &b| (y - c.symbols[a]).abs().total_cmp(&(y - c.symbols[b]).abs()))
                    .unwrap();
                errors += (nearest != i) as u64;
            }
            let p = ser_closed_form(&c, gamma);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            worst = worst.max((errors as f64 / n as f64 - p).abs() / se);
        }
    }
    let elapsed = start.elapsed();
    (worst <= 3.0 && elapsed < Duration::from_secs(60), format!("max deviation {worst:.2} standard errors, {elapsed:.2?}"))
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut total = GradientTally::default();
    let mut notes = Vec::new();
    for scheme in Scheme::ALL {
        for estimator in [RateEstimator::Concrete, RateEstimator::RelaxedCrossEntropy] {
            let t = gradient_check(scheme, estimator, 20, Faults::default(), 31);
            notes.push(format!("{}/{:?} {}/{}", scheme.name(), estimator, t.failed, t.checked));
            total.add(t);
        }
    }
    let elapsed = start.elapsed();
    (
        total.passes() && elapsed < Duration::from_secs(30),
        format!("{} failed of {} checked ({} non-smooth skipped), {elapsed:.2?}; {}", total.failed, total.checked, total.skipped, notes.join(", ")),
    )
}

fn sampler() -> Outcome {
    let mut r = rng::stream(41, 0);
    let mut notes = Vec::new();
    let mut ok = true;
    for k in [4usize, 32] {
        let logits: Vec<f64> = (0..k).map(|i| 1.5 * (i as f64 * 0.61).cos()).collect();
        let probs = softmax(&logits);
        let mut counts = vec![0u64; k];
        for _ in 0..1_000_000 {
            counts[gumbel_max_with_noise(&logits, &gumbel_noise(k, &mut r))] += 1;
        }
        let (stat, p) = chi_square(&counts, &probs);
        ok &= p >= 1e-4;
        notes.push(format!("K={k} chi2={stat:.1} p={p:.3}"));
    }
    let mut agree = 0;
    for _ in 0..10_000 {
        let logits: Vec<f64> = (0..32).map(|_| 2.0 * rng::standard_normal(&mut r)).collect();
        let g = gumbel_noise(32, &mut r);
        let t = 0.1 + rng::uniform_open(&mut r);
        agree += (concrete_from_noise(&logits, &g, t).unwrap().argmax() == gumbel_max_with_noise(&logits, &g)) as usize;
    }
    ok &= agree == 10_000;
    notes.push(format!("shared-noise agreement {agree}/10000"));
    (ok, notes.join(", "))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Every `worse` point with a `better` point within the rate window must be
/// dominated, up to the slack, by some `better` point at no more than its
/// rate plus the window.
fn ordering(better: &[(f64, f64)], worse: &[(f64, f64)], window: f64, slack: f64) -> (usize, Vec<String>) {
    let mut matched = 0;
    let mut violations = Vec::new();
    for &(rb, mb) in worse {
        if !better.iter().any(|&(ra, _)| (ra - rb).abs() <= window) {
            continue;
        }
        matched += 1;
        let best = better
            .iter()
            .filter(|&&(ra, _)| ra <= rb + window)
            .map(|&(_, ma)| ma)
            .fold(f64::NEG_INFINITY, f64::max);
        if best < mb - slack {
            violations.push(format!("rate {rb:.3} mi {mb:.4} vs best {best:.4}"));
        }
    }
    (matched, violations)
}

fn tradeoff_reproduction() -> Outcome {
    let start = Instant::now();
    let c = Constellation::new(Modulation::Pam4);
    let gamma = db_to_linear(13.0);
    let wo_mi = mi_quadrature(&c, gamma, RelayMode::WithoutRelay);
    let wo_ser = ser_closed_form(&c, gamma);
    let mut runs: BTreeMap<&str, Vec<Vec<TradeoffPoint>>> = BTreeMap::new();
    for scheme in Scheme::ALL {
        for seed in 1..=3 {
            let base = desk(scheme, Modulation::Pam4, 13.0, seed);
            let points = sweep_lambda(&base, &TRADEOFF_LAMBDAS, N_TEST, Exec::default()).expect("sweep trains");
            runs.entry(scheme.name()).or_default().push(points.into_iter().map(|(_, p)| p).collect());
        }
    }
    let mut notes = Vec::new();
    let mut ok = true;

    let mut weak = Vec::new();
    for p in runs["marginal"].iter().flatten().filter(|p| p.rate_bits >= 0.5) {
        if !(p.ser < wo_ser && p.mi_lb_bits >= wo_mi + 0.03) {
            weak.push(format!("lambda {} rate {:.3} mi {:.4} ser {:.4}", p.lambda, p.rate_bits, p.mi_lb_bits, p.ser));
        }
    }
    let eligible = runs["marginal"].iter().flatten().filter(|p| p.rate_bits >= 0.5).count();
    ok &= weak.is_empty() && eligible > 0;
    notes.push(format!("(a) {}/{eligible} marginal runs at rate >= 0.5 beat without-relay", eligible - weak.len()));
    if !weak.is_empty() {
        notes.push(format!("(a) short: {}", weak.join("; ")));
    }

    let medians: BTreeMap<&str, Vec<(f64, f64)>> = runs
        .iter()
        .map(|(&name, seeds)| {
            let pts = (0..TRADEOFF_LAMBDAS.len())
                .map(|j| (median(seeds.iter().map(|s| s[j].rate_bits).collect()), median(seeds.iter().map(|s| s[j].mi_lb_bits).collect())))
                .collect();
            (name, pts)
        })
        .collect();
    for name in ["conditional", "marginal", "p2p"] {
        let row: Vec<String> = medians[name].iter().map(|(r, m)| format!("{r:.2}:{m:.4}")).collect();
        println!("    {name:<12} median rate:mi {}", row.join(" "));
    }
    for (better, worse) in [("conditional", "marginal"), ("marginal", "p2p")] {
        let (matched, violations) = ordering(&medians[better], &medians[worse], 0.15, 0.02);
        ok &= matched > 0 && violations.is_empty();
        notes.push(format!("(b) {better} >= {worse}: {matched} matched, {} violations", violations.len()));
        if !violations.is_empty() {
            notes.push(format!("(b) {}", violations.join("; ")));
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed <= Duration::from_secs(30 * 60);
    notes.push(format!("{elapsed:.0?}"));
    (ok, notes.join(", "))
}

fn binning_reproduction() -> Outcome {
    let mut ok = false;
    let mut notes = Vec::new();
    for seed in 101..=105 {
        let (mut lo, mut hi, mut lambda) = (1.0f64, 1000.0f64, 10.0f64);
        let mut found = None;
        for _ in 0..6 {
            let config = TrainConfig { lambda, ..desk(Scheme::Marginal, Modulation::Pam4, 13.0, seed) };
            let report = train(&config).expect("training converges");
            let point = evaluate(&report.bundle, N_TEST, holdout_seed(seed)).unwrap();
            if (0.8..=1.2).contains(&point.rate_bits) {
                found = Some((report, point));
                break;
            }
            if point.rate_bits > 1.2 {
                hi = lambda;
            } else {
                lo = lambda;
            }
            lambda = (lo * hi).sqrt();
        }
        match found {
            Some((report, point)) => {
                let lut = extract_lut(&report.bundle, LUT_POINTS).unwrap();
                let b = detect_binning(&lut);
                ok |= b.binning;
                notes.push(format!("seed {seed}: lambda {lambda:.2} rate {:.3} binning {}", point.rate_bits, b.binning));
            }
            None => notes.push(format!("seed {seed}: no lambda reached rate 1.0 +/- 0.2")),
        }
    }
    (ok, notes.join(", "))
}

fn sandwich() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for modulation in [Modulation::Bpsk, Modulation::Pam4] {
        let c = Constellation::new(modulation);
        let gamma = db_to_linear(3.0);
        let pr = mi_quadrature(&c, gamma, RelayMode::PerfectRelay);
        let base = desk(Scheme::Marginal, modulation, 3.0, 7);
        let mut points: Vec<(f64, f64)> = sweep_lambda(&base, &SANDWICH_LAMBDAS, N_TEST, Exec::default())
            .expect("sweep trains")
            .into_iter()
            .map(|(_, p)| (p.rate_bits, p.mi_lb_bits))
            .collect();
        let mut bad = 0;
        for &(r, m) in &points {
            bad += (m > c_cf(gamma, r).unwrap() + 0.02 || m > pr + 0.02) as usize;
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best = f64::NEG_INFINITY;
        let mut dips = 0;
        for &(_, m) in &points {
            dips += (m < best - 0.02) as usize;
            best = best.max(m);
        }
        ok &= bad == 0 && dips == 0;
        let row: Vec<String> = points.iter().map(|(r, m)| format!("{r:.2}:{m:.4}")).collect();
        println!("    {:<5} rate:mi {}", modulation.name(), row.join(" "));
        notes.push(format!("{}: {bad} above bounds, {dips} frontier dips", modulation.name()));
    }
    (ok, notes.join(", "))
}

fn determinism() -> Outcome {
    let config = TrainConfig {
        epochs: 20,
        steps_per_epoch: 8,
        batch_size: 128,
        seed: 3,
        lambda: 10.0,
        ..TrainConfig::default()
    };
    let a = train(&config).unwrap();
    let b = train(&config).unwrap();
    let same_csv = history_csv(&a.history).unwrap().into_bytes() == history_csv(&b.history).unwrap().into_bytes();
    let mut same_eval = true;
    for scheme in Scheme::ALL {
        let report = train(&TrainConfig { scheme, finetune_epochs: 5, ..config.clone() }).unwrap();
        let json = RunArtifact::new(&report, None).to_json();
        let reloaded = RunArtifact::from_json(&json).unwrap().bundle().unwrap();
        same_eval &= evaluate(&reloaded, 20_000, 9).unwrap() == evaluate(&report.bundle, 20_000, 9).unwrap();
    }
    (same_csv && same_eval, format!("metrics CSV identical: {same_csv}, reload-evaluate identical: {same_eval}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 c_cf limits", ccf_limits),
        ("2 quadrature vs Monte Carlo", quadrature_vs_mc),
        ("3 closed-form SER vs simulation", ser_vs_simulation),
        ("4 gradient integrity", gradient_integrity),
        ("5 sampler correctness", sampler),
        ("6 trade-off ordering at 4-PAM 13 dB", tradeoff_reproduction),
        ("7 binning at rate 1 bit", binning_reproduction),
        ("8 bound sandwich at 3 dB", sandwich),
        ("9 determinism and persistence", determinism),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let (ok, detail) = check();
        failures += !ok as usize;
        println!("{} criterion {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{} of 9 criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
