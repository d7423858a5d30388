//! Test-time metrics, analytic baselines and look-up table extraction.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize, Serializer};

use crate::channel::{sample_batch, Constellation, Modulation};
use crate::diffnet::{log_sum_exp, Matrix};
use crate::error::{Error, Result};
use crate::models::{one_hot_rows, ModelBundle, Scheme};
use crate::parallel::{self, Exec};
use crate::rng;
use crate::stats::{pairwise_sum, q_function};

/// Samples per evaluation shard; each shard draws from its own rng stream.
pub const SHARD_SIZE: usize = 8192;
/// Gauss–Hermite nodes used by [`mi_quadrature`].
pub const QUADRATURE_NODES: usize = 160;
/// Grid points per axis of an extracted look-up table.
pub const LUT_POINTS: usize = 4096;
/// Grid half-margin beyond the outermost symbols, in noise deviations.
pub const LUT_MARGIN_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub scheme: Scheme,
    pub lambda: f64,
    /// Deployment code length of the relay index, bits.
    pub rate_bits: f64,
    /// Demodulator cross-entropy, bits.
    pub distortion_bits: f64,
    pub mi_lb_bits: f64,
    pub ser: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct ShardSums {
    rate: f64,
    distortion: f64,
    errors: u64,
    n: usize,
}

/// Cross-entropy (nats, summed) and error count of row-wise log posteriors.
fn score(log_post: &Matrix, w: &[usize]) -> (f64, u64) {
    let mut nll = Vec::with_capacity(w.len());
    let mut errors = 0;
    for (r, &wi) in w.iter().enumerate() {
        let row = log_post.row(r);
        nll.push(-row[wi]);
        if crate::diffnet::argmax(row) != wi {
            errors += 1;
        }
    }
    (pairwise_sum(&nll), errors)
}

fn eval_shard(bundle: &ModelBundle, n: usize, seed: u64, shard: usize) -> Result<ShardSums> {
    let mut r = rng::stream(seed, shard as u64);
    let batch = sample_batch(&bundle.constellation, &bundle.channel, n, &mut r);
    let u = bundle.encoder.encode_hard_batch(&batch.y_r);
    let lengths = bundle.entropy.code_lengths(&u, &batch.y_d)?;
    let log_post = bundle
        .demod
        .log_posterior_batch(&batch.y_d, &one_hot_rows(bundle.k(), &u))?;
    let (nats, errors) = score(&log_post, &batch.w);
    Ok(ShardSums {
        rate: pairwise_sum(&lengths),
        distortion: nats / std::f64::consts::LN_2,
        errors,
        n,
    })
}

/// Deployment metrics of `bundle` on `n_test` fresh samples: hard relay
/// indices, discrete code lengths and hard symbol decisions.
pub fn evaluate(bundle: &ModelBundle, n_test: usize, seed: u64) -> Result<TradeoffPoint> {
    evaluate_with(bundle, n_test, seed, Exec::default())
}

/// [`evaluate`] with explicit execution mode. The result does not depend on
/// `exec`.
pub fn evaluate_with(bundle: &ModelBundle, n_test: usize, seed: u64, exec: Exec) -> Result<TradeoffPoint> {
    if n_test == 0 {
        return Err(Error::Usage("evaluation needs at least one sample".into()));
    }
    let shards: Vec<(usize, usize)> = (0..n_test.div_ceil(SHARD_SIZE))
        .map(|i| (i, SHARD_SIZE.min(n_test - i * SHARD_SIZE)))
        .collect();
    let sums = parallel::map(exec, &shards, |&(i, n)| eval_shard(bundle, n, seed, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let total = |f: fn(&ShardSums) -> f64| pairwise_sum(&sums.iter().map(f).collect::<Vec<_>>());
    let n = n_test as f64;
    let rate_bits = total(|s| s.rate) / n;
    let distortion_bits = total(|s| s.distortion) / n;
    let errors: u64 = sums.iter().map(|s| s.errors).sum();
    debug_assert_eq!(sums.iter().map(|s| s.n).sum::<usize>(), n_test);
    Ok(TradeoffPoint {
        scheme: bundle.scheme,
        lambda: bundle.lambda,
        rate_bits,
        distortion_bits,
        mi_lb_bits: (bundle.constellation.bits() - distortion_bits).max(0.0),
        ser: errors as f64 / n,
        n_test,
    })
}

/// Compress-and-forward rate with Gaussian input for SNR `gamma` (linear) on
/// both links and relay rate `r` bits.
pub fn c_cf(gamma: f64, r: f64) -> Result<f64> {
    if r.is_nan() || r < 0.0 || r.is_infinite() {
        return Err(Error::Domain(format!("relay rate must be non-negative, got {r}")));
    }
    if gamma.is_nan() || gamma <= 0.0 || gamma.is_infinite() {
        return Err(Error::Domain(format!("SNR must be positive, got {gamma}")));
    }
    let relay_term = if r == 0.0 {
        0.0
    } else {
        let growth = (2.0 * r * std::f64::consts::LN_2).exp_m1();
        gamma / (1.0 + (1.0 + 2.0 * gamma) / (growth * (gamma + 1.0)))
    };
    Ok(0.5 * (1.0 + gamma + relay_term).log2())
}

/// Nodes and weights of `n`-point Gauss–Hermite quadrature for the weight
/// `exp(-x^2)`, nodes in decreasing order.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn hermite_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(QUADRATURE_NODES))
}

/// `I(X; X + N)` in bits for `N ~ N(0, sigma^2)` and the constellation prior.
pub fn mi_awgn(constellation: &Constellation, sigma: f64) -> f64 {
    let (nodes, weights) = hermite_rule();
    let s = &constellation.symbols;
    let p = &constellation.prior;
    let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let two_var = 2.0 * sigma * sigma;
    let mut terms = Vec::with_capacity(s.len());
    let mut scratch = vec![0.0; s.len()];
    for (i, &xi) in s.iter().enumerate() {
        let mut acc = Vec::with_capacity(nodes.len());
        for (&t, &wt) in nodes.iter().zip(weights) {
            let n = std::f64::consts::SQRT_2 * sigma * t;
            for (j, &xj) in s.iter().enumerate() {
                let d = xi - xj + n;
                scratch[j] = log_p[j] - (d * d - n * n) / two_var;
            }
            // log p(y|x_i) - log p(y)
            acc.push(-wt * log_sum_exp(&scratch));
        }
        terms.push(p[i] * pairwise_sum(&acc));
    }
    (pairwise_sum(&terms) / std::f64::consts::PI.sqrt() / std::f64::consts::LN_2).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayMode {
    WithoutRelay,
    PerfectRelay,
}

/// Effective linear SNR of the destination for each relaying baseline when
/// both links have SNR `gamma`.
pub fn effective_gamma(gamma: f64, mode: RelayMode) -> f64 {
    match mode {
        RelayMode::WithoutRelay => gamma,
        // the combined statistic y_r/s_r^2 + y_d/s_d^2 adds the two SNRs
        RelayMode::PerfectRelay => 2.0 * gamma,
    }
}

pub fn mi_quadrature(constellation: &Constellation, gamma: f64, mode: RelayMode) -> f64 {
    let g = effective_gamma(gamma, mode);
    mi_awgn(constellation, (constellation.power / g).sqrt())
}

/// Closed-form symbol error rate of minimum-distance detection at linear SNR
/// `gamma`.
pub fn ser_closed_form(constellation: &Constellation, gamma: f64) -> f64 {
    match constellation.modulation {
        Modulation::Bpsk => q_function(gamma.sqrt()),
        Modulation::Pam4 => 1.5 * q_function((gamma / 5.0).sqrt()),
    }
}

fn sig9<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig9(*v))
}

/// Rounds to 9 significant decimal digits.
pub fn round_sig9(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(serialize_with = "sig9")]
    pub lo: f64,
    #[serde(serialize_with = "sig9")]
    pub hi: f64,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(serialize_with = "sig9")]
    pub lo: f64,
    #[serde(serialize_with = "sig9")]
    pub hi: f64,
    pub points: usize,
}

impl Grid {
    fn around(constellation: &Constellation, sigma: f64, points: usize) -> Grid {
        let max = constellation.symbols.iter().cloned().fold(f64::MIN, f64::max);
        let min = constellation.symbols.iter().cloned().fold(f64::MAX, f64::min);
        Grid {
            lo: min - LUT_MARGIN_SIGMAS * sigma,
            hi: max + LUT_MARGIN_SIGMAS * sigma,
            points,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lo + step * i as f64).collect()
    }
}

/// Merges labels on grid points into maximal intervals; boundaries sit at
/// midpoints between grid points.
fn intervals(grid: &Grid, xs: &[f64], labels: &[usize]) -> Vec<Interval> {
    let mut out: Vec<Interval> = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.label == label => {}
            Some(last) => {
                let edge = 0.5 * (xs[i - 1] + xs[i]);
                last.hi = edge;
                out.push(Interval {
                    lo: edge,
                    hi: grid.hi,
                    label,
                });
            }
            None => out.push(Interval {
                lo: grid.lo,
                hi: grid.hi,
                label,
            }),
        }
    }
    out
}

fn lookup(intervals: &[Interval], y: f64) -> usize {
    let i = intervals.partition_point(|iv| iv.hi < y);
    intervals[i.min(intervals.len() - 1)].label
}

/// Deployed form of a trained bundle: relay thresholds over `y_R` and, per
/// relay index, decision thresholds over `y_D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookUpTable {
    pub scheme: Scheme,
    pub modulation: Modulation,
    pub k: usize,
    pub relay_grid: Grid,
    pub demod_grid: Grid,
    pub relay_intervals: Vec<Interval>,
    /// `demod_intervals[u]` maps `y_D` to a symbol index given relay index `u`.
    pub demod_intervals: Vec<Vec<Interval>>,
}

impl LookUpTable {
    pub fn relay_index(&self, y_r: f64) -> usize {
        lookup(&self.relay_intervals, y_r)
    }

    pub fn decide(&self, u: usize, y_d: f64) -> usize {
        lookup(&self.demod_intervals[u], y_d)
    }

    /// JSON document with every real rounded to 9 significant digits.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Artifact(format!("look-up table: {e}")))
    }
}

pub fn extract_lut(bundle: &ModelBundle, points: usize) -> Result<LookUpTable> {
    if points < 2 {
        return Err(Error::Usage("a look-up table grid needs at least 2 points".into()));
    }
    let c = &bundle.constellation;
    let k = bundle.k();
    let relay_grid = Grid::around(c, bundle.channel.sigma_r, points);
    let demod_grid = Grid::around(c, bundle.channel.sigma_d, points);
    let xr = relay_grid.values();
    let relay_intervals = intervals(&relay_grid, &xr, &bundle.encoder.encode_hard_batch(&xr));
    let xd = demod_grid.values();
    let demod_intervals = (0..k)
        .map(|u| {
            let decisions = bundle.demod.decide_batch(&xd, &one_hot_rows(k, &vec![u; xd.len()]))?;
            Ok(intervals(&demod_grid, &xd, &decisions))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LookUpTable {
        scheme: bundle.scheme,
        modulation: c.modulation,
        k,
        relay_grid,
        demod_grid,
        relay_intervals,
        demod_intervals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningReport {
    /// Number of disjoint relay intervals per index.
    pub interval_counts: Vec<usize>,
    /// Indices occupying two or more disjoint intervals.
    pub binned_indices: Vec<usize>,
    /// Indices the relay never emits on the grid.
    pub dead_indices: Vec<usize>,
    pub binning: bool,
}

pub fn detect_binning(lut: &LookUpTable) -> BinningReport {
    let mut counts = vec![0; lut.k];
    for iv in &lut.relay_intervals {
        counts[iv.label] += 1;
    }
    let binned: Vec<usize> = (0..lut.k).filter(|&u| counts[u] >= 2).collect();
    BinningReport {
        dead_indices: (0..lut.k).filter(|&u| counts[u] == 0).collect(),
        binning: !binned.is_empty(),
        binned_indices: binned,
        interval_counts: counts,
    }
}

/// Fraction of `n` fresh samples on which the table reproduces the model's
/// relay index and symbol decision.
pub fn lut_agreement(bundle: &ModelBundle, lut: &LookUpTable, n: usize, seed: u64) -> Result<f64> {
    let batch = sample_batch(&bundle.constellation, &bundle.channel, n, &mut rng::stream(seed, 0));
    let u = bundle.encoder.encode_hard_batch(&batch.y_r);
    let w = bundle.demod.decide_batch(&batch.y_d, &one_hot_rows(bundle.k(), &u))?;
    let agree = (0..n)
        .filter(|&i| {
            let lu = lut.relay_index(batch.y_r[i]);
            lu == u[i] && lut.decide(lu, batch.y_d[i]) == w[i]
        })
        .count();
    Ok(agree as f64 / n as f64)
}

/// One row of the trade-off CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub scheme: Scheme,
    pub lambda: f64,
    pub seed: u64,
    pub snr_db: f64,
    pub modulation: Modulation,
    pub rate_bits: f64,
    pub mi_lb_bits: f64,
    pub ser: f64,
}

/// CSV text of `rows` sorted by (scheme name, lambda).
pub fn tradeoff_csv(rows: &[TradeoffRow]) -> Result<String> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.scheme.name().cmp(b.scheme.name()).then(a.lambda.total_cmp(&b.lambda)));
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &sorted {
        w.serialize(r).map_err(|e| Error::Artifact(e.to_string()))?;
    }
    if sorted.is_empty() {
        w.write_record(["scheme", "lambda", "seed", "snr_db", "modulation", "rate_bits", "mi_lb_bits", "ser"])
            .map_err(|e| Error::Artifact(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Artifact(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub modulation: Modulation,
    pub snr_db: f64,
    pub mi_without_relay: f64,
    pub mi_perfect_relay: f64,
    pub ser_without_relay: f64,
    pub ser_perfect_relay: f64,
    /// `c_cf` at each requested relay rate.
    pub c_cf: Vec<f64>,
}

pub fn baselines(modulations: &[Modulation], snrs_db: &[f64], rates: &[f64]) -> Result<Vec<BaselineRow>> {
    if modulations.is_empty() || snrs_db.is_empty() || rates.is_empty() {
        return Err(Error::Config("baseline grid must list modulations, SNRs and rates".into()));
    }
    let mut rows = Vec::with_capacity(modulations.len() * snrs_db.len());
    for &m in modulations {
        let c = Constellation::new(m);
        for &snr in snrs_db {
            let g = crate::channel::db_to_linear(snr);
            rows.push(BaselineRow {
                modulation: m,
                snr_db: snr,
                mi_without_relay: mi_quadrature(&c, g, RelayMode::WithoutRelay),
                mi_perfect_relay: mi_quadrature(&c, g, RelayMode::PerfectRelay),
                ser_without_relay: ser_closed_form(&c, effective_gamma(g, RelayMode::WithoutRelay)),
                ser_perfect_relay: ser_closed_form(&c, effective_gamma(g, RelayMode::PerfectRelay)),
                c_cf: rates.iter().map(|&r| c_cf(g, r)).collect::<Result<_>>()?,
            });
        }
    }
    Ok(rows)
}

pub fn baselines_csv(rows: &[BaselineRow], rates: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "modulation",
        "snr_db",
        "mi_without_relay",
        "mi_perfect_relay",
        "ser_without_relay",
        "ser_perfect_relay",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(rates.iter().map(|r| format!("c_cf_r{r}")));
    let err = |e: csv::Error| Error::Artifact(e.to_string());
    w.write_record(&header).map_err(err)?;
    for row in rows {
        let mut rec = vec![
            row.modulation.name().to_string(),
            row.snr_db.to_string(),
            row.mi_without_relay.to_string(),
            row.mi_perfect_relay.to_string(),
            row.ser_without_relay.to_string(),
            row.ser_perfect_relay.to_string(),
        ];
        rec.extend(row.c_cf.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Artifact(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelParams;
    use crate::diffnet::{Dense, Network};

    fn pam4_bundle(k: usize) -> ModelBundle {
        let c = Constellation::new(Modulation::Pam4);
        let ch = ChannelParams::from_snr(&c, 13.0).unwrap();
        ModelBundle::new(Scheme::Marginal, c, ch, k, 1.0, &mut rng::stream(1, 0)).unwrap()
    }

    #[test]
    fn c_cf_limits_and_hand_value() {
        for g in [0.5, 1.0, 2.0, 10.0] {
            assert!((c_cf(g, 0.0).unwrap() - 0.5 * (1.0 + g).log2()).abs() < 1e-12);
            assert!((c_cf(g, 50.0).unwrap() - 0.5 * (1.0 + 2.0 * g).log2()).abs() < 1e-6);
        }
        // gamma = 1, R = 1: 1 + 1 + 1/(1 + 3/6) = 8/3
        assert!((c_cf(1.0, 1.0).unwrap() - 0.707_518_749).abs() < 1e-8);
        assert!(matches!(c_cf(1.0, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn c_cf_monotone_on_grid() {
        let gs: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64 * i as f64).collect();
        let rs: Vec<f64> = (1..=20).map(|i| 0.15 * i as f64).collect();
        for &g in &gs {
            for w in rs.windows(2) {
                assert!(c_cf(g, w[1]).unwrap() > c_cf(g, w[0]).unwrap());
            }
        }
        for &r in &rs {
            for w in gs.windows(2) {
                assert!(c_cf(w[1], r).unwrap() > c_cf(w[0], r).unwrap());
            }
        }
    }

    #[test]
    fn hermite_rule_integrates_moments() {
        let (x, w) = gauss_hermite(QUADRATURE_NODES);
        let sp = std::f64::consts::PI.sqrt();
        let m = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((m(0) - sp).abs() < 1e-12);
        assert!((m(2) - sp / 2.0).abs() < 1e-12);
        assert!((m(4) - 3.0 * sp / 4.0).abs() < 1e-11);
        assert!(m(3).abs() < 1e-12);
        // small rule against tabulated nodes
        let (x2, w2) = gauss_hermite(2);
        assert!((x2[0] - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((w2[0] - sp / 2.0).abs() < 1e-14);
    }

    fn mc_mi(c: &Constellation, sigma: f64, n: usize, seed: u64) -> f64 {
        let mut r = rng::stream(seed, 0);
        let mut vals = Vec::with_capacity(n);
        let two_var = 2.0 * sigma * sigma;
        for _ in 0..n {
            let i = rng::index(&mut r, c.order());
            let y = c.symbols[i] + sigma * rng::standard_normal(&mut r);
            let lik: Vec<f64> = c.symbols.iter().map(|&s| (-(y - s).powi(2) / two_var).exp()).collect();
            let py: f64 = lik.iter().zip(&c.prior).map(|(l, p)| l * p).sum();
            vals.push((lik[i] / py).log2());
        }
        pairwise_sum(&vals) / n as f64
    }

    #[test]
    fn quadrature_matches_monte_carlo_bpsk_unit_snr() {
        let c = Constellation::new(Modulation::Bpsk);
        let q = mi_quadrature(&c, 1.0, RelayMode::WithoutRelay);
        let mc = mc_mi(&c, 1.0, 1_000_000, 3);
        assert!((q - mc).abs() < 2e-3, "{q} vs {mc}");
    }

    #[test]
    fn quadrature_ranges() {
        let bpsk = Constellation::new(Modulation::Bpsk);
        assert!((mi_quadrature(&bpsk, 1e3, RelayMode::WithoutRelay) - 1.0).abs() < 1e-3);
        let pam = Constellation::new(Modulation::Pam4);
        for db in [-10.0, 0.0, 5.0, 13.0, 30.0] {
            let g = crate::channel::db_to_linear(db);
            let a = mi_quadrature(&pam, g, RelayMode::WithoutRelay);
            let b = mi_quadrature(&pam, g, RelayMode::PerfectRelay);
            assert!((0.0..=2.0 + 1e-12).contains(&a));
            assert!(b <= 2.0 + 1e-12);
            if db < 30.0 {
                assert!(b > a);
            }
        }
        // perfect relay is the plain channel at doubled SNR
        let g = 2.0;
        assert_eq!(
            mi_quadrature(&bpsk, g, RelayMode::PerfectRelay),
            mi_quadrature(&bpsk, 2.0 * g, RelayMode::WithoutRelay)
        );
    }

    #[test]
    fn quadrature_matches_adaptive_integration() {
        // references from adaptive Gauss-Kronrod integration of H(Y) - H(Y|X)
        let cases = [
            (Modulation::Bpsk, 3.0, 0.7206609, 0.9123521),
            (Modulation::Bpsk, 13.0, 0.9999829, 1.0),
            (Modulation::Pam4, 3.0, 0.770508, 1.1030241),
            (Modulation::Pam4, 13.0, 1.8685281, 1.9855448),
        ];
        for (m, db, wo, pr) in cases {
            let c = Constellation::new(m);
            let g = crate::channel::db_to_linear(db);
            assert!((mi_quadrature(&c, g, RelayMode::WithoutRelay) - wo).abs() < 1e-6, "{m:?} {db}");
            assert!((mi_quadrature(&c, g, RelayMode::PerfectRelay) - pr).abs() < 1e-6, "{m:?} {db}");
        }
    }

    #[test]
    fn ser_closed_form_values() {
        let bpsk = Constellation::new(Modulation::Bpsk);
        assert!((ser_closed_form(&bpsk, 1.0) - 0.158_655_254).abs() < 1e-8);
        let pam = Constellation::new(Modulation::Pam4);
        assert!((ser_closed_form(&pam, 1e-12) - 0.75).abs() < 1e-6);
    }

    #[test]
    fn uniform_demodulator_is_chance_level() {
        let mut b = pam4_bundle(8);
        b.demod.net = Network::zeros(&[9, 100, 100, 4]).unwrap();
        let p = evaluate(&b, 100_000, 7).unwrap();
        assert!(p.mi_lb_bits < 1e-12);
        assert!((p.distortion_bits - 2.0).abs() < 1e-9);
        // ties go to index 0, so every sample of symbols 1..3 is an error
        assert!((p.ser - 0.75).abs() < 0.01);
    }

    #[test]
    fn perfect_posterior_scores_zero() {
        let w = vec![0, 3, 2, 1, 1];
        let mut lp = Matrix::zeros(w.len(), 4);
        for (r, &wi) in w.iter().enumerate() {
            for c in 0..4 {
                lp.row_mut(r)[c] = if c == wi { 0.0 } else { f64::NEG_INFINITY };
            }
        }
        let (nats, errors) = score(&lp, &w);
        assert_eq!(nats, 0.0);
        assert_eq!(errors, 0);
    }

    #[test]
    fn evaluation_independent_of_execution() {
        let b = pam4_bundle(8);
        let a = evaluate_with(&b, 30_000, 2, Exec::Sequential).unwrap();
        let p = evaluate_with(&b, 30_000, 2, Exec::Parallel(3)).unwrap();
        assert_eq!(a, p);
        assert!(a.rate_bits <= 3.0 + 1e-9);
        assert!(evaluate(&b, 0, 1).is_err());
    }

    /// Encoder with K = 2 emitting index 1 on the middle third of the relay
    /// grid and index 0 elsewhere.
    fn three_band_bundle() -> ModelBundle {
        let mut b = pam4_bundle(2);
        let grid = Grid::around(&b.constellation, b.channel.sigma_r, 16);
        let third = (grid.hi - grid.lo) / 3.0;
        let mid = 0.5 * (grid.lo + grid.hi);
        let scale = b.encoder.input_scale;
        // hidden: leaky(s(y - mid)), leaky(s(mid - y)); their sum is 0.99 s|y - mid|
        let l1 = Dense {
            weight: Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap(),
            bias: Matrix::from_vec(1, 2, vec![-mid * scale, mid * scale]).unwrap(),
        };
        let half = 0.5 * third * scale * 0.99;
        let l2 = Dense {
            weight: Matrix::from_vec(2, 2, vec![0.0, -1.0, 0.0, -1.0]).unwrap(),
            bias: Matrix::from_vec(1, 2, vec![0.0, half]).unwrap(),
        };
        b.encoder.net = Network::from_layers(vec![l1, l2], 0.01).unwrap();
        b
    }

    #[test]
    fn fixture_binning_detected() {
        let b = three_band_bundle();
        let lut = extract_lut(&b, LUT_POINTS).unwrap();
        let labels: Vec<usize> = lut.relay_intervals.iter().map(|i| i.label).collect();
        assert_eq!(labels, vec![0, 1, 0]);
        let report = detect_binning(&lut);
        assert!(report.binning);
        assert_eq!(report.interval_counts, vec![2, 1]);
        assert_eq!(report.binned_indices, vec![0]);
        // partition covers the grid, adjacent labels differ
        assert_eq!(lut.relay_intervals[0].lo, lut.relay_grid.lo);
        assert_eq!(lut.relay_intervals.last().unwrap().hi, lut.relay_grid.hi);
        for w in lut.relay_intervals.windows(2) {
            assert_eq!(w[0].hi, w[1].lo);
            assert_ne!(w[0].label, w[1].label);
        }
    }

    #[test]
    fn constant_encoder_single_interval() {
        let mut b = pam4_bundle(1);
        b.encoder.net = Network::zeros(&[1, 4, 1]).unwrap();
        let lut = extract_lut(&b, 512).unwrap();
        assert_eq!(lut.relay_intervals.len(), 1);
        let report = detect_binning(&lut);
        assert!(!report.binning);
        assert!(report.dead_indices.is_empty());
    }

    #[test]
    fn monotone_quantizer_has_no_binning() {
        let mut b = pam4_bundle(3);
        // logits (0, y, 2y - 1): index increases with y
        let l = Dense {
            weight: Matrix::from_vec(1, 3, vec![0.0, 1.0, 2.0]).unwrap(),
            bias: Matrix::from_vec(1, 3, vec![0.0, 0.0, -1.0]).unwrap(),
        };
        b.encoder.net = Network::from_layers(vec![l], 0.01).unwrap();
        let report = detect_binning(&extract_lut(&b, 1024).unwrap());
        assert!(!report.binning);
        assert_eq!(report.interval_counts, vec![1, 1, 1]);
    }

    #[test]
    fn lut_faithful_and_json_round_trip() {
        let b = pam4_bundle(8);
        let lut = extract_lut(&b, LUT_POINTS).unwrap();
        assert!(lut_agreement(&b, &lut, 100_000, 4).unwrap() >= 0.999);
        let text = lut.to_json();
        let back = LookUpTable::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert!((back.relay_grid.lo - lut.relay_grid.lo).abs() <= 1e-8 * lut.relay_grid.lo.abs());
        assert!(LookUpTable::from_json("{\"k\": 1}").is_err());
    }

    #[test]
    fn sig9_rounding() {
        assert_eq!(round_sig9(0.123456789012), 0.123456789);
        assert_eq!(round_sig9(-98765.43210987), -98765.4321);
        assert_eq!(serde_json::to_string(&round_sig9(1.0 / 3.0)).unwrap(), "0.333333333");
    }

    #[test]
    fn csv_layouts() {
        let row = |scheme, lambda| TradeoffRow {
            scheme,
            lambda,
            seed: 1,
            snr_db: 13.0,
            modulation: Modulation::Pam4,
            rate_bits: 1.25,
            mi_lb_bits: 1.5,
            ser: 0.01,
        };
        let text = tradeoff_csv(&[row(Scheme::P2p, 0.1), row(Scheme::Marginal, 3.0), row(Scheme::Marginal, 0.5)]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "scheme,lambda,seed,snr_db,modulation,rate_bits,mi_lb_bits,ser");
        assert!(lines[1].starts_with("marginal,0.5,"));
        assert!(lines[3].starts_with("p2p,0.1,1,13.0,pam4,"));

        let rates = [0.0, 1.0];
        let rows = baselines(&[Modulation::Bpsk, Modulation::Pam4], &[3.0, 13.0], &rates).unwrap();
        assert_eq!(rows.len(), 4);
        let g = 10f64.powf(0.3);
        assert!((rows[0].c_cf[0] - 0.5 * (1.0 + g).log2()).abs() < 1e-12);
        let csv = baselines_csv(&rows, &rates).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().next().unwrap().ends_with("c_cf_r0,c_cf_r1"));
        assert!(baselines(&[], &[3.0], &rates).is_err());
    }
}
