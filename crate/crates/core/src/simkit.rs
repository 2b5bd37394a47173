//! Synthetic traces and a Monte Carlo estimate of the queue tail.
//!
//! Randomness comes from ChaCha8 seeded through SplitMix64, so a given seed
//! yields the same streams on every platform. Replication `k` of a run with
//! seed `s` uses `splitmix64(s ^ splitmix64(k + 1))`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ldcore::{mean_arrival_rate, ArrivalModel, ServiceModel};
use crate::markov::{stationary_distribution, StateTrace, TransitionMatrix};

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn replication_seed(seed: u64, replication: u64) -> u64 {
    splitmix64(seed ^ splitmix64(replication.wrapping_add(1)))
}

/// Samples the next state from the current one.
struct ChainSampler {
    initial: WeightedIndex<f64>,
    rows: Vec<WeightedIndex<f64>>,
}

impl ChainSampler {
    fn new(pm: &TransitionMatrix) -> Result<Self> {
        if !pm.is_irreducible() {
            return Err(Error::Structural("cannot sample a reducible chain".into()));
        }
        let p1 = stationary_distribution(pm)?;
        let initial = WeightedIndex::new(p1.iter().copied())
            .map_err(|e| Error::Input(format!("stationary distribution: {e}")))?;
        let rows = pm
            .to_rows()
            .into_iter()
            .map(WeightedIndex::new)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Input(format!("transition row: {e}")))?;
        Ok(Self { initial, rows })
    }

    fn start(&self, rng: &mut ChaCha8Rng) -> usize {
        self.initial.sample(rng)
    }

    fn step(&self, from: usize, rng: &mut ChaCha8Rng) -> usize {
        self.rows[from].sample(rng)
    }
}

/// Draws `sigma` from the stationary law and `n` further states.
pub fn generate_trace(pm: &TransitionMatrix, n: usize, seed: u64) -> Result<StateTrace> {
    if n == 0 {
        return Err(Error::Input("trace length must be at least 1".into()));
    }
    let sampler = ChainSampler::new(pm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let sigma = sampler.start(&mut rng);
    let mut states = Vec::with_capacity(n);
    let mut y = sigma;
    for _ in 0..n {
        y = sampler.step(y, &mut rng);
        states.push(y);
    }
    StateTrace::new(sigma, states)
}

#[derive(Debug, Clone)]
pub struct QueueSimConfig {
    pub pm: TransitionMatrix,
    pub arr: ArrivalModel,
    pub svc: ServiceModel,
    /// Slots per replication, warmup included.
    pub horizon: u64,
    /// Slots discarded at the start of each replication; `None` means 1% of the horizon.
    pub warmup: Option<u64>,
    /// Strictly increasing positive buffer levels; chosen from a pilot run when `None`.
    pub thresholds: Option<Vec<f64>>,
    pub seed: u64,
    pub replications: usize,
    /// Batches per replication for the batch-means standard error.
    pub batches: usize,
}

impl QueueSimConfig {
    pub fn new(pm: TransitionMatrix, arr: ArrivalModel, svc: ServiceModel, horizon: u64, seed: u64) -> Self {
        Self {
            pm,
            arr,
            svc,
            horizon,
            warmup: None,
            thresholds: None,
            seed,
            replications: 1,
            batches: 20,
        }
    }

    pub fn warmup_slots(&self) -> u64 {
        self.warmup.unwrap_or(self.horizon / 100)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TailPoint {
    pub threshold: f64,
    pub count: u64,
    pub total: u64,
    pub freq: f64,
    pub log_freq: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailEstimate {
    pub points: Vec<TailPoint>,
    pub warmup: u64,
    pub mean_arrival: f64,
}

impl TailEstimate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("U,count,total,freq,log_freq,stderr\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.threshold, p.count, p.total, p.freq, p.log_freq, p.stderr
            ));
        }
        out
    }

    /// Least-squares slope of `log_freq` against `U` over points with
    /// `lo <= U <= hi` and a positive count.
    pub fn log_slope(&self, lo: f64, hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|p| p.count > 0 && p.threshold >= lo && p.threshold <= hi)
            .map(|p| (p.threshold, p.log_freq))
            .collect();
        least_squares_slope(&pts)
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

struct Replication {
    /// `counts[b][t]`: slots of batch `b` with `L >= thresholds[t]`.
    counts: Vec<Vec<u64>>,
    batch_len: Vec<u64>,
}

#[allow(clippy::too_many_arguments)]
fn run_replication(
    sampler: &ChainSampler,
    rates: &[f64],
    c: f64,
    thresholds: &[f64],
    slots: u64,
    warmup: u64,
    batches: usize,
    seed: u64,
) -> Replication {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let measured = slots - warmup;
    let mut counts = vec![vec![0u64; thresholds.len()]; batches];
    let mut batch_len = vec![0u64; batches];
    let mut y = sampler.start(&mut rng);
    let mut l = 0.0f64;
    for k in 0..slots {
        if k >= warmup {
            let b = (((k - warmup) as u128 * batches as u128) / measured as u128) as usize;
            batch_len[b] += 1;
            // thresholds are increasing, so the hits form a prefix
            let hits = thresholds.partition_point(|&u| l >= u);
            for t in &mut counts[b][..hits] {
                *t += 1;
            }
        }
        l = (l + rates[y] - c).max(0.0);
        y = sampler.step(y, &mut rng);
    }
    Replication { counts, batch_len }
}

fn auto_thresholds(sampler: &ChainSampler, rates: &[f64], c: f64, slots: u64, warmup: u64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = sampler.start(&mut rng);
    let mut l = 0.0f64;
    let mut seen = Vec::with_capacity((slots - warmup) as usize);
    for k in 0..slots {
        if k >= warmup {
            seen.push(l);
        }
        l = (l + rates[y] - c).max(0.0);
        y = sampler.step(y, &mut rng);
    }
    seen.sort_by(|a, b| a.total_cmp(b));
    let n = seen.len();
    // tail fractions 1e-1 down to roughly 100 samples
    let floor = (100.0 / n as f64).max(1e-6);
    let k = 10;
    let mut out: Vec<f64> = Vec::new();
    for t in 0..k {
        let frac = 0.1 * (floor / 0.1).powf(t as f64 / (k - 1) as f64);
        let idx = ((1.0 - frac) * n as f64).floor() as usize;
        let u = seen[idx.min(n - 1)];
        if u > 0.0 && out.last().is_none_or(|&prev| u > prev) {
            out.push(u);
        }
    }
    out
}

/// Fraction of post-warmup slots with `L_k >= U` for each threshold, where
/// `L_{k+1} = max(0, L_k + r_{Y_k} - c)` and `L_0 = 0`.
pub fn simulate_queue(cfg: &QueueSimConfig) -> Result<TailEstimate> {
    let rates = cfg
        .arr
        .deterministic_rates()
        .ok_or_else(|| Error::Unsupported("queue simulation needs deterministic per-state rates".into()))?;
    if rates.len() != cfg.pm.states() {
        return Err(Error::Input(
            "rates and transition matrix disagree on the number of states".into(),
        ));
    }
    let c = cfg.svc.mean();
    let warmup = cfg.warmup_slots();
    if cfg.horizon <= warmup {
        return Err(Error::Input("horizon must exceed warmup".into()));
    }
    if cfg.replications == 0 || cfg.batches == 0 || cfg.batches as u64 > cfg.horizon - warmup {
        return Err(Error::Input(
            "replications and batches must be positive and fit the horizon".into(),
        ));
    }
    let mean_arrival = mean_arrival_rate(&cfg.pm, &cfg.arr)?;
    if !(mean_arrival < c) {
        return Err(Error::Input(format!(
            "unstable queue: mean arrival {mean_arrival} is not below service {c}"
        )));
    }
    let sampler = ChainSampler::new(&cfg.pm)?;
    let thresholds = match &cfg.thresholds {
        Some(t) => {
            if t.is_empty() || t[0] <= 0.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Input(
                    "thresholds must be positive and strictly increasing".into(),
                ));
            }
            t.clone()
        }
        None => {
            let pilot = (cfg.horizon / 10).max(warmup + 1000);
            auto_thresholds(
                &sampler,
                &rates,
                c,
                pilot,
                warmup.min(pilot / 2),
                replication_seed(cfg.seed, u64::MAX),
            )
        }
    };

    let reps: Vec<Replication> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.replications)
            .map(|r| {
                let (sampler, rates, thresholds) = (&sampler, &rates, &thresholds);
                let seed = replication_seed(cfg.seed, r as u64);
                scope.spawn(move || {
                    run_replication(sampler, rates, c, thresholds, cfg.horizon, warmup, cfg.batches, seed)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replication thread panicked"))
            .collect()
    });

    let total: u64 = reps.iter().flat_map(|r| r.batch_len.iter()).sum();
    let n_batches = (cfg.replications * cfg.batches) as f64;
    let points = thresholds
        .iter()
        .enumerate()
        .map(|(t, &u)| {
            let batch_freqs: Vec<f64> = reps
                .iter()
                .flat_map(|r| {
                    r.counts
                        .iter()
                        .zip(&r.batch_len)
                        .map(move |(c, &len)| c[t] as f64 / len as f64)
                })
                .collect();
            let count: u64 = reps.iter().flat_map(|r| r.counts.iter()).map(|c| c[t]).sum();
            let freq = count as f64 / total as f64;
            let mean = batch_freqs.iter().sum::<f64>() / n_batches;
            let var = if n_batches > 1.0 {
                batch_freqs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n_batches - 1.0)
            } else {
                0.0
            };
            TailPoint {
                threshold: u,
                count,
                total,
                freq,
                log_freq: freq.ln(),
                stderr: (var / n_batches).sqrt(),
            }
        })
        .collect();
    Ok(TailEstimate {
        points,
        warmup,
        mean_arrival,
    })
}
