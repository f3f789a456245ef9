//! Discriminator rejection sampling with the frozen pretraining
//! discriminator.
//!
//! A candidate with density ratio `r` is kept with probability
//! `min(1, r / (L * exp(gamma)))`, evaluated in log space. `L` is a high
//! quantile of the ratios seen on a pilot sample rather than their maximum,
//! so one saturated ratio cannot starve the sampler.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::gan::{frozen_log_ratio, generate_staged, BatchStage, GeneratedBatch, ModelBundle, RATIO_EPS};
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrsConfig {
    /// Quantile of pilot ratios used as `L`, in `(0, 1]`.
    pub l_constant_percentile: f64,
    /// Pilot sample size for estimating `L`.
    pub burn_in: usize,
    pub gamma_shift: f64,
    /// Abort once attempts exceed `n_target * max_attempts_factor`.
    pub max_attempts_factor: usize,
    /// Candidates generated and scored per round.
    pub chunk_size: usize,
}

impl Default for DrsConfig {
    fn default() -> Self {
        Self {
            l_constant_percentile: 0.999,
            burn_in: 10_000,
            gamma_shift: 0.0,
            max_attempts_factor: 50,
            chunk_size: 4096,
        }
    }
}

impl DrsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.l_constant_percentile > 0.0 && self.l_constant_percentile <= 1.0) {
            return bad(format!("l_constant_percentile {} outside (0, 1]", self.l_constant_percentile));
        }
        if self.burn_in < 100 {
            return bad(format!("burn_in {} below 100", self.burn_in));
        }
        if self.max_attempts_factor < 1 {
            return bad("max_attempts_factor must be at least 1".into());
        }
        if self.chunk_size == 0 {
            return bad("chunk_size must be positive".into());
        }
        if self.gamma_shift.is_nan() {
            return bad("gamma_shift is NaN".into());
        }
        Ok(())
    }
}

/// Summary of one filtering run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrsStats {
    pub l_constant: f64,
    pub attempts: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
}

/// Nearest-rank quantile of `values` at `percentile`.
pub fn quantile(values: &[f64], percentile: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((percentile * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// `ln L` from pilot log ratios.
pub fn log_l_from_pilot(log_ratios: &[f64], percentile: f64) -> Result<f64> {
    if log_ratios.is_empty() {
        return Err(Error::InvalidArgument("no pilot ratios".into()));
    }
    let ceiling = -RATIO_EPS.ln();
    if log_ratios.iter().all(|&r| r >= ceiling) {
        log::warn!("every pilot ratio sits at the clamp ceiling; using it as L");
        return Ok(ceiling);
    }
    Ok(quantile(log_ratios, percentile))
}

/// Estimate `L` from `cfg.burn_in` generated rows scored by the frozen
/// discriminator. Returns `L` itself, not its log.
pub fn estimate_l(bundle: &ModelBundle, cfg: &DrsConfig, seed: u64) -> Result<f64> {
    cfg.validate()?;
    let pilot = generate_staged(bundle, cfg.burn_in, rng::derive_seed(seed, "pilot"), BatchStage::Transformed, 0)?;
    let lr = frozen_log_ratio(bundle, pilot.x_prime.view(), pilot.y_prime.view())?;
    Ok(log_l_from_pilot(&lr, cfg.l_constant_percentile)?.exp())
}

/// Log acceptance probability `min(0, ln r - ln L - gamma)`.
pub fn log_acceptance(log_ratio: f64, log_l: f64, gamma_shift: f64) -> f64 {
    (log_ratio - log_l - gamma_shift).min(0.0)
}

/// Uniform draws indexed by candidate ordinal: the `k`-th candidate always
/// sees the same number, whatever the batching.
pub struct AcceptStream {
    rng: Rng,
}

impl AcceptStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: rng::substream(seed, "accept"),
        }
    }

    pub fn uniform(&mut self, ordinal: u64) -> f64 {
        // One f64 draw consumes two 32-bit words.
        self.rng.set_word_pos(u128::from(ordinal) * 2);
        self.rng.gen::<f64>()
    }

    pub fn accept(&mut self, ordinal: u64, log_ratio: f64, log_l: f64, gamma_shift: f64) -> bool {
        let u = self.uniform(ordinal);
        u.ln() < log_acceptance(log_ratio, log_l, gamma_shift)
    }
}

/// Rejection sampling against any proposal with known log ratios. Each
/// round, `propose(round)` returns candidates with their log ratios.
pub fn rejection_sample<T>(
    mut propose: impl FnMut(u64) -> Result<Vec<(T, f64)>>,
    n_target: usize,
    log_l: f64,
    cfg: &DrsConfig,
    seed: u64,
) -> Result<(Vec<T>, DrsStats)> {
    if n_target == 0 {
        return Err(Error::InvalidArgument("n_target must be positive".into()));
    }
    let max_attempts = n_target.saturating_mul(cfg.max_attempts_factor);
    let mut stream = AcceptStream::new(seed);
    let mut kept = Vec::with_capacity(n_target);
    let mut attempts = 0usize;
    let mut round = 0u64;
    while kept.len() < n_target {
        let candidates = propose(round)?;
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("proposal returned no candidates".into()));
        }
        round += 1;
        for (item, lr) in candidates {
            if attempts >= max_attempts {
                return Err(Error::DrsAbort {
                    attempts,
                    accepted: kept.len(),
                    target: n_target,
                    rate: kept.len() as f64 / attempts.max(1) as f64,
                });
            }
            let ordinal = attempts as u64;
            attempts += 1;
            if stream.accept(ordinal, lr, log_l, cfg.gamma_shift) {
                kept.push(item);
                if kept.len() == n_target {
                    break;
                }
            }
        }
    }
    let stats = DrsStats {
        l_constant: log_l.exp(),
        attempts,
        accepted: kept.len(),
        acceptance_rate: kept.len() as f64 / attempts as f64,
    };
    Ok((kept, stats))
}

/// Draw exactly `n_target` rows from the generator, filtered with the
/// frozen discriminator's ratios against `l_constant`.
pub fn drs_filter(
    bundle: &ModelBundle,
    n_target: usize,
    l_constant: f64,
    cfg: &DrsConfig,
    seed: u64,
) -> Result<(GeneratedBatch, DrsStats)> {
    cfg.validate()?;
    if !(l_constant > 0.0 && l_constant.is_finite()) {
        return Err(Error::InvalidArgument(format!("L must be positive and finite, got {l_constant}")));
    }
    let candidate_seed = rng::derive_seed(seed, "candidates");
    let mut batches: Vec<GeneratedBatch> = Vec::new();
    let (picked, stats) = rejection_sample(
        |round| {
            let b = generate_staged(
                bundle,
                cfg.chunk_size,
                candidate_seed.wrapping_add(round),
                BatchStage::DrsFiltered,
                0,
            )?;
            let lr = frozen_log_ratio(bundle, b.x_prime.view(), b.y_prime.view())?;
            let r = batches.len();
            batches.push(b);
            Ok(lr.into_iter().enumerate().map(|(i, l)| ((r, i), l)).collect())
        },
        n_target,
        l_constant.ln(),
        cfg,
        seed,
    )?;
    let mut parts = Vec::new();
    for (r, b) in batches.iter().enumerate() {
        let idx: Vec<usize> = picked.iter().filter(|(pr, _)| *pr == r).map(|(_, i)| *i).collect();
        if !idx.is_empty() {
            parts.push(b.select(&idx));
        }
    }
    let mut out = GeneratedBatch::concat(&parts)?;
    out.stage = BatchStage::DrsFiltered;
    out.seed = seed;
    log::info!(
        "rejection sampling kept {}/{} (rate {:.4}, L {:.4})",
        stats.accepted,
        stats.attempts,
        stats.acceptance_rate,
        stats.l_constant
    );
    Ok((out, stats))
}

/// Total variation distance between two discrete distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Empirical distribution of values in `0..k`.
pub fn empirical(values: &[usize], k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k];
    for &v in values {
        h[v] += 1.0;
    }
    h.iter_mut().for_each(|c| *c /= values.len().max(1) as f64);
    h
}

/// Rejection sampling on a discrete proposal with exact ratios `p / q`.
/// Used to check the sampler itself, independently of any discriminator.
pub fn oracle_discrete(
    target: &[f64],
    proposal: &[f64],
    n_target: usize,
    cfg: &DrsConfig,
    seed: u64,
) -> Result<(Vec<usize>, DrsStats)> {
    if target.len() != proposal.len() || target.is_empty() {
        return Err(Error::ShapeMismatch("target and proposal need the same support".into()));
    }
    let log_ratio: Vec<f64> = target
        .iter()
        .zip(proposal)
        .map(|(p, q)| if *p > 0.0 { (p / q).ln() } else { f64::NEG_INFINITY })
        .collect();
    let log_l = log_ratio.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dist = rand::distributions::WeightedIndex::new(proposal)
        .map_err(|e| Error::InvalidArgument(format!("proposal: {e}")))?;
    let mut r = rng::substream(seed, "proposal");
    rejection_sample(
        |_| {
            Ok((0..cfg.chunk_size)
                .map(|_| {
                    let v = rand::distributions::Distribution::sample(&dist, &mut r);
                    (v, log_ratio[v])
                })
                .collect())
        },
        n_target,
        log_l,
        cfg,
        seed,
    )
}
