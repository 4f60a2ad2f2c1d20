//! Truncated photon-number distributions and the elementary probability
//! maps built on them: thermal emission, heralding, binomial loss and
//! per-pulse decoherence.

use serde::Serialize;

use crate::error::{check_range, ModelError, Result};
use crate::params::{DecoherenceMode, MemoryParams, SourceParams};

/// Probability vector over photon numbers `0..=n_max`.
///
/// `deficit` is the probability mass that lies beyond the truncation. It is
/// carried along and never folded back into the weights unless
/// [`ProbDist::renormalized`] is called explicitly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbDist {
    weights: Vec<f64>,
    deficit: f64,
}

impl ProbDist {
    pub fn new(weights: Vec<f64>, deficit: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(ModelError::OutOfRange {
                field: "weights".into(),
                value: 0.0,
                expected: "at least one weight",
            });
        }
        for &w in &weights {
            check_range("weight", w, w >= 0.0, "weight >= 0")?;
        }
        let total: f64 = weights.iter().sum();
        check_range("total", total, total <= 1.0 + 1e-12, "total <= 1")?;
        Ok(Self { weights, deficit: deficit.max(0.0) })
    }

    /// Point mass at photon number `n`, with support `0..=n_max`.
    pub fn delta(n: usize, n_max: usize) -> Self {
        let mut weights = vec![0.0; n_max.max(n) + 1];
        weights[n] = 1.0;
        Self { weights, deficit: 0.0 }
    }

    pub(crate) fn from_raw(weights: Vec<f64>, deficit: f64) -> Self {
        Self { weights, deficit }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Probability of exactly `n` photons (zero beyond the support).
    pub fn get(&self, n: usize) -> f64 {
        self.weights.get(n).copied().unwrap_or(0.0)
    }

    pub fn n_max(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Mass lost to truncation.
    pub fn deficit(&self) -> f64 {
        self.deficit
    }

    pub fn is_normalized(&self) -> bool {
        (self.total() - 1.0).abs() <= 1e-9
    }

    /// Rescales the retained weights to unit total and clears the deficit.
    pub fn renormalized(&self) -> Self {
        let total = self.total();
        Self {
            weights: self.weights.iter().map(|w| w / total).collect(),
            deficit: 0.0,
        }
    }
}

/// `C(n, k)` as a float.
pub fn binomial_coefficient(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Thermal pair statistics `(1 - p) p^n`, truncated at `n_max`.
pub fn thermal_dist(p: f64, n_max: usize) -> Result<ProbDist> {
    check_range("p", p, (0.0..1.0).contains(&p), "0 <= p < 1")?;
    let weights = (0..=n_max)
        .map(|n| (1.0 - p) * p.powi(n as i32))
        .collect();
    Ok(ProbDist::from_raw(weights, p.powi(n_max as i32 + 1)))
}

/// Probability that the herald detector clicks on a pulse carrying `n` pairs.
pub fn click_prob(source: &SourceParams, n: usize) -> f64 {
    1.0 - (1.0 - source.d) * (1.0 - source.h).powi(n as i32)
}

/// Probability `q` of a herald click per pulse.
///
/// Uses the exact no-click complement, which is algebraically identical to
/// `(hp + d(1-p)) / (1 - p(1-h))`.
pub fn herald_prob(source: &SourceParams) -> f64 {
    let SourceParams { p, h, d } = *source;
    // same as 1 - (1-d)(1-p)/(1-p(1-h)) without the cancellation at small p
    (p * h + d * (1.0 - p)) / (1.0 - p * (1.0 - h))
}

/// Functional form of the click-conditioned photon-number distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeraldForm {
    /// `P(click | n) = 1 - (1-d)(1-h)^n`, normalizes exactly.
    #[default]
    Exact,
    /// `(1-d)(1 - (1-h)^n + d)`, accurate to first order in `d`.
    PaperLiteral,
}

/// Distribution of the number of photons sent towards a memory, given a
/// herald click.
pub fn heralded_dist(source: &SourceParams, n_max: usize) -> Result<ProbDist> {
    heralded_dist_with(source, n_max, HeraldForm::Exact)
}

pub fn heralded_dist_with(source: &SourceParams, n_max: usize, form: HeraldForm) -> Result<ProbDist> {
    source.validate()?;
    let q = herald_prob(source);
    if q <= 0.0 {
        return Err(ModelError::UndefinedConditional);
    }
    let SourceParams { p, h, d } = *source;
    let miss = 1.0 - h;
    let conditional = |n: usize| match form {
        HeraldForm::Exact => click_prob(source, n),
        HeraldForm::PaperLiteral => (1.0 - d) * (1.0 - miss.powi(n as i32) + d),
    };
    let weights: Vec<f64> = (0..=n_max)
        .map(|n| (1.0 - p) * p.powi(n as i32) * conditional(n) / q)
        .collect();
    // closed-form tail sums over n > n_max
    let m1 = n_max as i32 + 1;
    let geometric_tail = p.powi(m1);
    let missed_tail = (1.0 - p) * (p * miss).powi(m1) / (1.0 - p * miss);
    let tail = match form {
        HeraldForm::Exact => geometric_tail - (1.0 - d) * missed_tail,
        HeraldForm::PaperLiteral => (1.0 - d) * ((1.0 + d) * geometric_tail - missed_tail),
    };
    Ok(ProbDist::from_raw(weights, (tail / q).max(0.0)))
}

/// Independent per-photon survival with probability `survival`.
///
/// The truncation deficit of the input is carried over unchanged.
pub fn binomial_loss(dist: &ProbDist, survival: f64) -> ProbDist {
    let loss = 1.0 - survival;
    let len = dist.len();
    let mut out = vec![0.0; len];
    for (k, &wk) in dist.weights().iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        for (n, slot) in out.iter_mut().enumerate().take(k + 1) {
            *slot += wk
                * binomial_coefficient(k, n)
                * survival.powi(n as i32)
                * loss.powi((k - n) as i32);
        }
    }
    ProbDist::from_raw(out, dist.deficit())
}

/// Probability `b` that a stored photon decoheres during one pulse period.
pub fn decoherence_step_prob(memory: &MemoryParams) -> f64 {
    let b = memory.time_bandwidth;
    if b.is_infinite() {
        return 0.0;
    }
    match memory.decoherence {
        DecoherenceMode::Linearized => 1.0 / b,
        DecoherenceMode::Exact => -(-1.0 / b).exp_m1(),
    }
}
