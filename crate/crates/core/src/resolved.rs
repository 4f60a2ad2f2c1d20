//! Photon-number-resolved memory model.
//!
//! A memory's charge state is a distribution over stored photon numbers. Each
//! pulse it decoheres photon by photon, is erased by a readout, or is cleaned
//! and refilled after a herald. The readiness `R` comes from the belief model,
//! since the controller only ever sees number-blind herald clicks.

use rayon::prelude::*;
use serde::Serialize;

use crate::belief::{solve_belief, DEFAULT_TOL};
use crate::binary::{waiting_time, WaitingTime};
use crate::dist::{binomial_coefficient, binomial_loss, decoherence_step_prob, herald_prob, heralded_dist, ProbDist};
use crate::error::{check_range, ModelError, Result};
use crate::params::{MemoryParams, SystemParams};

/// Residual bound for steady states computed inside the model pipeline.
pub const STEADY_TOL: f64 = 1e-12;

/// Upper bound on matrix squarings, i.e. `T` is applied at most `2^64` times.
const MAX_SQUARINGS: usize = 64;

/// Column-stochastic transfer matrix over stored photon numbers.
///
/// Entry `(j, k)` is the probability of moving from `k` to `j` stored photons
/// in one pulse. When the heralded distribution is truncated, columns fall
/// short of one by the truncated storage mass, recorded in `column_deficit`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferMatrix {
    dim: usize,
    entries: Vec<f64>,
    column_deficit: Vec<f64>,
}

impl TransferMatrix {
    /// Builds a matrix from row-major entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(ModelError::SupportMismatch {
                left: dim,
                right: rows.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(dim),
            });
        }
        let entries: Vec<f64> = rows.iter().flatten().copied().collect();
        let mut m = Self {
            dim,
            entries,
            column_deficit: vec![0.0; dim],
        };
        m.column_deficit = (0..dim).map(|k| 1.0 - m.column_sum(k)).collect();
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    pub fn column_sum(&self, col: usize) -> f64 {
        (0..self.dim).map(|j| self.get(j, col)).sum()
    }

    pub fn column_deficit(&self) -> &[f64] {
        &self.column_deficit
    }

    pub fn max_column_deficit(&self) -> f64 {
        self.column_deficit.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.entries, self.dim, x)
    }

    /// Number of closed communicating classes; a unique stationary
    /// distribution exists iff this is one.
    pub fn closed_classes(&self) -> usize {
        let n = self.dim;
        let reach: Vec<Vec<bool>> = (0..n)
            .map(|start| {
                let mut seen = vec![false; n];
                let mut stack = vec![start];
                seen[start] = true;
                while let Some(k) = stack.pop() {
                    for j in 0..n {
                        if !seen[j] && self.get(j, k) > 0.0 {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
                seen
            })
            .collect();
        let mut classes: Vec<&Vec<bool>> = Vec::new();
        for k in 0..n {
            let closed = (0..n).all(|j| !reach[k][j] || reach[j][k]);
            if closed && !classes.contains(&&reach[k]) {
                classes.push(&reach[k]);
            }
        }
        classes.len()
    }
}

fn mat_vec(m: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|j| m[j * n..(j + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Number-resolved transfer matrix for herald probability `q`, readiness
/// `r_ready` and click-conditioned photon distribution `p_h`.
pub fn build_transfer_matrix(q: f64, r_ready: f64, memory: &MemoryParams, p_h: &ProbDist) -> TransferMatrix {
    let dim = p_h.len();
    let b = decoherence_step_prob(memory);
    let p_s = binomial_loss(p_h, memory.eta_s);
    let keep = (1.0 - r_ready) * (1.0 - q) + r_ready * q;
    let readout = (1.0 - q) * r_ready;
    let store = q * (1.0 - r_ready);

    let mut entries = vec![0.0; dim * dim];
    for j in 0..dim {
        for k in 0..dim {
            let mut t = store * p_s.get(j);
            if k >= j {
                t += b.powi((k - j) as i32)
                    * (1.0 - b).powi(j as i32)
                    * binomial_coefficient(k, j)
                    * keep;
            }
            if j == 0 {
                t += readout;
            }
            entries[j * dim + k] = t;
        }
    }
    let mut m = TransferMatrix {
        dim,
        entries,
        column_deficit: Vec::new(),
    };
    m.column_deficit = (0..dim).map(|k| 1.0 - m.column_sum(k)).collect();
    m
}

/// Stationary vector by Grassmann-Taksar-Heyman elimination. Only
/// off-diagonal entries are used, so no subtraction occurs and small
/// probabilities keep their relative accuracy. `None` when a pivot vanishes.
fn gth(t: &TransferMatrix) -> Option<Vec<f64>> {
    let n = t.dim;
    // row-stochastic copy: p[i][j] is the probability of i -> j
    let mut p: Vec<f64> = (0..n * n).map(|idx| t.get(idx % n, idx / n)).collect();
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| p[k * n + j]).sum();
        if s <= 0.0 || !s.is_finite() {
            return None;
        }
        for i in 0..k {
            p[i * n + k] /= s;
        }
        for i in 0..k {
            let pik = p[i * n + k];
            if pik == 0.0 {
                continue;
            }
            for j in 0..k {
                p[i * n + j] += pik * p[k * n + j];
            }
        }
    }
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    for k in 1..n {
        x[k] = (0..k).map(|i| x[i] * p[i * n + k]).sum();
    }
    let total: f64 = x.iter().sum();
    Some(x.into_iter().map(|v| v / total).collect())
}

/// Stationary distribution of `t`, reached by repeated application starting
/// from the empty memory.
///
/// Applications are accelerated by squaring, so iteration `i` has applied `t`
/// `2^i - 1` times. Iterates are renormalized, which makes the result the
/// dominant eigenvector when truncation leaves columns slightly short. A
/// converged iterate is replaced by the elimination result when that is
/// stationary to the same tolerance, which matters for slowly mixing chains.
pub fn steady_state(t: &TransferMatrix, tol: f64) -> Result<ProbDist> {
    let classes = t.closed_classes();
    if classes != 1 {
        return Err(ModelError::DegenerateChain(format!(
            "{classes} closed classes, no unique steady state"
        )));
    }
    let n = t.dim;
    let normalize = |v: Vec<f64>| {
        let total: f64 = v.iter().sum();
        v.into_iter().map(|x| x / total).collect::<Vec<f64>>()
    };
    let residual = |x: &[f64]| {
        let tx = t.apply(x);
        let scale: f64 = tx.iter().sum();
        tx.iter()
            .zip(x)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - scale * b).abs()))
    };

    let polish = |x: Vec<f64>| match gth(t) {
        Some(g) if residual(&g) <= tol => g,
        _ => x,
    };

    let mut power = t.entries.clone();
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    let mut res = residual(&x);
    for iteration in 0..MAX_SQUARINGS {
        if res <= tol {
            return Ok(ProbDist::from_raw(polish(x), 0.0));
        }
        x = normalize(mat_vec(&power, n, &x));
        // a few plain steps wash out rounding from the squared powers
        for _ in 0..2 {
            x = normalize(t.apply(&x));
        }
        res = residual(&x);
        if iteration + 1 < MAX_SQUARINGS {
            power = mat_mul(&power, &power, n);
            let scale = (0..n)
                .map(|k| (0..n).map(|j| power[j * n + k]).sum::<f64>())
                .fold(0.0, f64::max);
            if scale > 0.0 {
                power.iter_mut().for_each(|v| *v /= scale);
            }
        }
    }
    if res <= tol {
        return Ok(ProbDist::from_raw(polish(x), 0.0));
    }
    Err(ModelError::NoConvergence {
        iterations: MAX_SQUARINGS,
        residual: res,
    })
}

/// Distribution of photons retrieved from a memory in state `x_s`.
pub fn retrieved_dist(x_s: &ProbDist, eta_r: f64) -> ProbDist {
    binomial_loss(x_s, eta_r)
}

/// Photons extracted from one unit: fresh heralded photons with probability
/// `q`, retrieved ones otherwise.
pub fn sync_output_dist(q: f64, p_h: &ProbDist, p_r: &ProbDist) -> Result<ProbDist> {
    if p_h.len() != p_r.len() {
        return Err(ModelError::SupportMismatch {
            left: p_h.len(),
            right: p_r.len(),
        });
    }
    let weights = p_h
        .weights()
        .iter()
        .zip(p_r.weights())
        .map(|(h, r)| q * h + (1.0 - q) * r)
        .collect();
    Ok(ProbDist::from_raw(weights, q * p_h.deficit() + (1.0 - q) * p_r.deficit()))
}

/// Probability of exactly one photon in each of `units` modes.
pub fn coincidence_exact(p_sync: &ProbDist, units: usize) -> f64 {
    p_sync.get(1).powi(units as i32)
}

/// Probability that `units` independent modes with photon statistics
/// `p_sync` carry fewer than `units` photons in total.
pub fn prob_fewer_than(p_sync: &ProbDist, units: usize) -> f64 {
    // only totals below `units` matter, so convolve on that window
    let mut acc = vec![0.0; units];
    acc[0] = 1.0;
    for _ in 0..units {
        let mut next = vec![0.0; units];
        for (i, &a) in acc.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (n, &p) in p_sync.weights().iter().enumerate().take(units - i) {
                next[i + n] += a * p;
            }
        }
        acc = next;
    }
    acc.iter().sum()
}

/// Probability that `units` independent modes carry at least `units`
/// photons in total, accumulated directly so that small values do not cancel
/// against one. Mass beyond the truncation of `p_sync` is not included.
pub fn prob_at_least(p_sync: &ProbDist, units: usize) -> f64 {
    // bins 0..units hold exact totals, bin `units` collects everything above
    let mut acc = vec![0.0; units + 1];
    acc[0] = 1.0;
    for _ in 0..units {
        let mut next = vec![0.0; units + 1];
        for (i, &a) in acc.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (n, &p) in p_sync.weights().iter().enumerate() {
                next[(i + n).min(units)] += a * p;
            }
        }
        acc = next;
    }
    acc[units]
}

/// `(c / (R Y))^(1/N)`.
pub fn fidelity_unpostselected(c: f64, r_ready: f64, y: f64, units: usize) -> Result<f64> {
    let denominator = r_ready * y;
    if denominator <= 0.0 {
        return Err(ModelError::UndefinedFidelity(format!(
            "believed N-photon probability R*Y = {denominator:e} is not positive"
        )));
    }
    Ok((c / denominator).powf(1.0 / units as f64))
}

/// Normalized fidelity of a memoryless unit: the single-photon weight of
/// the heralded distribution.
pub fn fidelity_no_memory(p_h: &ProbDist) -> f64 {
    p_h.get(1)
}

/// Denominator used for the postselected fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// `q - p_<N`
    PaperLiteral,
    /// `1 - p_<N`
    #[default]
    Normalized,
}

impl DenominatorMode {
    pub fn name(&self) -> &'static str {
        match self {
            DenominatorMode::PaperLiteral => "paper_literal",
            DenominatorMode::Normalized => "normalized",
        }
    }

    /// Probability of at least `N` photons under this convention.
    pub fn p_geq(&self, q: f64, p_less: f64) -> f64 {
        match self {
            DenominatorMode::PaperLiteral => q - p_less,
            DenominatorMode::Normalized => 1.0 - p_less,
        }
    }
}

/// `(c / p_>=N)^(1/N)` with the denominator chosen by `mode`.
pub fn fidelity_postselected(c: f64, p_less: f64, q: f64, units: usize, mode: DenominatorMode) -> Result<f64> {
    postselected_from_denominator(c, mode.p_geq(q, p_less), units, mode)
}

fn postselected_from_denominator(c: f64, denominator: f64, units: usize, mode: DenominatorMode) -> Result<f64> {
    if denominator <= 0.0 {
        return Err(ModelError::UndefinedFidelity(format!(
            "{} postselection denominator is {denominator:e}",
            mode.name()
        )));
    }
    Ok((c / denominator).powf(1.0 / units as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityKind {
    #[default]
    Postselected,
    Unpostselected,
}

/// Everything the number-resolved model says about one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityReport {
    pub q: f64,
    pub y: f64,
    pub r_ready: f64,
    pub p_h: ProbDist,
    pub x_s: ProbDist,
    pub p_r: ProbDist,
    pub p_sync: ProbDist,
    /// Exactly one photon per mode.
    pub c: f64,
    pub p_less: f64,
    pub p_geq: f64,
    /// Unpostselected normalized fidelity, `None` when undefined.
    pub f: Option<f64>,
    /// Postselected normalized fidelity, `None` when undefined.
    pub f_tilde: Option<f64>,
    pub f_no_mem: f64,
    pub denominator_mode: DenominatorMode,
    /// Why `f` or `f_tilde` is missing.
    pub errors: Vec<String>,
    /// Largest shortfall of a transfer-matrix column from one.
    pub truncation_residual: f64,
    pub waiting_time: WaitingTime,
    pub fingerprint: u64,
}

impl FidelityReport {
    pub fn fidelity(&self, kind: FidelityKind) -> Option<f64> {
        match kind {
            FidelityKind::Postselected => self.f_tilde,
            FidelityKind::Unpostselected => self.f,
        }
    }
}

/// Runs the full pipeline: herald statistics, belief solve, transfer matrix,
/// steady state, output statistics and fidelities.
pub fn evaluate(params: &SystemParams, mode: DenominatorMode) -> Result<FidelityReport> {
    params.validate()?;
    let units = params.units;
    let q = herald_prob(&params.source);
    let belief = solve_belief(q, units, DEFAULT_TOL)?;
    let p_h = heralded_dist(&params.source, params.n_max)?;
    let t = build_transfer_matrix(q, belief.r, &params.memory, &p_h);
    let x_s = steady_state(&t, STEADY_TOL)?;
    let p_r = retrieved_dist(&x_s, params.memory.eta_r);
    let p_sync = sync_output_dist(q, &p_h, &p_r)?;
    let c = coincidence_exact(&p_sync, units);
    let p_less = prob_fewer_than(&p_sync, units);
    let p_geq = match mode {
        DenominatorMode::PaperLiteral => mode.p_geq(q, p_less),
        // same as 1 - p_<N up to truncation, without the cancellation
        DenominatorMode::Normalized => prob_at_least(&p_sync, units),
    };

    let mut errors = Vec::new();
    let f = fidelity_unpostselected(c, belief.r, belief.y, units)
        .map_err(|e| errors.push(e.to_string()))
        .ok();
    let f_tilde = postselected_from_denominator(c, p_geq, units, mode)
        .map_err(|e| errors.push(e.to_string()))
        .ok();

    Ok(FidelityReport {
        q,
        y: belief.y,
        r_ready: belief.r,
        f_no_mem: fidelity_no_memory(&p_h),
        p_h,
        x_s,
        p_r,
        c,
        p_less,
        p_geq,
        p_sync,
        f,
        f_tilde,
        denominator_mode: mode,
        errors,
        truncation_residual: t.max_column_deficit(),
        waiting_time: waiting_time(c, params.pump_rate)?,
        fingerprint: params.fingerprint(),
    })
}

/// Largest thermal parameter whose memoryless normalized fidelity
/// `(1 - p)(1 - p(1 - h))` still reaches `theta`, without dark counts.
pub fn threshold_p_unsync(h: f64, theta: f64) -> Result<f64> {
    check_range("h", h, (0.0..=1.0).contains(&h), "0 <= h <= 1")?;
    check_range("theta", theta, theta > 0.0 && theta <= 1.0, "0 < theta <= 1")?;
    // smaller root of (1-h) p^2 - (2-h) p + (1 - theta) = 0, written so that
    // h = 1 needs no special case
    let lead = 2.0 - h;
    let disc = lead * lead - 4.0 * (1.0 - h) * (1.0 - theta);
    Ok(2.0 * (1.0 - theta) / (lead + disc.sqrt()))
}

/// Search settings for [`threshold_p_sync`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSearch {
    /// Smallest `p` probed.
    pub p_lo: f64,
    /// Largest `p` probed.
    pub p_hi: f64,
    /// Log-spaced probe points between `p_lo` and `p_hi`.
    pub grid_points: usize,
    /// Accepted `|F - theta|` at the returned point.
    pub tol: f64,
}

impl Default for ThresholdSearch {
    fn default() -> Self {
        Self {
            p_lo: 1e-7,
            p_hi: 0.5,
            grid_points: 80,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub p_theta: f64,
    pub fidelity: f64,
    /// The fidelity crossed the threshold more than once on the probe grid.
    pub non_monotone: bool,
    /// The fidelity was still above threshold at the top of the search range.
    pub hit_upper_bound: bool,
    pub report: FidelityReport,
}

/// Largest `p` whose chosen fidelity equals `theta` for a synchronized array.
///
/// The unpostselected fidelity is not monotone in `p`: for weak sources most
/// memories the controller believes charged have already decohered, so it
/// rises from zero before falling. The search therefore brackets the last
/// downward crossing on the probe grid and flags any other crossing.
///
/// The full model is re-evaluated at every candidate `p`; probe points are
/// evaluated in parallel and the outcome does not depend on their order.
pub fn threshold_p_sync(
    params: &SystemParams,
    theta: f64,
    kind: FidelityKind,
    mode: DenominatorMode,
    search: ThresholdSearch,
) -> Result<ThresholdResult> {
    check_range("theta", theta, theta > 0.0 && theta <= 1.0, "0 < theta <= 1")?;
    check_range("p_lo", search.p_lo, search.p_lo > 0.0 && search.p_lo < search.p_hi, "0 < p_lo < p_hi")?;
    check_range("p_hi", search.p_hi, search.p_hi < 1.0, "p_hi < 1")?;
    let points = search.grid_points.max(2);

    let at = |p: f64| -> Result<FidelityReport> {
        let mut local = *params;
        local.source.p = p;
        evaluate(&local, mode)
    };
    let fid = |rep: &FidelityReport| rep.fidelity(kind).unwrap_or(f64::NEG_INFINITY);

    let ratio = (search.p_hi / search.p_lo).ln();
    let grid: Vec<f64> = (0..points)
        .map(|i| search.p_lo * (ratio * i as f64 / (points - 1) as f64).exp())
        .collect();
    let reports: Vec<Result<FidelityReport>> = grid.par_iter().map(|&p| at(p)).collect();
    let values: Vec<f64> = reports
        .iter()
        .map(|r| r.as_ref().map(fid).unwrap_or(f64::NEG_INFINITY))
        .collect();

    let Some(last_above) = (0..points).rev().find(|&i| values[i] >= theta) else {
        // every probe failed the same way: surface that error
        if let Some(Err(e)) = reports.iter().find(|r| r.is_err()) {
            if reports.iter().all(|r| r.is_err()) {
                return Err(e.clone());
            }
        }
        return Err(ModelError::NoThreshold {
            theta,
            p_hi: search.p_hi,
        });
    };
    let crossings = (0..points - 1)
        .filter(|&i| (values[i] >= theta) != (values[i + 1] >= theta))
        .count();
    let non_monotone = crossings > 1 || values[0] < theta;

    if last_above == points - 1 {
        let report = reports[last_above].clone()?;
        return Ok(ThresholdResult {
            p_theta: grid[last_above],
            fidelity: fid(&report),
            non_monotone,
            hit_upper_bound: true,
            report,
        });
    }

    let (mut lo, mut hi) = (grid[last_above], grid[last_above + 1]);
    let mut best = reports[last_above].clone()?;
    let mut best_p = lo;
    for _ in 0..200 {
        if (fid(&best) - theta).abs() <= search.tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let rep = at(mid);
        match rep {
            Ok(rep) if fid(&rep) >= theta => {
                lo = mid;
                best = rep;
                best_p = mid;
            }
            _ => hi = mid,
        }
    }
    Ok(ThresholdResult {
        p_theta: best_p,
        fidelity: fid(&best),
        non_monotone,
        hit_upper_bound: false,
        report: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binary::{chain_rates, steady_occupancy};
    use crate::params::{DecoherenceMode, SourceParams};

    fn memory(eta_s: f64, eta_r: f64, b: f64) -> MemoryParams {
        MemoryParams::new(eta_s, eta_r, b, DecoherenceMode::Exact).unwrap()
    }

    fn dist(w: &[f64]) -> ProbDist {
        ProbDist::new(w.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn idle_memory_is_identity() {
        let t = build_transfer_matrix(0.0, 0.0, &memory(0.7, 0.7, f64::INFINITY), &dist(&[0.0, 0.9, 0.1]));
        for j in 0..3 {
            for k in 0..3 {
                assert_eq!(t.get(j, k), if j == k { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(t.closed_classes(), 3);
        assert!(matches!(steady_state(&t, 1e-12), Err(ModelError::DegenerateChain(_))));
    }

    #[test]
    fn certain_readout_empties_memory() {
        let t = build_transfer_matrix(0.0, 1.0, &memory(0.7, 0.7, 10.0), &dist(&[0.0, 0.5, 0.5]));
        for k in 0..3 {
            assert_eq!(t.get(0, k), 1.0);
            assert_eq!(t.get(1, k), 0.0);
            assert_eq!(t.get(2, k), 0.0);
        }
    }

    #[test]
    fn columns_are_stochastic_up_to_truncation() {
        let source = SourceParams::new(0.2, 0.6, 0.0).unwrap();
        let p_h = heralded_dist(&source, 8).unwrap();
        let t = build_transfer_matrix(0.1, 0.3, &memory(0.8, 0.9, 200.0), &p_h);
        for k in 0..t.dim() {
            assert!((t.column_sum(k) + t.column_deficit()[k] - 1.0).abs() < 1e-15);
            assert!(t.column_deficit()[k] <= 0.1 * 0.7 * p_h.deficit() + 1e-15);
        }
        assert!(t.max_column_deficit() < 1e-4);
    }

    #[test]
    fn periodic_chain_does_not_converge() {
        let t = TransferMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(t.closed_classes(), 1);
        assert!(matches!(steady_state(&t, 1e-12), Err(ModelError::NoConvergence { .. })));
    }

    #[test]
    fn embeds_the_binary_chain() {
        let mem = memory(1.0, 0.8, 500.0);
        for &(q, r) in &[(0.01, 0.2), (0.3, 0.05), (0.001, 0.0)] {
            let t = build_transfer_matrix(q, r, &mem, &ProbDist::delta(1, 1));
            let xs = steady_state(&t, 1e-14).unwrap();
            let p = steady_occupancy(&chain_rates(q, r, &mem)).unwrap();
            assert!((xs.get(1) - p).abs() < 1e-12, "{} vs {p}", xs.get(1));
        }
    }

    #[test]
    fn slow_chains_still_converge() {
        let source = SourceParams::new(1e-6, 1.0, 0.0).unwrap();
        let p_h = heralded_dist(&source, 4).unwrap();
        let t = build_transfer_matrix(1e-6, 1e-4, &memory(1.0, 1.0, 1e7), &p_h);
        let xs = steady_state(&t, 1e-13).unwrap();
        assert!(xs.is_normalized());
    }

    #[test]
    fn output_mixture_examples() {
        let ph = dist(&[0.0, 1.0, 0.0]);
        let pr = dist(&[1.0, 0.0, 0.0]);
        assert_eq!(sync_output_dist(1.0, &ph, &pr).unwrap().weights(), ph.weights());
        assert_eq!(sync_output_dist(0.0, &ph, &pr).unwrap().weights(), pr.weights());
        assert_eq!(sync_output_dist(0.5, &ph, &pr).unwrap().weights(), &[0.5, 0.5, 0.0]);
        assert!(sync_output_dist(0.5, &ph, &dist(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn coincidence_and_fewer_than_examples() {
        assert_eq!(coincidence_exact(&dist(&[0.0, 1.0]), 7), 1.0);
        assert_eq!(coincidence_exact(&dist(&[0.5, 0.5]), 3), 0.125);
        assert_eq!(prob_fewer_than(&dist(&[1.0, 0.0, 0.0]), 4), 1.0);
        assert_eq!(prob_fewer_than(&dist(&[0.3, 0.6, 0.1]), 1), 0.3);
        assert!((prob_fewer_than(&dist(&[0.5, 0.3, 0.2]), 2) - 0.55).abs() < 1e-15);
    }

    #[test]
    fn fidelity_examples() {
        assert_eq!(fidelity_unpostselected(0.06, 0.3, 0.2, 4).unwrap(), 1.0);
        assert!(fidelity_unpostselected(0.1, 0.0, 0.5, 2).is_err());
        assert!((fidelity_postselected(0.7, 0.3, 0.5, 1, DenominatorMode::Normalized).unwrap() - 1.0).abs() < 1e-15);
        let p_sync = dist(&[0.2, 0.8]);
        let c = coincidence_exact(&p_sync, 1);
        let p_less = prob_fewer_than(&p_sync, 1);
        assert!((fidelity_postselected(c, p_less, 0.3, 1, DenominatorMode::Normalized).unwrap() - 1.0).abs() < 1e-15);
        match fidelity_postselected(0.01, 0.5, 0.01, 2, DenominatorMode::PaperLiteral) {
            Err(ModelError::UndefinedFidelity(msg)) => assert!(msg.contains("paper_literal"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn memoryless_fidelity_is_single_photon_weight() {
        let p_h = heralded_dist(&SourceParams::new(0.1, 1.0, 0.0).unwrap(), 8).unwrap();
        assert!((fidelity_no_memory(&p_h) - 0.9).abs() < 1e-15);
        let p = 0.068224;
        let p_h = heralded_dist(&SourceParams::new(p, 0.5, 0.0).unwrap(), 8).unwrap();
        assert!((fidelity_no_memory(&p_h) - (1.0 - p) * (1.0 - 0.5 * p)).abs() < 1e-15);
    }

    #[test]
    fn unsync_threshold_examples() {
        for &h in &[0.0, 0.3, 0.5, 1.0] {
            assert_eq!(threshold_p_unsync(h, 1.0).unwrap(), 0.0);
        }
        for &theta in &[0.5, 0.9, 0.99] {
            assert!((threshold_p_unsync(1.0, theta).unwrap() - (1.0 - theta)).abs() < 1e-15);
        }
        let p = threshold_p_unsync(0.5, 0.9).unwrap();
        assert!((p - 0.068_217_893_672_364_67).abs() < 1e-14);
        assert!(((1.0 - p) * (1.0 - 0.5 * p) - 0.9).abs() < 1e-12);
        assert!(threshold_p_unsync(0.5, 1.2).is_err());
    }

    fn array(units: usize, mem: MemoryParams) -> SystemParams {
        SystemParams {
            units,
            pump_rate: 1e9,
            source: SourceParams::new(0.01, 0.5, 0.0).unwrap(),
            memory: mem,
            n_max: 8,
        }
    }

    #[test]
    fn memoryless_limit_matches_closed_threshold() {
        // N = 1 means R = 1: every herald is used directly
        let params = array(1, memory(1.0, 1.0, f64::INFINITY));
        for &theta in &[0.8, 0.9, 0.95] {
            let res = threshold_p_sync(
                &params,
                theta,
                FidelityKind::Unpostselected,
                DenominatorMode::Normalized,
                ThresholdSearch::default(),
            )
            .unwrap();
            let closed = threshold_p_unsync(0.5, theta).unwrap();
            assert!((res.p_theta - closed).abs() < 1e-8, "{} vs {closed}", res.p_theta);
            assert!(!res.non_monotone);
        }
    }

    #[test]
    fn threshold_tends_to_zero_as_theta_tends_to_one() {
        let params = array(3, memory(0.9, 0.9, 1000.0));
        let mut prev = 1.0;
        // the postselected fidelity at p -> 0 is about 0.9955 here
        for &theta in &[0.9, 0.95, 0.98, 0.99] {
            let res = threshold_p_sync(
                &params,
                theta,
                FidelityKind::Postselected,
                DenominatorMode::Normalized,
                ThresholdSearch::default(),
            )
            .unwrap();
            assert!(res.p_theta < prev);
            prev = res.p_theta;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn threshold_reports_unreachable_targets() {
        // with lossy memories the unpostselected fidelity never reaches 0.99
        let params = array(4, memory(0.5, 0.5, 1000.0));
        let res = threshold_p_sync(
            &params,
            0.99,
            FidelityKind::Unpostselected,
            DenominatorMode::Normalized,
            ThresholdSearch::default(),
        );
        assert!(matches!(res, Err(ModelError::NoThreshold { .. })), "{res:?}");
    }

    #[test]
    fn fidelities_fall_with_p_and_coincidence_rises_with_retrieval() {
        let base = array(4, memory(0.9, 0.9, 1000.0));
        // the unpostselected fidelity only falls once qB is of order one
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for i in 1..=30 {
            let mut params = base;
            params.source.p = 0.005 * i as f64;
            let rep = evaluate(&params, DenominatorMode::Normalized).unwrap();
            let (f, ft) = (rep.f.unwrap(), rep.f_tilde.unwrap());
            assert!(ft <= prev.1 + 1e-12, "p={}", params.source.p);
            if params.source.p >= 0.03 {
                assert!(f <= prev.0 + 1e-12, "p={}", params.source.p);
            }
            prev = (f, ft);
        }
        let mut prev_c = 0.0;
        for i in 0..=10 {
            let mut params = base;
            params.memory.eta_r = 0.1 * i as f64;
            let c = evaluate(&params, DenominatorMode::Normalized).unwrap().c;
            assert!(c >= prev_c);
            prev_c = c;
        }
    }
}
