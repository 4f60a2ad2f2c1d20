//! Binary occupancy model: each memory is either empty or holds one photon.

use serde::Serialize;

use crate::belief::{solve_belief, DEFAULT_TOL};
use crate::dist::{decoherence_step_prob, herald_prob};
use crate::error::{check_range, ModelError, Result};
use crate::params::{MemoryParams, SystemParams};

/// Per-pulse transition probabilities of a single memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainRates {
    /// Empty -> charged.
    pub r: f64,
    /// Charged -> empty.
    pub s: f64,
    /// Decoherence of a stored photon.
    pub b: f64,
}

impl ChainRates {
    /// `[[1 - r, s], [r, 1 - s]]`, columns indexed by the current state.
    pub fn transfer_matrix(&self) -> [[f64; 2]; 2] {
        [[1.0 - self.r, self.s], [self.r, 1.0 - self.s]]
    }
}

/// Expected time between events that occur with probability `c` per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "seconds", rename_all = "lowercase")]
pub enum WaitingTime {
    Finite(f64),
    Infinite,
}

impl WaitingTime {
    pub fn seconds(&self) -> f64 {
        match *self {
            WaitingTime::Finite(t) => t,
            WaitingTime::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyncReport {
    pub q: f64,
    pub y: f64,
    /// Readout readiness `R`.
    pub r_ready: f64,
    /// Believed-charged probability `V`.
    pub v: f64,
    pub rates: ChainRates,
    /// Steady occupancy `P`.
    pub p_occupancy: f64,
    /// Per-unit probability of providing a photon, `q + (1 - q) eta_r P`.
    pub p_sync: f64,
    /// N-fold coincidence probability per pulse from the chain steady state.
    pub c_sync: f64,
    /// Same quantity from the closed-form expression.
    pub c_sync_closed_form: f64,
    pub waiting_time: WaitingTime,
    /// More than one candidate root in the belief solve.
    pub multiple_roots: bool,
    pub fingerprint: u64,
}

/// Charging and loss probabilities of a memory given herald probability `q`
/// and readiness `r_ready`.
pub fn chain_rates(q: f64, r_ready: f64, memory: &MemoryParams) -> ChainRates {
    let b = decoherence_step_prob(memory);
    let idle = 1.0 - r_ready;
    let r = q * memory.eta_s * idle;
    // standby decay, decay while bypassed, readout, failed re-store
    let s = b * (idle * (1.0 - q) + r_ready * q)
        + (1.0 - q) * r_ready
        + q * idle * (1.0 - memory.eta_s);
    ChainRates { r, s, b }
}

/// Steady probability `r / (r + s)` that the memory is charged.
pub fn steady_occupancy(rates: &ChainRates) -> Result<f64> {
    let total = rates.r + rates.s;
    if total <= 0.0 {
        return Err(ModelError::DegenerateChain(
            "r = s = 0, every occupancy is stationary".into(),
        ));
    }
    Ok(rates.r / total)
}

/// The bracketed per-unit enhancement `p_sync / q` of the closed form.
pub fn closed_form_factor(q: f64, r_ready: f64, efficiency: f64, time_bandwidth: f64) -> f64 {
    let b = time_bandwidth;
    1.0 + (1.0 - r_ready) * (1.0 - q) * efficiency * b
        / (1.0 + (b - 1.0) * (r_ready * ((1.0 - q) - q) + q))
}

/// Closed-form N-fold coincidence probability, with dark counts removed from
/// the leading factor.
pub fn closed_form_coincidence(
    q: f64,
    dark: f64,
    r_ready: f64,
    efficiency: f64,
    time_bandwidth: f64,
    units: usize,
) -> f64 {
    ((q - dark) * closed_form_factor(q, r_ready, efficiency, time_bandwidth)).powi(units as i32)
}

/// Coincidence probability, waiting time and intermediate quantities of the
/// binary model.
///
/// `c_sync` is computed from the chain steady state with the decoherence mode
/// stored in `params`. `c_sync_closed_form` is the closed-form expression; the
/// two agree identically when decoherence is linearized.
pub fn coincidence_closed_form(params: &SystemParams) -> Result<SyncReport> {
    params.validate()?;
    let q = herald_prob(&params.source);
    let d = params.source.d;
    let belief = solve_belief(q, params.units, DEFAULT_TOL)?;
    let rates = chain_rates(q, belief.r, &params.memory);
    let p_occupancy = if rates.r + rates.s > 0.0 {
        steady_occupancy(&rates)?
    } else {
        0.0
    };
    let p_sync = q + (1.0 - q) * params.memory.eta_r * p_occupancy;
    // dark clicks carry no photon: the leading q becomes q - d
    let dark_scale = if q > 0.0 { (q - d) / q } else { 0.0 };
    let c_sync = (dark_scale * p_sync).powi(params.units as i32);
    let c_sync_closed_form = closed_form_coincidence(
        q,
        d,
        belief.r,
        params.memory.efficiency(),
        params.memory.time_bandwidth,
        params.units,
    );
    Ok(SyncReport {
        q,
        y: belief.y,
        r_ready: belief.r,
        v: belief.v,
        rates,
        p_occupancy,
        p_sync,
        c_sync,
        c_sync_closed_form,
        waiting_time: waiting_time(c_sync, params.pump_rate)?,
        multiple_roots: belief.multiple_roots(),
        fingerprint: params.fingerprint(),
    })
}

/// `(q eta B)^N`, the coincidence probability for weak sources and memories
/// far from saturation.
pub fn small_rate_limit(params: &SystemParams) -> f64 {
    let q = herald_prob(&params.source);
    (q * params.memory.efficiency() * params.memory.time_bandwidth).powi(params.units as i32)
}

pub fn waiting_time(c: f64, pump_rate: f64) -> Result<WaitingTime> {
    check_range("c", c, (0.0..=1.0).contains(&c), "0 <= c <= 1")?;
    check_range("pump_rate", pump_rate, pump_rate > 0.0, "pump_rate > 0")?;
    if c == 0.0 {
        Ok(WaitingTime::Infinite)
    } else {
        Ok(WaitingTime::Finite(1.0 / (pump_rate * c)))
    }
}
