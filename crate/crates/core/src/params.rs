//! Physical and numerical configuration of a source-memory array.

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Result};

/// Photon-number truncation used when none is given.
pub const DEFAULT_N_MAX: usize = 8;

/// How the per-pulse decoherence probability is derived from the
/// time-bandwidth product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoherenceMode {
    /// `b = 1/B`
    Linearized,
    /// `b = 1 - exp(-1/B)`
    #[default]
    Exact,
}

/// Pair source plus herald detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    /// Thermal emission parameter per pump pulse.
    pub p: f64,
    /// Herald detector efficiency.
    pub h: f64,
    /// Dark-count probability per pulse.
    pub d: f64,
}

impl SourceParams {
    pub fn new(p: f64, h: f64, d: f64) -> Result<Self> {
        let s = Self { p, h, d };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("source.p", self.p, (0.0..1.0).contains(&self.p), "0 <= p < 1")?;
        check_range("source.h", self.h, (0.0..=1.0).contains(&self.h), "0 <= h <= 1")?;
        check_range("source.d", self.d, (0.0..1.0).contains(&self.d), "0 <= d < 1")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryParams {
    /// Storage efficiency (includes any coupling loss from the source).
    pub eta_s: f64,
    /// Retrieval efficiency.
    pub eta_r: f64,
    /// Time-bandwidth product `B`.
    pub time_bandwidth: f64,
    pub decoherence: DecoherenceMode,
}

impl MemoryParams {
    pub fn new(eta_s: f64, eta_r: f64, time_bandwidth: f64, decoherence: DecoherenceMode) -> Result<Self> {
        let m = Self {
            eta_s,
            eta_r,
            time_bandwidth,
            decoherence,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("memory.eta_s", self.eta_s, (0.0..=1.0).contains(&self.eta_s), "0 <= eta_s <= 1")?;
        check_range("memory.eta_r", self.eta_r, (0.0..=1.0).contains(&self.eta_r), "0 <= eta_r <= 1")?;
        check_range("memory.B", self.time_bandwidth, self.time_bandwidth >= 1.0, "B >= 1")
    }

    /// Total memory efficiency `eta_s * eta_r`.
    pub fn efficiency(&self) -> f64 {
        self.eta_s * self.eta_r
    }

    pub fn with_decoherence(mut self, mode: DecoherenceMode) -> Self {
        self.decoherence = mode;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Number of source-memory units `N`.
    pub units: usize,
    /// Pump pulses per second.
    pub pump_rate: f64,
    pub source: SourceParams,
    pub memory: MemoryParams,
    /// Largest photon number kept in truncated distributions.
    pub n_max: usize,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        check_range("N", self.units as f64, self.units >= 1, "N >= 1")?;
        check_range("pump_rate", self.pump_rate, self.pump_rate > 0.0, "pump_rate > 0")?;
        check_range("n_max", self.n_max as f64, self.n_max >= 1, "n_max >= 1")?;
        self.source.validate()?;
        self.memory.validate()
    }

    /// Stable 64-bit FNV-1a hash of the canonical JSON encoding, used to
    /// check that simulated and analytic results describe the same system.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(self).expect("parameters serialize");
        text.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, byte| {
            (h ^ u64::from(byte)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}
