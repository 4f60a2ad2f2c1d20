//! JSON experiment configuration.
//!
//! Every key is optional. Missing keys take the defaults below (or the
//! preset's values when `"preset"` is given); unknown keys are rejected with
//! their path.
//!
//! ```json
//! {
//!   "preset": "fig2",
//!   "units": 2, "pump_rate": 1e9, "n_max": 8,
//!   "source": { "p": 0.01, "h": 0.5, "d": 0.0 },
//!   "memory": { "eta_s": 0.9, "eta_r": 0.9, "time_bandwidth": 1000, "decoherence": "exact" },
//!   "theta": 0.9, "fidelity_kind": "postselected", "denominator_mode": "normalized",
//!   "sim": { "steps": 1000000, "seed": 1, "replicas": 8, "warmup_steps": 10000 },
//!   "sweep": { "parameter": "p", "values": [0.001, 0.01] },
//!   "fig2": { "units_min": 2, "units_max": 12 }
//! }
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{check_range, ModelError, Result};
use crate::montecarlo::{default_warmup, SimConfig};
use crate::params::{DecoherenceMode, MemoryParams, SourceParams, SystemParams, DEFAULT_N_MAX};
use crate::resolved::{DenominatorMode, FidelityKind, ThresholdSearch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Analytic,
    Simulate,
    Fig2,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analytic => "analytic",
            Command::Simulate => "simulate",
            Command::Fig2 => "fig2",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Parameters of the multiphoton waiting-time figure.
    Fig2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    P,
    H,
    D,
    EtaS,
    EtaR,
    /// Sets `eta_s` and `eta_r` together.
    Eta,
    TimeBandwidth,
    Units,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::P => "p",
            SweepParameter::H => "h",
            SweepParameter::D => "d",
            SweepParameter::EtaS => "eta_s",
            SweepParameter::EtaR => "eta_r",
            SweepParameter::Eta => "eta",
            SweepParameter::TimeBandwidth => "time_bandwidth",
            SweepParameter::Units => "units",
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(&self, base: &SystemParams, value: f64) -> Result<SystemParams> {
        let mut p = *base;
        match self {
            SweepParameter::P => p.source.p = value,
            SweepParameter::H => p.source.h = value,
            SweepParameter::D => p.source.d = value,
            SweepParameter::EtaS => p.memory.eta_s = value,
            SweepParameter::EtaR => p.memory.eta_r = value,
            SweepParameter::Eta => {
                p.memory.eta_s = value;
                p.memory.eta_r = value;
            }
            SweepParameter::TimeBandwidth => p.memory.time_bandwidth = value,
            SweepParameter::Units => {
                check_range("sweep.values", value, value >= 1.0 && value.fract() == 0.0, "integer >= 1")?;
                p.units = value as usize;
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fig2Config {
    pub units_min: usize,
    pub units_max: usize,
    /// Memory efficiencies `(eta_s, eta_r)` of the postselected series.
    pub postselected_eta: (f64, f64),
    /// Memory efficiencies of the unpostselected series.
    pub unpostselected_eta: (f64, f64),
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            units_min: 2,
            units_max: 12,
            postselected_eta: (0.75, 0.75),
            unpostselected_eta: (0.99, 0.99),
        }
    }
}

/// Validated configuration with defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub params: SystemParams,
    pub theta: f64,
    pub fidelity_kind: FidelityKind,
    pub denominator_mode: DenominatorMode,
    pub sim: SimConfig,
    pub sweep: Option<SweepConfig>,
    pub fig2: Fig2Config,
    #[serde(skip)]
    pub search: ThresholdSearch,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let params = SystemParams {
            units: 2,
            pump_rate: 1e9,
            source: SourceParams { p: 0.01, h: 0.5, d: 0.0 },
            memory: MemoryParams {
                eta_s: 0.9,
                eta_r: 0.9,
                time_bandwidth: 1000.0,
                decoherence: DecoherenceMode::default(),
            },
            n_max: DEFAULT_N_MAX,
        };
        Self {
            sim: SimConfig {
                steps: 1_000_000,
                seed: 1,
                replicas: 8,
                warmup_steps: default_warmup(&params.memory),
            },
            params,
            theta: 0.9,
            fidelity_kind: FidelityKind::default(),
            denominator_mode: DenominatorMode::default(),
            sweep: None,
            fig2: Fig2Config::default(),
            search: ThresholdSearch::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Fig2 => {
                let mut cfg = Self::default();
                cfg.params.units = 12;
                cfg.params.source.h = 0.5;
                cfg.params.source.d = 0.0;
                cfg.params.pump_rate = 1e9;
                cfg.params.memory.eta_s = 0.75;
                cfg.params.memory.eta_r = 0.75;
                cfg.params.memory.time_bandwidth = 1000.0;
                cfg.theta = 0.9;
                cfg
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("units", self.params.units as f64, self.params.units >= 1, "units >= 1")?;
        self.params.validate()?;
        check_range("theta", self.theta, self.theta > 0.0 && self.theta <= 1.0, "0 < theta <= 1")?;
        self.sim.validate()?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(ModelError::InvalidConfig("sweep.values is empty".into()));
            }
            for &v in &sweep.values {
                sweep.parameter.apply(&self.params, v)?;
            }
        }
        let f = &self.fig2;
        check_range("fig2.units_min", f.units_min as f64, f.units_min >= 1, "units_min >= 1")?;
        check_range("fig2.units_max", f.units_max as f64, f.units_max >= f.units_min, "units_max >= units_min")?;
        for (name, (s, r)) in [("fig2.postselected_eta", f.postselected_eta), ("fig2.unpostselected_eta", f.unpostselected_eta)] {
            check_range(name, s, (0.0..=1.0).contains(&s), "0 <= eta_s <= 1")?;
            check_range(name, r, (0.0..=1.0).contains(&r), "0 <= eta_r <= 1")?;
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<Preset>,
    mode: Option<Command>,
    units: Option<usize>,
    pump_rate: Option<f64>,
    n_max: Option<usize>,
    source: Option<RawSource>,
    memory: Option<RawMemory>,
    theta: Option<f64>,
    fidelity_kind: Option<FidelityKind>,
    denominator_mode: Option<DenominatorMode>,
    sim: Option<RawSim>,
    sweep: Option<RawSweep>,
    fig2: Option<RawFig2>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    p: Option<f64>,
    h: Option<f64>,
    d: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMemory {
    eta_s: Option<f64>,
    eta_r: Option<f64>,
    time_bandwidth: Option<f64>,
    decoherence: Option<DecoherenceMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    steps: Option<u64>,
    seed: Option<u64>,
    replicas: Option<usize>,
    warmup_steps: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: SweepParameter,
    values: Option<Vec<f64>>,
    start: Option<f64>,
    stop: Option<f64>,
    points: Option<usize>,
    scale: Option<Scale>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFig2 {
    units_min: Option<usize>,
    units_max: Option<usize>,
    postselected_eta: Option<[f64; 2]>,
    unpostselected_eta: Option<[f64; 2]>,
}

impl RawSweep {
    fn resolve(self) -> Result<SweepConfig> {
        let values = match (self.values, self.start, self.stop, self.points) {
            (Some(values), None, None, None) => values,
            (None, Some(start), Some(stop), Some(points)) => {
                check_range("sweep.points", points as f64, points >= 1, "points >= 1")?;
                let scale = self.scale.unwrap_or(Scale::Linear);
                if scale == Scale::Log {
                    check_range("sweep.start", start, start > 0.0, "start > 0 on a log scale")?;
                    check_range("sweep.stop", stop, stop > 0.0, "stop > 0 on a log scale")?;
                }
                (0..points)
                    .map(|i| {
                        let t = if points == 1 { 0.0 } else { i as f64 / (points - 1) as f64 };
                        match scale {
                            Scale::Linear => start + (stop - start) * t,
                            Scale::Log => start * (stop / start).powf(t),
                        }
                    })
                    .collect()
            }
            _ => {
                return Err(ModelError::InvalidConfig(
                    "sweep needs either `values` or all of `start`, `stop`, `points`".into(),
                ))
            }
        };
        Ok(SweepConfig {
            parameter: self.parameter,
            values,
        })
    }
}

/// Parses and validates a configuration for `command`.
pub fn parse_config(text: &str, command: Command) -> Result<ExperimentConfig> {
    let raw: RawConfig = if text.trim().is_empty() {
        RawConfig::default()
    } else {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." || path.is_empty() {
                ModelError::InvalidConfig(inner.to_string())
            } else {
                ModelError::InvalidConfig(format!("{path}: {inner}"))
            }
        })?
    };
    if let Some(mode) = raw.mode {
        if mode != command {
            return Err(ModelError::InvalidConfig(format!(
                "mode: config is for `{}` but the command is `{}`",
                mode.name(),
                command.name()
            )));
        }
    }

    let mut cfg = raw.preset.map(ExperimentConfig::preset).unwrap_or_default();
    let p = &mut cfg.params;
    if let Some(v) = raw.units {
        p.units = v;
    }
    if let Some(v) = raw.pump_rate {
        p.pump_rate = v;
    }
    if let Some(v) = raw.n_max {
        p.n_max = v;
    }
    if let Some(s) = raw.source {
        p.source.p = s.p.unwrap_or(p.source.p);
        p.source.h = s.h.unwrap_or(p.source.h);
        p.source.d = s.d.unwrap_or(p.source.d);
    }
    let explicit_warmup = raw.sim.as_ref().and_then(|s| s.warmup_steps);
    if let Some(m) = raw.memory {
        p.memory.eta_s = m.eta_s.unwrap_or(p.memory.eta_s);
        p.memory.eta_r = m.eta_r.unwrap_or(p.memory.eta_r);
        p.memory.time_bandwidth = m.time_bandwidth.unwrap_or(p.memory.time_bandwidth);
        p.memory.decoherence = m.decoherence.unwrap_or(p.memory.decoherence);
    }
    cfg.theta = raw.theta.unwrap_or(cfg.theta);
    cfg.fidelity_kind = raw.fidelity_kind.unwrap_or(cfg.fidelity_kind);
    cfg.denominator_mode = raw.denominator_mode.unwrap_or(cfg.denominator_mode);
    if let Some(s) = raw.sim {
        cfg.sim.steps = s.steps.unwrap_or(cfg.sim.steps);
        cfg.sim.seed = s.seed.unwrap_or(cfg.sim.seed);
        cfg.sim.replicas = s.replicas.unwrap_or(cfg.sim.replicas);
    }
    cfg.sim.warmup_steps = explicit_warmup.unwrap_or_else(|| default_warmup(&cfg.params.memory));
    if let Some(s) = raw.sweep {
        cfg.sweep = Some(s.resolve()?);
    }
    if let Some(f) = raw.fig2 {
        let d = &mut cfg.fig2;
        d.units_min = f.units_min.unwrap_or(d.units_min);
        d.units_max = f.units_max.unwrap_or(d.units_max);
        if let Some([s, r]) = f.postselected_eta {
            d.postselected_eta = (s, r);
        }
        if let Some([s, r]) = f.unpostselected_eta {
            d.unpostselected_eta = (s, r);
        }
    }
    if command == Command::Sweep && cfg.sweep.is_none() {
        return Err(ModelError::InvalidConfig("sweep: section required for the sweep command".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("", Command::Analytic).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(parse_config("{}", Command::Analytic).unwrap(), cfg);
        assert_eq!(cfg.params.source.d, 0.0);
        assert_eq!(cfg.params.pump_rate, 1e9);
        assert_eq!(cfg.params.n_max, 8);
        assert_eq!(cfg.params.memory.decoherence, DecoherenceMode::Exact);
        assert_eq!(cfg.sim.warmup_steps, 10_000);
    }

    #[test]
    fn range_errors_name_the_key() {
        let err = parse_config(r#"{"source": {"h": 1.5}}"#, Command::Analytic).unwrap_err();
        assert!(err.to_string().contains("source.h"), "{err}");
        let err = parse_config(r#"{"memory": {"eta_r": -0.1}}"#, Command::Analytic).unwrap_err();
        assert!(err.to_string().contains("memory.eta_r"), "{err}");
        let err = parse_config(r#"{"units": 0}"#, Command::Analytic).unwrap_err();
        assert!(err.to_string().contains("units"), "{err}");
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected_with_paths() {
        let err = parse_config(r#"{"memory": {"eta": 0.5}}"#, Command::Analytic).unwrap_err();
        assert!(err.to_string().contains("memory"), "{err}");
        let err = parse_config(r#"{"source": {"p": "high"}}"#, Command::Analytic).unwrap_err();
        assert!(err.to_string().contains("source.p"), "{err}");
        assert!(parse_config("{", Command::Analytic).is_err());
        assert!(parse_config(r#"{"mode": "fig2"}"#, Command::Analytic).is_err());
    }

    #[test]
    fn fig2_preset_uses_figure_parameters() {
        let cfg = parse_config(r#"{"preset": "fig2"}"#, Command::Fig2).unwrap();
        assert_eq!(cfg.params.source.h, 0.5);
        assert_eq!(cfg.theta, 0.9);
        assert_eq!(cfg.params.memory.time_bandwidth, 1000.0);
        assert_eq!(cfg.params.pump_rate, 1e9);
        assert_eq!(cfg.fig2.postselected_eta, (0.75, 0.75));
        assert_eq!(cfg.fig2.unpostselected_eta, (0.99, 0.99));
        // explicit keys override the preset
        let cfg = parse_config(r#"{"preset": "fig2", "theta": 0.8}"#, Command::Fig2).unwrap();
        assert_eq!(cfg.theta, 0.8);
    }

    #[test]
    fn sweeps_expand_ranges() {
        let cfg = parse_config(
            r#"{"sweep": {"parameter": "time_bandwidth", "start": 10, "stop": 1000, "points": 3, "scale": "log"}}"#,
            Command::Sweep,
        )
        .unwrap();
        let values = cfg.sweep.unwrap().values;
        assert_eq!(values.len(), 3);
        assert!((values[1] - 100.0).abs() < 1e-9);
        assert!(parse_config("{}", Command::Sweep).is_err());
        assert!(parse_config(r#"{"sweep": {"parameter": "units", "values": [1.5]}}"#, Command::Sweep).is_err());
        assert!(parse_config(r#"{"sweep": {"parameter": "p", "values": [0.1], "points": 3}}"#, Command::Sweep).is_err());
    }
}
