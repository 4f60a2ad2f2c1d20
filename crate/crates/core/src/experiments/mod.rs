//! Experiment drivers behind the `memsync` command line: configuration,
//! CSV tables and the waiting-time bar chart.

mod config;
mod svg;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{
    parse_config, Command, ExperimentConfig, Fig2Config, Preset, Scale, SweepConfig, SweepParameter,
};
pub use svg::{fig2_svg, human_duration};

use crate::binary::{coincidence_closed_form, waiting_time};
use crate::dist::{herald_prob, heralded_dist};
use crate::error::Result;
use crate::montecarlo::{compare_to_analytic, run_simulation_with, Execution};
use crate::params::{DecoherenceMode, SystemParams};
use crate::resolved::{
    evaluate, threshold_p_sync, threshold_p_unsync, DenominatorMode, FidelityKind,
};

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub denominator_mode: Option<DenominatorMode>,
    pub decoherence: Option<DecoherenceMode>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.sim.seed = seed;
        }
        if let Some(mode) = self.denominator_mode {
            cfg.denominator_mode = mode;
        }
        if let Some(mode) = self.decoherence {
            cfg.params.memory.decoherence = mode;
        }
    }
}

/// A failure confined to one row of an output table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellError {
    pub cell: String,
    pub message: String,
}

/// Rendered outputs of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub command: Command,
    pub csv: String,
    pub svg: Option<String>,
    pub errors: Vec<CellError>,
}

impl Outcome {
    /// Writes `<command>.csv` (and `fig2.svg`) into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let csv_path = dir.join(format!("{}.csv", self.command.name()));
        fs::write(&csv_path, &self.csv)?;
        written.push(csv_path);
        if let Some(svg) = &self.svg {
            let svg_path = dir.join("fig2.svg");
            fs::write(&svg_path, svg)?;
            written.push(svg_path);
        }
        Ok(written)
    }

    /// Machine-readable summary for the diagnostic stream.
    pub fn error_summary(&self) -> String {
        serde_json::json!({ "command": self.command.name(), "errors": self.errors }).to_string()
    }
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    run_with(command, cfg, Execution::Parallel)
}

/// Like [`run`] with an explicit replica execution strategy for `simulate`.
pub fn run_with(command: Command, cfg: &ExperimentConfig, execution: Execution) -> Result<Outcome> {
    cfg.validate()?;
    match command {
        Command::Analytic => Ok(cmd_analytic(cfg)),
        Command::Sweep => Ok(cmd_sweep(cfg)),
        Command::Simulate => cmd_simulate(cfg, execution),
        Command::Fig2 => Ok(cmd_fig2(cfg)),
    }
}

/// Full-precision scientific notation.
fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    fn row(&mut self, fields: &[String]) {
        self.writer.write_record(fields).expect("in-memory write");
    }

    fn finish(self) -> String {
        String::from_utf8(self.writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

pub const ANALYTIC_HEADER: &[&str] = &[
    "units",
    "pump_rate",
    "p",
    "h",
    "d",
    "eta_s",
    "eta_r",
    "time_bandwidth",
    "decoherence",
    "denominator_mode",
    "q",
    "y",
    "r_ready",
    "v",
    "p_occupancy",
    "p_sync",
    "c_sync",
    "c_sync_closed_form",
    "c_exact",
    "p_less",
    "p_geq",
    "fidelity",
    "fidelity_postselected",
    "fidelity_no_memory",
    "waiting_time_s",
    "multiple_roots",
    "truncation_residual",
    "error",
];

fn decoherence_name(mode: DecoherenceMode) -> &'static str {
    match mode {
        DecoherenceMode::Linearized => "linearized",
        DecoherenceMode::Exact => "exact",
    }
}

/// One analytic row without the trailing error column, plus the error text.
fn analytic_fields(params: &SystemParams, mode: DenominatorMode) -> (Vec<String>, Option<String>) {
    let mut fields = vec![
        params.units.to_string(),
        num(params.pump_rate),
        num(params.source.p),
        num(params.source.h),
        num(params.source.d),
        num(params.memory.eta_s),
        num(params.memory.eta_r),
        num(params.memory.time_bandwidth),
        decoherence_name(params.memory.decoherence).to_string(),
        mode.name().to_string(),
    ];
    let mut errors = Vec::new();
    let sync = coincidence_closed_form(params).map_err(|e| errors.push(e.to_string())).ok();
    let fid = evaluate(params, mode).map_err(|e| errors.push(e.to_string())).ok();
    if let Some(fid) = &fid {
        errors.extend(fid.errors.iter().cloned());
    }
    let s = |f: fn(&crate::binary::SyncReport) -> f64| opt(sync.as_ref().map(f));
    let r = |f: fn(&crate::resolved::FidelityReport) -> Option<f64>| opt(fid.as_ref().and_then(f));
    fields.extend([
        s(|x| x.q),
        s(|x| x.y),
        s(|x| x.r_ready),
        s(|x| x.v),
        s(|x| x.p_occupancy),
        s(|x| x.p_sync),
        s(|x| x.c_sync),
        s(|x| x.c_sync_closed_form),
        r(|x| Some(x.c)),
        r(|x| Some(x.p_less)),
        r(|x| Some(x.p_geq)),
        r(|x| x.f),
        r(|x| x.f_tilde),
        r(|x| Some(x.f_no_mem)),
        r(|x| Some(x.waiting_time.seconds())),
        sync.map(|x| x.multiple_roots.to_string()).unwrap_or_default(),
        r(|x| Some(x.truncation_residual)),
    ]);
    let error = (!errors.is_empty()).then(|| errors.join("; "));
    (fields, error)
}

fn cmd_analytic(cfg: &ExperimentConfig) -> Outcome {
    let points: Vec<SystemParams> = match &cfg.sweep {
        Some(sweep) => sweep
            .values
            .iter()
            .map(|&v| sweep.parameter.apply(&cfg.params, v).expect("validated sweep"))
            .collect(),
        None => vec![cfg.params],
    };
    let mut table = Table::new(ANALYTIC_HEADER);
    let mut errors = Vec::new();
    for (i, params) in points.iter().enumerate() {
        let (mut fields, error) = analytic_fields(params, cfg.denominator_mode);
        if let Some(message) = &error {
            errors.push(CellError {
                cell: format!("row {i}"),
                message: message.clone(),
            });
        }
        fields.push(error.unwrap_or_default());
        table.row(&fields);
    }
    Outcome {
        command: Command::Analytic,
        csv: table.finish(),
        svg: None,
        errors,
    }
}

pub const SWEEP_EXTRA_HEADER: &[&str] = &[
    "theta",
    "fidelity_kind",
    "p_theta",
    "fidelity_at_p_theta",
    "waiting_time_at_p_theta_s",
    "non_monotone",
    "hit_upper_bound",
];

fn kind_name(kind: FidelityKind) -> &'static str {
    match kind {
        FidelityKind::Postselected => "postselected",
        FidelityKind::Unpostselected => "unpostselected",
    }
}

/// Analytic rows over the sweep values, each with the threshold source
/// parameter at which the configured fidelity reaches `theta`.
fn cmd_sweep(cfg: &ExperimentConfig) -> Outcome {
    let sweep = cfg.sweep.as_ref().expect("sweep section validated");
    let mut header = vec!["sweep_parameter", "sweep_value"];
    header.extend(&ANALYTIC_HEADER[..ANALYTIC_HEADER.len() - 1]);
    header.extend(SWEEP_EXTRA_HEADER);
    header.push("error");
    let mut table = Table::new(&header);
    let mut errors = Vec::new();
    for &value in &sweep.values {
        let params = sweep.parameter.apply(&cfg.params, value).expect("validated sweep");
        let mut fields = vec![sweep.parameter.name().to_string(), num(value)];
        let (analytic, mut error) = analytic_fields(&params, cfg.denominator_mode);
        fields.extend(analytic);
        fields.push(num(cfg.theta));
        fields.push(kind_name(cfg.fidelity_kind).to_string());
        match threshold_p_sync(&params, cfg.theta, cfg.fidelity_kind, cfg.denominator_mode, cfg.search) {
            Ok(res) => fields.extend([
                num(res.p_theta),
                num(res.fidelity),
                num(res.report.waiting_time.seconds()),
                res.non_monotone.to_string(),
                res.hit_upper_bound.to_string(),
            ]),
            Err(e) => {
                fields.extend(std::iter::repeat_n(String::new(), 5));
                let msg = format!("threshold: {e}");
                error = Some(match error {
                    Some(prev) => format!("{prev}; {msg}"),
                    None => msg,
                });
            }
        }
        if let Some(message) = &error {
            errors.push(CellError {
                cell: format!("{}={}", sweep.parameter.name(), num(value)),
                message: message.clone(),
            });
        }
        fields.push(error.unwrap_or_default());
        table.row(&fields);
    }
    Outcome {
        command: Command::Sweep,
        csv: table.finish(),
        svg: None,
        errors,
    }
}

pub const SIMULATE_HEADER: &[&str] =
    &["quantity", "simulated", "std_error", "analytic", "rel_deviation", "z_score", "within_3se"];

fn cmd_simulate(cfg: &ExperimentConfig, execution: Execution) -> Result<Outcome> {
    let stats = run_simulation_with(&cfg.params, &cfg.sim, execution)?;
    let sync = coincidence_closed_form(&cfg.params)?;
    let fid = evaluate(&cfg.params, cfg.denominator_mode)?;
    let mut table = Table::new(SIMULATE_HEADER);
    let herald = crate::montecarlo::Discrepancy::new("herald_rate", stats.herald_rate, sync.q);
    for d in std::iter::once(herald).chain(compare_to_analytic(&stats, &sync, &fid)?) {
        table.row(&[
            d.quantity.to_string(),
            num(d.simulated),
            num(d.std_error),
            num(d.analytic),
            num(d.rel_deviation),
            num(d.z_score),
            d.within(3.0).to_string(),
        ]);
    }
    let t = &stats.totals;
    for (name, count) in [
        ("pulses", t.pulses),
        ("readout_events", t.readout_events),
        ("exact_coincidences", t.exact_coincidences),
        ("geq_coincidences", t.geq_coincidences),
        ("heralds", t.heralds),
        ("photons_delivered", t.photons_delivered),
        ("photons_available", t.photons_available),
    ] {
        let mut row = vec![name.to_string(), count.to_string()];
        row.extend(std::iter::repeat_n(String::new(), 5));
        table.row(&row);
    }
    Ok(Outcome {
        command: Command::Simulate,
        csv: table.finish(),
        svg: None,
        errors: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    Unsynchronized,
    Postselected,
    Unpostselected,
}

impl Series {
    pub const ALL: [Series; 3] = [Series::Unsynchronized, Series::Postselected, Series::Unpostselected];

    pub fn name(&self) -> &'static str {
        match self {
            Series::Unsynchronized => "unsynchronized",
            Series::Postselected => "postselected",
            Series::Unpostselected => "unpostselected",
        }
    }
}

/// One bar of the waiting-time figure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig2Row {
    pub series: Series,
    pub units: usize,
    pub p_theta: Option<f64>,
    pub q: Option<f64>,
    pub fidelity: Option<f64>,
    pub c: Option<f64>,
    pub waiting_time_s: Option<f64>,
    pub non_monotone: bool,
    pub hit_upper_bound: bool,
    pub error: Option<String>,
}

pub const FIG2_HEADER: &[&str] = &[
    "series",
    "units",
    "p_theta",
    "q",
    "fidelity",
    "c",
    "waiting_time_s",
    "waiting_time_human",
    "non_monotone",
    "hit_upper_bound",
    "error",
];

impl Fig2Row {
    fn failed(series: Series, units: usize, error: String) -> Self {
        Self {
            series,
            units,
            p_theta: None,
            q: None,
            fidelity: None,
            c: None,
            waiting_time_s: None,
            non_monotone: false,
            hit_upper_bound: false,
            error: Some(error),
        }
    }
}

/// Memoryless array at the largest `p` whose single-photon fraction reaches
/// `theta`: every unit must herald on the same pulse.
fn unsync_cell(params: &SystemParams, theta: f64) -> Result<Fig2Row> {
    let p = threshold_p_unsync(params.source.h, theta)?;
    let mut source = params.source;
    source.p = p;
    let q = herald_prob(&source);
    let fidelity = heralded_dist(&source, params.n_max)?.get(1);
    let c = (q * fidelity).powi(params.units as i32);
    Ok(Fig2Row {
        series: Series::Unsynchronized,
        units: params.units,
        p_theta: Some(p),
        q: Some(q),
        fidelity: Some(fidelity),
        c: Some(c),
        waiting_time_s: Some(waiting_time(c, params.pump_rate)?.seconds()),
        non_monotone: false,
        hit_upper_bound: false,
        error: None,
    })
}

fn sync_cell(params: &SystemParams, cfg: &ExperimentConfig, series: Series) -> Result<Fig2Row> {
    let (kind, (eta_s, eta_r)) = match series {
        Series::Postselected => (FidelityKind::Postselected, cfg.fig2.postselected_eta),
        _ => (FidelityKind::Unpostselected, cfg.fig2.unpostselected_eta),
    };
    let mut local = *params;
    local.memory.eta_s = eta_s;
    local.memory.eta_r = eta_r;
    let res = threshold_p_sync(&local, cfg.theta, kind, cfg.denominator_mode, cfg.search)?;
    Ok(Fig2Row {
        series,
        units: params.units,
        p_theta: Some(res.p_theta),
        q: Some(res.report.q),
        fidelity: Some(res.fidelity),
        c: Some(res.report.c),
        waiting_time_s: Some(res.report.waiting_time.seconds()),
        non_monotone: res.non_monotone,
        hit_upper_bound: res.hit_upper_bound,
        error: None,
    })
}

/// All bars of the waiting-time figure, ordered by `N` then series.
pub fn fig2_rows(cfg: &ExperimentConfig) -> Vec<Fig2Row> {
    let mut rows = Vec::new();
    for units in cfg.fig2.units_min..=cfg.fig2.units_max {
        let mut params = cfg.params;
        params.units = units;
        for series in Series::ALL {
            let cell = match series {
                Series::Unsynchronized => unsync_cell(&params, cfg.theta),
                _ => sync_cell(&params, cfg, series),
            };
            rows.push(cell.unwrap_or_else(|e| Fig2Row::failed(series, units, e.to_string())));
        }
    }
    rows
}

fn cmd_fig2(cfg: &ExperimentConfig) -> Outcome {
    let rows = fig2_rows(cfg);
    let mut table = Table::new(FIG2_HEADER);
    let mut errors = Vec::new();
    for row in &rows {
        table.row(&[
            row.series.name().to_string(),
            row.units.to_string(),
            opt(row.p_theta),
            opt(row.q),
            opt(row.fidelity),
            opt(row.c),
            opt(row.waiting_time_s),
            row.waiting_time_s.map(human_duration).unwrap_or_default(),
            row.non_monotone.to_string(),
            row.hit_upper_bound.to_string(),
            row.error.clone().unwrap_or_default(),
        ]);
        if let Some(message) = &row.error {
            errors.push(CellError {
                cell: format!("{} N={}", row.series.name(), row.units),
                message: message.clone(),
            });
        }
    }
    Outcome {
        command: Command::Fig2,
        csv: table.finish(),
        svg: Some(fig2_svg(&rows, cfg.theta)),
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(csv: &str, name: &str) -> Vec<String> {
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        let idx = reader.headers().unwrap().iter().position(|h| h == name).unwrap();
        reader.records().map(|r| r.unwrap()[idx].to_string()).collect()
    }

    #[test]
    fn analytic_single_unit_reports_q() {
        let cfg = parse_config(r#"{"units": 1, "source": {"p": 0.05}}"#, Command::Analytic).unwrap();
        let out = run(Command::Analytic, &cfg).unwrap();
        let q: f64 = column(&out.csv, "q")[0].parse().unwrap();
        let c: f64 = column(&out.csv, "c_sync")[0].parse().unwrap();
        assert!((c - q).abs() <= 1e-15);
        assert!(out.errors.is_empty());
        assert_eq!(out.csv.lines().next().unwrap(), ANALYTIC_HEADER.join(","));
    }

    #[test]
    fn analytic_without_memory_gives_bare_coincidence() {
        let cfg = parse_config(r#"{"units": 3, "memory": {"eta_s": 0.0}}"#, Command::Analytic).unwrap();
        let out = run(Command::Analytic, &cfg).unwrap();
        let q: f64 = column(&out.csv, "q")[0].parse().unwrap();
        let c: f64 = column(&out.csv, "c_sync")[0].parse().unwrap();
        assert!((c - q.powi(3)).abs() <= 1e-15 * c);
    }

    #[test]
    fn analytic_sweep_over_b_is_monotone() {
        let cfg = parse_config(
            r#"{"units": 4, "sweep": {"parameter": "time_bandwidth", "start": 1, "stop": 1e5, "points": 12, "scale": "log"}}"#,
            Command::Analytic,
        )
        .unwrap();
        let out = run(Command::Analytic, &cfg).unwrap();
        let c: Vec<f64> = column(&out.csv, "c_sync").iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(c.len(), 12);
        assert!(c.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn paper_literal_denominator_errors_are_reported_per_row() {
        let cfg = parse_config(r#"{"units": 3, "denominator_mode": "paper_literal"}"#, Command::Analytic).unwrap();
        let out = run(Command::Analytic, &cfg).unwrap();
        assert_eq!(out.errors.len(), 1);
        assert!(column(&out.csv, "error")[0].contains("paper_literal"));
        assert!(column(&out.csv, "fidelity_postselected")[0].is_empty());
        let summary: serde_json::Value = serde_json::from_str(&out.error_summary()).unwrap();
        assert_eq!(summary["command"], "analytic");
    }

    #[test]
    fn simulate_is_reproducible_and_tracks_storage() {
        let cfg = parse_config(
            r#"{"memory": {"eta_s": 0.0, "time_bandwidth": 10}, "source": {"p": 0.1}, "sim": {"steps": 20000, "replicas": 3}}"#,
            Command::Simulate,
        )
        .unwrap();
        let a = run_with(Command::Simulate, &cfg, Execution::Serial).unwrap();
        let b = run_with(Command::Simulate, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a.csv, b.csv);
        let quantities = column(&a.csv, "quantity");
        let sims = column(&a.csv, "simulated");
        let occ = quantities.iter().position(|q| q == "occupancy").unwrap();
        assert_eq!(sims[occ].parse::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn sweep_adds_threshold_columns() {
        let cfg = parse_config(
            r#"{"units": 2, "memory": {"eta_s": 0.9, "eta_r": 0.9}, "sweep": {"parameter": "units", "values": [2, 3]}}"#,
            Command::Sweep,
        )
        .unwrap();
        let out = run(Command::Sweep, &cfg).unwrap();
        let p: Vec<f64> = column(&out.csv, "p_theta").iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|&x| x > 0.0 && x < 0.5));
        assert_eq!(column(&out.csv, "units"), ["2", "3"]);
    }

    #[test]
    fn fig2_small_range_emits_every_cell() {
        let cfg = parse_config(r#"{"preset": "fig2", "fig2": {"units_min": 3, "units_max": 4}}"#, Command::Fig2).unwrap();
        let out = run(Command::Fig2, &cfg).unwrap();
        assert_eq!(out.csv.lines().count(), 1 + 6);
        let svg = out.svg.unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg, fig2_svg(&fig2_rows(&cfg), cfg.theta));
        // from three units on, synchronization beats waiting for simultaneous heralds
        let rows = fig2_rows(&cfg);
        for chunk in rows.chunks(3) {
            let unsync = chunk[0].waiting_time_s.unwrap();
            assert!(chunk[1].waiting_time_s.unwrap() < unsync);
            assert!(chunk[2].waiting_time_s.unwrap() < unsync);
        }
    }
}
