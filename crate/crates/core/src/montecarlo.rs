//! Pulse-by-pulse simulation of the synchronization protocol.
//!
//! Every unit draws a thermal pair number, heralds through a lossy detector
//! with dark counts, and keeps its stored photons subject to decoherence. The
//! controller fires a readout when every unit is either believed charged or
//! heralding on the current pulse; heralding units then bypass their memories
//! and the others are read out. Without a readout, heralding units clean their
//! memory and store the new photons.
//!
//! Replicas use independent ChaCha streams keyed by `(seed, replica)`, so
//! results do not depend on how replicas are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric, weighted::WeightedIndex};
use rayon::prelude::*;
use serde::Serialize;

use crate::binary::SyncReport;
use crate::dist::{click_prob, decoherence_step_prob, ProbDist};
use crate::error::{ModelError, Result};
use crate::params::{MemoryParams, SystemParams};
use crate::resolved::FidelityReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Pump pulses per replica, warmup included.
    pub steps: u64,
    pub seed: u64,
    pub replicas: usize,
    /// Leading pulses excluded from the counters.
    pub warmup_steps: u64,
}

impl SimConfig {
    /// Config with the warmup set to ten memory lifetimes.
    pub fn with_default_warmup(params: &SystemParams, steps: u64, seed: u64, replicas: usize) -> Self {
        Self {
            steps,
            seed,
            replicas,
            warmup_steps: default_warmup(&params.memory),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(ModelError::InvalidConfig("replicas must be at least 1".into()));
        }
        if self.steps <= self.warmup_steps {
            return Err(ModelError::InvalidConfig(format!(
                "steps ({}) must exceed warmup_steps ({})",
                self.steps, self.warmup_steps
            )));
        }
        Ok(())
    }

    pub fn counted_steps(&self) -> u64 {
        self.steps - self.warmup_steps
    }
}

/// Ten time-bandwidth products, capped so that huge `B` stays runnable.
pub fn default_warmup(memory: &MemoryParams) -> u64 {
    (10.0 * memory.time_bandwidth).min(1e7).ceil() as u64
}

/// Serial or rayon-parallel replica execution; results are identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Per-unit transitions `k -> j` of the stored photon number, split by what
/// happened on the pulse. Photon numbers above `dim - 1` share the top bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransitionTally {
    pub dim: usize,
    /// No readout, no herald: decoherence only.
    pub idle: Vec<u64>,
    /// No readout, herald: clean and store.
    pub store: Vec<u64>,
    /// Readout with a herald on this unit: memory bypassed, decoherence only.
    pub bypass: Vec<u64>,
    /// Readout of this unit's memory.
    pub readout: Vec<u64>,
}

impl TransitionTally {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            idle: vec![0; dim * dim],
            store: vec![0; dim * dim],
            bypass: vec![0; dim * dim],
            readout: vec![0; dim * dim],
        }
    }

    fn bin(&self, n: u64) -> usize {
        (n as usize).min(self.dim - 1)
    }

    /// Count stored as `[from * dim + to]`.
    pub fn count(counts: &[u64], dim: usize, from: usize, to: usize) -> u64 {
        counts[from * dim + to]
    }

    /// Total transitions out of `from`.
    pub fn visits(counts: &[u64], dim: usize, from: usize) -> u64 {
        counts[from * dim..(from + 1) * dim].iter().sum()
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in [
            (&mut self.idle, &other.idle),
            (&mut self.store, &other.store),
            (&mut self.bypass, &other.bypass),
            (&mut self.readout, &other.readout),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Raw counters of one replica, accumulated after warmup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub pulses: u64,
    pub unit_pulses: u64,
    pub heralds: u64,
    /// Unit-pulses ending with at least one stored photon.
    pub charged: u64,
    /// Unit-pulses ending with the memory believed charged.
    pub believed: u64,
    pub readout_events: u64,
    /// Readouts delivering exactly one photon in every mode.
    pub exact_coincidences: u64,
    /// Readouts delivering at least `N` photons in total.
    pub geq_coincidences: u64,
    pub photons_delivered: u64,
    /// Stored plus fresh photons present at readouts.
    pub photons_available: u64,
    pub transitions: TransitionTally,
}

impl Counters {
    fn new(dim: usize) -> Self {
        Self {
            pulses: 0,
            unit_pulses: 0,
            heralds: 0,
            charged: 0,
            believed: 0,
            readout_events: 0,
            exact_coincidences: 0,
            geq_coincidences: 0,
            photons_delivered: 0,
            photons_available: 0,
            transitions: TransitionTally::new(dim),
        }
    }

    fn merge(&mut self, other: &Self) {
        self.pulses += other.pulses;
        self.unit_pulses += other.unit_pulses;
        self.heralds += other.heralds;
        self.charged += other.charged;
        self.believed += other.believed;
        self.readout_events += other.readout_events;
        self.exact_coincidences += other.exact_coincidences;
        self.geq_coincidences += other.geq_coincidences;
        self.photons_delivered += other.photons_delivered;
        self.photons_available += other.photons_available;
        self.transitions.merge(&other.transitions);
    }
}

/// Mean of a per-pulse rate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Mean and standard error over replicas; a single replica falls back
    /// to the binomial error over `trials`.
    fn from_replicas(rates: &[f64], trials: u64) -> Self {
        let n = rates.len() as f64;
        let mean = rates.iter().sum::<f64>() / n;
        let std_error = if rates.len() > 1 {
            let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            (mean * (1.0 - mean) / trials as f64).sqrt()
        };
        Self { mean, std_error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    pub fingerprint: u64,
    pub replicas: usize,
    /// Actual fraction of unit-pulses with a charged memory.
    pub occupancy_actual: Estimate,
    /// Fraction of unit-pulses with a memory believed charged.
    pub occupancy_believed: Estimate,
    /// Herald clicks per unit-pulse.
    pub herald_rate: Estimate,
    /// Readouts per pulse.
    pub readout_rate: Estimate,
    /// Exact N-fold coincidences per pulse.
    pub exact_rate: Estimate,
    /// Readouts with at least N photons per pulse.
    pub geq_rate: Estimate,
    /// Sums over all replicas.
    pub totals: Counters,
}

impl SimStats {
    pub fn readout_events(&self) -> u64 {
        self.totals.readout_events
    }

    pub fn exact_coincidences(&self) -> u64 {
        self.totals.exact_coincidences
    }

    pub fn geq_coincidences(&self) -> u64 {
        self.totals.geq_coincidences
    }
}

pub fn run_simulation(params: &SystemParams, cfg: &SimConfig) -> Result<SimStats> {
    run_simulation_with(params, cfg, Execution::Parallel)
}

pub fn run_simulation_with(params: &SystemParams, cfg: &SimConfig, execution: Execution) -> Result<SimStats> {
    params.validate()?;
    cfg.validate()?;
    let replicas: Vec<Counters> = match execution {
        Execution::Serial => (0..cfg.replicas).map(|r| run_replica(params, cfg, r)).collect(),
        Execution::Parallel => (0..cfg.replicas)
            .into_par_iter()
            .map(|r| run_replica(params, cfg, r))
            .collect(),
    };

    let per_unit = cfg.counted_steps() * params.units as u64;
    let per_pulse = cfg.counted_steps();
    let estimate = |f: &dyn Fn(&Counters) -> u64, trials: u64| {
        let rates: Vec<f64> = replicas.iter().map(|c| f(c) as f64 / trials as f64).collect();
        Estimate::from_replicas(&rates, trials * replicas.len() as u64)
    };

    let mut totals = Counters::new(params.n_max + 1);
    for c in &replicas {
        totals.merge(c);
    }
    Ok(SimStats {
        fingerprint: params.fingerprint(),
        replicas: cfg.replicas,
        occupancy_actual: estimate(&|c| c.charged, per_unit),
        occupancy_believed: estimate(&|c| c.believed, per_unit),
        herald_rate: estimate(&|c| c.heralds, per_unit),
        readout_rate: estimate(&|c| c.readout_events, per_pulse),
        exact_rate: estimate(&|c| c.exact_coincidences, per_pulse),
        geq_rate: estimate(&|c| c.geq_coincidences, per_pulse),
        totals,
    })
}

fn replica_rng(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

fn thin<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    match n {
        0 => 0,
        1 => u64::from(rng.random::<f64>() < p),
        _ => Binomial::new(n, p).expect("valid binomial").sample(rng),
    }
}

fn run_replica(params: &SystemParams, cfg: &SimConfig, replica: usize) -> Counters {
    let mut rng = replica_rng(cfg.seed, replica);
    let units = params.units;
    let source = params.source;
    let memory = params.memory;
    let survive = 1.0 - decoherence_step_prob(&memory);
    let pairs = Geometric::new(1.0 - source.p).expect("p < 1");
    // click probability per pair number, extended on demand
    let mut click: Vec<f64> = (0..=params.n_max as u64 + 4).map(|n| click_prob(&source, n as usize)).collect();

    let mut counters = Counters::new(params.n_max + 1);
    let mut stored = vec![0u64; units];
    let mut believed = vec![false; units];
    let mut fresh = vec![0u64; units];
    let mut herald = vec![false; units];
    let mut before = vec![0u64; units];

    for step in 0..cfg.steps {
        let counting = step >= cfg.warmup_steps;
        for u in 0..units {
            let n = pairs.sample(&mut rng);
            while click.len() <= n as usize {
                click.push(click_prob(&source, click.len()));
            }
            fresh[u] = n;
            herald[u] = rng.random::<f64>() < click[n as usize];
            before[u] = stored[u];
            stored[u] = thin(&mut rng, stored[u], survive);
        }

        let trigger = (0..units).all(|u| believed[u] || herald[u]);
        if trigger {
            let mut total = 0;
            let mut available = 0;
            let mut all_single = true;
            for u in 0..units {
                let out = if herald[u] {
                    available += fresh[u];
                    fresh[u]
                } else {
                    available += stored[u];
                    let out = thin(&mut rng, stored[u], memory.eta_r);
                    stored[u] = 0;
                    believed[u] = false;
                    out
                };
                debug_assert!(out <= available);
                all_single &= out == 1;
                total += out;
            }
            if counting {
                counters.readout_events += 1;
                counters.exact_coincidences += u64::from(all_single);
                counters.geq_coincidences += u64::from(total >= units as u64);
                counters.photons_delivered += total;
                counters.photons_available += available;
            }
        } else {
            for u in (0..units).filter(|&u| herald[u]) {
                stored[u] = thin(&mut rng, fresh[u], memory.eta_s);
                believed[u] = true;
            }
        }

        if counting {
            counters.pulses += 1;
            counters.unit_pulses += units as u64;
            let tally = &mut counters.transitions;
            let dim = tally.dim;
            for u in 0..units {
                counters.heralds += u64::from(herald[u]);
                counters.charged += u64::from(stored[u] > 0);
                counters.believed += u64::from(believed[u]);
                let (from, to) = (tally.bin(before[u]), tally.bin(stored[u]));
                let class = match (trigger, herald[u]) {
                    (false, false) => &mut tally.idle,
                    (false, true) => &mut tally.store,
                    (true, true) => &mut tally.bypass,
                    (true, false) => &mut tally.readout,
                };
                class[from * dim + to] += 1;
            }
        }
    }
    counters
}

/// Transition counts of a single memory driven by independent herald and
/// readiness draws, the setting assumed by the number-resolved transfer
/// matrix. Counts are stored as `[from * dim + to]`.
pub fn simulate_single_memory(
    q: f64,
    r_ready: f64,
    memory: &MemoryParams,
    p_h: &ProbDist,
    steps: u64,
    seed: u64,
) -> Result<Vec<u64>> {
    memory.validate()?;
    let dim = p_h.len();
    let photons = WeightedIndex::new(p_h.weights())
        .map_err(|e| ModelError::InvalidConfig(format!("heralded distribution: {e}")))?;
    let survive = 1.0 - decoherence_step_prob(memory);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; dim * dim];
    let mut stored: u64 = 0;
    for _ in 0..steps {
        let from = stored;
        let heralded = rng.random::<f64>() < q;
        let ready = rng.random::<f64>() < r_ready;
        stored = match (ready, heralded) {
            (true, false) => 0,
            (false, true) => {
                let n = photons.sample(&mut rng) as u64;
                thin(&mut rng, n, memory.eta_s)
            }
            _ => thin(&mut rng, stored, survive),
        };
        let bin = |n: u64| (n as usize).min(dim - 1);
        counts[bin(from) * dim + bin(stored)] += 1;
    }
    Ok(counts)
}

/// One row of the simulation-versus-model comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub quantity: &'static str,
    pub simulated: f64,
    pub std_error: f64,
    pub analytic: f64,
    /// `(simulated - analytic) / analytic`.
    pub rel_deviation: f64,
    /// `(simulated - analytic) / std_error`.
    pub z_score: f64,
}

impl Discrepancy {
    pub fn new(quantity: &'static str, est: Estimate, analytic: f64) -> Self {
        let diff = est.mean - analytic;
        let ratio = |num: f64, den: f64| {
            if num == 0.0 {
                0.0
            } else if den == 0.0 {
                num.signum() * f64::INFINITY
            } else {
                num / den
            }
        };
        Self {
            quantity,
            simulated: est.mean,
            std_error: est.std_error,
            analytic,
            rel_deviation: ratio(diff, analytic),
            z_score: ratio(diff, est.std_error),
        }
    }

    pub fn within(&self, sigmas: f64) -> bool {
        self.z_score.abs() <= sigmas
    }
}

/// Lines up simulated rates with the mean-field predictions for the same
/// parameters.
pub fn compare_to_analytic(stats: &SimStats, report: &SyncReport, fid: &FidelityReport) -> Result<Vec<Discrepancy>> {
    for other in [report.fingerprint, fid.fingerprint] {
        if other != stats.fingerprint {
            return Err(ModelError::FingerprintMismatch(stats.fingerprint, other));
        }
    }
    Ok(vec![
        Discrepancy::new("occupancy", stats.occupancy_actual, report.p_occupancy),
        Discrepancy::new("believed_occupancy", stats.occupancy_believed, report.v),
        Discrepancy::new("readout_rate", stats.readout_rate, report.r_ready * report.y),
        Discrepancy::new("exact_coincidence_rate", stats.exact_rate, fid.c),
        Discrepancy::new("geq_n_rate", stats.geq_rate, fid.p_geq),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binary::coincidence_closed_form;
    use crate::dist::{binomial_coefficient, binomial_loss, herald_prob, heralded_dist};
    use crate::params::{DecoherenceMode, SourceParams};
    use crate::resolved::{evaluate, DenominatorMode};

    fn params(units: usize, p: f64, eta: (f64, f64), b: f64) -> SystemParams {
        SystemParams {
            units,
            pump_rate: 1e9,
            source: SourceParams::new(p, 0.6, 0.0).unwrap(),
            memory: MemoryParams::new(eta.0, eta.1, b, DecoherenceMode::Exact).unwrap(),
            n_max: 6,
        }
    }

    fn cfg(steps: u64, replicas: usize) -> SimConfig {
        SimConfig {
            steps,
            seed: 7,
            replicas,
            warmup_steps: 1000,
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let p = params(2, 0.05, (0.8, 0.8), 100.0);
        assert!(run_simulation(&p, &SimConfig { steps: 10, seed: 0, replicas: 1, warmup_steps: 10 }).is_err());
        assert!(run_simulation(&p, &SimConfig { steps: 100, seed: 0, replicas: 0, warmup_steps: 0 }).is_err());
    }

    #[test]
    fn serial_and_parallel_agree_bitwise() {
        let p = params(3, 0.05, (0.8, 0.9), 200.0);
        let c = cfg(20_000, 5);
        let a = run_simulation_with(&p, &c, Execution::Serial).unwrap();
        let b = run_simulation_with(&p, &c, Execution::Parallel).unwrap();
        let again = run_simulation_with(&p, &c, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, again);
        let other = run_simulation(&p, &SimConfig { seed: 8, ..c }).unwrap();
        assert_ne!(a.totals, other.totals);
    }

    #[test]
    fn counters_are_ordered_and_photons_conserved() {
        let p = params(3, 0.2, (0.9, 0.9), 50.0);
        let s = run_simulation(&p, &cfg(50_000, 2)).unwrap();
        let t = &s.totals;
        assert!(t.exact_coincidences <= t.geq_coincidences);
        assert!(t.geq_coincidences <= t.readout_events);
        assert!(t.photons_delivered <= t.photons_available);
        assert!(t.readout_events > 0);
        for e in [s.occupancy_actual, s.occupancy_believed, s.readout_rate, s.exact_rate, s.geq_rate] {
            assert!((0.0..=1.0).contains(&e.mean));
        }
    }

    #[test]
    fn silent_sources_do_nothing() {
        let p = params(2, 0.0, (0.8, 0.8), 100.0);
        let s = run_simulation(&p, &cfg(10_000, 2)).unwrap();
        let t = &s.totals;
        assert_eq!(
            (t.heralds, t.charged, t.believed, t.readout_events, t.geq_coincidences, t.photons_delivered),
            (0, 0, 0, 0, 0, 0)
        );
    }

    #[test]
    fn single_unit_reads_out_on_every_herald() {
        let p = params(1, 0.1, (0.8, 0.8), 100.0);
        let s = run_simulation(&p, &cfg(200_000, 4)).unwrap();
        let q = herald_prob(&p.source);
        assert_eq!(s.totals.readout_events, s.totals.heralds);
        assert_eq!(s.totals.charged, 0);
        assert!((s.readout_rate.mean - q).abs() <= 3.0 * s.readout_rate.std_error);
        assert!(s.totals.transitions.readout.iter().all(|&c| c == 0));
    }

    #[test]
    fn no_storage_reduces_to_simultaneous_heralds() {
        let p = params(2, 0.3, (0.0, 0.9), 100.0);
        let s = run_simulation(&p, &cfg(400_000, 8)).unwrap();
        assert_eq!(s.totals.charged, 0);
        let p_h = heralded_dist(&p.source, 40).unwrap();
        let single = herald_prob(&p.source) * p_h.get(1);
        let expected = single * single;
        let z = (s.exact_rate.mean - expected) / s.exact_rate.std_error;
        assert!(z.abs() <= 3.0, "{} vs {expected} (z = {z})", s.exact_rate.mean);
    }

    #[test]
    fn idle_and_store_transitions_follow_the_kernels() {
        let p = params(3, 0.15, (0.7, 0.9), 20.0);
        let s = run_simulation(&p, &cfg(300_000, 4)).unwrap();
        let tally = &s.totals.transitions;
        let dim = tally.dim;
        let b = decoherence_step_prob(&p.memory);
        let p_s = binomial_loss(&heralded_dist(&p.source, 60).unwrap(), p.memory.eta_s);
        for from in 0..dim - 1 {
            for (counts, kernel) in [
                (&tally.idle, Box::new(|j: usize| if j <= from { binomial_coefficient(from, j) * (1.0 - b).powi(j as i32) * b.powi((from - j) as i32) } else { 0.0 }) as Box<dyn Fn(usize) -> f64>),
                (&tally.store, Box::new(|j: usize| p_s.get(j))),
            ] {
                let visits = TransitionTally::visits(counts, dim, from);
                if visits < 500 {
                    continue;
                }
                for to in 0..dim - 1 {
                    let expected = kernel(to);
                    let observed = TransitionTally::count(counts, dim, from, to) as f64 / visits as f64;
                    let se = (expected * (1.0 - expected) / visits as f64).sqrt().max(1e-12);
                    assert!((observed - expected).abs() <= 4.0 * se, "{from}->{to}: {observed} vs {expected}");
                }
            }
        }
    }

    #[test]
    fn identical_inputs_compare_to_zero() {
        let p = params(2, 0.05, (0.8, 0.8), 100.0);
        let rep = coincidence_closed_form(&p).unwrap();
        let fid = evaluate(&p, DenominatorMode::Normalized).unwrap();
        let est = |mean| Estimate { mean, std_error: 0.01 };
        let stats = SimStats {
            fingerprint: p.fingerprint(),
            replicas: 1,
            occupancy_actual: est(rep.p_occupancy),
            occupancy_believed: est(rep.v),
            herald_rate: est(rep.q),
            readout_rate: est(rep.r_ready * rep.y),
            exact_rate: est(fid.c),
            geq_rate: est(fid.p_geq),
            totals: Counters::new(7),
        };
        for row in compare_to_analytic(&stats, &rep, &fid).unwrap() {
            assert_eq!(row.rel_deviation, 0.0, "{}", row.quantity);
            assert_eq!(row.z_score, 0.0);
        }
        let mut other = p;
        other.memory.decoherence = DecoherenceMode::Linearized;
        let rep2 = coincidence_closed_form(&other).unwrap();
        assert!(matches!(
            compare_to_analytic(&stats, &rep2, &fid),
            Err(ModelError::FingerprintMismatch(..))
        ));
    }
}
