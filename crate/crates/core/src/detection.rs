//! Gate-by-gate Monte Carlo of the two detection arms and the coincidence logic.
//!
//! Time is discretized into pump gates. In each gate the source emits a
//! Poisson number of pairs; each detector registers at most one click, taking
//! pair photons first (in emission order), then dark counts, then a pending
//! afterpulse. Aligned coincidences pair the spectrometer and bucket clicks of
//! the same gate; shifted coincidences pair a spectrometer click in gate `k`
//! with a bucket click in gate `k + shift_gates`.
//!
//! # Parallel reduction
//!
//! Gates are cut into fixed shards of [`SHARD_GATES`]. Shard `s` draws from
//! stream `s` of the master seed and starts with idle detectors. Shifted
//! coincidences whose bucket gate falls in the next shard are counted by the
//! lower shard, which replays the first `shift_gates` gates of the next shard
//! from that shard's own stream. Shard results are summed in shard order, so
//! output depends on `(config, seed, n_gates)` only, not on the worker count.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::FilterProfile;
use crate::rng::RandomStream;
use crate::source::{
    build_jsd, default_bucket_grid, mean_pairs_per_pulse, Arm, JointSpectralDensity, JsdSampler,
    PairCountSampler, SourceModel,
};
use crate::spectral::WavelengthGrid;

/// Gates per shard.
pub const SHARD_GATES: u64 = 1 << 20;

/// Default bucket-axis resolution of the joint density.
pub const DEFAULT_BUCKET_STEP_NM: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_prob_per_gate: f64,
    pub dead_time_gates: u32,
    pub afterpulse_prob: f64,
}

impl DetectorModel {
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_prob_per_gate: 0.0,
            dead_time_gates: 0,
            afterpulse_prob: 0.0,
        }
    }

    pub fn validate(&self, arm: &str) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::validation(
                format!("detection.{arm}.efficiency"),
                "efficiency in (0, 1]",
            ));
        }
        if !(self.dark_prob_per_gate >= 0.0 && self.dark_prob_per_gate < 1.0) {
            return Err(Error::validation(
                format!("detection.{arm}.dark_prob_per_gate"),
                "probability in [0, 1)",
            ));
        }
        if !(self.afterpulse_prob >= 0.0 && self.afterpulse_prob < 1.0) {
            return Err(Error::validation(
                format!("detection.{arm}.afterpulse_prob"),
                "probability in [0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DetectionConfig {
    pub bucket: DetectorModel,
    pub spect: DetectorModel,
    pub filter: FilterProfile,
    pub spect_grid: WavelengthGrid,
    pub shift_gates: u32,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            bucket: DetectorModel {
                efficiency: 0.25,
                dark_prob_per_gate: 1e-3,
                dead_time_gates: 0,
                afterpulse_prob: 0.0,
            },
            spect: DetectorModel {
                efficiency: 0.5,
                dark_prob_per_gate: 1e-3,
                dead_time_gates: 0,
                afterpulse_prob: 0.0,
            },
            filter: FilterProfile::default(),
            spect_grid: WavelengthGrid {
                start_nm: 770.0,
                step_nm: 0.2,
                n_bins: 401,
            },
            shift_gates: 1,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        self.bucket.validate("bucket")?;
        self.spect.validate("spect")?;
        self.filter
            .validate()
            .map_err(|e| Error::validation("detection.filter", e.to_string()))?;
        if self.shift_gates == 0 || self.shift_gates as u64 > SHARD_GATES / 2 {
            return Err(Error::validation(
                "detection.shift_gates",
                format!("shift in 1..={}", SHARD_GATES / 2),
            ));
        }
        Ok(())
    }
}

/// Origin of a click, followed through afterpulse chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Root {
    Pair { gate: u64, index: u32 },
    Dark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cause {
    /// Photon of the `n`-th pair emitted in this gate.
    Pair(u32),
    Dark,
    Afterpulse(Root),
}

impl Cause {
    fn root(self, gate: u64) -> Root {
        match self {
            Cause::Pair(index) => Root::Pair { gate, index },
            Cause::Dark => Root::Dark,
            Cause::Afterpulse(r) => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GateOutcome {
    pub bucket: Option<Cause>,
    /// Pixel index and cause.
    pub spect: Option<(usize, Cause)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoincidenceClass {
    TruePair,
    MultipairAccidental,
    DarkInvolved,
    AfterpulseInvolved,
}

/// Attributes an aligned coincidence to its physical origin.
pub fn classify_coincidence(bucket: Cause, spect: Cause, gate: u64) -> CoincidenceClass {
    match (bucket, spect) {
        (Cause::Pair(i), Cause::Pair(j)) if i == j => CoincidenceClass::TruePair,
        (Cause::Pair(_), Cause::Pair(_)) => CoincidenceClass::MultipairAccidental,
        _ => {
            let (rb, rs) = (bucket.root(gate), spect.root(gate));
            if rb == Root::Dark || rs == Root::Dark {
                CoincidenceClass::DarkInvolved
            } else if rb != rs {
                CoincidenceClass::MultipairAccidental
            } else {
                CoincidenceClass::AfterpulseInvolved
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassTally {
    pub true_pair: u64,
    pub multipair_accidental: u64,
    pub dark_involved: u64,
    pub afterpulse_involved: u64,
}

impl ClassTally {
    fn add(&mut self, class: CoincidenceClass) {
        match class {
            CoincidenceClass::TruePair => self.true_pair += 1,
            CoincidenceClass::MultipairAccidental => self.multipair_accidental += 1,
            CoincidenceClass::DarkInvolved => self.dark_involved += 1,
            CoincidenceClass::AfterpulseInvolved => self.afterpulse_involved += 1,
        }
    }

    fn merge(&mut self, o: &ClassTally) {
        self.true_pair += o.true_pair;
        self.multipair_accidental += o.multipair_accidental;
        self.dark_involved += o.dark_involved;
        self.afterpulse_involved += o.afterpulse_involved;
    }

    pub fn total(&self) -> u64 {
        self.true_pair + self.multipair_accidental + self.dark_involved + self.afterpulse_involved
    }
}

/// Per-pixel coincidence histograms of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceData {
    pub n_gates: u64,
    pub seed: u64,
    pub power_density_mw_mm2: f64,
    pub grid: WavelengthGrid,
    pub aligned: Vec<u64>,
    pub shifted: Vec<u64>,
    pub singles_spect: Vec<u64>,
    pub singles_bucket: u64,
    pub class_tally: ClassTally,
}

impl CoincidenceData {
    fn empty(grid: WavelengthGrid) -> Self {
        let n = grid.n_bins;
        Self {
            n_gates: 0,
            seed: 0,
            power_density_mw_mm2: 0.0,
            grid,
            aligned: vec![0; n],
            shifted: vec![0; n],
            singles_spect: vec![0; n],
            singles_bucket: 0,
            class_tally: ClassTally::default(),
        }
    }

    fn merge(&mut self, o: &CoincidenceData) {
        for (a, b) in self.aligned.iter_mut().zip(&o.aligned) {
            *a += b;
        }
        for (a, b) in self.shifted.iter_mut().zip(&o.shifted) {
            *a += b;
        }
        for (a, b) in self.singles_spect.iter_mut().zip(&o.singles_spect) {
            *a += b;
        }
        self.singles_bucket += o.singles_bucket;
        self.class_tally.merge(&o.class_tally);
    }

    /// Total aligned-window coincidences.
    pub fn n_cc(&self) -> u64 {
        self.aligned.iter().sum()
    }

    /// Total shifted-window (accidental) coincidences.
    pub fn n_acc(&self) -> u64 {
        self.shifted.iter().sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct DetectorState {
    dead_remaining: u32,
    afterpulse: Option<Root>,
}

impl DetectorState {
    #[inline]
    fn idle(&self) -> bool {
        self.dead_remaining == 0 && self.afterpulse.is_none()
    }

    /// End-of-gate bookkeeping: consume the pending afterpulse, tick dead
    /// time, arm dead time and a possible afterpulse after a click.
    #[inline]
    fn finish_gate(&mut self, click: Option<Cause>, gate: u64, model: &DetectorModel, rng: &mut RandomStream) {
        self.afterpulse = None;
        if self.dead_remaining > 0 {
            self.dead_remaining -= 1;
        }
        if let Some(cause) = click {
            self.dead_remaining = model.dead_time_gates;
            if model.dead_time_gates == 0
                && model.afterpulse_prob > 0.0
                && rng.uniform() < model.afterpulse_prob
            {
                self.afterpulse = Some(cause.root(gate));
            }
        }
    }
}

/// Simulation model shared read-only by all shards.
#[derive(Debug, Clone)]
pub struct Experiment {
    source: SourceModel,
    detection: DetectionConfig,
    jsd: JointSpectralDensity,
    sampler: JsdSampler,
}

impl Experiment {
    /// Builds the joint density on the detection pixel grid.
    pub fn new(source: SourceModel, detection: DetectionConfig) -> Result<Self> {
        Self::with_bucket_step(source, detection, DEFAULT_BUCKET_STEP_NM)
    }

    pub fn with_bucket_step(source: SourceModel, detection: DetectionConfig, bucket_step_nm: f64) -> Result<Self> {
        let grid_bucket = default_bucket_grid(&source, &detection.spect_grid, bucket_step_nm)?;
        let jsd = build_jsd(&source, &detection.spect_grid, &grid_bucket).map_err(|e| match e {
            Error::GridCoverage { lost_fraction } => Error::validation(
                "detection.spect_grid",
                format!("grid must cover the source spectrum ({lost_fraction:.4} of its mass outside)"),
            ),
            other => other,
        })?;
        Self::from_jsd(source, detection, jsd)
    }

    /// Uses an explicit joint density, which need not live on the pixel grid.
    pub fn from_jsd(source: SourceModel, detection: DetectionConfig, jsd: JointSpectralDensity) -> Result<Self> {
        detection.validate()?;
        let marginal = crate::source::source_marginal(&jsd, Arm::Spect)?;
        let inside: f64 = marginal
            .grid()
            .centers()
            .zip(marginal.values())
            .filter(|(x, _)| detection.spect_grid.bin_index(*x).is_some())
            .map(|(_, v)| v)
            .sum::<f64>()
            * marginal.grid().step_nm;
        if inside < 0.99 {
            return Err(Error::validation(
                "detection.spect_grid",
                format!("grid must cover the source spectrum (only {inside:.4} of its mass inside)"),
            ));
        }
        let sampler = JsdSampler::new(&jsd)?;
        Ok(Self {
            source,
            detection,
            jsd,
            sampler,
        })
    }

    pub fn source(&self) -> &SourceModel {
        &self.source
    }

    pub fn detection(&self) -> &DetectionConfig {
        &self.detection
    }

    pub fn jsd(&self) -> &JointSpectralDensity {
        &self.jsd
    }

    /// Fresh simulator at mean pair number `mu`, starting at gate `first_gate`.
    pub fn gate_simulator(&self, mu: f64, first_gate: u64) -> Result<GateSimulator<'_>> {
        GateSimulator::new(self, mu, first_gate)
    }

    /// Runs `n_gates` at the given pump power density.
    pub fn run(&self, power_density_mw_mm2: f64, n_gates: u64, seed: u64) -> Result<CoincidenceData> {
        let mu = mean_pairs_per_pulse(power_density_mw_mm2, &self.source)?;
        let mut data = self.run_mu(mu, n_gates, seed)?;
        data.power_density_mw_mm2 = power_density_mw_mm2;
        Ok(data)
    }

    /// Runs `n_gates` at mean pair number `mu` on the current rayon pool.
    pub fn run_mu(&self, mu: f64, n_gates: u64, seed: u64) -> Result<CoincidenceData> {
        if n_gates == 0 {
            return Err(Error::Simulation("n_gates must be at least 1".into()));
        }
        // validate mu once up front
        PairCountSampler::new(mu)?;
        let n_shards = n_gates.div_ceil(SHARD_GATES);
        let parts: Vec<CoincidenceData> = (0..n_shards)
            .into_par_iter()
            .map(|s| self.run_shard(mu, n_gates, seed, s))
            .collect::<Result<_>>()?;
        let mut total = CoincidenceData::empty(self.detection.spect_grid);
        for p in &parts {
            total.merge(p);
        }
        total.n_gates = n_gates;
        total.seed = seed;
        Ok(total)
    }

    fn run_shard(&self, mu: f64, n_gates: u64, seed: u64, shard: u64) -> Result<CoincidenceData> {
        let start = shard * SHARD_GATES;
        let end = (start + SHARD_GATES).min(n_gates);
        let shift = self.detection.shift_gates as u64;
        let mut data = CoincidenceData::empty(self.detection.spect_grid);

        let mut rng = RandomStream::new(seed, shard);
        let mut sim = GateSimulator::new(self, mu, start)?;
        // spectrometer pixel of gate g lives in slot (g - start) % shift
        let mut recent: Vec<Option<usize>> = vec![None; shift as usize];

        for g in start..end {
            let out = sim.step(&mut rng);
            let slot = ((g - start) % shift) as usize;
            if out.bucket.is_some() {
                data.singles_bucket += 1;
                if g >= start + shift {
                    if let Some(p) = recent[slot] {
                        data.shifted[p] += 1;
                    }
                }
            }
            if let Some((p, sc)) = out.spect {
                data.singles_spect[p] += 1;
                if let Some(bc) = out.bucket {
                    data.aligned[p] += 1;
                    data.class_tally.add(classify_coincidence(bc, sc, g));
                }
            }
            recent[slot] = out.spect.map(|(p, _)| p);
        }

        // Replay the head of the next shard for the straddling shifted pairs.
        if end < n_gates {
            let mut rng_next = RandomStream::new(seed, shard + 1);
            let mut next = GateSimulator::new(self, mu, end)?;
            for g in end..(end + shift).min(n_gates) {
                let out = next.step(&mut rng_next);
                let spect_gate = g - shift;
                if out.bucket.is_some() && spect_gate >= start {
                    if let Some(p) = recent[((spect_gate - start) % shift) as usize] {
                        data.shifted[p] += 1;
                    }
                }
            }
        }
        Ok(data)
    }
}

/// Convenience wrapper: build the model and run it on the current pool.
pub fn run_experiment(
    src: &SourceModel,
    cfg: &DetectionConfig,
    power_density_mw_mm2: f64,
    n_gates: u64,
    seed: u64,
) -> Result<CoincidenceData> {
    Experiment::new(*src, cfg.clone())?.run(power_density_mw_mm2, n_gates, seed)
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Simulation(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Sequential state machine for one stream of gates.
pub struct GateSimulator<'a> {
    exp: &'a Experiment,
    pairs: PairCountSampler,
    p_empty: f64,
    p_pairs: f64,
    p_dark_either: f64,
    gate: u64,
    bucket: DetectorState,
    spect: DetectorState,
    spect_last_pixel: usize,
}

impl<'a> GateSimulator<'a> {
    fn new(exp: &'a Experiment, mu: f64, first_gate: u64) -> Result<Self> {
        let pairs = PairCountSampler::new(mu)?;
        let db = exp.detection.bucket.dark_prob_per_gate;
        let ds = exp.detection.spect.dark_prob_per_gate;
        let p0 = pairs.p_zero();
        Ok(Self {
            exp,
            p_empty: p0 * (1.0 - db) * (1.0 - ds),
            p_pairs: 1.0 - p0,
            p_dark_either: 1.0 - (1.0 - db) * (1.0 - ds),
            pairs,
            gate: first_gate,
            bucket: DetectorState::default(),
            spect: DetectorState::default(),
            spect_last_pixel: 0,
        })
    }

    pub fn gate_index(&self) -> u64 {
        self.gate
    }

    /// Simulates the next gate.
    pub fn step(&mut self, rng: &mut RandomStream) -> GateOutcome {
        let det = &self.exp.detection;
        let (db, ds) = (det.bucket.dark_prob_per_gate, det.spect.dark_prob_per_gate);
        let (k, dark_b, dark_s) = if self.bucket.idle() && self.spect.idle() {
            // One uniform decides whether anything happens at all; the
            // components are then drawn conditionally on "something happened".
            let u = rng.uniform();
            if u < self.p_empty {
                self.gate += 1;
                return GateOutcome::default();
            }
            let p_any = 1.0 - self.p_empty;
            if rng.uniform() * p_any < self.p_pairs {
                let k = self.pairs.sample_nonzero(rng);
                (k, rng.uniform() < db, rng.uniform() < ds)
            } else if rng.uniform() * self.p_dark_either < db {
                (0, true, rng.uniform() < ds)
            } else {
                (0, false, true)
            }
        } else {
            let k = self.pairs.sample(rng);
            (k, rng.uniform() < db, rng.uniform() < ds)
        };
        self.resolve(k, dark_b, dark_s, rng)
    }

    /// Simulates the next gate with exactly `k` pairs and no dark counts drawn.
    pub fn step_with_pairs(&mut self, k: u32, rng: &mut RandomStream) -> GateOutcome {
        self.resolve(k, false, false, rng)
    }

    fn resolve(&mut self, k: u32, dark_b: bool, dark_s: bool, rng: &mut RandomStream) -> GateOutcome {
        let exp = self.exp;
        let det = &exp.detection;
        let bucket_alive = self.bucket.dead_remaining == 0;
        let spect_alive = self.spect.dead_remaining == 0;
        let mut bucket: Option<Cause> = None;
        let mut spect: Option<(usize, Cause)> = None;

        for idx in 0..k {
            let need_b = bucket_alive && bucket.is_none();
            let need_s = spect_alive && spect.is_none();
            if !need_b && !need_s {
                break;
            }
            let (ls, lb) = exp.sampler.sample(rng);
            if need_s && rng.uniform() < det.spect.efficiency {
                if let Some(p) = det.spect_grid.bin_index(ls) {
                    spect = Some((p, Cause::Pair(idx)));
                }
            }
            if need_b && rng.uniform() < det.bucket.efficiency * det.filter.transmission(lb) {
                bucket = Some(Cause::Pair(idx));
            }
        }

        if bucket_alive && bucket.is_none() {
            if dark_b {
                bucket = Some(Cause::Dark);
            } else if let Some(r) = self.bucket.afterpulse {
                bucket = Some(Cause::Afterpulse(r));
            }
        }
        if spect_alive && spect.is_none() {
            if dark_s {
                spect = Some((rng.below(det.spect_grid.n_bins), Cause::Dark));
            } else if let Some(r) = self.spect.afterpulse {
                // afterpulses fire on the pixel of the originating click
                spect = Some((self.spect_last_pixel, Cause::Afterpulse(r)));
            }
        }

        let gate = self.gate;
        self.bucket.finish_gate(bucket, gate, &det.bucket, rng);
        self.spect.finish_gate(spect.map(|(_, c)| c), gate, &det.spect, rng);
        if let Some((p, _)) = spect {
            self.spect_last_pixel = p;
        }
        self.gate += 1;
        GateOutcome { bucket, spect }
    }
}
