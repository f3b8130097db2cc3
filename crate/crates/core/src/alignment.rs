//! Sequential phase alignment driven only by power measurements.
//!
//! Every algorithm here talks to the surface through a [`MeasurementOracle`]:
//! it proposes a configuration and gets back one power reading. Elements are
//! updated one at a time, sweeping `n = 0..N` for up to `M` sweeps.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimation::{
    closed_form_three_phase, dft_phase_estimate, phase_from_x, solve_three, three_probe_inverse,
    LinearEstimator, MeasurementPhaseSet, PhaseEstimate,
};
use crate::signal::{
    canonical_phase, wrap_to_pi, ChannelRealization, DiscretePhaseSet, NoiseStream, PhaseVector,
};

/// Power-reading black box. Each call to `measure` is one physical reading.
pub trait MeasurementOracle {
    fn n_elements(&self) -> usize;
    fn measure(&mut self, phases: &PhaseVector) -> Result<f64>;
    fn measurements(&self) -> u64;

    /// Same as `measure`, with the promise that `phases` differs from the
    /// previously measured configuration only at the indices in `touched`.
    /// Lets simulators skip the full comparison; real hardware ignores it.
    fn measure_local(&mut self, phases: &PhaseVector, touched: &[usize]) -> Result<f64> {
        let _ = touched;
        self.measure(phases)
    }
}

/// Full recompute after `max(REFRESH_EVERY, N)` incremental field updates, so
/// the refresh stays O(1) amortized on large surfaces.
const REFRESH_EVERY: usize = 256;
/// Above this many changed elements a full recompute is cheaper.
const INCREMENTAL_LIMIT: usize = 4;

/// Simulated harvester: noiseless field plus one fresh `CN(0, sigma^2)` draw
/// per reading. The field is cached and patched for the elements that changed
/// since the previous call, since consecutive probes differ in one element.
#[derive(Debug, Clone)]
pub struct SimulatedOracle<'a> {
    channel: &'a ChannelRealization,
    noise: NoiseStream,
    count: u64,
    cached: Vec<f64>,
    field: Complex64,
    since_refresh: usize,
    refresh_every: usize,
}

impl<'a> SimulatedOracle<'a> {
    pub fn new(channel: &'a ChannelRealization, noise: NoiseStream) -> Self {
        let mut oracle = Self {
            channel,
            noise,
            count: 0,
            cached: vec![0.0; channel.len()],
            field: Complex64::new(0.0, 0.0),
            since_refresh: 0,
            refresh_every: REFRESH_EVERY.max(channel.len()),
        };
        oracle.refresh();
        oracle
    }

    fn refresh(&mut self) {
        self.field = self
            .channel
            .gains()
            .iter()
            .zip(&self.cached)
            .map(|(z, &t)| z * Complex64::from_polar(1.0, t))
            .sum();
        self.since_refresh = 0;
    }

    fn sync(&mut self, phases: &PhaseVector) {
        let new = phases.as_slice();
        let changed = new.iter().zip(&self.cached).filter(|(a, b)| a != b).count();
        if changed == 0 {
            return;
        }
        if changed > INCREMENTAL_LIMIT || self.since_refresh >= self.refresh_every {
            self.cached.copy_from_slice(new);
            self.refresh();
            return;
        }
        let gains = self.channel.gains();
        for (n, (&t, old)) in new.iter().zip(self.cached.iter_mut()).enumerate() {
            if t != *old {
                self.field += gains[n] * (Complex64::from_polar(1.0, t) - Complex64::from_polar(1.0, *old));
                *old = t;
            }
        }
        self.since_refresh += 1;
    }

    fn sync_local(&mut self, phases: &PhaseVector, touched: &[usize]) {
        if self.since_refresh >= self.refresh_every {
            self.cached.copy_from_slice(phases.as_slice());
            self.refresh();
            return;
        }
        let gains = self.channel.gains();
        for &n in touched {
            let t = phases.get(n);
            let old = self.cached[n];
            if t != old {
                self.field += gains[n] * (Complex64::from_polar(1.0, t) - Complex64::from_polar(1.0, old));
                self.cached[n] = t;
            }
        }
        self.since_refresh += 1;
    }

    fn reading(&mut self) -> f64 {
        self.count += 1;
        let w = self.noise.next_complex(self.channel.noise_sigma());
        (self.field + w).norm_sqr()
    }

    fn check_len(&self, phases: &PhaseVector) -> Result<()> {
        if phases.len() != self.channel.len() {
            return Err(Error::Dimension {
                expected: self.channel.len(),
                actual: phases.len(),
            });
        }
        Ok(())
    }
}

impl MeasurementOracle for SimulatedOracle<'_> {
    fn n_elements(&self) -> usize {
        self.channel.len()
    }

    fn measure(&mut self, phases: &PhaseVector) -> Result<f64> {
        self.check_len(phases)?;
        self.sync(phases);
        Ok(self.reading())
    }

    fn measurements(&self) -> u64 {
        self.count
    }

    fn measure_local(&mut self, phases: &PhaseVector, touched: &[usize]) -> Result<f64> {
        self.check_len(phases)?;
        if let Some(&bad) = touched.iter().find(|&&n| n >= phases.len()) {
            return Err(Error::InvalidArgument(format!("element index {bad} out of range")));
        }
        self.sync_local(phases, touched);
        Ok(self.reading())
    }
}

/// One element update (or one benchmark proposal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Oracle calls made so far, including this update's probes.
    pub measurement_count: u64,
    pub element: usize,
    /// Phase of `element` after the update.
    pub phase: f64,
    pub changed: bool,
    /// Noiseless power after the update, filled in by [`AlignmentTrace::annotate`].
    pub post_update_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTrace {
    pub initial: PhaseVector,
    pub records: Vec<TraceRecord>,
}

impl AlignmentTrace {
    fn new(initial: PhaseVector) -> Self {
        Self {
            initial,
            records: Vec::new(),
        }
    }

    fn push(&mut self, count: u64, element: usize, phase: f64, changed: bool) {
        self.records.push(TraceRecord {
            measurement_count: count,
            element,
            phase,
            changed,
            post_update_power: None,
        });
    }

    pub fn total_measurements(&self) -> u64 {
        self.records.last().map_or(0, |r| r.measurement_count)
    }

    /// Replays the updates on `channel` and stores the noiseless power after each.
    pub fn annotate(&mut self, channel: &ChannelRealization) -> Result<()> {
        if self.initial.len() != channel.len() {
            return Err(Error::Dimension {
                expected: channel.len(),
                actual: self.initial.len(),
            });
        }
        let mut phases = self.initial.clone();
        let mut field = crate::signal::received_field(channel, &phases)?;
        let gains = channel.gains();
        for (k, r) in self.records.iter_mut().enumerate() {
            if r.changed {
                let old = phases.get(r.element);
                field += gains[r.element] * (Complex64::from_polar(1.0, r.phase) - Complex64::from_polar(1.0, old));
                phases.set(r.element, r.phase);
                if k % REFRESH_EVERY.max(gains.len()) == 0 {
                    field = crate::signal::received_field(channel, &phases)?;
                }
            }
            r.post_update_power = Some(field.norm_sqr());
        }
        Ok(())
    }

    /// Final configuration implied by the records.
    pub fn final_phases(&self) -> PhaseVector {
        let mut p = self.initial.clone();
        for r in &self.records {
            p.set(r.element, r.phase);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlignmentMode {
    Continuous,
    /// Phases restricted to `omega`. `probes` holds three indices into
    /// `omega` used as Algorithm-4 probe values; `None` picks the first
    /// admissible triple in `omega` order.
    Discrete {
        omega: DiscretePhaseSet,
        probes: Option<[usize; 3]>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    /// Three probes at `0, pi/2, pi` with the closed-form update.
    ClosedForm,
    /// Least squares over an arbitrary admissible probe set.
    Linear(MeasurementPhaseSet),
    /// `L` equally spaced probes from offset 0 with the DFT-form update.
    Dft(usize),
}

impl EstimatorKind {
    pub fn probes_per_update(&self) -> usize {
        match self {
            Self::ClosedForm => 3,
            Self::Linear(phi) => phi.len(),
            Self::Dft(l) => *l,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentConfig {
    pub n_elements: usize,
    pub sweeps: usize,
    pub initial_phases: PhaseVector,
    pub mode: AlignmentMode,
    pub estimator: EstimatorKind,
    /// Continuous algorithms stop after a sweep whose largest phase change is
    /// below `early_stop_tol`; Algorithm 4 stops after a sweep that changes nothing.
    pub early_stop: bool,
    pub early_stop_tol: f64,
}

impl AlignmentConfig {
    pub fn continuous(n_elements: usize, sweeps: usize, estimator: EstimatorKind) -> Self {
        Self {
            n_elements,
            sweeps,
            initial_phases: PhaseVector::zeros(n_elements),
            mode: AlignmentMode::Continuous,
            estimator,
            early_stop: false,
            early_stop_tol: 1e-9,
        }
    }

    /// Discrete mode starting from `omega[0]` on every element.
    pub fn discrete(n_elements: usize, sweeps: usize, omega: DiscretePhaseSet) -> Self {
        let start = omega.values()[0];
        Self {
            n_elements,
            sweeps,
            initial_phases: PhaseVector::from_radians(vec![start; n_elements]),
            mode: AlignmentMode::Discrete {
                omega,
                probes: None,
            },
            estimator: EstimatorKind::ClosedForm,
            early_stop: true,
            early_stop_tol: 0.0,
        }
    }

    pub fn with_initial_phases(mut self, phases: PhaseVector) -> Self {
        self.initial_phases = phases;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elements == 0 {
            return Err(Error::InvalidArgument("N >= 1 elements required".into()));
        }
        if self.sweeps == 0 {
            return Err(Error::InvalidArgument("M >= 1 sweeps required".into()));
        }
        if self.initial_phases.len() != self.n_elements {
            return Err(Error::Dimension {
                expected: self.n_elements,
                actual: self.initial_phases.len(),
            });
        }
        match &self.estimator {
            EstimatorKind::ClosedForm => {}
            EstimatorKind::Linear(phi) => {
                LinearEstimator::new(phi)?;
            }
            EstimatorKind::Dft(l) if *l < 3 => {
                return Err(Error::InvalidArgument(format!("L >= 3 required, got {l}")));
            }
            EstimatorKind::Dft(_) => {}
        }
        if let AlignmentMode::Discrete { omega, .. } = &self.mode {
            if let Some(bad) = self.initial_phases.iter().find(|p| !omega.contains(*p)) {
                return Err(Error::InvalidArgument(format!(
                    "initial phase {bad} is not in Omega"
                )));
            }
            self.discrete_probe_indices()?;
        }
        Ok(())
    }

    fn discrete_probe_indices(&self) -> Result<[usize; 3]> {
        let AlignmentMode::Discrete { omega, probes } = &self.mode else {
            return Err(Error::Config("probe triple requested in continuous mode".into()));
        };
        match probes {
            Some(idx) => {
                if idx.iter().any(|&i| i >= omega.len()) {
                    return Err(Error::Config(format!(
                        "probe indices {idx:?} out of range for |Omega| = {}",
                        omega.len()
                    )));
                }
                let v = omega.values();
                let phi = MeasurementPhaseSet::new(idx.iter().map(|&i| v[i]).collect())?;
                if !phi.is_admissible() {
                    return Err(Error::Config(format!(
                        "probe triple {:?} is inadmissible: sin(p1-p3)+sin(p2-p1)+sin(p3-p2) = 0",
                        phi.offsets()
                    )));
                }
                Ok(*idx)
            }
            None => first_admissible_triple(omega).ok_or_else(|| {
                Error::Config("Omega contains no admissible probe triple".into())
            }),
        }
    }
}

/// First `(i, j, k)`, `i < j < k` in lexicographic order, whose values give a
/// non-singular three-probe design.
pub fn first_admissible_triple(omega: &DiscretePhaseSet) -> Option<[usize; 3]> {
    let v = omega.values();
    let k = v.len();
    for i in 0..k {
        for j in i + 1..k {
            for l in j + 1..k {
                if crate::estimation::triple_determinant(v[i], v[j], v[l]).abs() > 1e-12 {
                    return Some([i, j, l]);
                }
            }
        }
    }
    None
}

fn check_oracle(oracle: &impl MeasurementOracle, config: &AlignmentConfig) -> Result<()> {
    config.validate()?;
    if oracle.n_elements() != config.n_elements {
        return Err(Error::Dimension {
            expected: config.n_elements,
            actual: oracle.n_elements(),
        });
    }
    Ok(())
}

/// Tracks whether the oracle has seen a configuration from this run yet;
/// `measure_local` is only valid relative to one it has.
struct Reader {
    primed: bool,
}

impl Reader {
    fn new() -> Self {
        Self { primed: false }
    }

    fn read(&mut self, oracle: &mut impl MeasurementOracle, phases: &PhaseVector, touched: &[usize]) -> Result<f64> {
        if self.primed {
            oracle.measure_local(phases, touched)
        } else {
            self.primed = true;
            oracle.measure(phases)
        }
    }
}

/// Measures `base` with element `n` set to `base[n] + offset_l` for each offset.
fn probe_offsets(
    reader: &mut Reader,
    oracle: &mut impl MeasurementOracle,
    base: &PhaseVector,
    n: usize,
    offsets: &[f64],
    scratch: &mut PhaseVector,
    out: &mut Vec<f64>,
) -> Result<()> {
    out.clear();
    let start = base.get(n);
    // only element n and the previously updated element can differ from
    // the last reading
    let prev = (n + base.len() - 1) % base.len();
    for &o in offsets {
        scratch.set(n, start + o);
        out.push(reader.read(oracle, scratch, &[prev, n])?);
    }
    scratch.set(n, start);
    Ok(())
}

/// Relative sequential update shared by Algorithms 1–3.
fn align_relative<O, F>(
    oracle: &mut O,
    config: &AlignmentConfig,
    offsets: &[f64],
    mut estimate: F,
) -> Result<(PhaseVector, AlignmentTrace)>
where
    O: MeasurementOracle,
    F: FnMut(&[f64]) -> Result<PhaseEstimate>,
{
    check_oracle(oracle, config)?;
    let mut phases = config.initial_phases.clone();
    let mut scratch = phases.clone();
    let mut trace = AlignmentTrace::new(phases.clone());
    let mut y = Vec::with_capacity(offsets.len());
    let mut reader = Reader::new();
    for _ in 0..config.sweeps {
        let mut largest = 0.0f64;
        for n in 0..config.n_elements {
            probe_offsets(&mut reader, oracle, &phases, n, offsets, &mut scratch, &mut y)?;
            let changed = match estimate(&y) {
                Ok(theta) => {
                    let before = phases.get(n);
                    phases.rotate(n, theta.theta());
                    scratch.set(n, phases.get(n));
                    largest = largest.max(wrap_to_pi(phases.get(n) - before).abs());
                    phases.get(n) != before
                }
                Err(Error::AmbiguousPhase) => false,
                Err(e) => return Err(e),
            };
            trace.push(oracle.measurements(), n, phases.get(n), changed);
        }
        if config.early_stop && largest < config.early_stop_tol {
            break;
        }
    }
    Ok((phases, trace))
}

/// Algorithm 1: noiseless closed-form coordinate ascent with probes at
/// `theta`, `theta + (pi/2) e_n`, `theta + pi e_n`; `3NM` readings.
pub fn align_continuous_noiseless(
    oracle: &mut impl MeasurementOracle,
    config: &AlignmentConfig,
) -> Result<(PhaseVector, AlignmentTrace)> {
    if config.mode != AlignmentMode::Continuous {
        return Err(Error::Config("Algorithm 1 runs in continuous mode".into()));
    }
    align_relative(oracle, config, &[0.0, PI / 2.0, PI], |y| {
        closed_form_three_phase(y[0], y[1], y[2])
    })
}

/// Algorithm 2: least-squares update from `L` probes at `theta + phi_l e_n`.
pub fn align_linear_noisy(
    oracle: &mut impl MeasurementOracle,
    config: &AlignmentConfig,
) -> Result<(PhaseVector, AlignmentTrace)> {
    let phi = match &config.estimator {
        EstimatorKind::Linear(phi) => phi.clone(),
        EstimatorKind::ClosedForm => MeasurementPhaseSet::quadrature_triple(),
        EstimatorKind::Dft(l) => MeasurementPhaseSet::equally_spaced(*l, 0.0)?,
    };
    if config.mode != AlignmentMode::Continuous {
        return Err(Error::Config("Algorithm 2 runs in continuous mode".into()));
    }
    let est = LinearEstimator::new(&phi)?;
    align_relative(oracle, config, phi.offsets(), |y| phase_from_x(&est.estimate(y)?))
}

/// Algorithm 3: `L` equally spaced probes from offset 0, update `arg(y^T b)`.
pub fn align_dft_noisy(
    oracle: &mut impl MeasurementOracle,
    config: &AlignmentConfig,
) -> Result<(PhaseVector, AlignmentTrace)> {
    let EstimatorKind::Dft(l) = config.estimator else {
        return Err(Error::Config("Algorithm 3 needs the DFT estimator".into()));
    };
    if config.mode != AlignmentMode::Continuous {
        return Err(Error::Config("Algorithm 3 runs in continuous mode".into()));
    }
    if l < 3 {
        return Err(Error::InvalidArgument(format!("L >= 3 required, got {l}")));
    }
    let offsets: Vec<f64> = (0..l).map(|i| TAU * i as f64 / l as f64).collect();
    align_relative(oracle, config, &offsets, dft_phase_estimate)
}

/// Index of the `omega` member nearest to `alpha` in circular distance;
/// ties go to the smallest index.
pub fn quantize_phase(alpha: f64, omega: &DiscretePhaseSet) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, &w) in omega.values().iter().enumerate() {
        let z = canonical_phase(alpha - w);
        let d = z.min(TAU - z);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Algorithm 4: discrete-alphabet coordinate ascent.
///
/// Element `n` is probed at the three absolute values `phi_i` in `Omega`, the
/// continuous optimum `arg(x2 + j x3)` is recovered from `A^{-1} y`, and the
/// element is set to the nearest member of `Omega`. Stops early once a whole
/// sweep leaves the configuration unchanged.
pub fn align_discrete(
    oracle: &mut impl MeasurementOracle,
    config: &AlignmentConfig,
) -> Result<(PhaseVector, AlignmentTrace)> {
    check_oracle(oracle, config)?;
    let AlignmentMode::Discrete { omega, .. } = &config.mode else {
        return Err(Error::Config("Algorithm 4 runs in discrete mode".into()));
    };
    let idx = config.discrete_probe_indices()?;
    let probe_values: Vec<f64> = idx.iter().map(|&i| omega.values()[i]).collect();
    let inv = three_probe_inverse(&MeasurementPhaseSet::new(probe_values.clone())?)?;

    let mut phases = config.initial_phases.clone();
    let mut scratch = phases.clone();
    let mut trace = AlignmentTrace::new(phases.clone());
    let mut reader = Reader::new();
    for _ in 0..config.sweeps {
        let mut any_change = false;
        for n in 0..config.n_elements {
            let current = phases.get(n);
            let prev = (n + config.n_elements - 1) % config.n_elements;
            let mut y = [0.0; 3];
            for (yi, &p) in y.iter_mut().zip(&probe_values) {
                scratch.set(n, p);
                *yi = reader.read(oracle, &scratch, &[prev, n])?;
            }
            let changed = match phase_from_x(&solve_three(&inv, y)) {
                Ok(alpha) => {
                    let w = omega.values()[quantize_phase(alpha.theta(), omega)];
                    phases.set(n, w);
                    w != current
                }
                Err(Error::AmbiguousPhase) => false,
                Err(e) => return Err(e),
            };
            scratch.set(n, phases.get(n));
            any_change |= changed;
            trace.push(oracle.measurements(), n, phases.get(n), changed);
        }
        if config.early_stop && !any_change {
            break;
        }
    }
    Ok((phases, trace))
}

/// Random-search benchmark: one baseline reading, then for each element in
/// turn a random proposal that is kept iff its reading strictly exceeds the
/// best reading so far. `M N` proposals in total.
pub fn random_benchmark(
    oracle: &mut impl MeasurementOracle,
    config: &AlignmentConfig,
    rng: &mut impl Rng,
) -> Result<(PhaseVector, AlignmentTrace)> {
    check_oracle(oracle, config)?;
    let mut phases = config.initial_phases.clone();
    let mut trace = AlignmentTrace::new(phases.clone());
    let mut best = oracle.measure(&phases)?;
    let mut cand = phases.clone();
    for _ in 0..config.sweeps {
        for n in 0..config.n_elements {
            let proposal = match &config.mode {
                AlignmentMode::Continuous => rng.random_range(0.0..TAU),
                AlignmentMode::Discrete { omega, .. } => {
                    let cur = omega.index_of(phases.get(n)).ok_or_else(|| {
                        Error::InvalidArgument(format!("phase {} is not in Omega", phases.get(n)))
                    })?;
                    let mut k = rng.random_range(0..omega.len() - 1);
                    if k >= cur {
                        k += 1;
                    }
                    omega.values()[k]
                }
            };
            cand.set(n, proposal);
            let prev = (n + config.n_elements - 1) % config.n_elements;
            let y = oracle.measure_local(&cand, &[prev, n])?;
            let accepted = y > best;
            if accepted {
                best = y;
                phases.set(n, cand.get(n));
            } else {
                cand.set(n, phases.get(n));
            }
            trace.push(oracle.measurements(), n, phases.get(n), accepted);
        }
    }
    Ok((phases, trace))
}

/// Largest `|Omega|^N` the exhaustive oracle will enumerate.
pub const EXHAUSTIVE_LIMIT: f64 = 1e8;

/// Brute-force maximizer of the noiseless power over `Omega^N`. Enumerates in
/// lexicographic index order (last element fastest) and keeps the first
/// strict maximum.
pub fn exhaustive_discrete_oracle(
    channel: &ChannelRealization,
    omega: &DiscretePhaseSet,
) -> Result<(PhaseVector, f64)> {
    let n = channel.len();
    let k = omega.len();
    let size = (k as f64).powi(n as i32);
    if size > EXHAUSTIVE_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            size,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let rotated: Vec<Vec<Complex64>> = channel
        .gains()
        .iter()
        .map(|z| omega.values().iter().map(|&w| z * Complex64::from_polar(1.0, w)).collect())
        .collect();

    // prefix[i] = sum of the first i elements' contributions
    let mut digits = vec![0usize; n];
    let mut prefix = vec![Complex64::new(0.0, 0.0); n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + rotated[i][0];
    }
    let mut best_power = prefix[n].norm_sqr();
    let mut best_digits = digits.clone();
    loop {
        let mut pos = n;
        while pos > 0 {
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < k {
                break;
            }
            digits[pos] = 0;
            if pos == 0 {
                let phases = best_digits.iter().map(|&d| omega.values()[d]).collect();
                return Ok((PhaseVector::from_radians(phases), best_power));
            }
        }
        for i in pos..n {
            prefix[i + 1] = prefix[i] + rotated[i][digits[i]];
        }
        let p = prefix[n].norm_sqr();
        if p > best_power {
            best_power = p;
            best_digits.copy_from_slice(&digits);
        }
    }
}

/// Random starting configuration: uniform on `[0, 2pi)` or uniform on `Omega`.
pub fn random_initial_phases(n: usize, mode: &AlignmentMode, rng: &mut impl Rng) -> PhaseVector {
    match mode {
        AlignmentMode::Continuous => {
            PhaseVector::from_radians((0..n).map(|_| rng.random_range(0.0..TAU)).collect())
        }
        AlignmentMode::Discrete { omega, .. } => PhaseVector::from_radians(
            (0..n)
                .map(|_| omega.values()[rng.random_range(0..omega.len())])
                .collect(),
        ),
    }
}
