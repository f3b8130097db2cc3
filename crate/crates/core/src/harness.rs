//! Monte-Carlo experiments: NAP metrics, confidence intervals, convergence
//! curves, SNR sweeps, the discrete-alphabet comparison, the single-element
//! RMSE study and the harvesting geometry study.
//!
//! Trials run in parallel but every random quantity comes from a stream keyed
//! by `(seed, trial, purpose)`, and reductions run in trial order, so results
//! depend only on the seed and the spec.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    align_continuous_noiseless, align_discrete, align_dft_noisy, align_linear_noisy,
    exhaustive_discrete_oracle, random_benchmark, random_initial_phases, AlignmentConfig,
    AlignmentMode, AlignmentTrace, EstimatorKind, SimulatedOracle,
};
use crate::error::{Error, Result};
use crate::estimation::{
    build_design_matrix, linear_estimate, ml_estimate, phase_from_x, MeasurementPhaseSet,
};
use crate::scenario::{generate_iid_channel, watts_to_dbm, GeometryScenario, HarvesterModel};
use crate::signal::{
    received_power_noiseless, stream_rng, wrap_to_pi, ChannelRealization, DiscretePhaseSet,
    NoiseStream, PhaseVector, StreamPurpose,
};

/// Noiseless power at `phases` over `(sum_n |z_n|)^2`.
pub fn nap(channel: &ChannelRealization, phases: &PhaseVector) -> Result<f64> {
    let max = channel.max_power();
    if max == 0.0 {
        return Err(Error::UndefinedNap);
    }
    Ok(received_power_noiseless(channel, phases)? / max)
}

/// Sample mean and 95% normal-approximation half-width `1.96 s / sqrt(T)`.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let t = values.len();
    if t == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / t as f64;
    if t == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
    (mean, 1.96 * (var / t as f64).sqrt())
}

/// Receiver noise level. SNR is given in dB at the boundary; noiseless runs
/// are a separate variant rather than an infinite dB value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Snr {
    Noiseless,
    Db(f64),
}

impl Snr {
    pub fn db(self) -> Option<f64> {
        match self {
            Self::Noiseless => None,
            Self::Db(v) => Some(v),
        }
    }

    /// Noise amplitude for a given mean per-element energy `E|z|^2`.
    pub fn sigma(self, mean_element_energy: f64) -> f64 {
        match self {
            Self::Noiseless => 0.0,
            Self::Db(db) => crate::signal::sigma_for_snr_db(mean_element_energy, db),
        }
    }

    pub fn label(self) -> String {
        match self {
            Self::Noiseless => "noiseless".into(),
            Self::Db(v) => format!("{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Closed-form three-probe update (noiseless design).
    ClosedForm,
    /// Least squares over a custom probe set.
    Linear(MeasurementPhaseSet),
    /// Equally spaced probes, DFT-form update ("proposed").
    Dft(usize),
    /// Random search over `[0, 2pi)`.
    Random,
    /// Discrete-alphabet coordinate ascent; `probes` indexes `omega`
    /// (first admissible triple when `None`).
    Discrete {
        omega: DiscretePhaseSet,
        probes: Option<[usize; 3]>,
    },
    /// Random search over `Omega`.
    RandomDiscrete(DiscretePhaseSet),
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::ClosedForm => "closed_form",
            Self::Linear(_) => "linear",
            Self::Dft(_) => "proposed",
            Self::Random => "random",
            Self::Discrete { .. } => "discrete",
            Self::RandomDiscrete(_) => "random_discrete",
        }
    }

    pub fn probes(&self) -> Option<usize> {
        match self {
            Self::ClosedForm | Self::Discrete { .. } => Some(3),
            Self::Linear(phi) => Some(phi.len()),
            Self::Dft(l) => Some(*l),
            Self::Random | Self::RandomDiscrete(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub method: Method,
    /// Sweeps over all elements (proposals per element for random search).
    pub sweeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPhases {
    /// All zeros (first alphabet member in discrete mode).
    #[default]
    Zeros,
    /// Uniform, drawn from the trial's initial-phase stream.
    Random,
}

/// Runs one method on one channel and returns the annotated trace.
pub fn run_method(
    channel: &ChannelRealization,
    spec: &MethodSpec,
    initial: InitialPhases,
    seed: u64,
    trial: u64,
) -> Result<(PhaseVector, AlignmentTrace)> {
    let n = channel.len();
    let mut config = match &spec.method {
        Method::ClosedForm => AlignmentConfig::continuous(n, spec.sweeps, EstimatorKind::ClosedForm),
        Method::Linear(phi) => AlignmentConfig::continuous(n, spec.sweeps, EstimatorKind::Linear(phi.clone())),
        Method::Dft(l) => AlignmentConfig::continuous(n, spec.sweeps, EstimatorKind::Dft(*l)),
        Method::Random => AlignmentConfig::continuous(n, spec.sweeps, EstimatorKind::ClosedForm),
        Method::Discrete { omega, probes } => {
            let mut c = AlignmentConfig::discrete(n, spec.sweeps, omega.clone());
            c.mode = AlignmentMode::Discrete {
                omega: omega.clone(),
                probes: *probes,
            };
            c
        }
        Method::RandomDiscrete(omega) => AlignmentConfig::discrete(n, spec.sweeps, omega.clone()),
    };
    if initial == InitialPhases::Random {
        let mut rng = stream_rng(seed, trial, StreamPurpose::InitialPhases);
        config.initial_phases = random_initial_phases(n, &config.mode, &mut rng);
    }
    let mut oracle = SimulatedOracle::new(channel, NoiseStream::new(seed, trial));
    let (phases, mut trace) = match &spec.method {
        Method::ClosedForm => align_continuous_noiseless(&mut oracle, &config)?,
        Method::Linear(_) => align_linear_noisy(&mut oracle, &config)?,
        Method::Dft(_) => align_dft_noisy(&mut oracle, &config)?,
        Method::Discrete { .. } => align_discrete(&mut oracle, &config)?,
        Method::Random | Method::RandomDiscrete(_) => {
            let mut rng = stream_rng(seed, trial, StreamPurpose::Algorithm);
            random_benchmark(&mut oracle, &config, &mut rng)?
        }
    };
    trace.annotate(channel)?;
    Ok((phases, trace))
}

/// `(measurement_count, NAP)` after every update, starting at `(0, NAP_0)`.
pub fn nap_curve(channel: &ChannelRealization, trace: &AlignmentTrace) -> Result<Vec<(u64, f64)>> {
    let max = channel.max_power();
    if max == 0.0 {
        return Err(Error::UndefinedNap);
    }
    let mut out = Vec::with_capacity(trace.records.len() + 1);
    out.push((0, received_power_noiseless(channel, &trace.initial)? / max));
    for r in &trace.records {
        let p = r.post_update_power.ok_or_else(|| {
            Error::InvalidArgument("trace must be annotated before building a curve".into())
        })?;
        out.push((r.measurement_count, p / max));
    }
    Ok(out)
}

/// Last value carried forward onto `grid`.
pub fn resample_curve(curve: &[(u64, f64)], grid: &[u64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut i = 0;
    for &g in grid {
        while i + 1 < curve.len() && curve[i + 1].0 <= g {
            i += 1;
        }
        out.push(curve[i].1);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub method: String,
    pub curve: Vec<(u64, f64)>,
    pub final_nap: f64,
    pub final_harvested_watts: Option<f64>,
}

/// MNAP and CI per grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResult {
    pub grid: Vec<u64>,
    pub mnap: Vec<f64>,
    pub ci95: Vec<f64>,
    pub trials: usize,
}

impl AggregateResult {
    /// Column-wise mean/CI of per-trial rows, reduced in the given order.
    pub fn from_rows(grid: Vec<u64>, rows: &[Vec<f64>]) -> Self {
        let mut mnap = Vec::with_capacity(grid.len());
        let mut ci95 = Vec::with_capacity(grid.len());
        let mut column = Vec::with_capacity(rows.len());
        for k in 0..grid.len() {
            column.clear();
            column.extend(rows.iter().map(|r| r[k]));
            let (m, c) = mean_ci(&column);
            mnap.push(m);
            ci95.push(c);
        }
        Self {
            grid,
            mnap,
            ci95,
            trials: rows.len(),
        }
    }

    /// MNAP at the largest grid point `<= measurements`.
    pub fn at(&self, measurements: u64) -> Option<(f64, f64)> {
        let k = self.grid.iter().rposition(|&g| g <= measurements)?;
        Some((self.mnap[k], self.ci95[k]))
    }
}

/// Results of one method at one SNR over all trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRun {
    pub method: String,
    pub l: Option<usize>,
    pub snr: Snr,
    pub sweeps: usize,
    pub curve: AggregateResult,
    pub final_mnap: f64,
    pub final_ci95: f64,
    pub mean_measurements: f64,
    pub trials: Vec<TrialRecord>,
}

fn iid_trial_channel(n: usize, snr: Snr, seed: u64, trial: u64) -> Result<ChannelRealization> {
    // unit-variance elements: the average SNR is 1 / sigma^2
    generate_iid_channel(n, snr.sigma(1.0), &mut stream_rng(seed, trial, StreamPurpose::Channel))
}

fn run_iid(
    n: usize,
    spec: &MethodSpec,
    snr: Snr,
    trials: usize,
    seed: u64,
    initial: InitialPhases,
    grid: &[u64],
) -> Result<MethodRun> {
    let records: Vec<(TrialRecord, Vec<f64>, u64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let channel = iid_trial_channel(n, snr, seed, t)?;
            let (phases, trace) = run_method(&channel, spec, initial, seed, t)?;
            let curve = nap_curve(&channel, &trace)?;
            let row = resample_curve(&curve, grid);
            let final_nap = nap(&channel, &phases)?;
            let rec = TrialRecord {
                trial_index: t,
                seed,
                snr_db: snr.db(),
                method: spec.method.tag().into(),
                curve,
                final_nap,
                final_harvested_watts: None,
            };
            Ok((rec, row, trace.total_measurements()))
        })
        .collect::<Result<_>>()?;
    summarize(spec, snr, grid, records)
}

fn summarize(
    spec: &MethodSpec,
    snr: Snr,
    grid: &[u64],
    records: Vec<(TrialRecord, Vec<f64>, u64)>,
) -> Result<MethodRun> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.1.clone()).collect();
    let finals: Vec<f64> = records.iter().map(|r| r.0.final_nap).collect();
    let (final_mnap, final_ci95) = mean_ci(&finals);
    let mean_measurements =
        records.iter().map(|r| r.2 as f64).sum::<f64>() / records.len().max(1) as f64;
    Ok(MethodRun {
        method: spec.method.tag().into(),
        l: spec.method.probes(),
        snr,
        sweeps: spec.sweeps,
        curve: AggregateResult::from_rows(grid.to_vec(), &rows),
        final_mnap,
        final_ci95,
        mean_measurements,
        trials: records.into_iter().map(|r| r.0).collect(),
    })
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSpec {
    pub n: usize,
    pub methods: Vec<MethodSpec>,
    pub snrs: Vec<Snr>,
    pub trials: usize,
    pub seed: u64,
    /// Shared measurement-count grid for the curves.
    pub grid: Vec<u64>,
    pub initial: InitialPhases,
}

/// Uniform grid `0, step, 2 step, .., max`.
pub fn linear_grid(max: u64, step: u64) -> Vec<u64> {
    (0..=max / step.max(1)).map(|k| k * step.max(1)).collect()
}

/// MNAP-vs-measurements curves for every (SNR, method) pair.
pub fn convergence_experiment(spec: &ConvergenceSpec) -> Result<Vec<MethodRun>> {
    check_trials(spec.trials)?;
    let mut out = Vec::new();
    for &snr in &spec.snrs {
        for m in &spec.methods {
            out.push(run_iid(spec.n, m, snr, spec.trials, spec.seed, spec.initial, &spec.grid)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrSweepSpec {
    pub n: usize,
    pub l_values: Vec<usize>,
    pub snrs: Vec<Snr>,
    pub trials: usize,
    pub seed: u64,
    /// Sweeps for the proposed method.
    pub sweeps: usize,
    /// Proposals per element for random search.
    pub random_sweeps: usize,
    pub include_random: bool,
    pub initial: InitialPhases,
}

impl SnrSweepSpec {
    pub fn new(n: usize, l_values: Vec<usize>, snrs: Vec<Snr>, trials: usize, seed: u64) -> Self {
        Self {
            n,
            l_values,
            snrs,
            trials,
            seed,
            sweeps: 10,
            random_sweeps: 30,
            include_random: true,
            initial: InitialPhases::Zeros,
        }
    }
}

/// Converged MNAP per (L, SNR); random search appears with `l = None`.
pub fn snr_sweep(spec: &SnrSweepSpec) -> Result<Vec<MethodRun>> {
    check_trials(spec.trials)?;
    let mut methods: Vec<MethodSpec> = spec
        .l_values
        .iter()
        .map(|&l| MethodSpec {
            method: Method::Dft(l),
            sweeps: spec.sweeps,
        })
        .collect();
    if spec.include_random {
        methods.push(MethodSpec {
            method: Method::Random,
            sweeps: spec.random_sweeps,
        });
    }
    let mut out = Vec::new();
    for &snr in &spec.snrs {
        for m in &methods {
            out.push(run_iid(spec.n, m, snr, spec.trials, spec.seed, spec.initial, &[])?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpec {
    pub n: usize,
    pub omega: DiscretePhaseSet,
    pub probes: Option<[usize; 3]>,
    pub snr: Snr,
    pub trials: usize,
    pub seed: u64,
    pub sweeps: usize,
    pub random_sweeps: usize,
    pub grid: Vec<u64>,
    pub initial: InitialPhases,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteTrial {
    pub discrete_nap: f64,
    pub random_nap: f64,
    pub oracle_nap: f64,
    pub discrete_measurements: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteResult {
    pub discrete: MethodRun,
    pub random: MethodRun,
    pub oracle_mnap: f64,
    pub oracle_ci95: f64,
    /// Trials where the discrete scheme beat the exhaustive optimum (must be 0).
    pub oracle_violations: usize,
    pub per_trial: Vec<DiscreteTrial>,
}

/// Discrete coordinate ascent vs random search vs the exhaustive optimum.
pub fn discrete_experiment(spec: &DiscreteSpec) -> Result<DiscreteResult> {
    check_trials(spec.trials)?;
    let disc = MethodSpec {
        method: Method::Discrete {
            omega: spec.omega.clone(),
            probes: spec.probes,
        },
        sweeps: spec.sweeps,
    };
    let rand = MethodSpec {
        method: Method::RandomDiscrete(spec.omega.clone()),
        sweeps: spec.random_sweeps,
    };
    let size = (spec.omega.len() as f64).powi(spec.n as i32);
    if size > crate::alignment::EXHAUSTIVE_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            size,
            limit: crate::alignment::EXHAUSTIVE_LIMIT,
        });
    }
    type Row = ((TrialRecord, Vec<f64>, u64), (TrialRecord, Vec<f64>, u64), f64, f64);
    let rows: Vec<Row> = (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| {
            let channel = iid_trial_channel(spec.n, spec.snr, spec.seed, t)?;
            let one = |m: &MethodSpec| -> Result<((TrialRecord, Vec<f64>, u64), f64)> {
                let (phases, trace) = run_method(&channel, m, spec.initial, spec.seed, t)?;
                let curve = nap_curve(&channel, &trace)?;
                let row = resample_curve(&curve, &spec.grid);
                let power = received_power_noiseless(&channel, &phases)?;
                Ok(((
                    TrialRecord {
                        trial_index: t,
                        seed: spec.seed,
                        snr_db: spec.snr.db(),
                        method: m.method.tag().into(),
                        curve,
                        final_nap: nap(&channel, &phases)?,
                        final_harvested_watts: None,
                    },
                    row,
                    trace.total_measurements(),
                ), power))
            };
            let (d, d_power) = one(&disc)?;
            let (r, _) = one(&rand)?;
            let (_, best) = exhaustive_discrete_oracle(&channel, &spec.omega)?;
            Ok((d, r, best / channel.max_power(), d_power - best))
        })
        .collect::<Result<_>>()?;

    let mut per_trial = Vec::with_capacity(rows.len());
    let mut oracle_naps = Vec::with_capacity(rows.len());
    let mut violations = 0;
    let mut d_recs = Vec::with_capacity(rows.len());
    let mut r_recs = Vec::with_capacity(rows.len());
    for (d, r, o, excess) in rows {
        if excess > 0.0 {
            violations += 1;
        }
        per_trial.push(DiscreteTrial {
            discrete_nap: d.0.final_nap,
            random_nap: r.0.final_nap,
            oracle_nap: o,
            discrete_measurements: d.2,
        });
        oracle_naps.push(o);
        d_recs.push(d);
        r_recs.push(r);
    }
    let (oracle_mnap, oracle_ci95) = mean_ci(&oracle_naps);
    Ok(DiscreteResult {
        discrete: summarize(&disc, spec.snr, &spec.grid, d_recs)?,
        random: summarize(&rand, spec.snr, &spec.grid, r_recs)?,
        oracle_mnap,
        oracle_ci95,
        oracle_violations: violations,
        per_trial,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseSpec {
    /// Optimal-shift values `theta` to grid over; `z = |z| exp(-j theta)`, `z0 = 1`.
    pub thetas: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub snrs_db: Vec<f64>,
    pub phi: MeasurementPhaseSet,
    pub trials: usize,
    pub seed: u64,
    pub include_ml: bool,
}

impl RmseSpec {
    /// `count` equally spaced values of `theta` on `[0, 2pi)`.
    pub fn theta_grid(count: usize) -> Vec<f64> {
        (0..count).map(|k| TAU * k as f64 / count as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseRow {
    pub theta: f64,
    pub magnitude: f64,
    pub snr_db: f64,
    pub rmse_linear: f64,
    pub rmse_ml: Option<f64>,
    /// Trials where the linear estimate had no defined phase (scored as `theta_hat = 0`).
    pub ambiguous_linear: usize,
    /// Trials where the ML solver hit its iteration cap (best iterate used).
    pub ml_failures: usize,
    pub trials: usize,
}

/// Single-element RMSE of the linear and ML shift estimators.
///
/// The SNR is `(|z0|^2 + |z|^2) / (2 sigma^2)`. Errors are folded into
/// `(-pi, pi]` around the true shift before squaring.
pub fn rmse_study(spec: &RmseSpec) -> Result<Vec<RmseRow>> {
    check_trials(spec.trials)?;
    let a = build_design_matrix(&spec.phi);
    // fail early on a singular design
    crate::estimation::pseudoinverse(&a)?;
    let mut points = Vec::new();
    for &snr_db in &spec.snrs_db {
        for &mag in &spec.magnitudes {
            for &theta in &spec.thetas {
                points.push((snr_db, mag, theta));
            }
        }
    }
    points
        .par_iter()
        .enumerate()
        .map(|(k, &(snr_db, mag, theta))| rmse_point(spec, &a, k as u64, snr_db, mag, theta))
        .collect()
}

fn rmse_point(
    spec: &RmseSpec,
    a: &crate::estimation::DesignMatrix,
    point: u64,
    snr_db: f64,
    mag: f64,
    theta: f64,
) -> Result<RmseRow> {
    use num_complex::Complex64;
    if !(mag > 0.0) {
        return Err(Error::InvalidArgument(format!("|z| must be > 0, got {mag}")));
    }
    let z0 = Complex64::new(1.0, 0.0);
    let z = Complex64::from_polar(mag, -theta);
    let sigma = ((1.0 + mag * mag) / (2.0 * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut se_lin = 0.0;
    let mut se_ml = 0.0;
    let mut ambiguous = 0;
    let mut failures = 0;
    let mut y = vec![0.0; spec.phi.len()];
    // one noise stream per grid point; trials consume it sequentially
    let mut noise = NoiseStream::new(spec.seed, point);
    for _ in 0..spec.trials {
        for (yl, &p) in y.iter_mut().zip(spec.phi.offsets()) {
            let w = noise.next_complex(sigma);
            *yl = (z0 + z * Complex64::from_polar(1.0, p) + w).norm_sqr();
        }
        let lin = match phase_from_x(&linear_estimate(&y, a)?) {
            Ok(t) => t.theta(),
            Err(Error::AmbiguousPhase) => {
                ambiguous += 1;
                0.0
            }
            Err(e) => return Err(e),
        };
        se_lin += wrap_to_pi(lin - theta).powi(2);
        if spec.include_ml && sigma > 0.0 {
            let x = match ml_estimate(&y, a, sigma) {
                Ok(x) => x,
                Err(Error::SolverFailure { best, .. }) => {
                    failures += 1;
                    best
                }
                Err(e) => return Err(e),
            };
            let t = phase_from_x(&x).map(|t| t.theta()).unwrap_or(0.0);
            se_ml += wrap_to_pi(t - theta).powi(2);
        }
    }
    let t = spec.trials as f64;
    Ok(RmseRow {
        theta,
        magnitude: mag,
        snr_db,
        rmse_linear: (se_lin / t).sqrt(),
        rmse_ml: (spec.include_ml && sigma > 0.0).then(|| (se_ml / t).sqrt()),
        ambiguous_linear: ambiguous,
        ml_failures: failures,
        trials: spec.trials,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarvestSpec {
    /// Surface side lengths; the surface has `side^2` elements.
    pub sides: Vec<usize>,
    pub snrs_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub l: usize,
    pub sweeps: usize,
    pub random_sweeps: usize,
    pub scenario: GeometryScenario,
    pub harvester: HarvesterModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarvestRow {
    pub n: usize,
    pub snr_db: f64,
    pub method: String,
    pub mean_watts: f64,
    pub ci95_watts: f64,
    pub mean_dbm: f64,
    pub mnap: f64,
}

/// Mean harvested power vs surface size for the genie, proposed and random
/// configurations. The geometry is deterministic; trials differ in noise
/// and in the random-search proposals.
pub fn harvest_experiment(spec: &HarvestSpec) -> Result<Vec<HarvestRow>> {
    check_trials(spec.trials)?;
    spec.harvester.validate()?;
    let mut out = Vec::new();
    for &side in &spec.sides {
        let scene = GeometryScenario {
            rows: side,
            cols: side,
            ..spec.scenario.clone()
        };
        let base = scene.channel()?;
        let n = base.len();
        let energy = base.gains().iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        let genie_power = received_power_noiseless(&base, &base.genie_phases())?;
        let genie_watts = spec.harvester.harvested_power(genie_power)?;
        for &snr_db in &spec.snrs_db {
            let channel = base.with_noise_sigma(Snr::Db(snr_db).sigma(energy))?;
            out.push(HarvestRow {
                n,
                snr_db,
                method: "genie".into(),
                mean_watts: genie_watts,
                ci95_watts: 0.0,
                mean_dbm: watts_to_dbm(genie_watts),
                mnap: 1.0,
            });
            let methods = [
                MethodSpec {
                    method: Method::Dft(spec.l),
                    sweeps: spec.sweeps,
                },
                MethodSpec {
                    method: Method::Random,
                    sweeps: spec.random_sweeps,
                },
            ];
            for m in &methods {
                let per: Vec<(f64, f64)> = (0..spec.trials as u64)
                    .into_par_iter()
                    .map(|t| {
                        let (phases, _) = run_method(&channel, m, InitialPhases::Zeros, spec.seed, t)?;
                        let p = received_power_noiseless(&channel, &phases)?;
                        Ok((spec.harvester.harvested_power(p)?, p / channel.max_power()))
                    })
                    .collect::<Result<_>>()?;
                let watts: Vec<f64> = per.iter().map(|v| v.0).collect();
                let naps: Vec<f64> = per.iter().map(|v| v.1).collect();
                let (mean_watts, ci95_watts) = mean_ci(&watts);
                out.push(HarvestRow {
                    n,
                    snr_db,
                    method: m.method.tag().into(),
                    mean_watts,
                    ci95_watts,
                    mean_dbm: watts_to_dbm(mean_watts),
                    mnap: mean_ci(&naps).0,
                });
            }
        }
    }
    Ok(out)
}
