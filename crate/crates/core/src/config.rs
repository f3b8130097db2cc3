//! Experiment configuration files and long-format result tables.
//!
//! Configs are TOML. Unknown keys are rejected; every semantic violation is
//! collected so `validate` can report them all at once. See the README for
//! the full key reference.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::estimation::MeasurementPhaseSet;
use crate::harness::{
    convergence_experiment, discrete_experiment, harvest_experiment, linear_grid, rmse_study,
    snr_sweep, ConvergenceSpec, DiscreteSpec, HarvestSpec, InitialPhases, Method, MethodRun,
    MethodSpec, RmseSpec, Snr, SnrSweepSpec,
};
use crate::scenario::{GeometryScenario, HarvesterModel};
use crate::signal::DiscretePhaseSet;

/// Bumped whenever the config keys or the CSV schema change.
pub const FORMAT_VERSION: u32 = 1;
pub const CONFIG_DIALECT: &str = "toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub n_elements: Option<usize>,
    pub sweeps: Option<usize>,
    pub random_sweeps: Option<usize>,
    /// `L` for the proposed method (convergence, harvest).
    pub probes: Option<usize>,
    /// `L` values for the SNR sweep.
    pub l_values: Option<Vec<usize>>,
    pub snr_db: Option<Vec<f64>>,
    /// Adds a noiseless run next to the `snr_db` entries.
    pub noiseless: Option<bool>,
    /// Convergence methods: proposed, random, closed_form, linear.
    pub methods: Option<Vec<String>>,
    /// Discrete alphabet in radians.
    pub omega: Option<Vec<f64>>,
    /// Shorthand for a k-PSK alphabet when `omega` is absent.
    pub omega_psk: Option<usize>,
    /// Algorithm-4 probe values in radians; must be members of `omega`.
    pub probe_phases: Option<Vec<f64>>,
    /// Custom probe offsets (linear method, RMSE study).
    pub phi: Option<Vec<f64>>,
    pub grid_step: Option<u64>,
    pub grid_max: Option<u64>,
    pub initial_phases: Option<InitialPhases>,
    pub output_dir: Option<String>,
    pub format: Option<OutputFormat>,
    pub rmse: Option<RmseBlock>,
    pub geometry: Option<GeometryBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmseBlock {
    /// Number of equally spaced `theta` values on `[0, 2pi)`.
    pub theta_points: Option<usize>,
    pub thetas: Option<Vec<f64>>,
    pub magnitudes: Option<Vec<f64>>,
    pub include_ml: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub sides: Option<Vec<usize>>,
    pub wavelength: Option<f64>,
    pub tx_position: Option<[f64; 3]>,
    pub rx_position: Option<[f64; 3]>,
    pub transmit_power: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub p_sat: Option<f64>,
}

/// One problem found in a config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: `{}`: {}", self.field, self.message),
            None => write!(f, "`{}`: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    Convergence(ConvergenceSpec),
    SnrSweep(SnrSweepSpec),
    Discrete(Vec<DiscreteSpec>),
    Rmse(RmseSpec),
    Harvest(HarvestSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub trials: usize,
    pub output_dir: String,
    pub format: OutputFormat,
    pub plan: Plan,
    /// Effective config (overrides applied), echoed into the manifest.
    pub raw: RawConfig,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub output_dir: Option<String>,
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses TOML into the raw key set, reporting syntax and unknown-key errors.
pub fn parse_raw(text: &str) -> Result<RawConfig, Vec<Diagnostic>> {
    toml::from_str::<RawConfig>(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start));
        let message = e.message().to_string();
        let field = message
            .split('`')
            .nth(1)
            .unwrap_or("<document>")
            .to_string();
        vec![Diagnostic { field, line, message }]
    })
}

struct Checker<'a> {
    text: &'a str,
    out: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn fail(&mut self, field: &str, message: impl Into<String>) {
        let key = field.rsplit('.').next().unwrap_or(field);
        self.out.push(Diagnostic {
            field: field.to_string(),
            line: line_of_key(self.text, key),
            message: message.into(),
        });
    }

    fn require<T: Clone>(&mut self, field: &str, v: &Option<T>) -> Option<T> {
        if v.is_none() {
            self.fail(field, "missing required field");
        }
        v.clone()
    }
}

const EXPERIMENTS: [&str; 5] = ["convergence", "snr_sweep", "discrete", "rmse", "harvest"];

fn snr_list(raw: &RawConfig, c: &mut Checker) -> Vec<Snr> {
    let mut out: Vec<Snr> = Vec::new();
    if raw.noiseless.unwrap_or(false) {
        out.push(Snr::Noiseless);
    }
    for &v in raw.snr_db.as_deref().unwrap_or(&[]) {
        if !v.is_finite() {
            c.fail("snr_db", format!("SNR {v} dB is not finite; use `noiseless = true`"));
        }
        out.push(Snr::Db(v));
    }
    out
}

fn check_l(c: &mut Checker, field: &str, l: usize) {
    if l < 3 {
        c.fail(field, format!("L = {l} violates L >= 3 (three unknowns per element)"));
    }
}

fn omega_from(raw: &RawConfig, c: &mut Checker) -> Option<DiscretePhaseSet> {
    let values = match (&raw.omega, raw.omega_psk) {
        (Some(v), _) => v.clone(),
        (None, Some(k)) => (0..k).map(|i| TAU * i as f64 / k as f64).collect(),
        (None, None) => (0..4).map(|i| PI / 2.0 * i as f64).collect(),
    };
    let mut ok = true;
    if values.len() < 3 {
        c.fail("omega", format!("needs at least 3 phases, got {}", values.len()));
        ok = false;
    }
    for (i, v) in values.iter().enumerate() {
        if !(0.0..TAU).contains(v) {
            c.fail("omega", format!("phase {v} is outside [0, 2pi)"));
            ok = false;
        }
        if values[..i].contains(v) {
            c.fail("omega", format!("phase {v} appears more than once; entries must be distinct"));
            ok = false;
        }
    }
    if !ok {
        return None;
    }
    DiscretePhaseSet::new(values).ok()
}

fn probe_indices(raw: &RawConfig, omega: &DiscretePhaseSet, c: &mut Checker) -> Option<[usize; 3]> {
    let p = raw.probe_phases.as_ref()?;
    if p.len() != 3 {
        c.fail("probe_phases", format!("needs exactly 3 phases, got {}", p.len()));
        return None;
    }
    let mut idx = [0usize; 3];
    for (k, v) in p.iter().enumerate() {
        match omega.index_of(*v) {
            Some(i) => idx[k] = i,
            None => {
                c.fail("probe_phases", format!("probe {v} is not a member of omega"));
                return None;
            }
        }
    }
    if crate::estimation::triple_determinant(p[0], p[1], p[2]).abs() <= 1e-12 {
        c.fail(
            "probe_phases",
            "inadmissible triple: sin(p1-p3)+sin(p2-p1)+sin(p3-p2) = 0",
        );
        return None;
    }
    Some(idx)
}

fn phi_from(raw: &RawConfig, c: &mut Checker) -> Option<MeasurementPhaseSet> {
    let v = raw.phi.clone()?;
    if v.len() < 3 {
        c.fail("phi", format!("L = {} violates L >= 3", v.len()));
        return None;
    }
    match MeasurementPhaseSet::new(v) {
        Ok(phi) if phi.is_admissible() => Some(phi),
        Ok(_) => {
            c.fail("phi", "probe offsets give a singular design (rank < 3)");
            None
        }
        Err(e) => {
            c.fail("phi", e.to_string());
            None
        }
    }
}

fn positive(c: &mut Checker, field: &str, v: Option<usize>) {
    if v == Some(0) {
        c.fail(field, "must be >= 1");
    }
}

/// Applies overrides, then validates everything and builds the plan.
pub fn build(text: &str, overrides: &Overrides) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let mut raw = parse_raw(text)?;
    if let Some(s) = overrides.seed {
        raw.seed = Some(s);
    }
    if let Some(t) = overrides.trials {
        raw.trials = Some(t);
    }
    if let Some(o) = &overrides.output_dir {
        raw.output_dir = Some(o.clone());
    }
    let mut c = Checker { text, out: Vec::new() };

    let experiment = c.require("experiment", &raw.experiment);
    let seed = c.require("seed", &raw.seed);
    let trials = c.require("trials", &raw.trials);
    positive(&mut c, "trials", trials);
    positive(&mut c, "n_elements", raw.n_elements);
    positive(&mut c, "sweeps", raw.sweeps);
    positive(&mut c, "random_sweeps", raw.random_sweeps);
    if let Some(l) = raw.probes {
        check_l(&mut c, "probes", l);
    }
    for &l in raw.l_values.as_deref().unwrap_or(&[]) {
        check_l(&mut c, "l_values", l);
    }
    if raw.grid_step == Some(0) {
        c.fail("grid_step", "must be >= 1");
    }
    let snrs = snr_list(&raw, &mut c);
    let phi = phi_from(&raw, &mut c);
    let initial = raw.initial_phases.unwrap_or_default();

    let plan = match experiment.as_deref() {
        None => None,
        Some(e) if !EXPERIMENTS.contains(&e) => {
            c.fail("experiment", format!("unknown experiment `{e}`; expected one of {EXPERIMENTS:?}"));
            None
        }
        Some(e) => build_plan(e, &raw, &mut c, seed.unwrap_or(0), trials.unwrap_or(1), snrs, phi, initial),
    };

    if !c.out.is_empty() {
        return Err(c.out);
    }
    Ok(ExperimentConfig {
        experiment: experiment.unwrap_or_default(),
        seed: seed.unwrap_or_default(),
        trials: trials.unwrap_or_default(),
        output_dir: raw.output_dir.clone().unwrap_or_else(|| "results".into()),
        format: raw.format.unwrap_or_default(),
        plan: plan.expect("plan exists when there are no diagnostics"),
        raw,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_plan(
    experiment: &str,
    raw: &RawConfig,
    c: &mut Checker,
    seed: u64,
    trials: usize,
    snrs: Vec<Snr>,
    phi: Option<MeasurementPhaseSet>,
    initial: InitialPhases,
) -> Option<Plan> {
    let need_snrs = |c: &mut Checker, snrs: &[Snr]| {
        if snrs.is_empty() {
            c.fail("snr_db", "at least one SNR (or `noiseless = true`) is required");
        }
    };
    match experiment {
        "convergence" => {
            let n = c.require("n_elements", &raw.n_elements);
            need_snrs(c, &snrs);
            let l = raw.probes.unwrap_or(3);
            let sweeps = raw.sweeps.unwrap_or(10);
            let random_sweeps = raw.random_sweeps.unwrap_or(30);
            let names = raw
                .methods
                .clone()
                .unwrap_or_else(|| vec!["proposed".into(), "random".into()]);
            let mut methods = Vec::new();
            for m in &names {
                let method = match m.as_str() {
                    "proposed" => Method::Dft(l),
                    "random" => Method::Random,
                    "closed_form" => Method::ClosedForm,
                    "linear" => match &phi {
                        Some(p) => Method::Linear(p.clone()),
                        None => {
                            c.fail("methods", "method `linear` needs a `phi` probe set");
                            continue;
                        }
                    },
                    other => {
                        c.fail("methods", format!("unknown method `{other}`"));
                        continue;
                    }
                };
                let sweeps = if method == Method::Random { random_sweeps } else { sweeps };
                methods.push(MethodSpec { method, sweeps });
            }
            let budget = methods
                .iter()
                .map(|m| match m.method.probes() {
                    Some(l) => (l * m.sweeps) as u64,
                    None => m.sweeps as u64 + 1,
                })
                .max()
                .unwrap_or(0)
                * n.unwrap_or(0) as u64;
            let step = raw.grid_step.unwrap_or(l as u64).max(1);
            let grid = linear_grid(raw.grid_max.unwrap_or(budget.div_ceil(step) * step), step);
            Some(Plan::Convergence(ConvergenceSpec {
                n: n?,
                methods,
                snrs,
                trials,
                seed,
                grid,
                initial,
            }))
        }
        "snr_sweep" => {
            let n = c.require("n_elements", &raw.n_elements);
            need_snrs(c, &snrs);
            let ls = raw.l_values.clone().or(raw.probes.map(|l| vec![l])).unwrap_or(vec![3]);
            let mut spec = SnrSweepSpec::new(n?, ls, snrs, trials, seed);
            spec.sweeps = raw.sweeps.unwrap_or(10);
            spec.random_sweeps = raw.random_sweeps.unwrap_or(30);
            spec.initial = initial;
            Some(Plan::SnrSweep(spec))
        }
        "discrete" => {
            let n = c.require("n_elements", &raw.n_elements);
            let omega = omega_from(raw, c)?;
            let probes = probe_indices(raw, &omega, c);
            if raw.probe_phases.is_some() && probes.is_none() {
                return None;
            }
            let n = n?;
            let size = (omega.len() as f64).powi(n as i32);
            if size > crate::alignment::EXHAUSTIVE_LIMIT {
                c.fail(
                    "n_elements",
                    format!("|omega|^N = {size:e} exceeds the exhaustive-search limit 1e8"),
                );
                return None;
            }
            let snrs = if snrs.is_empty() { vec![Snr::Noiseless] } else { snrs };
            let sweeps = raw.sweeps.unwrap_or(30);
            let random_sweeps = raw.random_sweeps.unwrap_or(30);
            let step = raw.grid_step.unwrap_or(3).max(1);
            let budget = (3 * sweeps).max(random_sweeps + 1) as u64 * n as u64;
            let max = raw.grid_max.unwrap_or(budget.div_ceil(step) * step);
            let grid = linear_grid(max, step);
            Some(Plan::Discrete(
                snrs.into_iter()
                    .map(|snr| DiscreteSpec {
                        n,
                        omega: omega.clone(),
                        probes,
                        snr,
                        trials,
                        seed,
                        sweeps,
                        random_sweeps,
                        grid: grid.clone(),
                        initial,
                    })
                    .collect(),
            ))
        }
        "rmse" => {
            let block = raw.rmse.clone().unwrap_or(RmseBlock {
                theta_points: None,
                thetas: None,
                magnitudes: None,
                include_ml: None,
            });
            if raw.noiseless == Some(true) {
                c.fail("noiseless", "the RMSE study needs a finite SNR");
            }
            let snrs_db = raw.snr_db.clone().unwrap_or_default();
            if snrs_db.is_empty() {
                c.fail("snr_db", "at least one SNR is required");
            }
            let thetas = match (&block.thetas, block.theta_points) {
                (Some(t), _) => t.clone(),
                (None, Some(0)) => {
                    c.fail("rmse.theta_points", "must be >= 1");
                    vec![]
                }
                (None, k) => RmseSpec::theta_grid(k.unwrap_or(36)),
            };
            let magnitudes = block.magnitudes.clone().unwrap_or(vec![1.0, 3.0, 10.0, 1.0 / 3.0, 0.1]);
            if magnitudes.iter().any(|m| !(*m > 0.0)) {
                c.fail("rmse.magnitudes", "every |z| must be > 0");
            }
            let phi = match (phi, &raw.phi) {
                (Some(p), _) => p,
                (None, Some(_)) => return None,
                (None, None) => MeasurementPhaseSet::equally_spaced(raw.probes.unwrap_or(3).max(3), 0.0).ok()?,
            };
            Some(Plan::Rmse(RmseSpec {
                thetas,
                magnitudes,
                snrs_db,
                phi,
                trials,
                seed,
                include_ml: block.include_ml.unwrap_or(true),
            }))
        }
        "harvest" => {
            let g = raw.geometry.clone().unwrap_or(GeometryBlock {
                sides: None,
                wavelength: None,
                tx_position: None,
                rx_position: None,
                transmit_power: None,
                a: None,
                b: None,
                p_sat: None,
            });
            let d = GeometryScenario::default();
            let scenario = GeometryScenario {
                wavelength: g.wavelength.unwrap_or(d.wavelength),
                tx_position: g.tx_position.unwrap_or(d.tx_position),
                rx_position: g.rx_position.unwrap_or(d.rx_position),
                transmit_power: g.transmit_power.unwrap_or(d.transmit_power),
                ..d
            };
            if let Err(e) = scenario.validate() {
                c.fail("geometry", e.to_string());
            }
            let h = HarvesterModel::default();
            let harvester = HarvesterModel {
                a: g.a.unwrap_or(h.a),
                b: g.b.unwrap_or(h.b),
                p_sat: g.p_sat.unwrap_or(h.p_sat),
            };
            if let Err(e) = harvester.validate() {
                c.fail("geometry", e.to_string());
            }
            let sides = g.sides.clone().unwrap_or(vec![4, 8, 16, 32, 64]);
            if sides.is_empty() || sides.contains(&0) {
                c.fail("geometry.sides", "side lengths must be >= 1");
            }
            if raw.noiseless == Some(true) {
                c.fail("noiseless", "the harvest study is defined at finite SNRs");
            }
            let snrs_db = raw.snr_db.clone().unwrap_or_default();
            if snrs_db.is_empty() {
                c.fail("snr_db", "at least one SNR is required");
            }
            Some(Plan::Harvest(HarvestSpec {
                sides,
                snrs_db,
                trials,
                seed,
                l: raw.probes.unwrap_or(3),
                sweeps: raw.sweeps.unwrap_or(10),
                random_sweeps: raw.random_sweeps.unwrap_or(30),
                scenario,
                harvester,
            }))
        }
        _ => None,
    }
}

/// One line of the long-format output. `mnap` holds the statistic named in
/// `extra` when that is not the NAP (e.g. `stat=rmse`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputRow {
    pub experiment: String,
    pub method: String,
    pub n: Option<usize>,
    pub l: Option<usize>,
    pub snr_db: String,
    pub measurements: Option<f64>,
    pub mnap: f64,
    pub ci95: Option<f64>,
    pub extra: String,
}

fn curve_rows(experiment: &str, n: usize, run: &MethodRun, out: &mut Vec<OutputRow>) {
    for ((g, m), c) in run.curve.grid.iter().zip(&run.curve.mnap).zip(&run.curve.ci95) {
        out.push(OutputRow {
            experiment: experiment.into(),
            method: run.method.clone(),
            n: Some(n),
            l: run.l,
            snr_db: run.snr.label(),
            measurements: Some(*g as f64),
            mnap: *m,
            ci95: Some(*c),
            extra: "stat=curve".into(),
        });
    }
    out.push(OutputRow {
        experiment: experiment.into(),
        method: run.method.clone(),
        n: Some(n),
        l: run.l,
        snr_db: run.snr.label(),
        measurements: Some(run.mean_measurements),
        mnap: run.final_mnap,
        ci95: Some(run.final_ci95),
        extra: format!("stat=final;sweeps={};trials={}", run.sweeps, run.trials.len()),
    });
}

/// Runs the plan and flattens its results into output rows.
pub fn execute(plan: &Plan) -> crate::Result<Vec<OutputRow>> {
    let mut rows = Vec::new();
    match plan {
        Plan::Convergence(spec) => {
            for run in convergence_experiment(spec)? {
                curve_rows("convergence", spec.n, &run, &mut rows);
            }
        }
        Plan::SnrSweep(spec) => {
            for run in snr_sweep(spec)? {
                rows.push(OutputRow {
                    experiment: "snr_sweep".into(),
                    method: run.method.clone(),
                    n: Some(spec.n),
                    l: run.l,
                    snr_db: run.snr.label(),
                    measurements: Some(run.mean_measurements),
                    mnap: run.final_mnap,
                    ci95: Some(run.final_ci95),
                    extra: format!("stat=final;sweeps={};trials={}", run.sweeps, run.trials.len()),
                });
            }
        }
        Plan::Discrete(specs) => {
            for spec in specs {
                let res = discrete_experiment(spec)?;
                curve_rows("discrete", spec.n, &res.discrete, &mut rows);
                curve_rows("discrete", spec.n, &res.random, &mut rows);
                rows.push(OutputRow {
                    experiment: "discrete".into(),
                    method: "oracle".into(),
                    n: Some(spec.n),
                    l: None,
                    snr_db: spec.snr.label(),
                    measurements: None,
                    mnap: res.oracle_mnap,
                    ci95: Some(res.oracle_ci95),
                    extra: format!("stat=oracle;violations={}", res.oracle_violations),
                });
            }
        }
        Plan::Rmse(spec) => {
            for r in rmse_study(spec)? {
                let base = OutputRow {
                    experiment: "rmse".into(),
                    method: "linear".into(),
                    n: Some(1),
                    l: Some(spec.phi.len()),
                    snr_db: format!("{}", r.snr_db),
                    measurements: Some(spec.phi.len() as f64),
                    mnap: r.rmse_linear,
                    ci95: None,
                    extra: format!(
                        "stat=rmse;theta={};z={};trials={};ambiguous={}",
                        r.theta, r.magnitude, r.trials, r.ambiguous_linear
                    ),
                };
                if let Some(ml) = r.rmse_ml {
                    rows.push(OutputRow {
                        method: "ml".into(),
                        mnap: ml,
                        extra: format!(
                            "stat=rmse;theta={};z={};trials={};solver_failures={}",
                            r.theta, r.magnitude, r.trials, r.ml_failures
                        ),
                        ..base.clone()
                    });
                }
                rows.push(base);
            }
        }
        Plan::Harvest(spec) => {
            for r in harvest_experiment(spec)? {
                rows.push(OutputRow {
                    experiment: "harvest".into(),
                    method: r.method.clone(),
                    n: Some(r.n),
                    l: (r.method == "proposed").then_some(spec.l),
                    snr_db: format!("{}", r.snr_db),
                    measurements: None,
                    mnap: r.mnap,
                    ci95: None,
                    extra: format!(
                        "stat=harvest;harvested_w={};harvested_ci95_w={};harvested_dbm={}",
                        r.mean_watts, r.ci95_watts, r.mean_dbm
                    ),
                });
            }
        }
    }
    Ok(rows)
}
