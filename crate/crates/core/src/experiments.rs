//! Named experiment drivers, one per study, producing CSV-ready
//! tables.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{
    evolve_exact, evolve_schrodinger, propagate_fock_superposition, Probe, Record, SolverOptions, Target,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::floquet::{
    driven_hamiltonian, effective_hamiltonian, matched_ga, ErrorParams, Frame, MismatchTarget, SystemParams,
    Variant,
};
use crate::operators::{BasisState, HilbertSpace, Qubit, Restriction, StateVector};
use crate::protocol::{prepare_fock, run_noon_protocol, EvolutionMode, ProtocolParams, PulseMode};

pub const TRAJECTORY_COLUMNS: [&str; 7] = ["t", "P_a", "P_1", "P_2", "fidelity", "norm", "leakage"];
pub const SWEEP_COLUMNS: [&str; 3] = ["sweep_value", "N", "population"];
pub const MC_COLUMNS: [&str; 5] = ["epsilon", "P_min", "P_max", "P_mean", "samples"];
pub const LADDER_COLUMNS: [&str; 5] = ["gamma", "N", "outcome", "fidelity", "probability"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentName {
    #[serde(rename = "fig2_chirality")]
    Fig2Chirality,
    #[serde(rename = "fig3_delta_sweep")]
    Fig3DeltaSweep,
    #[serde(rename = "table1_N_sweep")]
    Table1NSweep,
    #[serde(rename = "fig4_epsilon_mc")]
    Fig4EpsilonMc,
    #[serde(rename = "fig5_mismatch")]
    Fig5Mismatch,
    #[serde(rename = "fig6_counter_rotating")]
    Fig6CounterRotating,
    #[serde(rename = "fig7_fock_prep")]
    Fig7FockPrep,
    #[serde(rename = "fig8_noon_fidelity")]
    Fig8NoonFidelity,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 8] = [
        ExperimentName::Fig2Chirality,
        ExperimentName::Fig3DeltaSweep,
        ExperimentName::Table1NSweep,
        ExperimentName::Fig4EpsilonMc,
        ExperimentName::Fig5Mismatch,
        ExperimentName::Fig6CounterRotating,
        ExperimentName::Fig7FockPrep,
        ExperimentName::Fig8NoonFidelity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::Fig2Chirality => "fig2_chirality",
            ExperimentName::Fig3DeltaSweep => "fig3_delta_sweep",
            ExperimentName::Table1NSweep => "table1_N_sweep",
            ExperimentName::Fig4EpsilonMc => "fig4_epsilon_mc",
            ExperimentName::Fig5Mismatch => "fig5_mismatch",
            ExperimentName::Fig6CounterRotating => "fig6_counter_rotating",
            ExperimentName::Fig7FockPrep => "fig7_fock_prep",
            ExperimentName::Fig8NoonFidelity => "fig8_noon_fidelity",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

/// System parameters as configured: the chiral operating point for `g` and
/// `omega`, with optional overrides. `g_a` is re-matched unless given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub g: f64,
    pub omega: f64,
    pub omega_a: f64,
    /// Drive ratio `Δ/ω`; the first zero of `J_0` when absent.
    pub f: Option<f64>,
    pub phi: Option<[f64; 2]>,
    pub g_a: Option<f64>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            g: 1.0,
            omega: 20.0,
            omega_a: 200.0,
            f: None,
            phi: None,
            g_a: None,
        }
    }
}

impl SystemConfig {
    pub fn resolve(&self) -> Result<SystemParams> {
        if !(self.g > 0.0 && self.omega > 0.0) {
            return Err(Error::InvalidParameter("g and omega must be positive".into()));
        }
        let mut p = SystemParams::operating_point(self.g, self.omega);
        p.omega_a = self.omega_a;
        if let Some(f) = self.f {
            p.delta_drive = f * self.omega;
        }
        if let Some(phi) = self.phi {
            p.phi = phi;
        }
        p.g_a = self.g_a.unwrap_or_else(|| matched_ga(&p));
        p.validate()?;
        Ok(p)
    }

    fn with_omega(&self, omega: f64) -> SystemConfig {
        SystemConfig { omega, ..*self }
    }

    fn with_omega_a(&self, omega_a: f64) -> SystemConfig {
        SystemConfig { omega_a, ..*self }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    pub params: SystemConfig,
    pub errors: ErrorParams,
    pub protocol: ProtocolParams,
    /// Primary sweep values (δ, ε, χ, ω_a or γ by experiment).
    pub grid: Vec<f64>,
    /// Excitation numbers swept or used.
    pub n_values: Vec<usize>,
    /// Drive frequencies of the second counter-rotating panel.
    pub omega_grid: Vec<f64>,
    /// Monte Carlo samples per grid point.
    pub samples: usize,
    pub seed: u64,
    /// Dynamics used for the transfer; overrides `protocol.evolution`.
    pub mode: EvolutionMode,
    /// Samples on each emitted trajectory.
    pub time_points: usize,
    pub solver: SolverOptions,
}

fn stepped(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

impl ExperimentConfig {
    /// Per-experiment default grids and parameters for `name`.
    pub fn new(name: ExperimentName) -> Self {
        let mut c = ExperimentConfig {
            name,
            params: SystemConfig::default(),
            errors: ErrorParams::default(),
            protocol: ProtocolParams::default(),
            grid: Vec::new(),
            n_values: vec![2],
            omega_grid: Vec::new(),
            samples: 100,
            seed: 0,
            mode: EvolutionMode::Full,
            time_points: 201,
            solver: SolverOptions::default(),
        };
        match name {
            ExperimentName::Fig2Chirality => c.n_values = vec![1],
            ExperimentName::Fig3DeltaSweep => {
                c.grid = stepped(-0.2, 0.2, 0.02);
                c.n_values = vec![1, 2, 3];
            }
            ExperimentName::Table1NSweep => c.n_values = (1..=10).collect(),
            ExperimentName::Fig4EpsilonMc => c.grid = stepped(0.0, 0.2, 0.02),
            ExperimentName::Fig5Mismatch => c.grid = vec![0.0, 1e-5, 1e-4],
            ExperimentName::Fig6CounterRotating => {
                c.grid = vec![50.0, 100.0, 200.0];
                c.omega_grid = vec![15.0, 20.0, 25.0, 30.0];
            }
            ExperimentName::Fig7FockPrep => {
                c.n_values = vec![5];
                c.protocol = ProtocolParams {
                    n: 5,
                    gamma: 1e-5,
                    kappa_a: 1e-5,
                    kappa_m: 1e-5,
                    g_a_prep: Some(1.0),
                    pulse_mode: PulseMode::FiniteWithCoupling,
                    samples_per_stage: 24,
                    ..ProtocolParams::default()
                };
            }
            ExperimentName::Fig8NoonFidelity => {
                c.grid = vec![0.0, 1e-5, 1e-4, 1e-3];
                c.n_values = (1..=5).collect();
            }
        }
        c
    }

    /// Parses a JSON document on top of the defaults for its experiment.
    /// `name` fills in or must agree with the document's `name` key.
    pub fn from_json(text: &str, name: Option<ExperimentName>) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let Value::Object(map) = &doc else {
            return Err(Error::InvalidConfig("config must be a JSON object".into()));
        };
        let named = match map.get("name") {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| Error::InvalidConfig("name must be a string".into()))?
                    .parse::<ExperimentName>()?,
            ),
            None => None,
        };
        let resolved = match (named, name) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::InvalidConfig(format!("config is for {a}, not {b}")));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::InvalidConfig("missing experiment name".into())),
        };
        let mut base = serde_json::to_value(ExperimentConfig::new(resolved)).expect("config serializes");
        merge(&mut base, doc);
        if let Value::Object(m) = &mut base {
            m.insert("name".into(), Value::String(resolved.as_str().into()));
        }
        let config: ExperimentConfig =
            serde_json::from_value(base).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params.resolve()?;
        self.errors.validate()?;
        self.solver.validate()?;
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be at least 1".into()));
        }
        if self.time_points < 2 {
            return Err(Error::InvalidConfig("time_points must be at least 2".into()));
        }
        if self.grid.iter().chain(&self.omega_grid).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("grid values must be finite".into()));
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::InvalidConfig("n_values must be nonempty and at least 1".into()));
        }
        let needs_grid = !matches!(
            self.name,
            ExperimentName::Fig2Chirality | ExperimentName::Table1NSweep | ExperimentName::Fig7FockPrep
        );
        if needs_grid && self.grid.is_empty() {
            return Err(Error::InvalidConfig("grid must be nonempty".into()));
        }
        match self.name {
            ExperimentName::Fig3DeltaSweep if self.grid.iter().any(|d| d.abs() >= 1.0) => {
                return Err(Error::InvalidConfig("delta must lie in (-1, 1)".into()));
            }
            ExperimentName::Fig4EpsilonMc if self.grid.iter().any(|e| !(0.0..1.0).contains(e)) => {
                return Err(Error::InvalidConfig("epsilon must lie in [0, 1)".into()));
            }
            ExperimentName::Fig6CounterRotating
                if self.grid.iter().chain(&self.omega_grid).any(|w| *w <= 0.0) =>
            {
                return Err(Error::InvalidConfig("frequencies must be positive".into()));
            }
            ExperimentName::Fig8NoonFidelity if self.grid.iter().any(|g| *g < 0.0) => {
                return Err(Error::InvalidConfig("decay rates must be non-negative".into()));
            }
            _ => {}
        }
        if matches!(self.name, ExperimentName::Fig7FockPrep | ExperimentName::Fig8NoonFidelity) {
            let mut pp = self.protocol;
            pp.evolution = self.mode;
            if self.name == ExperimentName::Fig8NoonFidelity && self.mode == EvolutionMode::Analytic {
                if self.grid.iter().any(|g| *g > 0.0) {
                    return Err(Error::InvalidConfig("analytic mode has no dissipation; use gamma = 0".into()));
                }
                pp.include_dissipation = false;
            }
            pp.validate(&params)?;
        }
        Ok(())
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// One CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Real(f64),
    Int(usize),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Real(x) => write!(f, "{x:.16e}"),
            Cell::Int(n) => write!(f, "{n}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

/// Table written as `<stem>.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub stem: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(stem: impl Into<String>, columns: &[&'static str]) -> Self {
        Table {
            stem: stem.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Numeric column by name; text cells read as NaN.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| *c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[j] {
                    Cell::Real(x) => *x,
                    Cell::Int(n) => *n as f64,
                    Cell::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }

    pub fn text_column(&self, name: &str) -> Option<Vec<String>> {
        let j = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[j].to_string()).collect())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Metadata {
    pub params: SystemParams,
    pub errors: ErrorParams,
    pub protocol: ProtocolParams,
    pub seed: u64,
    pub runtime_seconds: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub name: ExperimentName,
    /// The first table is the experiment's primary output.
    pub tables: Vec<Table>,
    pub metadata: Metadata,
}

impl ExperimentResult {
    pub fn table(&self, stem: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.stem == stem)
    }

    pub fn primary(&self) -> &Table {
        &self.tables[0]
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let start = Instant::now();
    let params = config.params.resolve()?;
    let mut warnings = Vec::new();
    let tables = match config.name {
        ExperimentName::Fig2Chirality => fig2_chirality(config, &params)?,
        ExperimentName::Fig3DeltaSweep => fig3_delta_sweep(config, &params)?,
        ExperimentName::Table1NSweep => table1_n_sweep(config, &params)?,
        ExperimentName::Fig4EpsilonMc => fig4_epsilon_mc(config, &params)?,
        ExperimentName::Fig5Mismatch => fig5_mismatch(config, &params)?,
        ExperimentName::Fig6CounterRotating => fig6_counter_rotating(config, &mut warnings)?,
        ExperimentName::Fig7FockPrep => fig7_fock_prep(config, &params)?,
        ExperimentName::Fig8NoonFidelity => fig8_noon_fidelity(config, &params, &mut warnings)?,
    };
    Ok(ExperimentResult {
        name: config.name,
        tables,
        metadata: Metadata {
            params,
            errors: config.errors,
            protocol: config.protocol,
            seed: config.seed,
            runtime_seconds: start.elapsed().as_secs_f64(),
            warnings,
        },
    })
}

/// Space for an `N`-excitation transfer: the excitation window `[N, N+1]`
/// at cutoff `N+1` when the variant conserves excitation, the full space at
/// cutoff `N+2` otherwise.
pub fn transfer_space(n: usize, variant: Variant) -> Arc<HilbertSpace> {
    if variant.conserves_excitation() {
        HilbertSpace::restricted(
            [n + 1; 3],
            Restriction {
                min_excitation: n,
                max_excitation: n + 1,
            },
        )
    } else {
        HilbertSpace::new([n + 2; 3])
    }
}

/// `(|eN00⟩ + |gN00⟩)/√2`.
pub fn transfer_initial_state(space: &Arc<HilbertSpace>, n: usize) -> Result<StateVector> {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    StateVector::superposition(
        space,
        &[(h, BasisState::new(Qubit::E, n, 0, 0)), (h, BasisState::new(Qubit::G, n, 0, 0))],
    )
}

/// Population of the chiral target, `|⟨e00N|ψ⟩|² + |⟨g0N0|ψ⟩|²`.
pub fn transfer_target(space: &Arc<HilbertSpace>, n: usize) -> Result<Target> {
    Target::components(space, &[BasisState::new(Qubit::E, 0, 0, n), BasisState::new(Qubit::G, 0, n, 0)])
}

/// Highest frequency a driven variant carries, for step bounding.
fn fastest_frequency(params: &SystemParams, variant: Variant) -> f64 {
    if variant == Variant::CounterRotating {
        2.0 * params.omega_a + params.omega
    } else {
        params.omega
    }
}

/// Evolves `state` under `variant` with the chosen dynamics.
pub fn evolve_variant(
    state: &StateVector,
    params: &SystemParams,
    errors: &ErrorParams,
    variant: Variant,
    mode: EvolutionMode,
    solver: &SolverOptions,
    times: &[f64],
    probe: &Probe,
) -> Result<(Trajectory, StateVector)> {
    let space = state.space();
    let ev = match mode {
        EvolutionMode::Full => {
            let h = driven_hamiltonian(space, params, errors, variant, Frame::Drive)?;
            let opts = solver.for_drive(fastest_frequency(params, variant));
            evolve_schrodinger(&h, state, times, probe, &opts)?
        }
        EvolutionMode::Effective => {
            let h = effective_hamiltonian(space, params, errors, variant)?;
            evolve_schrodinger(&h, state, times, probe, solver)?
        }
        EvolutionMode::Analytic => {
            let h = effective_hamiltonian(space, params, errors, variant)?;
            evolve_exact(&h, state, times, probe)?
        }
    };
    Ok((ev.trajectory, ev.final_state))
}

/// Target-population trajectory of the `N`-excitation transfer.
pub fn transfer_trajectory(
    params: &SystemParams,
    errors: &ErrorParams,
    variant: Variant,
    n: usize,
    mode: EvolutionMode,
    solver: &SolverOptions,
    times: &[f64],
) -> Result<Trajectory> {
    let space = transfer_space(n, variant);
    let psi = transfer_initial_state(&space, n)?;
    let probe = Probe::levels(&[n]).with_target(transfer_target(&space, n)?);
    Ok(evolve_variant(&psi, params, errors, variant, mode, solver, times, &probe)?.0)
}

/// Target population at the transfer time `T`.
pub fn transfer_population(
    params: &SystemParams,
    errors: &ErrorParams,
    variant: Variant,
    n: usize,
    mode: EvolutionMode,
    solver: &SolverOptions,
) -> Result<f64> {
    let t = params.transfer_time();
    let traj = transfer_trajectory(params, errors, variant, n, mode, solver, &[0.0, t])?;
    Ok(traj.records[1].targets[0])
}

fn time_grid(t_max: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| t_max * i as f64 / (points - 1) as f64).collect()
}

fn trajectory_table(stem: String, records: &[Record], fidelity: impl Fn(usize, &Record) -> f64) -> Table {
    let mut table = Table::new(stem, &TRAJECTORY_COLUMNS);
    for (i, r) in records.iter().enumerate() {
        table.rows.push(vec![
            Cell::Real(r.t),
            Cell::Real(r.populations[0]),
            Cell::Real(r.populations[1]),
            Cell::Real(r.populations[2]),
            Cell::Real(fidelity(i, r)),
            Cell::Real(r.norm),
            Cell::Real(r.leakage),
        ]);
    }
    table
}

fn sweep_row(value: f64, n: usize, population: f64) -> Vec<Cell> {
    vec![Cell::Real(value), Cell::Int(n), Cell::Real(population)]
}

fn branch_tag(q: Qubit) -> &'static str {
    match q {
        Qubit::E => "e",
        Qubit::G => "g",
    }
}

/// Single-excitation chirality from `|1⟩_a|0⟩|0⟩` on each qubit branch over
/// `[0, 3T]`. Tables: `<name>` (branch e, numeric), `<name>_g` (branch g,
/// numeric) and `<name>_{e,g}_analytic` (transfer matrices). The numeric
/// fidelity column is the overlap with the analytic state.
fn fig2_chirality(config: &ExperimentConfig, p: &SystemParams) -> Result<Vec<Table>> {
    let n = config.n_values[0];
    let space = HilbertSpace::restricted(
        [n + 1; 3],
        Restriction {
            min_excitation: n,
            max_excitation: n + 1,
        },
    );
    let times = time_grid(3.0 * p.transfer_time(), config.time_points);
    let probe = Probe::levels(&[n]);
    let errors = ErrorParams::default();
    let runs: Vec<Result<[Table; 2]>> = [Qubit::E, Qubit::G]
        .par_iter()
        .map(|&branch| {
            let analytic: Vec<StateVector> = times
                .iter()
                .map(|&t| propagate_fock_superposition(&space, &[(n, C64::new(1.0, 0.0))], branch, t, p))
                .collect::<Result<_>>()?;
            let exact: Vec<Record> = times
                .iter()
                .zip(&analytic)
                .map(|(&t, psi)| {
                    let probs: Vec<f64> = psi.amplitudes().iter().map(|a| a.norm_sqr()).collect();
                    Record {
                        t,
                        populations: probe.populations(&space, &probs),
                        targets: Vec::new(),
                        norm: probs.iter().sum(),
                        leakage: 0.0,
                        min_eigenvalue: None,
                    }
                })
                .collect();
            // Segment by segment, so the numeric state is available at each sample.
            let mut state = analytic[0].clone();
            let mut numeric = Vec::with_capacity(times.len());
            let mut overlaps = Vec::with_capacity(times.len());
            for k in 0..times.len() {
                if k > 0 {
                    let (traj, next) = evolve_variant(
                        &state,
                        p,
                        &errors,
                        Variant::Ideal,
                        config.mode,
                        &config.solver,
                        &times[k - 1..=k],
                        &probe,
                    )?;
                    if k == 1 {
                        numeric.push(traj.records[0].clone());
                    }
                    numeric.push(traj.records[1].clone());
                    state = next;
                }
                overlaps.push(analytic[k].inner(&state)?.norm_sqr());
            }
            let tag = branch_tag(branch);
            let num_stem = match branch {
                Qubit::E => config.name.to_string(),
                Qubit::G => format!("{}_g", config.name),
            };
            Ok([
                trajectory_table(num_stem, &numeric, |i, _| overlaps[i]),
                trajectory_table(format!("{}_{tag}_analytic", config.name), &exact, |_, _| 1.0),
            ])
        })
        .collect();
    let mut tables = Vec::new();
    let mut analytic = Vec::new();
    for r in runs {
        let [num, ana] = r?;
        tables.push(num);
        analytic.push(ana);
    }
    tables.extend(analytic);
    Ok(tables)
}

/// Target population at `T` vs `δ` and `N`. The `<name>_perturbative` table
/// carries `1 - Nδ²`.
fn fig3_delta_sweep(config: &ExperimentConfig, p: &SystemParams) -> Result<Vec<Table>> {
    let tasks: Vec<(usize, f64)> = config
        .n_values
        .iter()
        .flat_map(|&n| config.grid.iter().map(move |&d| (n, d)))
        .collect();
    let pops: Vec<Result<f64>> = tasks
        .par_iter()
        .map(|&(n, delta)| {
            let errors = ErrorParams { delta, ..config.errors };
            transfer_population(p, &errors, Variant::CouplingDeviation, n, config.mode, &config.solver)
        })
        .collect();
    let mut table = Table::new(config.name.to_string(), &SWEEP_COLUMNS);
    let mut pert = Table::new(format!("{}_perturbative", config.name), &SWEEP_COLUMNS);
    for (&(n, d), pop) in tasks.iter().zip(pops) {
        table.rows.push(sweep_row(d, n, pop?));
        pert.rows.push(sweep_row(d, n, 1.0 - n as f64 * d * d));
    }
    Ok(vec![table, pert])
}

/// Target population at `T` vs `N` for the ideal Hamiltonian; `sweep_value`
/// repeats `N`.
fn table1_n_sweep(config: &ExperimentConfig, p: &SystemParams) -> Result<Vec<Table>> {
    let pops: Vec<Result<f64>> = config
        .n_values
        .par_iter()
        .map(|&n| transfer_population(p, &config.errors, Variant::Ideal, n, config.mode, &config.solver))
        .collect();
    let mut table = Table::new(config.name.to_string(), &SWEEP_COLUMNS);
    for (&n, pop) in config.n_values.iter().zip(pops) {
        table.rows.push(sweep_row(n as f64, n, pop?));
    }
    Ok(vec![table])
}

/// Drive-intensity errors `ε_k = ε u_k` with `u_k` uniform on `[0, 1)`, drawn
/// from a ChaCha stream seeded with `seed + sample`.
pub fn sample_drive_errors(seed: u64, sample: usize, epsilon: f64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(sample as u64));
    let u: [f64; 2] = [rng.random(), rng.random()];
    u.map(|x| epsilon * x)
}

/// Min, max and mean target population at `T` over `samples` random drive
/// errors per `ε`, for the first entry of `n_values`.
fn fig4_epsilon_mc(config: &ExperimentConfig, p: &SystemParams) -> Result<Vec<Table>> {
    let n = config.n_values[0];
    let tasks: Vec<(usize, usize)> = (0..config.grid.len())
        .flat_map(|i| (0..config.samples).map(move |s| (i, s)))
        .collect();
    let pops: Vec<Result<f64>> = tasks
        .par_iter()
        .map(|&(i, s)| {
            let eps = config.grid[i];
            let errors = ErrorParams {
                epsilon: eps,
                epsilon_k: sample_drive_errors(config.seed, s, eps),
                ..config.errors
            };
            transfer_population(p, &errors, Variant::DriveError, n, config.mode, &config.solver)
        })
        .collect();
    let pops: Vec<f64> = pops.into_iter().collect::<Result<_>>()?;
    let mut table = Table::new(config.name.to_string(), &MC_COLUMNS);
    for (i, &eps) in config.grid.iter().enumerate() {
        let chunk = &pops[i * config.samples..(i + 1) * config.samples];
        let min = chunk.iter().copied().fold(f64::INFINITY, f64::min);
        let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        table.rows.push(vec![
            Cell::Real(eps),
            Cell::Real(min),
            Cell::Real(max),
            Cell::Real(mean.clamp(min, max)),
            Cell::Int(config.samples),
        ]);
    }
    Ok(vec![table])
}

/// Mismatch sweep for both targets. Tables: `<name>` (magnons),
/// `<name>_qubit`, and a trajectory `<name>_<target>_<i>` per grid point.
fn fig5_mismatch(config: &ExperimentConfig, p: &SystemParams) -> Result<Vec<Table>> {
    let n = config.n_values[0];
    let times = time_grid(p.transfer_time(), config.time_points);
    let targets = [MismatchTarget::Magnons, MismatchTarget::Qubit];
    let tasks: Vec<(MismatchTarget, usize)> = targets
        .iter()
        .flat_map(|&m| (0..config.grid.len()).map(move |i| (m, i)))
        .collect();
    let runs: Vec<Result<Trajectory>> = tasks
        .par_iter()
        .map(|&(target, i)| {
            let errors = ErrorParams {
                chi: config.grid[i],
                mismatch_target: target,
                ..config.errors
            };
            transfer_trajectory(p, &errors, Variant::mismatch(target), n, config.mode, &config.solver, &times)
        })
        .collect();
    let mut sweeps = [
        Table::new(config.name.to_string(), &SWEEP_COLUMNS),
        Table::new(format!("{}_qubit", config.name), &SWEEP_COLUMNS),
    ];
    let mut trajectories = Vec::new();
    for (&(target, i), run) in tasks.iter().zip(runs) {
        let traj = run?;
        let k = usize::from(target == MismatchTarget::Qubit);
        let last = traj.last().expect("nonempty grid").targets[0];
        sweeps[k].rows.push(sweep_row(config.grid[i], n, last));
        let tag = ["magnons", "qubit"][k];
        trajectories.push(trajectory_table(format!("{}_{tag}_{i}", config.name), &traj.records, |_, r| {
            r.targets[0]
        }));
    }
    let mut tables: Vec<Table> = sweeps.into();
    tables.extend(trajectories);
    Ok(tables)
}

/// Counter-rotating study. Tables: `<name>` (vs `ω_a` at the configured
/// `ω`), `<name>_omega` (vs `ω` at the configured `ω_a`), and trajectories
/// `<name>_omega_a_<i>`, `<name>_omega_<i>` up to `T(ω)`.
fn fig6_counter_rotating(config: &ExperimentConfig, warnings: &mut Vec<String>) -> Result<Vec<Table>> {
    let n = config.n_values[0];
    let mut tasks: Vec<(usize, usize, SystemConfig)> = Vec::new();
    for (i, &wa) in config.grid.iter().enumerate() {
        tasks.push((0, i, config.params.with_omega_a(wa)));
    }
    for (i, &w) in config.omega_grid.iter().enumerate() {
        tasks.push((1, i, config.params.with_omega(w)));
    }
    let runs: Vec<Result<Trajectory>> = tasks
        .par_iter()
        .map(|(_, _, sc)| {
            let p = sc.resolve()?;
            let times = time_grid(p.transfer_time(), config.time_points);
            transfer_trajectory(&p, &config.errors, Variant::CounterRotating, n, config.mode, &config.solver, &times)
        })
        .collect();
    let mut sweeps = [
        Table::new(config.name.to_string(), &SWEEP_COLUMNS),
        Table::new(format!("{}_omega", config.name), &SWEEP_COLUMNS),
    ];
    let mut trajectories = Vec::new();
    for ((panel, i, sc), run) in tasks.iter().zip(runs) {
        let traj = run?;
        let value = if *panel == 0 { sc.omega_a } else { sc.omega };
        if traj.leakage_flagged() {
            warnings.push(format!(
                "counter-rotating run at {} = {value}: top-level occupation {:.3e} exceeds the leakage threshold",
                ["omega_a", "omega"][*panel],
                traj.max_leakage()
            ));
        }
        let last = traj.last().expect("nonempty grid").targets[0];
        sweeps[*panel].rows.push(sweep_row(value, n, last));
        let tag = ["omega_a", "omega"][*panel];
        trajectories.push(trajectory_table(format!("{}_{tag}_{i}", config.name), &traj.records, |_, r| {
            r.targets[0]
        }));
    }
    let mut tables: Vec<Table> = sweeps.into();
    tables.extend(trajectories);
    Ok(tables)
}

/// Fock-ladder trace for `|N⟩` (fidelity column `Σ_j |⟨g j00|ψ⟩|²`) and the
/// per-step checkpoints in `<name>_checkpoints` (`sweep_value` = step).
fn fig7_fock_prep(config: &ExperimentConfig, p: &SystemParams) -> Result<Vec<Table>> {
    let n = config.n_values[0];
    let mut pp = config.protocol;
    pp.n = n;
    let prep = prepare_fock(n, p, &pp)?;
    let trace = trajectory_table(config.name.to_string(), &prep.trajectory.records, |_, r| r.targets[0]);
    let mut checkpoints = Table::new(format!("{}_checkpoints", config.name), &SWEEP_COLUMNS);
    for (j, f) in prep.checkpoints.iter().enumerate() {
        checkpoints.rows.push(sweep_row((j + 1) as f64, j + 1, *f));
    }
    Ok(vec![trace, checkpoints])
}

/// NOON fidelity ladder. Each grid value sets `γ = κ_a = κ_m`; both outcomes
/// are reported from one run.
fn fig8_noon_fidelity(config: &ExperimentConfig, p: &SystemParams, warnings: &mut Vec<String>) -> Result<Vec<Table>> {
    let tasks: Vec<(f64, usize)> = config
        .grid
        .iter()
        .flat_map(|&g| config.n_values.iter().map(move |&n| (g, n)))
        .collect();
    let runs: Vec<Result<crate::protocol::ProtocolResult>> = tasks
        .par_iter()
        .map(|&(gamma, n)| {
            let pp = ProtocolParams {
                n,
                gamma,
                kappa_a: gamma,
                kappa_m: gamma,
                evolution: config.mode,
                ..config.protocol
            };
            run_noon_protocol(p, &pp)
        })
        .collect();
    let mut table = Table::new(config.name.to_string(), &LADDER_COLUMNS);
    for (&(gamma, n), run) in tasks.iter().zip(runs) {
        let r = run?;
        for w in &r.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
        for q in [Qubit::E, Qubit::G] {
            let b = &r.branches[q.index()];
            table.rows.push(vec![
                Cell::Real(gamma),
                Cell::Int(n),
                Cell::Text(branch_tag(q).into()),
                Cell::Real(b.fidelity),
                Cell::Real(b.probability),
            ]);
        }
    }
    Ok(vec![table])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for e in ExperimentName::ALL {
            assert_eq!(e.as_str().parse::<ExperimentName>().unwrap(), e);
            assert_eq!(serde_json::to_value(e).unwrap(), Value::String(e.as_str().into()));
        }
        let err = "nosuch".parse::<ExperimentName>().unwrap_err();
        assert_eq!(err.to_string(), "unknown experiment: nosuch");
    }

    #[test]
    fn config_merges_onto_experiment_defaults() {
        let c = ExperimentConfig::from_json(r#"{"protocol": {"gamma": 2e-5}}"#, Some(ExperimentName::Fig7FockPrep))
            .unwrap();
        assert_eq!(c.protocol.gamma, 2e-5);
        assert_eq!(c.protocol.kappa_a, 1e-5);
        assert_eq!(c.protocol.pulse_mode, PulseMode::FiniteWithCoupling);
        let named = ExperimentConfig::from_json(r#"{"name": "fig4_epsilon_mc", "samples": 3}"#, None).unwrap();
        assert_eq!(named.name, ExperimentName::Fig4EpsilonMc);
        assert_eq!(named.samples, 3);
        assert_eq!(named.grid.len(), 11);
    }

    #[test]
    fn config_rejects_unknown_keys_and_conflicts() {
        let unknown = ExperimentConfig::from_json(r#"{"sampels": 3}"#, Some(ExperimentName::Fig4EpsilonMc));
        assert!(matches!(unknown, Err(Error::InvalidConfig(_))));
        let nested = ExperimentConfig::from_json(r#"{"params": {"omgea": 3}}"#, Some(ExperimentName::Fig2Chirality));
        assert!(matches!(nested, Err(Error::InvalidConfig(_))));
        let clash = ExperimentConfig::from_json(r#"{"name": "fig2_chirality"}"#, Some(ExperimentName::Fig5Mismatch));
        assert!(matches!(clash, Err(Error::InvalidConfig(_))));
        assert!(ExperimentConfig::from_json("{}", None).is_err());
        assert!(ExperimentConfig::from_json(r#"{"grid": []}"#, Some(ExperimentName::Fig3DeltaSweep)).is_err());
        assert!(ExperimentConfig::from_json(r#"{"samples": 0}"#, Some(ExperimentName::Fig4EpsilonMc)).is_err());
        assert!(ExperimentConfig::from_json(r#"{"grid": [1.2]}"#, Some(ExperimentName::Fig3DeltaSweep)).is_err());
        assert!(ExperimentConfig::from_json("[1]", Some(ExperimentName::Fig3DeltaSweep)).is_err());
    }

    #[test]
    fn system_config_resolves_operating_point() {
        let p = SystemConfig::default().resolve().unwrap();
        assert!((p.g_a - 1.18308).abs() < 1e-4);
        let q = SystemConfig::default().with_omega(30.0).resolve().unwrap();
        assert!((q.f() - p.f()).abs() < 1e-12);
        assert!((q.g_a - p.g_a).abs() < 1e-9);
        assert!((q.transfer_time() / p.transfer_time() - 1.5).abs() < 1e-9);
        let fixed = SystemConfig { g_a: Some(1.0), ..Default::default() }.resolve().unwrap();
        assert_eq!(fixed.g_a, 1.0);
    }

    #[test]
    fn csv_uses_seventeen_significant_digits() {
        let mut t = Table::new("x", &SWEEP_COLUMNS);
        t.rows.push(sweep_row(0.1, 3, 1.0 / 3.0));
        let csv = t.to_csv();
        assert_eq!(csv, "sweep_value,N,population\n1.0000000000000001e-1,3,3.3333333333333331e-1\n");
        let back: f64 = "3.3333333333333331e-1".parse().unwrap();
        assert_eq!(back, 1.0 / 3.0);
        assert_eq!(t.column("N").unwrap(), vec![3.0]);
    }

    #[test]
    fn drive_error_samples_are_reproducible_and_bounded() {
        let a = sample_drive_errors(7, 3, 0.1);
        assert_eq!(a, sample_drive_errors(7, 3, 0.1));
        assert_ne!(a, sample_drive_errors(7, 4, 0.1));
        assert!(a.iter().all(|e| (0.0..0.1).contains(e)));
        assert_ne!(a[0], a[1]);
        assert_eq!(sample_drive_errors(7, 3, 0.0), [0.0, 0.0]);
    }

    #[test]
    fn ideal_transfer_reaches_the_target() {
        let p = SystemConfig::default().resolve().unwrap();
        let e = ErrorParams::default();
        for n in 1..=3 {
            let pop = transfer_population(&p, &e, Variant::Ideal, n, EvolutionMode::Analytic, &SolverOptions::default())
                .unwrap();
            assert!((pop - 1.0).abs() < 1e-10, "N = {n}: {pop}");
        }
    }

    #[test]
    fn monte_carlo_rows_are_ordered_and_deterministic() {
        let mut c = ExperimentConfig::new(ExperimentName::Fig4EpsilonMc);
        c.grid = vec![0.0, 0.1];
        c.samples = 4;
        c.mode = EvolutionMode::Analytic;
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.primary().to_csv(), b.primary().to_csv());
        let t = a.primary();
        assert_eq!(t.columns, MC_COLUMNS);
        let (lo, hi, mean) = (t.column("P_min").unwrap(), t.column("P_max").unwrap(), t.column("P_mean").unwrap());
        for i in 0..2 {
            assert!(lo[i] <= mean[i] && mean[i] <= hi[i]);
        }
        assert!((lo[0] - hi[0]).abs() < 1e-14);
        assert!(mean[1] <= mean[0] + 1e-6);
    }

    #[test]
    fn fig2_tables_have_the_trajectory_schema() {
        let mut c = ExperimentConfig::new(ExperimentName::Fig2Chirality);
        c.mode = EvolutionMode::Analytic;
        c.time_points = 7;
        let r = run_experiment(&c).unwrap();
        let stems: Vec<&str> = r.tables.iter().map(|t| t.stem.as_str()).collect();
        assert_eq!(
            stems,
            ["fig2_chirality", "fig2_chirality_g", "fig2_chirality_e_analytic", "fig2_chirality_g_analytic"]
        );
        for t in &r.tables {
            assert_eq!(t.columns, TRAJECTORY_COLUMNS);
            assert_eq!(t.rows.len(), 7);
            // The exact evolver and the transfer matrices agree whatever the time.
            for f in t.column("fidelity").unwrap() {
                assert!((f - 1.0).abs() < 1e-10);
            }
        }
        let p_a = r.primary().column("P_a").unwrap();
        assert!((p_a[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn fig8_without_dissipation_is_ideal_in_effective_mode() {
        let mut c = ExperimentConfig::new(ExperimentName::Fig8NoonFidelity);
        c.grid = vec![0.0];
        c.n_values = vec![1, 2];
        c.mode = EvolutionMode::Effective;
        c.protocol.pulse_mode = PulseMode::Instantaneous;
        let r = run_experiment(&c).unwrap();
        let t = r.primary();
        assert_eq!(t.columns, LADDER_COLUMNS);
        assert_eq!(t.text_column("outcome").unwrap(), ["e", "g", "e", "g"]);
        for f in t.column("fidelity").unwrap() {
            assert!((f - 1.0).abs() < 1e-6, "{f}");
        }
        for p in t.column("probability").unwrap() {
            assert!((p - 0.5).abs() < 1e-6);
        }
    }
}
