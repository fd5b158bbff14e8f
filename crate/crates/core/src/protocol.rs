//! NOON-state generation: Fock ladder climbing (Part A), an encoding
//! half-π gate, chiral transfer (Part B), a read-out half-π pulse and a
//! projective qubit measurement.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    evolve_lindblad, evolve_schrodinger, propagate_fock_superposition, Fidelity, Hamiltonian, Jump,
    Probe, Record, SolverOptions, Target, Trajectory,
};
use crate::error::{Error, Result};
use crate::floquet::{driven_hamiltonian, effective_hamiltonian, ErrorParams, Frame, SystemParams, Variant};
use crate::operators::{
    annihilation, product_operator, project_qubit, qubit_lowering, BasisState, DensityMatrix,
    HilbertSpace, Ladder, MagnonPairKet, MagnonPairState, Mode, Operator, Qubit, Restriction,
    StateVector, ONE, ZERO,
};

/// How pulses are applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseMode {
    /// Ideal instantaneous unitaries.
    #[default]
    Instantaneous,
    /// Rabi Hamiltonian alone for the pulse duration, with dissipation.
    Finite,
    /// Rabi Hamiltonian plus the qubit-resonator coupling during the pulse.
    FiniteWithCoupling,
}

/// Hamiltonian used for the chiral transfer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvolutionMode {
    /// Time-dependent driven Hamiltonian.
    #[default]
    Full,
    /// Static effective Hamiltonian.
    Effective,
    /// Exact exponential of the effective Hamiltonian (dissipation-free only).
    Analytic,
}

impl FromStr for EvolutionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(EvolutionMode::Full),
            "effective" => Ok(EvolutionMode::Effective),
            "analytic" => Ok(EvolutionMode::Analytic),
            _ => Err(Error::InvalidParameter(format!("unknown mode: {s}"))),
        }
    }
}

impl fmt::Display for EvolutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvolutionMode::Full => "full",
            EvolutionMode::Effective => "effective",
            EvolutionMode::Analytic => "analytic",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PulseKind {
    /// `-iσ_x`, swapping g and e.
    Pi,
    /// `(1 + i(e^{iθ}σ⁺ + e^{-iθ}σ⁻))/√2`, sending g to `(g + ie^{iθ}e)/√2`.
    HalfPi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    #[serde(rename = "N")]
    pub n: usize,
    /// Phase of the encoding gate.
    pub theta: f64,
    /// Rabi frequency of the pulses.
    #[serde(rename = "Omega")]
    pub omega_rabi: f64,
    pub gamma: f64,
    pub kappa_a: f64,
    pub kappa_m: f64,
    pub measurement: Qubit,
    pub include_dissipation: bool,
    pub pulse_mode: PulseMode,
    pub evolution: EvolutionMode,
    /// Qubit-resonator coupling during Part A; defaults to `g_a`.
    pub g_a_prep: Option<f64>,
    /// Trace samples per protocol stage.
    pub samples_per_stage: usize,
    pub solver: SolverOptions,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            n: 1,
            theta: PI,
            omega_rabi: 30.0,
            gamma: 0.0,
            kappa_a: 0.0,
            kappa_m: 0.0,
            measurement: Qubit::E,
            include_dissipation: true,
            pulse_mode: PulseMode::Instantaneous,
            evolution: EvolutionMode::Full,
            g_a_prep: None,
            samples_per_stage: 8,
            solver: SolverOptions::default(),
        }
    }
}

impl ProtocolParams {
    /// Validates and returns warnings.
    pub fn validate(&self, params: &SystemParams) -> Result<Vec<String>> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        for (name, v) in [("gamma", self.gamma), ("kappa_a", self.kappa_a), ("kappa_m", self.kappa_m)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be a non-negative rate")));
            }
        }
        if !(self.omega_rabi > 0.0 && self.omega_rabi.is_finite()) {
            return Err(Error::InvalidParameter("Omega must be positive".into()));
        }
        if !self.theta.is_finite() {
            return Err(Error::InvalidParameter("theta must be finite".into()));
        }
        if self.samples_per_stage == 0 {
            return Err(Error::InvalidParameter("samples_per_stage must be at least 1".into()));
        }
        let g_a = self.prep_coupling(params);
        if !(g_a > 0.0 && g_a.is_finite()) {
            return Err(Error::InvalidParameter("qubit-resonator coupling must be positive".into()));
        }
        if self.evolution == EvolutionMode::Analytic && self.dissipative() {
            return Err(Error::InvalidParameter(
                "analytic mode has no dissipation; set include_dissipation = false or zero rates".into(),
            ));
        }
        self.solver.validate()?;
        let mut warnings = Vec::new();
        if self.omega_rabi < 10.0 * g_a {
            warnings.push(format!(
                "Omega = {} is below 10 g_a = {}: pulse-duration approximation degrades",
                self.omega_rabi,
                10.0 * g_a
            ));
        }
        Ok(warnings)
    }

    pub fn dissipative(&self) -> bool {
        self.include_dissipation && (self.gamma > 0.0 || self.kappa_a > 0.0 || self.kappa_m > 0.0)
    }

    pub fn prep_coupling(&self, params: &SystemParams) -> f64 {
        self.g_a_prep.unwrap_or(params.g_a)
    }

    /// π-pulse duration `π/(2Ω)`.
    pub fn pulse_time(&self) -> f64 {
        PI / (2.0 * self.omega_rabi)
    }

    /// `N τ + Σ_j π/(2√j g_a)`.
    pub fn preparation_time(&self, params: &SystemParams) -> f64 {
        let g_a = self.prep_coupling(params);
        self.n as f64 * self.pulse_time() + (1..=self.n).map(|j| jc_time(j, g_a)).sum::<f64>()
    }

    /// `T_B = T_A + T + τ/2`.
    pub fn total_time(&self, params: &SystemParams) -> f64 {
        self.preparation_time(params) + params.transfer_time() + self.pulse_time() / 2.0
    }
}

/// Duration of the JC step that lifts `|e, j-1⟩` to `|g, j⟩`.
pub fn jc_time(j: usize, g_a: f64) -> f64 {
    PI / (2.0 * (j as f64).sqrt() * g_a)
}

/// Converts a time in units of `1/g` to microseconds for a given `g/2π` in MHz.
pub fn to_microseconds(t: f64, g_over_2pi_mhz: f64) -> f64 {
    t / (2.0 * PI * g_over_2pi_mhz)
}

/// State carried through the protocol: pure unless dissipation is on.
#[derive(Clone, Debug)]
pub enum QuantumState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl QuantumState {
    pub fn space(&self) -> &Arc<HilbertSpace> {
        match self {
            QuantumState::Pure(p) => p.space(),
            QuantumState::Mixed(r) => r.space(),
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        match self {
            QuantumState::Pure(p) => p.to_density(),
            QuantumState::Mixed(r) => r.clone(),
        }
    }

    pub fn fidelity(&self, target: &StateVector) -> Result<f64> {
        match self {
            QuantumState::Pure(p) => p.fidelity(target),
            QuantumState::Mixed(r) => r.fidelity(target),
        }
    }
}

impl From<StateVector> for QuantumState {
    fn from(p: StateVector) -> Self {
        QuantumState::Pure(p)
    }
}

impl From<DensityMatrix> for QuantumState {
    fn from(r: DensityMatrix) -> Self {
        QuantumState::Mixed(r)
    }
}

fn sigma_x_theta(space: &Arc<HilbertSpace>, theta: f64) -> Operator {
    let sm = qubit_lowering(space);
    &sm.dagger().scale(C64::from_polar(1.0, theta)) + &sm.scale(C64::from_polar(1.0, -theta))
}

/// Instantaneous pulse unitary on `space`.
pub fn pulse_unitary(space: &Arc<HilbertSpace>, kind: PulseKind, theta: f64) -> Operator {
    match kind {
        PulseKind::Pi => sigma_x_theta(space, 0.0).scale(C64::new(0.0, -1.0)),
        PulseKind::HalfPi => {
            let x = sigma_x_theta(space, theta).scale(C64::new(0.0, 1.0));
            (&Operator::identity(space) + &x).scale_real(std::f64::consts::FRAC_1_SQRT_2)
        }
    }
}

/// Rabi Hamiltonian and duration that generate [`pulse_unitary`].
pub fn pulse_hamiltonian(space: &Arc<HilbertSpace>, kind: PulseKind, theta: f64, omega: f64) -> (Operator, f64) {
    match kind {
        PulseKind::Pi => (sigma_x_theta(space, 0.0).scale_real(omega), PI / (2.0 * omega)),
        PulseKind::HalfPi => (sigma_x_theta(space, theta).scale_real(-omega), PI / (4.0 * omega)),
    }
}

/// Applies an instantaneous pulse.
pub fn apply_pulse(state: &QuantumState, kind: PulseKind, theta: f64) -> Result<QuantumState> {
    let u = pulse_unitary(state.space(), kind, theta);
    Ok(match state {
        QuantumState::Pure(p) => QuantumState::Pure(u.apply(p)?),
        QuantumState::Mixed(r) => QuantumState::Mixed(r.conjugate_by(&u)?),
    })
}

/// Protocol space for at most `n_max` photons: cutoffs `n_max + 1` with the
/// excitation window `[0, n_max + 1]`, which is closed under the
/// excitation-conserving Hamiltonians, the pulses that stay in it and decay.
pub fn protocol_space(n_max: usize) -> Arc<HilbertSpace> {
    HilbertSpace::restricted(
        [n_max + 1; 3],
        Restriction {
            min_excitation: 0,
            max_excitation: n_max + 1,
        },
    )
}

fn jc_hamiltonian(space: &Arc<HilbertSpace>, g_a: f64) -> Operator {
    let up = product_operator(space, &[Ladder::SigmaPlus, Ladder::Lower(Mode::Resonator)]);
    (&up + &up.dagger()).scale_real(g_a)
}

fn jumps(space: &Arc<HilbertSpace>, pp: &ProtocolParams) -> Result<Vec<Jump>> {
    if !pp.dissipative() {
        return Ok(Vec::new());
    }
    Ok(vec![
        Jump::new(qubit_lowering(space), pp.gamma),
        Jump::new(annihilation(space, 0)?, pp.kappa_a),
        Jump::new(annihilation(space, 1)?, pp.kappa_m),
        Jump::new(annihilation(space, 2)?, pp.kappa_m),
    ])
}

/// Drives the stage-by-stage evolution and stitches the trace together.
struct Runner<'a> {
    pp: &'a ProtocolParams,
    jumps: Vec<Jump>,
    probe: Probe,
    clock: f64,
    records: Vec<Record>,
}

impl Runner<'_> {
    fn evolve<H: Hamiltonian + ?Sized>(&mut self, state: QuantumState, h: &H, duration: f64) -> Result<QuantumState> {
        let opts = self.pp.solver;
        self.evolve_with(state, h, duration, &opts)
    }

    fn evolve_with<H: Hamiltonian + ?Sized>(
        &mut self,
        state: QuantumState,
        h: &H,
        duration: f64,
        opts: &SolverOptions,
    ) -> Result<QuantumState> {
        let m = self.pp.samples_per_stage;
        let times: Vec<f64> = (0..=m).map(|i| duration * i as f64 / m as f64).collect();
        let (out, traj) = match &state {
            QuantumState::Pure(p) => {
                let ev = evolve_schrodinger(h, p, &times, &self.probe, opts)?;
                (QuantumState::Pure(ev.final_state), ev.trajectory)
            }
            QuantumState::Mixed(r) => {
                let ev = evolve_lindblad(h, r, &self.jumps, &times, &self.probe, opts)?;
                (QuantumState::Mixed(ev.final_state), ev.trajectory)
            }
        };
        self.append(traj, duration);
        Ok(out)
    }

    fn append(&mut self, traj: Trajectory, duration: f64) {
        let start = self.clock;
        for mut r in traj.records {
            r.t += start;
            // Keep the pre-pulse sample when an instantaneous pulse leaves two
            // samples at one time.
            if self.records.last().is_some_and(|l| l.t >= r.t) {
                continue;
            }
            self.records.push(r);
        }
        self.clock = start + duration;
    }

    fn pulse(&mut self, state: QuantumState, kind: PulseKind, theta: f64, g_a: f64) -> Result<QuantumState> {
        match self.pp.pulse_mode {
            PulseMode::Instantaneous => apply_pulse(&state, kind, theta),
            mode => {
                let space = state.space().clone();
                let (mut h, t) = pulse_hamiltonian(&space, kind, theta, self.pp.omega_rabi);
                if mode == PulseMode::FiniteWithCoupling {
                    h = &h + &jc_hamiltonian(&space, g_a);
                }
                self.evolve(state, &h, t)
            }
        }
    }
}

fn initial_state(pp: &ProtocolParams, psi: StateVector) -> QuantumState {
    if pp.dissipative() {
        QuantumState::Mixed(psi.to_density())
    } else {
        QuantumState::Pure(psi)
    }
}

/// Part A: `N` rounds of π pulse + JC evolution from `|g000⟩`. Returns the
/// state, its overlap with `|gN00⟩`, the overlap with `|g j 0 0⟩` after each
/// round, and the trace (target column: `Σ_j |⟨g j00|ψ⟩|²`).
pub struct FockPreparation {
    pub state: QuantumState,
    pub fidelity: f64,
    pub checkpoints: Vec<f64>,
    pub trajectory: Trajectory,
}

pub fn prepare_fock(n: usize, params: &SystemParams, pp: &ProtocolParams) -> Result<FockPreparation> {
    let space = protocol_space(n);
    let mut pp_n = *pp;
    pp_n.n = n;
    pp_n.validate(params)?;
    prepare_fock_on(&space, params, &pp_n)
}

fn fock_probe(space: &Arc<HilbertSpace>, n: usize) -> Result<Probe> {
    let ladder: Vec<BasisState> = (1..=n).map(|j| BasisState::new(Qubit::G, j, 0, 0)).collect();
    Ok(Probe::levels(&[n]).with_target(Target::components(space, &ladder)?))
}

fn prepare_fock_on(space: &Arc<HilbertSpace>, params: &SystemParams, pp: &ProtocolParams) -> Result<FockPreparation> {
    let n = pp.n;
    if space.cutoff(Mode::Resonator) < n {
        return Err(Error::OccupationAboveCutoff {
            mode: 0,
            occupation: n,
            cutoff: space.cutoff(Mode::Resonator),
        });
    }
    let g_a = pp.prep_coupling(params);
    let mut runner = Runner {
        pp,
        jumps: jumps(space, pp)?,
        probe: fock_probe(space, n)?,
        clock: 0.0,
        records: Vec::new(),
    };
    let start = crate::operators::basis_state(space, Qubit::G, 0, 0, 0)?;
    let mut state = initial_state(pp, start);
    let jc = jc_hamiltonian(space, g_a);
    let mut checkpoints = Vec::with_capacity(n);
    for j in 1..=n {
        state = runner.pulse(state, PulseKind::Pi, 0.0, g_a)?;
        state = runner.evolve(state, &jc, jc_time(j, g_a))?;
        let target = crate::operators::basis_state(space, Qubit::G, j, 0, 0)?;
        checkpoints.push(state.fidelity(&target)?);
    }
    let fidelity = *checkpoints.last().unwrap_or(&1.0);
    Ok(FockPreparation {
        state,
        fidelity,
        checkpoints,
        trajectory: Trajectory { records: runner.records },
    })
}

/// Outcome-resolved part of a protocol run. An outcome the state cannot
/// produce has no post-measurement state and fidelity 0.
#[derive(Clone, Debug)]
pub struct Branch {
    pub outcome: Qubit,
    pub probability: f64,
    pub fidelity: f64,
    pub magnon_state: Option<MagnonPairState>,
    pub target: Option<MagnonPairKet>,
}

#[derive(Clone, Debug)]
pub struct ProtocolResult {
    /// Fidelity for the configured measurement outcome.
    pub noon_fidelity: f64,
    pub outcome_probability: f64,
    pub fock_prep_fidelity: f64,
    pub fock_checkpoints: Vec<f64>,
    /// `T_B` with one half-π duration, pulses counted as in the ideal sequence.
    pub total_time: f64,
    /// Relative NOON phase `θ_eff` of the ideal pipeline, local phases included.
    pub theta_eff: f64,
    pub trajectory: Trajectory,
    /// Post-measurement magnon state for the configured outcome.
    pub magnon_state: Option<MagnonPairState>,
    /// Both outcomes, `g` first.
    pub branches: [Branch; 2],
    pub warnings: Vec<String>,
}

/// Ideal post-measurement magnon kets (`g`, `e`) for the resonator state
/// `Σ c_n |n⟩` after the encoding gate, chiral transfer and read-out pulse.
/// `None` marks an outcome of zero probability.
pub fn ideal_targets(
    coeffs: &[(usize, C64)],
    magnon_cutoffs: [usize; 2],
    params: &SystemParams,
    theta: f64,
) -> Result<[Option<MagnonPairKet>; 2]> {
    let n_max = coeffs.iter().map(|c| c.0).max().unwrap_or(0);
    let space = HilbertSpace::new([n_max, n_max, n_max]);
    let t = params.transfer_time();
    let g = propagate_fock_superposition(&space, coeffs, Qubit::G, t, params)?;
    let e = propagate_fock_superposition(&space, coeffs, Qubit::E, t, params)?;
    let gate = C64::new(0.0, 1.0) * C64::from_polar(1.0, theta);
    let mut kets = [Vec::new(), Vec::new()];
    let mi = C64::new(0.0, -1.0);
    for n1 in 0..=n_max.min(magnon_cutoffs[0]) {
        for n2 in 0..=n_max.min(magnon_cutoffs[1]) {
            // Resonator empty after the transfer; anything left there is
            // dropped with the residual of the ideal permutation.
            let ag = g.amplitude(&BasisState::new(Qubit::G, 0, n1, n2));
            let ae = gate * e.amplitude(&BasisState::new(Qubit::E, 0, n1, n2));
            // Read-out pulse [[1, -i], [-i, 1]]/√2 in (g, e) order.
            kets[0].push((ag + mi * ae, n1, n2));
            kets[1].push((mi * ag + ae, n1, n2));
        }
    }
    let [kg, ke] = kets;
    let build = |terms: &[(C64, usize, usize)]| -> Result<Option<MagnonPairKet>> {
        let weight: f64 = terms.iter().map(|t| t.0.norm_sqr()).sum();
        if weight < 1e-20 {
            return Ok(None);
        }
        MagnonPairKet::from_terms(magnon_cutoffs, terms).map(Some)
    };
    Ok([build(&kg)?, build(&ke)?])
}

/// Ideal relative NOON phase: `e^{iθ_eff} = -e^{iθ} (T^(e)_31 / T^(g)_21)^N`.
pub fn noon_phase(n: usize, params: &SystemParams, theta: f64) -> f64 {
    use crate::dynamics::transfer_matrix;
    let t = params.transfer_time();
    let te = transfer_matrix(Qubit::E, t, params).entries[(2, 0)];
    let tg = transfer_matrix(Qubit::G, t, params).entries[(1, 0)];
    let z = -C64::from_polar(1.0, theta) * (te / tg).powu(n as u32);
    z.arg()
}

fn run_transfer(
    runner: &mut Runner<'_>,
    state: QuantumState,
    params: &SystemParams,
    pp: &ProtocolParams,
) -> Result<QuantumState> {
    let space = state.space().clone();
    let t = params.transfer_time();
    let errors = ErrorParams::default();
    match pp.evolution {
        EvolutionMode::Full => {
            let h = driven_hamiltonian(&space, params, &errors, Variant::Ideal, Frame::Drive)?;
            let opts = pp.solver.for_drive(params.omega);
            runner.evolve_with(state, &h, t, &opts)
        }
        EvolutionMode::Effective => {
            let h = effective_hamiltonian(&space, params, &errors, Variant::Ideal)?;
            runner.evolve(state, &h, t)
        }
        EvolutionMode::Analytic => {
            let h = effective_hamiltonian(&space, params, &errors, Variant::Ideal)?;
            let u = h.unitary_exp(t);
            runner.clock += t;
            match state {
                QuantumState::Pure(p) => Ok(QuantumState::Pure(u.apply(&p)?)),
                QuantumState::Mixed(r) => Ok(QuantumState::Mixed(r.conjugate_by(&u)?)),
            }
        }
    }
}

fn finish(state: QuantumState, targets: [Option<MagnonPairKet>; 2]) -> Result<[Branch; 2]> {
    let rho = state.to_density();
    let mut out = Vec::with_capacity(2);
    for (outcome, target) in [Qubit::G, Qubit::E].into_iter().zip(targets) {
        let branch = match project_qubit(&rho, outcome) {
            Ok((magnons, p)) => Branch {
                outcome,
                probability: p,
                fidelity: match &target {
                    Some(t) => magnons.fidelity(t)?,
                    None => 0.0,
                },
                magnon_state: Some(magnons),
                target,
            },
            Err(Error::ImpossibleOutcome { probability, .. }) => Branch {
                outcome,
                probability,
                fidelity: 0.0,
                magnon_state: None,
                target,
            },
            Err(e) => return Err(e),
        };
        out.push(branch);
    }
    let e = out.pop().expect("two branches");
    let g = out.pop().expect("two branches");
    Ok([g, e])
}

fn chosen_branch(branches: &[Branch; 2], pp: &ProtocolParams) -> Result<usize> {
    let i = pp.measurement.index();
    if branches[i].magnon_state.is_none() {
        return Err(Error::ImpossibleOutcome {
            outcome: pp.measurement,
            probability: branches[i].probability,
        });
    }
    Ok(i)
}

/// Full NOON pipeline for `pp.n` excitations.
pub fn run_noon_protocol(params: &SystemParams, pp: &ProtocolParams) -> Result<ProtocolResult> {
    params.validate()?;
    let warnings = pp.validate(params)?;
    let n = pp.n;
    let space = protocol_space(n);
    let prep = prepare_fock_on(&space, params, pp)?;
    let g_a = pp.prep_coupling(params);
    let mut runner = Runner {
        pp,
        jumps: jumps(&space, pp)?,
        probe: fock_probe(&space, n)?,
        clock: prep.trajectory.records.last().map_or(0.0, |r| r.t),
        records: prep.trajectory.records.clone(),
    };
    let mut state = runner.pulse(prep.state, PulseKind::HalfPi, pp.theta, g_a)?;
    state = run_transfer(&mut runner, state, params, pp)?;
    state = runner.pulse(state, PulseKind::HalfPi, PI, g_a)?;

    let c = space.cutoffs();
    let targets = ideal_targets(&[(n, ONE)], [c[1], c[2]], params, pp.theta)?;
    let branches = finish(state, targets)?;
    let chosen = chosen_branch(&branches, pp)?;
    Ok(ProtocolResult {
        noon_fidelity: branches[chosen].fidelity,
        outcome_probability: branches[chosen].probability,
        fock_prep_fidelity: prep.fidelity,
        fock_checkpoints: prep.checkpoints,
        total_time: pp.total_time(params),
        theta_eff: noon_phase(n, params, pp.theta),
        trajectory: Trajectory { records: runner.records },
        magnon_state: branches[chosen].magnon_state.clone(),
        branches,
        warnings,
    })
}

/// Part B only, from the resonator state `Σ c_n |n⟩` with both magnons in
/// vacuum: encoding gate, transfer, read-out and measurement. The target is
/// the ideal analytic image of the input, which for `|N⟩` is the NOON state.
pub fn run_entangler(initial_resonator: &[C64], params: &SystemParams, pp: &ProtocolParams) -> Result<ProtocolResult> {
    params.validate()?;
    let norm: f64 = initial_resonator.iter().map(|c| c.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(norm.sqrt()));
    }
    let coeffs: Vec<(usize, C64)> = initial_resonator
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != ZERO)
        .map(|(n, c)| (n, *c))
        .collect();
    let n_max = coeffs.iter().map(|c| c.0).max().unwrap_or(0);
    let mut pp_local = *pp;
    pp_local.n = n_max.max(1);
    let warnings = pp_local.validate(params)?;
    let space = protocol_space(n_max);
    let terms: Vec<(C64, BasisState)> = coeffs.iter().map(|&(n, c)| (c, BasisState::new(Qubit::G, n, 0, 0))).collect();
    let psi = StateVector::superposition(&space, &terms)?;
    let g_a = pp_local.prep_coupling(params);
    let mut runner = Runner {
        pp: &pp_local,
        jumps: jumps(&space, &pp_local)?,
        probe: Probe::levels(&[n_max]),
        clock: 0.0,
        records: Vec::new(),
    };
    let mut state = initial_state(&pp_local, psi);
    state = runner.pulse(state, PulseKind::HalfPi, pp.theta, g_a)?;
    state = run_transfer(&mut runner, state, params, &pp_local)?;
    state = runner.pulse(state, PulseKind::HalfPi, PI, g_a)?;
    let c = space.cutoffs();
    let targets = ideal_targets(&coeffs, [c[1], c[2]], params, pp.theta)?;
    let branches = finish(state, targets)?;
    let chosen = chosen_branch(&branches, pp)?;
    Ok(ProtocolResult {
        noon_fidelity: branches[chosen].fidelity,
        outcome_probability: branches[chosen].probability,
        fock_prep_fidelity: 1.0,
        fock_checkpoints: Vec::new(),
        total_time: params.transfer_time() + pp.pulse_time() / 2.0,
        theta_eff: noon_phase(n_max, params, pp.theta),
        trajectory: Trajectory { records: runner.records },
        magnon_state: branches[chosen].magnon_state.clone(),
        branches,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::basis_state;

    fn op() -> SystemParams {
        SystemParams::operating_point(1.0, 20.0)
    }

    fn ideal(n: usize, evolution: EvolutionMode) -> ProtocolParams {
        ProtocolParams {
            n,
            evolution,
            include_dissipation: false,
            ..Default::default()
        }
    }

    #[test]
    fn pulses_act_as_stated() {
        let s = protocol_space(2);
        let g = basis_state(&s, Qubit::G, 0, 0, 0).unwrap();
        let e = basis_state(&s, Qubit::E, 0, 0, 0).unwrap();
        let out = apply_pulse(&g.clone().into(), PulseKind::Pi, 0.0).unwrap();
        assert!((out.fidelity(&e).unwrap() - 1.0).abs() < 1e-15);
        let twice = apply_pulse(&out, PulseKind::Pi, 0.0).unwrap();
        assert!((twice.fidelity(&g).unwrap() - 1.0).abs() < 1e-15);

        let theta = 0.83;
        let g2 = basis_state(&s, Qubit::G, 2, 0, 0).unwrap();
        let expected = StateVector::superposition(
            &s,
            &[
                (ONE, BasisState::new(Qubit::G, 2, 0, 0)),
                (C64::new(0.0, 1.0) * C64::from_polar(1.0, theta), BasisState::new(Qubit::E, 2, 0, 0)),
            ],
        )
        .unwrap();
        let QuantumState::Pure(half) = apply_pulse(&g2.into(), PulseKind::HalfPi, theta).unwrap() else {
            panic!()
        };
        assert!((half.amplitudes() - expected.amplitudes()).norm() < 1e-15);
    }

    #[test]
    fn finite_pulses_reproduce_unitaries() {
        let s = protocol_space(1);
        let psi = StateVector::superposition(
            &s,
            &[(ONE, BasisState::new(Qubit::G, 1, 0, 0)), (C64::new(0.3, -0.4), BasisState::new(Qubit::E, 1, 0, 0))],
        )
        .unwrap();
        for (kind, theta) in [(PulseKind::Pi, 0.0), (PulseKind::HalfPi, 0.4), (PulseKind::HalfPi, PI)] {
            let (h, t) = pulse_hamiltonian(&s, kind, theta, 30.0);
            let u = pulse_unitary(&s, kind, theta);
            let a = h.unitary_exp(t).apply(&psi).unwrap();
            let b = u.apply(&psi).unwrap();
            assert!((a.amplitudes() - b.amplitudes()).norm() < 1e-13, "{kind:?}");
        }
    }

    #[test]
    fn single_photon_preparation() {
        let p = op();
        let prep = prepare_fock(1, &p, &ideal(1, EvolutionMode::Full)).unwrap();
        assert!((prep.fidelity - 1.0).abs() < 1e-8);
        let QuantumState::Pure(psi) = &prep.state else { panic!() };
        // One JC step and one π pulse end in -|g100⟩.
        let amp = psi.amplitude(&BasisState::new(Qubit::G, 1, 0, 0));
        assert!((amp + ONE).norm() < 1e-7);
    }

    #[test]
    fn checkpoints_climb_the_ladder() {
        let p = op();
        let prep = prepare_fock(4, &p, &ideal(4, EvolutionMode::Full)).unwrap();
        assert_eq!(prep.checkpoints.len(), 4);
        for c in &prep.checkpoints {
            assert!((c - 1.0).abs() < 1e-8);
        }
        let q = prep.state;
        let target = basis_state(q.space(), Qubit::G, 4, 0, 0).unwrap();
        assert!((q.fidelity(&target).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn analytic_pipeline_is_exact() {
        let p = op();
        for n in 1..=3 {
            for theta in [0.0, 1.1, PI] {
                let mut pp = ideal(n, EvolutionMode::Analytic);
                pp.theta = theta;
                let r = run_noon_protocol(&p, &pp).unwrap();
                for b in &r.branches {
                    assert!((b.fidelity - 1.0).abs() < 1e-8, "n={n} theta={theta} {:?} {}", b.outcome, b.fidelity);
                    assert!((b.probability - 0.5).abs() < 1e-6);
                }
                let total: f64 = r.branches.iter().map(|b| b.probability).sum();
                assert!((total - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ideal_targets_are_noon_states() {
        let p = op();
        let theta = 0.6;
        for n in 1..=4 {
            let [Some(tg), Some(te)] = ideal_targets(&[(n, ONE)], [n + 1, n + 1], &p, theta).unwrap() else {
                panic!("both outcomes are possible")
            };
            let phase = noon_phase(n, &p, theta);
            let ne = MagnonPairKet::noon([n + 1, n + 1], n, phase, 1.0).unwrap();
            let ng = MagnonPairKet::noon([n + 1, n + 1], n, phase, -1.0).unwrap();
            assert!((te.to_density().fidelity(&ne).unwrap() - 1.0).abs() < 1e-9);
            assert!((tg.to_density().fidelity(&ng).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn effective_pipeline_without_dissipation() {
        let p = op();
        let r = run_noon_protocol(&p, &ideal(2, EvolutionMode::Effective)).unwrap();
        assert!((r.noon_fidelity - 1.0).abs() < 1e-6, "{}", r.noon_fidelity);
        assert_eq!(r.branches[1].outcome, Qubit::E);
    }

    #[test]
    fn duration_bookkeeping() {
        let p = op();
        let pp = ProtocolParams {
            n: 5,
            ..Default::default()
        };
        let tau = PI / 60.0;
        let sum: f64 = (1..=5).map(|j| PI / (2.0 * (j as f64).sqrt() * p.g_a)).sum();
        let expected = 5.0 * tau + sum + p.transfer_time() + tau / 2.0;
        assert!((pp.total_time(&p) - expected).abs() < 1e-12);
        let us = to_microseconds(pp.total_time(&p), 20.0);
        assert!((us - 0.65).abs() / 0.65 < 0.15, "{us}");
    }

    #[test]
    fn warnings_and_errors() {
        let p = op();
        let pp = ProtocolParams {
            omega_rabi: 5.0,
            ..Default::default()
        };
        assert_eq!(pp.validate(&p).unwrap().len(), 1);
        let bad = ProtocolParams {
            gamma: -1.0,
            ..Default::default()
        };
        assert!(bad.validate(&p).is_err());
        let bad = ProtocolParams {
            n: 0,
            ..Default::default()
        };
        assert!(bad.validate(&p).is_err());
        let bad = ProtocolParams {
            gamma: 1e-3,
            evolution: EvolutionMode::Analytic,
            ..Default::default()
        };
        assert!(run_noon_protocol(&p, &bad).is_err());
        assert!("EFFECTIVE".parse::<EvolutionMode>().is_ok());
        assert!("bogus".parse::<EvolutionMode>().is_err());
    }

    #[test]
    fn entangler_special_cases() {
        let p = op();
        let mut pp = ideal(1, EvolutionMode::Analytic);
        pp.theta = PI / 2.0;
        let vac = run_entangler(&[ONE], &p, &pp).unwrap();
        assert!((vac.noon_fidelity - 1.0).abs() < 1e-10);
        // At θ = π the two pulses add to a π pulse on the vacuum, so g cannot occur.
        pp.theta = PI;
        let forced = run_entangler(&[ONE], &p, &pp).unwrap();
        assert!((forced.outcome_probability - 1.0).abs() < 1e-10);
        assert!(forced.branches[0].magnon_state.is_none());
        pp.measurement = Qubit::G;
        assert!(matches!(run_entangler(&[ONE], &p, &pp), Err(Error::ImpossibleOutcome { .. })));
        assert!(run_entangler(&[ONE, ONE], &p, &pp).is_err());
        let fock2 = run_entangler(&[ZERO, ZERO, ONE], &p, &ideal(2, EvolutionMode::Effective)).unwrap();
        let full = run_noon_protocol(&p, &ideal(2, EvolutionMode::Effective)).unwrap();
        assert!((fock2.noon_fidelity - full.noon_fidelity).abs() < 1e-6);
    }

    #[test]
    fn dissipation_lowers_fidelity_monotonically() {
        let p = op();
        let mut last = 1.0 + 1e-9;
        for gamma in [0.0, 1e-5, 1e-4, 1e-3] {
            let pp = ProtocolParams {
                n: 1,
                gamma,
                kappa_a: gamma,
                kappa_m: gamma,
                evolution: EvolutionMode::Effective,
                ..Default::default()
            };
            let f = run_noon_protocol(&p, &pp).unwrap().noon_fidelity;
            assert!(f <= last + 1e-9, "gamma={gamma}: {f} > {last}");
            last = f;
        }
        assert!(last < 0.99);
    }
}
