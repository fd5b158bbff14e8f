use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use nalgebra::Matrix3;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::bessel::bessel_j;
use super::couplings::{counter_rotating_couplings, g12_general, gk_general, resonance_index};
use super::{ErrorParams, MagnonKnobs, MismatchTarget, SystemParams, DEFAULT_SERIES_TOL};
use crate::error::{Error, Result};
use crate::operators::{
    excitation_number, number, product_operator, qubit_excited_projector, sigma_z,
    CsrMatrix, HilbertSpace, Ladder, Mode, Operator, StateVector, ONE, ZERO,
};

/// Hamiltonian family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Ideal,
    CouplingDeviation,
    DriveError,
    MagnonMismatch,
    QubitMismatch,
    #[serde(rename = "lab-frame-cr")]
    CounterRotating,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Ideal,
        Variant::CouplingDeviation,
        Variant::DriveError,
        Variant::MagnonMismatch,
        Variant::QubitMismatch,
        Variant::CounterRotating,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ideal => "ideal",
            Variant::CouplingDeviation => "coupling-deviation",
            Variant::DriveError => "drive-error",
            Variant::MagnonMismatch => "magnon-mismatch",
            Variant::QubitMismatch => "qubit-mismatch",
            Variant::CounterRotating => "lab-frame-cr",
        }
    }

    /// True when the variant commutes with the total excitation number.
    pub fn conserves_excitation(self) -> bool {
        self != Variant::CounterRotating
    }

    /// Mismatch variant for an [`ErrorParams::mismatch_target`].
    pub fn mismatch(target: MismatchTarget) -> Variant {
        match target {
            MismatchTarget::Magnons => Variant::MagnonMismatch,
            MismatchTarget::Qubit => Variant::QubitMismatch,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Frame in which a driven Hamiltonian is expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    /// Every term exactly as written for the variant.
    AsWritten,
    /// Interaction picture of the common free term `ω_a K`. For the
    /// excitation-conserving variants this just drops the term; the
    /// counter-rotating pieces pick up `e^{±2iω_a t}`.
    CoRotating,
    /// `CoRotating` followed by the interaction picture of the magnon drive.
    Drive,
}

/// Scalar time dependence of one term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient {
    Const(C64),
    /// `amp · cos(freq t + phase)`
    Cos { amp: C64, freq: f64, phase: f64 },
    /// `amp · exp(i rate t - i depth sin(freq t + phase))`
    Modulated {
        amp: C64,
        depth: f64,
        freq: f64,
        phase: f64,
        rate: f64,
    },
}

impl Coefficient {
    pub fn at(&self, t: f64) -> C64 {
        match *self {
            Coefficient::Const(c) => c,
            Coefficient::Cos { amp, freq, phase } => amp * (freq * t + phase).cos(),
            Coefficient::Modulated {
                amp,
                depth,
                freq,
                phase,
                rate,
            } => amp * C64::from_polar(1.0, rate * t - depth * (freq * t + phase).sin()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Coefficient::Const(_))
    }
}

#[derive(Clone, Debug)]
pub struct DriveTerm {
    pub coefficient: Coefficient,
    pub operator: Operator,
}

#[derive(Debug)]
pub(crate) struct CompiledTerms {
    pub pattern: CsrMatrix,
    pub constant: Vec<C64>,
    pub dynamic: Vec<(Coefficient, Vec<C64>)>,
}

/// `H(t) = Σ c_i(t) A_i`. Hermitian when the term list is closed under
/// adjoint with conjugate coefficients, which every builder here ensures.
#[derive(Debug)]
pub struct DrivenHamiltonian {
    space: Arc<HilbertSpace>,
    terms: Vec<DriveTerm>,
    compiled: OnceLock<CompiledTerms>,
}

impl Clone for DrivenHamiltonian {
    fn clone(&self) -> Self {
        DrivenHamiltonian {
            space: self.space.clone(),
            terms: self.terms.clone(),
            compiled: OnceLock::new(),
        }
    }
}

impl DrivenHamiltonian {
    pub fn new(space: &Arc<HilbertSpace>) -> Self {
        DrivenHamiltonian {
            space: space.clone(),
            terms: Vec::new(),
            compiled: OnceLock::new(),
        }
    }

    pub fn constant(op: Operator) -> Self {
        let mut h = DrivenHamiltonian::new(op.space());
        h.push(Coefficient::Const(ONE), op);
        h
    }

    pub fn push(&mut self, coefficient: Coefficient, operator: Operator) {
        self.compiled = OnceLock::new();
        self.terms.push(DriveTerm {
            coefficient,
            operator,
        });
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn terms(&self) -> &[DriveTerm] {
        &self.terms
    }

    pub fn is_time_independent(&self) -> bool {
        self.terms.iter().all(|t| t.coefficient.is_constant())
    }

    /// Dense `H(t)`.
    pub fn at(&self, t: f64) -> Operator {
        let mut m = nalgebra::DMatrix::zeros(self.space.dim(), self.space.dim());
        for term in &self.terms {
            let c = term.coefficient.at(t);
            if c != ZERO {
                m += term.operator.matrix() * c;
            }
        }
        Operator::from_matrix(&self.space, m).expect("term dimensions agree")
    }

    pub(crate) fn compiled(&self) -> &CompiledTerms {
        self.compiled.get_or_init(|| {
            let mats: Vec<_> = self.terms.iter().map(|t| t.operator.matrix()).collect();
            let (pattern, per) = CsrMatrix::union_pattern(&mats);
            let mut constant = vec![ZERO; pattern.nnz()];
            let mut dynamic = Vec::new();
            for (term, vals) in self.terms.iter().zip(per) {
                match term.coefficient {
                    Coefficient::Const(c) => {
                        for (dst, v) in constant.iter_mut().zip(vals.iter()) {
                            *dst += c * v;
                        }
                    }
                    coeff => dynamic.push((coeff, vals)),
                }
            }
            CompiledTerms {
                pattern,
                constant,
                dynamic,
            }
        })
    }

    /// Writes `H(t)` onto the compiled sparsity pattern.
    pub(crate) fn load(&self, t: f64, out: &mut CsrMatrix) {
        let c = self.compiled();
        if out.nnz() != c.pattern.nnz() {
            *out = c.pattern.clone();
        }
        out.values.copy_from_slice(&c.constant);
        for (coeff, vals) in &c.dynamic {
            let s = coeff.at(t);
            for (dst, v) in out.values.iter_mut().zip(vals.iter()) {
                *dst += s * v;
            }
        }
    }
}

fn word(space: &Arc<HilbertSpace>, w: &[Ladder]) -> Operator {
    product_operator(space, w)
}

fn magnon(k: usize) -> Mode {
    if k == 0 {
        Mode::Magnon1
    } else {
        Mode::Magnon2
    }
}

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Drive-frame angles `θ_k(t) = f_k [sin(ωt - φ_k) - sin φ_k]`, defining
/// `V(t) = exp(-i Σ θ_k m_k†m_k)` with lab state `ψ = V ψ_frame`.
pub fn drive_frame_angles(params: &SystemParams, errors: &ErrorParams, variant: Variant, t: f64) -> [f64; 2] {
    let knobs = MagnonKnobs::new(params, errors, variant);
    [0, 1].map(|k| {
        let phi = params.phi[k];
        knobs.f[k] * ((params.omega * t - phi).sin() - phi.sin())
    })
}

fn frame_phase(psi: &StateVector, angles: [f64; 2], sign: f64) -> StateVector {
    let mut out = psi.clone();
    let space = psi.space().clone();
    for (i, s) in space.basis().iter().enumerate() {
        let phase = angles[0] * s.occupations[1] as f64 + angles[1] * s.occupations[2] as f64;
        out.amplitudes_mut()[i] *= C64::from_polar(1.0, sign * phase);
    }
    out
}

/// `ψ_frame = V† ψ`.
pub fn to_drive_frame(psi: &StateVector, angles: [f64; 2]) -> StateVector {
    frame_phase(psi, angles, 1.0)
}

/// `ψ = V ψ_frame`.
pub fn from_drive_frame(psi: &StateVector, angles: [f64; 2]) -> StateVector {
    frame_phase(psi, angles, -1.0)
}

/// Builds the driven Hamiltonian of `variant` on `space`.
///
/// The magnon drive enters as `Δ_k cos(ωt - φ_k) m_k†m_k`. With this sign the
/// second-order expansion yields the `σ_z` Hamiltonian whose transfer
/// matrices send the resonator to `m2` when the qubit is excited.
pub fn driven_hamiltonian(
    space: &Arc<HilbertSpace>,
    params: &SystemParams,
    errors: &ErrorParams,
    variant: Variant,
    frame: Frame,
) -> Result<DrivenHamiltonian> {
    if matches!(variant, Variant::MagnonMismatch | Variant::QubitMismatch | Variant::CounterRotating)
        && params.omega_a <= 0.0
    {
        return Err(Error::InvalidParameter(format!(
            "variant {variant} needs omega_a > 0"
        )));
    }
    let knobs = MagnonKnobs::new(params, errors, variant);
    let (w, wa) = (params.omega, params.omega_a);
    let mut h = DrivenHamiltonian::new(space);

    let jc = &word(space, &[Ladder::SigmaPlus, Ladder::Lower(Mode::Resonator)])
        + &word(space, &[Ladder::SigmaMinus, Ladder::Raise(Mode::Resonator)]);
    h.push(
        Coefficient::Cos {
            amp: real(params.g_a),
            freq: w,
            phase: 0.0,
        },
        jc,
    );
    let rotating = frame != Frame::AsWritten;
    // Rate picked up by σ⁺b† in the rotating frame; σ⁻b gets the opposite.
    let cr_rate = if rotating { 2.0 * wa } else { 0.0 };
    if variant == Variant::CounterRotating {
        let up = word(space, &[Ladder::SigmaPlus, Ladder::Raise(Mode::Resonator)]);
        let down = word(space, &[Ladder::SigmaMinus, Ladder::Lower(Mode::Resonator)]);
        if rotating {
            // g_a cos(ωt) e^{±2iω_a t} as two pure exponentials.
            for sw in [w, -w] {
                h.push(pure_exp(params.g_a / 2.0, cr_rate + sw), up.clone());
                h.push(pure_exp(params.g_a / 2.0, -cr_rate - sw), down.clone());
            }
        } else {
            h.push(
                Coefficient::Cos {
                    amp: real(params.g_a),
                    freq: w,
                    phase: 0.0,
                },
                &up + &down,
            );
        }
    }

    let in_drive_frame = frame == Frame::Drive;
    for k in 0..2 {
        let m = magnon(k);
        let gk = knobs.couplings[k];
        let fk = knobs.f[k];
        let phi = params.phi[k];
        let sp_m = word(space, &[Ladder::SigmaPlus, Ladder::Lower(m)]);
        let sm_md = word(space, &[Ladder::SigmaMinus, Ladder::Raise(m)]);
        if in_drive_frame {
            // m_k -> m_k e^{-iθ_k}
            let s = fk * phi.sin();
            h.push(
                Coefficient::Modulated {
                    amp: C64::from_polar(gk, s),
                    depth: fk,
                    freq: w,
                    phase: -phi,
                    rate: 0.0,
                },
                sp_m,
            );
            h.push(
                Coefficient::Modulated {
                    amp: C64::from_polar(gk, -s),
                    depth: -fk,
                    freq: w,
                    phase: -phi,
                    rate: 0.0,
                },
                sm_md,
            );
            if variant == Variant::CounterRotating {
                let sp_md = word(space, &[Ladder::SigmaPlus, Ladder::Raise(m)]);
                let sm_m = word(space, &[Ladder::SigmaMinus, Ladder::Lower(m)]);
                h.push(
                    Coefficient::Modulated {
                        amp: C64::from_polar(gk, -s),
                        depth: -fk,
                        freq: w,
                        phase: -phi,
                        rate: cr_rate,
                    },
                    sp_md,
                );
                h.push(
                    Coefficient::Modulated {
                        amp: C64::from_polar(gk, s),
                        depth: fk,
                        freq: w,
                        phase: -phi,
                        rate: -cr_rate,
                    },
                    sm_m,
                );
            }
        } else {
            h.push(
                Coefficient::Cos {
                    amp: real(fk * w),
                    freq: w,
                    phase: -phi,
                },
                number(space, m),
            );
            h.push(Coefficient::Const(real(gk)), &sp_m + &sm_md);
            if variant == Variant::CounterRotating {
                let up = word(space, &[Ladder::SigmaPlus, Ladder::Raise(m)]);
                let down = word(space, &[Ladder::SigmaMinus, Ladder::Lower(m)]);
                if rotating {
                    h.push(pure_exp(gk, cr_rate), up);
                    h.push(pure_exp(gk, -cr_rate), down);
                } else {
                    h.push(Coefficient::Const(real(gk)), &up + &down);
                }
            }
        }
    }

    let keep_free = frame == Frame::AsWritten;
    match variant {
        Variant::MagnonMismatch => {
            if keep_free {
                h.push(Coefficient::Const(real(wa)), excitation_number(space));
            }
            let chi = errors.chi;
            let det = &number(space, Mode::Magnon1).scale_real(wa * chi)
                - &number(space, Mode::Magnon2).scale_real(wa * chi);
            h.push(Coefficient::Const(ONE), det);
        }
        Variant::QubitMismatch => {
            if keep_free {
                h.push(Coefficient::Const(real(wa)), excitation_number(space));
            }
            h.push(
                Coefficient::Const(real(wa * errors.chi)),
                qubit_excited_projector(space),
            );
        }
        Variant::CounterRotating => {
            if keep_free {
                h.push(Coefficient::Const(real(wa)), excitation_number(space));
            }
        }
        _ => {}
    }
    Ok(h)
}

fn pure_exp(amp: f64, rate: f64) -> Coefficient {
    Coefficient::Modulated {
        amp: real(amp),
        depth: 0.0,
        freq: 0.0,
        phase: 0.0,
        rate,
    }
}

/// Full driven Hamiltonian at time `t`, every term as written.
pub fn full_hamiltonian(
    space: &Arc<HilbertSpace>,
    params: &SystemParams,
    errors: &ErrorParams,
    variant: Variant,
    t: f64,
) -> Result<Operator> {
    Ok(driven_hamiltonian(space, params, errors, variant, Frame::AsWritten)?.at(t))
}

/// Mode-coupling matrix `M` of `σ_z Σ M_jk b_j† b_k`, with `b = (a, m1, m2)`.
pub fn effective_mode_matrix(params: &SystemParams, errors: &ErrorParams, variant: Variant) -> Matrix3<C64> {
    let knobs = MagnonKnobs::new(params, errors, variant);
    mode_matrix(params, &knobs, knobs_couplings(params, &knobs))
}

fn knobs_couplings(params: &SystemParams, knobs: &MagnonKnobs) -> ([f64; 2], f64) {
    let gk = gk_general(params, knobs.couplings, knobs.f);
    let (g12, _) = g12_general(params, knobs.couplings, knobs.f, DEFAULT_SERIES_TOL);
    (gk, g12)
}

fn mode_matrix(params: &SystemParams, knobs: &MagnonKnobs, (gk, g12): ([f64; 2], f64)) -> Matrix3<C64> {
    let s = [0, 1].map(|k| knobs.f[k] * params.phi[k].sin());
    let mut m = Matrix3::zeros();
    m[(0, 1)] = C64::from_polar(gk[0], s[0]);
    m[(0, 2)] = C64::from_polar(gk[1], s[1]);
    m[(1, 2)] = C64::new(0.0, -1.0) * C64::from_polar(g12, s[1] - s[0]);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        m[(j, i)] = m[(i, j)].conj();
    }
    m
}

fn mode_index(j: usize) -> Mode {
    Mode::ALL[j]
}

/// Lifts `σ_z Σ M_jk b_j† b_k` to `space`.
pub(crate) fn lift_mode_matrix(space: &Arc<HilbertSpace>, m: &Matrix3<C64>) -> Operator {
    let sz = sigma_z(space);
    let mut bilinear = Operator::zeros(space);
    for j in 0..3 {
        for k in 0..3 {
            let c = m[(j, k)];
            if c != ZERO {
                let op = word(space, &[Ladder::Raise(mode_index(j)), Ladder::Lower(mode_index(k))]);
                bilinear = &bilinear + &op.scale(c);
            }
        }
    }
    &sz * &bilinear
}

/// Time-independent effective Hamiltonian of `variant`.
///
/// The zeroth-order term `Σ g_k J_0(f_k)(σ⁺m_k + σ⁻m_k†)` is added in its
/// phase-free form; it vanishes at the chiral operating point. Mismatch
/// variants are expressed without the common free term `ω_a K`.
pub fn effective_hamiltonian(
    space: &Arc<HilbertSpace>,
    params: &SystemParams,
    errors: &ErrorParams,
    variant: Variant,
) -> Result<Operator> {
    let knobs = MagnonKnobs::new(params, errors, variant);
    let mut h = if variant == Variant::CounterRotating {
        counter_rotating_effective(space, params, &knobs)?
    } else {
        lift_mode_matrix(space, &mode_matrix(params, &knobs, knobs_couplings(params, &knobs)))
    };
    for k in 0..2 {
        let c = knobs.couplings[k] * bessel_j(0, knobs.f[k]);
        if c != 0.0 {
            let m = magnon(k);
            let term = &word(space, &[Ladder::SigmaPlus, Ladder::Lower(m)])
                + &word(space, &[Ladder::SigmaMinus, Ladder::Raise(m)]);
            h = &h + &term.scale_real(c);
        }
    }
    match variant {
        Variant::MagnonMismatch => {
            let wc = params.omega_a * errors.chi;
            h = &h + &(&number(space, Mode::Magnon1) - &number(space, Mode::Magnon2)).scale_real(wc);
        }
        Variant::QubitMismatch => {
            h = &h + &qubit_excited_projector(space).scale_real(params.omega_a * errors.chi);
        }
        _ => {}
    }
    Ok(h)
}

/// Effective Hamiltonian with counter-rotating corrections, written in the
/// frame rotating at `ω_a`. The pair-creation block is kept only on the
/// resonance `2ω_a = n'ω`.
fn counter_rotating_effective(
    space: &Arc<HilbertSpace>,
    params: &SystemParams,
    knobs: &MagnonKnobs,
) -> Result<Operator> {
    let n_prime = resonance_index(params);
    let probe = n_prime.filter(|&n| n >= 2).unwrap_or(2);
    let c = counter_rotating_couplings(params, probe, DEFAULT_SERIES_TOL)?
        .counter_rotating
        .expect("counter-rotating block present");
    let mut h = lift_mode_matrix(space, &mode_matrix(params, knobs, ([c.gp_1, c.gp_2], c.gp_12)));
    match n_prime {
        Some(1) => return Err(Error::InvalidResonanceIndex(1)),
        Some(n) if n >= 2 => {
            let f = params.f();
            let s = [0, 1].map(|k| f * params.phi[k].sin());
            let big = [c.big_gp_1, c.big_gp_2];
            let mut block = Operator::zeros(space);
            for k in 0..2 {
                let coeff = big[k] * C64::from_polar(1.0, -s[k]);
                let op = word(space, &[Ladder::Raise(Mode::Resonator), Ladder::Raise(magnon(k))]);
                block = &block + &op.scale(coeff);
            }
            let coeff = c.big_gp_12 * C64::from_polar(1.0, -(s[1] + s[0]));
            let op = word(space, &[Ladder::Raise(Mode::Magnon1), Ladder::Raise(Mode::Magnon2)]);
            block = &block + &op.scale(coeff);
            let block = &block + &block.dagger();
            h = &h + &(&sigma_z(space) * &block);
        }
        _ => {}
    }
    Ok(h)
}
