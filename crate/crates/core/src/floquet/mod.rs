//! Closed-form Floquet machinery: Bessel utilities, effective couplings,
//! Hamiltonian builders and the second-order James expansion.

mod bessel;
mod couplings;
mod hamiltonian;
mod james;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bessel::{bessel_j, find_j0_zero};
pub use couplings::{
    coupling_strengths, counter_rotating_couplings, matched_ga, resonance_index,
    CounterRotatingCouplings, EffectiveCouplings, DEFAULT_SERIES_TOL,
};
pub use hamiltonian::{
    drive_frame_angles, driven_hamiltonian, effective_hamiltonian, effective_mode_matrix,
    from_drive_frame, full_hamiltonian, to_drive_frame, Coefficient, DriveTerm,
    DrivenHamiltonian, Frame, Variant,
};
pub use james::{fourier_components, james_effective};

/// Physical constants of the driven hybrid system, in units where energies
/// and rates are multiples of `g` (typically `g = 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Qubit-magnon coupling.
    pub g: f64,
    /// Qubit-resonator coupling amplitude.
    pub g_a: f64,
    /// Floquet drive frequency.
    pub omega: f64,
    /// Magnon drive intensity.
    pub delta_drive: f64,
    /// Drive phases of the two magnons.
    pub phi: [f64; 2],
    /// Common transition frequency, used by the lab-frame variants only.
    pub omega_a: f64,
}

impl SystemParams {
    /// Chiral operating point: `f` at the first zero of `J_0`,
    /// `phi = (2π/3, 4π/3)`, matched `g_a`, and `omega_a = 200 g`.
    pub fn operating_point(g: f64, omega: f64) -> Self {
        let f = find_j0_zero();
        let mut p = SystemParams {
            g,
            g_a: 0.0,
            omega,
            delta_drive: f * omega,
            phi: [2.0 * PI / 3.0, 4.0 * PI / 3.0],
            omega_a: 200.0 * g,
        };
        p.g_a = matched_ga(&p);
        p
    }

    /// Drive ratio `Δ/ω`.
    pub fn f(&self) -> f64 {
        self.delta_drive / self.omega
    }

    /// Common effective coupling at default series tolerance.
    pub fn g_eff(&self) -> f64 {
        coupling_strengths(self, DEFAULT_SERIES_TOL).g_eff
    }

    /// One-third chiral period `2π / (3√3 g_eff)`, the transfer time.
    pub fn transfer_time(&self) -> f64 {
        2.0 * PI / (3.0 * 3f64.sqrt() * self.g_eff())
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.g, self.g_a, self.omega, self.delta_drive, self.omega_a]
            .iter()
            .chain(self.phi.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite system parameter".into()));
        }
        if self.omega <= 0.0 {
            return Err(Error::InvalidParameter("omega must be positive".into()));
        }
        if self.g <= 0.0 {
            return Err(Error::InvalidParameter("g must be positive".into()));
        }
        Ok(())
    }
}

/// Which frequency is detuned in the mismatch variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MismatchTarget {
    #[default]
    Magnons,
    Qubit,
}

/// Error knobs of the imperfect Hamiltonians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorParams {
    /// Relative qubit-magnon coupling deviation, `+δ` on m1 and `-δ` on m2.
    pub delta: f64,
    /// Upper bound of the drive-intensity errors.
    pub epsilon: f64,
    /// Drive-intensity errors per magnon.
    pub epsilon_k: [f64; 2],
    /// Relative frequency mismatch.
    pub chi: f64,
    pub mismatch_target: MismatchTarget,
}

impl ErrorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        for e in self.epsilon_k {
            if !(0.0..=self.epsilon).contains(&e) {
                return Err(Error::InvalidParameter(format!(
                    "epsilon_k = {e} outside [0, {}]",
                    self.epsilon
                )));
            }
        }
        if !(self.delta > -1.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (-1, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Constant equal drive error `ε_1 = ε_2 = ε`.
    pub fn constant_drive_error(eps: f64) -> Self {
        ErrorParams {
            epsilon: eps,
            epsilon_k: [eps, eps],
            ..Default::default()
        }
    }
}

/// Per-magnon quantities entering a variant: couplings, drive ratios and
/// static detunings.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MagnonKnobs {
    pub couplings: [f64; 2],
    pub f: [f64; 2],
}

impl MagnonKnobs {
    pub fn new(params: &SystemParams, errors: &ErrorParams, variant: Variant) -> Self {
        let f = params.f();
        let mut k = MagnonKnobs {
            couplings: [params.g; 2],
            f: [f; 2],
        };
        match variant {
            Variant::CouplingDeviation => {
                k.couplings = [params.g * (1.0 + errors.delta), params.g * (1.0 - errors.delta)];
            }
            Variant::DriveError => {
                k.f = [f * (1.0 + errors.epsilon_k[0]), f * (1.0 + errors.epsilon_k[1])];
            }
            _ => {}
        }
        k
    }
}
