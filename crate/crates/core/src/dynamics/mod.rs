//! Time evolution: closed-form transfer matrices, adaptive Schrödinger and
//! Lindblad integrators, and the observables recorded along the way.

mod fidelity;
mod integrate;
mod lindblad;
mod schrodinger;
mod transfer;

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::DrivenHamiltonian;
use crate::operators::{BasisState, CsrMatrix, HilbertSpace, Operator, StateVector};

pub use fidelity::Fidelity;
pub use integrate::SolverOptions;
pub use lindblad::{evolve_lindblad, Jump};
pub use schrodinger::{evolve_exact, evolve_schrodinger};
pub use transfer::{kernel, propagate_fock_superposition, transfer_matrix, TransferMatrix};

/// Top-level occupation above which a run is flagged as truncated.
pub const LEAKAGE_THRESHOLD: f64 = 1e-4;
/// Trace (or norm) drift that aborts an integration.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-5;

/// Source of `H(t)` for the integrators.
pub trait Hamiltonian: Sync {
    fn space(&self) -> &Arc<HilbertSpace>;
    fn is_time_independent(&self) -> bool;
    /// Writes `H(t)` into `out`, reusing its sparsity pattern when possible.
    fn load(&self, t: f64, out: &mut CsrMatrix);
}

impl Hamiltonian for DrivenHamiltonian {
    fn space(&self) -> &Arc<HilbertSpace> {
        DrivenHamiltonian::space(self)
    }

    fn is_time_independent(&self) -> bool {
        DrivenHamiltonian::is_time_independent(self)
    }

    fn load(&self, t: f64, out: &mut CsrMatrix) {
        DrivenHamiltonian::load(self, t, out)
    }
}

impl Hamiltonian for Operator {
    fn space(&self) -> &Arc<HilbertSpace> {
        Operator::space(self)
    }

    fn is_time_independent(&self) -> bool {
        true
    }

    fn load(&self, _t: f64, out: &mut CsrMatrix) {
        *out = CsrMatrix::from_dense(self.matrix(), 0.0);
    }
}

/// `H(t)` given by an arbitrary closure. Slow: the matrix is rebuilt at every
/// stage.
pub struct FnHamiltonian<F> {
    space: Arc<HilbertSpace>,
    f: F,
}

impl<F: Fn(f64) -> Operator + Sync> FnHamiltonian<F> {
    pub fn new(space: &Arc<HilbertSpace>, f: F) -> Self {
        FnHamiltonian {
            space: space.clone(),
            f,
        }
    }
}

impl<F: Fn(f64) -> Operator + Sync> Hamiltonian for FnHamiltonian<F> {
    fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    fn is_time_independent(&self) -> bool {
        false
    }

    fn load(&self, t: f64, out: &mut CsrMatrix) {
        *out = CsrMatrix::from_dense((self.f)(t).matrix(), 0.0);
    }
}

/// Quantity tracked against a reference.
#[derive(Clone, Debug)]
pub enum Target {
    /// Overlap `|⟨φ|ψ⟩|²` or `⟨φ|ρ|φ⟩`.
    Ket(StateVector),
    /// Summed probability of a set of basis states.
    Components(Vec<usize>),
}

impl Target {
    pub fn components(space: &Arc<HilbertSpace>, states: &[BasisState]) -> Result<Target> {
        let idx = states.iter().map(|s| space.checked_index(s)).collect::<Result<Vec<_>>>()?;
        Ok(Target::Components(idx))
    }

    fn check(&self, space: &Arc<HilbertSpace>) -> Result<()> {
        match self {
            Target::Ket(phi) if phi.space().as_ref() != space.as_ref() => Err(Error::SpaceMismatch),
            Target::Components(idx) if idx.iter().any(|&i| i >= space.dim()) => Err(Error::OutsideSubspace),
            _ => Ok(()),
        }
    }
}

/// What to record at every grid time.
#[derive(Clone, Debug, Default)]
pub struct Probe {
    /// Fock levels whose population is summed per mode.
    pub levels: Vec<usize>,
    pub targets: Vec<Target>,
    /// Density runs only: track the minimum eigenvalue (costs a
    /// diagonalisation per sample).
    pub positivity: bool,
}

impl Probe {
    pub fn levels(levels: &[usize]) -> Self {
        Probe {
            levels: levels.to_vec(),
            ..Default::default()
        }
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.targets.push(target);
        self
    }

    pub fn with_positivity(mut self) -> Self {
        self.positivity = true;
        self
    }

    /// Level populations `[P_a, P_1, P_2]` from basis probabilities.
    pub(crate) fn populations(&self, space: &HilbertSpace, probs: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (s, p) in space.basis().iter().zip(probs) {
            for (m, o) in out.iter_mut().enumerate() {
                if self.levels.contains(&s.occupations[m]) {
                    *o += p;
                }
            }
        }
        out
    }
}

/// Observables at one grid time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    /// `[P_a, P_1, P_2]` summed over the probe levels.
    pub populations: [f64; 3],
    pub targets: Vec<f64>,
    /// `⟨ψ|ψ⟩` or `Tr ρ`.
    pub norm: f64,
    /// Occupation of truncated top Fock levels.
    pub leakage: f64,
    pub min_eigenvalue: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn max_leakage(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| m.max(r.leakage))
    }

    pub fn leakage_flagged(&self) -> bool {
        self.max_leakage() > LEAKAGE_THRESHOLD
    }

    pub fn min_eigenvalue(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.min_eigenvalue).reduce(f64::min)
    }

    /// Population of mode `m` over time.
    pub fn population(&self, m: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.populations[m]).collect()
    }

    pub fn target(&self, k: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.targets[k]).collect()
    }
}

/// Result of an integration: everything probed plus the final state.
#[derive(Clone, Debug)]
pub struct Evolution<S> {
    pub trajectory: Trajectory,
    pub final_state: S,
}

pub(crate) fn leakage(top: &[usize], probs: &[f64]) -> f64 {
    top.iter().map(|&i| probs[i]).sum()
}

pub(crate) fn ket_probabilities(y: &[C64]) -> Vec<f64> {
    y.iter().map(|z| z.norm_sqr()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{basis_state, Qubit};

    #[test]
    fn probe_populations_partition() {
        let s = HilbertSpace::new([2, 2, 2]);
        let probe = Probe::levels(&[0, 1, 2]);
        let probs = vec![1.0 / s.dim() as f64; s.dim()];
        let p = probe.populations(&s, &probs);
        for v in p {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let probe = Probe::levels(&[2]);
        let psi = basis_state(&s, Qubit::E, 0, 0, 2).unwrap();
        let probs = ket_probabilities(psi.amplitudes().as_slice());
        assert_eq!(probe.populations(&s, &probs), [0.0, 0.0, 1.0]);
        assert!((leakage(&s.top_level_indices(), &probs) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn target_checks() {
        let s = HilbertSpace::new([1, 1, 1]);
        let t = Target::components(&s, &[BasisState::new(Qubit::G, 1, 0, 0)]).unwrap();
        assert!(t.check(&s).is_ok());
        assert!(Target::components(&s, &[BasisState::new(Qubit::G, 2, 0, 0)]).is_err());
        let other = HilbertSpace::new([2, 1, 1]);
        let k = Target::Ket(basis_state(&other, Qubit::G, 0, 0, 0).unwrap());
        assert!(matches!(k.check(&s), Err(Error::SpaceMismatch)));
    }

    #[test]
    fn trajectory_accessors() {
        let rec = |t: f64, leak: f64, ev: Option<f64>| Record {
            t,
            populations: [t, 0.0, 0.0],
            targets: vec![2.0 * t],
            norm: 1.0,
            leakage: leak,
            min_eigenvalue: ev,
        };
        let tr = Trajectory {
            records: vec![rec(0.0, 0.0, Some(-1e-12)), rec(1.0, 2e-4, None), rec(2.0, 1e-5, Some(0.0))],
        };
        assert_eq!(tr.times(), vec![0.0, 1.0, 2.0]);
        assert!(tr.leakage_flagged());
        assert_eq!(tr.min_eigenvalue(), Some(-1e-12));
        assert_eq!(tr.population(0), vec![0.0, 1.0, 2.0]);
        assert_eq!(tr.target(0), vec![0.0, 2.0, 4.0]);
    }
}
