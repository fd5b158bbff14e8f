use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operators::{DensityMatrix, MagnonPairKet, MagnonPairState, StateVector};

/// Fidelity `⟨φ|ρ|φ⟩` with a pure reference `φ`.
pub trait Fidelity<T: ?Sized> {
    fn fidelity(&self, target: &T) -> Result<f64>;
}

impl Fidelity<StateVector> for StateVector {
    fn fidelity(&self, target: &StateVector) -> Result<f64> {
        Ok(target.inner(self)?.norm_sqr())
    }
}

impl Fidelity<StateVector> for DensityMatrix {
    fn fidelity(&self, target: &StateVector) -> Result<f64> {
        if self.space().as_ref() != target.space().as_ref() {
            return Err(Error::SpaceMismatch);
        }
        let a = target.amplitudes();
        let v: C64 = (a.adjoint() * self.matrix() * a)[(0, 0)];
        Ok(v.re)
    }
}

impl Fidelity<MagnonPairKet> for MagnonPairState {
    fn fidelity(&self, target: &MagnonPairKet) -> Result<f64> {
        MagnonPairState::fidelity(self, target)
    }
}
