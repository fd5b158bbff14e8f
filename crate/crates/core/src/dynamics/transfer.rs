use std::sync::Arc;

use nalgebra::Matrix3;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::floquet::SystemParams;
use crate::operators::{BasisState, HilbertSpace, Qubit, StateVector};

/// Chiral kernel `(x, y, z)` at time `t`.
pub fn kernel(t: f64, g_eff: f64) -> (f64, f64, f64) {
    let w = 3f64.sqrt() * g_eff * t;
    let third = 2.0 * std::f64::consts::PI / 3.0;
    (
        1.0 + 2.0 * w.cos(),
        1.0 + 2.0 * (w - third).cos(),
        1.0 + 2.0 * (w + third).cos(),
    )
}

/// Heisenberg-picture map `(a, m1, m2)(t) = T(t) (a, m1, m2)(0)` for a
/// qubit frozen in `branch`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferMatrix {
    pub branch: Qubit,
    pub t: f64,
    pub f: f64,
    pub g_eff: f64,
    pub entries: Matrix3<C64>,
}

impl TransferMatrix {
    pub fn new(branch: Qubit, t: f64, f: f64, g_eff: f64) -> Self {
        let (x, y0, z0) = kernel(t, g_eff);
        // The ground branch swaps the roles of y and z.
        let (y, z) = match branch {
            Qubit::E => (y0, z0),
            Qubit::G => (z0, y0),
        };
        let i = C64::new(0.0, 1.0);
        let e = |p: f64| C64::from_polar(1.0, p);
        let h = 3f64.sqrt() * f / 2.0;
        let r = |v: f64| C64::new(v, 0.0);
        let m = Matrix3::new(
            r(x),
            -i * e(h) * y,
            i * e(-h) * z,
            i * e(-h) * z,
            r(x),
            -e(-2.0 * h) * y,
            -i * e(h) * y,
            -e(2.0 * h) * z,
            r(x),
        ) / r(3.0);
        TransferMatrix {
            branch,
            t,
            f,
            g_eff,
            entries: m,
        }
    }

    /// Chiral period `2π/(√3 g_eff)`.
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / (3f64.sqrt() * self.g_eff)
    }

    pub fn unitarity_error(&self) -> f64 {
        (self.entries.adjoint() * self.entries - Matrix3::identity()).map(|z| z.norm()).max()
    }
}

/// Transfer matrix at the operating point described by `params`.
pub fn transfer_matrix(branch: Qubit, t: f64, params: &SystemParams) -> TransferMatrix {
    TransferMatrix::new(branch, t, params.f(), params.g_eff())
}

fn factorial_sqrt(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).sqrt()).product()
}

/// Evolves `Σ C_n |branch, n, 0, 0⟩` analytically. A creation operator
/// propagates as `U a† U† = Σ_j T_j1 b_j†`, so the amplitude of
/// `|n_a n_1 n_2⟩` is `C_n √n! Π T_j1^{n_j} / √(n_j!)`.
pub fn propagate_fock_superposition(
    space: &Arc<HilbertSpace>,
    coeffs: &[(usize, C64)],
    branch: Qubit,
    t: f64,
    params: &SystemParams,
) -> Result<StateVector> {
    let norm: f64 = coeffs.iter().map(|c| c.1.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(norm.sqrt()));
    }
    let tm = transfer_matrix(branch, t, params);
    let u = [tm.entries[(0, 0)], tm.entries[(1, 0)], tm.entries[(2, 0)]];
    let mut psi = StateVector::zeros(space);
    for &(n, c) in coeffs {
        if c == C64::new(0.0, 0.0) {
            continue;
        }
        for na in 0..=n {
            for n1 in 0..=(n - na) {
                let n2 = n - na - n1;
                let amp = c * factorial_sqrt(n)
                    * u[0].powu(na as u32)
                    * u[1].powu(n1 as u32)
                    * u[2].powu(n2 as u32)
                    / (factorial_sqrt(na) * factorial_sqrt(n1) * factorial_sqrt(n2));
                let s = BasisState::new(branch, na, n1, n2);
                let idx = space.checked_index(&s)?;
                psi.amplitudes_mut()[idx] += amp;
            }
        }
    }
    Ok(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::{effective_mode_matrix, ErrorParams, Variant};
    use crate::operators::fock_population;
    use crate::operators::Mode;
    use proptest::prelude::*;

    fn op() -> SystemParams {
        SystemParams::operating_point(1.0, 20.0)
    }

    fn expm3(m: &Matrix3<C64>, t: f64) -> Matrix3<C64> {
        // exp(-i M t) through the Hermitian eigendecomposition.
        let eig = m.symmetric_eigen();
        let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|e| C64::from_polar(1.0, -e * t)));
        eig.eigenvectors * d * eig.eigenvectors.adjoint()
    }

    #[test]
    fn identity_at_zero() {
        for b in [Qubit::E, Qubit::G] {
            let t = transfer_matrix(b, 0.0, &op());
            assert!((t.entries - Matrix3::identity()).map(|z| z.norm()).max() < 1e-15);
        }
        let (x, y, z) = kernel(0.0, 0.1);
        assert_eq!(x, 3.0);
        assert!(y.abs() < 1e-15 && z.abs() < 1e-15);
    }

    #[test]
    fn matches_exponential_of_effective_matrix() {
        // For σ_z = +1 the Heisenberg map is exp(-iMt); for σ_z = -1 it is exp(+iMt).
        let p = op();
        let m = effective_mode_matrix(&p, &ErrorParams::default(), Variant::Ideal);
        for t in [0.0, 7.3, 40.0, 78.75, 200.0] {
            let te = transfer_matrix(Qubit::E, t, &p);
            let tg = transfer_matrix(Qubit::G, t, &p);
            assert!((te.entries - expm3(&m, t)).map(|z| z.norm()).max() < 1e-10, "t={t}");
            assert!((tg.entries - expm3(&m, -t)).map(|z| z.norm()).max() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn permutations_at_transfer_time() {
        let p = op();
        let tt = p.transfer_time();
        let te = transfer_matrix(Qubit::E, tt, &p).entries.map(|z| z.norm());
        // a(T) = m1(0), m1(T) = m2(0), m2(T) = a(0)
        let expected_e = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0);
        assert!((te - expected_e).abs().max() < 1e-10);
        let tg = transfer_matrix(Qubit::G, tt, &p).entries.map(|z| z.norm());
        assert!((tg - expected_e.transpose()).abs().max() < 1e-10);
    }

    #[test]
    fn single_excitation_amplitudes() {
        let p = op();
        let s = HilbertSpace::new([1, 1, 1]);
        let f = p.f();
        let h = 3f64.sqrt() * f / 2.0;
        for t in [0.0, 13.0, 50.0, 78.75] {
            let psi = propagate_fock_superposition(&s, &[(1, C64::new(1.0, 0.0))], Qubit::E, t, &p).unwrap();
            let (x, y, z) = kernel(t, p.g_eff());
            let amp = |n: [usize; 3]| psi.amplitude(&BasisState { qubit: Qubit::E, occupations: n });
            // The printed single-excitation state carries the conjugate phases;
            // magnitudes agree and the phases follow U a† U† = Σ T_j1 b_j†.
            let i = C64::new(0.0, 1.0);
            assert!((amp([1, 0, 0]) - C64::new(x / 3.0, 0.0)).norm() < 1e-12);
            let printed_1 = -i * C64::from_polar(1.0, h) * (z / 3.0);
            let printed_2 = i * C64::from_polar(1.0, -h) * (y / 3.0);
            assert!((amp([0, 1, 0]) - printed_1.conj()).norm() < 1e-12);
            assert!((amp([0, 0, 1]) - printed_2.conj()).norm() < 1e-12);
            assert!((amp([0, 1, 0]).norm() - printed_1.norm()).abs() < 1e-12);

            let pa = fock_population(&psi, Mode::Resonator, &[1]);
            let p1 = fock_population(&psi, Mode::Magnon1, &[1]);
            let p2 = fock_population(&psi, Mode::Magnon2, &[1]);
            assert!((pa - x * x / 9.0).abs() < 1e-12);
            assert!((p1 - z * z / 9.0).abs() < 1e-12);
            assert!((p2 - y * y / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn any_superposition_lands_in_m2() {
        let p = op();
        let s = HilbertSpace::new([3, 3, 3]);
        let c = [(0, C64::new(0.5, 0.0)), (1, C64::new(0.0, 0.5)), (3, C64::new(0.5, 0.5))];
        let psi = propagate_fock_superposition(&s, &c, Qubit::E, p.transfer_time(), &p).unwrap();
        let p2 = fock_population(&psi, Mode::Magnon2, &[1, 3]) + fock_population(&psi, Mode::Magnon2, &[0]);
        assert!((p2 - 1.0).abs() < 1e-10);
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        assert!(propagate_fock_superposition(&s, &[(4, C64::new(1.0, 0.0))], Qubit::E, 1.0, &p).is_err());
        assert!(matches!(
            propagate_fock_superposition(&s, &[(1, C64::new(0.5, 0.0))], Qubit::E, 1.0, &p),
            Err(Error::NotNormalized(_))
        ));
    }

    proptest! {
        #[test]
        fn transfer_invariants(t in -500.0f64..500.0) {
            let p = op();
            let te = transfer_matrix(Qubit::E, t, &p);
            let tg = transfer_matrix(Qubit::G, t, &p);
            prop_assert!(te.unitarity_error() < 1e-12);
            prop_assert!(tg.unitarity_error() < 1e-12);
            let shifted = transfer_matrix(Qubit::E, t + te.period(), &p);
            prop_assert!((shifted.entries - te.entries).map(|z| z.norm()).max() < 1e-10);
            let reversed = transfer_matrix(Qubit::E, -t, &p);
            prop_assert!((tg.entries - reversed.entries).map(|z| z.norm()).max() < 1e-12);
            let (x, y, z) = kernel(t, p.g_eff());
            prop_assert!((x * x + y * y + z * z - 9.0).abs() < 1e-12);
        }
    }
}
