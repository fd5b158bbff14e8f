use num_complex::Complex64 as C64;

use nalgebra::DVector;

use super::integrate::{check_grid, integrate, SolverOptions};
use super::{ket_probabilities, leakage, Evolution, Hamiltonian, Probe, Record, Target, Trajectory, TRACE_DRIFT_LIMIT};
use crate::error::{Error, Result};
use crate::operators::{CsrMatrix, Operator, StateVector};

/// Integrates `i dψ/dt = H(t) ψ` and samples `probe` on `times`.
pub fn evolve_schrodinger<H: Hamiltonian + ?Sized>(
    hamiltonian: &H,
    psi0: &StateVector,
    times: &[f64],
    probe: &Probe,
    opts: &SolverOptions,
) -> Result<Evolution<StateVector>> {
    let space = hamiltonian.space().clone();
    if psi0.space().as_ref() != space.as_ref() {
        return Err(Error::SpaceMismatch);
    }
    for t in &probe.targets {
        t.check(&space)?;
    }
    let top = space.top_level_indices();
    let norm0 = psi0.norm().powi(2);
    let mut y: Vec<C64> = psi0.amplitudes().iter().copied().collect();
    let mut h = CsrMatrix::default();
    let constant = hamiltonian.is_time_independent();
    if constant {
        hamiltonian.load(0.0, &mut h);
    }
    let mut records = Vec::with_capacity(times.len());
    let minus_i = C64::new(0.0, -1.0);

    integrate(
        &mut y,
        times,
        opts,
        |t, y, dy| {
            if !constant {
                hamiltonian.load(t, &mut h);
            }
            h.matvec(y, dy);
            for v in dy.iter_mut() {
                *v *= minus_i;
            }
        },
        |_, t, y| {
            let probs = ket_probabilities(y);
            let norm: f64 = probs.iter().sum();
            if (norm - norm0).abs() > TRACE_DRIFT_LIMIT {
                return Err(Error::TraceDrift { t, drift: norm - norm0 });
            }
            let targets = probe
                .targets
                .iter()
                .map(|target| match target {
                    Target::Ket(phi) => {
                        let ov: C64 = phi.amplitudes().iter().zip(y).map(|(a, b)| a.conj() * b).sum();
                        ov.norm_sqr()
                    }
                    Target::Components(idx) => idx.iter().map(|&i| probs[i]).sum(),
                })
                .collect();
            records.push(Record {
                t,
                populations: probe.populations(&space, &probs),
                targets,
                norm,
                leakage: leakage(&top, &probs),
                min_eigenvalue: None,
            });
            Ok(())
        },
    )?;
    let final_state = StateVector::from_amplitudes(&space, y.into())?;
    Ok(Evolution {
        trajectory: Trajectory { records },
        final_state,
    })
}

/// Samples `exp(-iH(t - t_0)) ψ0` on `times` (with `t_0 = times[0]`) for a
/// static Hermitian `H`, using a single eigendecomposition.
pub fn evolve_exact(
    hamiltonian: &Operator,
    psi0: &StateVector,
    times: &[f64],
    probe: &Probe,
) -> Result<Evolution<StateVector>> {
    let space = hamiltonian.space().clone();
    if psi0.space().as_ref() != space.as_ref() {
        return Err(Error::SpaceMismatch);
    }
    check_grid(times)?;
    for t in &probe.targets {
        t.check(&space)?;
    }
    let top = space.top_level_indices();
    let eig = nalgebra::SymmetricEigen::new(hamiltonian.matrix().clone());
    let v = &eig.eigenvectors;
    let c0 = v.adjoint() * psi0.amplitudes();
    let mut records = Vec::with_capacity(times.len());
    let mut last = psi0.amplitudes().clone();
    let t0 = times[0];
    for &t in times {
        let ct = DVector::from_iterator(
            c0.len(),
            c0.iter().zip(eig.eigenvalues.iter()).map(|(c, &e)| c * C64::from_polar(1.0, -e * (t - t0))),
        );
        last = v * ct;
        let y = last.as_slice();
        let probs = ket_probabilities(y);
        let targets = probe
            .targets
            .iter()
            .map(|target| match target {
                Target::Ket(phi) => {
                    let ov: C64 = phi.amplitudes().iter().zip(y).map(|(a, b)| a.conj() * b).sum();
                    ov.norm_sqr()
                }
                Target::Components(idx) => idx.iter().map(|&i| probs[i]).sum(),
            })
            .collect();
        records.push(Record {
            t,
            populations: probe.populations(&space, &probs),
            targets,
            norm: probs.iter().sum(),
            leakage: leakage(&top, &probs),
            min_eigenvalue: None,
        });
    }
    Ok(Evolution {
        trajectory: Trajectory { records },
        final_state: StateVector::from_amplitudes(&space, last)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnHamiltonian;
    use crate::floquet::{driven_hamiltonian, effective_hamiltonian, ErrorParams, Frame, SystemParams, Variant};
    use crate::operators::{basis_state, qubit_lowering, sigma_z, HilbertSpace, Operator, Qubit};

    #[test]
    fn constant_hamiltonian_matches_matrix_exponential() {
        let s = HilbertSpace::new([2, 1, 1]);
        let p = SystemParams::operating_point(1.0, 20.0);
        let h = effective_hamiltonian(&s, &p, &ErrorParams::default(), Variant::Ideal).unwrap();
        let psi0 = basis_state(&s, Qubit::E, 2, 0, 0).unwrap();
        let times = [0.0, 10.0, 40.0];
        let ev = evolve_schrodinger(&h, &psi0, &times, &Probe::levels(&[2]), &SolverOptions::default()).unwrap();
        let exact = h.unitary_exp(40.0).apply(&psi0).unwrap();
        assert!((ev.final_state.amplitudes() - exact.amplitudes()).norm() < 1e-7);
        assert_eq!(ev.trajectory.records.len(), 3);
        assert!((ev.trajectory.records[0].populations[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rabi_flop_through_closure() {
        // H = Ω σ_x for π/(2Ω) maps g to e with amplitude -i.
        let s = HilbertSpace::new([0, 0, 0]);
        let sm = qubit_lowering(&s);
        let sx = &sm + &sm.dagger();
        let omega = 3.0;
        let h = FnHamiltonian::new(&s, move |_| sx.scale_real(omega));
        let g = basis_state(&s, Qubit::G, 0, 0, 0).unwrap();
        let e = basis_state(&s, Qubit::E, 0, 0, 0).unwrap();
        let probe = Probe::default().with_target(Target::Ket(e.clone()));
        let t = std::f64::consts::PI / (2.0 * omega);
        let ev = evolve_schrodinger(&h, &g, &[0.0, t], &probe, &SolverOptions::default()).unwrap();
        assert!((ev.trajectory.records[1].targets[0] - 1.0).abs() < 1e-9);
        assert!((ev.final_state.amplitude(&e.space().state(1)) - C64::new(0.0, -1.0)).norm() < 1e-8);
    }

    #[test]
    fn driven_and_dense_paths_agree() {
        let s = HilbertSpace::new([1, 1, 1]);
        let p = SystemParams::operating_point(1.0, 20.0);
        let e = ErrorParams::default();
        let dh = driven_hamiltonian(&s, &p, &e, Variant::Ideal, Frame::Drive).unwrap();
        let psi0 = basis_state(&s, Qubit::E, 1, 0, 0).unwrap();
        let opts = SolverOptions::default().for_drive(p.omega);
        let times = [0.0, 0.7, 3.1];
        let a = evolve_schrodinger(&dh, &psi0, &times, &Probe::levels(&[1]), &opts).unwrap();
        let dense = FnHamiltonian::new(&s, |t| dh.at(t));
        let b = evolve_schrodinger(&dense, &psi0, &times, &Probe::levels(&[1]), &opts).unwrap();
        assert!((a.final_state.amplitudes() - b.final_state.amplitudes()).norm() < 1e-12);
        assert!((a.trajectory.last().unwrap().norm - 1.0).abs() < 1e-8);
    }

    #[test]
    fn space_mismatch_and_drift() {
        let s = HilbertSpace::new([1, 0, 0]);
        let other = HilbertSpace::new([0, 0, 0]);
        let h = sigma_z(&s);
        let psi = basis_state(&other, Qubit::G, 0, 0, 0).unwrap();
        assert!(matches!(
            evolve_schrodinger(&h, &psi, &[0.0, 1.0], &Probe::default(), &SolverOptions::default()),
            Err(Error::SpaceMismatch)
        ));
        // A non-Hermitian generator loses norm and trips the drift check.
        let leaky = Operator::identity(&s).scale(C64::new(0.0, -0.5));
        let psi = basis_state(&s, Qubit::G, 0, 0, 0).unwrap();
        assert!(matches!(
            evolve_schrodinger(&leaky, &psi, &[0.0, 1.0], &Probe::default(), &SolverOptions::default()),
            Err(Error::TraceDrift { .. })
        ));
    }

    #[test]
    fn exact_evolution_matches_integrator() {
        let s = HilbertSpace::new([2, 1, 1]);
        let p = SystemParams::operating_point(1.0, 20.0);
        let h = effective_hamiltonian(&s, &p, &ErrorParams::default(), Variant::Ideal).unwrap();
        let psi = basis_state(&s, Qubit::E, 1, 0, 0).unwrap();
        let times: Vec<f64> = (0..=20).map(|i| 4.0 * i as f64).collect();
        let probe = Probe::levels(&[1]);
        let a = evolve_exact(&h, &psi, &times, &probe).unwrap();
        let b = evolve_schrodinger(&h, &psi, &times, &probe, &SolverOptions::default()).unwrap();
        for (x, y) in a.trajectory.records.iter().zip(&b.trajectory.records) {
            for m in 0..3 {
                assert!((x.populations[m] - y.populations[m]).abs() < 1e-8);
            }
        }
        let d = a.final_state.amplitudes() - b.final_state.amplitudes();
        assert!(d.norm() < 1e-8);
        assert!(evolve_exact(&h, &psi, &[1.0, 0.5], &probe).is_err());
        // The initial state sits at the first grid time.
        let shifted = evolve_exact(&h, &psi, &[10.0, 90.0], &probe).unwrap();
        let direct = evolve_exact(&h, &psi, &[0.0, 80.0], &probe).unwrap();
        assert!((shifted.final_state.amplitudes() - direct.final_state.amplitudes()).norm() < 1e-12);
    }
}
