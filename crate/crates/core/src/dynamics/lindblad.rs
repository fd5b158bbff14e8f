use num_complex::Complex64 as C64;

use super::integrate::{integrate, SolverOptions};
use super::{leakage, Evolution, Hamiltonian, Probe, Record, Target, Trajectory, TRACE_DRIFT_LIMIT};
use crate::error::{Error, Result};
use crate::operators::{min_eigenvalue, CsrMatrix, DensityMatrix, Operator};

/// Collapse operator `L` with rate `γ`, entering as `γ D[L]ρ`.
#[derive(Clone, Debug)]
pub struct Jump {
    pub operator: Operator,
    pub rate: f64,
}

impl Jump {
    pub fn new(operator: Operator, rate: f64) -> Self {
        Jump { operator, rate }
    }
}

/// Integrates `dρ/dt = -i[H(t), ρ] + Σ γ (L ρ L† - {L†L, ρ}/2)`.
pub fn evolve_lindblad<H: Hamiltonian + ?Sized>(
    hamiltonian: &H,
    rho0: &DensityMatrix,
    jumps: &[Jump],
    times: &[f64],
    probe: &Probe,
    opts: &SolverOptions,
) -> Result<Evolution<DensityMatrix>> {
    let space = hamiltonian.space().clone();
    if rho0.space().as_ref() != space.as_ref() {
        return Err(Error::SpaceMismatch);
    }
    for j in jumps {
        if j.operator.space().as_ref() != space.as_ref() {
            return Err(Error::SpaceMismatch);
        }
        if !(j.rate >= 0.0 && j.rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("negative decay rate {}", j.rate)));
        }
    }
    for t in &probe.targets {
        t.check(&space)?;
    }
    let d = space.dim();
    let active: Vec<&Jump> = jumps.iter().filter(|j| j.rate > 0.0).collect();
    let ls: Vec<CsrMatrix> = active.iter().map(|j| CsrMatrix::from_dense(j.operator.matrix(), 0.0)).collect();
    let rates: Vec<f64> = active.iter().map(|j| j.rate).collect();
    // Anti-Hermitian part of the effective Hamiltonian, Σ γ L†L / 2.
    let mut k = nalgebra::DMatrix::<C64>::zeros(d, d);
    for j in &active {
        let m = j.operator.matrix();
        k += (m.adjoint() * m) * C64::new(j.rate / 2.0, 0.0);
    }
    let k = CsrMatrix::from_dense(&k, 0.0);

    let top = space.top_level_indices();
    let trace0 = rho0.trace().re;
    let mut y: Vec<C64> = rho0.matrix().as_slice().to_vec();
    let mut h = CsrMatrix::default();
    let constant = hamiltonian.is_time_independent();
    if constant {
        hamiltonian.load(0.0, &mut h);
    }
    let mut x = vec![C64::new(0.0, 0.0); d * d];
    let mut col = vec![C64::new(0.0, 0.0); d];
    let mut col2 = vec![C64::new(0.0, 0.0); d];
    let mut b = vec![C64::new(0.0, 0.0); d * d];
    let mut records = Vec::with_capacity(times.len());
    let minus_i = C64::new(0.0, -1.0);

    integrate(
        &mut y,
        times,
        opts,
        |t, rho, drho| {
            if !constant {
                hamiltonian.load(t, &mut h);
            }
            // X = (-i H - K) ρ, so that the non-jump part is X + X†.
            for c in 0..d {
                let rc = &rho[c * d..(c + 1) * d];
                let xc = &mut x[c * d..(c + 1) * d];
                h.matvec(rc, xc);
                k.matvec(rc, &mut col);
                for (xi, ki) in xc.iter_mut().zip(&col) {
                    *xi = minus_i * *xi - ki;
                }
            }
            for c in 0..d {
                for r in 0..d {
                    drho[c * d + r] = x[c * d + r] + x[r * d + c].conj();
                }
            }
            // γ L ρ L† = γ L (L ρ)† for Hermitian ρ.
            for (l, &g) in ls.iter().zip(&rates) {
                for c in 0..d {
                    l.matvec(&rho[c * d..(c + 1) * d], &mut b[c * d..(c + 1) * d]);
                }
                for c in 0..d {
                    for (r, v) in col.iter_mut().enumerate() {
                        *v = b[r * d + c].conj();
                    }
                    l.matvec(&col, &mut col2);
                    for r in 0..d {
                        drho[c * d + r] += col2[r] * g;
                    }
                }
            }
        },
        |_, t, rho| {
            let probs: Vec<f64> = (0..d).map(|i| rho[i * d + i].re).collect();
            let trace: f64 = probs.iter().sum();
            if (trace - trace0).abs() > TRACE_DRIFT_LIMIT {
                return Err(Error::TraceDrift { t, drift: trace - trace0 });
            }
            let targets = probe
                .targets
                .iter()
                .map(|target| match target {
                    Target::Ket(phi) => {
                        let a = phi.amplitudes().as_slice();
                        let mut acc = C64::new(0.0, 0.0);
                        for c in 0..d {
                            if a[c] == C64::new(0.0, 0.0) {
                                continue;
                            }
                            let mut inner = C64::new(0.0, 0.0);
                            for r in 0..d {
                                inner += a[r].conj() * rho[c * d + r];
                            }
                            acc += inner * a[c];
                        }
                        acc.re
                    }
                    Target::Components(idx) => idx.iter().map(|&i| probs[i]).sum(),
                })
                .collect();
            let min_ev = if probe.positivity {
                Some(min_eigenvalue(&nalgebra::DMatrix::from_column_slice(d, d, rho)))
            } else {
                None
            };
            records.push(Record {
                t,
                populations: probe.populations(&space, &probs),
                targets,
                norm: trace,
                leakage: leakage(&top, &probs),
                min_eigenvalue: min_ev,
            });
            Ok(())
        },
    )?;
    let final_state = DensityMatrix::from_matrix(&space, nalgebra::DMatrix::from_vec(d, d, y))?;
    Ok(Evolution {
        trajectory: Trajectory { records },
        final_state,
    })
}
