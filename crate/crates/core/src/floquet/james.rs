use std::sync::Arc;

use num_complex::Complex64 as C64;

use super::bessel::bessel_j;
use super::{ErrorParams, MagnonKnobs, SystemParams, Variant};
use crate::error::{Error, Result};
use crate::operators::{
    commutator, number, product_operator, qubit_excited_projector, HilbertSpace, Ladder, Mode,
    Operator,
};

/// Second-order effective Hamiltonian
/// `H_0 + Σ_{n>=1} [H_n, H_{-n}] / (n ω)`, where `H_n` multiplies
/// `e^{inωt}`. Every `n >= 1` needs a partner `-n` with `H_{-n} = H_n†`.
pub fn james_effective(components: &[(i32, Operator)], omega: f64) -> Result<Operator> {
    let space = components
        .first()
        .map(|c| c.1.space().clone())
        .ok_or_else(|| Error::InvalidParameter("no Fourier components".into()))?;
    let find = |n: i32| components.iter().find(|(m, _)| *m == n).map(|c| &c.1);
    let mut h = match find(0) {
        Some(h0) => h0.clone(),
        None => Operator::zeros(&space),
    };
    let mut seen: Vec<i32> = components.iter().map(|c| c.0.abs()).filter(|&n| n > 0).collect();
    seen.sort_unstable();
    seen.dedup();
    for n in seen {
        let (Some(hp), Some(hm)) = (find(n), find(-n)) else {
            return Err(Error::NonConjugatePair(n));
        };
        let scale = hp.max_abs().max(hm.max_abs()).max(1e-300);
        let err = (&hp.dagger() - hm).max_abs();
        if err > 1e-12 * scale {
            return Err(Error::NonConjugatePair(n));
        }
        h = h.try_add(&commutator(hp, hm)?.scale_real(1.0 / (n as f64 * omega)))?;
    }
    Ok(h)
}

/// Fourier components `(n, H_n)`, `|n| <= n_max`, of the drive-frame
/// Hamiltonian of an excitation-conserving variant. Static detunings of the
/// mismatch variants (without the common `ω_a K`) sit in `H_0`.
pub fn fourier_components(
    space: &Arc<HilbertSpace>,
    params: &SystemParams,
    errors: &ErrorParams,
    variant: Variant,
    n_max: i32,
) -> Result<Vec<(i32, Operator)>> {
    if variant == Variant::CounterRotating {
        return Err(Error::InvalidParameter(
            "counter-rotating terms are not periodic in the drive frame".into(),
        ));
    }
    let knobs = MagnonKnobs::new(params, errors, variant);
    let jc = &product_operator(space, &[Ladder::SigmaPlus, Ladder::Lower(Mode::Resonator)])
        + &product_operator(space, &[Ladder::SigmaMinus, Ladder::Raise(Mode::Resonator)]);
    let h_a = jc.scale_real(params.g_a / 2.0);
    let lad = [0, 1].map(|k| {
        let m = if k == 0 { Mode::Magnon1 } else { Mode::Magnon2 };
        (
            product_operator(space, &[Ladder::SigmaPlus, Ladder::Lower(m)]),
            product_operator(space, &[Ladder::SigmaMinus, Ladder::Raise(m)]),
        )
    });
    let mut out = Vec::new();
    for n in -n_max..=n_max {
        let mut h = if n.abs() == 1 {
            h_a.clone()
        } else {
            Operator::zeros(space)
        };
        for k in 0..2 {
            let (gk, fk, phi) = (knobs.couplings[k], knobs.f[k], params.phi[k]);
            let s = fk * phi.sin();
            let jn = bessel_j(n, fk);
            let sign = if n.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let b = C64::from_polar(sign * gk * jn, s - n as f64 * phi);
            let a = C64::from_polar(gk * jn, -s - n as f64 * phi);
            h = &h + &(&lad[k].0.scale(b) + &lad[k].1.scale(a));
        }
        if n == 0 {
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
        }
        out.push((n, h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::{driven_hamiltonian, effective_hamiltonian, Frame};
    use crate::operators::qubit_lowering;

    fn op() -> SystemParams {
        SystemParams::operating_point(1.0, 20.0)
    }

    #[test]
    fn components_resum_to_drive_frame_hamiltonian() {
        let s = HilbertSpace::new([1, 1, 1]);
        let p = op();
        let e = ErrorParams {
            epsilon: 0.1,
            epsilon_k: [0.02, 0.09],
            delta: 0.0,
            ..Default::default()
        };
        for v in [Variant::Ideal, Variant::DriveError] {
            let comps = fourier_components(&s, &p, &e, v, 40).unwrap();
            let h = driven_hamiltonian(&s, &p, &e, v, Frame::Drive).unwrap();
            for t in [0.0, 0.113, 2.9] {
                let mut sum = Operator::zeros(&s);
                for (n, hn) in &comps {
                    sum = &sum + &hn.scale(C64::from_polar(1.0, *n as f64 * p.omega * t));
                }
                assert!((&sum - &h.at(t)).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reproduces_chiral_effective_hamiltonian_at_root() {
        let s = HilbertSpace::new([2, 2, 2]);
        let p = op();
        let e = ErrorParams::default();
        let comps = fourier_components(&s, &p, &e, Variant::Ideal, 40).unwrap();
        let james = james_effective(&comps, p.omega).unwrap();
        let eff = effective_hamiltonian(&s, &p, &e, Variant::Ideal).unwrap();
        assert!((&james - &eff).max_abs() < 1e-10);
    }

    #[test]
    fn off_root_keeps_zeroth_order_term() {
        let s = HilbertSpace::new([1, 1, 1]);
        let mut p = op();
        p.delta_drive = 2.2 * p.omega;
        let e = ErrorParams {
            delta: 0.1,
            ..Default::default()
        };
        let v = Variant::CouplingDeviation;
        let comps = fourier_components(&s, &p, &e, v, 40).unwrap();
        let h0 = comps.iter().find(|c| c.0 == 0).unwrap().1.clone();
        assert!(h0.max_abs() > 1e-3);
        let james = james_effective(&comps, p.omega).unwrap();
        // The effective builder uses the phase-free zeroth-order term; swap it
        // for the drive-frame one before comparing.
        let eff = effective_hamiltonian(&s, &p, &e, v).unwrap();
        let knobs = MagnonKnobs::new(&p, &e, v);
        let mut literal = Operator::zeros(&s);
        for k in 0..2 {
            let m = if k == 0 { Mode::Magnon1 } else { Mode::Magnon2 };
            let t = &product_operator(&s, &[Ladder::SigmaPlus, Ladder::Lower(m)])
                + &product_operator(&s, &[Ladder::SigmaMinus, Ladder::Raise(m)]);
            literal = &literal + &t.scale_real(knobs.couplings[k] * bessel_j(0, knobs.f[k]));
        }
        let expected = &(&eff - &literal) + &h0;
        assert!((&james - &expected).max_abs() < 1e-10);
        assert!((&james - &eff).max_abs() > 1e-4);
    }

    #[test]
    fn unequal_drive_errors_match_closed_form() {
        let s = HilbertSpace::new([1, 1, 1]);
        let p = op();
        let e = ErrorParams {
            epsilon: 0.2,
            epsilon_k: [0.05, 0.17],
            ..Default::default()
        };
        let v = Variant::DriveError;
        let comps = fourier_components(&s, &p, &e, v, 40).unwrap();
        let h0 = comps.iter().find(|c| c.0 == 0).unwrap().1.clone();
        let second = &james_effective(&comps, p.omega).unwrap() - &h0;
        let knobs = MagnonKnobs::new(&p, &e, v);
        let mut literal = Operator::zeros(&s);
        for k in 0..2 {
            let m = if k == 0 { Mode::Magnon1 } else { Mode::Magnon2 };
            let t = &product_operator(&s, &[Ladder::SigmaPlus, Ladder::Lower(m)])
                + &product_operator(&s, &[Ladder::SigmaMinus, Ladder::Raise(m)]);
            literal = &literal + &t.scale_real(knobs.couplings[k] * bessel_j(0, knobs.f[k]));
        }
        let closed = &effective_hamiltonian(&s, &p, &e, v).unwrap() - &literal;
        assert!((&second - &closed).max_abs() < 1e-10);
    }

    #[test]
    fn trivial_and_scaling_cases() {
        let s = HilbertSpace::new([1, 1, 0]);
        let sm = qubit_lowering(&s);
        let h0 = &sm + &sm.dagger();
        let zero = Operator::zeros(&s);
        let comps = vec![(0, h0.clone()), (1, zero.clone()), (-1, zero.clone())];
        assert_eq!(james_effective(&comps, 3.0).unwrap(), h0);

        let a = product_operator(&s, &[Ladder::SigmaPlus, Ladder::Lower(Mode::Resonator)]);
        let h1 = &a + &sm.scale(C64::new(0.2, 0.4));
        let base = vec![(0, h0.clone()), (1, h1.clone()), (-1, h1.dagger())];
        let lam = 1.7;
        let scaled = vec![(0, h0.clone()), (1, h1.scale_real(lam)), (-1, h1.dagger().scale_real(lam))];
        let second = &james_effective(&base, 5.0).unwrap() - &h0;
        let second_scaled = &james_effective(&scaled, 5.0).unwrap() - &h0;
        assert!((&second_scaled - &second.scale_real(lam * lam)).max_abs() < 1e-14);
    }

    #[test]
    fn rejects_non_conjugate_pairs() {
        let s = HilbertSpace::new([1, 0, 0]);
        let a = product_operator(&s, &[Ladder::SigmaPlus, Ladder::Lower(Mode::Resonator)]);
        let bad = vec![(0, Operator::zeros(&s)), (1, a.clone()), (-1, a.clone())];
        assert!(matches!(james_effective(&bad, 1.0), Err(Error::NonConjugatePair(1))));
        let missing = vec![(0, Operator::zeros(&s)), (2, a.clone())];
        assert!(matches!(james_effective(&missing, 1.0), Err(Error::NonConjugatePair(2))));
    }

    #[test]
    fn two_level_sanity() {
        // H(t) = c(σ⁺e^{iωt} + h.c.) is solved exactly in the frame rotating
        // at ω, where the splitting is sqrt(ω²/4 + c²). Expanding to second
        // order and rotating back leaves (c²/ω) σ_z.
        let s = HilbertSpace::new([0, 0, 0]);
        let sm = qubit_lowering(&s);
        let sp = sm.dagger();
        let c = 0.3;
        let w = 7.0;
        let comps = vec![(0, Operator::zeros(&s)), (1, sp.scale_real(c)), (-1, sm.scale_real(c))];
        let h = james_effective(&comps, w).unwrap();
        let expected = crate::operators::sigma_z(&s).scale_real(c * c / w);
        assert!((&h - &expected).max_abs() < 1e-15);
    }
}
