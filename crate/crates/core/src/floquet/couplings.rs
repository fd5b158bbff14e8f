use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::bessel::bessel_j;
use super::SystemParams;
use crate::error::{Error, Result};

pub const DEFAULT_SERIES_TOL: f64 = 1e-12;
const SERIES_CAP: i32 = 200;

/// Second-order couplings of the effective Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCouplings {
    pub g_1: f64,
    pub g_2: f64,
    pub g_12: f64,
    /// Mean of `|g_1|, |g_2|, |g_12|`; the common magnitude when matched.
    pub g_eff: f64,
    /// Set when `J_0(f)` is not zero, so the zeroth-order term survives.
    pub off_root: bool,
    /// Number of terms summed in the `g_12` series.
    pub series_terms: usize,
    pub counter_rotating: Option<CounterRotatingCouplings>,
}

impl EffectiveCouplings {
    /// Largest pairwise spread of the three magnitudes.
    pub fn mismatch(&self) -> f64 {
        let m = [self.g_1.abs(), self.g_2.abs(), self.g_12.abs()];
        let hi = m.iter().cloned().fold(f64::MIN, f64::max);
        let lo = m.iter().cloned().fold(f64::MAX, f64::min);
        hi - lo
    }
}

/// Couplings with the counter-rotating corrections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterRotatingCouplings {
    pub n_prime: i64,
    pub gp_1: f64,
    pub gp_2: f64,
    pub gp_12: f64,
    #[serde(rename = "Gp_1")]
    pub big_gp_1: C64,
    #[serde(rename = "Gp_2")]
    pub big_gp_2: C64,
    #[serde(rename = "Gp_12")]
    pub big_gp_12: C64,
}

/// Sums `Σ_{n>=1} w(n) J_n(f1) J_n(f2)`. Terms are added until the envelope
/// `|J_n(f1) J_n(f2)| / n` of the next one falls below `tol` times the summed
/// envelope. The envelope is used instead of the term itself because
/// trigonometric weights vanish at isolated `n`.
pub(crate) fn bessel_pair_series<W: Fn(i32) -> f64>(
    f1: f64,
    f2: f64,
    tol: f64,
    weight: W,
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut envelope = 0.0;
    let mut n = 1;
    while n <= SERIES_CAP {
        let jj = bessel_j(n, f1) * bessel_j(n, f2);
        let env = jj.abs() / n as f64;
        if n > 1 && env < tol * envelope {
            break;
        }
        envelope += env;
        sum += weight(n) * jj;
        n += 1;
    }
    (sum, (n - 1) as usize)
}

/// `g_12` for per-magnon couplings `gk` and drive ratios `fk`.
pub(crate) fn g12_general(params: &SystemParams, gk: [f64; 2], fk: [f64; 2], tol: f64) -> (f64, usize) {
    let dphi = params.phi[1] - params.phi[0];
    let (s, terms) = bessel_pair_series(fk[0], fk[1], tol, |n| (n as f64 * dphi).sin() / n as f64);
    (2.0 * gk[0] * gk[1] / params.omega * s, terms)
}

/// `g_k = -(g_a g_k / ω) J_1(f_k) cos φ_k`.
pub(crate) fn gk_general(params: &SystemParams, gk: [f64; 2], fk: [f64; 2]) -> [f64; 2] {
    [0, 1].map(|k| -(params.g_a * gk[k] / params.omega) * bessel_j(1, fk[k]) * params.phi[k].cos())
}

/// First-order and `m1†m2` couplings of the effective Hamiltonian.
pub fn coupling_strengths(params: &SystemParams, series_tol: f64) -> EffectiveCouplings {
    let f = params.f();
    let [g_1, g_2] = gk_general(params, [params.g; 2], [f; 2]);
    let (g_12, series_terms) = g12_general(params, [params.g; 2], [f; 2], series_tol);
    EffectiveCouplings {
        g_1,
        g_2,
        g_12,
        g_eff: (g_1.abs() + g_2.abs() + g_12.abs()) / 3.0,
        off_root: bessel_j(0, f).abs() > 1e-10,
        series_terms,
        counter_rotating: None,
    }
}

/// `g_a` making `|g_1| = |g_12|`:
/// `g_a = 2 g |Σ J_n²(f)/n sin(n(φ_2-φ_1))| / (J_1(f) |cos φ_1|)`,
/// which reduces to `(4g/J_1) Σ J_n²/n sin(2nπ/3)` at `φ = (2π/3, 4π/3)`.
pub fn matched_ga(params: &SystemParams) -> f64 {
    let f = params.f();
    let dphi = params.phi[1] - params.phi[0];
    let (s, _) = bessel_pair_series(f, f, DEFAULT_SERIES_TOL, |n| {
        (n as f64 * dphi).sin() / n as f64
    });
    2.0 * params.g * s.abs() / (bessel_j(1, f) * params.phi[0].cos().abs())
}

/// `n' = 2ω_a/ω` when it is an integer within 1e-9.
pub fn resonance_index(params: &SystemParams) -> Option<i64> {
    let r = 2.0 * params.omega_a / params.omega;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * r.abs().max(1.0)).then_some(n as i64)
}

/// Couplings including counter-rotating corrections for resonance index `n'`.
pub fn counter_rotating_couplings(
    params: &SystemParams,
    n_prime: i64,
    series_tol: f64,
) -> Result<EffectiveCouplings> {
    if n_prime < 2 {
        return Err(Error::InvalidResonanceIndex(n_prime));
    }
    if params.omega_a <= 0.0 {
        return Err(Error::InvalidParameter("omega_a must be positive".into()));
    }
    let f = params.f();
    let (g, ga, w, wa) = (params.g, params.g_a, params.omega, params.omega_a);
    let np = n_prime as i32;
    let npf = n_prime as f64;
    let j = |n: i32| bessel_j(n, f);
    let sign = |k: i64| if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };

    let mut base = coupling_strengths(params, series_tol);
    let gp = [0, 1].map(|k| {
        -ga * g * j(1) * params.phi[k].cos() * (1.0 / w - 1.0 / (2.0 * wa + w))
    });
    let dphi = params.phi[1] - params.phi[0];
    let (s12, _) = bessel_pair_series(f, f, series_tol, |n| {
        let nf = n as f64;
        (1.0 / (nf * w) - 1.0 / (2.0 * wa + nf * w)) * (nf * dphi).sin()
    });
    let gp_12 = 2.0 * g * g * s12;

    let big_gp = [0, 1].map(|k| {
        let phi = params.phi[k];
        let t1 = C64::from_polar(npf * j(np - 1) / (npf - 1.0), -(npf - 1.0) * phi);
        let t2 = C64::from_polar(npf * j(np + 1) / (npf + 1.0), -(npf + 1.0) * phi);
        (t1 - t2) * (sign(n_prime - 1) * ga * g / w)
    });

    let [p1, p2] = params.phi;
    let mut big_12 = C64::new(0.0, 0.0);
    let mut envelope = 0.0;
    for n in 1..=SERIES_CAP {
        let nf = n as f64;
        let jj = j(n) * j(n + np);
        let env = jj.abs() / nf;
        if n > 1 && env < series_tol * envelope {
            break;
        }
        envelope += env;
        let phase = C64::from_polar(1.0, -(nf * p1 - (nf + npf) * p2))
            + C64::from_polar(1.0, -(nf * p2 - (nf + npf) * p1));
        big_12 += phase * (sign(n as i64 + n_prime) * npf / (nf * (npf + nf)) * jj);
    }
    for n in 1..np {
        let nf = n as f64;
        let phase = C64::from_polar(1.0, nf * p1 + (npf - nf) * p2)
            + C64::from_polar(1.0, nf * p2 + (npf - nf) * p1);
        big_12 += phase * (sign(n_prime) * j(n) * j(np - n) / nf);
    }
    big_12 *= g * g / w;

    base.counter_rotating = Some(CounterRotatingCouplings {
        n_prime,
        gp_1: gp[0],
        gp_2: gp[1],
        gp_12,
        big_gp_1: big_gp[0],
        big_gp_2: big_gp[1],
        big_gp_12: big_12,
    });
    Ok(base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::find_j0_zero;
    use std::f64::consts::PI;

    fn op() -> SystemParams {
        SystemParams::operating_point(1.0, 20.0)
    }

    #[test]
    fn chiral_series_value() {
        // Direct 50-term summation at the rounded drive ratio.
        let f = 2.4048;
        let mut s = 0.0;
        for n in 1..=50 {
            s += bessel_j(n, f).powi(2) / n as f64 * (2.0 * n as f64 * PI / 3.0).sin();
        }
        // 0.1535547941446270 from an independent scipy summation.
        assert!((s - 0.153_554_794_144_627).abs() < 1e-12, "{s}");
        assert!((s - 0.15366).abs() / s < 1e-3);
        let (series, _) = bessel_pair_series(f, f, 1e-12, |n| (2.0 * n as f64 * PI / 3.0).sin() / n as f64);
        // The omitted tail is bounded by about twice the first dropped envelope term.
        assert!((series - s).abs() < 1e-12, "{series} {s}");
    }

    #[test]
    fn equal_phases_kill_g12() {
        let mut p = op();
        p.phi = [1.0, 1.0];
        assert_eq!(coupling_strengths(&p, 1e-12).g_12, 0.0);
    }

    #[test]
    fn operating_point_couplings() {
        let c = coupling_strengths(&op(), 1e-12);
        assert!((c.g_eff - 0.01535).abs() < 1e-5, "{}", c.g_eff);
        assert!(c.mismatch() < 1e-10);
        assert!(!c.off_root);
        assert!(c.g_12 > 0.0 && c.g_1 > 0.0);
    }

    #[test]
    fn matched_ga_values() {
        let mut p = op();
        p.delta_drive = 2.4048 * p.omega;
        let ga = matched_ga(&p);
        assert!((ga - 1.184).abs() < 1e-3, "{ga}");
        p.g_a = ga;
        let c = coupling_strengths(&p, 1e-12);
        assert!((c.g_1.abs() - c.g_12.abs()).abs() < 1e-10);

        let mut q = op();
        let r1 = matched_ga(&q) / q.g;
        q.g *= 2.0;
        let r2 = matched_ga(&q) / q.g;
        assert!((r1 - r2).abs() < 1e-14);
    }

    #[test]
    fn off_root_flag() {
        let mut p = op();
        p.delta_drive = 2.0 * p.omega;
        assert!(coupling_strengths(&p, 1e-12).off_root);
        assert!((op().f() - find_j0_zero()).abs() < 1e-15);
    }

    #[test]
    fn series_tolerance_convergence() {
        let p = op();
        let mut tol = 1e-3;
        while tol > 1e-12 {
            let a = coupling_strengths(&p, tol).g_12;
            let b = coupling_strengths(&p, tol / 2.0).g_12;
            assert!((a - b).abs() < tol, "tol {tol}");
            tol /= 10.0;
        }
    }

    #[test]
    fn counter_rotating_limits() {
        let mut p = op();
        p.omega_a = 1e12;
        let c = counter_rotating_couplings(&p, 20, 1e-12).unwrap();
        let cr = c.counter_rotating.unwrap();
        assert!((cr.gp_1 - c.g_1).abs() < 1e-12);
        assert!((cr.gp_2 - c.g_2).abs() < 1e-12);
        assert!((cr.gp_12 - c.g_12).abs() < 1e-12);

        let mut p = op();
        p.omega_a = 200.0;
        let c = counter_rotating_couplings(&p, 20, 1e-12).unwrap();
        let cr = c.counter_rotating.unwrap();
        assert!(cr.big_gp_1.norm() < 1e-6 * cr.gp_1.abs());
        assert!(cr.big_gp_12.norm() < 1e-6 * cr.gp_12.abs());
        assert_eq!(resonance_index(&p), Some(20));
    }

    #[test]
    fn counter_rotating_rejects_low_index() {
        assert!(matches!(
            counter_rotating_couplings(&op(), 1, 1e-12),
            Err(Error::InvalidResonanceIndex(1))
        ));
        assert!(counter_rotating_couplings(&op(), 0, 1e-12).is_err());
    }

    #[test]
    fn big_gp_prefactor_alternates() {
        let p = op();
        for n in 2..10i64 {
            let a = counter_rotating_couplings(&p, n, 1e-12).unwrap().counter_rotating.unwrap();
            let np = n as f64;
            let f = p.f();
            let phi = p.phi[0];
            let bracket = C64::from_polar(np * bessel_j(n as i32 - 1, f) / (np - 1.0), -(np - 1.0) * phi)
                - C64::from_polar(np * bessel_j(n as i32 + 1, f) / (np + 1.0), -(np + 1.0) * phi);
            let expected = bracket * (p.g_a * p.g / p.omega);
            let sign = if (n - 1) % 2 == 0 { 1.0 } else { -1.0 };
            assert!((a.big_gp_1 - expected * sign).norm() < 1e-15);
        }
    }
}
