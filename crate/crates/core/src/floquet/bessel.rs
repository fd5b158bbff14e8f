//! Bessel functions of the first kind for small arguments.

/// `J_n(x)` by its ascending power series. Accurate to ~1e-13 absolute for
/// `|x| <= 10` and `|n| <= 40`. Negative orders use `J_{-n} = (-1)^n J_n`.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    if n < 0 {
        let v = bessel_j(-n, x);
        return if n % 2 == 0 { v } else { -v };
    }
    let n = n as u32;
    let half = 0.5 * x;
    // Leading term (x/2)^n / n!
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    if term == 0.0 {
        return 0.0;
    }
    let q = -half * half;
    let mut sum = term;
    let mut largest = term.abs();
    let mut k = 0u32;
    loop {
        k += 1;
        term *= q / (k as f64 * (k + n) as f64);
        sum += term;
        largest = largest.max(term.abs());
        if term.abs() <= 1e-17 * largest && (k as f64) > half.abs() {
            break;
        }
        if k > 500 {
            break;
        }
    }
    sum
}

/// First positive zero of `J_0`, by Newton iteration from 2.4.
pub fn find_j0_zero() -> f64 {
    let mut x = 2.4;
    for _ in 0..50 {
        let step = bessel_j(0, x) / -bessel_j(1, x);
        x -= step;
        if step.abs() < 1e-16 * x {
            break;
        }
    }
    x
}
