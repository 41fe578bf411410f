#![allow(dead_code)]

//! Oracles shared by the integration tests. None of them call the fitting
//! or eigenvalue code of the library.

use num_complex::Complex64;

type M3 = [[Complex64; 3]; 3];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `D (S_z² - 2/3) + γ B·S` built element by element in the
/// `|+1⟩, |0⟩, |-1⟩` basis.
pub fn hamiltonian(d: f64, gamma: f64, b: [f64; 3]) -> M3 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (bx, by, bz) = (gamma * b[0], gamma * b[1], gamma * b[2]);
    let off = c(s * bx, -s * by);
    [
        [c(d / 3.0 + bz, 0.0), off, c(0.0, 0.0)],
        [off.conj(), c(-2.0 * d / 3.0, 0.0), off],
        [c(0.0, 0.0), off.conj(), c(d / 3.0 - bz, 0.0)],
    ]
}

fn det(m: &M3) -> Complex64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `det(λI - H)`, real for Hermitian `H`.
pub fn char_poly(h: &M3, lambda: f64) -> f64 {
    let mut m = *h;
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { c(lambda, 0.0) - *v } else { -*v };
        }
    }
    det(&m).re
}

fn bisect(h: &M3, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = char_poly(h, lo);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = char_poly(h, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The three eigenvalues in ascending order, from sign changes of the
/// characteristic polynomial between its critical points.
pub fn eigenvalues(h: &M3) -> [f64; 3] {
    // Coefficients of λ³ + a λ² + b λ + c0 from the trace and principal minors.
    let tr = (h[0][0] + h[1][1] + h[2][2]).re;
    let minors = (h[0][0] * h[1][1] - h[0][1] * h[1][0] + h[0][0] * h[2][2] - h[0][2] * h[2][0]
        + h[1][1] * h[2][2]
        - h[1][2] * h[2][1])
        .re;
    // p'(λ) = 3λ² - 2 tr λ + minors.
    let disc = (4.0 * tr * tr - 12.0 * minors).max(0.0).sqrt();
    let q1 = (2.0 * tr - disc) / 6.0;
    let q2 = (2.0 * tr + disc) / 6.0;
    let bound = h
        .iter()
        .map(|row| row.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
        * 2.0
        + 1.0;
    [
        bisect(h, -bound, q1),
        bisect(h, q1, q2),
        bisect(h, q2, bound),
    ]
}

/// `(f_-, f_+)` for fields below the ground-state level anti-crossing,
/// where the `|0⟩` level is the lowest.
pub fn oracle_frequencies(d: f64, gamma: f64, b: [f64; 3]) -> (f64, f64) {
    let e = eigenvalues(&hamiltonian(d, gamma, b));
    (e[1] - e[0], e[2] - e[0])
}

/// Largest and smallest `|Re[B e^{iφ}]|` over `n` uniform phases.
pub fn sweep_extrema(b: [Complex64; 3], n: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for k in 0..n {
        let phi = std::f64::consts::TAU * k as f64 / n as f64;
        let e = Complex64::from_polar(1.0, phi);
        let r = b.iter().map(|z| (z * e).re.powi(2)).sum::<f64>().sqrt();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (hi, lo)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
