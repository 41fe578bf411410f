//! Polarization ellipses of phasor fields and the crossed-coil coupling model.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexFieldVector, RealFieldVector};
use crate::lsq::{self, LeastSquares, LmOptions};

/// Minimum number of traced points per ellipse.
pub const MIN_ELLIPSE_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsePoint {
    pub phi: f64,
    pub p: [f64; 3],
}

/// Curve traced by `p(φ) = Re[B e^{iφ}]` over one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationEllipse {
    pub semi_major: RealFieldVector,
    pub semi_minor: RealFieldVector,
    pub eccentricity: f64,
    /// Phase at which `p(φ)` lies on the positive semi-major axis.
    pub major_phase: f64,
    /// Circular within numerical precision; the axes are then an arbitrary
    /// orthogonal pair in the polarization plane.
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<EllipsePoint>,
}

impl PolarizationEllipse {
    pub fn major_length(&self) -> f64 {
        self.semi_major.norm()
    }

    pub fn minor_length(&self) -> f64 {
        self.semi_minor.norm()
    }

    /// Point on the curve at phase `phi`.
    pub fn point(&self, phi: f64) -> Vector3<f64> {
        let t = phi - self.major_phase;
        self.semi_major.to_vector() * t.cos() - self.semi_minor.to_vector() * t.sin()
    }
}

/// `√(1 - (minor/major)²)`.
pub fn eccentricity(semi_major_len: f64, semi_minor_len: f64) -> Result<f64> {
    if !(semi_major_len.is_finite() && semi_minor_len.is_finite()) {
        return Err(Error::invalid("axis lengths must be finite"));
    }
    if semi_major_len <= 0.0 {
        return Err(Error::UndefinedEllipse(
            "semi-major axis has zero length".into(),
        ));
    }
    if semi_minor_len < 0.0 || semi_minor_len > semi_major_len * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "need 0 <= minor <= major, got minor {semi_minor_len}, major {semi_major_len}"
        )));
    }
    let r = (semi_minor_len / semi_major_len).min(1.0);
    Ok((1.0 - r * r).sqrt())
}

fn unconjugated_dot(a: &[Complex64; 3], b: &[Complex64; 3]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Axes, eccentricity and `n_points` traced samples of the ellipse of `b`.
pub fn ellipse_from_phasor(b: &ComplexFieldVector, n_points: usize) -> Result<PolarizationEllipse> {
    b.ensure_finite()?;
    if n_points < MIN_ELLIPSE_POINTS {
        return Err(Error::invalid(format!(
            "ellipse needs at least {MIN_ELLIPSE_POINTS} points, got {n_points}"
        )));
    }
    let mut e = ellipse_axes(b)?;
    e.points = (0..n_points)
        .map(|k| {
            let phi = TAU * k as f64 / n_points as f64;
            let p = e.point(phi);
            EllipsePoint {
                phi,
                p: [p.x, p.y, p.z],
            }
        })
        .collect();
    Ok(e)
}

/// Axes and eccentricity only.
pub fn ellipse_axes(b: &ComplexFieldVector) -> Result<PolarizationEllipse> {
    b.ensure_finite()?;
    let frame = b.frame();
    let c = b.components();
    let norm2: f64 = c.iter().map(|z| z.norm_sqr()).sum();
    if norm2 == 0.0 {
        return Err(Error::UndefinedEllipse("zero field".into()));
    }
    let bb = unconjugated_dot(&c, &c);
    let re = b.real_part().to_vector();
    let im = b.imag_part().to_vector();

    let (mut phi0, mut major, mut minor, degenerate) = if bb.norm() < 1e-12 * norm2 {
        // Circular: any orthonormal pair of the plane spanned by Re and Im.
        let half = (norm2 / 2.0).sqrt();
        let (first, second, phase) = if re.norm() >= im.norm() {
            (re, im, 0.0)
        } else {
            (im, -re, -FRAC_PI_2)
        };
        let u = first.normalize();
        let w = second - u * second.dot(&u);
        let v = if w.norm() > 1e-9 * first.norm() {
            w.normalize()
        } else {
            any_orthogonal(&u)
        };
        (phase, u * half, v * half, true)
    } else {
        let phi0 = -0.5 * bb.arg();
        let rot = Complex64::from_polar(1.0, phi0);
        let cc = c.map(|z| z * rot);
        let u = Vector3::new(cc[0].re, cc[1].re, cc[2].re);
        let v = Vector3::new(cc[0].im, cc[1].im, cc[2].im);
        (phi0, u, v, false)
    };
    // p(φ) = U cos(φ - φ0) - V sin(φ - φ0).
    if major[major.iamax()] < 0.0 {
        major = -major;
        minor = -minor;
        phi0 += PI;
    }
    phi0 = wrap_angle(phi0).rem_euclid(TAU);

    let a = major.norm();
    let m = minor.norm();
    let ecc = if degenerate {
        0.0
    } else {
        eccentricity(a, m.min(a))?
    };
    Ok(PolarizationEllipse {
        semi_major: RealFieldVector::from_vector(major, frame),
        semi_minor: RealFieldVector::from_vector(minor, frame),
        eccentricity: ecc,
        major_phase: phi0,
        degenerate,
        points: Vec::new(),
    })
}

fn any_orthogonal(u: &Vector3<f64>) -> Vector3<f64> {
    let k = u.iamin();
    let mut e = Vector3::zeros();
    e[k] = 1.0;
    (e - u * u.dot(&e)).normalize()
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Crossed coils `a` and `b` with mutual coupling:
/// `B_a = e^{iα}|B_a|(â + i m_c b̂)`, `B_b = e^{iβ}|B_b|(b̂ + i m_c â)`,
/// `B_ab = e^{iκ}(B_a + B_b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledCoilModel {
    pub mag_a: f64,
    pub mag_b: f64,
    pub dir_a: RealFieldVector,
    pub dir_b: RealFieldVector,
    pub m_c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl CoupledCoilModel {
    /// Forward model: `(B_a, B_b, B_ab)`.
    pub fn fields(&self) -> (ComplexFieldVector, ComplexFieldVector, ComplexFieldVector) {
        let frame = self.dir_a.frame;
        let [a, b, ab] = coil_fields(
            self.mag_a,
            self.mag_b,
            &self.dir_a.to_vector(),
            &self.dir_b.to_vector(),
            self.m_c,
            self.alpha,
            self.beta,
            self.kappa,
        );
        (
            ComplexFieldVector::from_components(a, frame),
            ComplexFieldVector::from_components(b, frame),
            ComplexFieldVector::from_components(ab, frame),
        )
    }

    /// Angle between the two coil axes as lines, degrees in `[0, 90]`.
    pub fn axis_angle_deg(&self) -> f64 {
        line_angle_deg(&self.dir_a.to_vector(), &self.dir_b.to_vector())
    }
}

#[allow(clippy::too_many_arguments)]
fn coil_fields(
    mag_a: f64,
    mag_b: f64,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    m_c: f64,
    alpha: f64,
    beta: f64,
    kappa: f64,
) -> [[Complex64; 3]; 3] {
    let ea = Complex64::from_polar(mag_a, alpha);
    let eb = Complex64::from_polar(mag_b, beta);
    let ek = Complex64::from_polar(1.0, kappa);
    let mut out = [[Complex64::new(0.0, 0.0); 3]; 3];
    for k in 0..3 {
        let fa = ea * Complex64::new(a[k], m_c * b[k]);
        let fb = eb * Complex64::new(b[k], m_c * a[k]);
        out[0][k] = fa;
        out[1][k] = fb;
        out[2][k] = ek * (fa + fb);
    }
    out
}

fn line_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    c.acos().to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledCoilFit {
    pub model: CoupledCoilModel,
    /// Sum of squared residuals, T².
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Coil axes closer than this (as lines) make the coupling unidentifiable.
pub const MIN_COIL_ANGLE_DEG: f64 = 5.0;

/// Unit direction from two angles measured in a local frame whose equator
/// contains `e1` (the starting direction), keeping the search away from the
/// poles of the parameterization.
struct LocalSphere {
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    e3: Vector3<f64>,
}

impl LocalSphere {
    fn around(d: &Vector3<f64>) -> Self {
        let e1 = d.normalize();
        let e2 = any_orthogonal(&e1);
        let e3 = e1.cross(&e2);
        Self { e1, e2, e3 }
    }

    fn dir(&self, lon: f64, lat: f64) -> Vector3<f64> {
        (self.e1 * lon.cos() + self.e2 * lon.sin()) * lat.cos() + self.e3 * lat.sin()
    }
}

struct CoilProblem {
    data: [[Complex64; 3]; 3],
    sa: LocalSphere,
    sb: LocalSphere,
}

impl CoilProblem {
    fn unpack(&self, p: &[f64]) -> (f64, f64, Vector3<f64>, Vector3<f64>, f64, f64, f64, f64) {
        (
            p[0],
            p[1],
            self.sa.dir(p[2], p[3]),
            self.sb.dir(p[4], p[5]),
            p[6],
            p[7],
            p[8],
            p[9],
        )
    }
}

impl LeastSquares for CoilProblem {
    fn n_params(&self) -> usize {
        10
    }

    fn n_residuals(&self) -> usize {
        18
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (ma, mb, a, b, mc, al, be, ka) = self.unpack(p);
        let model = coil_fields(ma, mb, &a, &b, mc, al, be, ka);
        let mut k = 0;
        for (d, m) in self.data.iter().zip(&model) {
            for (dz, mz) in d.iter().zip(m) {
                let r = dz - mz;
                out[k] = r.re;
                out[k + 1] = r.im;
                k += 2;
            }
        }
    }

    fn difference_steps(&self, _: &[f64]) -> Vec<f64> {
        vec![1e-7; 10]
    }

    fn step_floor(&self) -> Vec<f64> {
        vec![1e-15; 10]
    }
}

/// Least-squares fit of the crossed-coil model to three reconstructed
/// phasors (coil a alone, coil b alone, both driven).
pub fn fit_coupled_coils(
    b_a: &ComplexFieldVector,
    b_b: &ComplexFieldVector,
    b_ab: &ComplexFieldVector,
) -> Result<CoupledCoilFit> {
    for v in [b_a, b_b, b_ab] {
        v.ensure_finite()?;
    }
    let frame = b_a.frame();
    for v in [b_b, b_ab] {
        if v.frame() != frame {
            return Err(Error::FrameMismatch {
                expected: frame.to_string(),
                found: v.frame().to_string(),
            });
        }
    }
    // Work in units of the largest field so all parameters are O(1).
    let scale = b_a.norm().max(b_b.norm()).max(b_ab.norm());
    if scale == 0.0 {
        return Err(Error::UndefinedEllipse("all coil fields are zero".into()));
    }
    let inv = Complex64::new(1.0 / scale, 0.0);
    let (sa, sb, sab) = (b_a.scaled(inv), b_b.scaled(inv), b_ab.scaled(inv));

    let ea = ellipse_axes(&sa)?;
    let eb = ellipse_axes(&sb)?;
    let ua = ea.semi_major.to_vector();
    let ub = eb.semi_major.to_vector();
    let angle = line_angle_deg(&ua, &ub);
    if angle < MIN_COIL_ANGLE_DEG {
        return Err(Error::IllConditioned { angle_deg: angle });
    }
    let (a_hat, b_hat) = (ua.normalize(), ub.normalize());
    // B = (U + iV) e^{-iφ0}.
    let alpha0 = wrap_angle(-ea.major_phase);
    let beta0 = wrap_angle(-eb.major_phase);
    // The minor axis is the coupled part.
    let mc_a = ea.semi_minor.to_vector().dot(&b_hat) / ua.norm();
    let mc_b = eb.semi_minor.to_vector().dot(&a_hat) / ub.norm();
    let sum: Vec<Complex64> = sa
        .components()
        .iter()
        .zip(sb.components())
        .map(|(x, y)| x + y)
        .collect();
    let overlap: Complex64 = sum
        .iter()
        .zip(sab.components())
        .map(|(s, d)| s.conj() * d)
        .sum();
    let kappa0 = if overlap.norm() > 0.0 {
        overlap.arg()
    } else {
        0.0
    };

    let problem = CoilProblem {
        data: [sa.components(), sb.components(), sab.components()],
        sa: LocalSphere::around(&a_hat),
        sb: LocalSphere::around(&b_hat),
    };
    let start = [
        ua.norm(),
        ub.norm(),
        0.0,
        0.0,
        0.0,
        0.0,
        0.5 * (mc_a + mc_b),
        alpha0,
        beta0,
        kappa0,
    ];
    let opts = LmOptions {
        max_iterations: 500,
        ftol: 1e-12,
        xtol: 1e-14,
    };
    let out = lsq::minimize(&problem, &start, &opts);
    let (mut ma, mut mb, mut a, mut b, mut mc, mut al, mut be, ka) = problem.unpack(&out.params);

    // Gauge: positive magnitudes, directions flipped so α, β ∈ (-π/2, π/2].
    if ma < 0.0 {
        ma = -ma;
        al += PI;
    }
    if mb < 0.0 {
        mb = -mb;
        be += PI;
    }
    al = wrap_angle(al);
    be = wrap_angle(be);
    if al.abs() > FRAC_PI_2 || al == -FRAC_PI_2 {
        a = -a;
        al = wrap_angle(al + PI);
        mc = -mc;
    }
    if be.abs() > FRAC_PI_2 || be == -FRAC_PI_2 {
        b = -b;
        be = wrap_angle(be + PI);
        mc = -mc;
    }
    let angle = line_angle_deg(&a, &b);
    if angle < MIN_COIL_ANGLE_DEG {
        return Err(Error::IllConditioned { angle_deg: angle });
    }
    let model = CoupledCoilModel {
        mag_a: ma * scale,
        mag_b: mb * scale,
        dir_a: RealFieldVector::from_vector(a.normalize(), frame),
        dir_b: RealFieldVector::from_vector(b.normalize(), frame),
        m_c: mc,
        alpha: al,
        beta: be,
        kappa: wrap_angle(ka),
    };
    Ok(CoupledCoilFit {
        model,
        cost: out.cost * scale * scale,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Largest deviation of any component from a common phase, radians.
/// Zero for linear polarization.
pub fn phase_spread(b: &ComplexFieldVector) -> f64 {
    let c = b.components();
    let bb = unconjugated_dot(&c, &c);
    let rot = Complex64::from_polar(1.0, -0.5 * bb.arg());
    let mut worst: f64 = 0.0;
    for z in c {
        if z.norm() > 1e-12 * b.norm() {
            let w = z * rot;
            let ang = w.im.atan2(w.re);
            // Distance to the real line, either sign.
            worst = worst.max(ang.abs().min(PI - ang.abs()));
        }
    }
    worst
}

/// Brute-force extreme radii of the traced curve (testing aid).
pub fn sweep_extrema(b: &ComplexFieldVector, n: usize) -> (f64, f64) {
    let c = b.components();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for k in 0..n {
        let e = Complex64::from_polar(1.0, TAU * k as f64 / n as f64);
        let r = c.iter().map(|z| (z * e).re.powi(2)).sum::<f64>().sqrt();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (hi, lo)
}
