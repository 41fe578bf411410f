//! Small dense Levenberg–Marquardt solver for the fitting stages.
//!
//! Problems here have at most a few dozen parameters, so the damped normal
//! equations are solved directly with a Cholesky factorization. Damping is
//! scaled by the running maximum of `diag(JᵀJ)` (Marquardt scaling), which
//! makes the iteration invariant to parameter units.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquares {
    fn n_params(&self) -> usize;

    fn n_residuals(&self) -> usize;

    fn residuals(&self, params: &[f64], out: &mut [f64]);

    /// Absolute step below which a parameter counts as settled.
    fn step_floor(&self) -> Vec<f64> {
        vec![0.0; self.n_params()]
    }

    /// Central-difference step per parameter for the default Jacobian.
    fn difference_steps(&self, params: &[f64]) -> Vec<f64> {
        params.iter().map(|p| 1e-7 * p.abs().max(1e-7)).collect()
    }

    /// Jacobian `∂r_k/∂p_j`, central differences unless overridden.
    fn jacobian(&self, params: &[f64], jac: &mut DMatrix<f64>) {
        central_difference_jacobian(self, params, jac);
    }
}

pub fn central_difference_jacobian<P: LeastSquares + ?Sized>(
    problem: &P,
    params: &[f64],
    jac: &mut DMatrix<f64>,
) {
    let m = problem.n_residuals();
    let steps = problem.difference_steps(params);
    let mut p = params.to_vec();
    let mut up = vec![0.0; m];
    let mut down = vec![0.0; m];
    for (j, &h) in steps.iter().enumerate() {
        p[j] = params[j] + h;
        problem.residuals(&p, &mut up);
        p[j] = params[j] - h;
        problem.residuals(&p, &mut down);
        p[j] = params[j];
        for k in 0..m {
            jac[(k, j)] = (up[k] - down[k]) / (2.0 * h);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub ftol: f64,
    /// Stop when every `|δ_j| <= xtol |p_j| + floor_j`.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-12,
            xtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Jacobian at `params`.
    pub jacobian: DMatrix<f64>,
}

impl LmOutcome {
    /// Parameter covariance `s² (JᵀJ)⁻¹` with `s² = cost / (m - n)`.
    /// `None` when the problem has no spare degrees of freedom or `JᵀJ` is
    /// singular.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let (m, n) = self.jacobian.shape();
        if m <= n {
            return None;
        }
        let s2 = self.cost / (m - n) as f64;
        let jtj = self.jacobian.transpose() * &self.jacobian;
        jtj.try_inverse().map(|inv| inv * s2)
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn minimize<P: LeastSquares + ?Sized>(
    problem: &P,
    initial: &[f64],
    opts: &LmOptions,
) -> LmOutcome {
    let n = problem.n_params();
    let m = problem.n_residuals();
    assert_eq!(initial.len(), n, "initial parameter length mismatch");
    let floor = problem.step_floor();

    let mut p = initial.to_vec();
    let mut r = vec![0.0; m];
    problem.residuals(&p, &mut r);
    let mut cost = sum_sq(&r);
    let mut jac = DMatrix::zeros(m, n);
    problem.jacobian(&p, &mut jac);

    let mut scale = vec![0.0f64; n];
    let mut lambda = 1e-3;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;

    if !cost.is_finite() {
        return LmOutcome {
            params: p,
            residuals: r,
            cost,
            iterations,
            converged,
            jacobian: jac,
        };
    }

    'outer: while iterations < opts.max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        for j in 0..n {
            scale[j] = scale[j].max(a[(j, j)]);
        }
        if g.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }

        loop {
            let mut damped = a.clone();
            for j in 0..n {
                damped[(j, j)] += lambda * scale[j].max(f64::MIN_POSITIVE);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 4.0;
                if lambda > 1e20 {
                    break 'outer;
                }
                continue;
            };
            let step = chol.solve(&(-&g));
            let small_step = step
                .iter()
                .zip(&p)
                .zip(&floor)
                .all(|((d, pj), f)| d.abs() <= opts.xtol * pj.abs() + f);
            for j in 0..n {
                trial[j] = p[j] + step[j];
            }
            problem.residuals(&trial, &mut r_trial);
            let cost_trial = sum_sq(&r_trial);

            if cost_trial.is_finite() && cost_trial < cost {
                let rel = (cost - cost_trial) / cost;
                std::mem::swap(&mut p, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = cost_trial;
                problem.jacobian(&p, &mut jac);
                lambda = (lambda / 3.0).max(1e-15);
                if rel < opts.ftol || small_step {
                    converged = true;
                    break 'outer;
                }
                break;
            }

            // No descent: either already at the numerical minimum or the
            // damping is still too weak.
            if small_step || lambda > 1e16 {
                converged = true;
                break 'outer;
            }
            lambda *= 4.0;
        }
    }

    LmOutcome {
        params: p,
        residuals: r,
        cost,
        iterations,
        converged,
        jacobian: jac,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as a least-squares problem.
    struct Rosenbrock;

    impl LeastSquares for Rosenbrock {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            2
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            out[0] = 10.0 * (p[1] - p[0] * p[0]);
            out[1] = 1.0 - p[0];
        }
    }

    /// y = a exp(-b t) sampled without noise.
    struct Decay {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Decay {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.t.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for (k, (t, y)) in self.t.iter().zip(&self.y).enumerate() {
                out[k] = y - p[0] * (-p[1] * t).exp();
            }
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let out = minimize(&Rosenbrock, &[-1.2, 1.0], &LmOptions::default());
        assert!(out.converged);
        assert!((out.params[0] - 1.0).abs() < 1e-8);
        assert!((out.params[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn recovers_exponential_decay() {
        let t: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
        let y = t.iter().map(|t| 2.5 * (-1.3 * t).exp()).collect();
        let out = minimize(&Decay { t, y }, &[1.0, 0.5], &LmOptions::default());
        assert!(out.converged);
        assert!((out.params[0] - 2.5).abs() < 1e-9);
        assert!((out.params[1] - 1.3).abs() < 1e-9);
        assert!(out.cost < 1e-20);
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let opts = LmOptions {
            max_iterations: 2,
            ..LmOptions::default()
        };
        let out = minimize(&Rosenbrock, &[-1.2, 1.0], &opts);
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
    }
}
