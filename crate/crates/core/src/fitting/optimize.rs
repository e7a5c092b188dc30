//! Bounded Nelder–Mead and Levenberg–Marquardt.

use nalgebra::{DMatrix, DVector};

/// Outcome of a local minimization.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Initial simplex edge relative to the bound width.
    pub initial_step: f64,
    /// Stop when the simplex spread in x (relative to bound width) is below this.
    pub xtol: f64,
    /// Stop when max f − min f over the simplex is below ftol·|f_best|.
    pub ftol: f64,
    pub max_evaluations: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            xtol: 1e-9,
            ftol: 1e-12,
            max_evaluations: 4000,
        }
    }
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Nelder–Mead with the dimension-adaptive coefficients of Gao and Han.
/// Trial points are clamped into the box `[lower, upper]`. Because clamping
/// can flatten the simplex against a bound, the search is restarted from its
/// result until a restart no longer improves it.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut best = simplex_search(&mut f, x0, lower, upper, opts, opts.max_evaluations);
    for _ in 0..MAX_RESTARTS {
        let left = opts.max_evaluations.saturating_sub(best.evaluations);
        if left <= x0.len() + 1 || !best.converged {
            break;
        }
        let next = simplex_search(&mut f, &best.x, lower, upper, opts, left);
        let improved = best.value - next.value > opts.ftol * best.value.abs();
        let evaluations = best.evaluations + next.evaluations;
        let iterations = best.iterations + next.iterations;
        if next.value <= best.value {
            best = Minimum { evaluations, iterations, ..next };
        } else {
            best.evaluations = evaluations;
            best.iterations = iterations;
        }
        if !improved {
            break;
        }
    }
    best
}

const MAX_RESTARTS: usize = 3;

fn simplex_search<F>(
    f: &mut F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
    budget: usize,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut start = x0.to_vec();
    clamp_into(&mut start, lower, upper);
    if n == 0 {
        let value = eval(&start, &mut evals);
        return Minimum {
            x: start,
            value,
            evaluations: evals,
            iterations: 0,
            converged: true,
        };
    }
    let width: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| u - l).collect();
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut p = start.clone();
        let step = opts.initial_step * width[i];
        p[i] = if p[i] + step <= upper[i] { p[i] + step } else { p[i] - step };
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while evals < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
        simplex = order.iter().map(|i| simplex[*i].clone()).collect();
        values = order.iter().map(|i| values[*i]).collect();

        let spread_f = values[n] - values[0];
        let spread_x = (1..=n)
            .flat_map(|j| (0..n).map(move |i| (j, i)))
            .map(|(j, i)| (simplex[j][i] - simplex[0][i]).abs() / width[i])
            .fold(0.0, f64::max);
        if spread_x <= opts.xtol || spread_f <= opts.ftol * values[0].abs() {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for p in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / nf;
            }
        }
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            clamp_into(&mut p, lower, upper);
            p
        };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(alpha * beta);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let x = along(alpha * gamma);
            let v = eval(&x, &mut evals);
            (x, v)
        } else {
            let x = along(-gamma);
            let v = eval(&x, &mut evals);
            (x, v)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        for j in 1..=n {
            let p: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[j])
                .map(|(b, x)| b + delta * (x - b))
                .collect();
            values[j] = eval(&p, &mut evals);
            simplex[j] = p;
        }
    }
    let best = (0..=n).min_by(|a, b| values[*a].total_cmp(&values[*b])).unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evaluations: evals,
        iterations,
        converged,
    }
}

/// Central-difference Jacobian of a residual vector; steps stay inside the
/// bounds and fall back to one-sided differences at a bound.
/// Abscissae for a central difference at `x`, one-sided at a bound.
pub fn difference_points(x: f64, lower: f64, upper: f64) -> (f64, f64) {
    let h = 1e-6 * x.abs().max(1e-3 * (upper - lower)).max(1e-8);
    ((x - h).max(lower), (x + h).min(upper))
}

pub fn jacobian<F>(
    residuals: &mut F,
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
    m: usize,
) -> DMatrix<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    let mut xp = x.to_vec();
    for j in 0..n {
        let (lo, hi) = difference_points(x[j], lower[j], upper[j]);
        xp[j] = hi;
        residuals(&xp, &mut rp);
        xp[j] = lo;
        residuals(&xp, &mut rm);
        xp[j] = x[j];
        let d = hi - lo;
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / d;
        }
    }
    jac
}

#[derive(Debug, Clone, Copy)]
pub struct LevenbergMarquardtOptions {
    pub max_iterations: usize,
    /// Relative decrease of χ² below which the iteration stops.
    pub ftol: f64,
    /// Relative step size below which the iteration stops.
    pub xtol: f64,
}

impl Default for LevenbergMarquardtOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-12,
            xtol: 1e-10,
        }
    }
}

/// Result of a least-squares polish, with the Jacobian at the solution.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub jacobian: DMatrix<f64>,
}

/// Minimizes Σ r_i(x)² inside a box with Marquardt-scaled damping; each
/// trial step is projected onto the bounds.
pub fn levenberg_marquardt<F>(
    mut residuals: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    m: usize,
    opts: &LevenbergMarquardtOptions,
) -> LeastSquares
where
    F: FnMut(&[f64], &mut [f64]),
{
    let residuals = std::cell::RefCell::new(&mut residuals);
    levenberg_marquardt_with_jacobian(
        |x: &[f64], out: &mut [f64]| (residuals.borrow_mut())(x, out),
        |x: &[f64]| jacobian(&mut *residuals.borrow_mut(), x, lower, upper, m),
        x0,
        lower,
        upper,
        m,
        opts,
    )
}

/// As [`levenberg_marquardt`] with a caller-supplied Jacobian of the residuals.
pub fn levenberg_marquardt_with_jacobian<F, J>(
    mut residuals: F,
    mut jacobian: J,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    m: usize,
    opts: &LevenbergMarquardtOptions,
) -> LeastSquares
where
    F: FnMut(&[f64], &mut [f64]),
    J: FnMut(&[f64]) -> DMatrix<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_into(&mut x, lower, upper);
    let mut r = vec![0.0; m];
    residuals(&x, &mut r);
    let mut chi2: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = jacobian(&x);
    let mut trial_r = vec![0.0; m];

    while iterations < opts.max_iterations && n > 0 {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        let mut small_step = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp_into(&mut trial, lower, upper);
            residuals(&trial, &mut trial_r);
            let trial_chi2: f64 = trial_r.iter().map(|v| v * v).sum();
            let rel_step = x
                .iter()
                .zip(&trial)
                .map(|(a, b)| (a - b).abs() / a.abs().max(1e-8))
                .fold(0.0, f64::max);
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let decrease = chi2 - trial_chi2;
                x = trial;
                std::mem::swap(&mut r, &mut trial_r);
                let old = chi2;
                chi2 = trial_chi2;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if decrease <= opts.ftol * old || rel_step <= opts.xtol {
                    converged = true;
                }
                break;
            }
            if rel_step <= opts.xtol {
                small_step = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            converged = small_step || chi2 == 0.0;
            break;
        }
        jac = jacobian(&x);
        if converged {
            break;
        }
    }
    if n == 0 {
        converged = true;
    }
    LeastSquares {
        x,
        chi2,
        iterations,
        converged,
        jacobian: jac,
    }
}
