//! Dense linear-algebra and root-finding kernels.
//!
//! Matrices here are tiny (a handful of regimes, a handful of assets), so
//! everything is dense and allocation is not a concern.

use nalgebra::{ComplexField, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("negative time argument {0}")]
    NegativeTime(f64),
    #[error("Padé denominator is singular")]
    SingularPade,
    #[error("initial guess lies outside the feasible set")]
    InfeasibleStart,
    #[error("every trial step left the feasible set")]
    GuardViolated,
    #[error("root solver did not converge (best residual {best_residual:e})")]
    NoConvergence { best_residual: f64 },
}

/// Padé(13) numerator coefficients.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which unscaled Padé(13) is accurate to double precision.
const THETA13: f64 = 5.371920351148152;

fn one_norm<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.clone().modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(t A)` by scaling and squaring with a degree-13 Padé approximant.
///
/// Works for real and complex matrices; the complex case is what the
/// characteristic-function identity needs.
pub fn mat_exp<T>(a: &DMatrix<T>, t: f64) -> Result<DMatrix<T>, NumericsError>
where
    T: ComplexField<RealField = f64>,
{
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(NumericsError::NotSquare { rows, cols });
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(NumericsError::NegativeTime(t));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let n = rows;
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scaled: DMatrix<T> = a * T::from_real(t);
    let norm = one_norm(&scaled);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a1: DMatrix<T> = &scaled * T::from_real(0.5f64.powi(squarings));

    let ident = DMatrix::<T>::identity(n, n);
    let a2 = &a1 * &a1;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |k: usize| T::from_real(PADE13[k]);

    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9))
        + &a6 * b(7)
        + &a4 * b(5)
        + &a2 * b(3)
        + &ident * b(1);
    let u = &a1 * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8))
        + &a6 * b(6)
        + &a4 * b(4)
        + &a2 * b(2)
        + &ident * b(0);

    let numer = &v + &u;
    let denom = &v - &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .ok_or(NumericsError::SingularPade)?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    Ok(result)
}

/// A square nonlinear system `F(x) = 0` restricted to a feasible set.
pub struct RootProblem<F, G> {
    pub residual: F,
    pub guard: G,
    pub initial: DVector<f64>,
}

impl<F, G> RootProblem<F, G>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> bool,
{
    pub fn new(residual: F, guard: G, initial: DVector<f64>) -> Self {
        Self {
            residual,
            guard,
            initial,
        }
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    fn eval(&self, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        if !(self.guard)(x) {
            return None;
        }
        let f = (self.residual)(x);
        let norm = inf_norm(&f);
        norm.is_finite().then_some((f, norm))
    }

    /// Forward differences with step `1e-7 (1 + |x_i|)`, flipped to a backward
    /// difference when the forward point is infeasible.
    fn jacobian(&self, x: &DVector<f64>, fx: &DVector<f64>) -> Option<DMatrix<f64>> {
        let d = x.len();
        let mut jac = DMatrix::zeros(fx.len(), d);
        for i in 0..d {
            let h = 1e-7 * (1.0 + x[i].abs());
            let mut xp = x.clone();
            xp[i] += h;
            let (fp, step) = match self.eval(&xp) {
                Some((f, _)) => (f, h),
                None => {
                    xp[i] = x[i] - h;
                    (self.eval(&xp)?.0, -h)
                }
            };
            jac.set_column(i, &((fp - fx) / step));
        }
        Some(jac)
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

const MAX_NEWTON_ITERS: usize = 200;
const MAX_HALVINGS: usize = 60;

/// Damped Newton with a finite-difference Jacobian.
///
/// Steps are halved until the trial point is feasible and the residual
/// decreases. A singular Jacobian switches to a Cauchy (steepest-descent)
/// step. In one dimension a stalled Newton iteration falls back to bracketing
/// bisection. The returned point always satisfies `‖F(x)‖∞ ≤ tol`.
pub fn solve_root<F, G>(p: &RootProblem<F, G>, tol: f64) -> Result<DVector<f64>, NumericsError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> bool,
{
    let mut x = p.initial.clone();
    let (mut fx, mut norm) = p.eval(&x).ok_or(NumericsError::InfeasibleStart)?;
    let mut any_feasible_trial = true;

    for _ in 0..MAX_NEWTON_ITERS {
        if norm <= tol {
            polish(p, &mut x, &mut fx, &mut norm);
            return Ok(x);
        }
        let Some(jac) = p.jacobian(&x, &fx) else {
            break;
        };
        let mut directions = Vec::with_capacity(2);
        if let Some(newton) = jac.clone().lu().solve(&(-&fx)) {
            if newton.iter().all(|v| v.is_finite()) {
                directions.push(newton);
            }
        }
        let grad = jac.transpose() * &fx;
        let jg = &jac * &grad;
        let denom = jg.norm_squared();
        if denom > 0.0 && grad.norm_squared() > 0.0 {
            directions.push(-grad.clone() * (grad.norm_squared() / denom));
        }

        let mut accepted = false;
        any_feasible_trial = false;
        'dirs: for dir in &directions {
            let mut step = 1.0;
            for _ in 0..MAX_HALVINGS {
                let trial = &x + dir * step;
                if let Some((ft, nt)) = p.eval(&trial) {
                    any_feasible_trial = true;
                    if nt < norm {
                        x = trial;
                        fx = ft;
                        norm = nt;
                        accepted = true;
                        break 'dirs;
                    }
                }
                step *= 0.5;
            }
        }
        if !accepted {
            break;
        }
    }
    if norm <= tol {
        return Ok(x);
    }
    if p.dim() == 1 {
        if let Some(root) = bisection_fallback(p, &x, tol) {
            return Ok(root);
        }
    }
    if !any_feasible_trial {
        return Err(NumericsError::GuardViolated);
    }
    Err(NumericsError::NoConvergence {
        best_residual: norm,
    })
}

/// Extra Newton steps once the tolerance is met, kept only while they help.
fn polish<F, G>(p: &RootProblem<F, G>, x: &mut DVector<f64>, fx: &mut DVector<f64>, norm: &mut f64)
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> bool,
{
    for _ in 0..4 {
        if *norm == 0.0 {
            return;
        }
        let Some(jac) = p.jacobian(x, fx) else { return };
        let Some(dir) = jac.lu().solve(&(-&*fx)) else { return };
        let trial = &*x + dir;
        match p.eval(&trial) {
            Some((ft, nt)) if nt < *norm => {
                *x = trial;
                *fx = ft;
                *norm = nt;
            }
            _ => return,
        }
    }
}

/// Scans outward from `start` for a sign change of the scalar residual and
/// bisects the bracket.
fn bisection_fallback<F, G>(p: &RootProblem<F, G>, start: &DVector<f64>, tol: f64) -> Option<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> bool,
{
    let f = |v: f64| p.eval(&DVector::from_element(1, v)).map(|(r, _)| r[0]);
    let x0 = start[0];
    let f0 = f(x0)?;
    if f0 == 0.0 {
        return Some(start.clone());
    }
    for sign in [1.0, -1.0] {
        let mut h = 1e-3 * (1.0 + x0.abs());
        let mut last_ok = x0;
        for _ in 0..80 {
            let mut cand = x0 + sign * h;
            // Pull infeasible candidates back toward the last feasible point.
            let mut fc = f(cand);
            let mut pulls = 0;
            while fc.is_none() && pulls < 60 {
                cand = 0.5 * (cand + last_ok);
                fc = f(cand);
                pulls += 1;
            }
            let fc = fc?;
            if fc.signum() != f0.signum() {
                let (mut lo, mut hi) = if sign > 0.0 { (x0, cand) } else { (cand, x0) };
                let mut flo = f(lo)?;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let fm = f(mid)?;
                    if fm.abs() <= tol || (hi - lo) <= f64::EPSILON * mid.abs().max(1.0) {
                        return (fm.abs() <= tol).then(|| DVector::from_element(1, mid));
                    }
                    if fm.signum() == flo.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                return None;
            }
            if cand == last_ok {
                break;
            }
            last_ok = cand;
            h *= 2.0;
        }
    }
    None
}
