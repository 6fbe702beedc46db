//! f-divergence minimal martingale measures for HARA utilities.
//!
//! For each regime the measure change is described by a drift tilt `β` and
//! jump multipliers `Y(x)`. For a HARA utility with dual index `γ` the
//! multipliers take the form
//!
//! ```text
//! Y(β; x) = (1 + (γ − 1)⟨β, x⟩)^{1/(γ−1)}
//! ```
//!
//! which gives `Y = 1/(1 − ⟨β,x⟩)` for logarithmic utility (`γ = 0`) and
//! `Y = e^{⟨β,x⟩}` in the exponential limit `γ → 1`. `β` is pinned down by the
//! requirement that the price drift vanishes under the new measure:
//!
//! ```text
//! a + cβ + Σ_i ν_i x_i (Y(β; x_i) − 1) = 0.
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::chain::occupation_laplace;
use crate::levy::{LevyTriplet, SwitchingModel};
use crate::numerics::{solve_root, NumericsError, RootProblem};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Keeps `1 + (γ−1)⟨β,x⟩` away from zero so that every `Y` stays positive.
const BASE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MmmError {
    #[error("power utility exponent {0} must lie in (-inf, 0) or (0, 1)")]
    InvalidExponent(f64),
    #[error("regime {regime}: no equivalent martingale measure found ({reason})")]
    NoEmm { regime: usize, reason: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A HARA utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Utility {
    Log,
    Power { p: f64 },
    Exponential,
}

impl Utility {
    pub fn power(p: f64) -> Result<Self, MmmError> {
        if p.is_finite() && p < 1.0 && p != 0.0 {
            Ok(Utility::Power { p })
        } else {
            Err(MmmError::InvalidExponent(p))
        }
    }

    /// Dual index: `p/(p−1)` for power, 0 for log, 1 for exponential.
    pub fn gamma(&self) -> f64 {
        match *self {
            Utility::Log => 0.0,
            Utility::Power { p } => p / (p - 1.0),
            Utility::Exponential => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Utility::Log => "log",
            Utility::Power { .. } => "power",
            Utility::Exponential => "exponential",
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Utility::Log => {
                if x > 0.0 {
                    x.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Utility::Power { p } => {
                if x > 0.0 {
                    x.powf(p) / p
                } else if p < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
            Utility::Exponential => 1.0 - (-x).exp(),
        }
    }

    /// Whether terminal wealth must stay positive for the utility to be finite.
    pub fn needs_positive_wealth(&self) -> bool {
        !matches!(self, Utility::Exponential)
    }

    /// `−f'(y)`, the wealth whose marginal utility is `y`.
    pub fn inverse_marginal(&self, y: f64) -> f64 {
        match *self {
            Utility::Log => 1.0 / y,
            Utility::Power { .. } => y.powf(self.gamma() - 1.0),
            Utility::Exponential => -y.ln(),
        }
    }
}

/// Jump multiplier `Y(β; x)` given `⟨β, x⟩`, or `None` outside the positivity guard.
pub fn jump_multiplier(gamma: f64, beta_dot_x: f64) -> Option<f64> {
    if (gamma - 1.0).abs() < 1e-14 {
        return Some(beta_dot_x.exp());
    }
    let base = 1.0 + (gamma - 1.0) * beta_dot_x;
    (base > BASE_FLOOR).then(|| base.powf(1.0 / (gamma - 1.0)))
}

/// Girsanov parameters of the minimal measure for one regime.
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovSolution {
    pub regime: usize,
    pub beta: DVector<f64>,
    /// `Y` at each atom of the regime's jump measure, in mark order.
    pub multipliers: Vec<f64>,
    pub gamma: f64,
    /// `‖a + cβ + Σ ν x (Y − 1)‖∞` at the returned `β`.
    pub residual: f64,
}

impl GirsanovSolution {
    /// Solution for a regime with explicitly chosen `β` (multipliers follow
    /// from `γ`). Used for fault injection; the residual is whatever it is.
    pub fn with_beta(tr: &LevyTriplet, regime: usize, gamma: f64, beta: DVector<f64>) -> Option<Self> {
        let multipliers = multipliers_at(tr, gamma, &beta)?;
        let residual = martingale_residual(tr, gamma, &beta)?.amax();
        Some(Self { regime, beta, multipliers, gamma, residual })
    }
}

fn multipliers_at(tr: &LevyTriplet, gamma: f64, beta: &DVector<f64>) -> Option<Vec<f64>> {
    tr.jumps
        .weighted_atoms()
        .map(|(x, _)| jump_multiplier(gamma, beta.dot(x)))
        .collect()
}

/// Drift of the regime under the measure defined by `(β, Y(β; ·))`.
pub fn martingale_residual(tr: &LevyTriplet, gamma: f64, beta: &DVector<f64>) -> Option<DVector<f64>> {
    let c = tr.covariance();
    let mut r = tr.drift_a() + &c * beta;
    for (x, w) in tr.jumps.weighted_atoms() {
        let y = jump_multiplier(gamma, beta.dot(x))?;
        r += x * (w * (y - 1.0));
    }
    Some(r)
}

/// Solves the martingale condition for the utility's multiplier family.
pub fn solve_regime_mmm(tr: &LevyTriplet, u: &Utility, tol: f64) -> Result<GirsanovSolution, MmmError> {
    solve_regime_with_gamma(tr, 0, u.gamma(), tol)
}

/// Same as [`solve_regime_mmm`] with the dual index given directly, which
/// also admits `γ` outside the range reachable from a legal power exponent.
pub fn solve_regime_with_gamma(tr: &LevyTriplet, regime: usize, gamma: f64, tol: f64) -> Result<GirsanovSolution, MmmError> {
    let d = tr.dim();
    let a = tr.drift_a();
    let c = tr.covariance();
    let no_emm = |reason: String| MmmError::NoEmm { regime: regime + 1, reason };

    let beta = if a.iter().all(|&v| v == 0.0) {
        DVector::zeros(d)
    } else if !tr.has_jumps() {
        // Linear condition a + cβ = 0.
        let beta = c
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&(-&a)))
            .or_else(|| c.clone().lu().solve(&(-&a)))
            .ok_or_else(|| no_emm("singular covariance and no jumps to absorb the drift".into()))?;
        let check = (&a + &c * &beta).amax();
        if !(check <= tol.max(1e-12 * a.amax())) {
            return Err(no_emm(format!("drift not in the range of the covariance (residual {check:e})")));
        }
        beta
    } else {
        let residual = |b: &DVector<f64>| {
            martingale_residual(tr, gamma, b).unwrap_or_else(|| DVector::from_element(d, f64::NAN))
        };
        let guard = |b: &DVector<f64>| multipliers_at(tr, gamma, b).is_some_and(|ys| ys.iter().all(|y| y.is_finite()));
        let problem = RootProblem::new(residual, guard, DVector::zeros(d));
        solve_root(&problem, tol).map_err(|e| no_emm(e.to_string()))?
    };

    let multipliers = multipliers_at(tr, gamma, &beta).ok_or_else(|| no_emm("multipliers not positive".into()))?;
    let residual = martingale_residual(tr, gamma, &beta)
        .ok_or_else(|| no_emm("multipliers not positive".into()))?
        .amax();
    if !(residual <= tol) {
        return Err(no_emm(format!("residual {residual:e} above tolerance")));
    }
    Ok(GirsanovSolution { regime, beta, multipliers, gamma, residual })
}

fn quadratic(tr: &LevyTriplet, beta: &DVector<f64>) -> f64 {
    let c: DMatrix<f64> = tr.covariance();
    (&c * beta).dot(beta)
}

fn jump_sum(tr: &LevyTriplet, sol: &GirsanovSolution, f: impl Fn(f64) -> f64) -> f64 {
    tr.jumps
        .weighted_atoms()
        .zip(&sol.multipliers)
        .map(|((_, w), &y)| w * f(y))
        .sum()
}

/// Hellinger rate `h(γ) = γ(1−γ)/2 ⟨cβ,β⟩ − ∫ (Y^γ − γY − 1 + γ) dν`, so that
/// `E[Z_t^γ] = e^{−t h(γ)}`.
pub fn hellinger_rate(tr: &LevyTriplet, sol: &GirsanovSolution, gamma: f64) -> f64 {
    0.5 * gamma * (1.0 - gamma) * quadratic(tr, &sol.beta) - jump_sum(tr, sol, |y| y.powf(gamma) - gamma * y - 1.0 + gamma)
}

/// Kullback–Leibler rate `κ = ½⟨cβ,β⟩ + ∫ (Y ln Y − Y + 1) dν`, so that
/// `E[Z_t ln Z_t] = t κ`.
pub fn kl_rate(tr: &LevyTriplet, sol: &GirsanovSolution) -> f64 {
    0.5 * quadratic(tr, &sol.beta) + jump_sum(tr, sol, |y| y * y.ln() - y + 1.0)
}

/// `d/dt E[ln Z_t] = −½⟨cβ,β⟩ + ∫ (ln Y − Y + 1) dν`.
pub fn log_density_rate(tr: &LevyTriplet, sol: &GirsanovSolution) -> f64 {
    -0.5 * quadratic(tr, &sol.beta) + jump_sum(tr, sol, |y| y.ln() - y + 1.0)
}

/// Per-regime Hellinger (at the utility's `γ`) and KL rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceRates {
    pub hellinger: Vec<f64>,
    pub kl: Vec<f64>,
}

/// Everything the strategies need about the minimal measure of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSolution {
    pub utility: Utility,
    pub solutions: Vec<GirsanovSolution>,
    pub rates: DivergenceRates,
}

impl MeasureSolution {
    pub fn from_solutions(model: &SwitchingModel, utility: Utility, solutions: Vec<GirsanovSolution>) -> Self {
        let gamma = utility.gamma();
        let hellinger = model
            .regimes
            .iter()
            .zip(&solutions)
            .map(|(tr, s)| hellinger_rate(tr, s, gamma))
            .collect();
        let kl = model.regimes.iter().zip(&solutions).map(|(tr, s)| kl_rate(tr, s)).collect();
        Self { utility, solutions, rates: DivergenceRates { hellinger, kl } }
    }
}

/// Solves every regime of the model for one utility.
pub fn solve_model(model: &SwitchingModel, utility: Utility, tol: f64) -> Result<MeasureSolution, MmmError> {
    let gamma = utility.gamma();
    let solutions = model
        .regimes
        .iter()
        .enumerate()
        .map(|(j, tr)| solve_regime_with_gamma(tr, j, gamma, tol))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MeasureSolution::from_solutions(model, utility, solutions))
}

/// Exponential-of-occupation weights defining the chain part `ξ` of the
/// minimal density: `ξ = exp(Σ_j w_j T_j) / C`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiAlphaWeights {
    pub utility: Utility,
    pub weights: Vec<f64>,
    pub normalizer: f64,
}

impl XiAlphaWeights {
    pub fn evaluate(&self, occupation: &[f64]) -> f64 {
        let s: f64 = self.weights.iter().zip(occupation).map(|(w, t)| w * t).sum();
        s.exp() / self.normalizer
    }
}

/// Log: all weights zero. Power: `h_j/(γ−1)`. Exponential: `−κ_j`.
pub fn xi_weights(
    utility: &Utility,
    rates: &DivergenceRates,
    q: &DMatrix<f64>,
    i0: usize,
    horizon: f64,
) -> Result<XiAlphaWeights, NumericsError> {
    let weights: Vec<f64> = match *utility {
        Utility::Log => vec![0.0; rates.kl.len()],
        Utility::Power { .. } => {
            let g = utility.gamma();
            rates.hellinger.iter().map(|h| h / (g - 1.0)).collect()
        }
        Utility::Exponential => rates.kl.iter().map(|k| -k).collect(),
    };
    let normalizer = if weights.iter().all(|&w| w == 0.0) {
        1.0
    } else {
        occupation_laplace(q, i0, &weights, horizon)?
    };
    Ok(XiAlphaWeights { utility: *utility, weights, normalizer })
}
