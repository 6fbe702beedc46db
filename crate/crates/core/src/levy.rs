//! Per-regime Lévy triplets with finite-activity jumps, and the switching
//! market model built from them.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

/// One jump size and its conditional probability.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMark {
    pub atom: DVector<f64>,
    pub prob: f64,
}

/// Compound-Poisson jumps: `ν(dx) = intensity · Σ prob_i δ_{atom_i}(dx)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpSpec {
    pub intensity: f64,
    pub marks: Vec<JumpMark>,
}

impl JumpSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.intensity == 0.0 || self.marks.is_empty()
    }

    /// `(atom, ν({atom}))` pairs; empty when there are no jumps.
    pub fn weighted_atoms(&self) -> impl Iterator<Item = (&DVector<f64>, f64)> + '_ {
        let lambda = if self.marks.is_empty() { 0.0 } else { self.intensity };
        self.marks.iter().map(move |m| (&m.atom, lambda * m.prob))
    }
}

/// Characteristic triplet `(b, c, ν)` of one regime, with `c = σᵀσ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyTriplet {
    pub drift: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub jumps: JumpSpec,
}

fn small(x: &DVector<f64>) -> bool {
    x.norm() <= 1.0
}

impl LevyTriplet {
    pub fn new(drift: DVector<f64>, sigma: DMatrix<f64>, jumps: JumpSpec) -> Self {
        Self { drift, sigma, jumps }
    }

    /// Brownian motion with drift, no jumps.
    pub fn diffusion(drift: DVector<f64>, sigma: DMatrix<f64>) -> Self {
        Self::new(drift, sigma, JumpSpec::none())
    }

    pub fn scalar(drift: f64, sigma: f64, jumps: JumpSpec) -> Self {
        Self::new(
            DVector::from_element(1, drift),
            DMatrix::from_element(1, 1, sigma),
            jumps,
        )
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.sigma.transpose() * &self.sigma
    }

    pub fn has_jumps(&self) -> bool {
        !self.jumps.is_empty()
    }

    /// Lévy–Khinchin exponent `ψ(λ)` with truncation `1{‖x‖≤1}`.
    pub fn characteristic_exponent(&self, lambda: &DVector<f64>) -> Complex64 {
        let c = self.covariance();
        let mut psi = Complex64::new(-0.5 * lambda.dot(&(&c * lambda)), lambda.dot(&self.drift));
        for (x, w) in self.jumps.weighted_atoms() {
            let lx = lambda.dot(x);
            let trunc = if small(x) { lx } else { 0.0 };
            psi += w * (Complex64::new(0.0, lx).exp() - 1.0 - Complex64::new(0.0, trunc));
        }
        psi
    }

    /// Drift of the martingale decomposition `X_t = a t + M_t`:
    /// `a = b + ∫ x 1{‖x‖>1} ν(dx)`.
    pub fn drift_a(&self) -> DVector<f64> {
        let mut a = self.drift.clone();
        for (x, w) in self.jumps.weighted_atoms() {
            if !small(x) {
                a += x * w;
            }
        }
        a
    }

    /// Drift of the continuous part when every jump is simulated raw:
    /// `b − ∫ x 1{‖x‖≤1} ν(dx)`.
    pub fn continuous_drift(&self) -> DVector<f64> {
        let mut b = self.drift.clone();
        for (x, w) in self.jumps.weighted_atoms() {
            if small(x) {
                b -= x * w;
            }
        }
        b
    }
}

/// N regimes, the generator of the switching chain and the market inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingModel {
    pub regimes: Vec<LevyTriplet>,
    pub generator: DMatrix<f64>,
    /// Zero-based initial regime.
    pub initial_state: usize,
    pub horizon: f64,
    pub initial_prices: DVector<f64>,
    pub initial_capital: f64,
}

impl SwitchingModel {
    pub fn dim(&self) -> usize {
        self.regimes.first().map_or(0, LevyTriplet::dim)
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes.len()
    }

    /// The same market restricted to a single regime.
    pub fn single_regime(&self, regime: usize) -> SwitchingModel {
        SwitchingModel {
            regimes: vec![self.regimes[regime].clone()],
            generator: DMatrix::zeros(1, 1),
            initial_state: 0,
            ..self.clone()
        }
    }
}

/// A single model defect. Regime, row and asset indices are one-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelIssue {
    NoRegimes,
    DimensionMismatch { regime: usize, field: String, expected: usize, found: usize },
    NonFinite { field: String },
    CovarianceNotPsd { regime: usize },
    NegativeIntensity { regime: usize },
    NonPositiveProbability { regime: usize, mark: usize },
    ProbabilitiesDoNotSumToOne { regime: usize, sum: f64 },
    DuplicateAtom { regime: usize, mark: usize },
    AtomNotAboveMinusOne { regime: usize, mark: usize, component: usize, value: f64 },
    GeneratorShape { rows: usize, cols: usize, expected: usize },
    GeneratorNegativeRate { row: usize, col: usize, rate: f64 },
    GeneratorRowSum { row: usize, sum: f64 },
    InitialStateOutOfRange { state: usize, regimes: usize },
    NonPositiveHorizon { horizon: f64 },
    NonPositiveInitialPrice { asset: usize, price: f64 },
}

impl fmt::Display for ModelIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ModelIssue::*;
        match self {
            NoRegimes => write!(f, "model has no regimes"),
            DimensionMismatch { regime, field, expected, found } => {
                write!(f, "regime {regime}: {field} has dimension {found}, expected {expected}")
            }
            NonFinite { field } => write!(f, "{field} contains non-finite values"),
            CovarianceNotPsd { regime } => write!(f, "regime {regime}: covariance is not positive semidefinite"),
            NegativeIntensity { regime } => write!(f, "regime {regime}: negative jump intensity"),
            NonPositiveProbability { regime, mark } => {
                write!(f, "regime {regime}: mark {mark} has non-positive probability")
            }
            ProbabilitiesDoNotSumToOne { regime, sum } => {
                write!(f, "regime {regime}: mark probabilities sum to {sum}, expected 1")
            }
            DuplicateAtom { regime, mark } => write!(f, "regime {regime}: mark {mark} repeats an earlier atom"),
            AtomNotAboveMinusOne { regime, mark, component, value } => write!(
                f,
                "regime {regime}: mark {mark} component {component} is {value}; jumps must exceed -1 to keep prices positive"
            ),
            GeneratorShape { rows, cols, expected } => {
                write!(f, "generator is {rows}x{cols}, expected {expected}x{expected}")
            }
            GeneratorNegativeRate { row, col, rate } => {
                write!(f, "generator entry ({row},{col}) = {rate} is a negative off-diagonal rate")
            }
            GeneratorRowSum { row, sum } => write!(f, "generator row {row} sums to {sum}, expected 0"),
            InitialStateOutOfRange { state, regimes } => {
                write!(f, "initial state {state} is outside 1..={regimes}")
            }
            NonPositiveHorizon { horizon } => write!(f, "horizon {horizon} must be positive"),
            NonPositiveInitialPrice { asset, price } => {
                write!(f, "initial price of asset {asset} is {price}; prices must be positive")
            }
        }
    }
}

/// Result of [`validate_model`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDiagnostics {
    pub issues: Vec<ModelIssue>,
    /// Per regime: whether `c` is invertible, which the optimal strategies need.
    pub strategy_ready: Vec<bool>,
}

impl ModelDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

const SUM_TOL: f64 = 1e-10;

/// Checks every structural invariant of the model.
pub fn validate_model(m: &SwitchingModel) -> ModelDiagnostics {
    let mut issues = Vec::new();
    let mut strategy_ready = Vec::new();
    let n = m.regimes.len();
    if n == 0 {
        issues.push(ModelIssue::NoRegimes);
    }
    let d = m.dim();

    for (j, tr) in m.regimes.iter().enumerate() {
        let regime = j + 1;
        let mut shape_ok = true;
        if tr.drift.len() != d {
            issues.push(ModelIssue::DimensionMismatch { regime, field: "b".into(), expected: d, found: tr.drift.len() });
            shape_ok = false;
        }
        if tr.sigma.nrows() != d || tr.sigma.ncols() != d {
            issues.push(ModelIssue::DimensionMismatch {
                regime,
                field: "sigma".into(),
                expected: d,
                found: if tr.sigma.nrows() != d { tr.sigma.nrows() } else { tr.sigma.ncols() },
            });
            shape_ok = false;
        }
        if tr.drift.iter().chain(tr.sigma.iter()).any(|v| !v.is_finite()) {
            issues.push(ModelIssue::NonFinite { field: format!("regime {regime} b/sigma") });
            shape_ok = false;
        }
        let mut ready = false;
        if shape_ok {
            let c = tr.covariance();
            let eig = c.clone().symmetric_eigen();
            let scale = eig.eigenvalues.amax().max(1.0);
            if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
                issues.push(ModelIssue::CovarianceNotPsd { regime });
            }
            ready = d > 0 && eig.eigenvalues.iter().all(|&l| l > 1e-12 * scale);
        }
        strategy_ready.push(ready);

        let js = &tr.jumps;
        if !js.intensity.is_finite() {
            issues.push(ModelIssue::NonFinite { field: format!("regime {regime} jumps.intensity") });
        } else if js.intensity < 0.0 {
            issues.push(ModelIssue::NegativeIntensity { regime });
        }
        if !js.marks.is_empty() {
            let mut sum = 0.0;
            for (i, mk) in js.marks.iter().enumerate() {
                let mark = i + 1;
                if !mk.prob.is_finite() || mk.atom.iter().any(|v| !v.is_finite()) {
                    issues.push(ModelIssue::NonFinite { field: format!("regime {regime} mark {mark}") });
                    continue;
                }
                if mk.prob <= 0.0 {
                    issues.push(ModelIssue::NonPositiveProbability { regime, mark });
                }
                sum += mk.prob;
                if mk.atom.len() != d {
                    issues.push(ModelIssue::DimensionMismatch {
                        regime,
                        field: format!("mark {mark} x"),
                        expected: d,
                        found: mk.atom.len(),
                    });
                    continue;
                }
                if js.marks[..i].iter().any(|prev| prev.atom == mk.atom) {
                    issues.push(ModelIssue::DuplicateAtom { regime, mark });
                }
                for (k, &v) in mk.atom.iter().enumerate() {
                    if v <= -1.0 {
                        issues.push(ModelIssue::AtomNotAboveMinusOne { regime, mark, component: k + 1, value: v });
                    }
                }
            }
            if (sum - 1.0).abs() > SUM_TOL {
                issues.push(ModelIssue::ProbabilitiesDoNotSumToOne { regime, sum });
            }
        }
    }

    let q = &m.generator;
    if q.nrows() != n || q.ncols() != n {
        issues.push(ModelIssue::GeneratorShape { rows: q.nrows(), cols: q.ncols(), expected: n });
    } else if q.iter().any(|v| !v.is_finite()) {
        issues.push(ModelIssue::NonFinite { field: "generator".into() });
    } else {
        for r in 0..n {
            for c in 0..n {
                if r != c && q[(r, c)] < 0.0 {
                    issues.push(ModelIssue::GeneratorNegativeRate { row: r + 1, col: c + 1, rate: q[(r, c)] });
                }
            }
            let sum: f64 = q.row(r).sum();
            let scale = q.row(r).amax().max(1.0);
            if sum.abs() > SUM_TOL * scale {
                issues.push(ModelIssue::GeneratorRowSum { row: r + 1, sum });
            }
        }
    }
    if m.initial_state >= n {
        issues.push(ModelIssue::InitialStateOutOfRange { state: m.initial_state + 1, regimes: n });
    }
    if !(m.horizon > 0.0) || !m.horizon.is_finite() {
        issues.push(ModelIssue::NonPositiveHorizon { horizon: m.horizon });
    }
    if m.initial_prices.len() != d {
        issues.push(ModelIssue::DimensionMismatch {
            regime: 0,
            field: "S0".into(),
            expected: d,
            found: m.initial_prices.len(),
        });
    }
    for (k, &s) in m.initial_prices.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            issues.push(ModelIssue::NonPositiveInitialPrice { asset: k + 1, price: s });
        }
    }
    if !m.initial_capital.is_finite() {
        issues.push(ModelIssue::NonFinite { field: "x0".into() });
    }

    ModelDiagnostics { issues, strategy_ready }
}
