//! Optimal HARA strategies, their theoretical values and Monte Carlo
//! estimates of the expected utility they achieve.
//!
//! Holdings are expressed through the monetary amount `φ^k S^k_{t−}` held in
//! each asset:
//!
//! * log: `−x0 β / Z_{t−}(α)`
//! * power: `x0 (γ−1) Z_{t−}(α)^{γ−1} β exp(Σ_j h_j ∫_0^t 1{α_s = j} ds)`
//! * exponential: `−β`
//!
//! For log and power this is a constant fraction of the wealth the strategy
//! would have in continuous time (`−β` and `(γ−1)β` respectively), so the
//! wealth along a path is `x0/Z_t(α)` and `x0 Z_t(α)^{γ−1} e^{Σ h_j T_j(t)}`.

use serde::Serialize;

use crate::chain::expected_occupation;
use crate::levy::SwitchingModel;
use crate::mc::{map_paths, Estimate};
use crate::mmm::{log_density_rate, xi_weights, MeasureSolution, Utility, XiAlphaWeights};
use crate::numerics::NumericsError;
use crate::pathsim::{simulate_switching_path, DensityCoefficients, Dynamics, SwitchingPath, TimeGrid};
use crate::rng::PathStreams;

/// Which holdings to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyKind {
    /// The utility's optimal (asymptotically optimal for exponential) strategy.
    Optimal,
    /// Fixed fractions of current wealth per asset.
    ConstantProportion { pi: Vec<f64> },
    /// The optimal fraction (log, power) or amount (exponential) times `rho`,
    /// applied to the strategy's own wealth.
    ScaledOptimal { rho: f64 },
    Zero,
}

impl StrategyKind {
    pub fn label(&self, u: &Utility) -> String {
        match self {
            StrategyKind::Optimal if matches!(u, Utility::Exponential) => "asymptotically-optimal-exponential".into(),
            StrategyKind::Optimal => format!("optimal-{}", u.name()),
            StrategyKind::ConstantProportion { pi } => {
                let parts: Vec<String> = pi.iter().map(|p| p.to_string()).collect();
                format!("constant-proportion({})", parts.join(";"))
            }
            StrategyKind::ScaledOptimal { rho } => format!("scaled-optimal({rho})"),
            StrategyKind::Zero => "zero".into(),
        }
    }
}

/// What a strategy may look at before trading on `(t_m, t_{m+1}]`.
#[derive(Debug, Clone, Copy)]
pub struct MarketState<'a> {
    pub regime: usize,
    pub prices: &'a [f64],
    /// `Z_{t−}(α)`, the density without the chain factor.
    pub density: f64,
    pub wealth: f64,
    /// Time spent in each regime so far.
    pub occupation: &'a [f64],
}

/// Monetary amounts `φ^k S^k` of the optimal strategy.
pub fn optimal_amounts(u: &Utility, measure: &MeasureSolution, x0: f64, state: &MarketState) -> Vec<f64> {
    let mut out = vec![0.0; state.prices.len()];
    amounts_into(&StrategyKind::Optimal, u, measure, x0, state, &mut out);
    out
}

/// Monetary amounts of any strategy, written into `out`.
pub fn amounts_into(kind: &StrategyKind, u: &Utility, measure: &MeasureSolution, x0: f64, state: &MarketState, out: &mut [f64]) {
    let beta = &measure.solutions[state.regime].beta;
    let g = u.gamma();
    match kind {
        StrategyKind::Optimal => {
            let scale = match u {
                Utility::Log => -x0 / state.density,
                Utility::Power { .. } => {
                    let clock: f64 = measure.rates.hellinger.iter().zip(state.occupation).map(|(h, t)| h * t).sum();
                    x0 * (g - 1.0) * state.density.powf(g - 1.0) * clock.exp()
                }
                Utility::Exponential => -1.0,
            };
            for (o, b) in out.iter_mut().zip(beta.iter()) {
                *o = scale * b;
            }
        }
        StrategyKind::ScaledOptimal { rho } => {
            // Optimal fraction of wealth (log, power) or amount (exponential).
            let scale = rho
                * match u {
                    Utility::Log => -state.wealth,
                    Utility::Power { .. } => (g - 1.0) * state.wealth,
                    Utility::Exponential => -1.0,
                };
            for (o, b) in out.iter_mut().zip(beta.iter()) {
                *o = scale * b;
            }
        }
        StrategyKind::ConstantProportion { pi } => {
            for (o, p) in out.iter_mut().zip(pi) {
                *o = p * state.wealth;
            }
        }
        StrategyKind::Zero => out.fill(0.0),
    }
}

/// Share holdings for one trading interval.
pub fn positions(kind: &StrategyKind, u: &Utility, measure: &MeasureSolution, x0: f64, state: &MarketState) -> Vec<f64> {
    let mut out = vec![0.0; state.prices.len()];
    amounts_into(kind, u, measure, x0, state, &mut out);
    out.iter().zip(state.prices).map(|(a, s)| a / s).collect()
}

/// Maximal expected utility and the multiplier `λ0` with `−f'(λ0 Z*_T)` the
/// optimal terminal wealth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoreticalValue {
    pub value: f64,
    pub lambda0: f64,
}

/// * log: `ln x0 − E ln Z*_T`, `λ0 = 1/x0`
/// * power: `(x0^p/p)·C`, `λ0 = x0^{1/(γ−1)}·C`, `C = E exp(Σ h_j T_j/(γ−1))`
/// * exponential: `1 − e^{−x0}·C`, `λ0 = e^{−x0}·C`, `C = E exp(−Σ κ_j T_j)`
pub fn theoretical_value(
    model: &SwitchingModel,
    measure: &MeasureSolution,
    xi: &XiAlphaWeights,
) -> Result<TheoreticalValue, NumericsError> {
    let x0 = model.initial_capital;
    Ok(match measure.utility {
        Utility::Log => {
            let occ = expected_occupation(&model.generator, model.initial_state, model.horizon)?;
            let e_ln_z: f64 = model
                .regimes
                .iter()
                .zip(&measure.solutions)
                .zip(&occ)
                .map(|((tr, s), t)| t * log_density_rate(tr, s))
                .sum();
            TheoreticalValue { value: x0.ln() - e_ln_z, lambda0: 1.0 / x0 }
        }
        Utility::Power { p } => {
            let g = measure.utility.gamma();
            TheoreticalValue { value: x0.powf(p) / p * xi.normalizer, lambda0: x0.powf(1.0 / (g - 1.0)) * xi.normalizer }
        }
        Utility::Exponential => {
            let e = (-x0).exp();
            TheoreticalValue { value: 1.0 - e * xi.normalizer, lambda0: e * xi.normalizer }
        }
    })
}

/// A utility together with everything needed to trade and score it.
#[derive(Debug, Clone)]
pub struct Agent {
    pub utility: Utility,
    pub measure: MeasureSolution,
    pub xi: XiAlphaWeights,
    pub theory: TheoreticalValue,
    pub strategies: Vec<StrategyKind>,
    coefficients: DensityCoefficients,
}

impl Agent {
    pub fn new(model: &SwitchingModel, measure: MeasureSolution, strategies: Vec<StrategyKind>) -> Result<Self, NumericsError> {
        let xi = xi_weights(&measure.utility, &measure.rates, &model.generator, model.initial_state, model.horizon)?;
        let theory = theoretical_value(model, &measure, &xi)?;
        let coefficients = DensityCoefficients::new(model, &measure.solutions);
        Ok(Self { utility: measure.utility, measure, xi, theory, strategies, coefficients })
    }

    /// `−f'(λ0 Z*_T)`, the terminal wealth of the dual problem.
    pub fn dual_terminal_wealth(&self, z_alpha: f64, occupation: &[f64]) -> f64 {
        let z_star = self.xi.evaluate(occupation) * z_alpha;
        self.utility.inverse_marginal(self.theory.lambda0 * z_star)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub paths: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    pub threads: Option<usize>,
}

/// Per-path results for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PathScore {
    pub terminal_wealth: Vec<f64>,
    pub utilities: Vec<f64>,
    pub breached: Vec<bool>,
    pub dual_wealth: f64,
    pub dual_utility: f64,
    /// `Z_T(α)`.
    pub density: f64,
}

/// Trades every strategy of `agent` along one path.
pub fn score_path(model: &SwitchingModel, agent: &Agent, path: &SwitchingPath) -> PathScore {
    let d = path.dim;
    let n_strat = agent.strategies.len();
    let x0 = model.initial_capital;
    let u = agent.utility;
    let mut wealth = vec![x0; n_strat];
    let mut breached = vec![false; n_strat];
    let mut occupation = vec![0.0; model.n_regimes()];
    let mut log_z = 0.0f64;
    let mut amounts = vec![0.0; d];
    for m in 0..path.n_intervals() {
        let s0 = path.s_at(m);
        let s1 = path.s_at(m + 1);
        let density = log_z.exp();
        for (k, kind) in agent.strategies.iter().enumerate() {
            if matches!(kind, StrategyKind::Zero) {
                continue;
            }
            let state = MarketState { regime: path.regimes[m], prices: s0, density, wealth: wealth[k], occupation: &occupation };
            amounts_into(kind, &u, &agent.measure, x0, &state, &mut amounts);
            for i in 0..d {
                wealth[k] += amounts[i] * (s1[i] / s0[i] - 1.0);
            }
            if u.needs_positive_wealth() && wealth[k] <= 0.0 {
                breached[k] = true;
            }
        }
        log_z += agent.coefficients.log_increment(path, m);
        occupation[path.regimes[m]] += path.dt(m);
    }
    let density = log_z.exp();
    let dual_wealth = agent.dual_terminal_wealth(density, &occupation);
    PathScore {
        utilities: wealth.iter().map(|&v| u.eval(v)).collect(),
        terminal_wealth: wealth,
        breached,
        dual_wealth,
        dual_utility: u.eval(dual_wealth),
        density,
    }
}

/// `Z_t(α)` and the wealth of one strategy at every grid point of a path.
pub fn wealth_trajectory(model: &SwitchingModel, agent: &Agent, kind: &StrategyKind, path: &SwitchingPath) -> (Vec<f64>, Vec<f64>) {
    let d = path.dim;
    let x0 = model.initial_capital;
    let mut occupation = vec![0.0; model.n_regimes()];
    let mut amounts = vec![0.0; d];
    let mut log_z = 0.0f64;
    let mut v = x0;
    let mut z_path = vec![1.0];
    let mut v_path = vec![x0];
    for m in 0..path.n_intervals() {
        let (s0, s1) = (path.s_at(m), path.s_at(m + 1));
        let state = MarketState { regime: path.regimes[m], prices: s0, density: log_z.exp(), wealth: v, occupation: &occupation };
        amounts_into(kind, &agent.utility, &agent.measure, x0, &state, &mut amounts);
        for i in 0..d {
            v += amounts[i] * (s1[i] / s0[i] - 1.0);
        }
        log_z += agent.coefficients.log_increment(path, m);
        occupation[path.regimes[m]] += path.dt(m);
        z_path.push(log_z.exp());
        v_path.push(v);
    }
    (z_path, v_path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyEstimate {
    pub label: String,
    pub kind: StrategyKind,
    /// `E[u(V_T)]`.
    pub value: Estimate,
    /// `E[u(V_T) − u(V*_T)]` with `V*_T` the dual terminal wealth on the
    /// same path; isolates the cost of discrete rebalancing.
    pub gap_to_dual: Estimate,
    /// `E[u(V_T) − u(V^{(0)}_T)]` against the first strategy, paired.
    pub versus_first: Estimate,
    pub breaches: usize,
    /// `max |V_T − V*_T|` and its root mean square over paths.
    pub identity_max: f64,
    pub identity_rms: f64,
    /// `E[V_T Z_T(α)]`.
    pub wealth_times_density: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentEstimate {
    pub utility: Utility,
    pub theory: TheoreticalValue,
    /// `E[u(V*_T)]`, equal to the theoretical value up to Monte Carlo error.
    pub dual_value: Estimate,
    pub strategies: Vec<StrategyEstimate>,
    pub paths: usize,
    pub steps: usize,
}

fn summarize(agent: &Agent, scores: &[&PathScore], steps: usize) -> AgentEstimate {
    let strategies = agent
        .strategies
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let diffs = scores.iter().map(|s| s.terminal_wealth[k] - s.dual_wealth);
            let identity_max = diffs.clone().map(f64::abs).fold(0.0, f64::max);
            let identity_rms = (diffs.map(|e| e * e).sum::<f64>() / scores.len().max(1) as f64).sqrt();
            StrategyEstimate {
                label: kind.label(&agent.utility),
                kind: kind.clone(),
                value: Estimate::from_samples(scores.iter().map(|s| s.utilities[k])),
                gap_to_dual: Estimate::from_samples(scores.iter().map(|s| s.utilities[k] - s.dual_utility)),
                versus_first: Estimate::from_samples(scores.iter().map(|s| s.utilities[k] - s.utilities[0])),
                breaches: scores.iter().filter(|s| s.breached[k]).count(),
                identity_max,
                identity_rms,
                wealth_times_density: Estimate::from_samples(scores.iter().map(|s| s.terminal_wealth[k] * s.density)),
            }
        })
        .collect();
    AgentEstimate {
        utility: agent.utility,
        theory: agent.theory,
        dual_value: Estimate::from_samples(scores.iter().map(|s| s.dual_utility)),
        strategies,
        paths: scores.len(),
        steps,
    }
}

/// Simulates physical paths once and scores every agent on them with common
/// random numbers. Deterministic for a given seed, whatever the thread count.
pub fn monte_carlo(model: &SwitchingModel, agents: &[Agent], cfg: &McConfig) -> Vec<AgentEstimate> {
    let dynamics = Dynamics::physical(model);
    let scores: Vec<Vec<PathScore>> = map_paths(cfg.paths, cfg.threads, |p| {
        let path = simulate_switching_path(&dynamics, &cfg.grid, &PathStreams::new(cfg.seed, p));
        agents.iter().map(|a| score_path(model, a, &path)).collect()
    });
    agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let per_agent: Vec<&PathScore> = scores.iter().map(|s| &s[i]).collect();
            summarize(a, &per_agent, cfg.grid.steps)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeEcho {
    pub regime: usize,
    pub beta: Vec<f64>,
    pub h: f64,
    pub kappa: f64,
}

/// Theory next to the Monte Carlo estimate for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueReport {
    pub utility: Utility,
    pub strategy: String,
    pub theoretical_value: f64,
    pub lambda0: f64,
    pub mc_estimate: f64,
    pub mc_se: f64,
    pub paths: usize,
    pub breaches: usize,
    pub regimes: Vec<RegimeEcho>,
}

impl ValueReport {
    pub fn new(agent: &Agent, estimate: &StrategyEstimate, paths: usize) -> Self {
        let r = &agent.measure.rates;
        Self {
            utility: agent.utility,
            strategy: estimate.label.clone(),
            theoretical_value: agent.theory.value,
            lambda0: agent.theory.lambda0,
            mc_estimate: estimate.value.mean,
            mc_se: estimate.value.se,
            paths,
            breaches: estimate.breaches,
            regimes: agent
                .measure
                .solutions
                .iter()
                .enumerate()
                .map(|(j, s)| RegimeEcho { regime: j + 1, beta: s.beta.iter().copied().collect(), h: r.hellinger[j], kappa: r.kl[j] })
                .collect(),
        }
    }
}

/// Monte Carlo value of a single strategy.
pub fn monte_carlo_value(model: &SwitchingModel, measure: MeasureSolution, kind: StrategyKind, cfg: &McConfig) -> Result<ValueReport, NumericsError> {
    let agent = Agent::new(model, measure, vec![kind])?;
    let est = monte_carlo(model, std::slice::from_ref(&agent), cfg).remove(0);
    Ok(ValueReport::new(&agent, &est.strategies[0], cfg.paths))
}
