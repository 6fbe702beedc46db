use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use super::config::{Format, ScenarioConfig};
use super::{Cli, CliError, Command, CommonArgs};
use crate::chain::occupation_times;
use crate::levy::{validate_model, ModelDiagnostics, SwitchingModel};
use crate::mc::map_paths;
use crate::mmm::{hellinger_rate, kl_rate, solve_model, solve_regime_with_gamma, GirsanovSolution, MeasureSolution, Utility, DEFAULT_TOL};
use crate::pathsim::{simulate_switching_path, Dynamics, TimeGrid};
use crate::rng::PathStreams;
use crate::strategies::{monte_carlo, wealth_trajectory, Agent, AgentEstimate, McConfig, StrategyKind, ValueReport};
use crate::verify::{run_suite, CheckResult, CheckStatus};

/// Scaling factors of the suboptimal strategies scored by `value`.
pub const DOMINANCE_SCALES: [f64; 4] = [0.25, 0.5, 2.0, 4.0];

/// What a command produced. `failure` is set when outputs were written but
/// the command still has to exit non-zero (dirty model, no EMM, failed check).
#[derive(Debug)]
pub struct Report {
    pub summary: String,
    pub files: Vec<PathBuf>,
    pub failure: Option<CliError>,
}

pub fn run(cli: &Cli) -> Result<Report, CliError> {
    let ctx = Context::load(cli.command.common())?;
    match &cli.command {
        Command::Validate(_) => validate(&ctx),
        Command::Solve(_) => solve(&ctx),
        Command::Value(_) => value(&ctx),
        Command::Simulate(s) => simulate(&ctx, s.trace_paths),
        Command::Verify(v) => verify(&ctx, &v.override_beta),
    }
}

struct Context {
    model: SwitchingModel,
    utility: Utility,
    mc: McConfig,
    out: PathBuf,
    formats: Vec<Format>,
}

impl Context {
    fn load(args: &CommonArgs) -> Result<Self, CliError> {
        let config = ScenarioConfig::load(&args.config)?;
        let utility = config.utility()?;
        let model = config.model()?;
        let paths = args.paths.unwrap_or(config.simulation.paths);
        if paths == 0 {
            return Err(CliError::Parse("simulation.paths must be positive".into()));
        }
        if config.simulation.steps_per_unit_time == 0 {
            return Err(CliError::Parse("simulation.steps_per_unit_time must be positive".into()));
        }
        let grid = if model.horizon > 0.0 && model.horizon.is_finite() {
            TimeGrid::per_unit_time(model.horizon, config.simulation.steps_per_unit_time)
        } else {
            TimeGrid { horizon: model.horizon, steps: 1 }
        };
        Ok(Self {
            model,
            utility,
            mc: McConfig { paths, grid, seed: args.seed.unwrap_or(config.simulation.seed), threads: args.threads },
            out: args.out.clone().unwrap_or(config.output.directory),
            formats: config.output.formats,
        })
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn diagnostics(&self) -> ModelDiagnostics {
        validate_model(&self.model)
    }

    /// The model must be clean before anything is solved or simulated.
    fn require_clean(&self) -> Result<ModelDiagnostics, CliError> {
        let d = self.diagnostics();
        if d.is_clean() {
            Ok(d)
        } else {
            Err(CliError::Invalid(issue_lines(&d)))
        }
    }

    /// Clean, and every covariance invertible.
    fn require_strategy_ready(&self) -> Result<(), CliError> {
        let d = self.require_clean()?;
        match d.strategy_ready.iter().position(|ok| !ok) {
            Some(j) => Err(CliError::Invalid(format!(
                "regime {}: covariance is singular, optimal strategies are undefined",
                j + 1
            ))),
            None => Ok(()),
        }
    }

    fn solve(&self) -> Result<MeasureSolution, CliError> {
        solve_model(&self.model, self.utility, DEFAULT_TOL).map_err(|e| CliError::Numerical(e.to_string()))
    }

    fn agent(&self, measure: MeasureSolution, strategies: Vec<StrategyKind>) -> Result<Agent, CliError> {
        Agent::new(&self.model, measure, strategies).map_err(|e| CliError::Numerical(e.to_string()))
    }

    fn create_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::Io(format!("{}: {e}", self.out.display())))
    }

    fn write_csv(&self, files: &mut Vec<PathBuf>, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        if !self.wants(Format::Csv) {
            return Ok(());
        }
        self.create_out()?;
        let path = self.out.join(name);
        write_csv(&path, header, rows)?;
        files.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&self, files: &mut Vec<PathBuf>, name: &str, value: &T) -> Result<(), CliError> {
        if !self.wants(Format::Json) {
            return Ok(());
        }
        self.create_out()?;
        let path = self.out.join(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        files.push(path);
        Ok(())
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(fixed: &[&str]) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).collect()
}

fn indexed(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |i| format!("{prefix}_{i}"))
}

fn issue_lines(d: &ModelDiagnostics) -> String {
    d.issues.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n")
}

fn issue_kind<T: Serialize>(issue: &T) -> String {
    serde_json::to_value(issue)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(String::from))
        .unwrap_or_default()
}

fn validate(ctx: &Context) -> Result<Report, CliError> {
    let d = ctx.diagnostics();
    let mut files = Vec::new();
    let rows: Vec<Vec<String>> = d.issues.iter().map(|i| vec![issue_kind(i), i.to_string()]).collect();
    ctx.write_csv(&mut files, "diagnostics.csv", &header(&["issue", "message"]), &rows)?;
    ctx.write_json(&mut files, "diagnostics.json", &d)?;
    let m = &ctx.model;
    let (summary, failure) = if d.is_clean() {
        let mut s = format!("model is valid: {} regime(s), {} asset(s), horizon {}", m.n_regimes(), m.dim(), m.horizon);
        for (j, ok) in d.strategy_ready.iter().enumerate() {
            if !ok {
                let _ = write!(s, "\nnote: regime {} has a singular covariance; optimal strategies are unavailable", j + 1);
            }
        }
        (s, None)
    } else {
        let s = format!("model has {} issue(s):\n{}", d.issues.len(), issue_lines(&d));
        (s, Some(CliError::Invalid(issue_lines(&d))))
    };
    Ok(Report { summary, files, failure })
}

#[derive(Debug, Serialize)]
struct RegimeSolution {
    regime: usize,
    status: &'static str,
    beta: Option<Vec<f64>>,
    y: Option<Vec<f64>>,
    h: Option<f64>,
    kappa: Option<f64>,
    residual: Option<f64>,
    message: Option<String>,
}

#[derive(Debug, Serialize)]
struct SolveOutput {
    utility: Utility,
    gamma: f64,
    regimes: Vec<RegimeSolution>,
}

fn solve(ctx: &Context) -> Result<Report, CliError> {
    ctx.require_clean()?;
    let gamma = ctx.utility.gamma();
    let d = ctx.model.dim();
    let regimes: Vec<RegimeSolution> = ctx
        .model
        .regimes
        .iter()
        .enumerate()
        .map(|(j, tr)| match solve_regime_with_gamma(tr, j, gamma, DEFAULT_TOL) {
            Ok(s) => RegimeSolution {
                regime: j + 1,
                status: "ok",
                beta: Some(s.beta.iter().copied().collect()),
                h: Some(hellinger_rate(tr, &s, gamma)),
                kappa: Some(kl_rate(tr, &s)),
                residual: Some(s.residual),
                y: Some(s.multipliers),
                message: None,
            },
            Err(e) => RegimeSolution {
                regime: j + 1,
                status: "no-emm",
                beta: None,
                y: None,
                h: None,
                kappa: None,
                residual: None,
                message: Some(e.to_string()),
            },
        })
        .collect();

    let mut head = header(&["regime", "status"]);
    head.extend(indexed("beta", d));
    head.extend(header(&["y", "h", "kappa", "residual", "message"]));
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    let rows: Vec<Vec<String>> = regimes
        .iter()
        .map(|r| {
            let mut row = vec![r.regime.to_string(), r.status.to_string()];
            match &r.beta {
                Some(b) => row.extend(b.iter().map(|&v| num(v))),
                None => row.extend(std::iter::repeat_n(String::new(), d)),
            }
            row.push(r.y.as_ref().map(|ys| ys.iter().map(|&v| num(v)).collect::<Vec<_>>().join(";")).unwrap_or_default());
            row.extend([opt(r.h), opt(r.kappa), opt(r.residual), r.message.clone().unwrap_or_default()]);
            row
        })
        .collect();

    let mut files = Vec::new();
    ctx.write_csv(&mut files, "solution.csv", &head, &rows)?;
    let output = SolveOutput { utility: ctx.utility, gamma, regimes };
    ctx.write_json(&mut files, "solution.json", &output)?;

    let mut summary = format!("{} utility (gamma = {gamma}):", ctx.utility.name());
    for r in &output.regimes {
        match (&r.beta, r.kappa, r.h) {
            (Some(b), Some(k), Some(h)) => {
                let _ = write!(summary, "\n  regime {}: beta = {b:?}, h = {h:.6e}, kappa = {k:.6e}", r.regime);
            }
            _ => {
                let _ = write!(summary, "\n  regime {}: no EMM ({})", r.regime, r.message.as_deref().unwrap_or(""));
            }
        }
    }
    let failed: Vec<String> = output.regimes.iter().filter_map(|r| r.message.clone()).collect();
    let failure = (!failed.is_empty()).then(|| CliError::Numerical(failed.join("; ")));
    Ok(Report { summary, files, failure })
}

#[derive(Debug, Serialize)]
struct ValueOutput {
    reports: Vec<ValueReport>,
    estimate: AgentEstimate,
}

fn value(ctx: &Context) -> Result<Report, CliError> {
    ctx.require_strategy_ready()?;
    let measure = ctx.solve()?;
    let mut strategies = vec![StrategyKind::Optimal, StrategyKind::Zero];
    strategies.extend(DOMINANCE_SCALES.iter().map(|&rho| StrategyKind::ScaledOptimal { rho }));
    let agent = ctx.agent(measure, strategies)?;
    let est = monte_carlo(&ctx.model, std::slice::from_ref(&agent), &ctx.mc).remove(0);

    let head = header(&[
        "utility",
        "strategy",
        "theoretical_value",
        "lambda0",
        "mc_estimate",
        "mc_se",
        "paths",
        "steps",
        "breaches",
        "diff_vs_optimal",
        "diff_se",
        "dominated",
    ]);
    let rows: Vec<Vec<String>> = est
        .strategies
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (diff, diff_se, dominated) = if k == 0 {
                (String::new(), String::new(), String::new())
            } else {
                let d = s.versus_first;
                (num(d.mean), num(d.se), (d.mean < -2.0 * d.se).to_string())
            };
            vec![
                agent.utility.name().to_string(),
                s.label.clone(),
                num(agent.theory.value),
                num(agent.theory.lambda0),
                num(s.value.mean),
                num(s.value.se),
                est.paths.to_string(),
                est.steps.to_string(),
                s.breaches.to_string(),
                diff,
                diff_se,
                dominated,
            ]
        })
        .collect();

    let mut files = Vec::new();
    ctx.write_csv(&mut files, "value.csv", &head, &rows)?;
    let reports = est.strategies.iter().map(|s| ValueReport::new(&agent, s, est.paths)).collect();
    ctx.write_json(&mut files, "value.json", &ValueOutput { reports, estimate: est.clone() })?;

    let opt = &est.strategies[0];
    let mut summary = format!(
        "{} utility, {} paths x {} steps\n  theoretical value {:.8}\n  {}: {:.8} ± {:.2e}",
        agent.utility.name(),
        est.paths,
        est.steps,
        agent.theory.value,
        opt.label,
        opt.value.mean,
        opt.value.se
    );
    for s in &est.strategies[1..] {
        let _ = write!(
            summary,
            "\n  {}: {:.8} ± {:.2e} (vs optimal {:+.3e} ± {:.2e})",
            s.label, s.value.mean, s.value.se, s.versus_first.mean, s.versus_first.se
        );
    }
    Ok(Report { summary, files, failure: None })
}

struct SimulatedPath {
    terminal: Vec<String>,
    trace: Vec<Vec<String>>,
    s_t: Vec<f64>,
    v_t: f64,
}

fn simulate(ctx: &Context, trace_paths: usize) -> Result<Report, CliError> {
    ctx.require_strategy_ready()?;
    let measure = ctx.solve()?;
    let agent = ctx.agent(measure, vec![StrategyKind::Optimal])?;
    let model = &ctx.model;
    let (d, n) = (model.dim(), model.n_regimes());
    let dynamics = Dynamics::physical(model);
    let cfg = ctx.mc;
    let sims = map_paths(cfg.paths, cfg.threads, |p| {
        let path = simulate_switching_path(&dynamics, &cfg.grid, &PathStreams::new(cfg.seed, p));
        let (z, v) = wealth_trajectory(model, &agent, &StrategyKind::Optimal, &path);
        let occ = occupation_times(&path.chain, n);
        let z_t = *z.last().unwrap_or(&1.0);
        let v_t = *v.last().unwrap_or(&model.initial_capital);
        let m_last = path.n_intervals();
        let mut terminal = vec![p.to_string(), (path.chain.state_at(model.horizon) + 1).to_string()];
        terminal.extend(path.terminal_x().iter().map(|&x| num(x)));
        terminal.extend(path.terminal_s().iter().map(|&x| num(x)));
        terminal.extend([
            num(z_t),
            num(agent.xi.evaluate(&occ) * z_t),
            num(v_t),
            num(agent.dual_terminal_wealth(z_t, &occ)),
            path.chain.n_jumps().to_string(),
            path.jumps.len().to_string(),
        ]);
        let trace = if (p as usize) < trace_paths {
            (0..=m_last)
                .map(|m| {
                    let regime = path.chain.state_at(path.times[m]);
                    let mut row = vec![p.to_string(), num(path.times[m]), (regime + 1).to_string()];
                    row.extend(path.x_at(m).iter().map(|&x| num(x)));
                    row.extend(path.s_at(m).iter().map(|&x| num(x)));
                    row.extend([num(z[m]), num(v[m])]);
                    row
                })
                .collect()
        } else {
            Vec::new()
        };
        SimulatedPath { terminal, trace, s_t: path.terminal_s().to_vec(), v_t }
    });

    let mut head = header(&["path", "regime"]);
    head.extend(indexed("x", d));
    head.extend(indexed("s", d));
    head.extend(header(&["z_alpha", "z_star", "v", "v_dual", "regime_switches", "price_jumps"]));
    let terminal: Vec<Vec<String>> = sims.iter().map(|s| s.terminal.clone()).collect();
    let mut trace_head = header(&["path", "t", "regime"]);
    trace_head.extend(indexed("x", d));
    trace_head.extend(indexed("s", d));
    trace_head.extend(header(&["z_alpha", "v"]));
    let trace: Vec<Vec<String>> = sims.iter().flat_map(|s| s.trace.iter().cloned()).collect();

    let mut files = Vec::new();
    ctx.write_csv(&mut files, "terminal.csv", &head, &terminal)?;
    ctx.write_csv(&mut files, "trace.csv", &trace_head, &trace)?;

    let mean_s: Vec<f64> = (0..d).map(|i| sims.iter().map(|s| s.s_t[i]).sum::<f64>() / sims.len() as f64).collect();
    let mean_v = sims.iter().map(|s| s.v_t).sum::<f64>() / sims.len() as f64;

    #[derive(Serialize)]
    struct SimulateOutput {
        utility: Utility,
        strategy: String,
        paths: usize,
        steps: usize,
        seed: u64,
        mean_terminal_prices: Vec<f64>,
        mean_terminal_wealth: f64,
    }
    let out = SimulateOutput {
        utility: agent.utility,
        strategy: StrategyKind::Optimal.label(&agent.utility),
        paths: cfg.paths,
        steps: cfg.grid.steps,
        seed: cfg.seed,
        mean_terminal_prices: mean_s.clone(),
        mean_terminal_wealth: mean_v,
    };
    ctx.write_json(&mut files, "simulate.json", &out)?;
    let summary = format!(
        "simulated {} paths x {} steps; mean S_T = {:?}, mean V_T ({}) = {:.6}",
        cfg.paths, cfg.grid.steps, mean_s, out.strategy, mean_v
    );
    Ok(Report { summary, files, failure: None })
}

/// Replaces solved `β`s. Overrides referring to the same regime apply in order.
fn apply_overrides(model: &SwitchingModel, measure: MeasureSolution, overrides: &[(usize, Vec<f64>)]) -> Result<MeasureSolution, CliError> {
    if overrides.is_empty() {
        return Ok(measure);
    }
    let gamma = measure.utility.gamma();
    let mut solutions: Vec<GirsanovSolution> = measure.solutions;
    for (j, beta) in overrides {
        let Some(tr) = model.regimes.get(j - 1) else {
            return Err(CliError::Parse(format!("--override-beta: regime {j} does not exist (model has {})", model.n_regimes())));
        };
        if beta.len() != model.dim() {
            return Err(CliError::Parse(format!("--override-beta: regime {j} needs {} component(s), got {}", model.dim(), beta.len())));
        }
        solutions[j - 1] = GirsanovSolution::with_beta(tr, j - 1, gamma, DVector::from_vec(beta.clone()))
            .ok_or_else(|| CliError::Numerical(format!("--override-beta: regime {j}: jump multipliers are not positive")))?;
    }
    Ok(MeasureSolution::from_solutions(model, measure.utility, solutions))
}

fn verify(ctx: &Context, overrides: &[(usize, Vec<f64>)]) -> Result<Report, CliError> {
    ctx.require_strategy_ready()?;
    let measure = apply_overrides(&ctx.model, ctx.solve()?, overrides)?;
    let checks: Vec<CheckResult> = run_suite(&ctx.model, &measure, &ctx.mc).map_err(|e| CliError::Numerical(e.to_string()))?;

    let head = header(&["check", "index", "statistic", "threshold", "status", "detail"]);
    let status = |s: CheckStatus| match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Warn => "warn",
        CheckStatus::Fail => "fail",
    };
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.check.clone(),
                c.index.to_string(),
                num(c.statistic),
                num(c.threshold),
                status(c.status).to_string(),
                c.detail.clone(),
            ]
        })
        .collect();
    let mut files = Vec::new();
    ctx.write_csv(&mut files, "verify.csv", &head, &rows)?;
    ctx.write_json(&mut files, "verify.json", &checks)?;

    let mut summary = format!("{} utility, {} paths x {} steps", ctx.utility.name(), ctx.mc.paths, ctx.mc.grid.steps);
    for c in &checks {
        let at = if c.index == 0 { String::new() } else { format!("[{}]", c.index) };
        let _ = write!(summary, "\n  {:<5} {}{}: {}", status(c.status).to_uppercase(), c.check, at, c.detail);
    }
    let failed = checks.iter().filter(|c| c.status == CheckStatus::Fail).count();
    let failure = (failed > 0).then_some(CliError::Verification(failed));
    Ok(Report { summary, files, failure })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_have_seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-1.25), "-1.2500000000000000e0");
        let x = 0.1f64 + 0.2;
        assert_eq!(num(x).parse::<f64>().unwrap(), x);
    }
}
