//! Path simulation of the switching process, its Doléans-Dade price, the
//! density of the minimal measure and self-financing wealth.
//!
//! Chain switches and compound-Poisson events are placed at their exact
//! times. The Brownian motion is sampled at those event times first and then
//! filled in on a dyadically refined uniform grid by Brownian bridges, level
//! by level, each level reading from its own random stream. A grid with `2M`
//! steps therefore contains the `M`-step path exactly, which makes grid
//! refinement comparisons pathwise.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use thiserror::Error;

use crate::chain::{simulate_chain, ChainPath};
use crate::levy::{LevyTriplet, SwitchingModel};
use crate::mmm::GirsanovSolution;
use crate::rng::{PathStreams, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("jump of size {size} in asset {asset} makes the price non-positive")]
    NonPositivePrice { asset: usize, size: f64 },
}

/// Simulation coefficients of one regime.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeDynamics {
    /// Drift of the continuous part, per unit time.
    pub drift: Vec<f64>,
    /// `σᵀ`, row-major `d × d`; continuous increments are `drift·Δt + σᵀΔW`.
    pub sigma_t: Vec<f64>,
    /// Diagonal of `c`.
    pub variance: Vec<f64>,
    /// Total jump intensity.
    pub jump_rate: f64,
    pub atoms: Vec<Vec<f64>>,
    mark_cdf: Vec<f64>,
}

impl RegimeDynamics {
    fn new(tr: &LevyTriplet, drift: DVector<f64>, atom_rates: Vec<f64>) -> Self {
        let d = tr.dim();
        let c = tr.covariance();
        let sigma_t = tr.sigma.transpose();
        let jump_rate: f64 = atom_rates.iter().sum();
        let mut acc = 0.0;
        let mark_cdf = atom_rates
            .iter()
            .map(|r| {
                acc += r / jump_rate;
                acc
            })
            .collect();
        Self {
            drift: drift.iter().copied().collect(),
            sigma_t: (0..d).flat_map(|i| (0..d).map(move |k| (i, k))).map(|(i, k)| sigma_t[(i, k)]).collect(),
            variance: (0..d).map(|k| c[(k, k)]).collect(),
            jump_rate: if jump_rate > 0.0 { jump_rate } else { 0.0 },
            atoms: tr.jumps.marks.iter().map(|m| m.atom.iter().copied().collect()).collect(),
            mark_cdf,
        }
    }

    fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.mark_cdf.iter().position(|&c| u < c).unwrap_or(self.atoms.len() - 1)
    }
}

/// Everything needed to simulate paths of a model under one measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub dim: usize,
    pub regimes: Vec<RegimeDynamics>,
    pub generator: nalgebra::DMatrix<f64>,
    pub initial_state: usize,
    pub horizon: f64,
    pub initial_prices: Vec<f64>,
}

impl Dynamics {
    /// Dynamics under the physical measure.
    pub fn physical(model: &SwitchingModel) -> Self {
        let regimes = model
            .regimes
            .iter()
            .map(|tr| RegimeDynamics::new(tr, tr.continuous_drift(), tr.jumps.weighted_atoms().map(|(_, w)| w).collect()))
            .collect();
        Self::with_regimes(model, regimes)
    }

    /// Dynamics under the measure given by per-regime Girsanov parameters:
    /// continuous drift shifted by `cβ`, atom intensities scaled by `Y`.
    /// The chain keeps its physical law, which leaves conditional
    /// expectations of prices given the chain unchanged.
    pub fn martingale(model: &SwitchingModel, solutions: &[GirsanovSolution]) -> Self {
        let regimes = model
            .regimes
            .iter()
            .zip(solutions)
            .map(|(tr, sol)| {
                let drift = tr.continuous_drift() + tr.covariance() * &sol.beta;
                let rates = tr.jumps.weighted_atoms().zip(&sol.multipliers).map(|((_, w), y)| w * y).collect();
                RegimeDynamics::new(tr, drift, rates)
            })
            .collect();
        Self::with_regimes(model, regimes)
    }

    fn with_regimes(model: &SwitchingModel, regimes: Vec<RegimeDynamics>) -> Self {
        Self {
            dim: model.dim(),
            regimes,
            generator: model.generator.clone(),
            initial_state: model.initial_state,
            horizon: model.horizon,
            initial_prices: model.initial_prices.iter().copied().collect(),
        }
    }
}

/// The uniform part of the simulation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Self {
        Self { horizon, steps: steps.max(1) }
    }

    pub fn per_unit_time(horizon: f64, steps_per_unit_time: usize) -> Self {
        Self::new(horizon, (steps_per_unit_time as f64 * horizon).round() as usize)
    }

    /// Same grid with twice as many steps; contains every point of `self`.
    pub fn refined(&self) -> Self {
        Self::new(self.horizon, 2 * self.steps)
    }

    /// `k·T/M`. Doubling both `k` and `M` gives the identical float.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.horizon / self.steps as f64
    }
}

/// A compound-Poisson event on a path.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub time: f64,
    pub regime: usize,
    pub atom: usize,
    /// Index of the grid point at which the jump is included.
    pub point: usize,
}

/// One simulated trajectory. Vector-valued quantities are stored flat,
/// `dim` entries per grid point or interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingPath {
    pub dim: usize,
    pub chain: ChainPath,
    /// Refined grid: uniform points, chain switches and jump times.
    pub times: Vec<f64>,
    /// Regime on `(t_m, t_{m+1}]`.
    pub regimes: Vec<usize>,
    /// Brownian increments per interval.
    pub dw: Vec<f64>,
    /// Continuous part of the X increment per interval.
    pub dx_cont: Vec<f64>,
    /// Atom jumping at `t_{m+1}`, if any.
    pub jump_atom: Vec<Option<usize>>,
    pub jumps: Vec<JumpRecord>,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
}

impl SwitchingPath {
    pub fn n_intervals(&self) -> usize {
        self.regimes.len()
    }

    pub fn dt(&self, m: usize) -> f64 {
        self.times[m + 1] - self.times[m]
    }

    pub fn x_at(&self, m: usize) -> &[f64] {
        &self.x[m * self.dim..(m + 1) * self.dim]
    }

    pub fn s_at(&self, m: usize) -> &[f64] {
        &self.s[m * self.dim..(m + 1) * self.dim]
    }

    pub fn dw_at(&self, m: usize) -> &[f64] {
        &self.dw[m * self.dim..(m + 1) * self.dim]
    }

    pub fn terminal_x(&self) -> &[f64] {
        self.x_at(self.times.len() - 1)
    }

    pub fn terminal_s(&self) -> &[f64] {
        self.s_at(self.times.len() - 1)
    }
}

fn normals<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for z in out {
        *z = StandardNormal.sample(rng);
    }
}

struct Event {
    time: f64,
    jump: Option<(usize, usize)>,
}

fn chain_and_events(dynamics: &Dynamics, streams: &PathStreams) -> (ChainPath, Vec<Event>) {
    let chain = simulate_chain(
        &dynamics.generator,
        dynamics.initial_state,
        dynamics.horizon,
        &mut streams.get(Purpose::Chain, 0),
    );
    let mut rng = streams.get(Purpose::Jumps, 0);
    let mut events = Vec::new();
    for (state, start, end) in chain.sojourns() {
        if start > 0.0 {
            events.push(Event { time: start, jump: None });
        }
        let reg = &dynamics.regimes[state];
        if reg.jump_rate <= 0.0 {
            continue;
        }
        let mut t = start;
        loop {
            let e: f64 = Exp1.sample(&mut rng);
            t += e / reg.jump_rate;
            if t >= end {
                break;
            }
            events.push(Event { time: t, jump: Some((state, reg.sample_atom(&mut rng))) });
        }
    }
    (chain, events)
}

/// Brownian values at event times, then at uniform grid points by
/// level-wise bridging. Returns the grid values, `(steps + 1) · d` entries.
fn brownian_on_grid(
    d: usize,
    grid: &TimeGrid,
    events: &[Event],
    event_w: &[f64],
    streams: &PathStreams,
) -> Vec<f64> {
    let m = grid.steps;
    let levels = m.trailing_zeros() as usize;
    let m_odd = m >> levels;
    let mut w = vec![0.0; (m + 1) * d];
    let mut z = vec![0.0; d];

    let fill = |w: &mut Vec<f64>, k: usize, left_k: usize, right_k: Option<usize>, z: &[f64]| {
        let t = grid.time(k);
        let mut lt = grid.time(left_k);
        let mut lw = left_k * d;
        let mut left_from_event = false;
        let first_after = events.partition_point(|e| e.time <= t);
        if first_after > 0 && events[first_after - 1].time > lt {
            lt = events[first_after - 1].time;
            lw = (first_after - 1) * d;
            left_from_event = true;
        }
        let mut right: Option<(f64, usize, bool)> = right_k.map(|rk| (grid.time(rk), rk * d, false));
        if let Some(e) = events.get(first_after) {
            if right.is_none_or(|(rt, _, _)| e.time < rt) {
                right = Some((e.time, first_after * d, true));
            }
        }
        for i in 0..d {
            let wl = if left_from_event { event_w[lw + i] } else { w[lw + i] };
            let v = match right {
                Some((rt, rw, from_event)) => {
                    let wr = if from_event { event_w[rw + i] } else { w[rw + i] };
                    let span = rt - lt;
                    let mean = wl + (t - lt) / span * (wr - wl);
                    let var = ((t - lt) * (rt - t) / span).max(0.0);
                    mean + var.sqrt() * z[i]
                }
                None => wl + (t - lt).max(0.0).sqrt() * z[i],
            };
            w[k * d + i] = v;
        }
    };

    let coarse = 1usize << levels;
    let mut rng = streams.get(Purpose::Bridge, 0);
    for j in 1..=m_odd {
        normals(&mut rng, &mut z);
        fill(&mut w, j * coarse, (j - 1) * coarse, None, &z);
    }
    for level in 1..=levels {
        let step = 1usize << (levels - level);
        let mut rng = streams.get(Purpose::Bridge, level as u64);
        let mut k = step;
        while k < m {
            normals(&mut rng, &mut z);
            fill(&mut w, k, k - step, Some(k + step), &z);
            k += 2 * step;
        }
    }
    w
}

/// Simulates `(α, X, S)` on the refined grid.
pub fn simulate_switching_path(dynamics: &Dynamics, grid: &TimeGrid, streams: &PathStreams) -> SwitchingPath {
    let d = dynamics.dim;
    let (chain, events) = chain_and_events(dynamics, streams);

    let mut event_w = vec![0.0; events.len() * d];
    {
        let mut rng = streams.get(Purpose::EventNoise, 0);
        let mut z = vec![0.0; d];
        let mut prev_t = 0.0;
        for (n, e) in events.iter().enumerate() {
            normals(&mut rng, &mut z);
            let sd = (e.time - prev_t).sqrt();
            for i in 0..d {
                let prev = if n == 0 { 0.0 } else { event_w[(n - 1) * d + i] };
                event_w[n * d + i] = prev + sd * z[i];
            }
            prev_t = e.time;
        }
    }
    let grid_w = brownian_on_grid(d, grid, &events, &event_w, streams);

    // Merge uniform points and events.
    let n_points = grid.steps + 1 + events.len();
    let mut times = Vec::with_capacity(n_points);
    let mut w = Vec::with_capacity(n_points * d);
    let mut point_jump: Vec<Option<(usize, usize)>> = Vec::with_capacity(n_points);
    let (mut gi, mut ei) = (0, 0);
    while gi <= grid.steps || ei < events.len() {
        let take_event = ei < events.len() && (gi > grid.steps || events[ei].time < grid.time(gi));
        if take_event {
            times.push(events[ei].time);
            w.extend_from_slice(&event_w[ei * d..(ei + 1) * d]);
            point_jump.push(events[ei].jump);
            ei += 1;
        } else {
            times.push(grid.time(gi));
            w.extend_from_slice(&grid_w[gi * d..(gi + 1) * d]);
            point_jump.push(None);
            gi += 1;
        }
    }

    let n = times.len() - 1;
    let mut regimes = Vec::with_capacity(n);
    let mut dw = vec![0.0; n * d];
    let mut dx_cont = vec![0.0; n * d];
    let mut jump_atom = vec![None; n];
    let mut jumps = Vec::new();
    let mut x = vec![0.0; (n + 1) * d];
    let mut k_state = 0;
    for m in 0..n {
        while k_state < chain.jump_times.len() && chain.jump_times[k_state] <= times[m] {
            k_state += 1;
        }
        let j = chain.states[k_state];
        regimes.push(j);
        let reg = &dynamics.regimes[j];
        let dt = times[m + 1] - times[m];
        for i in 0..d {
            dw[m * d + i] = w[(m + 1) * d + i] - w[m * d + i];
        }
        for i in 0..d {
            let mut inc = reg.drift[i] * dt;
            for k in 0..d {
                inc += reg.sigma_t[i * d + k] * dw[m * d + k];
            }
            dx_cont[m * d + i] = inc;
            x[(m + 1) * d + i] = x[m * d + i] + inc;
        }
        if let Some((regime, atom)) = point_jump[m + 1] {
            jump_atom[m] = Some(atom);
            jumps.push(JumpRecord { time: times[m + 1], regime, atom, point: m + 1 });
            for i in 0..d {
                x[(m + 1) * d + i] += dynamics.regimes[regime].atoms[atom][i];
            }
        }
    }

    let mut path = SwitchingPath { dim: d, chain, times, regimes, dw, dx_cont, jump_atom, jumps, x, s: Vec::new() };
    // Atom validity is a model invariant; a failure here is a programming error.
    path.s = stochastic_exponential(dynamics, &path).expect("validated jump atoms exceed -1");
    path
}

/// `S^k = S^k_0 · exp(X^{k,c} − ½ c_kk t) · ∏ (1 + ΔX^k)` along the grid.
pub fn stochastic_exponential(dynamics: &Dynamics, path: &SwitchingPath) -> Result<Vec<f64>, PathError> {
    let d = path.dim;
    let n = path.n_intervals();
    let mut s = vec![0.0; (n + 1) * d];
    s[..d].copy_from_slice(&dynamics.initial_prices);
    for m in 0..n {
        let reg = &dynamics.regimes[path.regimes[m]];
        let dt = path.dt(m);
        for i in 0..d {
            let mut f = (path.dx_cont[m * d + i] - 0.5 * reg.variance[i] * dt).exp();
            if let Some(atom) = path.jump_atom[m] {
                let size = reg.atoms[atom][i];
                if size <= -1.0 {
                    return Err(PathError::NonPositivePrice { asset: i + 1, size });
                }
                f *= 1.0 + size;
            }
            s[(m + 1) * d + i] = s[m * d + i] * f;
        }
    }
    Ok(s)
}

/// Per-regime coefficients of `ln Z` for a set of Girsanov parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCoefficients {
    /// `σβ`, so that `⟨β, σᵀΔW⟩ = ⟨σβ, ΔW⟩`.
    sigma_beta: Vec<Vec<f64>>,
    /// `−½⟨cβ,β⟩ − ∫ (Y − 1) dν`.
    rate: Vec<f64>,
    log_y: Vec<Vec<f64>>,
}

impl DensityCoefficients {
    pub fn new(model: &SwitchingModel, solutions: &[GirsanovSolution]) -> Self {
        let mut sigma_beta = Vec::new();
        let mut rate = Vec::new();
        let mut log_y = Vec::new();
        for (tr, sol) in model.regimes.iter().zip(solutions) {
            let sb = &tr.sigma * &sol.beta;
            let cb = tr.covariance() * &sol.beta;
            let comp: f64 = tr.jumps.weighted_atoms().zip(&sol.multipliers).map(|((_, w), y)| w * (y - 1.0)).sum();
            sigma_beta.push(sb.iter().copied().collect());
            rate.push(-0.5 * cb.dot(&sol.beta) - comp);
            log_y.push(sol.multipliers.iter().map(|y| y.ln()).collect());
        }
        Self { sigma_beta, rate, log_y }
    }

    /// `ln Z` increment over interval `m` of the path.
    pub fn log_increment(&self, path: &SwitchingPath, m: usize) -> f64 {
        let j = path.regimes[m];
        let mut inc = self.rate[j] * path.dt(m);
        for (sb, w) in self.sigma_beta[j].iter().zip(path.dw_at(m)) {
            inc += sb * w;
        }
        if let Some(atom) = path.jump_atom[m] {
            inc += self.log_y[j][atom];
        }
        inc
    }
}

/// `Z_t(α) = ∏_j Z^{(j)}` along the grid, `Z_0 = 1`.
pub fn density_process(path: &SwitchingPath, coefficients: &DensityCoefficients) -> Vec<f64> {
    let mut log_z = 0.0;
    let mut z = Vec::with_capacity(path.times.len());
    z.push(1.0);
    for m in 0..path.n_intervals() {
        log_z += coefficients.log_increment(path, m);
        z.push(log_z.exp());
    }
    z
}

/// Self-financing wealth along a path.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath {
    pub values: Vec<f64>,
    /// `min_t (V_t − x0)`, the lowest value of the gains process.
    pub floor: f64,
}

/// `V_{m+1} = V_m + Σ_k φ^k_m (S^k_{m+1} − S^k_m)` for share holdings `φ`
/// given per interval, `dim` entries each.
pub fn wealth_process(path: &SwitchingPath, x0: f64, positions: &[f64]) -> WealthPath {
    let d = path.dim;
    let mut values = Vec::with_capacity(path.times.len());
    let mut v = x0;
    let mut floor = 0.0f64;
    values.push(v);
    for m in 0..path.n_intervals() {
        let (s0, s1) = (path.s_at(m), path.s_at(m + 1));
        for k in 0..d {
            v += positions[m * d + k] * (s1[k] - s0[k]);
        }
        floor = floor.min(v - x0);
        values.push(v);
    }
    WealthPath { values, floor }
}

/// Samples `ln Z_t` of a single Lévy regime directly at time `t`.
pub fn sample_terminal_log_density<R: Rng + ?Sized>(tr: &LevyTriplet, sol: &GirsanovSolution, t: f64, rng: &mut R) -> f64 {
    let sb = &tr.sigma * &sol.beta;
    let cb = tr.covariance() * &sol.beta;
    let mut log_z = -0.5 * cb.dot(&sol.beta) * t;
    for v in sb.iter() {
        let z: f64 = StandardNormal.sample(rng);
        log_z += v * z * t.sqrt();
    }
    for ((_, w), y) in tr.jumps.weighted_atoms().zip(&sol.multipliers) {
        log_z -= w * (y - 1.0) * t;
        if w > 0.0 {
            let count: f64 = Poisson::new(w * t).expect("positive rate").sample(rng);
            log_z += count * y.ln();
        }
    }
    log_z
}
