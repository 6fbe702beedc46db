//! The switching chain: exact simulation, occupation times, and
//! occupation-time functionals through matrix exponentials.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::numerics::{mat_exp, NumericsError};

/// A piecewise-constant chain trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    /// `states[0]` is the initial state; `states[k]` holds on `[τ_k, τ_{k+1})`.
    pub states: Vec<usize>,
    /// Switch times `0 < τ_1 < τ_2 < … < horizon`.
    pub jump_times: Vec<f64>,
    pub horizon: f64,
}

impl ChainPath {
    pub fn constant(state: usize, horizon: f64) -> Self {
        Self { states: vec![state], jump_times: Vec::new(), horizon }
    }

    pub fn initial_state(&self) -> usize {
        self.states[0]
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Sojourns as `(state, start, end)`.
    pub fn sojourns(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.states.iter().enumerate().map(move |(k, &s)| {
            let start = if k == 0 { 0.0 } else { self.jump_times[k - 1] };
            let end = self.jump_times.get(k).copied().unwrap_or(self.horizon);
            (s, start, end)
        })
    }

    /// Right-continuous state at `t`.
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&tau| tau <= t);
        self.states[k]
    }
}

/// Exact event-driven simulation: exponential holding times with rate
/// `−Q_jj`, next state drawn proportionally to the off-diagonal rates.
/// Absorbing states (zero rows) are kept until the horizon.
pub fn simulate_chain<R: Rng + ?Sized>(q: &DMatrix<f64>, i0: usize, horizon: f64, rng: &mut R) -> ChainPath {
    let n = q.nrows();
    let mut states = vec![i0];
    let mut jump_times = Vec::new();
    let mut t = 0.0;
    let mut state = i0;
    loop {
        let rate = -q[(state, state)];
        if !(rate > 0.0) {
            break;
        }
        let hold: f64 = Exp1.sample(rng);
        t += hold / rate;
        if t >= horizon {
            break;
        }
        let mut u = rng.random::<f64>() * rate;
        let mut next = state;
        for k in 0..n {
            if k == state {
                continue;
            }
            let r = q[(state, k)];
            if r <= 0.0 {
                continue;
            }
            next = k;
            if u < r {
                break;
            }
            u -= r;
        }
        if next == state {
            break;
        }
        state = next;
        states.push(state);
        jump_times.push(t);
    }
    ChainPath { states, jump_times, horizon }
}

/// Time spent in each state, `T_j = ∫_0^T 1{α_{s−} = j} ds`.
pub fn occupation_times(path: &ChainPath, n_states: usize) -> Vec<f64> {
    let mut occ = vec![0.0; n_states];
    for (s, start, end) in path.sojourns() {
        occ[s] += end - start;
    }
    occ
}

/// `E[exp(Σ_j λ_j T_j)]` for a chain started in `i0`, via the Feynman–Kac
/// representation `1ᵀ e^{T(Q + diag λ)}` read off row `i0`.
pub fn occupation_laplace(q: &DMatrix<f64>, i0: usize, weights: &[f64], horizon: f64) -> Result<f64, NumericsError> {
    let mut m = q.clone();
    for (j, w) in weights.iter().enumerate() {
        m[(j, j)] += w;
    }
    let e = mat_exp(&m, horizon)?;
    Ok(e.row(i0).sum())
}

/// Complex-weight variant, used for characteristic functions of the switching process.
pub fn occupation_laplace_complex(
    q: &DMatrix<f64>,
    i0: usize,
    weights: &[Complex64],
    horizon: f64,
) -> Result<Complex64, NumericsError> {
    let mut m: DMatrix<Complex64> = q.map(|v| Complex64::new(v, 0.0));
    for (j, w) in weights.iter().enumerate() {
        m[(j, j)] += w;
    }
    let e = mat_exp(&m, horizon)?;
    Ok(e.row(i0).iter().sum())
}

/// `E[T_j]` for every state, from the block exponential
/// `exp(T [[Q, I], [0, 0]])`, whose upper-right block is `∫_0^T e^{Qs} ds`.
pub fn expected_occupation(q: &DMatrix<f64>, i0: usize, horizon: f64) -> Result<Vec<f64>, NumericsError> {
    let n = q.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(q);
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    let e = mat_exp(&aug, horizon)?;
    Ok((0..n).map(|j| e[(i0, n + j)]).collect())
}

/// Composite Simpson quadrature of `∫_0^T (e^{Qs})_{i0,·} ds` with 2000 panels.
/// Slow but independent of the block-exponential route.
pub fn expected_occupation_quadrature(q: &DMatrix<f64>, i0: usize, horizon: f64) -> Result<Vec<f64>, NumericsError> {
    const PANELS: usize = 2000;
    let n = q.nrows();
    let h = horizon / PANELS as f64;
    let step = mat_exp(q, h)?;
    let mut row = DVector::zeros(n);
    row[i0] = 1.0;
    let mut row = row.transpose();
    let mut acc = row.clone() * 1.0;
    for k in 1..=PANELS {
        row = &row * &step;
        let w = if k == PANELS { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += &row * w;
    }
    Ok(acc.iter().map(|v| v * h / 3.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sym(q: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-q, q, q, -q])
    }

    #[test]
    fn single_state_never_jumps() {
        let mut rng = stream(1, Purpose::Chain, 0, 0);
        let p = simulate_chain(&DMatrix::zeros(1, 1), 0, 5.0, &mut rng);
        assert_eq!(p.states, vec![0]);
        assert!(p.jump_times.is_empty());
        assert_eq!(occupation_times(&p, 1), vec![5.0]);
    }

    #[test]
    fn absorbing_state_is_never_left() {
        let q = DMatrix::from_row_slice(2, 2, &[-3.0, 3.0, 0.0, 0.0]);
        for path in 0..200 {
            let mut rng = stream(2, Purpose::Chain, path, 0);
            let p = simulate_chain(&q, 0, 10.0, &mut rng);
            assert!(p.states.len() <= 2);
            if p.states.len() == 2 {
                assert_eq!(p.states[1], 1);
            }
        }
    }

    #[test]
    fn occupation_of_fixed_path() {
        let p = ChainPath { states: vec![0, 1], jump_times: vec![0.3], horizon: 1.0 };
        let occ = occupation_times(&p, 2);
        assert_relative_eq!(occ[0], 0.3);
        assert_relative_eq!(occ[1], 0.7);
        assert_eq!(p.state_at(0.0), 0);
        assert_eq!(p.state_at(0.3), 1);
        assert_eq!(p.state_at(0.99), 1);
    }

    #[test]
    fn mean_jump_count_matches_rate() {
        let q = sym(1.0);
        let n = 10_000;
        let counts: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = stream(3, Purpose::Chain, i, 0);
                simulate_chain(&q, 0, 10.0, &mut rng).n_jumps() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 10.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn laplace_normalization_and_deterministic_case() {
        assert_relative_eq!(occupation_laplace(&sym(1.0), 0, &[0.0, 0.0], 1.0).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(
            occupation_laplace(&DMatrix::zeros(1, 1), 0, &[0.1], 2.0).unwrap(),
            0.2f64.exp(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn laplace_matches_monte_carlo() {
        let q = sym(1.0);
        let w = [0.5, -0.5];
        let exact = occupation_laplace(&q, 0, &w, 1.0).unwrap();
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = stream(4, Purpose::Chain, i, 0);
                let occ = occupation_times(&simulate_chain(&q, 0, 1.0, &mut rng), 2);
                (w[0] * occ[0] + w[1] * occ[1]).exp()
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn expected_occupation_single_state() {
        let e = expected_occupation(&DMatrix::zeros(1, 1), 0, 3.0).unwrap();
        assert_relative_eq!(e[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn expected_occupation_symmetric_closed_form() {
        for &(q, t) in &[(1.0, 1.0), (0.3, 2.5), (4.0, 0.7)] {
            let e = expected_occupation(&sym(q), 0, t).unwrap();
            let closed = t / 2.0 + (1.0 - (-2.0 * q * t).exp()) / (4.0 * q);
            assert_relative_eq!(e[0], closed, epsilon = 1e-12);
            assert_relative_eq!(e[0] + e[1], t, epsilon = 1e-12);
            let quad = expected_occupation_quadrature(&sym(q), 0, t).unwrap();
            assert_relative_eq!(quad[0], closed, epsilon = 1e-10);
        }
    }

    #[test]
    fn occupation_means_match_monte_carlo() {
        let q = DMatrix::from_row_slice(3, 3, &[-1.0, 0.6, 0.4, 0.2, -0.5, 0.3, 1.0, 1.0, -2.0]);
        let exact = expected_occupation(&q, 1, 2.0).unwrap();
        let n = 100_000u64;
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        for i in 0..n {
            let mut rng = stream(5, Purpose::Chain, i, 0);
            let occ = occupation_times(&simulate_chain(&q, 1, 2.0, &mut rng), 3);
            for j in 0..3 {
                sums[j] += occ[j];
                sq[j] += occ[j] * occ[j];
            }
        }
        for j in 0..3 {
            let mean = sums[j] / n as f64;
            let se = ((sq[j] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - exact[j]).abs() < 3.0 * se, "state {j}: {mean} vs {}", exact[j]);
        }
    }

    fn generator(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(0.0..2.0f64, n * n).prop_map(move |r| {
            let mut q = DMatrix::from_row_slice(n, n, &r);
            for i in 0..n {
                q[(i, i)] = 0.0;
                q[(i, i)] = -q.row(i).sum();
            }
            q
        })
    }

    proptest! {
        #[test]
        fn occupation_partitions_horizon(q in generator(3), seed in 0u64..1000, t in 0.1..5.0f64) {
            let mut rng = stream(seed, Purpose::Chain, 0, 0);
            let p = simulate_chain(&q, 0, t, &mut rng);
            let occ = occupation_times(&p, 3);
            prop_assert!((occ.iter().sum::<f64>() - t).abs() < 1e-12 * (1.0 + p.n_jumps() as f64));
            prop_assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(p.states.windows(2).all(|w| w[0] != w[1]));
        }

        #[test]
        fn laplace_shift_invariance(q in generator(3), c in -1.0..1.0f64, t in 0.1..3.0f64) {
            let v = occupation_laplace(&q, 2, &[c, c, c], t).unwrap();
            prop_assert!((v - (c * t).exp()).abs() < 1e-10 * (c * t).exp());
        }

        #[test]
        fn laplace_monotone(q in generator(3), w in proptest::collection::vec(-1.0..1.0f64, 3), j in 0usize..3, dw in 0.01..1.0f64) {
            let base = occupation_laplace(&q, 0, &w, 1.0).unwrap();
            let mut w2 = w.clone();
            w2[j] += dw;
            let bumped = occupation_laplace(&q, 0, &w2, 1.0).unwrap();
            prop_assert!(bumped >= base - 1e-12 * base);
        }

        #[test]
        fn expected_occupation_sums_to_horizon(q in generator(4), t in 0.1..5.0f64) {
            let e = expected_occupation(&q, 0, t).unwrap();
            prop_assert!((e.iter().sum::<f64>() - t).abs() < 1e-8);
        }
    }
}
