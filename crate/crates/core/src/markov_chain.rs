//! Finite-state continuous-time Markov chains.
//!
//! States are 0-based here. The CLI and CSV layers translate to the 1-based
//! labels used in configuration files.

use rand::Rng;

use crate::error::{Error, Result};
use crate::quadrature;
use crate::rng::exponential;

/// Absolute tolerance on the row sums of an intensity matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Tolerance used by [`occupation_integral`] on each constant-state segment.
pub const OCCUPATION_TOL: f64 = 1e-12;

/// A validated intensity (generator) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChainSpec {
    n_states: usize,
    // row-major
    intensity: Vec<f64>,
}

impl MarkovChainSpec {
    /// Validates `rows` as an intensity matrix, see [`validate_intensity`].
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        validate_intensity(rows)
    }

    /// Single-state absorbing chain.
    pub fn single_state() -> Self {
        Self {
            n_states: 1,
            intensity: vec![0.0],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.intensity[from * self.n_states + to]
    }

    /// Total exit rate `-q_ii` of state `i`.
    #[inline]
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.rate(i, i)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.intensity
            .chunks(self.n_states)
            .map(|row| row.to_vec())
            .collect()
    }

    pub fn check_state(&self, state: usize) -> Result<()> {
        if state < self.n_states {
            Ok(())
        } else {
            Err(Error::InvalidState {
                index: state,
                n_states: self.n_states,
            })
        }
    }

    /// Draws the state entered when leaving `from`, using one uniform.
    fn next_state<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let total = self.exit_rate(from);
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = from;
        for to in 0..self.n_states {
            if to == from {
                continue;
            }
            let q = self.rate(from, to);
            if q <= 0.0 {
                continue;
            }
            acc += q;
            last = to;
            if target < acc {
                return to;
            }
        }
        // round-off in the cumulative sum
        last
    }
}

/// Checks that `rows` is a square matrix with nonnegative off-diagonal entries
/// and zero row sums.
pub fn validate_intensity(rows: &[Vec<f64>]) -> Result<MarkovChainSpec> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptyChain);
    }
    let mut intensity = Vec::with_capacity(n * n);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::NotSquare {
                rows: n,
                row: i,
                cols: row.len(),
            });
        }
        for (j, &q) in row.iter().enumerate() {
            if !q.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "q[{i}][{j}] is not finite"
                )));
            }
            if i != j && q < 0.0 {
                return Err(Error::NegativeRate {
                    row: i,
                    col: j,
                    value: q,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if sum.abs() > ROW_SUM_TOL {
            return Err(Error::RowSumNonZero { row: i, sum });
        }
        intensity.extend_from_slice(row);
    }
    Ok(MarkovChainSpec {
        n_states: n,
        intensity,
    })
}

/// A piecewise-constant regime path on `[start, horizon]`.
///
/// State `states[j]` is active on `[t_j, t_{j+1})` with `t_0 = start` and
/// `t_{K+1} = horizon`. A jump at exactly `horizon` is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePath {
    start: f64,
    horizon: f64,
    jump_times: Vec<f64>,
    states: Vec<usize>,
}

impl RegimePath {
    pub fn new(start: f64, horizon: f64, jump_times: Vec<f64>, states: Vec<usize>) -> Result<Self> {
        if !(start.is_finite() && horizon.is_finite() && start <= horizon) {
            return Err(Error::InvalidParameter(format!(
                "regime path needs start <= horizon, got [{start}, {horizon}]"
            )));
        }
        if states.len() != jump_times.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "regime path with {} jumps needs {} states, got {}",
                jump_times.len(),
                jump_times.len() + 1,
                states.len()
            )));
        }
        let mut prev = start;
        for &t in &jump_times {
            if !(t > prev && t <= horizon) {
                return Err(Error::InvalidParameter(format!(
                    "jump times must be strictly increasing in ({start}, {horizon}]"
                )));
            }
            prev = t;
        }
        if states.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(
                "consecutive regime states must differ".into(),
            ));
        }
        Ok(Self {
            start,
            horizon,
            jump_times,
            states,
        })
    }

    /// Path that stays in `state` on `[start, horizon]`.
    pub fn constant(state: usize, start: f64, horizon: f64) -> Self {
        Self {
            start,
            horizon,
            jump_times: Vec::new(),
            states: vec![state],
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Index `j` of the segment `[t_j, t_{j+1})` containing `t`.
    pub fn segment_index(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&s| s <= t)
    }

    pub fn state_at(&self, t: f64) -> usize {
        self.states[self.segment_index(t)]
    }

    /// Segments as `(left, right, state)`, covering `[start, horizon]`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let n = self.states.len();
        (0..n).map(move |j| {
            let left = if j == 0 { self.start } else { self.jump_times[j - 1] };
            let right = if j + 1 < n { self.jump_times[j] } else { self.horizon };
            (left, right, self.states[j])
        })
    }
}

/// Simulates the chain on `[t0, horizon]` from `state0`.
///
/// Holding times are exponential with rate `-q_ii`; the next state is `j` with
/// probability `q_ij / (-q_ii)`. Absorbing states never jump.
pub fn sample_path<R: Rng + ?Sized>(
    spec: &MarkovChainSpec,
    t0: f64,
    horizon: f64,
    state0: usize,
    rng: &mut R,
) -> Result<RegimePath> {
    spec.check_state(state0)?;
    if !(t0 <= horizon) {
        return Err(Error::InvalidParameter(format!(
            "sample_path needs t0 <= T, got {t0} > {horizon}"
        )));
    }
    let mut jump_times = Vec::new();
    let mut states = vec![state0];
    let mut t = t0;
    let mut state = state0;
    loop {
        let rate = spec.exit_rate(state);
        if rate <= 0.0 {
            break;
        }
        t += exponential(rng, rate);
        if t > horizon {
            break;
        }
        state = spec.next_state(state, rng);
        jump_times.push(t);
        states.push(state);
    }
    Ok(RegimePath {
        start: t0,
        horizon,
        jump_times,
        states,
    })
}

/// Transition matrix `exp(Q t)` by scaling and squaring of the Taylor series.
pub fn transition_probabilities(spec: &MarkovChainSpec, t: f64) -> Vec<Vec<f64>> {
    let n = spec.n_states;
    let mut m: Vec<f64> = spec.intensity.iter().map(|q| q * t).collect();
    let norm = inf_norm(&m, n);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
        let scale = 0.5f64.powi(squarings as i32);
        m.iter_mut().for_each(|v| *v *= scale);
    }

    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..200 {
        term = matmul(&term, &m, n);
        let inv_k = 1.0 / k as f64;
        term.iter_mut().for_each(|v| *v *= inv_k);
        result.iter_mut().zip(&term).for_each(|(r, v)| *r += v);
        if inf_norm(&term, n) < 1e-16 {
            break;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result, n);
    }
    result
        .chunks(n)
        .map(|row| row.iter().map(|p| p.clamp(0.0, 1.0)).collect())
        .collect()
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

fn inf_norm(m: &[f64], n: usize) -> f64 {
    m.chunks(n)
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `∫_t^T g(s, m(s)) ds` along `path`, integrated segment by segment.
pub fn occupation_integral<G>(path: &RegimePath, g: G, t: f64, horizon: f64) -> f64
where
    G: Fn(f64, usize) -> f64,
{
    let mut total = 0.0;
    for (left, right, state) in path.segments() {
        let a = left.max(t);
        let b = right.min(horizon);
        if b > a {
            total += quadrature::integrate(|s| g(s, state), a, b, OCCUPATION_TOL);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::path_stream;

    fn calm_turbulent() -> MarkovChainSpec {
        MarkovChainSpec::new(&[vec![-1.0909, 1.0909], vec![3.4413, -3.4413]]).unwrap()
    }

    #[test]
    fn validation() {
        assert_eq!(calm_turbulent().n_states(), 2);
        assert_eq!(MarkovChainSpec::new(&[vec![0.0]]).unwrap().n_states(), 1);
        assert!(matches!(
            MarkovChainSpec::new(&[vec![-1.0, 0.5], vec![1.0, -1.0]]),
            Err(Error::RowSumNonZero { row: 0, .. })
        ));
        assert!(matches!(
            MarkovChainSpec::new(&[vec![1.0, -1.0], vec![1.0, -1.0]]),
            Err(Error::NegativeRate { row: 0, col: 1, .. })
        ));
        assert!(matches!(
            MarkovChainSpec::new(&[vec![0.0, 0.0]]),
            Err(Error::NotSquare { .. })
        ));
        assert!(matches!(MarkovChainSpec::new(&[]), Err(Error::EmptyChain)));
    }

    #[test]
    fn absorbing_chain_never_jumps() {
        let spec = MarkovChainSpec::single_state();
        for i in 0..100 {
            let path = sample_path(&spec, 0.0, 5.0, 0, &mut path_stream(3, i)).unwrap();
            assert_eq!(path.n_jumps(), 0);
        }
    }

    fn mean_first_holding(state: usize) -> (f64, f64) {
        let spec = calm_turbulent();
        let n = 100_000u64;
        // P(first holding > 40) < e^-43, so truncation never happens in practice
        let draws: Vec<f64> = (0..n)
            .map(|i| {
                let p = sample_path(&spec, 0.0, 40.0, state, &mut path_stream(11, i)).unwrap();
                p.jump_times()[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn holding_time_means() {
        let (m1, se1) = mean_first_holding(0);
        assert!((m1 - 1.0 / 1.0909).abs() < 3.0 * se1, "{m1} ± {se1}");
        let (m2, se2) = mean_first_holding(1);
        assert!((m2 - 1.0 / 3.4413).abs() < 3.0 * se2, "{m2} ± {se2}");
    }

    #[test]
    fn transition_matrix_special_cases() {
        let zero = MarkovChainSpec::new(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(transition_probabilities(&zero, 3.0), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(
            transition_probabilities(&calm_turbulent(), 0.0),
            vec![vec![1.0, 0.0], vec![0.0, 1.0]]
        );
    }

    #[test]
    fn two_state_closed_form() {
        let (q12, q21): (f64, f64) = (1.0909, 3.4413);
        let pi1 = q21 / (q12 + q21);
        assert!((pi1 - 0.7593).abs() < 5e-5);
        for &t in &[0.1, 1.0, 7.5] {
            let p = transition_probabilities(&calm_turbulent(), t);
            let decay = (-(q12 + q21) * t).exp();
            let p11 = pi1 + (1.0 - pi1) * decay;
            let p22 = (1.0 - pi1) + pi1 * decay;
            assert!((p[0][0] - p11).abs() < 1e-13);
            assert!((p[1][1] - p22).abs() < 1e-13);
            assert!((p[0][1] - (1.0 - p11)).abs() < 1e-13);
        }
    }

    #[test]
    fn path_segments_and_lookup() {
        let path = RegimePath::new(0.0, 5.0, vec![1.0, 2.5, 5.0], vec![0, 1, 0, 1]).unwrap();
        assert_eq!(path.state_at(0.0), 0);
        assert_eq!(path.state_at(1.0), 1);
        assert_eq!(path.state_at(2.49), 1);
        assert_eq!(path.state_at(2.5), 0);
        assert_eq!(path.state_at(5.0), 1);
        let segs: Vec<_> = path.segments().collect();
        assert_eq!(segs, vec![(0.0, 1.0, 0), (1.0, 2.5, 1), (2.5, 5.0, 0), (5.0, 5.0, 1)]);

        assert!(RegimePath::new(0.0, 5.0, vec![2.0, 1.0], vec![0, 1, 0]).is_err());
        assert!(RegimePath::new(0.0, 5.0, vec![1.0], vec![0, 0]).is_err());
        assert!(RegimePath::new(0.0, 5.0, vec![0.0], vec![0, 1]).is_err());
        assert!(RegimePath::new(0.0, 5.0, vec![5.5], vec![0, 1]).is_err());
    }

    #[test]
    fn occupation_integral_constants() {
        let path = RegimePath::new(0.0, 5.0, vec![2.0], vec![0, 1]).unwrap();
        assert!((occupation_integral(&path, |_, _| 1.5, 0.5, 5.0) - 1.5 * 4.5).abs() < 1e-13);

        let single = RegimePath::constant(0, 0.0, 5.0);
        let got = occupation_integral(&single, |_, _| 0.03 * 0.3, 0.0, 5.0);
        assert!((got - 0.045).abs() < 1e-15);
    }

    #[test]
    fn occupation_integral_matches_riemann_sum() {
        let path = RegimePath::new(0.0, 2.0, vec![0.75], vec![0, 1]).unwrap();
        let g = |s: f64, e: usize| if e == 0 { 1.0 + 2.0 * s } else { 3.0 - 0.5 * s };
        let n = 1_000_000;
        let h = 2.0 / n as f64;
        let riemann: f64 = (0..n)
            .map(|k| {
                let s = (k as f64 + 0.5) * h;
                g(s, path.state_at(s))
            })
            .sum::<f64>()
            * h;
        let got = occupation_integral(&path, g, 0.0, 2.0);
        assert!((got - riemann).abs() < 1e-9, "{got} vs {riemann}");
    }
}
