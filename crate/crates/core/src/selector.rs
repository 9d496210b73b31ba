//! Greedy marginal-gain selection and the two temporal baselines.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::build_matrix;
use crate::error::{Error, Result};
use crate::geometry::{build_grid, AngularBins, CoverageModel, FrustumParams};
use crate::model::{DistanceWeights, Trajectory};
use crate::utility::{LogDet, MaxMinDistance, UniformCoverage, Utility, SINGULAR_EPS};

/// Gains within this of the step maximum count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    Uniform,
    GreedyDf,
    GreedyDpp,
    GreedyCf,
}

impl Strategy {
    pub fn is_greedy(self) -> bool {
        matches!(
            self,
            Strategy::GreedyDf | Strategy::GreedyDpp | Strategy::GreedyCf
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSize {
    Count(usize),
    Ratio(f64),
}

impl SampleSize {
    /// Resolves to a subset size for `n` views. Ratios round half up, never below 1.
    pub fn resolve(self, n: usize) -> Result<usize> {
        let k = match self {
            SampleSize::Count(k) => k,
            SampleSize::Ratio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::Config(format!("ratio {r} must lie in (0, 1]")));
                }
                ((r * n as f64 + 0.5).floor() as usize).max(1)
            }
        };
        if k < 1 || k > n {
            return Err(Error::Config(format!("cannot select {k} of {n} views")));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub size: SampleSize,
    pub seed: u64,
    pub weights: DistanceWeights,
    /// Exponent on the cover ratio in the coverage utility.
    pub lambda: f64,
    pub grid_resolution: usize,
    pub frustum: FrustumParams,
    pub angular_bins: usize,
    /// Diagonal jitter for the log-determinant utility; `None` means none.
    pub dpp_jitter: Option<f64>,
}

impl SelectionConfig {
    pub fn new(strategy: Strategy, size: SampleSize) -> Self {
        SelectionConfig {
            strategy,
            size,
            seed: 0,
            weights: DistanceWeights::default(),
            lambda: 0.5,
            grid_resolution: 16,
            frustum: FrustumParams::default(),
            angular_bins: 26,
            dpp_jitter: None,
        }
    }

    fn bins(&self) -> Result<AngularBins> {
        match self.angular_bins {
            6 => Ok(AngularBins::axes()),
            26 => Ok(AngularBins::lattice26()),
            b => Err(Error::Config(format!(
                "angular bins must be 6 or 26, got {b}"
            ))),
        }
    }
}

/// Parameters echoed into every result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub n: usize,
    pub weights: DistanceWeights,
    pub lambda: f64,
    pub grid_resolution: usize,
    pub frustum: FrustumParams,
    pub angular_bins: usize,
    pub dpp_jitter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub k: usize,
    pub params: SelectionParams,
    /// Greedy strategies: pick order. Baselines: ascending.
    pub indices: Vec<usize>,
    /// Order the views were visited in (pick order, shuffle order, or stride order).
    pub order: Vec<usize>,
    /// Marginal gain of each greedy pick; empty for baselines.
    pub gains: Vec<f64>,
}

impl SelectionResult {
    pub fn total_utility(&self) -> Option<f64> {
        self.strategy.is_greedy().then(|| self.gains.iter().sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyRun {
    pub indices: Vec<usize>,
    pub gains: Vec<f64>,
}

/// Seeded permutation used to break ties; computed once per run.
pub fn tie_break_order(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// Runs `k` rounds of argmax-gain / commit. Among candidates whose gain is
/// within [`TIE_TOLERANCE`] of the best, the one earliest in the seeded
/// permutation wins.
pub fn greedy_select<U: Utility>(utility: &U, k: usize, seed: u64) -> Result<GreedyRun> {
    let n = utility.n();
    if k < 1 || k > n {
        return Err(Error::Config(format!("cannot select {k} of {n} views")));
    }
    let perm = tie_break_order(n, seed);
    let mut state = utility.empty_state();
    let mut taken = vec![false; n];
    let mut run = GreedyRun {
        indices: Vec::with_capacity(k),
        gains: Vec::with_capacity(k),
    };

    for step in 0..k {
        let candidates: Vec<usize> = perm.iter().copied().filter(|&j| !taken[j]).collect();
        let gains = candidates
            .par_iter()
            .map(|&j| utility.gain(&state, j))
            .collect::<Result<Vec<f64>>>()?;
        let best = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best == f64::NEG_INFINITY {
            return Err(Error::NumericalSingularity {
                step,
                selected: run.indices.len(),
                remaining: candidates.len(),
                threshold: SINGULAR_EPS,
            });
        }
        let pos = gains
            .iter()
            .position(|&g| g >= best - TIE_TOLERANCE)
            .expect("the maximum is attained");
        let pick = candidates[pos];
        let g = utility.commit(&mut state, pick)?;
        taken[pick] = true;
        run.indices.push(pick);
        run.gains.push(g);
    }
    Ok(run)
}

/// `k` distinct indices from a seeded Fisher–Yates prefix. Returns
/// `(ascending, shuffle order)`.
pub fn random_select(n: usize, k: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if k < 1 || k > n {
        return Err(Error::Config(format!("cannot select {k} of {n} views")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    let mut sorted = pool.clone();
    sorted.sort_unstable();
    Ok((sorted, pool))
}

/// Stride sampling from a seeded start frame, wrapping past the end.
/// Returns `(ascending, stride order)`.
pub fn uniform_select(n: usize, k: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if k < 1 || k > n {
        return Err(Error::Config(format!("cannot select {k} of {n} views")));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..n);
    Ok(uniform_from_start(n, k, start))
}

/// `index_t = floor(start + t·n/k) mod n`; a collision moves to the next free index.
pub fn uniform_from_start(n: usize, k: usize, start: usize) -> (Vec<usize>, Vec<usize>) {
    assert!(k >= 1 && k <= n && start < n);
    let mut used = vec![false; n];
    let mut order = Vec::with_capacity(k);
    for t in 0..k {
        let mut idx = (start + t * n / k) % n;
        while used[idx] {
            idx = (idx + 1) % n;
        }
        used[idx] = true;
        order.push(idx);
    }
    let mut sorted = order.clone();
    sorted.sort_unstable();
    (sorted, order)
}

/// Runs the configured strategy on an already normalized trajectory.
pub fn select(traj: &Trajectory, config: &SelectionConfig) -> Result<SelectionResult> {
    let n = traj.len();
    let k = config.size.resolve(n)?;
    let params = SelectionParams {
        n,
        weights: config.weights,
        lambda: config.lambda,
        grid_resolution: config.grid_resolution,
        frustum: config.frustum,
        angular_bins: config.angular_bins,
        dpp_jitter: config.dpp_jitter,
    };
    let (indices, order, gains) = match config.strategy {
        Strategy::Random => {
            let (s, o) = random_select(n, k, config.seed)?;
            (s, o, Vec::new())
        }
        Strategy::Uniform => {
            let (s, o) = uniform_select(n, k, config.seed)?;
            (s, o, Vec::new())
        }
        Strategy::GreedyDf => {
            let u = MaxMinDistance::new(build_matrix(traj, &config.weights)?);
            let run = greedy_select(&u, k, config.seed)?;
            (run.indices.clone(), run.indices, run.gains)
        }
        Strategy::GreedyDpp => {
            let m = build_matrix(traj, &config.weights)?;
            let u = match config.dpp_jitter {
                Some(eps) => LogDet::with_jitter(m, eps)?,
                None => LogDet::new(m),
            };
            let run = greedy_select(&u, k, config.seed)?;
            (run.indices.clone(), run.indices, run.gains)
        }
        Strategy::GreedyCf => {
            let grid = build_grid(traj, config.grid_resolution)?;
            let model = CoverageModel::build(traj, grid, config.frustum, config.bins()?)?;
            let u = UniformCoverage::new(model, config.lambda)?;
            let run = greedy_select(&u, k, config.seed)?;
            (run.indices.clone(), run.indices, run.gains)
        }
    };
    Ok(SelectionResult {
        strategy: config.strategy,
        seed: config.seed,
        k,
        params,
        indices,
        order,
        gains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::AffinityMatrix;

    #[test]
    fn ratio_rounding() {
        assert_eq!(SampleSize::Ratio(0.05).resolve(3000).unwrap(), 150);
        assert_eq!(SampleSize::Ratio(0.05).resolve(10).unwrap(), 1);
        assert_eq!(SampleSize::Ratio(0.25).resolve(10).unwrap(), 3);
        assert_eq!(SampleSize::Ratio(0.15).resolve(10).unwrap(), 2);
        assert_eq!(SampleSize::Ratio(0.001).resolve(10).unwrap(), 1);
        assert!(SampleSize::Ratio(0.0).resolve(10).is_err());
        assert!(SampleSize::Ratio(1.5).resolve(10).is_err());
        assert!(SampleSize::Count(11).resolve(10).is_err());
        assert!(SampleSize::Count(0).resolve(10).is_err());
    }

    #[test]
    fn uniform_stride() {
        assert_eq!(uniform_from_start(10, 5, 0).0, vec![0, 2, 4, 6, 8]);
        let (sorted, order) = uniform_from_start(10, 4, 7);
        assert_eq!(order, vec![7, 9, 2, 4]);
        assert_eq!(sorted, vec![2, 4, 7, 9]);
        for s in 0..7 {
            assert_eq!(uniform_from_start(7, 7, s).0, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn uniform_is_seeded() {
        assert_eq!(
            uniform_select(50, 7, 3).unwrap(),
            uniform_select(50, 7, 3).unwrap()
        );
        assert_eq!(
            uniform_select(9, 9, 1).unwrap().0,
            (0..9).collect::<Vec<_>>()
        );
    }

    #[test]
    fn random_baseline() {
        assert_eq!(
            random_select(6, 6, 11).unwrap().0,
            (0..6).collect::<Vec<_>>()
        );
        assert_eq!(
            random_select(10, 3, 5).unwrap(),
            random_select(10, 3, 5).unwrap()
        );
        let differ = (0..100u64)
            .filter(|&s| {
                random_select(10, 3, 2 * s).unwrap().0 != random_select(10, 3, 2 * s + 1).unwrap().0
            })
            .count();
        assert!(differ >= 99, "{differ}");
    }

    fn df(n: usize, entries: &[f64]) -> MaxMinDistance {
        MaxMinDistance::new(
            AffinityMatrix::from_entries(n, entries.to_vec(), DistanceWeights::default()).unwrap(),
        )
    }

    #[test]
    fn greedy_takes_everything_when_k_is_n() {
        let u = df(3, &[1.0, 0.8, 0.5, 0.8, 1.0, 0.3, 0.5, 0.3, 1.0]);
        let run = greedy_select(&u, 3, 9).unwrap();
        let mut s = run.indices.clone();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2]);
        assert_eq!(run.gains[0], 1.0);
    }

    #[test]
    fn greedy_chain_by_hand() {
        // 1 − M: d(0,1) = 0.2, d(1,2) = 0.5, d(0,2) = 0.7
        let u = df(3, &[1.0, 0.8, 0.3, 0.8, 1.0, 0.5, 0.3, 0.5, 1.0]);
        for seed in 0..20 {
            let run = greedy_select(&u, 2, seed).unwrap();
            let first = run.indices[0];
            let want = match first {
                0 => (2, 0.7),
                1 => (2, 0.5),
                _ => (0, 0.7),
            };
            assert_eq!(run.indices[1], want.0);
            assert!((run.gains[1] - want.1).abs() < 1e-15);
            assert_eq!(run.indices[0], tie_break_order(3, seed)[0]);
        }
    }

    #[test]
    fn greedy_rejects_bad_k() {
        let u = df(2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(greedy_select(&u, 0, 0).is_err());
        assert!(greedy_select(&u, 3, 0).is_err());
    }

    #[test]
    fn greedy_dpp_reports_singular_step() {
        let m = AffinityMatrix::from_entries(3, vec![1.0; 9], DistanceWeights::default()).unwrap();
        let err = greedy_select(&LogDet::new(m), 2, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::NumericalSingularity {
                step: 1,
                selected: 1,
                remaining: 2,
                ..
            }
        ));
    }
}
