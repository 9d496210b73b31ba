//! Marginal-gain utilities driven by the greedy selector.
//!
//! A [`Utility`] owns its data (affinity matrix or coverage model) and hands
//! out a small mutable state per run. `gain` is read-only and may be called
//! from several threads at once; `commit` appends one element.
//!
//! * [`MaxMinDistance`]: gain of `k` is `min_{i∈S} (1 − M_ik)`, 1 for `S = ∅`.
//! * [`LogDet`]: gain of `k` is `log det M_{S∪k} − log det M_S`, maintained
//!   through an incremental Cholesky factor of `M_S`.
//! * [`UniformCoverage`]: gain of `k` is `Σ_x c(x)^λ + (1 − TV(x))` over all
//!   voxels, evaluated on `S ∪ {k}`.

use rayon::prelude::*;

use crate::distance::AffinityMatrix;
use crate::error::{Error, Result};
use crate::geometry::{CoverageModel, CoverageState};

/// Schur complements at or below this are treated as singular.
pub const SINGULAR_EPS: f64 = 1e-12;

pub trait Utility: Sync {
    type State: Clone + Send + Sync;

    /// Size of the ground set.
    fn n(&self) -> usize;

    fn empty_state(&self) -> Self::State;

    fn selected<'s>(&self, state: &'s Self::State) -> &'s [usize];

    /// Marginal gain of adding `k`. May be `-inf` (see [`LogDet`]).
    fn gain(&self, state: &Self::State, k: usize) -> Result<f64>;

    /// Adds `k` and returns the gain it realized.
    fn commit(&self, state: &mut Self::State, k: usize) -> Result<f64>;
}

fn check_candidate(in_set: &[bool], k: usize) -> Result<()> {
    match in_set.get(k) {
        None => Err(Error::Contract(format!(
            "index {k} out of range for {} views",
            in_set.len()
        ))),
        Some(true) => Err(Error::Contract(format!("view {k} is already selected"))),
        Some(false) => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct MaxMinDistance {
    matrix: AffinityMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DfState {
    pub selected: Vec<usize>,
    in_set: Vec<bool>,
    /// `min_{i∈S} (1 − M_ik)` for every `k`; 1 while `S` is empty.
    pub min_dist: Vec<f64>,
}

impl MaxMinDistance {
    pub fn new(matrix: AffinityMatrix) -> Self {
        MaxMinDistance { matrix }
    }

    pub fn matrix(&self) -> &AffinityMatrix {
        &self.matrix
    }
}

impl Utility for MaxMinDistance {
    type State = DfState;

    fn n(&self) -> usize {
        self.matrix.n()
    }

    fn empty_state(&self) -> DfState {
        let n = self.matrix.n();
        DfState {
            selected: Vec::new(),
            in_set: vec![false; n],
            min_dist: vec![1.0; n],
        }
    }

    fn selected<'s>(&self, state: &'s DfState) -> &'s [usize] {
        &state.selected
    }

    fn gain(&self, state: &DfState, k: usize) -> Result<f64> {
        check_candidate(&state.in_set, k)?;
        Ok(state.min_dist[k])
    }

    fn commit(&self, state: &mut DfState, k: usize) -> Result<f64> {
        let g = self.gain(state, k)?;
        state.in_set[k] = true;
        state.selected.push(k);
        for (d, &m) in state.min_dist.iter_mut().zip(self.matrix.row(k)) {
            let dist = (1.0 - m).clamp(0.0, 1.0);
            if dist < *d {
                *d = dist;
            }
        }
        Ok(g)
    }
}

/// Log-determinant of the selected principal minor. The constant
/// `−log det(M + I)` is omitted since it never changes an argmax.
#[derive(Debug, Clone)]
pub struct LogDet {
    matrix: AffinityMatrix,
    jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppState {
    pub selected: Vec<usize>,
    in_set: Vec<bool>,
    /// Rows of the lower-triangular factor `L` of `M_S`; row `t` has `t + 1` entries.
    pub chol: Vec<Vec<f64>>,
    pub log_det: f64,
    /// For each unselected `j`, the solution `c_j` of `L c_j = M_{S,j}`.
    proj: Vec<Vec<f64>>,
    /// `M_jj − ‖c_j‖²` for each `j`.
    schur: Vec<f64>,
}

impl DppState {
    pub fn schur_complement(&self, k: usize) -> f64 {
        self.schur[k]
    }
}

impl LogDet {
    pub fn new(matrix: AffinityMatrix) -> Self {
        LogDet {
            matrix,
            jitter: 0.0,
        }
    }

    /// Adds `eps` to the diagonal of the kernel.
    pub fn with_jitter(matrix: AffinityMatrix, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!(
                "jitter {eps} must be a non-negative number"
            )));
        }
        Ok(LogDet {
            matrix,
            jitter: eps,
        })
    }

    pub fn matrix(&self) -> &AffinityMatrix {
        &self.matrix
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn kernel(&self, i: usize, j: usize) -> f64 {
        let m = self.matrix.get(i, j);
        if i == j {
            m + self.jitter
        } else {
            m
        }
    }
}

impl Utility for LogDet {
    type State = DppState;

    fn n(&self) -> usize {
        self.matrix.n()
    }

    fn empty_state(&self) -> DppState {
        let n = self.matrix.n();
        DppState {
            selected: Vec::new(),
            in_set: vec![false; n],
            chol: Vec::new(),
            log_det: 0.0,
            proj: vec![Vec::new(); n],
            schur: (0..n).map(|j| self.kernel(j, j)).collect(),
        }
    }

    fn selected<'s>(&self, state: &'s DppState) -> &'s [usize] {
        &state.selected
    }

    fn gain(&self, state: &DppState, k: usize) -> Result<f64> {
        check_candidate(&state.in_set, k)?;
        let s = state.schur[k];
        Ok(if s > SINGULAR_EPS {
            s.ln()
        } else {
            f64::NEG_INFINITY
        })
    }

    fn commit(&self, state: &mut DppState, k: usize) -> Result<f64> {
        let g = self.gain(state, k)?;
        if g == f64::NEG_INFINITY {
            return Err(Error::Contract(format!(
                "view {k} would make the selected minor singular (Schur complement {:e})",
                state.schur[k]
            )));
        }
        let pivot = state.schur[k].sqrt();
        let ck = std::mem::take(&mut state.proj[k]);
        state.in_set[k] = true;

        let in_set = &state.in_set;
        state
            .proj
            .par_iter_mut()
            .zip(state.schur.par_iter_mut())
            .enumerate()
            .filter(|(j, _)| !in_set[*j])
            .for_each(|(j, (cj, sj))| {
                let dot: f64 = ck.iter().zip(cj.iter()).map(|(a, b)| a * b).sum();
                let e = (self.kernel(k, j) - dot) / pivot;
                cj.push(e);
                *sj -= e * e;
            });

        let mut row = ck;
        row.push(pivot);
        state.chol.push(row);
        state.selected.push(k);
        state.log_det += g;
        Ok(g)
    }
}

/// Voxel coverage plus angular uniformity. Monotone but not submodular.
#[derive(Debug, Clone)]
pub struct UniformCoverage {
    model: CoverageModel,
    lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfState {
    pub coverage: CoverageState,
    /// `Σ_x (count_x / (|S|+1))^λ + (1 − TV_x)`: the gain of a candidate that covers nothing.
    base_next: f64,
}

impl UniformCoverage {
    pub fn new(model: CoverageModel, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda = {lambda} must be positive")));
        }
        Ok(UniformCoverage { model, lambda })
    }

    pub fn model(&self) -> &CoverageModel {
        &self.model
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn term(&self, ratio: f64, tv: f64) -> f64 {
        ratio.powf(self.lambda) + (1.0 - tv)
    }

    fn base_for(&self, cov: &CoverageState) -> f64 {
        let size = (cov.selected.len() + 1) as f64;
        (0..self.model.n_voxels())
            .map(|x| self.term(cov.count(x) as f64 / size, cov.tv(x)))
            .sum()
    }
}

impl Utility for UniformCoverage {
    type State = CfState;

    fn n(&self) -> usize {
        self.model.n_views()
    }

    fn empty_state(&self) -> CfState {
        let coverage = CoverageState::empty(
            self.model.n_views(),
            self.model.n_voxels(),
            self.model.n_bins(),
        );
        let base_next = self.base_for(&coverage);
        CfState {
            coverage,
            base_next,
        }
    }

    fn selected<'s>(&self, state: &'s CfState) -> &'s [usize] {
        &state.coverage.selected
    }

    fn gain(&self, state: &CfState, k: usize) -> Result<f64> {
        if k >= self.model.n_views() || state.coverage.contains(k) {
            return Err(Error::Contract(format!(
                "view {k} is out of range or already selected"
            )));
        }
        let cov = &state.coverage;
        let size = (cov.selected.len() + 1) as f64;
        let uniform = cov.uniform_density();
        let mut total = state.base_next;
        for &(x, b) in self.model.visible(k) {
            let x = x as usize;
            let count = cov.count(x);
            let before = self.term(count as f64 / size, cov.tv(x));
            let c1 = (count + 1) as f64;
            let tv: f64 = 0.5
                * cov
                    .histogram(x)
                    .iter()
                    .enumerate()
                    .map(|(y, &h)| {
                        let h = if y == b as usize { h + 1 } else { h };
                        (h as f64 / c1 - uniform).abs()
                    })
                    .sum::<f64>();
            total += self.term(c1 / size, tv) - before;
        }
        Ok(total.max(0.0))
    }

    fn commit(&self, state: &mut CfState, k: usize) -> Result<f64> {
        let g = self.gain(state, k)?;
        state.coverage.add(k, self.model.visible(k));
        state.base_next = self.base_for(&state.coverage);
        Ok(g)
    }
}
