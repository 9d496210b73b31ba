//! Exhaustive optimizer and randomized property checks.
//!
//! Set values are canonicalized by committing elements in ascending index
//! order and summing the gains, so every utility is a well-defined function
//! of a set. For the log-determinant this is order independent anyway; for
//! the max-min and coverage utilities it fixes one accumulation order.

use itertools::Itertools;
use nalgebra::{DMatrix, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::build_matrix;
use crate::error::{Error, Result};
use crate::geometry::{build_grid, AngularBins, CoverageModel, FrustumParams};
use crate::model::{quaternion_to_matrix, CameraView, DistanceWeights, FeatureTable, Trajectory};
use crate::selector::greedy_select;
use crate::utility::{LogDet, MaxMinDistance, UniformCoverage, Utility};

/// Largest number of subsets [`brute_force_optimum`] will enumerate.
pub const ENUMERATION_BUDGET: u128 = 2_000_000;

/// Property violations smaller than this are ignored.
pub const PROPERTY_TOLERANCE: f64 = 1e-9;

/// Violations kept verbatim in a report; the rest are only counted.
const MAX_WITNESSES: usize = 16;

/// `(1 − 1/e)`, the greedy guarantee for monotone submodular maximization.
pub fn greedy_ratio() -> f64 {
    1.0 - (-1.0f64).exp()
}

/// Value of `set` obtained by committing its elements in ascending order.
/// A set that drives the log-determinant singular is worth `-inf`.
pub fn set_value<U: Utility>(utility: &U, set: &[usize]) -> Result<f64> {
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    let mut state = utility.empty_state();
    let mut total = 0.0;
    for k in sorted {
        let g = utility.gain(&state, k)?;
        if g == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += utility.commit(&mut state, k)?;
    }
    Ok(total)
}

fn state_for<U: Utility>(utility: &U, set: &[usize]) -> Result<Option<U::State>> {
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    let mut state = utility.empty_state();
    for k in sorted {
        if utility.gain(&state, k)? == f64::NEG_INFINITY {
            return Ok(None);
        }
        utility.commit(&mut state, k)?;
    }
    Ok(Some(state))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Best size-`k` subset by exhaustive enumeration. Ties keep the
/// lexicographically smallest subset.
pub fn brute_force_optimum<U: Utility>(utility: &U, k: usize) -> Result<(Vec<usize>, f64)> {
    let n = utility.n();
    if k < 1 || k > n {
        return Err(Error::Config(format!("cannot select {k} of {n} views")));
    }
    let count = binomial(n, k);
    if count > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded {
            n,
            k,
            count,
            budget: ENUMERATION_BUDGET,
        });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for subset in (0..n).combinations(k) {
        let v = set_value(utility, &subset)?;
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((subset, v));
        }
    }
    Ok(best.expect("at least one subset"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Df,
    Dpp,
    Cf,
}

/// What a suite is expected to find.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    NoViolations,
    AtLeastOneViolation,
    /// Violations are recorded but never fail the suite.
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub trial: usize,
    pub set_a: Vec<usize>,
    pub set_b: Vec<usize>,
    pub element: Option<usize>,
    pub value_a: f64,
    pub value_b: f64,
    pub magnitude: f64,
    /// The instance the violation was found on, for the first few witnesses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub utility: Option<UtilityKind>,
    pub seed: u64,
    pub instances_tested: usize,
    /// Trials that could not be evaluated (singular log-det minors).
    pub skipped: usize,
    pub violation_count: usize,
    pub max_violation: f64,
    pub violations: Vec<Violation>,
    pub expectation: Expectation,
    pub holds: bool,
}

impl PropertyReport {
    fn assemble(
        property: &str,
        utility: Option<UtilityKind>,
        seed: u64,
        expectation: Expectation,
        outcomes: Vec<TrialOutcome>,
    ) -> Self {
        let mut report = PropertyReport {
            property: property.to_string(),
            utility,
            seed,
            instances_tested: 0,
            skipped: 0,
            violation_count: 0,
            max_violation: 0.0,
            violations: Vec::new(),
            expectation,
            holds: false,
        };
        for outcome in outcomes {
            match outcome {
                TrialOutcome::Skipped => report.skipped += 1,
                TrialOutcome::Passed => report.instances_tested += 1,
                TrialOutcome::Violated(v) => {
                    report.instances_tested += 1;
                    report.violation_count += 1;
                    report.max_violation = report.max_violation.max(v.magnitude);
                    if report.violations.len() < MAX_WITNESSES {
                        report.violations.push(*v);
                    }
                }
            }
        }
        report.holds = match expectation {
            Expectation::NoViolations => report.violation_count == 0,
            Expectation::AtLeastOneViolation => report.violation_count > 0,
            Expectation::Informational => true,
        };
        report
    }
}

enum TrialOutcome {
    Passed,
    Skipped,
    Violated(Box<Violation>),
}

/// Runs `trials` independent trials in parallel; trial `t` draws from its own
/// ChaCha stream so results do not depend on scheduling.
fn run_trials<F>(trials: usize, seed: u64, trial: F) -> Result<Vec<TrialOutcome>>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<TrialOutcome> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            trial(t, &mut rng)
        })
        .collect()
}

fn random_subset(rng: &mut ChaCha8Rng, pool: &[usize], size: usize) -> Vec<usize> {
    let mut v = pool.to_vec();
    v.shuffle(rng);
    v.truncate(size);
    v.sort_unstable();
    v
}

/// Samples `A ⊆ B ⊂ D` and `k ∉ B` and compares the gains of `k` at `A` and `B`.
pub fn check_submodularity<I, U, G, B>(
    utility_kind: Option<UtilityKind>,
    trials: usize,
    seed: u64,
    generate: G,
    build: B,
) -> Result<PropertyReport>
where
    I: Serialize,
    U: Utility,
    G: Fn(&mut ChaCha8Rng) -> I + Sync,
    B: Fn(&I) -> Result<U> + Sync,
{
    let outcomes = run_trials(trials, seed, |t, rng| {
        let inst = generate(rng);
        let u = build(&inst)?;
        let n = u.n();
        if n < 2 {
            return Ok(TrialOutcome::Skipped);
        }
        let all: Vec<usize> = (0..n).collect();
        let b_size = rng.random_range(0..n);
        let set_b = random_subset(rng, &all, b_size);
        let a_size = rng.random_range(0..=b_size);
        let set_a = random_subset(rng, &set_b, a_size);
        let rest: Vec<usize> = all
            .iter()
            .copied()
            .filter(|j| set_b.binary_search(j).is_err())
            .collect();
        let k = rest[rng.random_range(0..rest.len())];

        let (Some(sa), Some(sb)) = (state_for(&u, &set_a)?, state_for(&u, &set_b)?) else {
            return Ok(TrialOutcome::Skipped);
        };
        let ga = u.gain(&sa, k)?;
        let gb = u.gain(&sb, k)?;
        if !ga.is_finite() || !gb.is_finite() {
            return Ok(TrialOutcome::Skipped);
        }
        if gb > ga + PROPERTY_TOLERANCE {
            Ok(TrialOutcome::Violated(Box::new(Violation {
                trial: t,
                set_a,
                set_b,
                element: Some(k),
                value_a: ga,
                value_b: gb,
                magnitude: gb - ga,
                instance: serde_json::to_value(&inst).ok(),
            })))
        } else {
            Ok(TrialOutcome::Passed)
        }
    })?;
    let expectation = match utility_kind {
        Some(UtilityKind::Cf) => Expectation::AtLeastOneViolation,
        _ => Expectation::NoViolations,
    };
    Ok(PropertyReport::assemble(
        "submodularity",
        utility_kind,
        seed,
        expectation,
        outcomes,
    ))
}

/// Samples `A ⊂ D` and `k ∉ A` and flags negative gains.
pub fn check_monotonicity<I, U, G, B>(
    utility_kind: Option<UtilityKind>,
    trials: usize,
    seed: u64,
    generate: G,
    build: B,
) -> Result<PropertyReport>
where
    I: Serialize,
    U: Utility,
    G: Fn(&mut ChaCha8Rng) -> I + Sync,
    B: Fn(&I) -> Result<U> + Sync,
{
    let outcomes = run_trials(trials, seed, |t, rng| {
        let inst = generate(rng);
        let u = build(&inst)?;
        let n = u.n();
        let all: Vec<usize> = (0..n).collect();
        let a_size = rng.random_range(0..n);
        let set_a = random_subset(rng, &all, a_size);
        let rest: Vec<usize> = all
            .iter()
            .copied()
            .filter(|j| set_a.binary_search(j).is_err())
            .collect();
        let k = rest[rng.random_range(0..rest.len())];
        let Some(sa) = state_for(&u, &set_a)? else {
            return Ok(TrialOutcome::Skipped);
        };
        let g = u.gain(&sa, k)?;
        if g < -PROPERTY_TOLERANCE {
            Ok(TrialOutcome::Violated(Box::new(Violation {
                trial: t,
                set_a,
                set_b: Vec::new(),
                element: Some(k),
                value_a: g,
                value_b: 0.0,
                magnitude: if g.is_finite() { -g } else { f64::MAX },
                instance: serde_json::to_value(&inst).ok(),
            })))
        } else {
            Ok(TrialOutcome::Passed)
        }
    })?;
    let expectation = match utility_kind {
        Some(UtilityKind::Dpp) => Expectation::Informational,
        _ => Expectation::NoViolations,
    };
    Ok(PropertyReport::assemble(
        "monotonicity",
        utility_kind,
        seed,
        expectation,
        outcomes,
    ))
}

/// Poses (and optionally features) of a small random scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseInstance {
    pub positions: Vec<[f64; 3]>,
    /// Unit quaternions `(w, x, y, z)`.
    pub rotations: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
}

impl PoseInstance {
    /// Positions uniform in `[-4, 4]³`, rotations uniform over SO(3),
    /// features uniform on the unit sphere of `feature_dim` dimensions.
    pub fn random(rng: &mut impl Rng, n: usize, feature_dim: Option<usize>) -> Self {
        let positions = (0..n)
            .map(|_| [0; 3].map(|_| rng.random_range(-4.0..=4.0)))
            .collect();
        let rotations = (0..n).map(|_| unit_vector::<4>(rng)).collect();
        let features = feature_dim.map(|d| (0..n).map(|_| unit_vector_dyn(rng, d)).collect());
        PoseInstance {
            positions,
            rotations,
            features,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn trajectory(&self) -> Result<Trajectory> {
        let views = self
            .positions
            .iter()
            .zip(&self.rotations)
            .enumerate()
            .map(|(i, (p, q))| {
                let r = quaternion_to_matrix(q[0], q[1], q[2], q[3]).ok_or_else(|| {
                    Error::Validation {
                        frame: i,
                        message: "degenerate quaternion".into(),
                    }
                })?;
                Ok(CameraView::new(i, Vector3::from(*p), r))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut traj = Trajectory::from_views(views, "generated")?;
        if let Some(f) = &self.features {
            traj.attach_features(&FeatureTable::from_rows(f.iter().cloned().enumerate())?)?;
        }
        Ok(traj)
    }
}

fn unit_vector<const D: usize>(rng: &mut impl Rng) -> [f64; D] {
    loop {
        let v: [f64; D] = [0.0; D].map(|_| rng.sample(StandardNormal));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.map(|x| x / n);
        }
    }
}

fn unit_vector_dyn(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A coverage-utility instance small enough to serialize as a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfInstance {
    pub poses: PoseInstance,
    pub grid_resolution: usize,
    pub frustum: FrustumParams,
    pub bins: AngularBins,
    pub lambda: f64,
}

impl CfInstance {
    /// At most `max_views` cameras and a grid of at most `max_res`³ voxels.
    /// Half the cameras look at the scene center so coverage is not empty.
    pub fn random(rng: &mut impl Rng, max_views: usize, max_res: usize) -> Self {
        let n = rng.random_range(2..=max_views.max(2));
        let mut poses = PoseInstance::random(rng, n, None);
        for i in 0..n {
            if rng.random_bool(0.5) {
                poses.rotations[i] = look_at_origin(poses.positions[i]);
            }
        }
        CfInstance {
            poses,
            grid_resolution: rng.random_range(1..=max_res.max(1)),
            frustum: FrustumParams::default(),
            bins: AngularBins::axes(),
            lambda: 0.5,
        }
    }

    pub fn build(&self) -> Result<UniformCoverage> {
        let traj = self.poses.trajectory()?;
        let grid = build_grid(&traj, self.grid_resolution)?;
        let model = CoverageModel::build(&traj, grid, self.frustum, self.bins.clone())?;
        UniformCoverage::new(model, self.lambda)
    }
}

fn look_at_origin(p: [f64; 3]) -> [f64; 4] {
    let pos = Vector3::from(p);
    if pos.norm() < 1e-9 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let z = pos.normalize();
    let up = if z.y.abs() > 0.99 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    let r = nalgebra::Matrix3::from_columns(&[x, y, z]);
    crate::model::matrix_to_quaternion(&r)
}

/// A stored witness that the coverage utility violates diminishing returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfCounterexample {
    pub instance: CfInstance,
    pub set_a: Vec<usize>,
    pub set_b: Vec<usize>,
    pub element: usize,
    pub gain_a: f64,
    pub gain_b: f64,
}

impl CfCounterexample {
    /// Recomputes both gains on the stored instance.
    pub fn recompute(&self) -> Result<(f64, f64)> {
        let u = self.instance.build()?;
        let sa = state_for(&u, &self.set_a)?.expect("coverage states are never singular");
        let sb = state_for(&u, &self.set_b)?.expect("coverage states are never singular");
        Ok((u.gain(&sa, self.element)?, u.gain(&sb, self.element)?))
    }

    pub fn from_violation(v: &Violation) -> Option<Self> {
        let instance: CfInstance = serde_json::from_value(v.instance.clone()?).ok()?;
        Some(CfCounterexample {
            instance,
            set_a: v.set_a.clone(),
            set_b: v.set_b.clone(),
            element: v.element?,
            gain_a: v.value_a,
            gain_b: v.value_b,
        })
    }
}

fn pose_instance(rng: &mut ChaCha8Rng, min_n: usize, max_n: usize) -> PoseInstance {
    let n = rng.random_range(min_n..=max_n);
    PoseInstance::random(rng, n, Some(8))
}

fn df_utility(inst: &PoseInstance) -> Result<MaxMinDistance> {
    Ok(MaxMinDistance::new(build_matrix(
        &inst.trajectory()?,
        &DistanceWeights::default(),
    )?))
}

/// Jitter added to log-det kernels in the submodularity suite.
pub const SUITE_DPP_JITTER: f64 = 1e-6;

fn dpp_utility(inst: &PoseInstance) -> Result<LogDet> {
    LogDet::with_jitter(
        build_matrix(&inst.trajectory()?, &DistanceWeights::default())?,
        SUITE_DPP_JITTER,
    )
}

/// Diminishing-returns check for one utility on random instances
/// (up to 12 views; coverage instances up to 6 views on grids up to 4³).
pub fn submodularity_suite(kind: UtilityKind, trials: usize, seed: u64) -> Result<PropertyReport> {
    match kind {
        UtilityKind::Df => check_submodularity(
            Some(kind),
            trials,
            seed,
            |r| pose_instance(r, 2, 12),
            df_utility,
        ),
        UtilityKind::Dpp => check_submodularity(
            Some(kind),
            trials,
            seed,
            |r| pose_instance(r, 2, 12),
            dpp_utility,
        ),
        UtilityKind::Cf => check_submodularity(
            Some(kind),
            trials,
            seed,
            |r| CfInstance::random(r, 6, 4),
            CfInstance::build,
        ),
    }
}

pub fn monotonicity_suite(kind: UtilityKind, trials: usize, seed: u64) -> Result<PropertyReport> {
    match kind {
        UtilityKind::Df => check_monotonicity(
            Some(kind),
            trials,
            seed,
            |r| pose_instance(r, 2, 12),
            df_utility,
        ),
        UtilityKind::Dpp => check_monotonicity(
            Some(kind),
            trials,
            seed,
            |r| pose_instance(r, 2, 12),
            dpp_utility,
        ),
        UtilityKind::Cf => check_monotonicity(
            Some(kind),
            trials,
            seed,
            |r| CfInstance::random(r, 6, 4),
            CfInstance::build,
        ),
    }
}

/// Greedy max-min value against the exhaustive optimum on instances with
/// `N ≤ 12`, `K ≤ 5`. The greedy value is summed in pick order; the optimum
/// uses the canonical ascending order.
pub fn approximation_suite(trials: usize, seed: u64) -> Result<PropertyReport> {
    let ratio = greedy_ratio();
    let outcomes = run_trials(trials, seed, |t, rng| {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(k + 1..=12);
        let inst = PoseInstance::random(rng, n, Some(8));
        let u = df_utility(&inst)?;
        let run = greedy_select(&u, k, rng.random())?;
        let greedy: f64 = run.gains.iter().sum();
        let (best, opt) = brute_force_optimum(&u, k)?;
        if greedy < ratio * opt - PROPERTY_TOLERANCE {
            Ok(TrialOutcome::Violated(Box::new(Violation {
                trial: t,
                set_a: run.indices,
                set_b: best,
                element: None,
                value_a: greedy,
                value_b: opt,
                magnitude: ratio * opt - greedy,
                instance: serde_json::to_value(&inst).ok(),
            })))
        } else {
            Ok(TrialOutcome::Passed)
        }
    })?;
    Ok(PropertyReport::assemble(
        "approximation",
        Some(UtilityKind::Df),
        seed,
        Expectation::NoViolations,
        outcomes,
    ))
}

/// Dense log-determinant of the principal minor on `set`, via Cholesky.
pub fn dense_log_det(
    m: &crate::distance::AffinityMatrix,
    jitter: f64,
    set: &[usize],
) -> Option<f64> {
    let k = set.len();
    let sub = DMatrix::from_fn(k, k, |a, b| {
        m.get(set[a], set[b]) + if a == b { jitter } else { 0.0 }
    });
    let chol = sub.cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

/// Relative tolerance between incremental and dense log-determinants.
pub const DPP_DENSE_TOLERANCE: f64 = 1e-8;

/// Replays greedy log-det runs (`N ≤ 32`) and compares the incremental
/// log-determinant with a dense recomputation after every pick, and checks
/// that the gain sequence never increases.
pub fn dpp_dense_suite(trials: usize, seed: u64) -> Result<PropertyReport> {
    let outcomes = run_trials(trials, seed, |t, rng| {
        let inst = pose_instance(rng, 2, 32);
        let u = LogDet::new(build_matrix(
            &inst.trajectory()?,
            &DistanceWeights::default(),
        )?);
        let n = u.n();
        let run = match greedy_select(&u, n, rng.random()) {
            Ok(run) => run,
            Err(Error::NumericalSingularity { .. }) => return Ok(TrialOutcome::Skipped),
            Err(e) => return Err(e),
        };
        let mut state = u.empty_state();
        for (step, &pick) in run.indices.iter().enumerate() {
            u.commit(&mut state, pick)?;
            let prefix = &run.indices[..=step];
            let dense = dense_log_det(u.matrix(), 0.0, prefix).unwrap_or(f64::NEG_INFINITY);
            let err = (state.log_det - dense).abs();
            let scaled = DPP_DENSE_TOLERANCE * dense.abs().max(1.0);
            let increase = if step > 0 {
                run.gains[step] - run.gains[step - 1]
            } else {
                0.0
            };
            let mismatch = err.is_nan() || err > scaled;
            if mismatch || increase > PROPERTY_TOLERANCE {
                return Ok(TrialOutcome::Violated(Box::new(Violation {
                    trial: t,
                    set_a: prefix.to_vec(),
                    set_b: Vec::new(),
                    element: Some(pick),
                    value_a: state.log_det,
                    value_b: dense,
                    magnitude: if mismatch { err } else { increase },
                    instance: serde_json::to_value(&inst).ok(),
                })));
            }
        }
        Ok(TrialOutcome::Passed)
    })?;
    Ok(PropertyReport::assemble(
        "dpp_dense",
        Some(UtilityKind::Dpp),
        seed,
        Expectation::NoViolations,
        outcomes,
    ))
}
