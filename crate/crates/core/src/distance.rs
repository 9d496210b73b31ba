//! Pairwise view affinities and the combined affinity matrix.
//!
//! Each measure lies in `[0, 1]` with 1 meaning "the same view" and 0 meaning
//! "as different as possible". The matrix entry for a pair is the convex
//! combination `alpha·position + beta·orientation + gamma·semantic`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CameraView, DistanceWeights, Trajectory};

/// Gaussian kernel on camera positions.
pub fn dist3d(a: &CameraView, b: &CameraView, sigma: f64) -> f64 {
    let d2 = (a.position - b.position).norm_squared();
    (-d2 / (2.0 * sigma * sigma)).exp().max(0.0)
}

/// `(trace(RaᵀRb) + 1) / 4`, i.e. the squared quaternion inner product.
pub fn ang3d(a: &CameraView, b: &CameraView) -> f64 {
    // trace(AᵀB) is the Frobenius inner product of A and B.
    let tr = a.rotation.dot(&b.rotation);
    ((tr + 1.0) / 4.0).clamp(0.0, 1.0)
}

/// Cosine similarity of the feature vectors, clamped at 0.
pub fn distsem(a: &CameraView, b: &CameraView) -> Result<f64> {
    let fa = a
        .feature
        .as_deref()
        .ok_or(Error::MissingFeatures { view: a.id })?;
    let fb = b
        .feature
        .as_deref()
        .ok_or(Error::MissingFeatures { view: b.id })?;
    if fa.len() != fb.len() {
        return Err(Error::Validation {
            frame: b.id,
            message: format!("feature dimension {} differs from {}", fb.len(), fa.len()),
        });
    }
    Ok(cosine(fa, fb).clamp(0.0, 1.0))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Dense symmetric `n × n` affinity matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    entries: Vec<f64>,
    weights: DistanceWeights,
}

impl AffinityMatrix {
    /// Wraps a row-major matrix. The caller is responsible for symmetry and range.
    pub fn from_entries(n: usize, entries: Vec<f64>, weights: DistanceWeights) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Config(format!(
                "{} entries cannot form a {n}×{n} matrix",
                entries.len()
            )));
        }
        Ok(AffinityMatrix {
            n,
            entries,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn weights(&self) -> &DistanceWeights {
        &self.weights
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    /// One row per line, comma separated, shortest round-trip decimal per entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n {
            let line = self
                .row(i)
                .iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(",");
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Builds the affinity matrix. Only the upper triangle is evaluated; rows are
/// computed in parallel and each entry is a pure function of its pair, so the
/// result does not depend on scheduling.
pub fn build_matrix(traj: &Trajectory, weights: &DistanceWeights) -> Result<AffinityMatrix> {
    weights.validate()?;
    let views = traj.views();
    let use_sem = weights.gamma > 0.0;
    if use_sem {
        if let Some(v) = views.iter().find(|v| v.feature.is_none()) {
            return Err(Error::MissingFeatures { view: v.id });
        }
        let dim = views[0].feature.as_ref().map(Vec::len);
        if let Some(v) = views
            .iter()
            .find(|v| v.feature.as_ref().map(Vec::len) != dim)
        {
            return Err(Error::Validation {
                frame: v.id,
                message: "feature dimensions differ across views".into(),
            });
        }
    }

    let n = views.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = &views[i];
            views[i..]
                .iter()
                .map(|b| {
                    if a.id == b.id {
                        // Every measure is exactly 1 here and the weights sum to 1.
                        return 1.0;
                    }
                    let mut m =
                        weights.alpha * dist3d(a, b, weights.sigma) + weights.beta * ang3d(a, b);
                    if use_sem {
                        let fa = a.feature.as_deref().unwrap();
                        let fb = b.feature.as_deref().unwrap();
                        m += weights.gamma * cosine(fa, fb).clamp(0.0, 1.0);
                    }
                    m.clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();

    let mut entries = vec![0.0; n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, m) in row.into_iter().enumerate() {
            let j = i + off;
            entries[i * n + j] = m;
            entries[j * n + i] = m;
        }
    }
    Ok(AffinityMatrix {
        n,
        entries,
        weights: *weights,
    })
}
