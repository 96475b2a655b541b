//! Observation vectors and target standardization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DedicatedFeatures, VehicleState, DEDICATED_DIM};
use crate::geometry::{GeometryError, LookaheadWindow, Track, DEFAULT_RAY_RANGE, N_RAYS};

pub const ENV_DIM: usize = 27;
pub const EMBED_DIM: usize = 64;
pub const POLICY_DIM: usize = EMBED_DIM + DEDICATED_DIM;
pub const PRIVILEGED_DIM: usize = ENV_DIM + DEDICATED_DIM;
/// Floor applied to per-element standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Index ranges of the target groups inside an [`EnvObservation`].
pub mod slots {
    use std::ops::Range;
    pub const RAYS: Range<usize> = 0..13;
    pub const EDGES: Range<usize> = 13..15;
    pub const LATERAL: Range<usize> = 15..16;
    pub const HEADING: Range<usize> = 16..17;
    pub const CURVATURES: Range<usize> = 17..27;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObsError {
    #[error("expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Rays (13), left and right edge minima, signed lateral offset, heading
/// angle, 10 lookahead curvatures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvObservation(pub [f64; ENV_DIM]);

impl EnvObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Assembles the 27-element observation from the individual geometry queries.
pub fn env_observation(track: &Track, state: &VehicleState, window: &LookaheadWindow) -> Result<EnvObservation, ObsError> {
    let pose = &state.pose;
    let rays = track.ray_edge_distances(pose, DEFAULT_RAY_RANGE)?;
    let (dl, dr) = track.min_edge_distances(pose)?;
    let proj = track.project(pose.position)?;
    let heading = track.heading_angle(pose)?;
    let curv = track.curvature_lookahead(proj.s, &window.distances());
    if curv.len() + N_RAYS + 4 != ENV_DIM {
        return Err(ObsError::DimensionMismatch {
            expected: ENV_DIM,
            actual: curv.len() + N_RAYS + 4,
        });
    }
    let mut o = [0.0; ENV_DIM];
    o[slots::RAYS].copy_from_slice(&rays);
    o[13] = dl;
    o[14] = dr;
    o[15] = proj.lateral;
    o[16] = heading;
    o[slots::CURVATURES].copy_from_slice(&curv);
    Ok(EnvObservation(o))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Per-element population mean and standard deviation. Accumulates in
    /// sorted order per element so the result does not depend on sample order.
    pub fn fit<'a, I>(targets: I) -> Result<Self, ObsError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = targets.into_iter().collect();
        let Some(first) = rows.first() else {
            return Err(ObsError::EmptyDataset);
        };
        let dim = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(ObsError::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        let mut col = Vec::with_capacity(rows.len());
        for j in 0..dim {
            col.clear();
            col.extend(rows.iter().map(|r| r[j]));
            col.sort_by(f64::total_cmp);
            let m = col.iter().sum::<f64>() / n;
            let mut devs: Vec<f64> = col.iter().map(|v| (v - m) * (v - m)).collect();
            devs.sort_by(f64::total_cmp);
            mean[j] = m;
            std[j] = (devs.iter().sum::<f64>() / n).sqrt().max(STD_FLOOR);
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| v * s + m).collect()
    }
}

/// Embedding (64) followed by the dedicated features (11).
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyObservation(pub Vec<f64>);

pub fn assemble_policy_input(embedding: &[f64], ded: &DedicatedFeatures) -> Result<PolicyObservation, ObsError> {
    if embedding.len() != EMBED_DIM {
        return Err(ObsError::DimensionMismatch {
            expected: EMBED_DIM,
            actual: embedding.len(),
        });
    }
    let mut v = Vec::with_capacity(POLICY_DIM);
    v.extend_from_slice(embedding);
    v.extend_from_slice(ded.as_slice());
    Ok(PolicyObservation(v))
}

/// Standardized ground-truth observation (27) followed by the dedicated features (11).
pub fn assemble_privileged_input(
    env: &EnvObservation,
    standardizer: &Standardizer,
    ded: &DedicatedFeatures,
) -> Result<PolicyObservation, ObsError> {
    if standardizer.dim() != ENV_DIM {
        return Err(ObsError::DimensionMismatch {
            expected: ENV_DIM,
            actual: standardizer.dim(),
        });
    }
    let mut v = standardizer.apply(env.as_slice());
    v.extend_from_slice(ded.as_slice());
    Ok(PolicyObservation(v))
}
