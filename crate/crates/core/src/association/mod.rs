//! Instance distances, their fusion, Hungarian matching, image-wise distance
//! and confidence-filtered association between two views.

mod hungarian;

pub use hungarian::{assignment_cost, hungarian};

use serde::{Deserialize, Serialize};

use crate::diffcore::{pairwise_distances as raw_distances, Matrix};
use crate::encoder::InstanceFeatures;
use crate::error::{Error, Result};

/// Paper default weight of the appearance distance.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// How raw Euclidean distance matrices are made commensurate before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide each matrix by its largest entry.
    #[default]
    MaxEntry,
    /// L2-normalize every feature vector before taking distances.
    UnitFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistancePair {
    pub appearance: Option<Matrix>,
    pub geometric: Matrix,
}

/// Divides by the largest entry; all-zero (or empty) matrices are returned
/// unchanged.
pub fn max_normalize(m: &Matrix) -> Matrix {
    match m.max() {
        Some(max) if max > 0.0 => m.map(|x| x / max),
        _ => m.clone(),
    }
}

fn unit_rows(rows: &[&[f64]]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                r.iter().map(|x| x / n).collect()
            } else {
                r.to_vec()
            }
        })
        .collect()
}

pub(crate) fn distance_matrix(a: &[&[f64]], b: &[&[f64]], norm: Normalization) -> Result<Matrix> {
    let (a, b): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match norm {
        Normalization::MaxEntry => (
            a.iter().map(|r| r.to_vec()).collect(),
            b.iter().map(|r| r.to_vec()).collect(),
        ),
        Normalization::UnitFeatures => (unit_rows(a), unit_rows(b)),
    };
    if a.is_empty() || b.is_empty() {
        return Ok(Matrix::zeros(a.len(), b.len()));
    }
    let ma = Matrix::from_rows(&a)?;
    let mb = Matrix::from_rows(&b)?;
    if ma.cols() != mb.cols() {
        return Err(Error::Dimension {
            op: "pairwise_distances",
            lhs: ma.shape(),
            rhs: mb.shape(),
        });
    }
    let d = raw_distances(&ma, &mb);
    Ok(match norm {
        Normalization::MaxEntry => max_normalize(&d),
        Normalization::UnitFeatures => d,
    })
}

fn appearance_presence(feats: &[InstanceFeatures]) -> Result<Option<bool>> {
    let with = feats.iter().filter(|f| f.appearance.is_some()).count();
    match with {
        0 if feats.is_empty() => Ok(None),
        0 => Ok(Some(false)),
        n if n == feats.len() => Ok(Some(true)),
        _ => Err(Error::Data("appearance present for only some instances".into())),
    }
}

/// Normalized geometric and (when available) appearance distance matrices.
pub fn pairwise_distances(
    fi: &[InstanceFeatures],
    fj: &[InstanceFeatures],
    norm: Normalization,
) -> Result<DistancePair> {
    let pi = appearance_presence(fi)?;
    let pj = appearance_presence(fj)?;
    if let (Some(a), Some(b)) = (pi, pj) {
        if a != b {
            return Err(Error::Data("appearance present in one view only".into()));
        }
    }
    let has_app = pi.or(pj).unwrap_or(false);
    let gi: Vec<&[f64]> = fi.iter().map(|f| f.geometric.as_slice()).collect();
    let gj: Vec<&[f64]> = fj.iter().map(|f| f.geometric.as_slice()).collect();
    let geometric = distance_matrix(&gi, &gj, norm)?;
    let appearance = if has_app {
        let ai: Vec<&[f64]> = fi.iter().filter_map(|f| f.appearance.as_deref()).collect();
        let aj: Vec<&[f64]> = fj.iter().filter_map(|f| f.appearance.as_deref()).collect();
        Some(distance_matrix(&ai, &aj, norm)?)
    } else {
        None
    };
    Ok(DistancePair { appearance, geometric })
}

/// `α·D_a + (1−α)·D_g`; without appearance distances α is taken as 0.
pub fn fuse(appearance: Option<&Matrix>, geometric: &Matrix, alpha: f64) -> Result<Matrix> {
    let Some(da) = appearance else {
        return Ok(geometric.clone());
    };
    if da.shape() != geometric.shape() {
        return Err(Error::Dimension {
            op: "fuse",
            lhs: da.shape(),
            rhs: geometric.shape(),
        });
    }
    if alpha == 0.0 {
        return Ok(geometric.clone());
    }
    if alpha == 1.0 {
        return Ok(da.clone());
    }
    let data = da
        .data()
        .iter()
        .zip(geometric.data())
        .map(|(a, g)| alpha * a + (1.0 - alpha) * g)
        .collect();
    Matrix::from_vec(da.rows(), da.cols(), data)
}

/// Mean matched distance, `(1/m)·Σ D[r][c]` with `m = min(P_i, P_j)`;
/// `None` when either side is empty.
pub fn image_distance(d: &Matrix, matches: &[(usize, usize)]) -> Option<f64> {
    let m = d.rows().min(d.cols());
    if m == 0 {
        return None;
    }
    Some(matches.iter().map(|&(r, c)| d.get(r, c)).sum::<f64>() / m as f64)
}

/// `1 − D / max D`, with every score 1 when the maximum is zero.
pub fn confidence_scores(d: &Matrix) -> Matrix {
    match d.max() {
        Some(max) if max > 0.0 => d.map(|x| 1.0 - x / max),
        _ => Matrix::filled(d.rows(), d.cols(), 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub row: usize,
    pub col: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssociationResult {
    pub matches: Vec<Match>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationParams {
    pub alpha: f64,
    /// Matches whose confidence falls below this value are dropped.
    pub threshold: f64,
    pub normalization: Normalization,
}

impl Default for AssociationParams {
    fn default() -> Self {
        AssociationParams {
            alpha: DEFAULT_ALPHA,
            threshold: 0.4,
            normalization: Normalization::MaxEntry,
        }
    }
}

impl AssociationParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0,1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Fused distance matrix between two views' instances.
pub fn fused_distances(fi: &[InstanceFeatures], fj: &[InstanceFeatures], params: &AssociationParams) -> Result<Matrix> {
    let pair = pairwise_distances(fi, fj, params.normalization)?;
    fuse(pair.appearance.as_ref(), &pair.geometric, params.alpha)
}

/// Hungarian matching on a fused distance matrix, keeping matches whose
/// confidence reaches `threshold`.
pub fn associate_distances(d: &Matrix, threshold: f64) -> Result<AssociationResult> {
    let pairs = hungarian(d)?;
    let scores = confidence_scores(d);
    let matches: Vec<Match> = pairs
        .into_iter()
        .map(|(row, col)| Match {
            row,
            col,
            confidence: scores.get(row, col),
        })
        .filter(|m| m.confidence >= threshold)
        .collect();
    let unmatched_rows = (0..d.rows()).filter(|r| !matches.iter().any(|m| m.row == *r)).collect();
    let unmatched_cols = (0..d.cols()).filter(|c| !matches.iter().any(|m| m.col == *c)).collect();
    Ok(AssociationResult {
        matches,
        unmatched_rows,
        unmatched_cols,
    })
}

pub fn associate(
    fi: &[InstanceFeatures],
    fj: &[InstanceFeatures],
    params: &AssociationParams,
) -> Result<AssociationResult> {
    params.validate()?;
    let d = fused_distances(fi, fj, params)?;
    associate_distances(&d, params.threshold)
}
