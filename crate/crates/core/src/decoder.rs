//! Per-view linear re-projection of geometric features back to box corners,
//! and the L1 re-projection loss against the detected boxes.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::BoundingBox;
use crate::diffcore::{Graph, Matrix, Var};
use crate::encoder::{corner_leaves, glorot, EncoderVars};
use crate::error::{Error, Result};

/// One affine map per camera. Weights are stored `G × 4` and applied as
/// `f·W + B`, so the output row is `[x_l, y_l, x_r, y_r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDecoders {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

impl ViewDecoders {
    pub fn init(cameras: usize, feature_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ViewDecoders {
            weights: (0..cameras).map(|_| glorot(rng, feature_dim, 4)).collect(),
            biases: (0..cameras).map(|_| Matrix::filled(1, 4, 0.5)).collect(),
        }
    }

    pub fn cameras(&self) -> usize {
        self.weights.len()
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn check_shapes(&self, cameras: usize, feature_dim: usize) -> Result<()> {
        if self.weights.len() != cameras || self.biases.len() != cameras {
            return Err(Error::Data("decoder count differs from camera count".into()));
        }
        if self
            .weights
            .iter()
            .zip(&self.biases)
            .any(|(w, b)| w.shape() != (feature_dim, 4) || b.shape() != (1, 4))
        {
            return Err(Error::Data("decoder tensor has the wrong shape".into()));
        }
        Ok(())
    }

    /// Plain evaluation for a single feature vector.
    pub fn decode(&self, feature: &[f64], camera: usize) -> Result<BoundingBox> {
        let (w, b) = match (self.weights.get(camera), self.biases.get(camera)) {
            (Some(w), Some(b)) => (w, b),
            _ => {
                return Err(Error::Index {
                    what: "decoder camera",
                    index: camera,
                    len: self.cameras(),
                })
            }
        };
        if feature.len() != w.rows() {
            return Err(Error::Dimension {
                op: "decode",
                lhs: (1, feature.len()),
                rhs: w.shape(),
            });
        }
        let mut out = [0.0; 4];
        for (k, o) in out.iter_mut().enumerate() {
            *o = b.data()[k] + feature.iter().enumerate().map(|(i, f)| f * w.get(i, k)).sum::<f64>();
        }
        Ok(BoundingBox::new(out[0], out[1], out[2], out[3]))
    }
}

#[derive(Debug, Clone)]
pub struct DecoderVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl DecoderVars {
    pub fn bind(g: &mut Graph, d: &ViewDecoders) -> Self {
        DecoderVars {
            weights: d.weights.iter().map(|w| g.leaf(w.clone())).collect(),
            biases: d.biases.iter().map(|b| g.leaf(b.clone())).collect(),
        }
    }

    pub fn leaves(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [*w, *b])
            .collect()
    }

    /// Decodes every row of `features` with camera `camera`'s map, giving a
    /// `P×4` corner matrix.
    pub fn decode(&self, g: &mut Graph, features: Var, camera: usize) -> Result<Var> {
        let (w, b) = match (self.weights.get(camera), self.biases.get(camera)) {
            (Some(w), Some(b)) => (*w, *b),
            _ => {
                return Err(Error::Index {
                    what: "decoder camera",
                    index: camera,
                    len: self.weights.len(),
                })
            }
        };
        let lin = g.matmul(features, w)?;
        g.add_row(lin, b)
    }
}

/// Re-projection loss and whether it was computed on an empty set.
#[derive(Debug, Clone, Copy)]
pub struct ReprojectionLoss {
    pub loss: Var,
    pub empty: bool,
}

/// L1 re-projection loss of already encoded features: the mean over
/// instances of the mean absolute error of the top-left corner plus that of
/// the bottom-right corner.
///
/// `rows[k]` selects the feature row of `boxes[k]`.
pub fn reprojection_loss_from_features(
    g: &mut Graph,
    decoders: &DecoderVars,
    features: Var,
    rows: &[usize],
    boxes: &[BoundingBox],
    cameras: &[usize],
) -> Result<ReprojectionLoss> {
    if boxes.is_empty() {
        return Ok(ReprojectionLoss {
            loss: g.constant_scalar(0.0),
            empty: true,
        });
    }
    if rows.len() != boxes.len() || cameras.len() != boxes.len() {
        return Err(Error::Contract("rows, boxes and cameras must align".into()));
    }
    let total = boxes.len() as f64;
    let mut cams: Vec<usize> = cameras.to_vec();
    cams.sort_unstable();
    cams.dedup();
    let mut acc: Option<Var> = None;
    for cam in cams {
        let idx: Vec<usize> = (0..boxes.len()).filter(|&k| cameras[k] == cam).collect();
        let sel: Vec<usize> = idx.iter().map(|&k| rows[k]).collect();
        let f = g.gather_rows(features, &sel)?;
        let pred = decoders.decode(g, f, cam)?;
        let target = Matrix::from_rows(&idx.iter().map(|&k| boxes[k].corners()).collect::<Vec<_>>())?;
        let l1 = g.l1_loss(pred, &target)?;
        // mean over 4n entries → (per-corner mean summed over two corners)
        // averaged over n instances, weighted by this camera's share.
        let part = g.scale(l1, 2.0 * idx.len() as f64 / total);
        acc = Some(match acc {
            None => part,
            Some(a) => g.add(a, part)?,
        });
    }
    Ok(ReprojectionLoss {
        loss: acc.expect("at least one camera"),
        empty: false,
    })
}

/// Encodes `boxes` and computes their re-projection loss.
pub fn reprojection_loss(
    g: &mut Graph,
    encoder: &EncoderVars,
    decoders: &DecoderVars,
    boxes: &[BoundingBox],
    cameras: &[usize],
) -> Result<ReprojectionLoss> {
    if boxes.is_empty() {
        return Ok(ReprojectionLoss {
            loss: g.constant_scalar(0.0),
            empty: true,
        });
    }
    let (tl, br) = corner_leaves(g, boxes);
    let f = encoder.encode(g, tl, br, cameras)?;
    let rows: Vec<usize> = (0..boxes.len()).collect();
    reprojection_loss_from_features(g, decoders, f, &rows, boxes, cameras)
}
