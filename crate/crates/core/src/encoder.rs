//! Geometric encoder: learnable Fourier features of both box corners,
//! concatenated with a learnable per-camera embedding and passed through a
//! stack of fully connected blocks.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{BoundingBox, Detection};
use crate::diffcore::{Graph, Matrix, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};

/// Shape of the encoder. The last entry of `blocks` is the feature size G.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub cameras: usize,
    /// Number of Fourier basis frequencies N.
    pub frequencies: usize,
    /// Camera embedding size V.
    pub camera_dim: usize,
    /// Output width of each fully connected block.
    pub blocks: Vec<usize>,
}

impl EncoderConfig {
    pub fn new(cameras: usize) -> Self {
        EncoderConfig {
            cameras,
            frequencies: 128,
            camera_dim: 64,
            blocks: vec![256, 256, 256],
        }
    }

    /// Width of one corner's positional encoding, 2N.
    pub fn encoding_dim(&self) -> usize {
        2 * self.frequencies
    }

    /// Width of the block-stack input, 4N + V.
    pub fn input_dim(&self) -> usize {
        2 * self.encoding_dim() + self.camera_dim
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras == 0 || self.frequencies == 0 || self.camera_dim == 0 {
            return Err(Error::Config("encoder dimensions must be at least 1".into()));
        }
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return Err(Error::Config(
                "encoder needs at least one block of positive width".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcBlock {
    /// `in × out`, applied as `x·W`.
    pub weight: Matrix,
    pub gain: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// Fourier basis frequencies, `N × 2`.
    pub fourier: Matrix,
    /// Camera embeddings, `C × V`.
    pub cameras: Matrix,
    pub blocks: Vec<FcBlock>,
}

pub(crate) fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized buffer")
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Matrix {
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let fourier = normal(rng, config.frequencies, 2, 1.0);
        let cameras = normal(rng, config.cameras, config.camera_dim, 0.1);
        let mut blocks = Vec::with_capacity(config.blocks.len());
        let mut fan_in = config.input_dim();
        for &width in &config.blocks {
            blocks.push(FcBlock {
                weight: glorot(rng, fan_in, width),
                gain: Matrix::filled(1, width, 1.0),
                bias: Matrix::zeros(1, width),
            });
            fan_in = width;
        }
        Ok(EncoderParams {
            config,
            fourier,
            cameras,
            blocks,
        })
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.fourier, &self.cameras];
        for b in &self.blocks {
            out.extend([&b.weight, &b.gain, &b.bias]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.fourier, &mut self.cameras];
        for b in &mut self.blocks {
            out.extend([&mut b.weight, &mut b.gain, &mut b.bias]);
        }
        out
    }

    /// Checks that every tensor matches the declared configuration.
    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let bad = |what: &str| Err(Error::Data(format!("encoder tensor `{what}` has the wrong shape")));
        if self.fourier.shape() != (c.frequencies, 2) {
            return bad("fourier");
        }
        if self.cameras.shape() != (c.cameras, c.camera_dim) {
            return bad("cameras");
        }
        if self.blocks.len() != c.blocks.len() {
            return bad("blocks");
        }
        let mut fan_in = c.input_dim();
        for (b, &w) in self.blocks.iter().zip(&c.blocks) {
            if b.weight.shape() != (fan_in, w) || b.gain.shape() != (1, w) || b.bias.shape() != (1, w) {
                return bad("block");
            }
            fan_in = w;
        }
        Ok(())
    }
}

/// Encoder parameters bound as leaves of a graph.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub fourier: Var,
    /// Transposed basis, `2 × N`.
    fourier_t: Var,
    pub cameras: Var,
    pub blocks: Vec<[Var; 3]>,
    camera_count: usize,
}

impl EncoderVars {
    pub fn bind(g: &mut Graph, p: &EncoderParams) -> Self {
        let fourier = g.leaf(p.fourier.clone());
        let cameras = g.leaf(p.cameras.clone());
        let blocks = p
            .blocks
            .iter()
            .map(|b| [g.leaf(b.weight.clone()), g.leaf(b.gain.clone()), g.leaf(b.bias.clone())])
            .collect();
        Self::from_leaves(g, fourier, cameras, blocks, p.config.cameras)
    }

    /// Builds from already-created leaves, in [`EncoderParams::tensors`] order.
    pub fn from_leaves(g: &mut Graph, fourier: Var, cameras: Var, blocks: Vec<[Var; 3]>, camera_count: usize) -> Self {
        let fourier_t = g.transpose(fourier);
        EncoderVars {
            fourier,
            fourier_t,
            cameras,
            blocks,
            camera_count,
        }
    }

    pub fn leaves(&self) -> Vec<Var> {
        let mut out = vec![self.fourier, self.cameras];
        for b in &self.blocks {
            out.extend(b.iter().copied());
        }
        out
    }

    /// `γ(v)` for each row of a `P×2` matrix of points: interleaved
    /// `[sin f₁, cos f₁, …, sin f_N, cos f_N]` with `f_j = 2π b_jᵀv`.
    pub fn positional_encoding(&self, g: &mut Graph, points: Var) -> Result<Var> {
        let proj = g.matmul(points, self.fourier_t)?;
        let phases = g.scale(proj, TAU);
        let (s, c) = g.sin_cos(phases);
        g.interleave_cols(s, c)
    }

    /// Geometric features for boxes given as `P×2` top-left and bottom-right
    /// corner matrices, with the camera index of each row.
    pub fn encode(&self, g: &mut Graph, top_left: Var, bottom_right: Var, cameras: &[usize]) -> Result<Var> {
        if g.value(top_left).rows() != cameras.len() {
            return Err(Error::Dimension {
                op: "encode",
                lhs: g.value(top_left).shape(),
                rhs: (cameras.len(), 1),
            });
        }
        for &c in cameras {
            if c >= self.camera_count {
                return Err(Error::Index {
                    what: "camera",
                    index: c,
                    len: self.camera_count,
                });
            }
        }
        let gl = self.positional_encoding(g, top_left)?;
        let gr = self.positional_encoding(g, bottom_right)?;
        let cam = g.gather_rows(self.cameras, cameras)?;
        let mut x = g.concat_cols(&[gl, gr, cam])?;
        let last = self.blocks.len() - 1;
        for (k, [w, gain, bias]) in self.blocks.iter().enumerate() {
            let h = g.matmul(x, *w)?;
            let n = g.layer_norm(h, *gain, *bias, LAYER_NORM_EPS)?;
            x = if k == last { n } else { g.relu(n) };
        }
        Ok(x)
    }

    /// Encodes constant boxes.
    pub fn encode_boxes(&self, g: &mut Graph, boxes: &[BoundingBox], cameras: &[usize]) -> Result<Var> {
        let (tl, br) = corner_leaves(g, boxes);
        self.encode(g, tl, br, cameras)
    }
}

/// Creates `P×2` leaves for the two corner sets of `boxes`.
pub fn corner_leaves(g: &mut Graph, boxes: &[BoundingBox]) -> (Var, Var) {
    let tl: Vec<f64> = boxes.iter().flat_map(|b| b.top_left()).collect();
    let br: Vec<f64> = boxes.iter().flat_map(|b| b.bottom_right()).collect();
    let n = boxes.len();
    (
        g.leaf(Matrix::from_vec(n, 2, tl).expect("sized")),
        g.leaf(Matrix::from_vec(n, 2, br).expect("sized")),
    )
}

/// Per-person features used for association.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFeatures {
    pub geometric: Vec<f64>,
    pub appearance: Option<Vec<f64>>,
}

/// Encodes one camera view's detections. Appearance vectors are passed
/// through unchanged.
pub fn encode_batch(params: &EncoderParams, detections: &[Detection]) -> Result<Vec<InstanceFeatures>> {
    let with_app = detections.iter().filter(|d| d.appearance.is_some()).count();
    if with_app != 0 && with_app != detections.len() {
        return Err(Error::Data("appearance present for only some detections".into()));
    }
    if let Some(first) = detections.first().and_then(|d| d.appearance.as_ref()) {
        if detections
            .iter()
            .any(|d| d.appearance.as_ref().map(Vec::len) != Some(first.len()))
        {
            return Err(Error::Data("ragged appearance dimensions".into()));
        }
    }
    if detections.is_empty() {
        return Ok(Vec::new());
    }
    let mut g = Graph::new();
    let vars = EncoderVars::bind(&mut g, params);
    let boxes: Vec<BoundingBox> = detections.iter().map(|d| d.bbox).collect();
    let cams: Vec<usize> = detections.iter().map(|d| d.camera).collect();
    let f = vars.encode_boxes(&mut g, &boxes, &cams)?;
    let fv = g.value(f);
    Ok(detections
        .iter()
        .enumerate()
        .map(|(i, d)| InstanceFeatures {
            geometric: fv.row(i).to_vec(),
            appearance: d.appearance.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::diffcore::gradient_check;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            cameras: 3,
            frequencies: 4,
            camera_dim: 3,
            blocks: vec![6, 5],
        }
    }

    fn params(cfg: EncoderConfig, seed: u64) -> EncoderParams {
        EncoderParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn default_dimension_chain() {
        let cfg = EncoderConfig::new(3);
        assert_eq!(cfg.encoding_dim(), 256);
        assert_eq!(cfg.input_dim(), 576);
        assert_eq!(cfg.output_dim(), 256);
        let p = params(cfg, 0);
        p.check_shapes().unwrap();
        let mut g = Graph::new();
        let v = EncoderVars::bind(&mut g, &p);
        let b = [BoundingBox::new(0.1, 0.2, 0.3, 0.6)];
        let f = v.encode_boxes(&mut g, &b, &[2]).unwrap();
        assert_eq!(g.value(f).shape(), (1, 256));
    }

    #[test]
    fn encoding_of_origin_alternates() {
        let p = params(small_config(), 1);
        let mut g = Graph::new();
        let v = EncoderVars::bind(&mut g, &p);
        let pts = g.leaf(Matrix::zeros(1, 2));
        let e = v.positional_encoding(&mut g, pts).unwrap();
        assert_eq!(g.value(e).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_frequencies_make_encoding_constant() {
        let mut p = params(small_config(), 1);
        p.fourier = Matrix::zeros(4, 2);
        let mut g = Graph::new();
        let v = EncoderVars::bind(&mut g, &p);
        let a = g.leaf(Matrix::row_vector(&[0.3, 0.9]));
        let b = g.leaf(Matrix::row_vector(&[0.7, 0.1]));
        let ea = v.positional_encoding(&mut g, a).unwrap();
        let eb = v.positional_encoding(&mut g, b).unwrap();
        assert_eq!(g.value(ea), g.value(eb));
    }

    #[test]
    fn encoding_matches_scalar_loop() {
        let p = params(small_config(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let mut g = Graph::new();
        let v = EncoderVars::bind(&mut g, &p);
        for _ in 0..10 {
            let pt = [rng.random::<f64>(), rng.random::<f64>()];
            let leaf = g.leaf(Matrix::row_vector(&pt));
            let e = v.positional_encoding(&mut g, leaf).unwrap();
            let got = g.value(e).data().to_vec();
            for j in 0..4 {
                let f = 2.0 * std::f64::consts::PI * (p.fourier.get(j, 0) * pt[0] + p.fourier.get(j, 1) * pt[1]);
                assert!((got[2 * j] - f.sin()).abs() < 1e-12);
                assert!((got[2 * j + 1] - f.cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_boxes_identical_features_and_permutation_equivariance() {
        let p = params(small_config(), 2);
        let boxes = [
            BoundingBox::new(0.1, 0.1, 0.2, 0.5),
            BoundingBox::new(0.4, 0.3, 0.5, 0.8),
            BoundingBox::new(0.1, 0.1, 0.2, 0.5),
        ];
        let mut g = Graph::new();
        let v = EncoderVars::bind(&mut g, &p);
        let f = v.encode_boxes(&mut g, &boxes, &[0, 0, 0]).unwrap();
        let fv = g.value(f).clone();
        assert_eq!(fv.row(0), fv.row(2));
        let perm = [boxes[1], boxes[2], boxes[0]];
        let fp = v.encode_boxes(&mut g, &perm, &[0, 0, 0]).unwrap();
        let fpv = g.value(fp);
        assert_eq!(fpv.row(0), fv.row(1));
        assert_eq!(fpv.row(1), fv.row(2));
        assert_eq!(fpv.row(2), fv.row(0));
    }

    #[test]
    fn camera_index_changes_features() {
        let p = params(small_config(), 3);
        let b = [BoundingBox::new(0.2, 0.2, 0.3, 0.6)];
        let mut g = Graph::new();
        let v = EncoderVars::bind(&mut g, &p);
        let f0 = v.encode_boxes(&mut g, &b, &[0]).unwrap();
        let f1 = v.encode_boxes(&mut g, &b, &[1]).unwrap();
        assert_ne!(g.value(f0), g.value(f1));
        assert!(matches!(v.encode_boxes(&mut g, &b, &[3]), Err(Error::Index { .. })));
    }

    #[test]
    fn feature_norm_gradient_wrt_corners() {
        let p = params(small_config(), 4);
        let corners = [
            Matrix::from_rows(&[[0.1, 0.2], [0.5, 0.4]]).unwrap(),
            Matrix::from_rows(&[[0.3, 0.7], [0.6, 0.9]]).unwrap(),
        ];
        let report = gradient_check(
            |g, v| {
                let vars = EncoderVars::bind(g, &p);
                let f = vars.encode(g, v[0], v[1], &[0, 2])?;
                let sq = g.mul(f, f)?;
                Ok(g.sum(sq))
            },
            &corners,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.max_rel_error);
    }

    #[test]
    fn encode_batch_checks_appearance() {
        let p = params(small_config(), 5);
        let det = |app: Option<Vec<f64>>| Detection {
            frame: 0,
            camera: 1,
            bbox: BoundingBox::new(0.1, 0.1, 0.2, 0.4),
            identity: None,
            appearance: app,
        };
        assert!(encode_batch(&p, &[det(Some(vec![1.0])), det(None)]).is_err());
        assert!(encode_batch(&p, &[det(Some(vec![1.0])), det(Some(vec![1.0, 2.0]))]).is_err());
        let out = encode_batch(&p, &[det(Some(vec![1.0])), det(Some(vec![2.0]))]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].appearance, Some(vec![2.0]));
        assert_eq!(out[0].geometric, out[1].geometric);
        assert_eq!(out[0].geometric.len(), 5);
    }
}
