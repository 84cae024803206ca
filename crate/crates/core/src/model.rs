//! Encoder plus per-view decoders, and their JSON checkpoint form.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{BoundingBox, MultiViewFrame};
use crate::decoder::{DecoderVars, ViewDecoders};
use crate::diffcore::{Graph, Matrix, Var};
use crate::encoder::{EncoderConfig, EncoderParams, EncoderVars, InstanceFeatures};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mvassoc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: EncoderParams,
    pub decoders: ViewDecoders,
}

impl Model {
    pub fn init(config: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let encoder = EncoderParams::init(config, rng)?;
        let decoders = ViewDecoders::init(encoder.config.cameras, encoder.config.output_dim(), rng);
        Ok(Model { encoder, decoders })
    }

    pub fn from_seed(config: EncoderConfig, seed: u64) -> Result<Self> {
        Self::init(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn cameras(&self) -> usize {
        self.encoder.config.cameras
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.config.output_dim()
    }

    /// All trainable tensors: encoder first, then decoders.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoders.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoders.tensors_mut());
        t
    }

    /// Encoder and decoder views over leaves given in [`Model::tensors`]
    /// order.
    pub fn bind_leaves(&self, g: &mut Graph, leaves: &[Var]) -> Result<(EncoderVars, DecoderVars)> {
        let n_enc = self.encoder.tensors().len();
        if leaves.len() != n_enc + self.decoders.tensors().len() {
            return Err(Error::Contract(
                "leaf count differs from the model's tensor count".into(),
            ));
        }
        let blocks = leaves[2..n_enc].chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let enc = EncoderVars::from_leaves(g, leaves[0], leaves[1], blocks, self.cameras());
        let dec = &leaves[n_enc..];
        let dec = DecoderVars {
            weights: dec.iter().step_by(2).copied().collect(),
            biases: dec.iter().skip(1).step_by(2).copied().collect(),
        };
        Ok((enc, dec))
    }

    pub fn check(&self) -> Result<()> {
        self.encoder.check_shapes()?;
        self.decoders.check_shapes(self.cameras(), self.feature_dim())?;
        if self.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::Data("model contains non-finite parameters".into()));
        }
        Ok(())
    }

    /// Geometric features of every detection in `frame`, one list per view.
    /// Appearance vectors are attached only when `appearance` is set.
    pub fn frame_features(&self, frame: &MultiViewFrame, appearance: bool) -> Result<Vec<Vec<InstanceFeatures>>> {
        if frame.views.len() != self.cameras() {
            return Err(Error::Config(format!(
                "frame has {} views but the model expects {}",
                frame.views.len(),
                self.cameras()
            )));
        }
        let mut boxes: Vec<BoundingBox> = Vec::new();
        let mut cams = Vec::new();
        for (c, view) in frame.views.iter().enumerate() {
            for d in view {
                boxes.push(d.bbox);
                cams.push(c);
            }
        }
        let mut out: Vec<Vec<InstanceFeatures>> = frame.views.iter().map(|v| Vec::with_capacity(v.len())).collect();
        if boxes.is_empty() {
            return Ok(out);
        }
        let mut g = Graph::new();
        let vars = EncoderVars::bind(&mut g, &self.encoder);
        let f = vars.encode_boxes(&mut g, &boxes, &cams)?;
        let fv = g.value(f);
        let mut row = 0;
        for (c, view) in frame.views.iter().enumerate() {
            for d in view {
                out[c].push(InstanceFeatures {
                    geometric: fv.row(row).to_vec(),
                    appearance: if appearance { d.appearance.clone() } else { None },
                });
                row += 1;
            }
        }
        Ok(out)
    }
}

/// A model together with the provenance needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub epochs_completed: usize,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, seed: u64, epochs_completed: usize) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            epochs_completed,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Data(format!("checkpoint serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Data(format!("invalid checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint format `{}` v{}",
                ck.format, ck.version
            )));
        }
        ck.model.check()?;
        Ok(ck)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Detection;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            cameras: 2,
            frequencies: 4,
            camera_dim: 3,
            blocks: vec![8, 5],
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let model = Model::from_seed(small_config(), 9).unwrap();
        let ck = Checkpoint::new(model, 9, 3);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), ck.to_json().unwrap());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let model = Model::from_seed(small_config(), 1).unwrap();
        let mut ck = Checkpoint::new(model, 1, 0);
        ck.version = 99;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
        ck.version = CHECKPOINT_VERSION;
        ck.model.decoders.weights.pop();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
        assert!(Checkpoint::from_json("{").is_err());
    }

    #[test]
    fn frame_features_follow_view_layout() {
        let model = Model::from_seed(small_config(), 2).unwrap();
        let mut frame = MultiViewFrame::empty(0, 2);
        for k in 0..3 {
            frame.views[k % 2].push(Detection {
                frame: 0,
                camera: k % 2,
                bbox: BoundingBox::new(0.1 * k as f64, 0.1, 0.2 + 0.1 * k as f64, 0.5),
                identity: None,
                appearance: Some(vec![k as f64]),
            });
        }
        let f = model.frame_features(&frame, false).unwrap();
        assert_eq!((f[0].len(), f[1].len()), (2, 1));
        assert!(f[0][0].appearance.is_none());
        let single = crate::encoder::encode_batch(&model.encoder, &frame.views[1]).unwrap();
        assert_eq!(single[0].geometric, f[1][0].geometric);
        assert!(model.frame_features(&MultiViewFrame::empty(0, 3), false).is_err());
    }
}
