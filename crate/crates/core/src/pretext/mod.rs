//! Self-supervised training: synchronization triplets, the image-wise and
//! edge-wise triplet losses, the re-projection loss, and the training loop.

mod adam;
mod check;
mod loss;
#[cfg(test)]
mod loss_tests;
mod train;

pub use adam::{Adam, LearningRate};
pub use check::{toy_problem, ToyProblem, TOY_CAMERAS, TOY_PERSONS};
pub use loss::{
    batch_loss, edge_distance, image_distance_node, pseudo_edges, sync_loss, BatchLoss, ImageDistance, TripletPlan,
};
pub use train::{train, train_with, EpochRecord, TrainOutcome};

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::association::{Normalization, DEFAULT_ALPHA};
use crate::dataset::Dataset;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};

/// Anchor `(view_i, frame)`, positive `(view_j, frame)` and negative
/// `(view_j, negative_frame)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub view_i: usize,
    pub view_j: usize,
    pub frame: usize,
    pub negative_frame: usize,
}

/// How many triplets share one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepGrouping {
    /// One step per triplet.
    Triplet,
    /// One step per anchor frame, averaging the losses of all its ordered
    /// view pairs.
    #[default]
    AnchorFrame,
}

/// Encoder widths; the camera count comes from the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderShape {
    pub frequencies: usize,
    pub camera_dim: usize,
    pub blocks: Vec<usize>,
}

impl Default for EncoderShape {
    fn default() -> Self {
        let c = EncoderConfig::new(1);
        EncoderShape {
            frequencies: c.frequencies,
            camera_dim: c.camera_dim,
            blocks: c.blocks,
        }
    }
}

impl EncoderShape {
    pub fn config(&self, cameras: usize) -> EncoderConfig {
        EncoderConfig {
            cameras,
            frequencies: self.frequencies,
            camera_dim: self.camera_dim,
            blocks: self.blocks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub margin: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// First epoch (0-based) trained with `lr_final`.
    pub decay_epoch: usize,
    pub epochs: usize,
    /// Taken from the run's seed rather than from the training table.
    #[serde(skip)]
    pub seed: u64,
    pub sync_loss: bool,
    pub reprojection_loss: bool,
    pub edge_loss: bool,
    pub appearance: bool,
    /// Replace Hungarian matches by ground-truth identity matches.
    pub identity_supervision: bool,
    /// Upper bound on edges per image pair; all edges when absent.
    pub edge_cap: Option<usize>,
    pub normalization: Normalization,
    pub grouping: StepGrouping,
    /// Fraction of trailing frames held out for validation.
    pub holdout: f64,
    /// Confidence threshold used for the per-epoch validation ACC.
    pub val_threshold: f64,
    pub encoder: EncoderShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: DEFAULT_ALPHA,
            margin: 1.0,
            t_min: 5,
            t_max: 20,
            lr_initial: 1e-4,
            lr_final: 1e-5,
            decay_epoch: 150,
            epochs: 200,
            seed: 0,
            sync_loss: true,
            reprojection_loss: true,
            edge_loss: true,
            appearance: true,
            identity_supervision: false,
            edge_cap: None,
            normalization: Normalization::MaxEntry,
            grouping: StepGrouping::AnchorFrame,
            holdout: 0.1,
            val_threshold: 0.4,
            encoder: EncoderShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0,1], got {}", self.alpha));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return fail(format!("margin must be non-negative, got {}", self.margin));
        }
        if self.t_min < 1 || self.t_max < self.t_min {
            return fail(format!("need 1 ≤ t_min ≤ t_max, got [{}, {}]", self.t_min, self.t_max));
        }
        for (name, lr) in [("lr_initial", self.lr_initial), ("lr_final", self.lr_final)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.sync_loss || self.reprojection_loss || self.edge_loss) {
            return fail("at least one loss component must be enabled".into());
        }
        if self.edge_cap == Some(0) {
            return fail("edge_cap must be positive".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return fail(format!("holdout must lie in [0,1), got {}", self.holdout));
        }
        if !(0.0..=1.0).contains(&self.val_threshold) {
            return fail(format!("val_threshold must lie in [0,1], got {}", self.val_threshold));
        }
        self.encoder.config(1).validate()
    }

    pub fn learning_rate(&self) -> LearningRate {
        LearningRate {
            initial: self.lr_initial,
            last: self.lr_final,
            decay_epoch: self.decay_epoch,
        }
    }
}

/// Random stream for one epoch: the same `(seed, epoch)` always yields the
/// same draws. Stream 0 is reserved for parameter initialization.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Triplets of one epoch and how many anchors had no valid negative.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSample {
    pub triplets: Vec<Triplet>,
    pub skipped: usize,
}

/// One triplet per frame `p` in `frames` and ordered view pair `(i, j)`
/// where both views at `p` are non-empty. The negative frame `q` is drawn
/// uniformly among frames of `frames` with `t_min ≤ |q − p| ≤ t_max` whose
/// view `j` is non-empty. Triplets are ordered by frame, then by pair.
pub fn sample_triplets(
    dataset: &Dataset,
    frames: Range<usize>,
    t_min: usize,
    t_max: usize,
    rng: &mut impl Rng,
) -> Result<TripletSample> {
    if t_min < 1 || t_max < t_min {
        return Err(Error::Config(format!("need 1 ≤ t_min ≤ t_max, got [{t_min}, {t_max}]")));
    }
    if frames.end > dataset.len() {
        return Err(Error::Config("triplet frame range exceeds the dataset".into()));
    }
    if frames.len() < t_max + 1 {
        return Err(Error::Data(format!(
            "{} frames cannot host negatives {}..={} frames away",
            frames.len(),
            t_min,
            t_max
        )));
    }
    let c = dataset.cameras();
    let nonempty = |f: usize, v: usize| !dataset.view(f, v).is_empty();
    let mut triplets = Vec::new();
    let mut skipped = 0;
    let mut candidates = Vec::with_capacity(2 * (t_max - t_min + 1));
    for p in frames.clone() {
        for i in 0..c {
            if !nonempty(p, i) {
                continue;
            }
            for j in 0..c {
                if j == i || !nonempty(p, j) {
                    continue;
                }
                candidates.clear();
                for d in t_min..=t_max {
                    if p >= frames.start + d && nonempty(p - d, j) {
                        candidates.push(p - d);
                    }
                    if p + d < frames.end && nonempty(p + d, j) {
                        candidates.push(p + d);
                    }
                }
                if candidates.is_empty() {
                    skipped += 1;
                    continue;
                }
                let q = candidates[rng.random_range(0..candidates.len())];
                triplets.push(Triplet {
                    view_i: i,
                    view_j: j,
                    frame: p,
                    negative_frame: q,
                });
            }
        }
    }
    Ok(TripletSample { triplets, skipped })
}

/// Splits an epoch's triplets into optimizer steps and shuffles the steps.
pub fn group_triplets(triplets: &[Triplet], grouping: StepGrouping, rng: &mut impl Rng) -> Vec<Vec<Triplet>> {
    let mut groups: Vec<Vec<Triplet>> = match grouping {
        StepGrouping::Triplet => triplets.iter().map(|t| vec![*t]).collect(),
        StepGrouping::AnchorFrame => {
            let mut out: Vec<Vec<Triplet>> = Vec::new();
            for t in triplets {
                match out.last_mut() {
                    Some(g) if g[0].frame == t.frame => g.push(*t),
                    _ => out.push(vec![*t]),
                }
            }
            out
        }
    };
    groups.shuffle(rng);
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{BoundingBox, DatasetHeader, Detection, MultiViewFrame};

    pub(crate) fn dense_dataset(frames: usize, cameras: usize) -> Dataset {
        let frames_v = (0..frames)
            .map(|f| {
                let mut fr = MultiViewFrame::empty(f, cameras);
                for c in 0..cameras {
                    fr.views[c].push(Detection {
                        frame: f,
                        camera: c,
                        bbox: BoundingBox::new(0.1, 0.1, 0.2, 0.4),
                        identity: Some(0),
                        appearance: None,
                    });
                }
                fr
            })
            .collect();
        Dataset {
            header: DatasetHeader {
                cameras,
                height: 10,
                width: 10,
                frames,
                appearance_dim: 0,
                identities: true,
                seed: None,
            },
            frames: frames_v,
        }
    }

    #[test]
    fn neighbours_of_middle_frame_equally_likely() {
        let ds = dense_dataset(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 3];
        for _ in 0..2000 {
            let s = sample_triplets(&ds, 0..3, 1, 1, &mut rng).unwrap();
            for t in s.triplets.iter().filter(|t| t.frame == 1) {
                counts[t.negative_frame] += 1;
            }
        }
        assert_eq!(counts[1], 0);
        let total = (counts[0] + counts[2]) as f64;
        // Binomial(4000, ½): 3σ ≈ 95.
        assert!((counts[0] as f64 - total / 2.0).abs() < 95.0, "{counts:?}");
    }

    #[test]
    fn offsets_uniform_over_range() {
        let ds = dense_dataset(400, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hist = [0usize; 21];
        let mut n = 0usize;
        while n < 100_000 {
            let s = sample_triplets(&ds, 20..380, 5, 20, &mut rng).unwrap();
            for t in &s.triplets {
                let d = t.frame.abs_diff(t.negative_frame);
                assert!((5..=20).contains(&d));
                assert_ne!(t.view_i, t.view_j);
                hist[d] += 1;
                n += 1;
            }
        }
        let expected = n as f64 / 16.0;
        let sigma = (n as f64 * (1.0 / 16.0) * (15.0 / 16.0)).sqrt();
        for (d, &count) in hist.iter().enumerate().take(21).skip(5) {
            assert!((count as f64 - expected).abs() < 3.0 * sigma, "offset {d}: {count}");
        }
    }

    #[test]
    fn sampling_respects_bounds_and_empty_views() {
        let mut ds = dense_dataset(30, 3);
        ds.frames[12].views[1].clear();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sample_triplets(&ds, 0..30, 5, 20, &mut rng).unwrap();
        for t in &s.triplets {
            assert!(t.negative_frame < 30);
            assert!(!(t.frame == 12 && (t.view_i == 1 || t.view_j == 1)));
            assert!(!(t.negative_frame == 12 && t.view_j == 1));
        }
        assert_eq!(s.triplets.len(), 30 * 6 - 4);
        assert!(sample_triplets(&ds, 0..10, 5, 20, &mut rng).is_err());
        assert!(sample_triplets(&ds, 0..30, 0, 20, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_epoch() {
        let ds = dense_dataset(40, 3);
        let a = sample_triplets(&ds, 0..40, 5, 20, &mut epoch_rng(7, 3)).unwrap();
        let b = sample_triplets(&ds, 0..40, 5, 20, &mut epoch_rng(7, 3)).unwrap();
        let c = sample_triplets(&ds, 0..40, 5, 20, &mut epoch_rng(7, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn grouping_by_anchor_frame() {
        let ds = dense_dataset(30, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sample_triplets(&ds, 0..30, 5, 20, &mut rng).unwrap();
        let groups = group_triplets(&s.triplets, StepGrouping::AnchorFrame, &mut rng);
        assert_eq!(groups.len(), 30);
        assert!(groups
            .iter()
            .all(|g| g.len() == 6 && g.iter().all(|t| t.frame == g[0].frame)));
        let single = group_triplets(&s.triplets, StepGrouping::Triplet, &mut rng);
        assert_eq!(single.len(), s.triplets.len());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                t_min: 0,
                ..Default::default()
            },
            TrainConfig {
                t_max: 3,
                ..Default::default()
            },
            TrainConfig {
                margin: -1.0,
                ..Default::default()
            },
            TrainConfig {
                sync_loss: false,
                reprojection_loss: false,
                edge_loss: false,
                ..Default::default()
            },
            TrainConfig {
                holdout: 1.0,
                ..Default::default()
            },
            TrainConfig {
                edge_cap: Some(0),
                ..Default::default()
            },
        ];
        for b in bad {
            assert!(matches!(b.validate(), Err(Error::Config(_))), "{b:?}");
        }
    }
}
