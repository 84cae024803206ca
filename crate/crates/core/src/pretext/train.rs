use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_loss, epoch_rng, group_triplets, sample_triplets, Adam, TrainConfig};
use crate::association::AssociationParams;
use crate::dataset::Dataset;
use crate::decoder::DecoderVars;
use crate::diffcore::{Graph, Matrix};
use crate::encoder::EncoderVars;
use crate::error::Result;
use crate::inference::associate_dataset;
use crate::metrics::evaluate_report;
use crate::model::{Checkpoint, Model};

/// Mean loss components over the steps of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub sync: f64,
    pub reprojection: f64,
    pub edge: f64,
    pub val_accuracy: Option<f64>,
}

impl EpochRecord {
    /// `epoch L_syn L_pro L_edge val_ACC`, with `NA` for a missing ACC.
    pub fn to_line(&self) -> String {
        let acc = self.val_accuracy.map_or_else(|| "NA".to_string(), |a| format!("{a:?}"));
        format!(
            "{} {:?} {:?} {:?} {acc}",
            self.epoch, self.sync, self.reprojection, self.edge
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The final model, or the last model before divergence.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub skipped_anchors: usize,
    /// Set when training stopped on a non-finite loss.
    pub divergence: Option<String>,
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, cfg, |_| {})
}

/// Trains from scratch, calling `on_epoch` after every epoch.
pub fn train_with(
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    dataset.validate()?;
    let (train_frames, val_frames) = dataset.split(cfg.holdout);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(cfg.encoder.config(dataset.cameras()), &mut init_rng)?;
    let shapes: Vec<(usize, usize)> = model.tensors().iter().map(|t| t.shape()).collect();
    let mut adam = Adam::new(&shapes);
    let schedule = cfg.learning_rate();
    let validate_acc = dataset.header.identities && !val_frames.is_empty();
    let val_params = AssociationParams {
        alpha: cfg.alpha,
        threshold: cfg.val_threshold,
        normalization: cfg.normalization,
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut skipped_anchors = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let sample = sample_triplets(dataset, train_frames.clone(), cfg.t_min, cfg.t_max, &mut rng)?;
        skipped_anchors += sample.skipped;
        let groups = group_triplets(&sample.triplets, cfg.grouping, &mut rng);
        let last_good = model.clone();
        let lr = schedule.at(epoch);
        let (mut syn, mut pro, mut edge) = (0.0, 0.0, 0.0);
        for group in &groups {
            let mut g = Graph::new();
            let enc = EncoderVars::bind(&mut g, &model.encoder);
            let dec = DecoderVars::bind(&mut g, &model.decoders);
            let loss = batch_loss(&mut g, &enc, &dec, dataset, group, cfg, None, &mut rng)?;
            let value = g.value(loss.total).item();
            if !value.is_finite() {
                return Ok(TrainOutcome {
                    checkpoint: Checkpoint::new(last_good, cfg.seed, epoch),
                    history,
                    skipped_anchors,
                    divergence: Some(format!("non-finite loss {value} in epoch {epoch}")),
                });
            }
            g.backward(loss.total)?;
            let mut leaves = enc.leaves();
            leaves.extend(dec.leaves());
            let grads: Vec<Matrix> = leaves.iter().map(|&v| g.grad(v)).collect();
            adam.step(model.tensors_mut(), &grads, lr)?;
            syn += loss.sync;
            pro += loss.reprojection;
            edge += loss.edge;
        }
        if model.tensors().iter().any(|t| !t.is_finite()) {
            return Ok(TrainOutcome {
                checkpoint: Checkpoint::new(last_good, cfg.seed, epoch),
                history,
                skipped_anchors,
                divergence: Some(format!("non-finite parameters after epoch {epoch}")),
            });
        }
        let n = groups.len().max(1) as f64;
        let val_accuracy = if validate_acc {
            let report = associate_dataset(&model, dataset, val_frames.clone(), &val_params, cfg.appearance)?;
            evaluate_report(&report, dataset)?.accuracy
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            sync: syn / n,
            reprojection: pro / n,
            edge: edge / n,
            val_accuracy,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model, cfg.seed, cfg.epochs),
        history,
        skipped_anchors,
        divergence: None,
    })
}
