//! A frozen two-camera, three-person toy triplet for gradient checking the
//! full training loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{batch_loss, EncoderShape, TrainConfig, Triplet, TripletPlan};
use crate::dataset::{BoundingBox, Dataset, DatasetHeader, Detection, MultiViewFrame};
use crate::diffcore::{gradient_check, GradCheckReport, Graph, Matrix};
use crate::error::Result;
use crate::model::Model;

pub const TOY_CAMERAS: usize = 2;
pub const TOY_PERSONS: usize = 3;

#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub dataset: Dataset,
    pub model: Model,
    pub triplet: Triplet,
    pub config: TrainConfig,
    pub plan: TripletPlan,
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let x = rng.random_range(0.0..0.8);
    let y = rng.random_range(0.0..0.6);
    let w = rng.random_range(0.05..0.2);
    let h = rng.random_range(0.2..0.4);
    BoundingBox::new(x, y, x + w, y + h)
}

/// Two frames of two views with three people each, random boxes and
/// appearance vectors, a small encoder, and the triplet anchored at view 0
/// of frame 0 with its negative from frame 1. Matches and edges are frozen
/// at their values for the initial parameters.
pub fn toy_problem(seed: u64) -> Result<ToyProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let appearance_dim = 4;
    let frames = (0..2)
        .map(|f| {
            let mut frame = MultiViewFrame::empty(f, TOY_CAMERAS);
            for c in 0..TOY_CAMERAS {
                let mut ids: Vec<u32> = (0..TOY_PERSONS as u32).collect();
                ids.shuffle(&mut rng);
                for id in ids {
                    frame.views[c].push(Detection {
                        frame: f,
                        camera: c,
                        bbox: random_box(&mut rng),
                        identity: Some(id),
                        appearance: Some((0..appearance_dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
                    });
                }
            }
            frame
        })
        .collect();
    let dataset = Dataset {
        header: DatasetHeader {
            cameras: TOY_CAMERAS,
            height: 1080,
            width: 1920,
            frames: 2,
            appearance_dim,
            identities: true,
            seed: Some(seed),
        },
        frames,
    };
    let config = TrainConfig {
        seed,
        encoder: EncoderShape {
            frequencies: 4,
            camera_dim: 3,
            blocks: vec![8, 8, 6],
        },
        ..TrainConfig::default()
    };
    let model = Model::init(config.encoder.config(TOY_CAMERAS), &mut rng)?;
    let triplet = Triplet {
        view_i: 0,
        view_j: 1,
        frame: 0,
        negative_frame: 1,
    };
    let mut g = Graph::new();
    let leaves: Vec<_> = model.tensors().into_iter().map(|t| g.leaf(t.clone())).collect();
    let (enc, dec) = model.bind_leaves(&mut g, &leaves)?;
    let loss = batch_loss(&mut g, &enc, &dec, &dataset, &[triplet], &config, None, &mut rng)?;
    let plan = loss.plans[0].clone();
    Ok(ToyProblem {
        dataset,
        model,
        triplet,
        config,
        plan,
    })
}

impl ToyProblem {
    /// Total loss with the frozen plan, evaluated at `params` (in
    /// [`Model::tensors`] order).
    pub fn loss_at(&self, params: &[Matrix]) -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<_> = params.iter().map(|t| g.leaf(t.clone())).collect();
        let (enc, dec) = self.model.bind_leaves(&mut g, &leaves)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = batch_loss(
            &mut g,
            &enc,
            &dec,
            &self.dataset,
            &[self.triplet],
            &self.config,
            Some(std::slice::from_ref(&self.plan)),
            &mut rng,
        )?;
        Ok(g.value(loss.total).item())
    }

    /// Analytic versus central-difference gradients of the total loss with
    /// respect to every model tensor.
    pub fn gradient_check(&self, step: f64, tolerance: f64) -> Result<GradCheckReport> {
        let params: Vec<Matrix> = self.model.tensors().into_iter().cloned().collect();
        gradient_check(
            |g, vars| {
                let (enc, dec) = self.model.bind_leaves(g, vars)?;
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let loss = batch_loss(
                    g,
                    &enc,
                    &dec,
                    &self.dataset,
                    &[self.triplet],
                    &self.config,
                    Some(std::slice::from_ref(&self.plan)),
                    &mut rng,
                )?;
                Ok(loss.total)
            },
            &params,
            step,
            tolerance,
        )
    }
}
