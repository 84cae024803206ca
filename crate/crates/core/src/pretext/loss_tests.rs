use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::association::{fused_distances, hungarian, image_distance, AssociationParams};
use crate::dataset::BoundingBox;
use crate::decoder::reprojection_loss;
use crate::diffcore::{Graph, Matrix};
use crate::encoder::{encode_batch, EncoderVars};
use crate::model::Model;

fn bind(g: &mut Graph, model: &Model) -> (EncoderVars, crate::decoder::DecoderVars) {
    let leaves: Vec<_> = model.tensors().into_iter().map(|t| g.leaf(t.clone())).collect();
    model.bind_leaves(g, &leaves).unwrap()
}

#[test]
fn sync_loss_examples() {
    let mut g = Graph::new();
    let a = g.constant_scalar(0.4);
    let b = g.constant_scalar(0.4);
    let l = sync_loss(&mut g, a, b, 1.0).unwrap();
    assert_eq!(g.value(l).item(), 1.0);
    let b = g.constant_scalar(1.5);
    let l = sync_loss(&mut g, a, b, 1.0).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
}

#[test]
fn pseudo_edge_examples() {
    let e = pseudo_edges(&[
        BoundingBox::new(0.0, 0.0, 1.0, 1.0),
        BoundingBox::new(2.0, 2.0, 3.0, 3.0),
    ]);
    assert_eq!(e, vec![(0, 1, BoundingBox::new(1.0, 1.0, 2.0, 2.0))]);
    let four: Vec<_> = (0..4)
        .map(|k| BoundingBox::new(0.1 * k as f64, 0.0, 0.5, 0.5))
        .collect();
    assert_eq!(pseudo_edges(&four).len(), 6);
    let b = BoundingBox::new(0.1, 0.2, 0.3, 0.7);
    assert_eq!(pseudo_edges(&[b, b])[0].2, b);
    assert!(pseudo_edges(&[b]).is_empty());
}

#[test]
fn edge_distance_zero_for_identical_views() {
    let toy = toy_problem(1).unwrap();
    let boxes: Vec<BoundingBox> = toy.dataset.view(0, 0).iter().map(|d| d.bbox).collect();
    let mut g = Graph::new();
    let (enc, _) = bind(&mut g, &toy.model);
    let m = [(0, 0), (1, 1), (2, 2)];
    let h = edge_distance(&mut g, &enc, &boxes, 0, &boxes, 0, &m, None)
        .unwrap()
        .unwrap();
    assert_eq!(g.value(h).item(), 0.0);
    assert!(edge_distance(&mut g, &enc, &boxes, 0, &boxes, 0, &m[..1], None)
        .unwrap()
        .is_none());
}

#[test]
fn edge_distance_matches_scalar_loop() {
    let toy = toy_problem(2).unwrap();
    let (vi, vj) = (toy.dataset.view(0, 0), toy.dataset.view(0, 1));
    let bi: Vec<BoundingBox> = vi.iter().map(|d| d.bbox).collect();
    let bj: Vec<BoundingBox> = vj.iter().map(|d| d.bbox).collect();
    let m = [(0, 2), (1, 0), (2, 1)];
    let mut g = Graph::new();
    let (enc, _) = bind(&mut g, &toy.model);
    let h = edge_distance(&mut g, &enc, &bi, 0, &bj, 1, &m, None).unwrap().unwrap();

    let mut total = 0.0;
    let mut count = 0;
    for a in 0..3 {
        for b in a + 1..3 {
            let ei = crate::dataset::Detection {
                bbox: bi[m[a].0].midpoint(&bi[m[b].0]),
                ..vi[0].clone()
            };
            let ej = crate::dataset::Detection {
                bbox: bj[m[a].1].midpoint(&bj[m[b].1]),
                ..vj[0].clone()
            };
            let fi = &encode_batch(&toy.model.encoder, &[ei]).unwrap()[0].geometric;
            let fj = &encode_batch(&toy.model.encoder, &[ej]).unwrap()[0].geometric;
            total += fi.iter().zip(fj).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            count += 1;
        }
    }
    assert!((g.value(h).item() - total / count as f64).abs() < 1e-12);

    // Two matches give exactly one edge.
    let mut g = Graph::new();
    let (enc, _) = bind(&mut g, &toy.model);
    let h2 = edge_distance(&mut g, &enc, &bi, 0, &bj, 1, &m[..2], None)
        .unwrap()
        .unwrap();
    let h1 = edge_distance(&mut g, &enc, &bi, 0, &bj, 1, &m[..2], Some(&[(0, 1)]))
        .unwrap()
        .unwrap();
    assert_eq!(g.value(h1).item(), g.value(h2).item());
}

#[test]
fn image_distance_node_agrees_with_plain_association() {
    let toy = toy_problem(3).unwrap();
    let (vi, vj) = (toy.dataset.view(0, 0), toy.dataset.view(1, 1));
    let fi = encode_batch(&toy.model.encoder, vi).unwrap();
    let fj = encode_batch(&toy.model.encoder, vj).unwrap();
    let params = AssociationParams::default();
    let d = fused_distances(&fi, &fj, &params).unwrap();
    let matches = hungarian(&d).unwrap();
    let oracle = image_distance(&d, &matches).unwrap();

    let mut g = Graph::new();
    let (enc, _) = bind(&mut g, &toy.model);
    let mut bi: Vec<BoundingBox> = vi.iter().map(|d| d.bbox).collect();
    bi.extend(vj.iter().map(|d| d.bbox));
    let f = enc.encode_boxes(&mut g, &bi, &[0, 0, 0, 1, 1, 1]).unwrap();
    let a = g.gather_rows(f, &[0, 1, 2]).unwrap();
    let b = g.gather_rows(f, &[3, 4, 5]).unwrap();
    let app_rows =
        |v: &[crate::dataset::Detection]| v.iter().map(|d| d.appearance.clone().unwrap()).collect::<Vec<_>>();
    let (ai, aj) = (app_rows(vi), app_rows(vj));
    let ai: Vec<&[f64]> = ai.iter().map(Vec::as_slice).collect();
    let aj: Vec<&[f64]> = aj.iter().map(Vec::as_slice).collect();
    let da = crate::association::distance_matrix(&ai, &aj, params.normalization).unwrap();
    let h = image_distance_node(&mut g, a, b, Some(&da), params.alpha, params.normalization, None)
        .unwrap()
        .unwrap();
    assert_eq!(h.matches, matches);
    assert!((g.value(h.distance).item() - oracle).abs() < 1e-12);
}

#[test]
fn total_loss_is_sum_of_components() {
    let toy = toy_problem(4).unwrap();
    let t = [toy.triplet];
    let run = |cfg: &TrainConfig| {
        let mut g = Graph::new();
        let (enc, dec) = bind(&mut g, &toy.model);
        let l = batch_loss(
            &mut g,
            &enc,
            &dec,
            &toy.dataset,
            &t,
            cfg,
            None,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        (g.value(l.total).item(), l)
    };
    let (full, parts) = run(&toy.config);
    assert!((full - (parts.sync + parts.reprojection + parts.edge)).abs() < 1e-12);
    assert!(full >= 0.0);

    let only = |sync, pro, edge| TrainConfig {
        sync_loss: sync,
        reprojection_loss: pro,
        edge_loss: edge,
        ..toy.config.clone()
    };
    let (s, _) = run(&only(true, false, false));
    let (p, _) = run(&only(false, true, false));
    let (e, _) = run(&only(false, false, true));
    assert!((s + p + e - full).abs() < 1e-12);

    // Re-projection alone equals the decoder's own loss over anchor and
    // positive detections.
    let mut g = Graph::new();
    let (enc, dec) = bind(&mut g, &toy.model);
    let mut boxes: Vec<BoundingBox> = toy.dataset.view(0, 0).iter().map(|d| d.bbox).collect();
    boxes.extend(toy.dataset.view(0, 1).iter().map(|d| d.bbox));
    let r = reprojection_loss(&mut g, &enc, &dec, &boxes, &[0, 0, 0, 1, 1, 1]).unwrap();
    assert!((g.value(r.loss).item() - p).abs() < 1e-12);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let toy = toy_problem(seed).unwrap();
        let report = toy.gradient_check(1e-5, 1e-4).unwrap();
        assert!(report.passed(), "seed {seed}: worst {}", report.worst());
    }
}

#[test]
fn frozen_plan_reproduces_loss() {
    let toy = toy_problem(5).unwrap();
    let params: Vec<Matrix> = toy.model.tensors().into_iter().cloned().collect();
    let mut g = Graph::new();
    let (enc, dec) = bind(&mut g, &toy.model);
    let l = batch_loss(
        &mut g,
        &enc,
        &dec,
        &toy.dataset,
        &[toy.triplet],
        &toy.config,
        None,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(toy.loss_at(&params).unwrap(), g.value(l.total).item());
    assert_eq!(toy.plan.positive.len(), 3);
    assert_eq!(toy.plan.positive_edges.len(), 3);
}

#[test]
fn identity_supervision_uses_labels() {
    let toy = toy_problem(6).unwrap();
    let cfg = TrainConfig {
        identity_supervision: true,
        ..toy.config.clone()
    };
    let mut g = Graph::new();
    let (enc, dec) = bind(&mut g, &toy.model);
    let l = batch_loss(
        &mut g,
        &enc,
        &dec,
        &toy.dataset,
        &[toy.triplet],
        &cfg,
        None,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    for &(u, v) in &l.plans[0].positive {
        assert_eq!(toy.dataset.view(0, 0)[u].identity, toy.dataset.view(0, 1)[v].identity);
    }
}

#[test]
fn edge_cap_limits_edges() {
    let toy = toy_problem(7).unwrap();
    let cfg = TrainConfig {
        edge_cap: Some(2),
        ..toy.config.clone()
    };
    let mut g = Graph::new();
    let (enc, dec) = bind(&mut g, &toy.model);
    let l = batch_loss(
        &mut g,
        &enc,
        &dec,
        &toy.dataset,
        &[toy.triplet],
        &cfg,
        None,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(l.plans[0].positive_edges.len(), 2);
    assert!(l.plans[0].positive_edges.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn loss_decreases_under_fixed_triplets() {
    // Two people, two views, fixed triplet; plain re-projection plus
    // synchronization with a small step.
    let mut toy = toy_problem(8).unwrap();
    for f in &mut toy.dataset.frames {
        for v in &mut f.views {
            v.truncate(2);
        }
    }
    let cfg = TrainConfig {
        edge_loss: false,
        ..toy.config.clone()
    };
    let mut model = toy.model.clone();
    let shapes: Vec<_> = model.tensors().iter().map(|t| t.shape()).collect();
    let mut adam = Adam::new(&shapes);
    let mut last = f64::INFINITY;
    for step in 0..50 {
        let mut g = Graph::new();
        let (enc, dec) = bind(&mut g, &model);
        let l = batch_loss(
            &mut g,
            &enc,
            &dec,
            &toy.dataset,
            &[toy.triplet],
            &cfg,
            None,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let v = g.value(l.total).item();
        assert!(v <= last, "step {step}: {v} > {last}");
        last = v;
        g.backward(l.total).unwrap();
        let mut leaves = enc.leaves();
        leaves.extend(dec.leaves());
        let grads: Vec<Matrix> = leaves.iter().map(|&x| g.grad(x)).collect();
        adam.step(model.tensors_mut(), &grads, 1e-4).unwrap();
    }
}

#[test]
fn short_training_is_deterministic() {
    let scene = crate::sim::generate_scene(
        &crate::sim::SceneConfig {
            cameras: 2,
            agents: 3,
            frames: 40,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        encoder: EncoderShape {
            frequencies: 8,
            camera_dim: 4,
            blocks: vec![16, 16, 8],
        },
        ..Default::default()
    };
    let a = train(&scene.dataset, &cfg).unwrap();
    let b = train(&scene.dataset, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.checkpoint.to_json().unwrap(), b.checkpoint.to_json().unwrap());
    assert!(a.divergence.is_none());
    assert_eq!(a.history.len(), 2);
    assert!(a.history[0].val_accuracy.is_some());
}
