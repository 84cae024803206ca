use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;

use super::{TrainConfig, Triplet};
use crate::association::{distance_matrix, hungarian, Normalization};
use crate::dataset::{BoundingBox, Dataset, Detection};
use crate::decoder::{reprojection_loss_from_features, DecoderVars};
use crate::diffcore::{Graph, Matrix, Var};
use crate::encoder::EncoderVars;
use crate::error::{Error, Result};

/// Image-wise distance between two feature sets and the matches it used.
#[derive(Debug, Clone)]
pub struct ImageDistance {
    pub distance: Var,
    /// Fused instance distance matrix.
    pub matrix: Var,
    pub matches: Vec<(usize, usize)>,
}

/// Mean fused distance over matched instance pairs. Without `matches`, the
/// Hungarian solution of the current distance values is used; the chosen
/// indices are constants of the graph. `appearance` is the already
/// normalized appearance distance matrix. `None` when there is nothing to
/// match.
#[allow(clippy::too_many_arguments)]
pub fn image_distance_node(
    g: &mut Graph,
    fi: Var,
    fj: Var,
    appearance: Option<&Matrix>,
    alpha: f64,
    normalization: Normalization,
    matches: Option<&[(usize, usize)]>,
) -> Result<Option<ImageDistance>> {
    let (ri, rj) = (g.value(fi).rows(), g.value(fj).rows());
    if ri == 0 || rj == 0 {
        return Ok(None);
    }
    let dg = match normalization {
        Normalization::MaxEntry => {
            let raw = g.pairwise_l2(fi, fj)?;
            g.max_normalize(raw)
        }
        Normalization::UnitFeatures => {
            let ni = g.normalize_rows(fi);
            let nj = g.normalize_rows(fj);
            g.pairwise_l2(ni, nj)?
        }
    };
    let matrix = match appearance {
        Some(da) => {
            if da.shape() != (ri, rj) {
                return Err(Error::Dimension {
                    op: "image_distance",
                    lhs: da.shape(),
                    rhs: (ri, rj),
                });
            }
            let scaled = g.scale(dg, 1.0 - alpha);
            let app = g.leaf(da.map(|x| alpha * x));
            g.add(scaled, app)?
        }
        None => dg,
    };
    let matches = match matches {
        Some(m) => m.to_vec(),
        None => hungarian(g.value(matrix))?,
    };
    if matches.is_empty() {
        return Ok(None);
    }
    let entries = g.gather_entries(matrix, &matches)?;
    let distance = g.mean(entries)?;
    Ok(Some(ImageDistance {
        distance,
        matrix,
        matches,
    }))
}

/// `max(0, h_pos − h_neg + margin)`.
pub fn sync_loss(g: &mut Graph, h_pos: Var, h_neg: Var, margin: f64) -> Result<Var> {
    let diff = g.sub(h_pos, h_neg)?;
    Ok(g.hinge(diff, margin))
}

/// Corner-wise midpoint box of every unordered pair `u < v`.
pub fn pseudo_edges(boxes: &[BoundingBox]) -> Vec<(usize, usize, BoundingBox)> {
    let mut out = Vec::with_capacity(boxes.len() * boxes.len().saturating_sub(1) / 2);
    for u in 0..boxes.len() {
        for v in u + 1..boxes.len() {
            out.push((u, v, boxes[u].midpoint(&boxes[v])));
        }
    }
    out
}

fn all_edges(k: usize) -> Vec<(usize, usize)> {
    let mut all = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            all.push((a, b));
        }
    }
    all
}

/// Pairs `a < b` of `k` matches, subsampled without replacement to `cap`.
fn select_edges(k: usize, cap: Option<usize>, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let all = all_edges(k);
    match cap {
        Some(cap) if all.len() > cap => {
            let mut idx = sample(rng, all.len(), cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i]).collect()
        }
        _ => all,
    }
}

/// Edge boxes in both views for the given match pairs.
fn edge_boxes(
    boxes_i: &[BoundingBox],
    boxes_j: &[BoundingBox],
    matches: &[(usize, usize)],
    edges: &[(usize, usize)],
) -> (Vec<BoundingBox>, Vec<BoundingBox>) {
    edges
        .iter()
        .map(|&(a, b)| {
            let (ra, ca) = matches[a];
            let (rb, cb) = matches[b];
            (boxes_i[ra].midpoint(&boxes_i[rb]), boxes_j[ca].midpoint(&boxes_j[cb]))
        })
        .unzip()
}

/// `(frame, view, u, v)` with `u < v`: the pseudo edge between detections
/// `u` and `v` of one image.
type EdgeKey = (usize, usize, usize, usize);

fn edge_keys(
    image_i: (usize, usize),
    image_j: (usize, usize),
    matches: &[(usize, usize)],
    edges: &[(usize, usize)],
) -> (Vec<EdgeKey>, Vec<EdgeKey>) {
    let key = |(f, v): (usize, usize), a: usize, b: usize| (f, v, a.min(b), a.max(b));
    edges
        .iter()
        .map(|&(a, b)| {
            let (ra, ca) = matches[a];
            let (rb, cb) = matches[b];
            (key(image_i, ra, rb), key(image_j, ca, cb))
        })
        .unzip()
}

/// Mean Euclidean distance between the encoded pseudo edges of view `i` and
/// their matched counterparts in view `j`. `edges` index pairs of
/// `matches`; all pairs are used when absent. `None` with fewer than two
/// matches.
#[allow(clippy::too_many_arguments)]
pub fn edge_distance(
    g: &mut Graph,
    encoder: &EncoderVars,
    boxes_i: &[BoundingBox],
    camera_i: usize,
    boxes_j: &[BoundingBox],
    camera_j: usize,
    matches: &[(usize, usize)],
    edges: Option<&[(usize, usize)]>,
) -> Result<Option<Var>> {
    if matches.len() < 2 {
        return Ok(None);
    }
    let all;
    let edges = match edges {
        Some(e) => e,
        None => {
            all = all_edges(matches.len());
            &all
        }
    };
    let (ei, ej) = edge_boxes(boxes_i, boxes_j, matches, edges);
    let n = ei.len();
    let mut boxes = ei;
    boxes.extend(ej);
    let mut cams = vec![camera_i; n];
    cams.extend(std::iter::repeat_n(camera_j, n));
    let f = encoder.encode_boxes(g, &boxes, &cams)?;
    let rows_i: Vec<usize> = (0..n).collect();
    let rows_j: Vec<usize> = (n..2 * n).collect();
    let fi = g.gather_rows(f, &rows_i)?;
    let fj = g.gather_rows(f, &rows_j)?;
    let d = g.row_l2(fi, fj)?;
    Ok(Some(g.mean(d)?))
}

/// Matches and edges chosen for one triplet, so that a loss can be
/// re-evaluated with the discrete choices held fixed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TripletPlan {
    pub positive: Vec<(usize, usize)>,
    pub negative: Vec<(usize, usize)>,
    pub positive_edges: Vec<(usize, usize)>,
    pub negative_edges: Vec<(usize, usize)>,
}

/// Mean total loss of a group of triplets, with component means.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub total: Var,
    pub sync: f64,
    pub reprojection: f64,
    pub edge: f64,
    pub plans: Vec<TripletPlan>,
    /// Triplets whose synchronization term could not be formed.
    pub sync_skipped: usize,
    /// Triplets whose edge term could not be formed.
    pub edge_skipped: usize,
}

fn boxes_of(view: &[Detection]) -> Vec<BoundingBox> {
    view.iter().map(|d| d.bbox).collect()
}

fn identity_matches(a: &[Detection], b: &[Detection]) -> Result<Vec<(usize, usize)>> {
    let id = |d: &Detection| {
        d.identity
            .ok_or_else(|| Error::Data("identity supervision needs identity labels".into()))
    };
    let mut out = Vec::new();
    for (u, da) in a.iter().enumerate() {
        let ia = id(da)?;
        for (v, db) in b.iter().enumerate() {
            if id(db)? == ia {
                out.push((u, v));
            }
        }
    }
    Ok(out)
}

fn appearance_matrix(a: &[Detection], b: &[Detection], norm: Normalization) -> Result<Option<Matrix>> {
    let ai: Option<Vec<&[f64]>> = a.iter().map(|d| d.appearance.as_deref()).collect();
    let bj: Option<Vec<&[f64]>> = b.iter().map(|d| d.appearance.as_deref()).collect();
    match (ai, bj) {
        (Some(ai), Some(bj)) if !a.is_empty() && !b.is_empty() => Ok(Some(distance_matrix(&ai, &bj, norm)?)),
        _ => Ok(None),
    }
}

fn add_opt(g: &mut Graph, acc: Option<Var>, x: Var) -> Result<Option<Var>> {
    Ok(Some(match acc {
        None => x,
        Some(a) => g.add(a, x)?,
    }))
}

/// Total loss averaged over `triplets`: per triplet the enabled sum of the
/// synchronization hinge, the re-projection loss over anchor and positive
/// detections, and the edge hinge. Every `(frame, view)` image is encoded
/// once. With `frozen`, matches and edges come from the given plans instead
/// of Hungarian matching and edge sampling.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    g: &mut Graph,
    encoder: &EncoderVars,
    decoders: &DecoderVars,
    dataset: &Dataset,
    triplets: &[Triplet],
    cfg: &TrainConfig,
    frozen: Option<&[TripletPlan]>,
    rng: &mut impl Rng,
) -> Result<BatchLoss> {
    if triplets.is_empty() {
        return Err(Error::Contract("empty triplet batch".into()));
    }
    if let Some(f) = frozen {
        if f.len() != triplets.len() {
            return Err(Error::Contract("one frozen plan per triplet is required".into()));
        }
    }
    // Encode every distinct image once.
    let mut slots: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    let mut boxes = Vec::new();
    let mut cams = Vec::new();
    for t in triplets {
        for key in [(t.frame, t.view_i), (t.frame, t.view_j), (t.negative_frame, t.view_j)] {
            if slots.contains_key(&key) {
                continue;
            }
            let view = dataset.view(key.0, key.1);
            if view.is_empty() {
                return Err(Error::Contract(format!("triplet uses empty image {key:?}")));
            }
            slots.insert(key, (boxes.len(), view.len()));
            boxes.extend(view.iter().map(|d| d.bbox));
            cams.extend(std::iter::repeat_n(key.1, view.len()));
        }
    }
    let features = encoder.encode_boxes(g, &boxes, &cams)?;
    let rows = |key: &(usize, usize)| {
        let (s, n) = slots[key];
        (s..s + n).collect::<Vec<usize>>()
    };

    let need_matches = cfg.sync_loss || cfg.edge_loss;
    let mut plans = Vec::with_capacity(triplets.len());
    let mut per_triplet: Vec<Option<Var>> = Vec::with_capacity(triplets.len());
    let mut sync_sum = 0.0;
    let mut pro_sum = 0.0;
    let mut sync_skipped = 0;
    // (triplet, positive?, edge keys in view i, edge keys in view j)
    let mut edge_jobs: Vec<(usize, bool, Vec<EdgeKey>, Vec<EdgeKey>)> = Vec::new();
    let mut edge_ok = vec![false; triplets.len()];

    for (k, t) in triplets.iter().enumerate() {
        let anchor = (t.frame, t.view_i);
        let pos = (t.frame, t.view_j);
        let neg = (t.negative_frame, t.view_j);
        let mut plan = TripletPlan::default();
        let mut total: Option<Var> = None;

        if need_matches {
            let fa = g.gather_rows(features, &rows(&anchor))?;
            let fp = g.gather_rows(features, &rows(&pos))?;
            let fneg = g.gather_rows(features, &rows(&neg))?;
            let (da, dp, dn) = (
                dataset.view(anchor.0, anchor.1),
                dataset.view(pos.0, pos.1),
                dataset.view(neg.0, neg.1),
            );
            let (app_p, app_n) = if cfg.appearance {
                (
                    appearance_matrix(da, dp, cfg.normalization)?,
                    appearance_matrix(da, dn, cfg.normalization)?,
                )
            } else {
                (None, None)
            };
            let (fixed_p, fixed_n) = match frozen {
                Some(f) => (Some(f[k].positive.clone()), Some(f[k].negative.clone())),
                None if cfg.identity_supervision => (Some(identity_matches(da, dp)?), Some(identity_matches(da, dn)?)),
                None => (None, None),
            };
            let hp = image_distance_node(
                g,
                fa,
                fp,
                app_p.as_ref(),
                cfg.alpha,
                cfg.normalization,
                fixed_p.as_deref(),
            )?;
            let hn = image_distance_node(
                g,
                fa,
                fneg,
                app_n.as_ref(),
                cfg.alpha,
                cfg.normalization,
                fixed_n.as_deref(),
            )?;
            match (hp, hn) {
                (Some(hp), Some(hn)) => {
                    if cfg.sync_loss {
                        let l = sync_loss(g, hp.distance, hn.distance, cfg.margin)?;
                        sync_sum += g.value(l).item();
                        total = add_opt(g, total, l)?;
                    }
                    plan.positive = hp.matches;
                    plan.negative = hn.matches;
                }
                _ => {
                    if cfg.sync_loss {
                        sync_skipped += 1;
                    }
                }
            }
            if cfg.edge_loss && plan.positive.len() >= 2 && plan.negative.len() >= 2 {
                let (pe, ne) = match frozen {
                    Some(f) => (f[k].positive_edges.clone(), f[k].negative_edges.clone()),
                    None => (
                        select_edges(plan.positive.len(), cfg.edge_cap, rng),
                        select_edges(plan.negative.len(), cfg.edge_cap, rng),
                    ),
                };
                let (pi, pj) = edge_keys(anchor, pos, &plan.positive, &pe);
                let (ni, nj) = edge_keys(anchor, neg, &plan.negative, &ne);
                edge_jobs.push((k, true, pi, pj));
                edge_jobs.push((k, false, ni, nj));
                plan.positive_edges = pe;
                plan.negative_edges = ne;
                edge_ok[k] = true;
            }
        }

        if cfg.reprojection_loss {
            let mut r = rows(&anchor);
            r.extend(rows(&pos));
            let mut b = boxes_of(dataset.view(anchor.0, anchor.1));
            b.extend(boxes_of(dataset.view(pos.0, pos.1)));
            let mut c = vec![anchor.1; dataset.view(anchor.0, anchor.1).len()];
            c.extend(std::iter::repeat_n(pos.1, dataset.view(pos.0, pos.1).len()));
            let l = reprojection_loss_from_features(g, decoders, features, &r, &b, &c)?.loss;
            pro_sum += g.value(l).item();
            total = add_opt(g, total, l)?;
        }
        plans.push(plan);
        per_triplet.push(total);
    }

    // Encode all pseudo edges of the batch in one pass.
    let mut edge_sum = 0.0;
    let mut edge_skipped = 0;
    if cfg.edge_loss {
        edge_skipped = edge_ok.iter().filter(|ok| !**ok).count();
        if !edge_jobs.is_empty() {
            // Each image's pseudo edges are encoded once and shared.
            let mut edge_rows: HashMap<EdgeKey, usize> = HashMap::new();
            let mut eb = Vec::new();
            let mut ec = Vec::new();
            for (_, _, ki, kj) in &edge_jobs {
                for key in ki.iter().chain(kj) {
                    edge_rows.entry(*key).or_insert_with(|| {
                        let (f, v, a, b) = *key;
                        let view = dataset.view(f, v);
                        eb.push(view[a].bbox.midpoint(&view[b].bbox));
                        ec.push(v);
                        eb.len() - 1
                    });
                }
            }
            let ef = encoder.encode_boxes(g, &eb, &ec)?;
            let mut h: HashMap<(usize, bool), Var> = HashMap::new();
            for (k, positive, ki, kj) in &edge_jobs {
                let ri: Vec<usize> = ki.iter().map(|key| edge_rows[key]).collect();
                let rj: Vec<usize> = kj.iter().map(|key| edge_rows[key]).collect();
                let fi = g.gather_rows(ef, &ri)?;
                let fj = g.gather_rows(ef, &rj)?;
                let d = g.row_l2(fi, fj)?;
                h.insert((*k, *positive), g.mean(d)?);
            }
            for (k, ok) in edge_ok.iter().enumerate() {
                if !ok {
                    continue;
                }
                let l = sync_loss(g, h[&(k, true)], h[&(k, false)], cfg.margin)?;
                edge_sum += g.value(l).item();
                per_triplet[k] = add_opt(g, per_triplet[k], l)?;
            }
        }
    }

    let mut acc: Option<Var> = None;
    for v in per_triplet.into_iter().flatten() {
        acc = add_opt(g, acc, v)?;
    }
    let n = triplets.len() as f64;
    let total = match acc {
        Some(a) => g.scale(a, 1.0 / n),
        None => g.constant_scalar(0.0),
    };
    Ok(BatchLoss {
        total,
        sync: sync_sum / n,
        reprojection: pro_sum / n,
        edge: edge_sum / n,
        plans,
        sync_skipped,
        edge_skipped,
    })
}
