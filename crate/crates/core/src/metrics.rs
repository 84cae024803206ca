//! Association metrics against ground-truth identities: AP and FPR-95 over
//! pairwise scores, and precision, recall, ACC and IPAA-X over association
//! results.
//!
//! For each view pair of a frame, every person present in either view is one
//! decision. A person seen in both views is decided correctly when its two
//! detections are matched to each other; a person seen in one view only is
//! decided correctly when its detection is left unmatched.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use crate::association::{confidence_scores, fused_distances, AssociationParams};
use crate::dataset::{Dataset, Detection};
use crate::error::{Error, Result};
use crate::inference::{filter_report, AssociationReport};
use crate::model::Model;

/// A scored cross-view instance pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLabel {
    pub frame: usize,
    pub view_i: usize,
    pub view_j: usize,
    pub idx_i: usize,
    pub idx_j: usize,
    pub score: f64,
    pub positive: bool,
}

fn identities(view: &[Detection], frame: usize, camera: usize) -> Result<Vec<u32>> {
    view.iter()
        .map(|d| {
            d.identity
                .ok_or_else(|| Error::Data(format!("detection in frame {frame}, camera {camera} lacks an identity")))
        })
        .collect()
}

/// Scores every cross-view instance pair of every frame in `frames` by the
/// confidence `1 − D/max D` of the fused distance matrix.
pub fn score_pairs(
    model: &Model,
    dataset: &Dataset,
    frames: Range<usize>,
    params: &AssociationParams,
    appearance: bool,
) -> Result<Vec<PairLabel>> {
    let mut out = Vec::new();
    for f in frames {
        let frame = dataset
            .frames
            .get(f)
            .ok_or_else(|| Error::Config(format!("frame {f} outside the dataset")))?;
        let feats = model.frame_features(frame, appearance)?;
        let ids: Vec<Vec<u32>> = frame
            .views
            .iter()
            .enumerate()
            .map(|(c, v)| identities(v, f, c))
            .collect::<Result<_>>()?;
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                let d = fused_distances(&feats[i], &feats[j], params)?;
                let s = confidence_scores(&d);
                for u in 0..feats[i].len() {
                    for v in 0..feats[j].len() {
                        out.push(PairLabel {
                            frame: f,
                            view_i: i,
                            view_j: j,
                            idx_i: u,
                            idx_j: v,
                            score: s.get(u, v),
                            positive: ids[i][u] == ids[j][v],
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Indices sorted by descending score; equal scores keep input order.
fn ranking(labels: &[(f64, bool)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| labels[b].0.total_cmp(&labels[a].0));
    idx
}

/// Mean over positives of the precision at each positive's rank. `None`
/// without positives.
pub fn average_precision(labels: &[(f64, bool)]) -> Option<f64> {
    let positives = labels.iter().filter(|l| l.1).count();
    if positives == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, &i) in ranking(labels).iter().enumerate() {
        if labels[i].1 {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(acc / positives as f64)
}

/// Minimum number of positives for a meaningful 95% recall point.
pub const FPR95_MIN_POSITIVES: usize = 20;

/// False positive rate at the strictest score threshold whose predicted set
/// (`score ≥ t`) still reaches 95% recall. `None` with fewer than
/// [`FPR95_MIN_POSITIVES`] positives or without negatives.
pub fn fpr_at_95_recall(labels: &[(f64, bool)]) -> Option<f64> {
    let positives = labels.iter().filter(|l| l.1).count();
    let negatives = labels.len() - positives;
    if positives < FPR95_MIN_POSITIVES || negatives == 0 {
        return None;
    }
    let order = ranking(labels);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        // Admit every label tied at this score together.
        let t = labels[order[k]].0;
        while k < order.len() && labels[order[k]].0 == t {
            if labels[order[k]].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        if tp as f64 >= 0.95 * positives as f64 {
            return Some(fp as f64 / negatives as f64);
        }
    }
    unreachable!("admitting every label gives full recall")
}

/// Decision counts of one view pair of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairOutcome {
    pub frame: usize,
    pub view_i: usize,
    pub view_j: usize,
    pub predicted: usize,
    pub correct_predicted: usize,
    pub ground_truth: usize,
    pub decisions: usize,
    pub correct_decisions: usize,
}

impl PairOutcome {
    pub fn accuracy(&self) -> Option<f64> {
        (self.decisions > 0).then(|| self.correct_decisions as f64 / self.decisions as f64)
    }
}

/// Pooled precision, recall and accuracy, with their per-pair breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub pairs: Vec<PairOutcome>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Evaluation {
    pub fn from_pairs(pairs: Vec<PairOutcome>) -> Self {
        let sum = |f: fn(&PairOutcome) -> usize| pairs.iter().map(f).sum::<usize>();
        Evaluation {
            precision: ratio(sum(|p| p.correct_predicted), sum(|p| p.predicted)),
            recall: ratio(sum(|p| p.correct_predicted), sum(|p| p.ground_truth)),
            accuracy: ratio(sum(|p| p.correct_decisions), sum(|p| p.decisions)),
            pairs,
        }
    }

    /// IPAA-X over this evaluation's view pairs.
    pub fn ipaa(&self, x: f64) -> Result<Option<f64>> {
        ipaa_counts(&self.pairs, x)
    }
}

/// Scores one view pair given the identities of both views and the predicted
/// `(idx_i, idx_j)` matches.
pub fn pair_outcome(
    ids_i: &[u32],
    ids_j: &[u32],
    matches: &[(usize, usize)],
) -> Result<(usize, usize, usize, usize, usize)> {
    let mut partner_i: Vec<Option<usize>> = vec![None; ids_i.len()];
    let mut matched_j = vec![false; ids_j.len()];
    for &(u, v) in matches {
        if u >= ids_i.len() || v >= ids_j.len() {
            return Err(Error::Data(format!("match ({u}, {v}) refers to a missing detection")));
        }
        if partner_i[u].is_some() || matched_j[v] {
            return Err(Error::Data(format!("match ({u}, {v}) reuses a detection")));
        }
        partner_i[u] = Some(v);
        matched_j[v] = true;
    }
    let pos_j: HashMap<u32, usize> = ids_j.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let correct_predicted = matches.iter().filter(|&&(u, v)| ids_i[u] == ids_j[v]).count();
    let mut ground_truth = 0;
    let mut correct = 0;
    for (u, id) in ids_i.iter().enumerate() {
        match pos_j.get(id) {
            Some(&v) => {
                ground_truth += 1;
                if partner_i[u] == Some(v) {
                    correct += 1;
                }
            }
            None => {
                if partner_i[u].is_none() {
                    correct += 1;
                }
            }
        }
    }
    let in_i: HashMap<u32, usize> = ids_i.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut only_j = 0;
    for (v, id) in ids_j.iter().enumerate() {
        if !in_i.contains_key(id) {
            only_j += 1;
            if !matched_j[v] {
                correct += 1;
            }
        }
    }
    let decisions = ids_i.len() + only_j;
    Ok((matches.len(), correct_predicted, ground_truth, decisions, correct))
}

/// Precision, recall and ACC of a report against the dataset's identities.
pub fn evaluate_report(report: &AssociationReport, dataset: &Dataset) -> Result<Evaluation> {
    if report.cameras != dataset.cameras() {
        return Err(Error::Config(format!(
            "report has {} cameras but the dataset has {}",
            report.cameras,
            dataset.cameras()
        )));
    }
    if report.frames.end > dataset.len() {
        return Err(Error::Config("report frame range exceeds the dataset".into()));
    }
    let mut outcomes = Vec::with_capacity(report.pairs.len());
    for p in &report.pairs {
        let frame = &dataset.frames[p.frame];
        let ids_i = identities(&frame.views[p.view_i], p.frame, p.view_i)?;
        let ids_j = identities(&frame.views[p.view_j], p.frame, p.view_j)?;
        let m: Vec<(usize, usize)> = p.matches.iter().map(|m| (m.row, m.col)).collect();
        let (predicted, correct_predicted, ground_truth, decisions, correct_decisions) =
            pair_outcome(&ids_i, &ids_j, &m)?;
        outcomes.push(PairOutcome {
            frame: p.frame,
            view_i: p.view_i,
            view_j: p.view_j,
            predicted,
            correct_predicted,
            ground_truth,
            decisions,
            correct_decisions,
        });
    }
    Ok(Evaluation::from_pairs(outcomes))
}

fn check_x(x: f64) -> Result<()> {
    if !(x > 0.0 && x <= 100.0) {
        return Err(Error::Config(format!("IPAA level must lie in (0, 100], got {x}")));
    }
    Ok(())
}

/// Fraction of accuracies that reach `x`% . `None` for an empty list.
pub fn ipaa(accuracies: &[f64], x: f64) -> Result<Option<f64>> {
    check_x(x)?;
    if accuracies.is_empty() {
        return Ok(None);
    }
    let hit = accuracies.iter().filter(|&&a| a * 100.0 >= x).count();
    Ok(Some(hit as f64 / accuracies.len() as f64))
}

/// IPAA-X from decision counts, compared as `100·correct ≥ X·decisions` so
/// that boundary cases are exact. Pairs without decisions are skipped.
pub fn ipaa_counts(pairs: &[PairOutcome], x: f64) -> Result<Option<f64>> {
    check_x(x)?;
    let scored: Vec<&PairOutcome> = pairs.iter().filter(|p| p.decisions > 0).collect();
    if scored.is_empty() {
        return Ok(None);
    }
    let hit = scored
        .iter()
        .filter(|p| 100.0 * p.correct_decisions as f64 >= x * p.decisions as f64)
        .count();
    Ok(Some(hit as f64 / scored.len() as f64))
}

/// Everything the `evaluate` step reports.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub seed: Option<u64>,
    pub threshold: f64,
    pub frames: Range<usize>,
    pub average_precision: Option<f64>,
    pub fpr95: Option<f64>,
    pub evaluation: Evaluation,
    pub ipaa: [(u32, Option<f64>); 3],
}

pub const IPAA_LEVELS: [u32; 3] = [100, 90, 80];

impl MetricsReport {
    pub fn build(report: &AssociationReport, dataset: &Dataset, scores: Option<&[PairLabel]>) -> Result<Self> {
        let evaluation = evaluate_report(report, dataset)?;
        let labels: Option<Vec<(f64, bool)>> = scores.map(|s| s.iter().map(|l| (l.score, l.positive)).collect());
        let mut ipaa = [(0, None); 3];
        for (slot, x) in ipaa.iter_mut().zip(IPAA_LEVELS) {
            *slot = (x, evaluation.ipaa(x as f64)?);
        }
        Ok(MetricsReport {
            seed: report.seed,
            threshold: report.threshold,
            frames: report.frames.clone(),
            average_precision: labels.as_deref().and_then(average_precision),
            fpr95: labels.as_deref().and_then(fpr_at_95_recall),
            evaluation,
            ipaa,
        })
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
        let mut out = String::new();
        let seed = self.seed.map(|s| format!(" seed={s}")).unwrap_or_default();
        let w = &mut out;
        writeln!(
            w,
            "#mvassoc-metrics v1{seed} threshold={:?} frames={}..{}",
            self.threshold, self.frames.start, self.frames.end
        )
        .expect("string write");
        writeln!(w, "AP {}", fmt(self.average_precision)).expect("string write");
        writeln!(w, "FPR-95 {}", fmt(self.fpr95)).expect("string write");
        writeln!(w, "P {}", fmt(self.evaluation.precision)).expect("string write");
        writeln!(w, "R {}", fmt(self.evaluation.recall)).expect("string write");
        writeln!(w, "ACC {}", fmt(self.evaluation.accuracy)).expect("string write");
        for (x, v) in self.ipaa {
            writeln!(w, "IPAA-{x} {}", fmt(v)).expect("string write");
        }
        let mut views: Vec<(usize, usize)> = self.evaluation.pairs.iter().map(|p| (p.view_i, p.view_j)).collect();
        views.sort_unstable();
        views.dedup();
        for (i, j) in views {
            let sub: Vec<PairOutcome> = self
                .evaluation
                .pairs
                .iter()
                .filter(|p| (p.view_i, p.view_j) == (i, j))
                .copied()
                .collect();
            let e = Evaluation::from_pairs(sub);
            writeln!(
                w,
                "view_pair {i} {j} P {} R {} ACC {}",
                fmt(e.precision),
                fmt(e.recall),
                fmt(e.accuracy)
            )
            .expect("string write");
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// `threshold,precision,recall` rows for thresholds `0, step, 2·step, … ≤ 1`.
pub fn precision_recall_table(report: &AssociationReport, dataset: &Dataset, step: f64) -> Result<String> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("threshold step must lie in (0, 1], got {step}")));
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
    let mut out = String::from("threshold,precision,recall\n");
    let n = (1.0 / step + 1e-9).floor() as usize;
    for k in 0..=n {
        let t = (k as f64 * step).min(1.0);
        let e = evaluate_report(&filter_report(report, t), dataset)?;
        writeln!(out, "{t:?},{},{}", fmt(e.precision), fmt(e.recall)).expect("string write");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[(0.9, true), (0.8, true), (0.1, false)]), Some(1.0));
        let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)]).unwrap();
        assert_eq!(ap, (1.0 + 2.0 / 3.0) / 2.0);
        let mut l = vec![(0.5, false); 4];
        l.push((0.1, true));
        assert_eq!(average_precision(&l), Some(1.0 / 5.0));
        assert_eq!(average_precision(&[(0.3, false)]), None);
    }

    #[test]
    fn ap_ties_keep_input_order() {
        assert_eq!(average_precision(&[(0.5, false), (0.5, true)]), Some(0.5));
        assert_eq!(average_precision(&[(0.5, true), (0.5, false)]), Some(1.0));
    }

    #[test]
    fn fpr95_examples() {
        let mut perfect: Vec<(f64, bool)> = (0..20).map(|k| (1.0 - k as f64 * 0.01, true)).collect();
        perfect.extend((0..10).map(|k| (0.5 - k as f64 * 0.01, false)));
        assert_eq!(fpr_at_95_recall(&perfect), Some(0.0));
        let flat = vec![(0.3, true); 20]
            .into_iter()
            .chain(vec![(0.3, false); 5])
            .collect::<Vec<_>>();
        assert_eq!(fpr_at_95_recall(&flat), Some(1.0));
        assert_eq!(fpr_at_95_recall(&[(0.3, true); 19]), None);
    }

    #[test]
    fn ipaa_examples() {
        let a = [1.0, 0.95, 0.80, 0.50];
        assert_eq!(ipaa(&a, 90.0).unwrap(), Some(0.5));
        assert_eq!(ipaa(&a, 100.0).unwrap(), Some(0.25));
        assert_eq!(ipaa(&a, 80.0).unwrap(), Some(0.75));
        assert!(ipaa(&a, 0.0).is_err());
        assert!(ipaa(&a, 101.0).is_err());
    }

    #[test]
    fn pair_outcome_conventions() {
        // Persons 1 and 2 in both views, 3 only in i, 4 only in j.
        let ids_i = [1, 2, 3];
        let ids_j = [2, 4, 1];
        assert_eq!(
            pair_outcome(&ids_i, &ids_j, &[(0, 2), (1, 0)]).unwrap(),
            (2, 2, 2, 4, 4)
        );
        // Forcing 3 onto 4 costs both unmatched decisions.
        assert_eq!(
            pair_outcome(&ids_i, &ids_j, &[(0, 2), (1, 0), (2, 1)]).unwrap(),
            (3, 2, 2, 4, 2)
        );
        // Empty prediction: only the two one-view persons are right.
        assert_eq!(pair_outcome(&ids_i, &ids_j, &[]).unwrap(), (0, 0, 2, 4, 2));
        assert!(pair_outcome(&ids_i, &ids_j, &[(0, 2), (1, 2)]).is_err());
        assert!(pair_outcome(&ids_i, &ids_j, &[(5, 0)]).is_err());
    }
}
