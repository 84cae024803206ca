//! Dataset-level association with a trained model, and the association
//! report format.
//!
//! A report starts with a header line
//! `#mvassoc-associations v1 seed=S threshold=T frames=A..B cameras=C`
//! followed by one record per retained match:
//! `frame camera_i camera_j idx_i idx_j confidence`. Every view pair
//! `camera_i < camera_j` of every frame in `A..B` counts as evaluated, with
//! or without records.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use crate::association::{associate, AssociationParams, Match};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;

/// Association result of one view pair of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAssociation {
    pub frame: usize,
    pub view_i: usize,
    pub view_j: usize,
    pub matches: Vec<Match>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationReport {
    pub seed: Option<u64>,
    pub threshold: f64,
    pub frames: Range<usize>,
    pub cameras: usize,
    /// One entry per evaluated view pair, ordered by frame then pair.
    pub pairs: Vec<PairAssociation>,
}

impl AssociationReport {
    pub fn match_count(&self) -> usize {
        self.pairs.iter().map(|p| p.matches.len()).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let seed = self.seed.map(|s| format!(" seed={s}")).unwrap_or_default();
        writeln!(
            out,
            "#mvassoc-associations v1{seed} threshold={:?} frames={}..{} cameras={}",
            self.threshold, self.frames.start, self.frames.end, self.cameras
        )
        .expect("string write");
        for p in &self.pairs {
            for m in &p.matches {
                writeln!(
                    out,
                    "{} {} {} {} {} {:?}",
                    p.frame, p.view_i, p.view_j, m.row, m.col, m.confidence
                )
                .expect("string write");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { line, msg };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty report".into()))?;
        let mut toks = header.split_whitespace();
        if toks.next() != Some("#mvassoc-associations") || toks.next() != Some("v1") {
            return Err(perr(1, "not an association report".into()));
        }
        let (mut seed, mut threshold, mut frames, mut cameras) = (None, None, None, None);
        for tok in toks {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| perr(1, format!("malformed header field `{tok}`")))?;
            let bad = || perr(1, format!("invalid value for `{k}`"));
            match k {
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                "threshold" => threshold = Some(v.parse::<f64>().map_err(|_| bad())?),
                "cameras" => cameras = Some(v.parse::<usize>().map_err(|_| bad())?),
                "frames" => {
                    let (a, b) = v.split_once("..").ok_or_else(bad)?;
                    let a = a.parse::<usize>().map_err(|_| bad())?;
                    let b = b.parse::<usize>().map_err(|_| bad())?;
                    if a > b {
                        return Err(bad());
                    }
                    frames = Some(a..b);
                }
                _ => return Err(perr(1, format!("unknown header field `{k}`"))),
            }
        }
        let threshold = threshold.ok_or_else(|| perr(1, "header lacks `threshold`".into()))?;
        let frames = frames.ok_or_else(|| perr(1, "header lacks `frames`".into()))?;
        let cameras = cameras.ok_or_else(|| perr(1, "header lacks `cameras`".into()))?;

        let mut report = AssociationReport {
            seed,
            threshold,
            pairs: empty_pairs(frames.clone(), cameras),
            frames,
            cameras,
        };
        let n_pairs = cameras * cameras.saturating_sub(1) / 2;
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 6 {
                return Err(perr(line_no, format!("expected 6 fields, found {}", t.len())));
            }
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| perr(line_no, format!("invalid integer `{s}`")))
            };
            let (frame, vi, vj, row, col) = (int(t[0])?, int(t[1])?, int(t[2])?, int(t[3])?, int(t[4])?);
            let confidence: f64 = t[5]
                .parse()
                .map_err(|_| perr(line_no, format!("invalid confidence `{}`", t[5])))?;
            if !report.frames.contains(&frame) {
                return Err(perr(line_no, format!("frame {frame} outside the declared range")));
            }
            if vi >= vj || vj >= cameras {
                return Err(perr(line_no, format!("invalid view pair ({vi}, {vj})")));
            }
            let idx = (frame - report.frames.start) * n_pairs + pair_index(vi, vj, cameras);
            let pair = &mut report.pairs[idx];
            if pair.matches.iter().any(|m| m.row == row || m.col == col) {
                return Err(perr(line_no, "detection matched twice".into()));
            }
            pair.matches.push(Match { row, col, confidence });
        }
        Ok(report)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Position of `(i, j)`, `i < j`, in row-major enumeration of view pairs.
fn pair_index(i: usize, j: usize, cameras: usize) -> usize {
    i * (2 * cameras - i - 1) / 2 + (j - i - 1)
}

fn empty_pairs(frames: Range<usize>, cameras: usize) -> Vec<PairAssociation> {
    let mut out = Vec::new();
    for frame in frames {
        for i in 0..cameras {
            for j in i + 1..cameras {
                out.push(PairAssociation {
                    frame,
                    view_i: i,
                    view_j: j,
                    matches: Vec::new(),
                });
            }
        }
    }
    out
}

/// Associates every view pair of every frame in `frames`.
pub fn associate_dataset(
    model: &Model,
    dataset: &Dataset,
    frames: Range<usize>,
    params: &AssociationParams,
    appearance: bool,
) -> Result<AssociationReport> {
    params.validate()?;
    if dataset.cameras() != model.cameras() {
        return Err(Error::Config(format!(
            "checkpoint expects {} cameras but the dataset has {}",
            model.cameras(),
            dataset.cameras()
        )));
    }
    if frames.end > dataset.len() {
        return Err(Error::Config(format!(
            "frame range {}..{} exceeds the dataset length {}",
            frames.start,
            frames.end,
            dataset.len()
        )));
    }
    let cameras = dataset.cameras();
    let mut pairs = empty_pairs(frames.clone(), cameras);
    let n_pairs = cameras * (cameras - 1) / 2;
    for (k, frame) in frames.clone().enumerate() {
        let feats = model.frame_features(&dataset.frames[frame], appearance)?;
        for i in 0..cameras {
            for j in i + 1..cameras {
                let r = associate(&feats[i], &feats[j], params)?;
                pairs[k * n_pairs + pair_index(i, j, cameras)].matches = r.matches;
            }
        }
    }
    Ok(AssociationReport {
        seed: dataset.header.seed,
        threshold: params.threshold,
        frames,
        cameras,
        pairs,
    })
}

/// Keeps only matches whose confidence reaches `threshold`.
pub fn filter_report(report: &AssociationReport, threshold: f64) -> AssociationReport {
    let mut out = report.clone();
    out.threshold = threshold;
    for p in &mut out.pairs {
        p.matches.retain(|m| m.confidence >= threshold);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_index_enumerates_in_order() {
        let mut k = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                assert_eq!(pair_index(i, j, 4), k);
                k += 1;
            }
        }
    }

    #[test]
    fn report_round_trip() {
        let mut pairs = empty_pairs(3..5, 3);
        pairs[1].matches.push(Match {
            row: 0,
            col: 2,
            confidence: 0.1 + 0.2,
        });
        pairs[5].matches.push(Match {
            row: 1,
            col: 0,
            confidence: 1.0,
        });
        let r = AssociationReport {
            seed: Some(4),
            threshold: 0.4,
            frames: 3..5,
            cameras: 3,
            pairs,
        };
        let back = AssociationReport::from_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.match_count(), 2);
    }

    #[test]
    fn malformed_reports_are_rejected() {
        let head = "#mvassoc-associations v1 threshold=0.0 frames=0..2 cameras=2\n";
        assert!(AssociationReport::from_text(&format!("{head}0 0 1 0 0 0.5\n")).is_ok());
        let cases = [
            "0 1 0 0 0 0.5\n",
            "5 0 1 0 0 0.5\n",
            "0 0 1 0 0\n",
            "0 0 1 0 0 0.5\n0 0 1 0 1 0.5\n",
        ];
        for c in cases {
            match AssociationReport::from_text(&format!("{head}{c}")) {
                Err(Error::Parse { line, .. }) => assert!(line >= 2),
                other => panic!("accepted {c:?}: {other:?}"),
            }
        }
        assert!(AssociationReport::from_text("").is_err());
        assert!(AssociationReport::from_text("#mvassoc-associations v1 frames=0..1 cameras=2").is_err());
    }

    #[test]
    fn filtering_drops_low_confidence() {
        let mut pairs = empty_pairs(0..1, 2);
        pairs[0].matches = vec![
            Match {
                row: 0,
                col: 0,
                confidence: 0.3,
            },
            Match {
                row: 1,
                col: 1,
                confidence: 0.5,
            },
        ];
        let r = AssociationReport {
            seed: None,
            threshold: 0.0,
            frames: 0..1,
            cameras: 2,
            pairs,
        };
        let f = filter_report(&r, 0.4);
        assert_eq!(f.match_count(), 1);
        assert_eq!(f.threshold, 0.4);
    }
}
