//! Multi-view detection datasets and their line-oriented text format.
//!
//! ```text
//! #mvassoc-dataset v1 cameras=3 height=1080 width=1920 frames=600 appearance_dim=0 identities=1 seed=7
//! frame camera x_l y_l x_r y_r [identity] [a_1,a_2,...,a_d]
//! ```
//!
//! The identity column is present iff `identities=1` (`-` marks an unknown
//! identity); the appearance column is present iff `appearance_dim > 0`.
//! Lines starting with `#` after the header are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "#mvassoc-dataset";
const VERSION: &str = "v1";

/// Normalized box given by its top-left and bottom-right corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_l: f64,
    pub y_l: f64,
    pub x_r: f64,
    pub y_r: f64,
}

impl BoundingBox {
    pub fn new(x_l: f64, y_l: f64, x_r: f64, y_r: f64) -> Self {
        BoundingBox { x_l, y_l, x_r, y_r }
    }

    pub fn top_left(&self) -> [f64; 2] {
        [self.x_l, self.y_l]
    }

    pub fn bottom_right(&self) -> [f64; 2] {
        [self.x_r, self.y_r]
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_l, self.y_l, self.x_r, self.y_r]
    }

    /// Corner-wise midpoint of two boxes.
    pub fn midpoint(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_l: 0.5 * (self.x_l + other.x_l),
            y_l: 0.5 * (self.y_l + other.y_l),
            x_r: 0.5 * (self.x_r + other.x_r),
            y_r: 0.5 * (self.y_r + other.y_r),
        }
    }

    /// Inside the unit square with the top-left corner strictly above and
    /// left of the bottom-right one.
    pub fn is_valid(&self) -> bool {
        let c = self.corners();
        c.iter().all(|v| (0.0..=1.0).contains(v)) && self.x_l < self.x_r && self.y_l < self.y_r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: usize,
    pub camera: usize,
    pub bbox: BoundingBox,
    pub identity: Option<u32>,
    pub appearance: Option<Vec<f64>>,
}

/// All detections of all cameras at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewFrame {
    pub index: usize,
    /// `views[c]` holds camera `c`'s detections in file order.
    pub views: Vec<Vec<Detection>>,
}

impl MultiViewFrame {
    pub fn empty(index: usize, cameras: usize) -> Self {
        MultiViewFrame {
            index,
            views: vec![Vec::new(); cameras],
        }
    }

    pub fn detection_count(&self) -> usize {
        self.views.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub cameras: usize,
    pub height: u32,
    pub width: u32,
    pub frames: usize,
    pub appearance_dim: usize,
    pub identities: bool,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub frames: Vec<MultiViewFrame>,
}

impl Dataset {
    pub fn cameras(&self) -> usize {
        self.header.cameras
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn view(&self, frame: usize, camera: usize) -> &[Detection] {
        &self.frames[frame].views[camera]
    }

    /// Splits frame indices into a leading training range and a trailing
    /// held-out range containing `holdout` of the frames (rounded).
    pub fn split(&self, holdout: f64) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let n = self.frames.len();
        let held = ((n as f64) * holdout.clamp(0.0, 1.0)).round() as usize;
        let cut = n - held.min(n);
        (0..cut, cut..n)
    }

    /// Checks structural invariants: frame numbering, box validity, unique
    /// identities per view and consistent appearance dimensions.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.cameras == 0 {
            return Err(Error::Data("dataset declares zero cameras".into()));
        }
        if self.frames.len() != h.frames {
            return Err(Error::Data(format!(
                "header declares {} frames, found {}",
                h.frames,
                self.frames.len()
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i || f.views.len() != h.cameras {
                return Err(Error::Data(format!("frame {i} is malformed")));
            }
            for (c, view) in f.views.iter().enumerate() {
                let mut seen = std::collections::HashSet::new();
                for d in view {
                    if d.frame != i || d.camera != c {
                        return Err(Error::Data(format!(
                            "detection filed under wrong frame/camera ({i}, {c})"
                        )));
                    }
                    if !d.bbox.is_valid() {
                        return Err(Error::Data(format!("invalid box {:?} in frame {i} camera {c}", d.bbox)));
                    }
                    if let Some(id) = d.identity {
                        if !seen.insert(id) {
                            return Err(Error::Data(format!(
                                "identity {id} appears twice in frame {i} camera {c}"
                            )));
                        }
                    }
                    match (&d.appearance, h.appearance_dim) {
                        (None, 0) => {}
                        (Some(a), dim) if a.len() == dim && dim > 0 => {}
                        _ => {
                            return Err(Error::Data(format!(
                                "appearance dimension mismatch in frame {i} camera {c}"
                            )))
                        }
                    }
                    if !h.identities && d.identity.is_some() {
                        return Err(Error::Data("identity present but header declares none".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut out = String::new();
        let _ = write!(
            out,
            "{MAGIC} {VERSION} cameras={} height={} width={} frames={} appearance_dim={} identities={}",
            h.cameras,
            h.height,
            h.width,
            h.frames,
            h.appearance_dim,
            u8::from(h.identities)
        );
        if let Some(seed) = h.seed {
            let _ = write!(out, " seed={seed}");
        }
        out.push('\n');
        for f in &self.frames {
            for (c, view) in f.views.iter().enumerate() {
                for d in view {
                    let b = &d.bbox;
                    let _ = write!(out, "{} {} {} {} {} {}", f.index, c, b.x_l, b.y_l, b.x_r, b.y_r);
                    if h.identities {
                        match d.identity {
                            Some(id) => {
                                let _ = write!(out, " {id}");
                            }
                            None => out.push_str(" -"),
                        }
                    }
                    if let Some(a) = &d.appearance {
                        out.push(' ');
                        for (k, v) in a.iter().enumerate() {
                            if k > 0 {
                                out.push(',');
                            }
                            let _ = write!(out, "{v}");
                        }
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((n, l)) => break parse_header(l, n + 1)?,
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        msg: "missing header".into(),
                    })
                }
            }
        };
        let mut frames: Vec<MultiViewFrame> = (0..header.frames)
            .map(|i| MultiViewFrame::empty(i, header.cameras))
            .collect();
        for (n, line) in lines {
            let line_no = n + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let d = parse_detection(line, line_no, &header)?;
            frames[d.frame].views[d.camera].push(d);
        }
        let ds = Dataset { header, frames };
        ds.validate()?;
        Ok(ds)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_header(line: &str, line_no: usize) -> Result<DatasetHeader> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err(parse_err(line_no, format!("expected header starting with `{MAGIC}`")));
    }
    if tokens.next() != Some(VERSION) {
        return Err(parse_err(
            line_no,
            format!("unsupported dataset version, expected {VERSION}"),
        ));
    }
    let mut cameras = None;
    let mut height = None;
    let mut width = None;
    let mut frames = None;
    let mut appearance_dim = None;
    let mut identities = None;
    let mut seed = None;
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("malformed header field `{tok}`")))?;
        let num = || {
            v.parse::<u64>()
                .map_err(|_| parse_err(line_no, format!("non-integer value for `{k}`")))
        };
        match k {
            "cameras" => cameras = Some(num()? as usize),
            "height" => height = Some(num()? as u32),
            "width" => width = Some(num()? as u32),
            "frames" => frames = Some(num()? as usize),
            "appearance_dim" => appearance_dim = Some(num()? as usize),
            "identities" => identities = Some(num()? != 0),
            "seed" => seed = Some(num()?),
            _ => return Err(parse_err(line_no, format!("unknown header field `{k}`"))),
        }
    }
    let lacks = |name: &str| parse_err(line_no, format!("header lacks `{name}`"));
    Ok(DatasetHeader {
        cameras: cameras.ok_or_else(|| lacks("cameras"))?,
        height: height.ok_or_else(|| lacks("height"))?,
        width: width.ok_or_else(|| lacks("width"))?,
        frames: frames.ok_or_else(|| lacks("frames"))?,
        appearance_dim: appearance_dim.ok_or_else(|| lacks("appearance_dim"))?,
        identities: identities.unwrap_or(false),
        seed,
    })
}

fn parse_detection(line: &str, line_no: usize, h: &DatasetHeader) -> Result<Detection> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    let expected = 6 + usize::from(h.identities) + usize::from(h.appearance_dim > 0);
    if toks.len() != expected {
        return Err(parse_err(
            line_no,
            format!("expected {expected} fields, found {}", toks.len()),
        ));
    }
    let int = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(line_no, format!("invalid {what} `{s}`")))
    };
    let real = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(line_no, format!("invalid real `{s}`")))
    };
    let frame = int(toks[0], "frame")?;
    let camera = int(toks[1], "camera")?;
    if frame >= h.frames {
        return Err(parse_err(
            line_no,
            format!("frame {frame} beyond declared count {}", h.frames),
        ));
    }
    if camera >= h.cameras {
        return Err(parse_err(
            line_no,
            format!("camera {camera} beyond declared count {}", h.cameras),
        ));
    }
    let bbox = BoundingBox::new(real(toks[2])?, real(toks[3])?, real(toks[4])?, real(toks[5])?);
    if !bbox.is_valid() {
        return Err(parse_err(
            line_no,
            "box corners must lie in [0,1] with top-left before bottom-right",
        ));
    }
    let mut next = 6;
    let identity = if h.identities {
        let t = toks[next];
        next += 1;
        if t == "-" {
            None
        } else {
            Some(
                t.parse::<u32>()
                    .map_err(|_| parse_err(line_no, format!("invalid identity `{t}`")))?,
            )
        }
    } else {
        None
    };
    let appearance = if h.appearance_dim > 0 {
        let vals = toks[next].split(',').map(real).collect::<Result<Vec<f64>>>()?;
        if vals.len() != h.appearance_dim {
            return Err(parse_err(
                line_no,
                format!(
                    "appearance has {} values, header declares {}",
                    vals.len(),
                    h.appearance_dim
                ),
            ));
        }
        Some(vals)
    } else {
        None
    };
    Ok(Detection {
        frame,
        camera,
        bbox,
        identity,
        appearance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let mk = |frame, camera, x: f64, id, app: Option<Vec<f64>>| Detection {
            frame,
            camera,
            bbox: BoundingBox::new(x, 0.1, x + 0.1, 0.4),
            identity: id,
            appearance: app,
        };
        let mut f0 = MultiViewFrame::empty(0, 2);
        f0.views[0].push(mk(0, 0, 0.1, Some(3), Some(vec![0.5, -1.25])));
        f0.views[0].push(mk(0, 0, 0.3, None, Some(vec![1e-9, 2.0])));
        f0.views[1].push(mk(0, 1, 0.2, Some(3), Some(vec![0.1, 0.2])));
        let f1 = MultiViewFrame::empty(1, 2);
        Dataset {
            header: DatasetHeader {
                cameras: 2,
                height: 480,
                width: 640,
                frames: 2,
                appearance_dim: 2,
                identities: true,
                seed: Some(11),
            },
            frames: vec![f0, f1],
        }
    }

    #[test]
    fn text_round_trip() {
        let ds = tiny();
        let back = Dataset::from_text(&ds.to_text()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = tiny().to_text();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = "0 0 0.1 0.1 0.2";
        match Dataset::from_text(&lines.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match Dataset::from_text("0 0 0.1 0.1 0.2 0.2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let bad_box = text.replace("0 1 0.2 0.1 0.30000000000000004 0.4", "0 1 0.5 0.1 0.2 0.4");
        assert_ne!(bad_box, text);
        assert!(matches!(
            Dataset::from_text(&bad_box),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn duplicate_identity_rejected() {
        let mut ds = tiny();
        ds.frames[0].views[0][1].identity = Some(3);
        assert!(Dataset::from_text(&ds.to_text()).is_err());
    }

    #[test]
    fn split_keeps_tail() {
        let mut ds = tiny();
        ds.header.frames = 10;
        ds.frames = (0..10).map(|i| MultiViewFrame::empty(i, 2)).collect();
        let (train, val) = ds.split(0.1);
        assert_eq!(train, 0..9);
        assert_eq!(val, 9..10);
    }

    #[test]
    fn midpoint_of_boxes() {
        let a = BoundingBox::new(0.0, 0.0, 1.0, 1.0);
        let b = BoundingBox::new(2.0, 2.0, 3.0, 3.0);
        assert_eq!(a.midpoint(&b), BoundingBox::new(1.0, 1.0, 2.0, 2.0));
        assert_eq!(a.midpoint(&a), a);
    }
}
