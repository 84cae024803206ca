//! Synthetic multi-view scenes: agents walking on a ground plane, observed by
//! static pinhole cameras placed on a ring around the arena.

mod camera;

pub use camera::{CameraModel, Vec3};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{BoundingBox, Dataset, DatasetHeader, Detection, MultiViewFrame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AppearanceMode {
    None,
    /// Every agent shares one appearance vector.
    Identical,
    /// A per-identity vector plus per-detection Gaussian noise.
    PerIdentity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub cameras: usize,
    pub agents: usize,
    pub frames: usize,
    /// Standard deviation of the corner jitter, in normalized units.
    pub noise: f64,
    /// Independent per-detection drop probability.
    pub dropout: f64,
    pub appearance: AppearanceMode,
    pub appearance_dim: usize,
    pub appearance_noise: f64,
    /// Half side length of the square arena, meters.
    pub arena_half_extent: f64,
    pub camera_radius: f64,
    pub camera_height: f64,
    pub focal: f64,
    pub image_height: u32,
    pub image_width: u32,
    /// Seconds between frames.
    pub frame_interval: f64,
    /// Meters per second.
    pub max_speed: f64,
    /// Standard deviation of velocity changes, meters per second per √second.
    pub acceleration_noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            cameras: 3,
            agents: 8,
            frames: 600,
            noise: 0.005,
            dropout: 0.15,
            appearance: AppearanceMode::Identical,
            appearance_dim: 16,
            appearance_noise: 0.1,
            arena_half_extent: 5.0,
            camera_radius: 11.0,
            camera_height: 4.5,
            focal: 900.0,
            image_height: 1080,
            image_width: 1920,
            frame_interval: 0.2,
            max_speed: 1.5,
            acceleration_noise: 0.6,
        }
    }
}

impl SceneConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.cameras < 2 {
            return fail(format!("need at least 2 cameras, got {}", self.cameras));
        }
        if self.agents < 1 {
            return fail("need at least 1 agent".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0,1), got {}", self.dropout));
        }
        if !(self.noise >= 0.0) || !(self.appearance_noise >= 0.0) {
            return fail("noise levels must be non-negative".into());
        }
        if self.appearance != AppearanceMode::None && self.appearance_dim == 0 {
            return fail("appearance_dim must be positive when appearance is enabled".into());
        }
        if !(self.focal > 0.0) || self.image_height == 0 || self.image_width == 0 {
            return fail("focal and image size must be positive".into());
        }
        if !(self.frame_interval > 0.0) || !(self.max_speed > 0.0) || !(self.arena_half_extent > 0.0) {
            return fail("frame_interval, max_speed and arena_half_extent must be positive".into());
        }
        if !(self.camera_radius > self.arena_half_extent) {
            return fail("cameras must stand outside the arena".into());
        }
        Ok(())
    }

    /// Cameras evenly spaced on a ring, all aimed at the arena center.
    pub fn camera_ring(&self) -> Vec<CameraModel> {
        (0..self.cameras)
            .map(|k| {
                let angle = -std::f64::consts::FRAC_PI_2 + std::f64::consts::TAU * k as f64 / self.cameras as f64;
                let pos = [
                    self.camera_radius * angle.cos(),
                    self.camera_radius * angle.sin(),
                    self.camera_height,
                ];
                CameraModel::look_at(pos, [0.0, 0.0, 0.0], self.focal, (self.image_height, self.image_width))
            })
            .collect()
    }
}

/// Ground trajectory and body size of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub identity: u32,
    pub positions: Vec<[f64; 2]>,
    pub height: f64,
    pub width: f64,
}

/// Generated scene: the dataset plus the hidden ground truth used to make it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub dataset: Dataset,
    pub cameras: Vec<CameraModel>,
    pub tracks: Vec<AgentTrack>,
}

fn reflect(x: &mut f64, v: &mut f64, bound: f64) {
    if *x > bound {
        *x = 2.0 * bound - *x;
        *v = -*v;
    } else if *x < -bound {
        *x = -2.0 * bound - *x;
        *v = -*v;
    }
}

fn simulate_tracks(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<AgentTrack> {
    let a = cfg.arena_half_extent;
    let dt = cfg.frame_interval;
    let accel = Normal::new(0.0, cfg.acceleration_noise * dt.sqrt()).expect("finite sigma");
    (0..cfg.agents)
        .map(|id| {
            let mut p = [rng.random_range(-a..a), rng.random_range(-a..a)];
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let speed = rng.random_range(0.3 * cfg.max_speed..0.8 * cfg.max_speed);
            let mut v = [speed * heading.cos(), speed * heading.sin()];
            let height = rng.random_range(1.6..1.9);
            let width = rng.random_range(0.4..0.6);
            let mut positions = Vec::with_capacity(cfg.frames);
            for _ in 0..cfg.frames {
                positions.push(p);
                v[0] += accel.sample(rng);
                v[1] += accel.sample(rng);
                let s = (v[0] * v[0] + v[1] * v[1]).sqrt();
                if s > cfg.max_speed {
                    v[0] *= cfg.max_speed / s;
                    v[1] *= cfg.max_speed / s;
                }
                p[0] += v[0] * dt;
                p[1] += v[1] * dt;
                reflect(&mut p[0], &mut v[0], a);
                reflect(&mut p[1], &mut v[1], a);
            }
            AgentTrack {
                identity: id as u32,
                positions,
                height,
                width,
            }
        })
        .collect()
}

/// Generates a scene deterministically from `seed`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = cfg.camera_ring();
    let tracks = simulate_tracks(cfg, &mut rng);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let appearance_base: Vec<Vec<f64>> = match cfg.appearance {
        AppearanceMode::None => Vec::new(),
        AppearanceMode::Identical => {
            let shared: Vec<f64> = (0..cfg.appearance_dim).map(|_| unit.sample(&mut rng)).collect();
            vec![shared; cfg.agents]
        }
        AppearanceMode::PerIdentity => (0..cfg.agents)
            .map(|_| (0..cfg.appearance_dim).map(|_| unit.sample(&mut rng)).collect())
            .collect(),
    };
    let jitter = Normal::new(0.0, cfg.noise).expect("finite sigma");
    let app_jitter = Normal::new(0.0, cfg.appearance_noise).expect("finite sigma");

    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let mut frame = MultiViewFrame::empty(t, cfg.cameras);
        for (c, cam) in cameras.iter().enumerate() {
            let view = &mut frame.views[c];
            for track in &tracks {
                let Some(b) = cam.project_agent(track.positions[t], track.height, track.width) else {
                    continue;
                };
                if rng.random::<f64>() < cfg.dropout {
                    continue;
                }
                let mut corners = b.corners();
                if cfg.noise > 0.0 {
                    for v in &mut corners {
                        *v = (*v + jitter.sample(&mut rng)).clamp(0.0, 1.0);
                    }
                }
                let bbox = BoundingBox::new(corners[0], corners[1], corners[2], corners[3]);
                if !bbox.is_valid() {
                    continue;
                }
                let appearance = match cfg.appearance {
                    AppearanceMode::None => None,
                    AppearanceMode::Identical => Some(appearance_base[track.identity as usize].clone()),
                    AppearanceMode::PerIdentity => Some(
                        appearance_base[track.identity as usize]
                            .iter()
                            .map(|x| x + app_jitter.sample(&mut rng))
                            .collect(),
                    ),
                };
                view.push(Detection {
                    frame: t,
                    camera: c,
                    bbox,
                    identity: Some(track.identity),
                    appearance,
                });
            }
            // Detection order must not leak identity.
            view.shuffle(&mut rng);
        }
        frames.push(frame);
    }
    let dataset = Dataset {
        header: DatasetHeader {
            cameras: cfg.cameras,
            height: cfg.image_height,
            width: cfg.image_width,
            frames: cfg.frames,
            appearance_dim: if cfg.appearance == AppearanceMode::None {
                0
            } else {
                cfg.appearance_dim
            },
            identities: true,
            seed: Some(seed),
        },
        frames,
    };
    Ok(Scene {
        dataset,
        cameras,
        tracks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(frames: usize) -> SceneConfig {
        SceneConfig {
            frames,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_scene(&small(50), 3).unwrap();
        let b = generate_scene(&small(50), 3).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate_scene(&small(50), 4).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SceneConfig {
                cameras: 1,
                ..small(10)
            },
            SceneConfig { agents: 0, ..small(10) },
            SceneConfig {
                dropout: 1.0,
                ..small(10)
            },
            SceneConfig {
                dropout: -0.1,
                ..small(10)
            },
        ] {
            assert!(matches!(generate_scene(&cfg, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn noiseless_scene_shows_every_projectable_agent() {
        let cfg = SceneConfig {
            noise: 0.0,
            dropout: 0.0,
            ..small(40)
        };
        let scene = generate_scene(&cfg, 9).unwrap();
        for (t, frame) in scene.dataset.frames.iter().enumerate() {
            for (c, cam) in scene.cameras.iter().enumerate() {
                let expected: Vec<(u32, BoundingBox)> = scene
                    .tracks
                    .iter()
                    .filter_map(|tr| {
                        cam.project_agent(tr.positions[t], tr.height, tr.width)
                            .map(|b| (tr.identity, b))
                    })
                    .collect();
                let view = &frame.views[c];
                assert_eq!(view.len(), expected.len());
                for (id, b) in expected {
                    let d = view.iter().find(|d| d.identity == Some(id)).unwrap();
                    assert_eq!(d.bbox, b);
                }
            }
        }
    }

    #[test]
    fn visible_count_tracks_dropout_rate() {
        let cfg = SceneConfig {
            noise: 0.0,
            ..small(600)
        };
        let scene = generate_scene(&cfg, 21).unwrap();
        let ds = &scene.dataset;
        for (c, cam) in scene.cameras.iter().enumerate() {
            let mut projectable = 0usize;
            let mut seen = 0usize;
            for t in 0..ds.len() {
                projectable += scene
                    .tracks
                    .iter()
                    .filter(|tr| cam.project_agent(tr.positions[t], tr.height, tr.width).is_some())
                    .count();
                seen += ds.view(t, c).len();
            }
            let ratio = seen as f64 / projectable as f64;
            assert!(
                (ratio - (1.0 - cfg.dropout)).abs() < 0.05 * (1.0 - cfg.dropout),
                "ratio {ratio}"
            );
        }
    }

    #[test]
    fn generated_data_is_valid_and_unique_per_view() {
        let scene = generate_scene(&small(100), 5).unwrap();
        scene.dataset.validate().unwrap();
        for cam in &scene.cameras {
            assert!(cam.orthonormality_error() < 1e-9);
        }
    }

    #[test]
    fn tracks_move_continuously_and_negatives_differ() {
        let cfg = small(300);
        let scene = generate_scene(&cfg, 8).unwrap();
        let cap = cfg.max_speed * cfg.frame_interval + 1e-12;
        for tr in &scene.tracks {
            for w in tr.positions.windows(2) {
                let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
                assert!(d <= cap, "step {d} exceeds cap {cap}");
            }
        }
        for t in 0..cfg.frames - 5 {
            let mean: f64 = scene
                .tracks
                .iter()
                .map(|tr| {
                    let (a, b) = (tr.positions[t], tr.positions[t + 5]);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                })
                .sum::<f64>()
                / scene.tracks.len() as f64;
            assert!(mean > 0.0);
        }
    }

    #[test]
    fn identical_appearance_mode_shares_vectors() {
        let scene = generate_scene(&small(5), 2).unwrap();
        let mut first: Option<Vec<f64>> = None;
        for f in &scene.dataset.frames {
            for v in &f.views {
                for d in v {
                    let a = d.appearance.clone().unwrap();
                    match &first {
                        None => first = Some(a),
                        Some(x) => assert_eq!(x, &a),
                    }
                }
            }
        }
    }
}
