use crate::dataset::BoundingBox;

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Static pinhole camera. `rotation` maps world directions into the camera
/// frame (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub position: Vec3,
    pub rotation: [Vec3; 3],
    pub focal: f64,
    pub principal: [f64; 2],
    /// `(height, width)` in pixels.
    pub image_size: (u32, u32),
}

impl CameraModel {
    /// Camera at `position` aimed at `target`, with world `+z` as up.
    pub fn look_at(position: Vec3, target: Vec3, focal: f64, image_size: (u32, u32)) -> Self {
        let forward = normalize(sub(target, position));
        let right = normalize(cross(forward, [0.0, 0.0, 1.0]));
        let down = cross(forward, right);
        CameraModel {
            position,
            rotation: [right, down, forward],
            focal,
            principal: [image_size.1 as f64 / 2.0, image_size.0 as f64 / 2.0],
            image_size,
        }
    }

    /// World point to camera coordinates.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.position);
        [
            dot(self.rotation[0], d),
            dot(self.rotation[1], d),
            dot(self.rotation[2], d),
        ]
    }

    /// Pixel coordinates of a world point, or `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        if c[2] <= 0.0 {
            return None;
        }
        Some([
            self.focal * c[0] / c[2] + self.principal[0],
            self.focal * c[1] / c[2] + self.principal[1],
        ])
    }

    /// Largest deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let col = |k: usize| [r[0][k], r[1][k], r[2][k]];
                let v = dot(col(i), col(j)) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(v.abs());
            }
        }
        worst
    }

    /// Normalized tight box of a standing agent modeled as a vertical segment
    /// of the given height, widened by `width` along the camera's horizontal
    /// axis. `None` if any extreme point is behind the camera or the box
    /// center falls outside the image.
    pub fn project_agent(&self, ground: [f64; 2], height: f64, width: f64) -> Option<BoundingBox> {
        let right = self.rotation[0];
        let h = 0.5 * width;
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for z in [0.0, height] {
            for s in [-h, h] {
                let p = [ground[0] + s * right[0], ground[1] + s * right[1], z + s * right[2]];
                let uv = self.project(p)?;
                for k in 0..2 {
                    min[k] = min[k].min(uv[k]);
                    max[k] = max[k].max(uv[k]);
                }
            }
        }
        let (img_h, img_w) = (self.image_size.0 as f64, self.image_size.1 as f64);
        let cx = 0.5 * (min[0] + max[0]);
        let cy = 0.5 * (min[1] + max[1]);
        if !(0.0..=img_w).contains(&cx) || !(0.0..=img_h).contains(&cy) {
            return None;
        }
        Some(BoundingBox::new(
            (min[0] / img_w).clamp(0.0, 1.0),
            (min[1] / img_h).clamp(0.0, 1.0),
            (max[0] / img_w).clamp(0.0, 1.0),
            (max[1] / img_h).clamp(0.0, 1.0),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIZE: (u32, u32) = (1080, 1920);

    #[test]
    fn rotation_is_orthonormal() {
        let cam = CameraModel::look_at([3.0, -9.0, 4.0], [0.5, 0.2, 0.0], 900.0, SIZE);
        assert!(cam.orthonormality_error() < 1e-9);
    }

    #[test]
    fn agent_on_optical_axis_is_centered() {
        // Camera at mid-body height looking horizontally at the agent.
        let cam = CameraModel::look_at([0.0, -8.0, 0.9], [0.0, 0.0, 0.9], 1000.0, SIZE);
        let b = cam.project_agent([0.0, 0.0], 1.8, 0.5).unwrap();
        let cx = 0.5 * (b.x_l + b.x_r);
        let cy = 0.5 * (b.y_l + b.y_r);
        assert!((cx - 0.5).abs() < 1e-12, "cx = {cx}");
        assert!((cy - 0.5).abs() < 1e-12, "cy = {cy}");
    }

    #[test]
    fn agent_behind_camera_is_absent() {
        let cam = CameraModel::look_at([0.0, -8.0, 2.0], [0.0, 0.0, 0.0], 1000.0, SIZE);
        assert!(cam.project_agent([0.0, -12.0], 1.8, 0.5).is_none());
    }

    #[test]
    fn normalized_height_scales_linearly_with_focal() {
        let ground = [0.0, 10.0];
        let (height, width) = (1.8, 0.5);
        let base = CameraModel::look_at([0.0, -8.0, 0.9], [0.0, 0.0, 0.9], 300.0, SIZE);
        let mut doubled = base.clone();
        doubled.focal *= 2.0;
        let h1 = {
            let b = base.project_agent(ground, height, width).unwrap();
            b.y_r - b.y_l
        };
        let h2 = {
            let b = doubled.project_agent(ground, height, width).unwrap();
            b.y_r - b.y_l
        };
        // Oracle: head and feet are at equal depth, so the pixel height is
        // focal · height / depth, normalized by the image height.
        let depth = 18.0;
        let oracle = |f: f64| f * height / depth / SIZE.0 as f64;
        assert!((h1 - oracle(300.0)).abs() < 1e-12);
        assert!((h2 - oracle(600.0)).abs() < 1e-12);
        assert!((h2 / h1 - 2.0).abs() < 1e-12);
    }
}
