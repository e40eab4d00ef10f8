use super::{Vec3, WorldConfig, WorldState};

/// Floor for reported depths; a ray that starts touching a surface reports this.
pub const MIN_DEPTH: f64 = 1e-6;
/// Corners closer than this along the optical axis are not projected.
const NEAR_PLANE: f64 = 0.05;

/// Row-major metric depth image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f64>,
}

impl DepthImage {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, depths: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depths[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.depths[y * self.width + x] = v;
    }
}

/// Pixel-space box; pixel `i` spans `[i, i + 1)`, so a full-frame box is
/// `(0, 0, width, height)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center_x(&self) -> f64 {
        0.5 * (self.x_min + self.x_max)
    }

    /// Whether the center of pixel `(x, y)` lies inside the box.
    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        cx >= self.x_min && cx < self.x_max && cy >= self.y_min && cy < self.y_max
    }
}

/// Camera frame `(forward, left, up)` for the UAV's current orientation.
pub fn camera_basis(state: &WorldState) -> (Vec3, Vec3, Vec3) {
    let forward = state.forward();
    let (sy, cy) = state.uav_heading.sin_cos();
    let left = Vec3::new(-sy, cy, 0.0);
    let up = forward.cross(left);
    (forward, left, up)
}

/// Unit ray through the center of pixel `(px, py)`; columns grow rightwards, rows downwards.
pub fn pixel_ray(state: &WorldState, cfg: &WorldConfig, px: usize, py: usize) -> Vec3 {
    let (forward, left, up) = camera_basis(state);
    let cam = &cfg.camera;
    let f = cam.focal_px();
    let u = (px as f64 + 0.5 - 0.5 * cam.width as f64) / f;
    let v = (py as f64 + 0.5 - 0.5 * cam.height as f64) / f;
    (forward - left * u - up * v).normalized()
}

fn nearest_obstacle(origin: Vec3, dir: Vec3, cfg: &WorldConfig) -> Option<f64> {
    cfg.obstacles.iter().filter_map(|o| o.ray_hit(origin, dir)).reduce(f64::min)
}

fn cast(origin: Vec3, dir: Vec3, state: &WorldState, cfg: &WorldConfig) -> f64 {
    let mut t = cfg.bounds.ray_exit(origin, dir).unwrap_or(f64::INFINITY);
    if let Some(hit) = nearest_obstacle(origin, dir, cfg) {
        t = t.min(hit);
    }
    if let Some(hit) = state.person(cfg).and_then(|p| p.ray_hit(origin, dir)) {
        t = t.min(hit);
    }
    t.min(cfg.camera.max_range).max(MIN_DEPTH)
}

/// Ray-cast depth image: Euclidean distance along each pixel's ray to the
/// nearest obstacle, person or enclosure wall, capped at the camera range.
pub fn render_depth(state: &WorldState, cfg: &WorldConfig) -> DepthImage {
    let cam = &cfg.camera;
    let origin = state.uav_position;
    let mut img = DepthImage::filled(cam.width, cam.height, cam.max_range);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let dir = pixel_ray(state, cfg, px, py);
            img.set(px, py, cast(origin, dir, state, cfg));
        }
    }
    img
}

/// Ground-truth person detector.
///
/// Projects the corners of the person's bounding cylinder box, clips the
/// result to the image and rejects it when nothing is in frame or when an
/// obstacle sits between the camera and the person's center.
pub fn person_bbox(state: &WorldState, cfg: &WorldConfig) -> Option<BBox> {
    let person = state.person(cfg)?;
    let cam = &cfg.camera;
    let (forward, left, up) = camera_basis(state);
    let origin = state.uav_position;
    let f = cam.focal_px();
    let (cx, cy) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
    let bb = person.bounding_box();

    let mut acc: Option<BBox> = None;
    for i in 0..8 {
        let corner = Vec3::new(
            if i & 1 == 0 { bb.min.x } else { bb.max.x },
            if i & 2 == 0 { bb.min.y } else { bb.max.y },
            if i & 4 == 0 { bb.min.z } else { bb.max.z },
        );
        let rel = corner - origin;
        let depth = rel.dot(forward);
        if depth <= NEAR_PLANE {
            continue;
        }
        let u = cx - f * rel.dot(left) / depth;
        let v = cy - f * rel.dot(up) / depth;
        acc = Some(match acc {
            None => BBox { x_min: u, y_min: v, x_max: u, y_max: v },
            Some(b) => BBox {
                x_min: b.x_min.min(u),
                y_min: b.y_min.min(v),
                x_max: b.x_max.max(u),
                y_max: b.y_max.max(v),
            },
        });
    }
    let raw = acc?;
    let clipped = BBox {
        x_min: raw.x_min.max(0.0),
        y_min: raw.y_min.max(0.0),
        x_max: raw.x_max.min(cam.width as f64),
        y_max: raw.y_max.min(cam.height as f64),
    };
    if clipped.width() <= 0.0 || clipped.height() <= 0.0 {
        return None;
    }

    let to_center = person.center() - origin;
    let dist = to_center.norm();
    if dist > 0.0 {
        let dir = to_center * (1.0 / dist);
        let person_t = person.ray_hit(origin, dir).unwrap_or(dist);
        if nearest_obstacle(origin, dir, cfg).is_some_and(|t| t < person_t) {
            return None;
        }
    }
    Some(clipped)
}
