use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    /// Unit direction for a yaw (about +z, from +x towards +y) and pitch (up positive).
    pub fn from_yaw_pitch(yaw: f64, pitch: f64) -> Vec3 {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        Vec3::new(cp * cy, cp * sy, sp)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && (0..3).all(|a| self.min.get(a) < self.max.get(a))
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p.get(a) >= self.min.get(a) && p.get(a) <= self.max.get(a))
    }

    /// Euclidean distance from `p` to the solid box (0 inside).
    pub fn distance_to(&self, p: Vec3) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        let dz = (self.min.z - p.z).max(0.0).max(p.z - self.max.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Distance from an interior point to the nearest face (the box as an enclosure).
    pub fn interior_clearance(&self, p: Vec3) -> f64 {
        (0..3)
            .map(|a| (p.get(a) - self.min.get(a)).min(self.max.get(a) - p.get(a)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Slab test. Returns `(t_near, t_far)` of the ray's overlap with the box.
    fn slab(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let (o, d) = (origin.get(a), dir.get(a));
            let (lo, hi) = (self.min.get(a), self.max.get(a));
            if d == 0.0 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut ta, mut tb) = ((lo - o) * inv, (hi - o) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    /// First hit of a ray against the solid box, `Some(0)` when starting inside.
    pub fn ray_hit(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let (t0, t1) = self.slab(origin, dir)?;
        if t1 < 0.0 {
            None
        } else {
            Some(t0.max(0.0))
        }
    }

    /// Exit distance for a ray that starts inside the box.
    pub fn ray_exit(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let (_, t1) = self.slab(origin, dir)?;
        (t1 >= 0.0).then_some(t1)
    }
}

/// Upright solid cylinder standing on `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder {
    pub base: Vec3,
    pub radius: f64,
    pub height: f64,
}

impl Cylinder {
    pub fn top(&self) -> f64 {
        self.base.z + self.height
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(self.base.x, self.base.y, self.base.z + 0.5 * self.height)
    }

    pub fn distance_to(&self, p: Vec3) -> f64 {
        let rx = p.x - self.base.x;
        let ry = p.y - self.base.y;
        let radial = ((rx * rx + ry * ry).sqrt() - self.radius).max(0.0);
        let vertical = (self.base.z - p.z).max(0.0).max(p.z - self.top());
        (radial * radial + vertical * vertical).sqrt()
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::new(
            Vec3::new(self.base.x - self.radius, self.base.y - self.radius, self.base.z),
            Vec3::new(self.base.x + self.radius, self.base.y + self.radius, self.top()),
        )
    }

    pub fn ray_hit(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        if self.distance_to(origin) == 0.0 {
            return Some(0.0);
        }
        let ox = origin.x - self.base.x;
        let oy = origin.y - self.base.y;
        let r2 = self.radius * self.radius;
        let mut best: Option<f64> = None;
        let mut consider = |t: f64| {
            if t >= 0.0 && best.map_or(true, |b| t < b) {
                best = Some(t);
            }
        };
        // side wall
        let a = dir.x * dir.x + dir.y * dir.y;
        if a > 0.0 {
            let b = 2.0 * (ox * dir.x + oy * dir.y);
            let c = ox * ox + oy * oy - r2;
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    let z = origin.z + t * dir.z;
                    if z >= self.base.z && z <= self.top() {
                        consider(t);
                    }
                }
            }
        }
        // caps
        if dir.z != 0.0 {
            for zc in [self.base.z, self.top()] {
                let t = (zc - origin.z) / dir.z;
                let x = ox + t * dir.x;
                let y = oy + t * dir.y;
                if x * x + y * y <= r2 {
                    consider(t);
                }
            }
        }
        best
    }
}
