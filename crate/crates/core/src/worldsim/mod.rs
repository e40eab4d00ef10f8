//! Deterministic kinematic UAV world: box obstacles inside a bounding
//! enclosure, a person walking a waypoint loop, sphere collision checks and a
//! ray-cast pinhole depth camera.
//!
//! Coordinates are meters with +z up. Heading is yaw about +z measured from
//! +x towards +y; pitch is positive nose-up.

mod camera;
mod geometry;

pub use camera::{camera_basis, person_bbox, pixel_ray, render_depth, BBox, DepthImage, MIN_DEPTH};
pub use geometry::{Aabb, Cylinder, Vec3};

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6, PI, SQRT_2};

use crate::config::KvDoc;
use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = 10;
/// Cruise speed for forward and turning actions (m/s).
pub const FORWARD_SPEED: f64 = 1.2;
/// Climb speed for the vertical action (m/s).
pub const CLIMB_SPEED: f64 = 0.6;
/// Angular speed of turning actions (rad/s).
pub const TURN_RATE: f64 = FRAC_PI_6;
pub const PITCH_LIMIT: f64 = FRAC_PI_3;

/// One of the ten discrete actions.
///
/// | id | motion                     |
/// |----|----------------------------|
/// | 0  | forward                    |
/// | 1  | climb straight up          |
/// | 2  | forward, turn left         |
/// | 3  | forward, turn right        |
/// | 4  | forward, turn up           |
/// | 5  | forward, turn down         |
/// | 6  | forward, turn up-left      |
/// | 7  | forward, turn up-right     |
/// | 8  | forward, turn down-left    |
/// | 9  | forward, turn down-right   |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionId(u8);

impl ActionId {
    pub const FORWARD: ActionId = ActionId(0);
    pub const CLIMB: ActionId = ActionId(1);

    pub fn new(id: usize) -> Result<Self> {
        if id < NUM_ACTIONS {
            Ok(Self(id as u8))
        } else {
            Err(Error::Argument(format!("action id {id} outside [0, {}]", NUM_ACTIONS - 1)))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = ActionId> {
        (0..NUM_ACTIONS as u8).map(ActionId)
    }

    /// Unit turn direction in (yaw, pitch) space, `None` for non-turning actions.
    fn turn_direction(self) -> Option<(f64, f64)> {
        let d = 1.0 / SQRT_2;
        match self.0 {
            2 => Some((1.0, 0.0)),
            3 => Some((-1.0, 0.0)),
            4 => Some((0.0, 1.0)),
            5 => Some((0.0, -1.0)),
            6 => Some((d, d)),
            7 => Some((-d, d)),
            8 => Some((d, -d)),
            9 => Some((-d, -d)),
            _ => None,
        }
    }
}

impl std::fmt::Display for ActionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub fov: f64,
    pub max_range: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { width: 32, height: 32, fov: FRAC_PI_2, max_range: 20.0 }
    }
}

impl CameraConfig {
    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov).tan()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonConfig {
    /// Closed loop of feet positions; empty means no person in the scene.
    pub waypoints: Vec<Vec3>,
    pub speed: f64,
    pub radius: f64,
    pub height: f64,
}

impl Default for PersonConfig {
    fn default() -> Self {
        Self { waypoints: Vec::new(), speed: 0.8, radius: 0.3, height: 1.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnPose {
    pub position: Vec3,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub name: String,
    pub bounds: Aabb,
    pub obstacles: Vec<Aabb>,
    pub person: PersonConfig,
    pub uav_radius: f64,
    pub control_dt: f64,
    pub camera: CameraConfig,
    pub spawn: SpawnPose,
}

const PRESETS: &[(&str, &str)] = &[
    ("corridor", include_str!("../../presets/corridor.cfg")),
    ("simple", include_str!("../../presets/simple.cfg")),
    ("complex", include_str!("../../presets/complex.cfg")),
];

/// Source text of a shipped preset (`corridor`, `simple`, `complex`).
pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

impl WorldConfig {
    /// An open world: huge enclosure, no obstacles, no person.
    pub fn empty() -> Self {
        Self {
            name: "empty".into(),
            bounds: Aabb::new(Vec3::new(-1000.0, -1000.0, -1000.0), Vec3::new(1000.0, 1000.0, 1000.0)),
            obstacles: Vec::new(),
            person: PersonConfig::default(),
            uav_radius: 0.3,
            control_dt: 0.5,
            camera: CameraConfig::default(),
            spawn: SpawnPose { position: Vec3::ZERO, heading: 0.0 },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let src = preset_source(name).ok_or_else(|| Error::config(format!("unknown preset {name:?}")))?;
        let mut doc = KvDoc::parse(src)?;
        let cfg = Self::from_kv(&mut doc)?;
        doc.finish()?;
        Ok(cfg)
    }

    /// Consumes the `world.*`, `camera.*`, `spawn.*`, `person.*` and
    /// `obstacle` keys. Missing keys keep the [`WorldConfig::empty`] defaults.
    pub fn from_kv(doc: &mut KvDoc) -> Result<Self> {
        let mut cfg = Self::empty();
        if let Some(e) = doc.take("world.name") {
            cfg.name = e.value.clone();
        }
        if let Some(e) = doc.take("world.bounds") {
            let v = e.parse_f64s(6)?;
            cfg.bounds = Aabb::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]));
            if !cfg.bounds.is_valid() {
                return Err(e.error("min corner must be below max corner on every axis"));
            }
        }
        if let Some(e) = doc.take("world.uav_radius") {
            cfg.uav_radius = e.parse_f64()?;
        }
        if let Some(e) = doc.take("world.dt") {
            cfg.control_dt = e.parse_f64()?;
        }
        if let Some(e) = doc.take("camera.width") {
            cfg.camera.width = e.parse()?;
        }
        if let Some(e) = doc.take("camera.height") {
            cfg.camera.height = e.parse()?;
        }
        if let Some(e) = doc.take("camera.fov") {
            cfg.camera.fov = e.parse_f64()?;
        }
        if let Some(e) = doc.take("camera.max_range") {
            cfg.camera.max_range = e.parse_f64()?;
        }
        if let Some(e) = doc.take("spawn.position") {
            let v = e.parse_f64s(3)?;
            cfg.spawn.position = Vec3::new(v[0], v[1], v[2]);
        }
        if let Some(e) = doc.take("spawn.heading") {
            cfg.spawn.heading = e.parse_f64()?;
        }
        if let Some(e) = doc.take("person.speed") {
            cfg.person.speed = e.parse_f64()?;
        }
        if let Some(e) = doc.take("person.radius") {
            cfg.person.radius = e.parse_f64()?;
        }
        if let Some(e) = doc.take("person.height") {
            cfg.person.height = e.parse_f64()?;
        }
        for e in doc.take_all("person.waypoint") {
            let v = e.parse_f64s(3)?;
            cfg.person.waypoints.push(Vec3::new(v[0], v[1], v[2]));
        }
        for e in doc.take_all("obstacle") {
            let v = e.parse_f64s(6)?;
            let b = Aabb::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]));
            if !b.is_valid() {
                return Err(e.error("min corner must be below max corner on every axis"));
            }
            cfg.obstacles.push(b);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.camera;
        if !(self.control_dt > 0.0) {
            return Err(Error::config("world.dt must be positive"));
        }
        if !(c.max_range > 0.0) {
            return Err(Error::config("camera.max_range must be positive"));
        }
        if !(c.fov > 0.0 && c.fov < PI) {
            return Err(Error::config("camera.fov must lie in (0, pi)"));
        }
        if c.width == 0 || c.height == 0 {
            return Err(Error::config("camera dimensions must be positive"));
        }
        if !(self.uav_radius > 0.0) {
            return Err(Error::config("world.uav_radius must be positive"));
        }
        if !self.bounds.is_valid() {
            return Err(Error::config("world.bounds is degenerate"));
        }
        let p = &self.person;
        if !p.waypoints.is_empty() && !(p.speed >= 0.0 && p.radius > 0.0 && p.height > 0.0) {
            return Err(Error::config("person speed must be >= 0, radius and height > 0"));
        }
        let spawn = self.spawn.position;
        if !spawn.is_finite() || !self.spawn.heading.is_finite() {
            return Err(Error::config("spawn pose must be finite"));
        }
        if self.bounds.interior_clearance(spawn) <= self.uav_radius {
            return Err(Error::config(format!(
                "spawn position ({}, {}, {}) is not strictly inside the bounds",
                spawn.x, spawn.y, spawn.z
            )));
        }
        if let Some(i) = self.obstacles.iter().position(|o| o.distance_to(spawn) < self.uav_radius) {
            return Err(Error::config(format!("spawn position collides with obstacle {i}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub uav_position: Vec3,
    /// Yaw in `[-pi, pi)`.
    pub uav_heading: f64,
    /// Pitch in `[-pi/3, pi/3]`.
    pub uav_pitch: f64,
    pub person_position: Vec3,
    /// Waypoint the person most recently passed; it walks towards the next one.
    pub person_waypoint_index: usize,
    pub step_count: usize,
}

impl WorldState {
    pub fn forward(&self) -> Vec3 {
        Vec3::from_yaw_pitch(self.uav_heading, self.uav_pitch)
    }

    pub fn person(&self, cfg: &WorldConfig) -> Option<Cylinder> {
        (!cfg.person.waypoints.is_empty()).then(|| Cylinder {
            base: self.person_position,
            radius: cfg.person.radius,
            height: cfg.person.height,
        })
    }

    /// Moves the person to waypoint `index` (modulo the path length).
    pub fn with_person_at(mut self, cfg: &WorldConfig, index: usize) -> Self {
        if let Some(n) = Some(cfg.person.waypoints.len()).filter(|&n| n > 0) {
            self.person_waypoint_index = index % n;
            self.person_position = cfg.person.waypoints[index % n];
        }
        self
    }
}

/// Result of advancing the world by one control interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: WorldState,
    pub collided: bool,
    /// Linear speed commanded this step (m/s).
    pub applied_v: f64,
    /// Angular deviation of the motion from straight ahead this step (rad).
    pub applied_psi: f64,
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2*pi for tiny negative inputs
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// UAV at the spawn pose, person at its first waypoint, zero steps.
pub fn reset(cfg: &WorldConfig) -> Result<WorldState> {
    cfg.validate()?;
    let person_position = cfg.person.waypoints.first().copied().unwrap_or(Vec3::ZERO);
    Ok(WorldState {
        uav_position: cfg.spawn.position,
        uav_heading: wrap_angle(cfg.spawn.heading),
        uav_pitch: 0.0,
        person_position,
        person_waypoint_index: 0,
        step_count: 0,
    })
}

fn advance_person(state: &mut WorldState, cfg: &WorldConfig) {
    let wps = &cfg.person.waypoints;
    if wps.len() < 2 {
        return;
    }
    let mut remaining = cfg.person.speed * cfg.control_dt;
    // bounded: one full lap can consume at most wps.len() segments
    let mut hops = 0;
    while remaining > 0.0 && hops <= 2 * wps.len() {
        let next_idx = (state.person_waypoint_index + 1) % wps.len();
        let target = wps[next_idx];
        let to = target - state.person_position;
        let dist = to.norm();
        if dist <= remaining {
            state.person_position = target;
            state.person_waypoint_index = next_idx;
            remaining -= dist;
            hops += 1;
        } else {
            state.person_position = state.person_position + to * (remaining / dist);
            remaining = 0.0;
        }
    }
}

/// Smallest clearance between a UAV centered at `p` and any solid surface.
pub fn clearance(p: Vec3, state: &WorldState, cfg: &WorldConfig) -> f64 {
    let mut d = if cfg.bounds.contains(p) { cfg.bounds.interior_clearance(p) } else { 0.0 };
    for o in &cfg.obstacles {
        d = d.min(o.distance_to(p));
    }
    if let Some(person) = state.person(cfg) {
        d = d.min(person.distance_to(p));
    }
    d
}

/// Advances the world by one control interval under `action`.
///
/// Turning actions rotate heading/pitch by `TURN_RATE * dt` and then fly
/// forward along the new orientation. The collision test samples the path
/// at spacing no larger than half the UAV radius so fast steps cannot tunnel
/// through thin walls.
pub fn step(state: &WorldState, action: ActionId, cfg: &WorldConfig) -> StepOutcome {
    let dt = cfg.control_dt;
    let mut next = *state;
    let (applied_v, applied_psi, displacement) = if action == ActionId::CLIMB {
        (CLIMB_SPEED, FRAC_PI_2, Vec3::new(0.0, 0.0, CLIMB_SPEED * dt))
    } else {
        let mut psi = 0.0;
        if let Some((dyaw, dpitch)) = action.turn_direction() {
            let angle = TURN_RATE * dt;
            next.uav_heading = wrap_angle(state.uav_heading + dyaw * angle);
            next.uav_pitch = (state.uav_pitch + dpitch * angle).clamp(-PITCH_LIMIT, PITCH_LIMIT);
            psi = angle;
        }
        let dir = Vec3::from_yaw_pitch(next.uav_heading, next.uav_pitch);
        (FORWARD_SPEED, psi, dir * (FORWARD_SPEED * dt))
    };
    let start = state.uav_position;
    next.uav_position = start + displacement;
    advance_person(&mut next, cfg);
    next.step_count = state.step_count + 1;

    let samples = ((displacement.norm() / (0.5 * cfg.uav_radius)).ceil() as usize).max(1);
    let collided = (1..=samples).any(|k| {
        let p = start + displacement * (k as f64 / samples as f64);
        clearance(p, &next, cfg) < cfg.uav_radius
    });
    StepOutcome { state: next, collided, applied_v, applied_psi }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_world() -> WorldConfig {
        WorldConfig::empty()
    }

    #[test]
    fn reset_places_uav_at_spawn() {
        let cfg = WorldConfig::preset("corridor").unwrap();
        let s = reset(&cfg).unwrap();
        assert_eq!(s.uav_position, cfg.spawn.position);
        assert_eq!(s.step_count, 0);
        assert_eq!(s, reset(&cfg).unwrap());
    }

    #[test]
    fn reset_rejects_spawn_inside_obstacle() {
        let mut cfg = open_world();
        cfg.obstacles.push(Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)));
        assert!(matches!(reset(&cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn forward_action_moves_along_heading() {
        let cfg = open_world();
        let s = reset(&cfg).unwrap();
        let out = step(&s, ActionId::FORWARD, &cfg);
        assert_eq!(out.state.uav_position, Vec3::new(0.6, 0.0, 0.0));
        assert_eq!(out.applied_psi, 0.0);
        assert_eq!(out.applied_v, 1.2);
        assert!(!out.collided);
    }

    #[test]
    fn climb_action_is_vertical() {
        let cfg = open_world();
        let s = reset(&cfg).unwrap();
        let out = step(&s, ActionId::CLIMB, &cfg);
        assert!((out.state.uav_position.z - 0.3).abs() < 1e-15);
        assert_eq!(out.state.uav_position.x, 0.0);
        assert_eq!(out.applied_psi, FRAC_PI_2);
        assert!(out.applied_psi.cos().abs() < 1e-15);
    }

    #[test]
    fn yaw_left_turns_by_pi_over_12() {
        let cfg = open_world();
        let s = reset(&cfg).unwrap();
        let out = step(&s, ActionId::new(2).unwrap(), &cfg);
        assert!((out.state.uav_heading - PI / 12.0).abs() < 1e-15);
        assert!((out.applied_psi - PI / 12.0).abs() < 1e-15);
    }

    #[test]
    fn action_ids_are_bounded() {
        assert_eq!(ActionId::all().count(), 10);
        assert!(ActionId::new(10).is_err());
    }

    #[test]
    fn pitch_is_clamped_and_heading_wrapped() {
        let cfg = open_world();
        let mut s = reset(&cfg).unwrap();
        for _ in 0..40 {
            s = step(&s, ActionId::new(4).unwrap(), &cfg).state;
        }
        assert_eq!(s.uav_pitch, PITCH_LIMIT);
        for _ in 0..100 {
            s = step(&s, ActionId::new(2).unwrap(), &cfg).state;
            assert!(s.uav_heading >= -PI && s.uav_heading < PI);
        }
    }

    #[test]
    fn wall_ahead_collides() {
        let mut cfg = open_world();
        cfg.obstacles.push(Aabb::new(Vec3::new(0.7, -5.0, -5.0), Vec3::new(1.0, 5.0, 5.0)));
        let s = reset(&cfg).unwrap();
        assert!(step(&s, ActionId::FORWARD, &cfg).collided);
    }

    #[test]
    fn thin_wall_cannot_be_tunnelled() {
        let mut cfg = open_world();
        cfg.uav_radius = 0.05;
        cfg.obstacles.push(Aabb::new(Vec3::new(0.3, -5.0, -5.0), Vec3::new(0.31, 5.0, 5.0)));
        let s = reset(&cfg).unwrap();
        assert!(step(&s, ActionId::FORWARD, &cfg).collided);
    }

    #[test]
    fn person_walks_and_wraps() {
        let mut cfg = open_world();
        cfg.person.waypoints = vec![Vec3::new(10.0, 0.0, 0.0), Vec3::new(11.0, 0.0, 0.0)];
        cfg.person.speed = 1.0;
        let mut s = reset(&cfg).unwrap();
        // 0.5 m per step, loop length 2 m
        for _ in 0..3 {
            s = step(&s, ActionId::CLIMB, &cfg).state;
        }
        assert!((s.person_position.x - 10.5).abs() < 1e-12);
        assert_eq!(s.person_waypoint_index, 1);
        s = step(&s, ActionId::CLIMB, &cfg).state;
        assert!((s.person_position.x - 10.0).abs() < 1e-12);
        assert_eq!(s.person_waypoint_index, 0);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -PI, -1e-18, 0.0, PI, 3.0 * PI, 7.5] {
            let w = wrap_angle(a);
            assert!((-PI..PI).contains(&w), "{a} -> {w}");
            assert!(((w - a) / (2.0 * PI)).fract().abs() < 1e-9 || ((w - a) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }
}
