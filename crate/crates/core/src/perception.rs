//! Observation building and the per-step reward.
//!
//! The detector box is used twice: depths inside it are shrunk so the person
//! looks nearer than it is, and its placement and size feed the reward.

use crate::config::KvDoc;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::worldsim::{BBox, DepthImage, MIN_DEPTH};

/// Reward for any step that ends in a collision.
pub const COLLISION_REWARD: f64 = -10.0;

/// How the closeness penalty is read off the detector box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMode {
    /// Box height over image height.
    HeightFraction,
    /// Box height over box width, capped at 1.
    AspectRatio,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    pub dt: f64,
    pub lambda: f64,
    pub rho: f64,
    pub collision_reward: f64,
    pub shrink: f64,
    pub penalty_mode: PenaltyMode,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            dt: 0.5,
            lambda: 0.5,
            rho: 1.0,
            collision_reward: COLLISION_REWARD,
            shrink: 0.5,
            penalty_mode: PenaltyMode::HeightFraction,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config("reward.dt must be positive"));
        }
        if !(self.lambda >= 0.0 && self.rho >= 0.0) {
            return Err(Error::config("reward.lambda and reward.rho must be non-negative"));
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return Err(Error::config("reward.shrink must lie in (0, 1]"));
        }
        if !self.collision_reward.is_finite() {
            return Err(Error::config("collision reward must be finite"));
        }
        Ok(())
    }

    /// Reads `reward.*` keys; `reward.dt` falls back to `default_dt`.
    pub fn from_kv(doc: &mut KvDoc, default_dt: f64) -> Result<Self> {
        let mut p = Self { dt: default_dt, ..Self::default() };
        if let Some(e) = doc.take("reward.dt") {
            p.dt = e.parse_f64()?;
        }
        if let Some(e) = doc.take("reward.lambda") {
            p.lambda = e.parse_f64()?;
        }
        if let Some(e) = doc.take("reward.rho") {
            p.rho = e.parse_f64()?;
        }
        if let Some(e) = doc.take("reward.shrink") {
            p.shrink = e.parse_f64()?;
        }
        if let Some(e) = doc.take("reward.penalty_mode") {
            p.penalty_mode = match e.value.as_str() {
                "height" => PenaltyMode::HeightFraction,
                "aspect" => PenaltyMode::AspectRatio,
                _ => return Err(e.error("expected `height` or `aspect`")),
            };
        }
        p.validate()?;
        Ok(p)
    }
}

/// What the agent sees: the augmented depth image plus the detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub depth: DepthImage,
    pub bbox: Option<BBox>,
}

/// Multiplies depths whose pixel centers fall inside `bbox` by `shrink`.
pub fn augment_depth(raw: &DepthImage, bbox: Option<&BBox>, shrink: f64) -> DepthImage {
    let mut out = raw.clone();
    let Some(b) = bbox else { return out };
    if shrink == 1.0 {
        return out;
    }
    for y in 0..raw.height {
        for x in 0..raw.width {
            if b.contains_pixel(x, y) {
                out.set(x, y, (raw.get(x, y) * shrink).max(MIN_DEPTH).min(raw.get(x, y)));
            }
        }
    }
    out
}

/// Horizontal offset of the box center from the image center, in `[0, 1]`.
pub fn bb_distance(bbox: Option<&BBox>, width: usize) -> f64 {
    let Some(b) = bbox else { return 0.0 };
    let half = 0.5 * width as f64;
    ((b.center_x() - half).abs() / half).min(1.0)
}

/// Closeness proxy in `[0, 1]`: larger means the person is nearer.
pub fn bb_penalty(bbox: Option<&BBox>, height: usize, mode: PenaltyMode) -> f64 {
    let Some(b) = bbox else { return 0.0 };
    let value = match mode {
        PenaltyMode::HeightFraction => b.height() / height as f64,
        PenaltyMode::AspectRatio => {
            if b.width() > 0.0 {
                b.height() / b.width()
            } else {
                1.0
            }
        }
    };
    value.clamp(0.0, 1.0)
}

/// `v cos(psi) dt + lambda * bb_distance - rho * bb_penalty`, or the fixed
/// collision reward.
pub fn reward(
    applied_v: f64,
    applied_psi: f64,
    bbox: Option<&BBox>,
    image_dims: (usize, usize),
    collided: bool,
    params: &RewardParams,
) -> f64 {
    if collided {
        return params.collision_reward;
    }
    let (width, height) = image_dims;
    applied_v * applied_psi.cos() * params.dt + params.lambda * bb_distance(bbox, width)
        - params.rho * bb_penalty(bbox, height, params.penalty_mode)
}

/// Network input: depths scaled by `max_range` into `[0, 1]`, average-pooled
/// down to `side x side`. The camera dimensions must be multiples of `side`.
pub fn observation_tensor(depth: &DepthImage, max_range: f64, side: usize) -> Result<Tensor> {
    if side == 0 || depth.width % side != 0 || depth.height % side != 0 {
        return Err(Error::config(format!(
            "network input side {side} must divide camera {}x{}",
            depth.width, depth.height
        )));
    }
    let (bw, bh) = (depth.width / side, depth.height / side);
    let scale = 1.0 / (max_range * (bw * bh) as f64);
    let mut out = vec![0.0; side * side];
    for (y, row) in depth.depths.chunks(depth.width).enumerate() {
        for (x, &d) in row.iter().enumerate() {
            out[(y / bh) * side + x / bw] += d;
        }
    }
    for v in &mut out {
        *v = (*v * scale).min(1.0);
    }
    Tensor::new(vec![side * side], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn bx(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> BBox {
        BBox { x_min, y_min, x_max, y_max }
    }

    #[test]
    fn augment_without_box_is_identity() {
        let img = DepthImage { width: 3, height: 2, depths: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0] };
        assert_eq!(augment_depth(&img, None, 0.5), img);
    }

    #[test]
    fn augment_left_half() {
        let img = DepthImage::filled(32, 32, 8.0);
        let out = augment_depth(&img, Some(&bx(0.0, 0.0, 16.0, 32.0)), 0.5);
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(out.get(x, y), if x < 16 { 4.0 } else { 8.0 });
            }
        }
    }

    #[test]
    fn augment_shrink_one_is_identity() {
        let img = DepthImage { width: 2, height: 2, depths: vec![1.0, 2.0, 3.0, 4.0] };
        assert_eq!(augment_depth(&img, Some(&bx(0.0, 0.0, 2.0, 2.0)), 1.0), img);
    }

    #[test]
    fn bb_distance_cases() {
        assert_eq!(bb_distance(None, 32), 0.0);
        assert_eq!(bb_distance(Some(&bx(12.0, 0.0, 20.0, 10.0)), 32), 0.0);
        assert_eq!(bb_distance(Some(&bx(22.0, 0.0, 26.0, 10.0)), 32), 0.5);
    }

    #[test]
    fn bb_penalty_cases() {
        assert_eq!(bb_penalty(None, 32, PenaltyMode::HeightFraction), 0.0);
        assert_eq!(bb_penalty(Some(&bx(10.0, 0.0, 14.0, 32.0)), 32, PenaltyMode::HeightFraction), 1.0);
        assert_eq!(bb_penalty(Some(&bx(10.0, 0.0, 14.0, 8.0)), 32, PenaltyMode::HeightFraction), 0.25);
        assert_eq!(bb_penalty(Some(&bx(10.0, 0.0, 14.0, 2.0)), 32, PenaltyMode::AspectRatio), 0.5);
        assert_eq!(bb_penalty(Some(&bx(10.0, 0.0, 14.0, 8.0)), 32, PenaltyMode::AspectRatio), 1.0);
    }

    #[test]
    fn reward_examples() {
        let p = RewardParams::default();
        assert_eq!(reward(1.2, 0.0, None, (32, 32), true, &p), -10.0);
        assert!((reward(1.2, 0.0, None, (32, 32), false, &p) - 0.6).abs() < 1e-15);
        assert!(reward(1.2, FRAC_PI_2, None, (32, 32), false, &p).abs() < 1e-15);
        // bb_distance = 0.5 (center at 24), bb_penalty = 0.25 (8 of 32 rows)
        let p = RewardParams { lambda: 1.0, rho: 2.0, ..RewardParams::default() };
        let b = bx(22.0, 0.0, 26.0, 8.0);
        assert!((reward(1.2, 0.0, Some(&b), (32, 32), false, &p) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn observation_pools_and_normalizes() {
        let mut img = DepthImage::filled(4, 4, 10.0);
        img.set(0, 0, 2.0);
        let t = observation_tensor(&img, 20.0, 2).unwrap();
        assert_eq!(t.values(), &[(2.0 + 30.0) / 4.0 / 20.0, 0.5, 0.5, 0.5]);
        assert!(observation_tensor(&img, 20.0, 3).is_err());
    }

    #[test]
    fn params_from_kv() {
        let mut doc = KvDoc::parse("reward.lambda = 2\nreward.penalty_mode = aspect\n").unwrap();
        let p = RewardParams::from_kv(&mut doc, 0.25).unwrap();
        assert_eq!(p.lambda, 2.0);
        assert_eq!(p.dt, 0.25);
        assert_eq!(p.penalty_mode, PenaltyMode::AspectRatio);
        let mut doc = KvDoc::parse("reward.shrink = 0\n").unwrap();
        assert!(RewardParams::from_kv(&mut doc, 0.5).is_err());
    }
}
