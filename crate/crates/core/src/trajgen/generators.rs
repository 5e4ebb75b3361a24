use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bounce, Pose, Scenario, Split, Trajectory, TrajgenError, Wall, POSE_BOUND};

/// Half the digit size (28 px of a 64 px frame) in normalized units.
pub const OBJECT_HALF_SIZE: f64 = 14.0 / 32.0;

/// Lower edge of the band hidden in the cropped scenario (top 29 of 64 rows).
pub const MASK_LINE: f64 = 1.0 - 2.0 * 29.0 / 64.0;

const MAX_SAMPLING_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularParams {
    pub x0: f64,
    pub y0: f64,
    pub radius: f64,
    /// Radians advanced per frame.
    pub angular_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircularRanges {
    pub x0: (f64, f64),
    pub y0: (f64, f64),
    pub radius: (f64, f64),
    pub angular_step: (f64, f64),
    /// Positions are clipped to `[-1 + margin, 1 - margin]`.
    pub margin: f64,
}

impl Default for CircularRanges {
    fn default() -> Self {
        Self { x0: (-0.4, 0.4), y0: (-0.4, 0.4), radius: (0.2, 0.5), angular_step: (0.3, 0.4), margin: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionParams {
    pub x0: f64,
    pub y0: f64,
    /// Heading in radians.
    pub angle: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionConfig {
    pub x0: (f64, f64),
    pub y0: (f64, f64),
    /// Fixed per dataset.
    pub speed: f64,
    /// Walls sit at `x = ±wall`, `y = ±wall`.
    pub wall: f64,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self { x0: (-0.8, 0.8), y0: (-0.8, 0.8), speed: 0.15, wall: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub phi_x0: f64,
    pub phi_z0: f64,
    /// First curve parameter of the projected window.
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub angular_velocity: (f64, f64),
    /// Tilt of the curve about the x-axis before projection.
    pub tilt: f64,
    pub camera_distance: f64,
    /// Length of the full curve the window is cut from.
    pub full_length: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { angular_velocity: (0.1, 0.3), tilt: PI / 8.0, camera_distance: 2.5, full_length: 64 }
    }
}

impl ProjectionConfig {
    fn validate(&self, window: usize) -> Result<(), TrajgenError> {
        // deepest point of the tilted unit cube
        let reach = self.tilt.sin().abs() + self.tilt.cos().abs();
        if !(self.camera_distance > reach) {
            return Err(TrajgenError::InvalidParams(format!(
                "camera distance {} must exceed {reach:.6} to keep the projection denominator positive",
                self.camera_distance
            )));
        }
        if self.full_length < window {
            return Err(TrajgenError::InvalidParams(format!(
                "full_length {} shorter than window {window}",
                self.full_length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub circular: CircularRanges,
    pub collision: CollisionConfig,
    pub projection: ProjectionConfig,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn clip(v: f64, margin: f64) -> f64 {
    let bound = (1.0 - margin).min(POSE_BOUND);
    v.clamp(-bound, bound)
}

/// Circle poses with per-axis clipping; the flag reports whether each step
/// was clipped.
pub fn circular_poses(p: &CircularParams, len: usize, margin: f64) -> Vec<(Pose, bool)> {
    (0..len)
        .map(|t| {
            let phase = t as f64 * p.angular_step;
            let x = p.radius * phase.cos() + p.x0;
            let y = p.radius * phase.sin() + p.y0;
            let (cx, cy) = (clip(x, margin), clip(y, margin));
            (Pose::new(cx, cy, 0.0, 0.0), cx != x || cy != y)
        })
        .collect()
}

fn validate_circular(p: &CircularParams) -> Result<(), TrajgenError> {
    if !(p.radius >= 0.0) || ![p.x0, p.y0, p.angular_step].iter().all(|v| v.is_finite()) {
        return Err(TrajgenError::InvalidParams(format!("{p:?}")));
    }
    Ok(())
}

pub fn gen_circular(p: &CircularParams, margin: f64, seed: u64) -> Result<Trajectory, TrajgenError> {
    validate_circular(p)?;
    let (len, k) = Scenario::Circular.protocol();
    let poses: Vec<Pose> = circular_poses(p, len, margin).into_iter().map(|(pose, _)| pose).collect();
    Ok(Trajectory {
        scenario: Scenario::Circular,
        split: Split::Train,
        seed,
        input_len: k,
        visible: vec![true; len],
        poses,
        bounces: Vec::new(),
    })
}

/// True when the object's whole vertical extent is inside the masked band.
pub fn invisible_in_cropped_frame(y: f64) -> bool {
    y - OBJECT_HALF_SIZE >= MASK_LINE
}

pub fn gen_cropped_circular(p: &CircularParams, margin: f64, seed: u64) -> Result<Trajectory, TrajgenError> {
    let mut traj = gen_circular(p, margin, seed)?;
    traj.scenario = Scenario::Cropped;
    traj.visible = traj.poses.iter().map(|pose| !invisible_in_cropped_frame(pose.y)).collect();
    Ok(traj)
}

/// Draws circle parameters from `ranges`, retrying while every step of the
/// resulting trajectory would be clipped.
pub fn sample_circular(ranges: &CircularRanges, seed: u64) -> Result<CircularParams, TrajgenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = Scenario::Circular.protocol().0;
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let p = CircularParams {
            x0: uniform(&mut rng, ranges.x0),
            y0: uniform(&mut rng, ranges.y0),
            radius: uniform(&mut rng, ranges.radius),
            angular_step: uniform(&mut rng, ranges.angular_step),
        };
        validate_circular(&p)?;
        if !circular_poses(&p, len, ranges.margin).iter().all(|(_, clipped)| *clipped) {
            return Ok(p);
        }
    }
    Err(TrajgenError::Degenerate(MAX_SAMPLING_ATTEMPTS))
}

/// Straight-line motion inside the square `[-wall, wall]^2` with
/// event-exact reflections: on impact the normal velocity flips sign and is
/// scaled by the wall's restitution, and the remainder of the step is
/// travelled with the new velocity.
pub fn collision_poses(p: &CollisionParams, len: usize, wall: f64) -> (Vec<Pose>, Vec<Bounce>) {
    let mut pos = [p.x0, p.y0];
    let mut vel = [p.speed * p.angle.cos(), p.speed * p.angle.sin()];
    let mut poses = Vec::with_capacity(len);
    let mut bounces = Vec::new();
    if len == 0 {
        return (poses, bounces);
    }
    poses.push(Pose::new(pos[0], pos[1], 0.0, 0.0));
    for step in 0..len - 1 {
        let mut remaining = 1.0;
        // bounded: restitution keeps speeds finite and each impact consumes time
        for _ in 0..64 {
            let mut hit: Option<(f64, usize, Wall)> = None;
            for axis in 0..2 {
                let (time, which) = if vel[axis] > 0.0 {
                    ((wall - pos[axis]) / vel[axis], if axis == 0 { Wall::Right } else { Wall::Top })
                } else if vel[axis] < 0.0 {
                    ((-wall - pos[axis]) / vel[axis], if axis == 0 { Wall::Left } else { Wall::Bottom })
                } else {
                    continue;
                };
                let time = time.max(0.0);
                if hit.map_or(true, |(best, _, _)| time < best) {
                    hit = Some((time, axis, which));
                }
            }
            match hit {
                Some((time, axis, which)) if time < remaining => {
                    for (q, v) in pos.iter_mut().zip(&vel) {
                        *q += v * time;
                    }
                    pos[axis] = if vel[axis] > 0.0 { wall } else { -wall };
                    let pre = vel[axis];
                    let post = -which.restitution() * pre;
                    vel[axis] = post;
                    bounces.push(Bounce { step, wall: which, pre, post });
                    remaining -= time;
                }
                _ => {
                    for (q, v) in pos.iter_mut().zip(&vel) {
                        *q += v * remaining;
                    }
                    break;
                }
            }
        }
        pos = [pos[0].clamp(-wall, wall), pos[1].clamp(-wall, wall)];
        poses.push(Pose::new(pos[0], pos[1], 0.0, 0.0));
    }
    (poses, bounces)
}

pub fn gen_collision(p: &CollisionParams, wall: f64, seed: u64) -> Result<Trajectory, TrajgenError> {
    if !(wall > 0.0 && wall < 1.0) {
        return Err(TrajgenError::InvalidParams(format!("wall {wall} must lie in (0, 1)")));
    }
    if p.x0.abs() > wall || p.y0.abs() > wall || !p.speed.is_finite() || p.speed < 0.0 {
        return Err(TrajgenError::InvalidParams(format!("{p:?} outside the walls at ±{wall}")));
    }
    let (len, k) = Scenario::Collision.protocol();
    let (poses, bounces) = collision_poses(p, len, wall);
    Ok(Trajectory {
        scenario: Scenario::Collision,
        split: Split::Train,
        seed,
        input_len: k,
        visible: vec![true; len],
        poses,
        bounces,
    })
}

pub fn sample_collision(cfg: &CollisionConfig, seed: u64) -> CollisionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CollisionParams {
        x0: uniform(&mut rng, cfg.x0),
        y0: uniform(&mut rng, cfg.y0),
        angle: rng.gen_range(0.0..TAU),
        speed: cfg.speed,
    }
}

/// Pre-rotation point of the 3D curve at parameter `theta`.
pub fn projection_curve_point(p: &ProjectionParams, theta: f64) -> [f64; 3] {
    let z = (p.vz * theta + p.phi_z0).cos();
    let r = (1.0 - z * z).max(0.0).sqrt();
    let x = r * (p.vx * theta + p.phi_x0).cos();
    let y = r * (p.vy * theta).sin();
    [x, y, z]
}

/// Relative apparent-size change of an object at rotated depth
/// coordinate `z_rot`, against the same object at `z_rot = 0`.
pub fn perspective_size_increment(z_rot: f64, camera_distance: f64) -> f64 {
    z_rot / (camera_distance - z_rot)
}

pub fn gen_projection(p: &ProjectionParams, cfg: &ProjectionConfig, seed: u64) -> Result<Trajectory, TrajgenError> {
    let (len, k) = Scenario::Projection.protocol();
    cfg.validate(len)?;
    if p.start + len > cfg.full_length {
        return Err(TrajgenError::InvalidParams(format!(
            "window start {} overruns curve length {}",
            p.start, cfg.full_length
        )));
    }
    let (sa, ca) = cfg.tilt.sin_cos();
    let d = cfg.camera_distance;
    let poses = (p.start..p.start + len)
        .map(|i| {
            let [x, y, z] = projection_curve_point(p, i as f64);
            let y_rot = y * ca - z * sa;
            let z_rot = y * sa + z * ca;
            let denom = d - z_rot;
            let ds = perspective_size_increment(z_rot, d).clamp(-POSE_BOUND, POSE_BOUND);
            Pose::new(
                (x / denom).clamp(-POSE_BOUND, POSE_BOUND),
                (y_rot / denom).clamp(-POSE_BOUND, POSE_BOUND),
                ds,
                0.0,
            )
        })
        .collect();
    Ok(Trajectory {
        scenario: Scenario::Projection,
        split: Split::Train,
        seed,
        input_len: k,
        visible: vec![true; len],
        poses,
        bounces: Vec::new(),
    })
}

pub fn sample_projection(cfg: &ProjectionConfig, seed: u64) -> Result<ProjectionParams, TrajgenError> {
    let (len, _) = Scenario::Projection.protocol();
    cfg.validate(len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ProjectionParams {
        vx: uniform(&mut rng, cfg.angular_velocity),
        vy: uniform(&mut rng, cfg.angular_velocity),
        vz: uniform(&mut rng, cfg.angular_velocity),
        phi_x0: rng.gen_range(0.0..TAU),
        phi_z0: rng.gen_range(0.0..TAU),
        start: rng.gen_range(0..=cfg.full_length - len),
    })
}

/// Generates one trajectory of `scenario` from its own seed.
pub(crate) fn generate(scenario: Scenario, cfg: &GeneratorConfig, seed: u64) -> Result<Trajectory, TrajgenError> {
    match scenario {
        Scenario::Circular => gen_circular(&sample_circular(&cfg.circular, seed)?, cfg.circular.margin, seed),
        Scenario::Cropped => {
            gen_cropped_circular(&sample_circular(&cfg.circular, seed)?, cfg.circular.margin, seed)
        }
        Scenario::Collision => gen_collision(&sample_collision(&cfg.collision, seed), cfg.collision.wall, seed),
        Scenario::Projection => gen_projection(&sample_projection(&cfg.projection, seed)?, &cfg.projection, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(radius: f64, step: f64) -> CircularParams {
        CircularParams { x0: 0.1, y0: -0.2, radius, angular_step: step }
    }

    #[test]
    fn circle_starts_at_x0_plus_radius() {
        let t = gen_circular(&circle(0.3, 0.4), 0.0, 1).unwrap();
        assert_eq!(t.poses[0], Pose::new(0.1 + 0.3, -0.2, 0.0, 0.0));
        assert_eq!(t.len(), 20);
        assert_eq!(t.input_len, 3);
    }

    #[test]
    fn zero_radius_is_stationary() {
        let t = gen_circular(&circle(0.0, 0.4), 0.0, 1).unwrap();
        assert!(t.poses.iter().all(|p| *p == Pose::new(0.1, -0.2, 0.0, 0.0)));
    }

    #[test]
    fn dominant_frequency_matches_angular_step() {
        // oracle: direct DFT magnitude scan of x(t)
        let step = 2.0 * PI * 3.0 / 20.0;
        let t = gen_circular(&circle(0.4, step), 0.0, 1).unwrap();
        let xs: Vec<f64> = t.poses.iter().map(|p| p.x).collect();
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let mag = |k: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, x) in xs.iter().enumerate() {
                let ang = -2.0 * PI * (k * i) as f64 / n as f64;
                re += (x - mean) * ang.cos();
                im += (x - mean) * ang.sin();
            }
            (re * re + im * im).sqrt()
        };
        let best = (1..=n / 2).max_by(|&a, &b| mag(a).total_cmp(&mag(b))).unwrap();
        let expected = step / (2.0 * PI) * n as f64;
        assert!((best as f64 - expected).abs() <= 1.0);
    }

    #[test]
    fn clipping_keeps_poses_in_frame() {
        let p = CircularParams { x0: 0.9, y0: 0.0, radius: 0.5, angular_step: 0.3 };
        let poses = circular_poses(&p, 20, 0.0);
        assert!(poses.iter().any(|(_, c)| *c));
        assert!(poses.iter().all(|(pose, _)| pose.is_valid()));
    }

    #[test]
    fn degenerate_ranges_are_rejected() {
        let ranges = CircularRanges { x0: (5.0, 6.0), ..Default::default() };
        assert!(matches!(sample_circular(&ranges, 3), Err(TrajgenError::Degenerate(_))));
    }

    #[test]
    fn cropped_visibility_follows_the_band() {
        let low = CircularParams { x0: 0.0, y0: -0.5, radius: 0.3, angular_step: 0.3 };
        let t = gen_cropped_circular(&low, 0.0, 0).unwrap();
        assert!(t.visible.iter().all(|v| *v));

        let high = CircularParams { x0: 0.0, y0: 0.6, radius: 0.3, angular_step: 0.3 };
        let t = gen_cropped_circular(&high, 0.0, 0).unwrap();
        for (pose, vis) in t.poses.iter().zip(&t.visible) {
            assert_eq!(*vis, pose.y - OBJECT_HALF_SIZE < MASK_LINE);
        }
        // pose 0 sits at y = 0.6, fully above the line at 0.53125
        assert!(!t.visible[0]);
    }

    #[test]
    fn top_wall_bounce_scales_speed_by_point_eight() {
        let p = CollisionParams { x0: 0.0, y0: 0.7, angle: PI / 2.0, speed: 0.15 };
        let (_, bounces) = collision_poses(&p, 13, 0.9);
        let top = bounces.iter().find(|b| b.wall == Wall::Top).unwrap();
        assert_eq!(top.post, -0.8 * top.pre);
        assert!((top.post.abs() - 0.8 * 0.15).abs() < 1e-15);
    }

    #[test]
    fn free_flight_is_collinear_with_constant_velocity() {
        let p = CollisionParams { x0: -0.5, y0: -0.5, angle: 0.3, speed: 0.05 };
        let (poses, bounces) = collision_poses(&p, 13, 0.9);
        assert!(bounces.is_empty());
        for w in poses.windows(3) {
            let d1 = (w[1].x - w[0].x, w[1].y - w[0].y);
            let d2 = (w[2].x - w[1].x, w[2].y - w[1].y);
            assert!((d1.0 - d2.0).abs() < 1e-15 && (d1.1 - d2.1).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_projection_is_constant() {
        let p = ProjectionParams { vx: 0.0, vy: 0.0, vz: 0.0, phi_x0: 0.4, phi_z0: 1.1, start: 5 };
        let t = gen_projection(&p, &ProjectionConfig::default(), 0).unwrap();
        assert!(t.poses.iter().all(|q| *q == t.poses[0]));
        assert_eq!(t.len(), 16);
        assert_eq!(t.input_len, 6);
    }

    #[test]
    fn size_increment_decreases_with_depth() {
        // depth from the camera is d - z_rot
        let d = 2.5;
        let near = perspective_size_increment(0.8, d);
        let far = perspective_size_increment(-0.3, d);
        assert!(near > far);
        assert_eq!(perspective_size_increment(0.0, d), 0.0);
    }

    #[test]
    fn camera_too_close_is_rejected() {
        let cfg = ProjectionConfig { camera_distance: 1.2, ..Default::default() };
        assert!(sample_projection(&cfg, 0).is_err());
    }
}
