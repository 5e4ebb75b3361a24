//! Synthetic pose-trajectory datasets: circular, cropped circular,
//! wall collisions with inelastic/superelastic response, and a 3D curve
//! seen through a perspective camera.
//!
//! Coordinates are normalized: the 64x64 frame maps to `[-1, 1]^2` with
//! `y = +1` at the top row.

mod dataset;
mod generators;

pub use dataset::{load_dataset, make_dataset, save_dataset, Dataset, DatasetHeader, SplitSizes};
pub use generators::{
    circular_poses, collision_poses, gen_circular, gen_collision, gen_cropped_circular, gen_projection,
    invisible_in_cropped_frame, perspective_size_increment, projection_curve_point, sample_circular,
    sample_collision, sample_projection, CircularParams, CircularRanges, CollisionConfig, CollisionParams,
    GeneratorConfig, ProjectionConfig, ProjectionParams, MASK_LINE, OBJECT_HALF_SIZE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest magnitude a pose component may take; keeps components strictly
/// inside `(-1, 1)`.
pub const POSE_BOUND: f64 = 1.0 - 1e-9;

#[derive(Debug, Error)]
pub enum TrajgenError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("no non-degenerate trajectory after {0} attempts")]
    Degenerate(usize),
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Circular,
    Cropped,
    Collision,
    Projection,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Circular, Scenario::Cropped, Scenario::Collision, Scenario::Projection];

    /// `(T, K)`: sequence length and number of conditioning frames.
    pub fn protocol(self) -> (usize, usize) {
        match self {
            Scenario::Circular | Scenario::Cropped => (20, 3),
            Scenario::Collision => (13, 3),
            Scenario::Projection => (16, 6),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Circular => "circular",
            Scenario::Cropped => "cropped",
            Scenario::Collision => "collision",
            Scenario::Projection => "projection",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario `{s}` (expected circular|cropped|collision|projection)"))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (expected train|val|test)")),
        }
    }
}

/// Object pose `[x, y, ds, dr]`: center, scale increment, aspect-ratio
/// increment. Every component lies in `(-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub ds: f64,
    pub dr: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, ds: f64, dr: f64) -> Self {
        Self { x, y, ds, dr }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.ds, self.dr]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && v.abs() < 1.0)
    }
}

impl From<[f64; 4]> for Pose {
    fn from(a: [f64; 4]) -> Self {
        Pose::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Pose> for [f64; 4] {
    fn from(p: Pose) -> Self {
        p.to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wall {
    Left,
    Right,
    Top,
    Bottom,
}

impl Wall {
    /// Normal-speed multiplier on impact.
    pub fn restitution(self) -> f64 {
        match self {
            Wall::Left | Wall::Top => 0.8,
            Wall::Right | Wall::Bottom => 1.25,
        }
    }
}

/// A wall impact during the transition from pose `step` to `step + 1`.
/// `pre`/`post` are the signed normal velocity components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounce {
    pub step: usize,
    pub wall: Wall,
    pub pre: f64,
    pub post: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scenario: Scenario,
    pub split: Split,
    pub seed: u64,
    /// Number of conditioning frames `K`.
    pub input_len: usize,
    pub poses: Vec<Pose>,
    pub visible: Vec<bool>,
    /// Collision scenario only.
    pub bounces: Vec<Bounce>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }
}

/// Decorrelated per-trajectory seed so each trajectory owns an
/// independent generator stream.
pub fn trajectory_seed(dataset_seed: u64, split: Split, index: usize) -> u64 {
    splitmix64(splitmix64(dataset_seed) ^ (split.id() << 40) ^ index as u64)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.name().parse::<Scenario>().unwrap(), sc);
        }
        assert!("spiral".parse::<Scenario>().is_err());
    }

    #[test]
    fn pose_serializes_as_array() {
        let p = Pose::new(0.5, -0.25, 0.0, 0.125);
        assert_eq!(serde_json::to_string(&p).unwrap(), "[0.5,-0.25,0.0,0.125]");
    }

    #[test]
    fn seeds_differ_across_splits_and_indices() {
        let a = trajectory_seed(1, Split::Train, 0);
        assert_ne!(a, trajectory_seed(1, Split::Val, 0));
        assert_ne!(a, trajectory_seed(1, Split::Train, 1));
        assert_ne!(a, trajectory_seed(2, Split::Train, 0));
    }
}
