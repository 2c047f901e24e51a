//! Synthetic structured RGB-D scenes, augmentation and on-disk formats.

mod augment;
mod io;
mod scene;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::tensor::Tensor;

pub use augment::{
    augment, color_jitter, crop_resize, flip_horizontal, rotate, scale, AugmentConfig, JitterParams,
};
pub use io::{
    read_manifest, read_pfm, read_ppm, read_sample, write_dataset, write_manifest, write_pfm, write_ppm,
    write_sample, ManifestEntry,
};
pub use scene::{generate_scene, RGB_NOISE_SIGMA};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("scene size {height}x{width} is not divisible by 32")]
    Dimensions { height: usize, width: usize },
    #[error("{path}: wrong magic, expected {expected:?} but found {found:?}")]
    BadMagic {
        path: String,
        expected: &'static str,
        found: String,
    },
    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: String, reason: String },
    #[error("{path}: truncated payload, expected {expected} bytes but found {got}")]
    Truncated { path: String, expected: usize, got: usize },
    #[error("{path}:{line}: bad manifest line: {reason}")]
    Manifest { path: String, line: usize, reason: String },
    #[error("unknown scene family {0:?}")]
    UnknownFamily(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SceneFamily {
    Corridor,
    Boxes,
    Stairs,
    Facade,
}

impl SceneFamily {
    pub const ALL: [SceneFamily; 4] = [
        SceneFamily::Corridor,
        SceneFamily::Boxes,
        SceneFamily::Stairs,
        SceneFamily::Facade,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneFamily::Corridor => "corridor",
            SceneFamily::Boxes => "boxes",
            SceneFamily::Stairs => "stairs",
            SceneFamily::Facade => "facade",
        }
    }
}

impl fmt::Display for SceneFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneFamily {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        SceneFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| DataError::UnknownFamily(s.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct SceneSample {
    /// `[1, 3, H, W]` in `[0, 1]`.
    pub rgb: Tensor,
    /// `[1, 1, H, W]` metres.
    pub depth: Tensor,
    pub family: SceneFamily,
    pub seed: u64,
}

impl SceneSample {
    pub fn height(&self) -> usize {
        self.depth.shape().height()
    }

    pub fn width(&self) -> usize {
        self.depth.shape().width()
    }
}

/// A sample identified by its generator inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleSpec {
    pub family: SceneFamily,
    pub seed: u64,
}

impl SampleSpec {
    pub fn generate(&self, height: usize, width: usize) -> Result<SceneSample, DataError> {
        generate_scene(self.family, self.seed, height, width)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Train and validation specs with disjoint seeds and round-robin families.
pub fn make_dataset(n_train: usize, n_val: usize, seed: u64) -> (Vec<SampleSpec>, Vec<SampleSpec>) {
    let mut state = seed;
    let mut used = HashSet::with_capacity(n_train + n_val);
    let mut draw = |n: usize| -> Vec<SampleSpec> {
        (0..n)
            .map(|i| {
                let mut s = splitmix64(&mut state);
                while !used.insert(s) {
                    s = splitmix64(&mut state);
                }
                SampleSpec {
                    family: SceneFamily::ALL[i % 4],
                    seed: s,
                }
            })
            .collect()
    };
    let train = draw(n_train);
    let val = draw(n_val);
    (train, val)
}
