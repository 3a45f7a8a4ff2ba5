//! Piecewise-constant height field over flat ground at height 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub x_start: f64,
    pub x_end: f64,
    pub height: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TerrainProfile {
    /// Sorted by `x_start`, non-overlapping.
    pub blocks: Vec<Block>,
}

/// Parameters of the seeded obstacle course.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoughTerrainSpec {
    pub count: usize,
    pub x_start: f64,
    pub length: f64,
    pub min_height: f64,
    pub max_height: f64,
    pub min_width: f64,
    pub max_width: f64,
}

impl Default for RoughTerrainSpec {
    fn default() -> Self {
        Self {
            count: 8,
            x_start: 0.5,
            length: 4.0,
            min_height: 0.05,
            max_height: 0.07,
            min_width: 0.1,
            max_width: 0.2,
        }
    }
}

impl TerrainProfile {
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn new(mut blocks: Vec<Block>) -> Result<Self> {
        blocks.sort_by(|a, b| a.x_start.total_cmp(&b.x_start));
        let t = Self { blocks };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, b) in self.blocks.iter().enumerate() {
            if !(b.x_start < b.x_end) || !b.height.is_finite() || b.height < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "terrain block {k} is [{}, {}) at height {}",
                    b.x_start, b.x_end, b.height
                )));
            }
            if k > 0 && self.blocks[k - 1].x_end > b.x_start {
                return Err(Error::InvalidParameter(format!(
                    "terrain blocks {} and {k} overlap",
                    k - 1
                )));
            }
        }
        Ok(())
    }

    /// Seeded course: the path is cut into `count` equal slots and each slot
    /// receives one block at a random offset, width and height.
    pub fn rough(spec: &RoughTerrainSpec, seed: u64) -> Result<Self> {
        if spec.count == 0
            || !(spec.length > 0.0)
            || !(spec.min_height <= spec.max_height)
            || !(0.0 < spec.min_width && spec.min_width <= spec.max_width)
        {
            return Err(Error::InvalidParameter(format!(
                "bad rough terrain spec {spec:?}"
            )));
        }
        let slot = spec.length / spec.count as f64;
        if spec.max_width >= slot {
            return Err(Error::InvalidParameter(format!(
                "block width up to {} does not fit a {slot} m slot",
                spec.max_width
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |lo: f64, hi: f64| {
            if lo < hi {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        let blocks = (0..spec.count)
            .map(|k| {
                let width = uniform(spec.min_width, spec.max_width);
                let height = uniform(spec.min_height, spec.max_height);
                let x_start = spec.x_start + k as f64 * slot + uniform(0.0, slot - width);
                Block {
                    x_start,
                    x_end: x_start + width,
                    height,
                }
            })
            .collect();
        Self::new(blocks)
    }

    pub fn height_at(&self, x: f64) -> f64 {
        let k = self.blocks.partition_point(|b| b.x_start <= x);
        match k.checked_sub(1).map(|i| &self.blocks[i]) {
            Some(b) if x < b.x_end => b.height,
            _ => 0.0,
        }
    }

    /// Highest terrain over the closed interval between `a` and `b`.
    pub fn max_height_between(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.blocks
            .iter()
            .filter(|blk| blk.x_start <= hi && blk.x_end > lo)
            .map(|blk| blk.height)
            .fold(0.0, f64::max)
    }
}
