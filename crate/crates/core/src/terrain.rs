//! Height-field terrain: flat ground, a staircase and a random block field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STAIR_RISE: f64 = 0.13;
pub const STAIR_RUN: f64 = 0.28;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Terrain {
    Flat,
    /// Steps start at `start_x`; the top landing is flat after `steps` risers.
    Stairs {
        rise: f64,
        run: f64,
        start_x: f64,
        steps: u32,
    },
    /// Square cells past `start_x`, each with a hashed height in `[min_h, max_h]`.
    Blocks {
        cell: f64,
        min_h: f64,
        max_h: f64,
        start_x: f64,
        seed: u64,
    },
}

impl Default for Terrain {
    fn default() -> Self {
        Terrain::Flat
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn cell_unit(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl Terrain {
    pub fn stairs(start_x: f64) -> Self {
        Terrain::Stairs {
            rise: STAIR_RISE,
            run: STAIR_RUN,
            start_x,
            steps: 4,
        }
    }

    pub fn blocks(start_x: f64, seed: u64) -> Self {
        Terrain::Blocks {
            cell: 0.25,
            min_h: 0.08,
            max_h: 0.12,
            start_x,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Terrain::Flat => Ok(()),
            Terrain::Stairs { rise, run, .. } if rise >= 0.0 && run > 0.0 => Ok(()),
            Terrain::Blocks { cell, min_h, max_h, .. } if cell > 0.0 && 0.0 <= min_h && min_h <= max_h => Ok(()),
            _ => Err(Error::Config(format!("invalid terrain {self:?}"))),
        }
    }

    /// Ground height under `(x, y)`.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            Terrain::Flat => 0.0,
            Terrain::Stairs { rise, run, start_x, steps } => {
                if x < start_x {
                    0.0
                } else {
                    let k = ((x - start_x) / run).floor() as u32 + 1;
                    rise * k.min(steps) as f64
                }
            }
            Terrain::Blocks { cell, min_h, max_h, start_x, seed } => {
                if x < start_x {
                    0.0
                } else {
                    let ix = ((x - start_x) / cell).floor() as i64;
                    let iy = (y / cell).floor() as i64;
                    min_h + (max_h - min_h) * cell_unit(seed, ix, iy)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_is_zero() {
        assert_eq!(Terrain::Flat.height(3.0, -1.0), 0.0);
    }

    #[test]
    fn stair_profile() {
        let t = Terrain::stairs(1.0);
        assert_eq!(t.height(0.99, 0.0), 0.0);
        assert_eq!(t.height(1.0, 0.0), STAIR_RISE);
        assert!((t.height(1.3, 0.0) - 2.0 * STAIR_RISE).abs() < 1e-12);
        assert!((t.height(50.0, 0.0) - 4.0 * STAIR_RISE).abs() < 1e-12);
    }

    #[test]
    fn blocks_deterministic_and_bounded() {
        let a = Terrain::blocks(0.5, 7);
        let b = Terrain::blocks(0.5, 7);
        let c = Terrain::blocks(0.5, 8);
        let mut differs = false;
        for i in 0..400 {
            let (x, y) = (0.5 + i as f64 * 0.037, (i as f64 * 0.61).sin());
            let h = a.height(x, y);
            assert_eq!(h, b.height(x, y));
            assert!((0.08..=0.12).contains(&h));
            differs |= h != c.height(x, y);
        }
        assert!(differs);
        assert_eq!(a.height(0.4, 0.0), 0.0);
    }
}
