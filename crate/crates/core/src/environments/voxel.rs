//! 40³ occupancy grids over the cube `[-1.2, 1.2]³`.
//!
//! Cell `(i, j, k)` covers `x` slab `i`, `y` slab `j` and `z` slab `k`; its
//! linear index is `(i * 40 + j) * 40 + k`. Read as a `[40, 40, 40]` tensor
//! the first axis becomes the channel axis of the scene encoder.
//!
//! Sidecar layout (little-endian):
//!
//! | bytes | content                                     |
//! |-------|---------------------------------------------|
//! | 4     | magic `VOXG`                                |
//! | 4     | format version (`u32`, currently 1)         |
//! | 4     | resolution per axis (`u32`)                 |
//! | 8     | half-extent of the cube (`f64`)             |
//! | ⌈r³/8⌉| occupancy bits, cell `c` at byte `c / 8`, bit `c % 8` (LSB first) |

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::collision::CollisionChecker;
use crate::constraint::Config;
use crate::error::{Error, Result};

pub const VOXEL_RESOLUTION: usize = 40;
pub const VOXEL_EXTENT: f64 = 1.2;
const MAGIC: &[u8; 4] = b"VOXG";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    extent: f64,
    occupied: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty() -> Self {
        Self::with_shape(VOXEL_RESOLUTION, VOXEL_EXTENT)
    }

    pub fn with_shape(resolution: usize, extent: f64) -> Self {
        Self {
            resolution,
            extent,
            occupied: vec![false; resolution.pow(3)],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.extent / self.resolution as f64
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let h = self.cell_size();
        let c = |a: usize| -self.extent + (a as f64 + 0.5) * h;
        Vector3::new(c(i), c(j), c(k))
    }

    /// Cell containing the point, if it is inside the cube.
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<(usize, usize, usize)> {
        let h = self.cell_size();
        let axis = |x: f64| {
            let a = ((x + self.extent) / h).floor();
            (a >= 0.0 && a < self.resolution as f64).then_some(a as usize)
        };
        Some((axis(p.x)?, axis(p.y)?, axis(p.z)?))
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupied[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.index(i, j, k);
        self.occupied[idx] = value;
    }

    pub fn occupied_at(&self, p: &Vector3<f64>) -> bool {
        self.cell_of(p)
            .is_some_and(|(i, j, k)| self.get(i, j, k))
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// Occupancy as 0/1 reals in index order.
    pub fn to_f64(&self) -> Vec<f64> {
        self.occupied
            .iter()
            .map(|&o| if o { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn to_bits(&self) -> Vec<u8> {
        let mut bytes = vec![0u8; self.occupied.len().div_ceil(8)];
        for (c, _) in self.occupied.iter().enumerate().filter(|(_, &o)| o) {
            bytes[c / 8] |= 1 << (c % 8);
        }
        bytes
    }

    pub fn from_bits(resolution: usize, extent: f64, bytes: &[u8]) -> Result<Self> {
        let cells = resolution.pow(3);
        if bytes.len() != cells.div_ceil(8) {
            return Err(Error::Format(format!(
                "expected {} occupancy bytes, found {}",
                cells.div_ceil(8),
                bytes.len()
            )));
        }
        let occupied = (0..cells).map(|c| bytes[c / 8] >> (c % 8) & 1 == 1).collect();
        Ok(Self {
            resolution,
            extent,
            occupied,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.resolution as u32).to_le_bytes())?;
        w.write_all(&self.extent.to_le_bytes())?;
        w.write_all(&self.to_bits())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 20];
        r.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(Error::Format("not a voxel sidecar".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported voxel version {version}")));
        }
        let resolution = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
        let extent = f64::from_le_bytes(header[12..20].try_into().expect("8 bytes"));
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bits(resolution, extent, &bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Collision lookups against the rasterized grid.
impl CollisionChecker for VoxelGrid {
    fn in_collision(&self, q: &Config) -> bool {
        q.len() == 3 && self.occupied_at(&Vector3::new(q[0], q[1], q[2]))
    }
}

/// Marks every cell whose center is in collision.
pub fn voxelize(checker: &dyn CollisionChecker) -> VoxelGrid {
    let mut grid = VoxelGrid::empty();
    let r = grid.resolution;
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let c = grid.cell_center(i, j, k);
                let q = Config::from_column_slice(c.as_slice());
                if checker.in_collision(&q) {
                    grid.set(i, j, k, true);
                }
            }
        }
    }
    grid
}
