//! Binary occupancy rasters: the 64×64 image canvas and the 64³ voxel grid.
//!
//! Both are stored as packed bit rows so that boolean operations are plain
//! word-wise `|`, `&` and `& !`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{CsgError, Result};

/// Side length of every canvas, in cells.
pub const SIZE: usize = 64;

/// 64×64 binary image. Row `y` is one `u64`, bit `x` is column `x`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid2D {
    rows: [u64; SIZE],
}

impl Default for Grid2D {
    fn default() -> Self {
        Self::empty()
    }
}

impl fmt::Debug for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid2D({} on)", self.count())
    }
}

impl Grid2D {
    pub const fn empty() -> Self {
        Self { rows: [0; SIZE] }
    }

    pub fn full() -> Self {
        Self { rows: [u64::MAX; SIZE] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        (self.rows[y] >> x) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        if on {
            self.rows[y] |= 1 << x;
        } else {
            self.rows[y] &= !(1 << x);
        }
    }

    pub fn rows(&self) -> &[u64; SIZE] {
        &self.rows
    }

    pub fn from_rows(rows: [u64; SIZE]) -> Self {
        Self { rows }
    }

    /// Number of ON cells.
    pub fn count(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|&r| r == 0)
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut rows = self.rows;
        rows.iter_mut().zip(&other.rows).for_each(|(a, b)| *a |= b);
        Self { rows }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let mut rows = self.rows;
        rows.iter_mut().zip(&other.rows).for_each(|(a, b)| *a &= b);
        Self { rows }
    }

    /// Cells ON in `self` and OFF in `other`.
    pub fn subtract(&self, other: &Self) -> Self {
        let mut rows = self.rows;
        rows.iter_mut().zip(&other.rows).for_each(|(a, b)| *a &= !b);
        Self { rows }
    }

    /// `(x, y)` of every ON cell, row-major.
    pub fn iter_on(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().enumerate().flat_map(|(y, &row)| {
            (0..SIZE).filter(move |&x| (row >> x) & 1 == 1).map(move |x| (x, y))
        })
    }

    /// Cells as 0.0/1.0, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(SIZE * SIZE);
        for y in 0..SIZE {
            for x in 0..SIZE {
                out.push(if self.get(x, y) { 1.0 } else { 0.0 });
            }
        }
        out
    }

    /// Plain PBM (`P1`) text.
    pub fn to_pbm(&self) -> String {
        let mut s = String::with_capacity(16 + SIZE * SIZE * 2);
        s.push_str("P1\n64 64\n");
        for y in 0..SIZE {
            for x in 0..SIZE {
                if x > 0 {
                    s.push(' ');
                }
                s.push(if self.get(x, y) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    /// Parses plain PBM. Comments and arbitrary whitespace are accepted; the
    /// image must be 64×64.
    pub fn from_pbm(text: &str) -> Result<Self> {
        let bad = |message: String| CsgError::Format { what: "PBM", message };
        let mut cleaned = String::with_capacity(text.len());
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            cleaned.push_str(line);
            cleaned.push('\n');
        }
        let mut tokens = cleaned.split_whitespace();
        if tokens.next() != Some("P1") {
            return Err(bad("missing P1 magic".into()));
        }
        let mut dim = || -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| bad("missing dimensions".into()))?
                .parse::<usize>()
                .map_err(|e| bad(e.to_string()))
        };
        let (w, h) = (dim()?, dim()?);
        if (w, h) != (SIZE, SIZE) {
            return Err(bad(format!("expected 64x64, found {w}x{h}")));
        }
        // P1 pixels may be written without separators.
        let mut grid = Self::empty();
        let mut i = 0usize;
        for tok in tokens {
            for c in tok.chars() {
                if i >= SIZE * SIZE {
                    return Err(bad("too many pixels".into()));
                }
                match c {
                    '0' => {}
                    '1' => grid.set(i % SIZE, i / SIZE, true),
                    other => return Err(bad(format!("unexpected character {other:?}"))),
                }
                i += 1;
            }
        }
        if i != SIZE * SIZE {
            return Err(bad(format!("expected 4096 pixels, found {i}")));
        }
        Ok(grid)
    }
}

/// 64×64×64 binary voxel grid. Word `x * 64 + y` holds the z column, bit `z`.
/// The linear cell order is x-major, then y, then z.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    cols: Vec<u64>,
}

impl Default for VoxelGrid {
    fn default() -> Self {
        Self::empty()
    }
}

impl fmt::Debug for VoxelGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VoxelGrid({} on)", self.count())
    }
}

const VOXEL_MAGIC: &[u8] = b"CSGV1 64 64 64\n";

impl VoxelGrid {
    pub fn empty() -> Self {
        Self { cols: vec![0; SIZE * SIZE] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        (self.cols[x * SIZE + y] >> z) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, on: bool) {
        let w = &mut self.cols[x * SIZE + y];
        if on {
            *w |= 1 << z;
        } else {
            *w &= !(1 << z);
        }
    }

    /// Overwrites the z column at `(x, y)`.
    #[inline]
    pub fn set_column(&mut self, x: usize, y: usize, bits: u64) {
        self.cols[x * SIZE + y] = bits;
    }

    pub fn count(&self) -> usize {
        self.cols.iter().map(|c| c.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.iter().all(|&c| c == 0)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        Self {
            cols: self.cols.iter().zip(&other.cols).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn subtract(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn intersection_count(&self, other: &Self) -> usize {
        self.cols.iter().zip(&other.cols).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }

    pub fn union_count(&self, other: &Self) -> usize {
        self.cols.iter().zip(&other.cols).map(|(a, b)| (a | b).count_ones() as usize).sum()
    }

    /// Cells as 0.0/1.0 in (z, y, x) order, i.e. depth-major, for the
    /// convolutional encoder's (D, H, W) layout.
    pub fn to_f64_dhw(&self) -> Vec<f64> {
        let mut out = vec![0.0; SIZE * SIZE * SIZE];
        for x in 0..SIZE {
            for y in 0..SIZE {
                let col = self.cols[x * SIZE + y];
                if col == 0 {
                    continue;
                }
                for z in 0..SIZE {
                    if (col >> z) & 1 == 1 {
                        out[(z * SIZE + y) * SIZE + x] = 1.0;
                    }
                }
            }
        }
        out
    }

    /// `CSGV1` bytes: ASCII header then one 0x00/0x01 byte per cell, x-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(VOXEL_MAGIC.len() + SIZE * SIZE * SIZE);
        out.extend_from_slice(VOXEL_MAGIC);
        for &col in &self.cols {
            for z in 0..SIZE {
                out.push(((col >> z) & 1) as u8);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |message: String| CsgError::Format { what: "CSGV1", message };
        let body = bytes.strip_prefix(VOXEL_MAGIC).ok_or_else(|| bad("missing header".into()))?;
        if body.len() != SIZE * SIZE * SIZE {
            return Err(bad(format!("expected {} cells, found {}", SIZE * SIZE * SIZE, body.len())));
        }
        let mut grid = Self::empty();
        for (i, chunk) in body.chunks_exact(SIZE).enumerate() {
            let mut col = 0u64;
            for (z, &b) in chunk.iter().enumerate() {
                match b {
                    0 => {}
                    1 => col |= 1 << z,
                    other => return Err(bad(format!("cell byte {other:#04x}"))),
                }
            }
            grid.cols[i] = col;
        }
        Ok(grid)
    }
}

/// Either kind of input shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Flat(Grid2D),
    Voxel(VoxelGrid),
}

impl Shape {
    pub fn mode(&self) -> crate::program::Mode {
        match self {
            Shape::Flat(_) => crate::program::Mode::Two,
            Shape::Voxel(_) => crate::program::Mode::Three,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Shape::Flat(g) => g.is_empty(),
            Shape::Voxel(v) => v.is_empty(),
        }
    }

    /// Reads a PBM (2D) or CSGV1 (3D) file, detected by its magic bytes.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(b"CSGV1") {
            Ok(Shape::Voxel(VoxelGrid::from_bytes(&bytes)?))
        } else {
            let text = String::from_utf8(bytes).map_err(|e| CsgError::Format {
                what: "PBM",
                message: e.to_string(),
            })?;
            Ok(Shape::Flat(Grid2D::from_pbm(&text)?))
        }
    }

    pub fn to_file_bytes(&self) -> Vec<u8> {
        match self {
            Shape::Flat(g) => g.to_pbm().into_bytes(),
            Shape::Voxel(v) => v.to_bytes(),
        }
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
