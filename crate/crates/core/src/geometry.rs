//! Membership tests and rasterization of primitives.
//!
//! Cell `(i, j)` is sampled at its center `(i + 0.5, j + 0.5)`; boundaries are
//! inclusive. All tests run in integer arithmetic on doubled coordinates
//! (`u = 2·p − 2·l`, so centers become odd integers), which makes rasters
//! bit-exact on every platform. Image coordinates have y growing downward.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid2D, VoxelGrid, SIZE};
use crate::program::{Prim2D, Prim3D, ShapeKind2D, ShapeKind3D};

#[inline]
fn doubled_offset(cell: usize, center: i32) -> i64 {
    2 * cell as i64 + 1 - 2 * center as i64
}

/// Is the center of pixel `(px, py)` inside the primitive?
///
/// * circle: Euclidean distance to `l` at most `r`;
/// * square: upright, corners on the radius-`r` circle (half-side `r/√2`);
/// * triangle: upright equilateral, vertices on the radius-`r` circle with
///   the apex at `l − (0, r)`.
pub fn member2d(kind: ShapeKind2D, l: (i32, i32), r: i32, px: usize, py: usize) -> bool {
    let u = doubled_offset(px, l.0);
    let v = doubled_offset(py, l.1);
    let r = r as i64;
    match kind {
        ShapeKind2D::Circle => u * u + v * v <= 4 * r * r,
        ShapeKind2D::Square => u * u <= 2 * r * r && v * v <= 2 * r * r,
        // Base at y = l.y + r/2; the two slanted sides satisfy
        // √3·|u| ≤ 2r + v.
        ShapeKind2D::Triangle => v <= r && 2 * r + v >= 0 && 3 * u * u <= (2 * r + v) * (2 * r + v),
    }
}

/// Is the center of voxel `(px, py, pz)` inside the primitive?
///
/// Sphere: Euclidean radius `r`. Cube: axis-aligned, half-edge `r`.
/// Cylinder: axis along z, radius `r`, height `h` centered on `l.z`.
pub fn member3d(kind: ShapeKind3D, l: (i32, i32, i32), r: i32, h: i32, p: (usize, usize, usize)) -> bool {
    let u = doubled_offset(p.0, l.0);
    let v = doubled_offset(p.1, l.1);
    let w = doubled_offset(p.2, l.2);
    let (r, h) = (r as i64, h as i64);
    match kind {
        ShapeKind3D::Sphere => u * u + v * v + w * w <= 4 * r * r,
        ShapeKind3D::Cube => u.abs() <= 2 * r && v.abs() <= 2 * r && w.abs() <= 2 * r,
        ShapeKind3D::Cylinder => u * u + v * v <= 4 * r * r && w.abs() <= h,
    }
}

/// Cell index range that can intersect `[c - ext, c + ext]`, clipped to the canvas.
fn cell_span(c: i32, ext: i32) -> std::ops::Range<usize> {
    let lo = (c - ext - 1).clamp(0, SIZE as i32) as usize;
    let hi = (c + ext + 1).clamp(0, SIZE as i32) as usize;
    lo..hi
}

pub fn rasterize2d(p: &Prim2D) -> Grid2D {
    let mut rows = [0u64; SIZE];
    for py in cell_span(p.y, p.r) {
        let mut row = 0u64;
        for px in cell_span(p.x, p.r) {
            if member2d(p.kind, (p.x, p.y), p.r, px, py) {
                row |= 1 << px;
            }
        }
        rows[py] = row;
    }
    Grid2D::from_rows(rows)
}

pub fn voxelize3d(p: &Prim3D) -> VoxelGrid {
    let mut grid = VoxelGrid::empty();
    let z_ext = match p.kind {
        ShapeKind3D::Cylinder => (p.h + 1) / 2,
        _ => p.r,
    };
    let zs = cell_span(p.z, z_ext);
    for px in cell_span(p.x, p.r) {
        for py in cell_span(p.y, p.r) {
            let mut col = 0u64;
            for pz in zs.clone() {
                if member3d(p.kind, (p.x, p.y, p.z), p.r, p.h, (px, py, pz)) {
                    col |= 1 << pz;
                }
            }
            if col != 0 {
                grid.set_column(px, py, col);
            }
        }
    }
    grid
}

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub min: (f64, f64),
    pub max: (f64, f64),
}

impl Box2D {
    pub fn area(&self) -> f64 {
        (self.max.0 - self.min.0).max(0.0) * (self.max.1 - self.min.1).max(0.0)
    }

    pub fn iou(&self, other: &Box2D) -> f64 {
        let ix = (self.max.0.min(other.max.0) - self.min.0.max(other.min.0)).max(0.0);
        let iy = (self.max.1.min(other.max.1) - self.min.1.max(other.min.1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.min.0 && p.0 <= self.max.0 && p.1 >= self.min.1 && p.1 <= self.max.1
    }
}

/// Tight box around the continuous primitive.
pub fn bounding_box2d(p: &Prim2D) -> Box2D {
    let (x, y, r) = (p.x as f64, p.y as f64, p.r as f64);
    match p.kind {
        ShapeKind2D::Circle => Box2D { min: (x - r, y - r), max: (x + r, y + r) },
        ShapeKind2D::Square => {
            let half = r / std::f64::consts::SQRT_2;
            Box2D { min: (x - half, y - half), max: (x + half, y + half) }
        }
        ShapeKind2D::Triangle => {
            let half = r * 3f64.sqrt() / 2.0;
            Box2D { min: (x - half, y - r), max: (x + half, y + r / 2.0) }
        }
    }
}
