//! Shape similarity: edge extraction, exact Euclidean distance transforms,
//! Chamfer distance, voxel IoU and the shaped reward.

use serde::{Deserialize, Serialize};

use crate::exec::execute;
use crate::grid::{Grid2D, Shape, VoxelGrid, SIZE};
use crate::program::{validate, Program, DEFAULT_MAX_LEN};

/// Image diagonal used to normalize Chamfer distances into `[0, 1]`.
pub const DIAGONAL: f64 = 64.0 * std::f64::consts::SQRT_2;

/// ON cells with at least one OFF 4-neighbor; cells beyond the canvas
/// count as OFF.
pub fn edge_map(g: &Grid2D) -> Grid2D {
    let rows = g.rows();
    let mut out = [0u64; SIZE];
    for y in 0..SIZE {
        let row = rows[y];
        let up = if y > 0 { rows[y - 1] } else { 0 };
        let down = if y + 1 < SIZE { rows[y + 1] } else { 0 };
        // bit x of (row << 1) is the left neighbor, of (row >> 1) the right one
        let interior = row & (row << 1) & (row >> 1) & up & down;
        out[y] = row & !interior;
    }
    Grid2D::from_rows(out)
}

/// Edge pixel coordinates `(x, y)`, row-major.
pub fn edge_points(g: &Grid2D) -> Vec<(usize, usize)> {
    edge_map(g).iter_on().collect()
}

const FAR: f64 = 1e20;

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas rooted at each sample).
fn dt1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let parabola_cut = |p: usize| {
            let pf = p as f64;
            ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
        };
        let mut s = parabola_cut(v[k]);
        // z[0] is -inf, so this never pops past the first parabola
        while s <= z[k] {
            k -= 1;
            s = parabola_cut(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        d[q] = dq * dq + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every cell to the nearest ON cell
/// of `features`, row-major `[y * 64 + x]`. `+∞` everywhere when there are no
/// features.
pub fn squared_distance_to(features: &Grid2D) -> Vec<f64> {
    let mut field = vec![FAR; SIZE * SIZE];
    if features.is_empty() {
        return vec![f64::INFINITY; SIZE * SIZE];
    }
    for (x, y) in features.iter_on() {
        field[y * SIZE + x] = 0.0;
    }
    let mut f = [0.0; SIZE];
    let mut d = [0.0; SIZE];
    let mut v = [0usize; SIZE];
    let mut z = [0.0; SIZE + 1];
    // columns
    for x in 0..SIZE {
        for y in 0..SIZE {
            f[y] = field[y * SIZE + x];
        }
        dt1d(&f, &mut d, &mut v, &mut z);
        for y in 0..SIZE {
            field[y * SIZE + x] = d[y];
        }
    }
    // rows
    for y in 0..SIZE {
        f.copy_from_slice(&field[y * SIZE..(y + 1) * SIZE]);
        dt1d(&f, &mut d, &mut v, &mut z);
        field[y * SIZE..(y + 1) * SIZE].copy_from_slice(&d);
    }
    field
}

/// Euclidean distance from each pixel center to the nearest edge point of `g`,
/// row-major `[y * 64 + x]`; `+∞` when `g` has no edge points.
pub fn distance_transform(g: &Grid2D) -> Vec<f64> {
    squared_distance_to(&edge_map(g)).into_iter().map(f64::sqrt).collect()
}

/// Precomputed edges and distance field of a fixed 2D target, so repeated
/// Chamfer evaluations against it only transform the candidate.
#[derive(Clone, Debug)]
pub struct ChamferTarget {
    edges: Grid2D,
    edge_count: usize,
    field: Vec<f64>,
}

impl ChamferTarget {
    pub fn new(target: &Grid2D) -> Self {
        let edges = edge_map(target);
        Self { edge_count: edges.count(), field: distance_transform(target), edges }
    }

    /// Normalized Chamfer distance between the target and `g`.
    pub fn distance(&self, g: &Grid2D) -> f64 {
        let other = edge_map(g);
        chamfer_parts(&self.edges, self.edge_count, &self.field, &other)
    }
}

fn mean_over(points: &Grid2D, field: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in points.iter_on() {
        sum += field[y * SIZE + x];
        n += 1;
    }
    sum / n as f64
}

fn chamfer_parts(a_edges: &Grid2D, a_count: usize, a_field: &[f64], b_edges: &Grid2D) -> f64 {
    let b_count = b_edges.count();
    match (a_count, b_count) {
        (0, 0) => 0.0,
        (0, _) | (_, 0) => 1.0,
        _ => {
            let b_field: Vec<f64> = squared_distance_to(b_edges).into_iter().map(f64::sqrt).collect();
            let ab = mean_over(a_edges, &b_field);
            let ba = mean_over(b_edges, a_field);
            (0.5 * ab + 0.5 * ba) / DIAGONAL
        }
    }
}

/// Symmetric Chamfer distance between the edge point sets of `a` and `b`,
/// divided by the image diagonal. Both empty gives 0, exactly one empty 1.
pub fn chamfer(a: &Grid2D, b: &Grid2D) -> f64 {
    ChamferTarget::new(a).distance(b)
}

/// Voxel intersection over union in percent; two empty grids score 100.
pub fn iou3d(a: &VoxelGrid, b: &VoxelGrid) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        return 100.0;
    }
    100.0 * a.intersection_count(b) as f64 / union as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub gamma: f64,
    pub max_len: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { gamma: 20.0, max_len: DEFAULT_MAX_LEN }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardValue {
    pub r: f64,
    /// Normalized Chamfer distance (2D) or `1 − IoU/100` (3D); absent for
    /// invalid programs.
    pub cd: Option<f64>,
}

impl RewardValue {
    pub const INVALID: RewardValue = RewardValue { r: 0.0, cd: None };
}

/// `(1 − x)^γ`.
pub fn shape_reward(x: f64, gamma: f64) -> f64 {
    (1.0 - x).max(0.0).powf(gamma)
}

/// A target with whatever precomputation its mode's distance needs.
#[derive(Clone, Debug)]
pub enum Target {
    Flat { grid: Grid2D, chamfer: ChamferTarget },
    Voxel(VoxelGrid),
}

impl Target {
    pub fn new(shape: &Shape) -> Self {
        match shape {
            Shape::Flat(g) => Target::Flat { grid: *g, chamfer: ChamferTarget::new(g) },
            Shape::Voxel(v) => Target::Voxel(v.clone()),
        }
    }

    pub fn mode(&self) -> crate::program::Mode {
        match self {
            Target::Flat { .. } => crate::program::Mode::Two,
            Target::Voxel(_) => crate::program::Mode::Three,
        }
    }

    /// Chamfer distance (2D) or `1 − IoU/100` (3D) to a rendered shape of the
    /// same mode; 1 on a mode mismatch.
    pub fn distance(&self, rendered: &Shape) -> f64 {
        match (self, rendered) {
            (Target::Flat { chamfer, .. }, Shape::Flat(g)) => chamfer.distance(g),
            (Target::Voxel(t), Shape::Voxel(v)) => 1.0 - iou3d(t, v) / 100.0,
            _ => 1.0,
        }
    }

    /// Renders `p` and scores it; `None` if the program is invalid, too long
    /// or of the wrong mode.
    pub fn evaluate(&self, p: &Program, max_len: usize) -> Option<(Shape, f64)> {
        if p.mode() != self.mode() || p.len() > max_len || !validate(p).valid {
            return None;
        }
        let rendered = execute(p).ok()?;
        let d = self.distance(&rendered);
        Some((rendered, d))
    }

    pub fn reward(&self, p: &Program, cfg: &RewardConfig) -> RewardValue {
        match self.evaluate(p, cfg.max_len) {
            Some((_, cd)) => RewardValue { r: shape_reward(cd, cfg.gamma), cd: Some(cd) },
            None => RewardValue::INVALID,
        }
    }
}

/// Reward of program `p` against `target`: zero for invalid or over-long
/// programs, otherwise `(1 − d)^γ` with `d` the mode's distance.
pub fn reward(p: &Program, target: &Shape, cfg: &RewardConfig) -> RewardValue {
    Target::new(target).reward(p, cfg)
}
