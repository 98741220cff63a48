//! Stack-based execution engine.
//!
//! Primitives are rasterized and pushed; an operation pops the right then the
//! left operand and pushes the combined grid. A trailing stop is ignored.

use crate::error::{CsgError, Result};
use crate::geometry::{rasterize2d, voxelize3d};
use crate::grid::{Grid2D, Shape, VoxelGrid};
use crate::program::{validate, BoolOp, Instruction, Mode, Program};

/// Cellwise boolean algebra shared by both raster kinds.
pub trait Canvas: Sized {
    fn combine(&self, op: BoolOp, right: &Self) -> Self;
    fn on_count(&self) -> usize;
}

impl Canvas for Grid2D {
    fn combine(&self, op: BoolOp, right: &Self) -> Self {
        match op {
            BoolOp::Union => self.union(right),
            BoolOp::Intersect => self.intersect(right),
            BoolOp::Subtract => self.subtract(right),
        }
    }

    fn on_count(&self) -> usize {
        self.count()
    }
}

impl Canvas for VoxelGrid {
    fn combine(&self, op: BoolOp, right: &Self) -> Self {
        match op {
            BoolOp::Union => self.union(right),
            BoolOp::Intersect => self.intersect(right),
            BoolOp::Subtract => self.subtract(right),
        }
    }

    fn on_count(&self) -> usize {
        self.count()
    }
}

fn run<C: Canvas>(p: &Program, mut draw: impl FnMut(&Instruction) -> C) -> Result<C> {
    let report = validate(p);
    if !report.valid {
        return Err(CsgError::InvalidProgram(report.reason));
    }
    let mut stack: Vec<C> = Vec::with_capacity(p.len());
    for ins in p.body() {
        match ins {
            Instruction::Op(op) => {
                let right = stack.pop().expect("validated");
                let left = stack.pop().expect("validated");
                stack.push(left.combine(*op, &right));
            }
            prim => stack.push(draw(prim)),
        }
    }
    Ok(stack.pop().expect("validated"))
}

pub fn execute2d(p: &Program) -> Result<Grid2D> {
    if p.mode() != Mode::Two {
        return Err(CsgError::ModeMismatch { expected: "2d", found: p.mode().name() });
    }
    run(p, |ins| match ins {
        Instruction::Prim2D(prim) => rasterize2d(prim),
        _ => unreachable!("validated 2D program"),
    })
}

pub fn execute3d(p: &Program) -> Result<VoxelGrid> {
    if p.mode() != Mode::Three {
        return Err(CsgError::ModeMismatch { expected: "3d", found: p.mode().name() });
    }
    run(p, |ins| match ins {
        Instruction::Prim3D(prim) => voxelize3d(prim),
        _ => unreachable!("validated 3D program"),
    })
}

/// Executes in the program's own mode.
pub fn execute(p: &Program) -> Result<Shape> {
    match p.mode() {
        Mode::Two => execute2d(p).map(Shape::Flat),
        Mode::Three => execute3d(p).map(Shape::Voxel),
    }
}

/// Renders a single primitive instruction.
pub fn render_primitive(ins: &Instruction) -> Option<Shape> {
    match ins {
        Instruction::Prim2D(p) => Some(Shape::Flat(rasterize2d(p))),
        Instruction::Prim3D(p) => Some(Shape::Voxel(voxelize3d(p))),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::member2d;
    use crate::grid::SIZE;
    use crate::program::{Prim2D, ShapeKind2D};

    fn p2(text: &str) -> Program {
        Program::parse(text, Mode::Two).unwrap()
    }

    fn p3(text: &str) -> Program {
        Program::parse(text, Mode::Three).unwrap()
    }

    #[test]
    fn union_is_pixelwise_or() {
        // y = 28 is off the 8-spaced grid, so this needs the relaxed parser
        let g = execute2d(&Program::parse_relaxed("c(32,32,16) c(32,28,16) union", Mode::Two).unwrap()).unwrap();
        let a = execute2d(&p2("c(32,32,16)")).unwrap();
        let b = execute2d(&Program::parse_relaxed("c(32,28,16)", Mode::Two).unwrap()).unwrap();
        for y in 0..SIZE {
            for x in 0..SIZE {
                assert_eq!(g.get(x, y), a.get(x, y) || b.get(x, y));
            }
        }
    }

    #[test]
    fn self_subtraction_is_empty() {
        assert!(execute2d(&p2("c(32,32,16) c(32,32,16) subtract")).unwrap().is_empty());
    }

    #[test]
    fn circle_union_square_count_matches_pixel_oracle() {
        let g = execute2d(&p2("c(32,32,16) s(16,16,12) union $")).unwrap();
        let mut oracle = 0;
        for y in 0..SIZE {
            for x in 0..SIZE {
                if member2d(ShapeKind2D::Circle, (32, 32), 16, x, y) || member2d(ShapeKind2D::Square, (16, 16), 12, x, y) {
                    oracle += 1;
                }
            }
        }
        assert_eq!(g.count(), oracle);
    }

    #[test]
    fn subtract_is_ordered() {
        let ab = execute2d(&p2("c(32,32,16) s(24,24,12) subtract")).unwrap();
        let ba = execute2d(&p2("s(24,24,12) c(32,32,16) subtract")).unwrap();
        assert_ne!(ab, ba);
    }

    #[test]
    fn sphere_self_intersection() {
        let g = execute3d(&p3("sp(32,32,32,16) sp(32,32,32,16) intersect")).unwrap();
        assert_eq!(g, execute3d(&p3("sp(32,32,32,16)")).unwrap());
    }

    #[test]
    fn invalid_programs_do_not_execute() {
        assert!(matches!(execute2d(&p2("c(32,32,16) union")), Err(CsgError::InvalidProgram(_))));
        assert!(matches!(execute3d(&p3("sp(32,32,32,16) sp(32,32,32,8)")), Err(CsgError::InvalidProgram(_))));
        assert!(matches!(execute3d(&p2("c(32,32,16)")), Err(CsgError::ModeMismatch { .. })));
    }

    #[test]
    fn render_single_primitive() {
        let ins = Instruction::Prim2D(Prim2D { kind: ShapeKind2D::Square, x: 32, y: 32, r: 16 });
        assert_eq!(render_primitive(&ins), Some(Shape::Flat(execute2d(&p2("s(32,32,16)")).unwrap())));
        assert_eq!(render_primitive(&Instruction::Stop), None);
    }
}
