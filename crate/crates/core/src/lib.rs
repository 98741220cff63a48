//! Constructive solid geometry programs over 64×64 images and 64³ voxel
//! grids: a postfix instruction language with a stack executor, shape
//! metrics, a synthetic program generator, a small encoder–decoder parser
//! trained by maximum likelihood and policy gradients, decoding and
//! refinement, and a primitive-detection evaluation harness.

pub mod datagen;
pub mod detect;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod grid;
pub mod metrics;
pub mod policy;
pub mod program;
pub mod refine;
pub mod search;
pub mod vocab;

pub use error::{CsgError, Result};
pub use grid::{Grid2D, Shape, VoxelGrid};
pub use program::{BoolOp, ExprTree, Instruction, Mode, Program, ShapeKind2D, ShapeKind3D};
