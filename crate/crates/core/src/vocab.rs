//! The instruction vocabulary: every primitive that fits inside the canvas,
//! the three operations and the stop symbol, in a fixed order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CsgError, Result};
use crate::program::{
    BoolOp, Instruction, Mode, Prim2D, Prim3D, Program, ShapeKind2D, ShapeKind3D, LOCATIONS, SIZES,
};

#[derive(Clone, Debug)]
pub struct Vocabulary {
    mode: Mode,
    entries: Vec<Instruction>,
    index: HashMap<Instruction, usize>,
    primitive_count: usize,
}

/// Summary written next to datasets and stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabManifest {
    pub mode: Mode,
    pub size: usize,
    pub primitives: usize,
    pub per_kind: Vec<(String, usize)>,
    pub sha256: String,
}

fn inside(c: i32, ext: i32) -> bool {
    c - ext >= 0 && c + ext <= 64
}

impl Vocabulary {
    pub fn build(mode: Mode) -> Self {
        let mut entries = Vec::new();
        match mode {
            Mode::Two => {
                for kind in ShapeKind2D::ALL {
                    for &x in &LOCATIONS {
                        for &y in &LOCATIONS {
                            for &r in &SIZES {
                                if inside(x, r) && inside(y, r) {
                                    entries.push(Instruction::Prim2D(Prim2D { kind, x, y, r }));
                                }
                            }
                        }
                    }
                }
            }
            Mode::Three => {
                for kind in ShapeKind3D::ALL {
                    let heights: &[i32] = if kind == ShapeKind3D::Cylinder { &SIZES } else { &[0] };
                    for &x in &LOCATIONS {
                        for &y in &LOCATIONS {
                            for &z in &LOCATIONS {
                                for &r in &SIZES {
                                    for &h in heights {
                                        let z_ext = if kind == ShapeKind3D::Cylinder { h / 2 } else { r };
                                        if inside(x, r) && inside(y, r) && inside(z, z_ext) {
                                            entries.push(Instruction::Prim3D(Prim3D { kind, x, y, z, r, h }));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let primitive_count = entries.len();
        entries.extend(BoolOp::ALL.iter().map(|&op| Instruction::Op(op)));
        entries.push(Instruction::Stop);
        let index = entries.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        Self { mode, entries, index, primitive_count }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Instruction] {
        &self.entries
    }

    pub fn get(&self, token: usize) -> Option<&Instruction> {
        self.entries.get(token)
    }

    pub fn token_of(&self, ins: &Instruction) -> Option<usize> {
        self.index.get(ins).copied()
    }

    pub fn primitive_count(&self) -> usize {
        self.primitive_count
    }

    pub fn op_token(&self, op: BoolOp) -> usize {
        self.primitive_count + op as usize
    }

    pub fn stop_token(&self) -> usize {
        self.entries.len() - 1
    }

    /// Canonical listing, one instruction per line.
    pub fn listing(&self) -> String {
        let mut s = format!("# vocabulary {} {}\n", self.mode, self.entries.len());
        for e in &self.entries {
            s.push_str(&e.to_string());
            s.push('\n');
        }
        s
    }

    /// SHA-256 of the canonical listing, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.listing().as_bytes()))
    }

    pub fn manifest(&self) -> VocabManifest {
        let mut per_kind: Vec<(String, usize)> = Vec::new();
        for e in &self.entries[..self.primitive_count] {
            let name = match e {
                Instruction::Prim2D(p) => p.kind.symbol(),
                Instruction::Prim3D(p) => p.kind.symbol(),
                _ => unreachable!(),
            };
            match per_kind.last_mut() {
                Some((k, n)) if k == name => *n += 1,
                _ => per_kind.push((name.to_string(), 1)),
            }
        }
        VocabManifest {
            mode: self.mode,
            size: self.len(),
            primitives: self.primitive_count,
            per_kind,
            sha256: self.hash(),
        }
    }

    /// Token ids of a program; `None` if some instruction is not in the
    /// vocabulary (e.g. off-grid parameters).
    pub fn encode(&self, p: &Program) -> Option<Vec<usize>> {
        p.instructions().iter().map(|i| self.token_of(i)).collect()
    }

    /// Program from token ids. Tokens after the first stop are dropped.
    pub fn decode(&self, tokens: &[usize], max_len: usize) -> Result<Program> {
        let mut instructions = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let ins = *self.get(t).ok_or_else(|| CsgError::Format {
                what: "token sequence",
                message: format!("token {t} outside vocabulary of {}", self.len()),
            })?;
            instructions.push(ins);
            if ins == Instruction::Stop {
                break;
            }
        }
        Program::new(self.mode, instructions, max_len.max(tokens.len()))
    }
}
