//! The CSG instruction language: tokens, postfix programs, their text form,
//! grammar validity and expression trees.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CsgError, Result};

/// Allowed primitive centers along every axis.
pub const LOCATIONS: [i32; 7] = [8, 16, 24, 32, 40, 48, 56];
/// Allowed radii / sizes / cylinder heights.
pub const SIZES: [i32; 7] = [8, 12, 16, 20, 24, 28, 32];
/// Default cap on the number of non-stop instructions.
pub const DEFAULT_MAX_LEN: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "2d")]
    Two,
    #[serde(rename = "3d")]
    Three,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Two => "2d",
            Mode::Three => "3d",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "2d" => Ok(Mode::Two),
            "3d" => Ok(Mode::Three),
            other => Err(format!("unknown mode {other:?} (expected 2d or 3d)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShapeKind2D {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind2D {
    pub const ALL: [ShapeKind2D; 3] = [ShapeKind2D::Circle, ShapeKind2D::Square, ShapeKind2D::Triangle];

    pub fn symbol(self) -> &'static str {
        match self {
            ShapeKind2D::Circle => "c",
            ShapeKind2D::Square => "s",
            ShapeKind2D::Triangle => "t",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShapeKind3D {
    Sphere,
    Cube,
    Cylinder,
}

impl ShapeKind3D {
    pub const ALL: [ShapeKind3D; 3] = [ShapeKind3D::Sphere, ShapeKind3D::Cube, ShapeKind3D::Cylinder];

    pub fn symbol(self) -> &'static str {
        match self {
            ShapeKind3D::Sphere => "sp",
            ShapeKind3D::Cube => "cu",
            ShapeKind3D::Cylinder => "cy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoolOp {
    Union,
    Intersect,
    /// Left operand minus right operand.
    Subtract,
}

impl BoolOp {
    pub const ALL: [BoolOp; 3] = [BoolOp::Union, BoolOp::Intersect, BoolOp::Subtract];

    pub fn keyword(self) -> &'static str {
        match self {
            BoolOp::Union => "union",
            BoolOp::Intersect => "intersect",
            BoolOp::Subtract => "subtract",
        }
    }
}

/// A placed 2D primitive. `(x, y)` is the center in pixels (y grows
/// downward), `r` the radius of the circumscribing circle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prim2D {
    pub kind: ShapeKind2D,
    pub x: i32,
    pub y: i32,
    pub r: i32,
}

/// A placed 3D primitive. `h` is the cylinder height and is 0 for spheres
/// and cubes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prim3D {
    pub kind: ShapeKind3D,
    pub x: i32,
    pub y: i32,
    pub z: i32,
    pub r: i32,
    pub h: i32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Instruction {
    Prim2D(Prim2D),
    Prim3D(Prim3D),
    Op(BoolOp),
    Stop,
}

impl Instruction {
    pub fn circle(x: i32, y: i32, r: i32) -> Self {
        Instruction::Prim2D(Prim2D { kind: ShapeKind2D::Circle, x, y, r })
    }

    pub fn square(x: i32, y: i32, r: i32) -> Self {
        Instruction::Prim2D(Prim2D { kind: ShapeKind2D::Square, x, y, r })
    }

    pub fn triangle(x: i32, y: i32, r: i32) -> Self {
        Instruction::Prim2D(Prim2D { kind: ShapeKind2D::Triangle, x, y, r })
    }

    pub fn sphere(x: i32, y: i32, z: i32, r: i32) -> Self {
        Instruction::Prim3D(Prim3D { kind: ShapeKind3D::Sphere, x, y, z, r, h: 0 })
    }

    pub fn cube(x: i32, y: i32, z: i32, r: i32) -> Self {
        Instruction::Prim3D(Prim3D { kind: ShapeKind3D::Cube, x, y, z, r, h: 0 })
    }

    pub fn cylinder(x: i32, y: i32, z: i32, r: i32, h: i32) -> Self {
        Instruction::Prim3D(Prim3D { kind: ShapeKind3D::Cylinder, x, y, z, r, h })
    }

    pub fn is_primitive(&self) -> bool {
        matches!(self, Instruction::Prim2D(_) | Instruction::Prim3D(_))
    }

    /// Mode of a primitive; `None` for ops and stop, which belong to both.
    pub fn mode(&self) -> Option<Mode> {
        match self {
            Instruction::Prim2D(_) => Some(Mode::Two),
            Instruction::Prim3D(_) => Some(Mode::Three),
            _ => None,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Prim2D(p) => write!(f, "{}({},{},{})", p.kind.symbol(), p.x, p.y, p.r),
            Instruction::Prim3D(p) if p.kind == ShapeKind3D::Cylinder => {
                write!(f, "cy({},{},{},{},{})", p.x, p.y, p.z, p.r, p.h)
            }
            Instruction::Prim3D(p) => write!(f, "{}({},{},{},{})", p.kind.symbol(), p.x, p.y, p.z, p.r),
            Instruction::Op(op) => f.write_str(op.keyword()),
            Instruction::Stop => f.write_str("$"),
        }
    }
}

/// A postfix instruction sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    mode: Mode,
    instructions: Vec<Instruction>,
    max_len: usize,
}

impl Program {
    /// Builds a program, checking the stop placement and length invariants.
    /// The length limit counts instructions other than a trailing stop.
    pub fn new(mode: Mode, instructions: Vec<Instruction>, max_len: usize) -> Result<Self> {
        if let Some(at) = instructions.iter().position(|i| *i == Instruction::Stop) {
            if at + 1 != instructions.len() {
                return Err(CsgError::MisplacedStop { at });
            }
        }
        let p = Self { mode, instructions, max_len };
        if p.len() > max_len {
            return Err(CsgError::TooLong { len: p.len(), max: max_len });
        }
        Ok(p)
    }

    pub fn with_default_len(mode: Mode, instructions: Vec<Instruction>) -> Result<Self> {
        Self::new(mode, instructions, DEFAULT_MAX_LEN)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// All instructions, including a trailing stop if present.
    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    /// Instructions without the trailing stop.
    pub fn body(&self) -> &[Instruction] {
        match self.instructions.last() {
            Some(Instruction::Stop) => &self.instructions[..self.instructions.len() - 1],
            _ => &self.instructions,
        }
    }

    /// Number of instructions, not counting a trailing stop.
    pub fn len(&self) -> usize {
        self.body().len()
    }

    pub fn is_empty(&self) -> bool {
        self.body().is_empty()
    }

    pub fn has_stop(&self) -> bool {
        self.instructions.last() == Some(&Instruction::Stop)
    }

    /// Same instructions, terminated by exactly one stop.
    pub fn with_stop(&self) -> Self {
        let mut instructions = self.body().to_vec();
        instructions.push(Instruction::Stop);
        Self { mode: self.mode, instructions, max_len: self.max_len }
    }

    pub fn without_stop(&self) -> Self {
        Self { mode: self.mode, instructions: self.body().to_vec(), max_len: self.max_len }
    }

    pub fn primitives(&self) -> impl Iterator<Item = &Instruction> {
        self.instructions.iter().filter(|i| i.is_primitive())
    }

    /// Replaces the instruction list keeping mode and limit; used by
    /// parameter refinement, which never changes structure.
    pub(crate) fn with_instructions(&self, instructions: Vec<Instruction>) -> Self {
        debug_assert_eq!(instructions.len(), self.instructions.len());
        Self { mode: self.mode, instructions, max_len: self.max_len }
    }

    /// Parses program text with the default length limit, requiring every
    /// parameter to lie on the instruction grid.
    pub fn parse(text: &str, mode: Mode) -> Result<Self> {
        parse_program(text, mode, DEFAULT_MAX_LEN, GridCheck::Strict)
    }

    /// Parses program text allowing any integer parameters inside the canvas,
    /// as produced by refinement.
    pub fn parse_relaxed(text: &str, mode: Mode) -> Result<Self> {
        parse_program(text, mode, DEFAULT_MAX_LEN, GridCheck::Canvas)
    }

    pub fn validate(&self) -> ValidityReport {
        validate(self)
    }

    pub fn to_tree(&self) -> Result<ExprTree> {
        to_tree(self)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_program(self))
    }
}

/// How strictly primitive parameters are checked while parsing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridCheck {
    /// Centers on the 8-spaced grid, sizes on the 4-spaced grid.
    Strict,
    /// Centers in `[0, 64]`, sizes in `[1, 64]`.
    Canvas,
}

/// Canonical text: instructions separated by single spaces.
pub fn format_program(p: &Program) -> String {
    let mut s = String::new();
    for (i, ins) in p.instructions.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&ins.to_string());
    }
    s
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn err(&self, message: impl Into<String>) -> CsgError {
        CsgError::Syntax { position: self.pos, message: message.into() }
    }

    fn word(&mut self) -> &'a str {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphabetic() || self.src[self.pos] == b'$') {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("")
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", c as char)))
        }
    }

    fn int(&mut self) -> Result<i32> {
        self.skip_ws();
        let start = self.pos;
        if self.src.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CsgError::Syntax { position: start, message: "expected integer".into() })
    }

    fn args(&mut self, n: usize) -> Result<Vec<(i32, usize)>> {
        self.expect(b'(')?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                self.expect(b',')?;
            }
            self.skip_ws();
            let at = self.pos;
            out.push((self.int()?, at));
        }
        self.expect(b')')?;
        Ok(out)
    }
}

fn check_location(v: i32, at: usize, check: GridCheck) -> Result<i32> {
    let ok = match check {
        GridCheck::Strict => LOCATIONS.contains(&v),
        GridCheck::Canvas => (0..=64).contains(&v),
    };
    if ok {
        Ok(v)
    } else {
        Err(CsgError::Syntax { position: at, message: format!("location {v} is off the grid") })
    }
}

fn check_size(v: i32, at: usize, check: GridCheck) -> Result<i32> {
    let ok = match check {
        GridCheck::Strict => SIZES.contains(&v),
        GridCheck::Canvas => (1..=64).contains(&v),
    };
    if ok {
        Ok(v)
    } else {
        Err(CsgError::Syntax { position: at, message: format!("size {v} is off the grid") })
    }
}

/// Parses whitespace-separated postfix program text.
pub fn parse_program(text: &str, mode: Mode, max_len: usize, check: GridCheck) -> Result<Program> {
    let mut lx = Lexer { src: text.as_bytes(), pos: 0 };
    let mut instructions = Vec::new();
    loop {
        lx.skip_ws();
        if lx.pos >= lx.src.len() {
            break;
        }
        let start = lx.pos;
        let word = lx.word();
        let ins = match word {
            "c" | "s" | "t" => {
                if mode != Mode::Two {
                    return Err(CsgError::MixedMode { position: start });
                }
                let a = lx.args(3)?;
                let kind = match word {
                    "c" => ShapeKind2D::Circle,
                    "s" => ShapeKind2D::Square,
                    _ => ShapeKind2D::Triangle,
                };
                Instruction::Prim2D(Prim2D {
                    kind,
                    x: check_location(a[0].0, a[0].1, check)?,
                    y: check_location(a[1].0, a[1].1, check)?,
                    r: check_size(a[2].0, a[2].1, check)?,
                })
            }
            "sp" | "cu" | "cy" => {
                if mode != Mode::Three {
                    return Err(CsgError::MixedMode { position: start });
                }
                let cyl = word == "cy";
                let a = lx.args(if cyl { 5 } else { 4 })?;
                let kind = match word {
                    "sp" => ShapeKind3D::Sphere,
                    "cu" => ShapeKind3D::Cube,
                    _ => ShapeKind3D::Cylinder,
                };
                Instruction::Prim3D(Prim3D {
                    kind,
                    x: check_location(a[0].0, a[0].1, check)?,
                    y: check_location(a[1].0, a[1].1, check)?,
                    z: check_location(a[2].0, a[2].1, check)?,
                    r: check_size(a[3].0, a[3].1, check)?,
                    h: if cyl { check_size(a[4].0, a[4].1, check)? } else { 0 },
                })
            }
            "union" => Instruction::Op(BoolOp::Union),
            "intersect" => Instruction::Op(BoolOp::Intersect),
            "subtract" => Instruction::Op(BoolOp::Subtract),
            "$" => Instruction::Stop,
            "" => return Err(lx.err(format!("unexpected character {:?}", lx.src[lx.pos] as char))),
            other => return Err(CsgError::Syntax { position: start, message: format!("unknown token {other:?}") }),
        };
        instructions.push(ins);
    }
    if instructions.is_empty() {
        return Err(CsgError::Empty);
    }
    Program::new(mode, instructions, max_len)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidityReason {
    Ok,
    StackUnderflow { at: usize },
    LeftoverOperands { count: usize },
    Empty,
    MixedMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub reason: ValidityReason,
}

impl ValidityReport {
    fn of(reason: ValidityReason) -> Self {
        Self { valid: reason == ValidityReason::Ok, reason }
    }
}

/// Simulates the execution stack: primitives push, operations pop two and
/// push one. Valid iff the stack never underflows and ends with one entry.
pub fn validate(p: &Program) -> ValidityReport {
    let body = p.body();
    if body.is_empty() {
        return ValidityReport::of(ValidityReason::Empty);
    }
    if body.iter().any(|i| i.mode().is_some_and(|m| m != p.mode)) {
        return ValidityReport::of(ValidityReason::MixedMode);
    }
    let mut depth = 0usize;
    for (at, ins) in body.iter().enumerate() {
        match ins {
            Instruction::Op(_) => {
                if depth < 2 {
                    return ValidityReport::of(ValidityReason::StackUnderflow { at });
                }
                depth -= 1;
            }
            Instruction::Stop => unreachable!("stop is always trailing"),
            _ => depth += 1,
        }
    }
    if depth == 1 {
        ValidityReport::of(ValidityReason::Ok)
    } else {
        ValidityReport::of(ValidityReason::LeftoverOperands { count: depth })
    }
}

/// Binary expression tree of a valid program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExprTree {
    Leaf(Instruction),
    Node { op: BoolOp, left: Box<ExprTree>, right: Box<ExprTree> },
}

impl ExprTree {
    /// Postfix serialization.
    pub fn postfix(&self) -> Vec<Instruction> {
        let mut out = Vec::new();
        self.push_postfix(&mut out);
        out
    }

    fn push_postfix(&self, out: &mut Vec<Instruction>) {
        match self {
            ExprTree::Leaf(i) => out.push(*i),
            ExprTree::Node { op, left, right } => {
                left.push_postfix(out);
                right.push_postfix(out);
                out.push(Instruction::Op(*op));
            }
        }
    }

    /// True when both trees have the same shape, operations and primitive
    /// kinds; primitive parameters may differ.
    pub fn same_structure(&self, other: &ExprTree) -> bool {
        match (self, other) {
            (ExprTree::Leaf(a), ExprTree::Leaf(b)) => match (a, b) {
                (Instruction::Prim2D(a), Instruction::Prim2D(b)) => a.kind == b.kind,
                (Instruction::Prim3D(a), Instruction::Prim3D(b)) => a.kind == b.kind,
                _ => false,
            },
            (
                ExprTree::Node { op: oa, left: la, right: ra },
                ExprTree::Node { op: ob, left: lb, right: rb },
            ) => oa == ob && la.same_structure(lb) && ra.same_structure(rb),
            _ => false,
        }
    }
}

pub fn to_tree(p: &Program) -> Result<ExprTree> {
    let report = validate(p);
    if !report.valid {
        return Err(CsgError::InvalidProgram(report.reason));
    }
    let mut stack: Vec<ExprTree> = Vec::new();
    for ins in p.body() {
        match ins {
            Instruction::Op(op) => {
                let right = stack.pop().expect("validated");
                let left = stack.pop().expect("validated");
                stack.push(ExprTree::Node { op: *op, left: Box::new(left), right: Box::new(right) });
            }
            other => stack.push(ExprTree::Leaf(*other)),
        }
    }
    Ok(stack.pop().expect("validated"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p2(text: &str) -> Program {
        Program::parse(text, Mode::Two).unwrap()
    }

    #[test]
    fn parses_example() {
        let p = p2("c(32,32,16) s(16,16,12) union");
        assert_eq!(
            p.instructions(),
            &[Instruction::circle(32, 32, 16), Instruction::square(16, 16, 12), Instruction::Op(BoolOp::Union)]
        );
    }

    #[test]
    fn tolerates_whitespace() {
        let p = p2("  c(32, 32, 16)\n\ts( 16 ,16,12 )\nunion  ");
        assert_eq!(format_program(&p), "c(32,32,16) s(16,16,12) union");
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(matches!(Program::parse("", Mode::Two), Err(CsgError::Empty)));
        assert!(matches!(Program::parse("  \n ", Mode::Two), Err(CsgError::Empty)));
    }

    #[test]
    fn off_grid_is_a_syntax_error() {
        assert!(matches!(Program::parse("c(33,32,16)", Mode::Two), Err(CsgError::Syntax { position: 2, .. })));
        assert!(matches!(Program::parse("c(32,32,10)", Mode::Two), Err(CsgError::Syntax { .. })));
        assert!(Program::parse_relaxed("c(33,32,10)", Mode::Two).is_ok());
        assert!(Program::parse_relaxed("c(65,32,10)", Mode::Two).is_err());
    }

    #[test]
    fn unknown_tokens_are_rejected() {
        assert!(matches!(Program::parse("q(8,8,8)", Mode::Two), Err(CsgError::Syntax { position: 0, .. })));
        assert!(matches!(Program::parse("c(8,8,8) unite", Mode::Two), Err(CsgError::Syntax { position: 9, .. })));
        assert!(Program::parse("c(8,8,8", Mode::Two).is_err());
        assert!(Program::parse("c(8,8)", Mode::Two).is_err());
        assert!(Program::parse("c(8,8,8) #", Mode::Two).is_err());
    }

    #[test]
    fn mixed_mode_fails_at_parse_time() {
        assert!(matches!(
            Program::parse("c(32,32,16) sp(32,32,32,16) union", Mode::Two),
            Err(CsgError::MixedMode { position: 12 })
        ));
        assert!(matches!(Program::parse("s(8,8,8)", Mode::Three), Err(CsgError::MixedMode { .. })));
    }

    #[test]
    fn stop_formats_as_dollar() {
        let p = p2("c(32,32,16) $");
        assert_eq!(p.to_string(), "c(32,32,16) $");
        assert!(p.has_stop());
        assert_eq!(p.len(), 1);
        assert!(matches!(Program::parse("$ c(32,32,16)", Mode::Two), Err(CsgError::MisplacedStop { at: 0 })));
    }

    #[test]
    fn formats_3d() {
        let p = Program::with_default_len(Mode::Three, vec![Instruction::cylinder(32, 32, 32, 16, 24)]).unwrap();
        assert_eq!(p.to_string(), "cy(32,32,32,16,24)");
        let p = Program::parse("sp(8,16,24,8) cu(32,32,32,16) subtract", Mode::Three).unwrap();
        assert_eq!(p.to_string(), "sp(8,16,24,8) cu(32,32,32,16) subtract");
    }

    #[test]
    fn length_limit_excludes_stop() {
        let body = "c(32,32,16) c(32,32,16) union c(32,32,16) union";
        assert!(parse_program(&format!("{body} $"), Mode::Two, 5, GridCheck::Strict).is_ok());
        assert!(matches!(
            parse_program(body, Mode::Two, 4, GridCheck::Strict),
            Err(CsgError::TooLong { len: 5, max: 4 })
        ));
    }

    #[test]
    fn validity_examples() {
        let a = Instruction::circle(32, 32, 16);
        let u = Instruction::Op(BoolOp::Union);
        let v = |ins: Vec<Instruction>| Program::with_default_len(Mode::Two, ins).unwrap().validate();
        assert_eq!(v(vec![a, a, u]).reason, ValidityReason::Ok);
        assert!(v(vec![a, a, u]).valid);
        assert_eq!(v(vec![a, a, a, u]).reason, ValidityReason::LeftoverOperands { count: 2 });
        assert_eq!(v(vec![a, u]).reason, ValidityReason::StackUnderflow { at: 1 });
        assert_eq!(v(vec![Instruction::Stop]).reason, ValidityReason::Empty);
        assert_eq!(v(vec![a, Instruction::sphere(8, 8, 8, 8), u]).reason, ValidityReason::MixedMode);
        assert!(!v(vec![a, Instruction::sphere(8, 8, 8, 8), u]).valid);
    }

    #[test]
    fn tree_examples() {
        let a = Instruction::circle(32, 32, 16);
        let b = Instruction::square(16, 16, 12);
        let c = Instruction::triangle(48, 48, 8);
        let leaf = |i| Box::new(ExprTree::Leaf(i));
        let t = p2("c(32,32,16) s(16,16,12) union").to_tree().unwrap();
        assert_eq!(t, ExprTree::Node { op: BoolOp::Union, left: leaf(a), right: leaf(b) });
        let t = p2("c(32,32,16) s(16,16,12) union t(48,48,8) subtract $").to_tree().unwrap();
        assert_eq!(
            t,
            ExprTree::Node {
                op: BoolOp::Subtract,
                left: Box::new(ExprTree::Node { op: BoolOp::Union, left: leaf(a), right: leaf(b) }),
                right: leaf(c),
            }
        );
        assert_eq!(p2("c(32,32,16)").to_tree().unwrap(), ExprTree::Leaf(a));
        assert!(matches!(p2("c(32,32,16) union").to_tree(), Err(CsgError::InvalidProgram(_))));
    }
}
