//! Parameter refinement with fixed program structure: integer coordinate
//! descent on primitive positions and sizes against the rendered objective.

use serde::{Deserialize, Serialize};

use crate::error::{CsgError, Result};
use crate::exec::execute;
use crate::grid::SIZE;
use crate::metrics::Target;
use crate::program::{validate, Instruction, Program, ShapeKind3D};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub max_sweeps: usize,
    pub step_schedule: Vec<i32>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { max_sweeps: 10, step_schedule: vec![8, 4, 2, 1] }
    }
}

#[derive(Clone, Debug)]
pub struct Refined {
    pub program: Program,
    /// Objective before refinement, then after each sweep.
    pub trace: Vec<f64>,
}

impl Refined {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace starts with the initial objective")
    }
}

const CANVAS: i32 = SIZE as i32;

/// Parameter slots of one primitive, in the order they are swept.
fn slots(ins: &Instruction) -> usize {
    match ins {
        Instruction::Prim2D(_) => 3,
        Instruction::Prim3D(p) if p.kind == ShapeKind3D::Cylinder => 5,
        Instruction::Prim3D(_) => 4,
        _ => 0,
    }
}

fn get(ins: &Instruction, slot: usize) -> i32 {
    match ins {
        Instruction::Prim2D(p) => [p.x, p.y, p.r][slot],
        Instruction::Prim3D(p) => [p.x, p.y, p.z, p.r, p.h][slot],
        _ => unreachable!(),
    }
}

fn set(ins: &Instruction, slot: usize, v: i32) -> Instruction {
    let mut out = *ins;
    match &mut out {
        Instruction::Prim2D(p) => *[&mut p.x, &mut p.y, &mut p.r][slot] = v,
        Instruction::Prim3D(p) => *[&mut p.x, &mut p.y, &mut p.z, &mut p.r, &mut p.h][slot] = v,
        _ => unreachable!(),
    }
    out
}

/// Inclusive range of values for `slot` that keeps the primitive inside the
/// canvas with the other parameters fixed.
fn bounds(ins: &Instruction, slot: usize) -> (i32, i32) {
    let fit = |c: i32| c.min(CANVAS - c);
    match ins {
        Instruction::Prim2D(p) => match slot {
            0 | 1 => (p.r, CANVAS - p.r),
            _ => (1, fit(p.x).min(fit(p.y))),
        },
        Instruction::Prim3D(p) => {
            let cyl = p.kind == ShapeKind3D::Cylinder;
            let z_ext = if cyl { p.h / 2 } else { p.r };
            match slot {
                0 | 1 => (p.r, CANVAS - p.r),
                2 => (z_ext, CANVAS - z_ext),
                3 if cyl => (1, fit(p.x).min(fit(p.y))),
                3 => (1, fit(p.x).min(fit(p.y)).min(fit(p.z))),
                _ => (1, 2 * fit(p.z) + 1),
            }
        }
        _ => unreachable!(),
    }
}

/// Cyclic coordinate descent over every primitive parameter. For each
/// parameter the moves `±δ` for `δ` in the schedule (clamped to the canvas)
/// are scored and the best strictly improving one is taken. Stops after
/// `max_sweeps` sweeps or a sweep without any accepted move.
pub fn refine(p: &Program, target: &Target, cfg: &RefineConfig) -> Result<Refined> {
    let report = validate(p);
    if !report.valid {
        return Err(CsgError::InvalidProgram(report.reason));
    }
    let objective = |ins: &[Instruction]| -> Result<f64> {
        let shape = execute(&p.with_instructions(ins.to_vec()))?;
        Ok(target.distance(&shape))
    };
    let mut ins = p.instructions().to_vec();
    let mut current = objective(&ins)?;
    let mut trace = vec![current];
    for _ in 0..cfg.max_sweeps {
        let mut moved = false;
        for i in 0..ins.len() {
            for slot in 0..slots(&ins[i]) {
                let value = get(&ins[i], slot);
                let (lo, hi) = bounds(&ins[i], slot);
                let mut tried = Vec::new();
                let mut best: Option<(f64, Instruction)> = None;
                for &d in &cfg.step_schedule {
                    for cand in [value + d, value - d] {
                        let cand = cand.clamp(lo, hi);
                        if cand == value || tried.contains(&cand) {
                            continue;
                        }
                        tried.push(cand);
                        let trial = set(&ins[i], slot, cand);
                        let saved = std::mem::replace(&mut ins[i], trial);
                        let score = objective(&ins)?;
                        ins[i] = saved;
                        if best.is_none_or(|(b, _)| score < b) {
                            best = Some((score, trial));
                        }
                    }
                }
                if let Some((score, trial)) = best {
                    if score < current {
                        ins[i] = trial;
                        current = score;
                        moved = true;
                    }
                }
            }
        }
        trace.push(current);
        if !moved {
            break;
        }
    }
    Ok(Refined { program: p.with_instructions(ins), trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::execute;
    use crate::metrics::chamfer;
    use crate::program::Mode;
    use crate::Grid2D;

    fn p2(text: &str) -> Program {
        Program::parse_relaxed(text, Mode::Two).unwrap()
    }

    fn target(text: &str, mode: Mode) -> Target {
        Target::new(&execute(&Program::parse_relaxed(text, mode).unwrap()).unwrap())
    }

    #[test]
    fn zero_sweeps_is_identity() {
        let p = p2("c(32,32,16) s(24,24,8) union $");
        let t = target("c(36,32,16)", Mode::Two);
        let r = refine(&p, &t, &RefineConfig { max_sweeps: 0, ..Default::default() }).unwrap();
        assert_eq!(r.program, p);
        assert_eq!(r.trace, vec![t.distance(&execute(&p).unwrap())]);
    }

    #[test]
    fn own_rendering_is_a_fixed_point() {
        let p = p2("c(32,32,16) t(24,40,12) subtract");
        let t = Target::new(&execute(&p).unwrap());
        let r = refine(&p, &t, &RefineConfig::default()).unwrap();
        assert_eq!(r.program, p);
        assert!(r.trace.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shifted_circle_is_recovered() {
        let tgt = execute(&p2("c(36,32,16)")).unwrap();
        let grid = |s: &crate::Shape| -> Grid2D {
            match s {
                crate::Shape::Flat(g) => *g,
                _ => unreachable!(),
            }
        };
        // line search over lx alone
        let line: Vec<(i32, f64)> = (16..=48)
            .map(|x| (x, chamfer(&grid(&tgt), &grid(&execute(&p2(&format!("c({x},32,16)"))).unwrap()))))
            .collect();
        let best = line.iter().fold(line[0], |b, &c| if c.1 < b.1 { c } else { b });
        assert_eq!(best, (36, 0.0));

        let r = refine(&p2("c(32,32,16)"), &Target::new(&tgt), &RefineConfig { max_sweeps: 2, ..Default::default() }).unwrap();
        assert_eq!(r.objective(), 0.0);
        assert_eq!(r.program, p2("c(36,32,16)"));
    }

    #[test]
    fn structure_is_preserved_and_trace_decreases() {
        let p = p2("c(32,32,16) s(24,24,12) union t(40,40,8) subtract $");
        let t = target("c(30,34,14) s(20,26,10) union t(44,38,10) subtract", Mode::Two);
        let r = refine(&p, &t, &RefineConfig::default()).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.objective() < r.trace[0]);
        assert!(r.program.to_tree().unwrap().same_structure(&p.to_tree().unwrap()));
        assert!(validate(&r.program).valid);
        for ins in r.program.primitives() {
            if let Instruction::Prim2D(q) = ins {
                assert!(q.r >= 1 && q.x - q.r >= 0 && q.x + q.r <= 64 && q.y - q.r >= 0 && q.y + q.r <= 64);
            }
        }
    }

    #[test]
    fn voxel_refinement() {
        let p = Program::parse("cy(32,32,32,8,16) sp(24,24,24,8) union", Mode::Three).unwrap();
        let t = target("cy(32,32,34,8,20) sp(24,24,24,8) union", Mode::Three);
        let r = refine(&p, &t, &RefineConfig { max_sweeps: 3, ..Default::default() }).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.objective() < r.trace[0]);
        for ins in r.program.primitives() {
            if let Instruction::Prim3D(q) = ins {
                let ze = if q.kind == ShapeKind3D::Cylinder { q.h / 2 } else { q.r };
                assert!(q.z - ze >= 0 && q.z + ze <= 64 && q.r >= 1);
            }
        }
    }

    #[test]
    fn invalid_program_is_rejected() {
        let t = target("c(32,32,16)", Mode::Two);
        assert!(matches!(refine(&p2("c(32,32,16) union"), &t, &RefineConfig::default()), Err(CsgError::InvalidProgram(_))));
    }
}
