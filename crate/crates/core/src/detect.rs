//! The parser as a primitive detector: detection scores from beam programs
//! and mean average precision with all-points interpolation.

use serde::{Deserialize, Serialize};

use crate::geometry::{bounding_box2d, Box2D};
use crate::program::{Instruction, Prim2D, Program, ShapeKind2D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub primitive: Prim2D,
    pub class: ShapeKind2D,
    #[serde(rename = "box")]
    pub bbox: Box2D,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub class: ShapeKind2D,
    #[serde(rename = "box")]
    pub bbox: Box2D,
}

/// Merges identical primitive instructions across the `k` beam programs;
/// each detection's score is the fraction of programs containing it.
/// Detections are listed in order of first appearance.
pub fn detections_from_beam<'a>(programs: impl IntoIterator<Item = &'a Program>) -> Vec<Detection> {
    let mut seen: Vec<(Prim2D, usize)> = Vec::new();
    let mut k = 0;
    for p in programs {
        k += 1;
        let mut in_this: Vec<Prim2D> = Vec::new();
        for ins in p.primitives() {
            if let Instruction::Prim2D(q) = ins {
                if in_this.contains(q) {
                    continue;
                }
                in_this.push(*q);
                match seen.iter_mut().find(|(s, _)| s == q) {
                    Some((_, n)) => *n += 1,
                    None => seen.push((*q, 1)),
                }
            }
        }
    }
    seen.into_iter()
        .map(|(q, n)| Detection { primitive: q, class: q.kind, bbox: bounding_box2d(&q), score: n as f64 / k as f64 })
        .collect()
}

/// Boxes of the true program's primitives.
pub fn ground_truth(p: &Program) -> Vec<GroundTruth> {
    p.primitives()
        .filter_map(|ins| match ins {
            Instruction::Prim2D(q) => Some(GroundTruth { class: q.kind, bbox: bounding_box2d(q) }),
            _ => None,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: ShapeKind2D,
    /// `None` when the class has no ground truth anywhere.
    pub ap: Option<f64>,
    pub ground_truths: usize,
    pub detections: usize,
    /// `(recall, precision)` after each ranked detection.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub classes: Vec<ClassAp>,
    /// Mean AP over classes that have ground truth.
    pub map: f64,
}

/// Area under the monotone precision envelope over the recall steps.
pub fn average_precision(curve: &[(f64, f64)]) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(r, _)) in curve.iter().enumerate() {
        let envelope = curve[i..].iter().map(|&(_, p)| p).fold(0.0, f64::max);
        ap += (r - prev_recall) * envelope;
        prev_recall = r;
    }
    ap
}

/// Per-class AP over a test set: detections ranked by descending score
/// (input order on ties) are greedily matched to the unmatched same-class
/// ground truth of their image with the highest box IoU, if that IoU is at
/// least `iou_thresh`.
pub fn evaluate_map(detections: &[Vec<Detection>], truths: &[Vec<GroundTruth>], iou_thresh: f64) -> MapReport {
    let mut classes = Vec::new();
    for class in ShapeKind2D::ALL {
        let n_gt: usize = truths.iter().map(|t| t.iter().filter(|g| g.class == class).count()).sum();
        let mut ranked: Vec<(usize, &Detection)> = detections
            .iter()
            .enumerate()
            .flat_map(|(img, ds)| ds.iter().filter(|d| d.class == class).map(move |d| (img, d)))
            .collect();
        ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
        let mut matched: Vec<Vec<bool>> = truths.iter().map(|t| vec![false; t.len()]).collect();
        let mut tp = 0usize;
        let mut curve = Vec::with_capacity(ranked.len());
        for (i, (img, d)) in ranked.iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            if let Some(gts) = truths.get(*img) {
                for (j, g) in gts.iter().enumerate() {
                    if g.class != class || matched[*img][j] {
                        continue;
                    }
                    let iou = d.bbox.iou(&g.bbox);
                    if iou >= iou_thresh && best.is_none_or(|(_, b)| iou > b) {
                        best = Some((j, iou));
                    }
                }
            }
            if let Some((j, _)) = best {
                matched[*img][j] = true;
                tp += 1;
            }
            if n_gt > 0 {
                curve.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
            }
        }
        let ap = (n_gt > 0).then(|| average_precision(&curve));
        classes.push(ClassAp { class, ap, ground_truths: n_gt, detections: ranked.len(), curve });
    }
    let aps: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    MapReport { classes, map }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::Mode;

    fn prog(t: &str) -> Program {
        Program::parse(t, Mode::Two).unwrap()
    }

    fn det(q: Prim2D, score: f64) -> Detection {
        Detection { primitive: q, class: q.kind, bbox: bounding_box2d(&q), score }
    }

    fn circle(x: i32, y: i32, r: i32) -> Prim2D {
        Prim2D { kind: ShapeKind2D::Circle, x, y, r }
    }

    #[test]
    fn beam_frequency_scores() {
        let mut beam = vec![prog("c(32,32,16) s(16,16,8) union"); 4];
        beam.extend(vec![prog("c(32,32,16) t(40,40,8) union"); 6]);
        let d = detections_from_beam(&beam);
        let score = |q: &str| d.iter().find(|x| Program::parse(q, Mode::Two).unwrap().primitives().next() == Some(&Instruction::Prim2D(x.primitive))).unwrap().score;
        assert_eq!(score("c(32,32,16)"), 1.0);
        assert_eq!(score("s(16,16,8)"), 0.4);
        assert_eq!(score("t(40,40,8)"), 0.6);
        let single = detections_from_beam(&[prog("c(32,32,16) s(16,16,8) union")]);
        assert!(single.iter().all(|x| x.score == 1.0));
        assert_eq!(single.len(), 2);
    }

    #[test]
    fn hand_computed_ap() {
        let g1 = circle(16, 16, 8);
        let g2 = circle(48, 48, 8);
        let truths = vec![vec![
            GroundTruth { class: ShapeKind2D::Circle, bbox: bounding_box2d(&g1) },
            GroundTruth { class: ShapeKind2D::Circle, bbox: bounding_box2d(&g2) },
        ]];
        let dets = vec![vec![det(g1, 0.9), det(circle(16, 48, 8), 0.8), det(g2, 0.7)]];
        let r = evaluate_map(&dets, &truths, 0.5);
        let c = &r.classes[0];
        let expect = [(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)];
        for (got, want) in c.curve.iter().zip(expect) {
            assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
        }
        assert!((c.ap.unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert!((c.ap.unwrap() - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_empty() {
        let p = prog("c(32,32,16) s(16,16,8) union t(48,48,8) union");
        let truths = vec![ground_truth(&p)];
        let perfect = vec![detections_from_beam([&p])];
        let r = evaluate_map(&perfect, &truths, 0.5);
        assert_eq!(r.map, 1.0);
        assert!(r.classes.iter().all(|c| c.ap == Some(1.0)));
        let none = evaluate_map(&[vec![]], &truths, 0.5);
        assert!(none.classes.iter().all(|c| c.ap == Some(0.0)));
        assert_eq!(none.map, 0.0);
    }

    #[test]
    fn each_truth_matches_once() {
        let g = circle(32, 32, 16);
        let truths = vec![vec![GroundTruth { class: ShapeKind2D::Circle, bbox: bounding_box2d(&g) }]];
        let dets = vec![vec![det(g, 0.9), det(g, 0.8)]];
        let r = evaluate_map(&dets, &truths, 0.5);
        assert_eq!(r.classes[0].curve, vec![(1.0, 1.0), (1.0, 0.5)]);
        assert_eq!(r.classes[0].ap, Some(1.0));
    }

    #[test]
    fn ranking_only_depends_on_order() {
        let g1 = circle(16, 16, 8);
        let g2 = circle(48, 48, 8);
        let truths = vec![vec![
            GroundTruth { class: ShapeKind2D::Circle, bbox: bounding_box2d(&g1) },
            GroundTruth { class: ShapeKind2D::Circle, bbox: bounding_box2d(&g2) },
        ]];
        let scores = [0.9, 0.8, 0.7];
        let qs = [g1, circle(16, 48, 8), g2];
        let make = |f: &dyn Fn(f64) -> f64| vec![qs.iter().zip(scores).map(|(q, s)| det(*q, f(s))).collect::<Vec<_>>()];
        let a = evaluate_map(&make(&|s| s), &truths, 0.5).map;
        let b = evaluate_map(&make(&|s| (s * 7.0).exp() / 1000.0), &truths, 0.5).map;
        assert_eq!(a, b);
    }
}
