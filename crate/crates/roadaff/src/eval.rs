//! Metrics for judging complete affordance predictions against ground
//! truth: forced-choice class accuracy with its confusion matrix, per-class
//! presence precision/recall/accuracy, direction- and image-level accuracy,
//! attention offsets on the prediction grid, and distance L1 error.

use serde::{Deserialize, Serialize};

use crate::annotation::CompleteAffordance;
use crate::error::{Error, Result};
use crate::hdphmm::{Action, CLASSES};

/// Binary presence scores for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

/// Everything `evaluate` measures over an aligned prediction/truth set.
///
/// Direction-level accuracy is recall over ground-truth-present
/// (frame, class) pairs: the fraction of drivable directions that were
/// predicted drivable. True negatives do not enter it. Image-level accuracy
/// is the fraction of frames whose predicted presence set matches the truth
/// set exactly. Both definitions are deliberately spelled out here because
/// reports are compared across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Number of aligned frame pairs evaluated.
    pub frames: usize,
    /// Rows are true classes, columns predictions, in [`CLASSES`] order.
    /// Row k sums to `top1_support[k]`.
    pub top1_confusion: [[usize; 3]; 3],
    /// Frames whose forced-choice true class is k. Frames with no present
    /// class have no forced choice and are not tallied.
    pub top1_support: [usize; 3],
    pub top1_accuracy: f64,
    pub per_class: [ClassScores; 3],
    /// Ground-truth presence count per class.
    pub presence_support: [usize; 3],
    pub direction_accuracy: f64,
    pub image_accuracy: f64,
    /// Mean (|du|, |dv|) in grid cells over pairs where both sides mark the
    /// class present and carry a center.
    pub attention_offset: (f64, f64),
    /// Mean |d_pred - d_true| in meters over pairs where both sides mark the
    /// class present and carry a distance.
    pub distance_l1: f64,
    pub distance_l1_per_class: [f64; 3],
}

/// Horizontal and vertical grid-cell offsets between two pixel centers.
/// Cells are `grid`-sized with edges at multiples of `grid`, so two centers
/// a few pixels apart can still land one cell apart.
pub fn attention_offset(pred: (f64, f64), truth: (f64, f64), grid: usize) -> (usize, usize) {
    let cell = |x: f64| (x / grid as f64).floor() as i64;
    (
        cell(pred.0).abs_diff(cell(truth.0)) as usize,
        cell(pred.1).abs_diff(cell(truth.1)) as usize,
    )
}

/// The single class a frame commits to: the present class with the shortest
/// remaining distance. Ties go to turning classes, since an equally close
/// turn is the more specific commitment; `None` when nothing is present.
pub fn forced_choice_class(aff: &CompleteAffordance) -> Option<Action> {
    let mut best: Option<(Action, f64)> = None;
    for action in [Action::Left, Action::Right, Action::Straight] {
        let class = &aff.classes[action.index()];
        if !class.present {
            continue;
        }
        let d = class.distance.unwrap_or(f64::INFINITY);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((action, d));
        }
    }
    best.map(|(a, _)| a)
}

/// The class a predictor commits to: judged by the same nearest-present
/// rule as the truth side, so a perfect predictor scores a perfect
/// confusion matrix. When nothing clears the presence threshold the
/// forced choice falls back to the top-scoring class.
pub fn predicted_class(aff: &CompleteAffordance) -> Action {
    forced_choice_class(aff).unwrap_or_else(|| {
        let mut best = 0;
        for k in 1..CLASSES.len() {
            if aff.classes[k].score > aff.classes[best].score {
                best = k;
            }
        }
        Action::from_index(best).expect("class index in range")
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    // A denominator of zero means no opportunity for error; score it clean.
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Score `predictions` against `truth`. The two slices must list the same
/// frames in the same order; `grid` is the cell size for attention offsets.
pub fn evaluate(
    predictions: &[CompleteAffordance],
    truth: &[CompleteAffordance],
    grid: usize,
) -> Result<MetricsReport> {
    if grid == 0 {
        return Err(Error::InvalidConfig("grid size must be positive".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::FrameMismatch(format!(
            "{} predictions vs {} truth frames",
            predictions.len(),
            truth.len()
        )));
    }

    let k_n = CLASSES.len();
    let mut tp = [0usize; 3];
    let mut fp = [0usize; 3];
    let mut fn_ = [0usize; 3];
    let mut tn = [0usize; 3];
    let mut confusion = [[0usize; 3]; 3];
    let mut exact_images = 0usize;
    let mut att_sum = (0.0f64, 0.0f64);
    let mut att_pairs = 0usize;
    let mut dist_sum = 0.0f64;
    let mut dist_pairs = 0usize;
    let mut dist_sum_class = [0.0f64; 3];
    let mut dist_pairs_class = [0usize; 3];

    for (i, (p, t)) in predictions.iter().zip(truth).enumerate() {
        if p.frame_id != t.frame_id {
            return Err(Error::FrameMismatch(format!(
                "index {i}: prediction {} vs truth {}",
                p.frame_id, t.frame_id
            )));
        }
        let mut all_match = true;
        for k in 0..k_n {
            let (pp, tt) = (&p.classes[k], &t.classes[k]);
            match (pp.present, tt.present) {
                (true, true) => tp[k] += 1,
                (true, false) => fp[k] += 1,
                (false, true) => fn_[k] += 1,
                (false, false) => tn[k] += 1,
            }
            if pp.present != tt.present {
                all_match = false;
            }
            if pp.present && tt.present {
                if let (Some(pc), Some(tc)) = (pp.attention_center, tt.attention_center) {
                    let (du, dv) = attention_offset(pc, tc, grid);
                    att_sum.0 += du as f64;
                    att_sum.1 += dv as f64;
                    att_pairs += 1;
                }
                if let (Some(pd), Some(td)) = (pp.distance, tt.distance) {
                    let err = (pd - td).abs();
                    dist_sum += err;
                    dist_pairs += 1;
                    dist_sum_class[k] += err;
                    dist_pairs_class[k] += 1;
                }
            }
        }
        if all_match {
            exact_images += 1;
        }
        if let Some(true_class) = forced_choice_class(t) {
            confusion[true_class.index()][predicted_class(p).index()] += 1;
        }
    }

    let top1_support = [0, 1, 2].map(|r: usize| confusion[r].iter().sum::<usize>());
    let correct: usize = (0..k_n).map(|k| confusion[k][k]).sum();
    let presence_support = [0, 1, 2].map(|k: usize| tp[k] + fn_[k]);
    let per_class = [0, 1, 2].map(|k: usize| ClassScores {
        precision: ratio(tp[k], tp[k] + fp[k]),
        recall: ratio(tp[k], tp[k] + fn_[k]),
        accuracy: ratio(tp[k] + tn[k], predictions.len()),
    });

    Ok(MetricsReport {
        frames: predictions.len(),
        top1_confusion: confusion,
        top1_support,
        top1_accuracy: ratio(correct, top1_support.iter().sum()),
        per_class,
        presence_support,
        direction_accuracy: ratio(tp.iter().sum(), presence_support.iter().sum()),
        image_accuracy: ratio(exact_images, predictions.len()),
        attention_offset: (mean(att_sum.0, att_pairs), mean(att_sum.1, att_pairs)),
        distance_l1: mean(dist_sum, dist_pairs),
        distance_l1_per_class: [0, 1, 2]
            .map(|k: usize| mean(dist_sum_class[k], dist_pairs_class[k])),
    })
}

/// Plain-text rendering of a report, one metric family per block.
pub fn render_report(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("frames evaluated: {}\n\n", report.frames));
    out.push_str("forced-choice confusion (rows: truth, cols: predicted):\n          ");
    for a in CLASSES {
        out.push_str(&format!("{a:>10}"));
    }
    out.push('\n');
    for (r, a) in CLASSES.iter().enumerate() {
        out.push_str(&format!("{a:>10}"));
        for c in 0..CLASSES.len() {
            out.push_str(&format!("{:>10}", report.top1_confusion[r][c]));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "forced-choice accuracy: {:.4}\n\n",
        report.top1_accuracy
    ));
    out.push_str("per-class presence (precision / recall / accuracy / support):\n");
    for (k, a) in CLASSES.iter().enumerate() {
        let s = &report.per_class[k];
        out.push_str(&format!(
            "{a:>10}  {:.4} / {:.4} / {:.4} / {}\n",
            s.precision, s.recall, s.accuracy, report.presence_support[k]
        ));
    }
    out.push_str(&format!(
        "\ndirection accuracy (recall over ground-truth-present pairs): {:.4}\n",
        report.direction_accuracy
    ));
    out.push_str(&format!(
        "image accuracy (exact presence-set match): {:.4}\n",
        report.image_accuracy
    ));
    out.push_str(&format!(
        "attention offset (mean |du|, |dv| in grid cells): {:.4}, {:.4}\n",
        report.attention_offset.0, report.attention_offset.1
    ));
    out.push_str(&format!("distance L1 (m): {:.4}\n", report.distance_l1));
    for (k, a) in CLASSES.iter().enumerate() {
        out.push_str(&format!(
            "{a:>10} distance L1 (m): {:.4}\n",
            report.distance_l1_per_class[k]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::ClassPrediction;

    fn frame(
        id: &str,
        present: [bool; 3],
        scores: [f64; 3],
        att: [Option<(f64, f64)>; 3],
        dist: [Option<f64>; 3],
    ) -> CompleteAffordance {
        let classes = [0, 1, 2].map(|k: usize| ClassPrediction {
            present: present[k],
            score: scores[k],
            attention_center: att[k],
            distance: dist[k],
        });
        CompleteAffordance {
            frame_id: id.into(),
            classes,
        }
    }

    fn straight_truth(id: &str) -> CompleteAffordance {
        frame(
            id,
            [false, true, false],
            [0.0, 1.0, 0.0],
            [None, Some((320.0, 160.0)), None],
            [None, Some(12.0), None],
        )
    }

    fn right_truth(id: &str) -> CompleteAffordance {
        frame(
            id,
            [false, true, true],
            [0.0, 1.0, 1.0],
            [None, Some((320.0, 160.0)), Some((480.0, 176.0))],
            [None, Some(12.0), Some(5.0)],
        )
    }

    /// Ten frames, grid 16. Truth: six straight-only, four straight+right
    /// (right at 5 m, straight at 12 m, so the forced choice is right).
    /// Predictions nail everything except two right misses, plus a few
    /// penciled-in center and distance errors:
    ///   f0 straight center one cell right, f1 straight center two cells up,
    ///   f2/f3 straight distance off by 0.5 m,
    ///   f6 right center one cell left and distance off 0.25 m,
    ///   f7 right distance off 0.5 m.
    fn fixture() -> (Vec<CompleteAffordance>, Vec<CompleteAffordance>) {
        let truth: Vec<CompleteAffordance> = (0..6)
            .map(|i| straight_truth(&format!("f{i}")))
            .chain((6..10).map(|i| right_truth(&format!("f{i}"))))
            .collect();

        let straight_pred = |id: &str, att: (f64, f64), d: f64| {
            frame(
                id,
                [false, true, false],
                [0.1, 0.9, 0.2],
                [None, Some(att), None],
                [None, Some(d), None],
            )
        };
        let predictions = vec![
            straight_pred("f0", (336.0, 160.0), 12.0),
            straight_pred("f1", (320.0, 128.0), 12.0),
            straight_pred("f2", (320.0, 160.0), 11.5),
            straight_pred("f3", (320.0, 160.0), 11.5),
            straight_pred("f4", (320.0, 160.0), 12.0),
            straight_pred("f5", (320.0, 160.0), 12.0),
            frame(
                "f6",
                [false, true, true],
                [0.05, 0.92, 0.95],
                [None, Some((320.0, 160.0)), Some((464.0, 176.0))],
                [None, Some(12.0), Some(5.25)],
            ),
            frame(
                "f7",
                [false, true, true],
                [0.05, 0.91, 0.93],
                [None, Some((320.0, 160.0)), Some((480.0, 176.0))],
                [None, Some(12.0), Some(4.5)],
            ),
            // The two right misses: straight-only output, straight top score.
            straight_pred("f8", (320.0, 160.0), 12.0),
            straight_pred("f9", (320.0, 160.0), 12.0),
        ];
        (predictions, truth)
    }

    #[test]
    fn identity_predictions_score_perfectly() {
        let (_, truth) = fixture();
        let report = evaluate(&truth, &truth, 16).unwrap();
        assert_eq!(report.frames, 10);
        assert_eq!(report.top1_accuracy, 1.0);
        assert_eq!(report.direction_accuracy, 1.0);
        assert_eq!(report.image_accuracy, 1.0);
        assert_eq!(report.attention_offset, (0.0, 0.0));
        assert_eq!(report.distance_l1, 0.0);
        assert_eq!(report.distance_l1_per_class, [0.0; 3]);
        for s in &report.per_class {
            assert_eq!((s.precision, s.recall, s.accuracy), (1.0, 1.0, 1.0));
        }
        // No left instances anywhere: its row and column stay empty.
        assert_eq!(report.top1_confusion[0], [0, 0, 0]);
        assert_eq!(report.top1_support, [0, 6, 4]);
    }

    #[test]
    fn ten_frame_fixture_matches_hand_computed_metrics() {
        let (predictions, truth) = fixture();
        let report = evaluate(&predictions, &truth, 16).unwrap();

        assert_eq!(report.frames, 10);
        // Truth classes: 6 straight, 4 right. Predictions send the two
        // misses to straight.
        assert_eq!(report.top1_confusion, [[0, 0, 0], [0, 6, 0], [0, 2, 2]]);
        assert_eq!(report.top1_support, [0, 6, 4]);
        assert_eq!(report.top1_accuracy, 8.0 / 10.0);

        // Presence counts: straight 10/10 predicted, right 2 of 4.
        assert_eq!(report.presence_support, [0, 10, 4]);
        let [left, straight, right] = &report.per_class;
        assert_eq!(
            (left.precision, left.recall, left.accuracy),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(
            (straight.precision, straight.recall, straight.accuracy),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(right.precision, 1.0);
        assert_eq!(right.recall, 2.0 / 4.0);
        assert_eq!(right.accuracy, 8.0 / 10.0);

        // 12 of the 14 ground-truth-present pairs were predicted present.
        assert_eq!(report.direction_accuracy, 12.0 / 14.0);
        assert_eq!(report.image_accuracy, 8.0 / 10.0);

        // 12 matched pairs: cell offsets are one |du| at f0, one at f6, and
        // two |dv| at f1.
        assert_eq!(report.attention_offset, (2.0 / 12.0, 2.0 / 12.0));

        // Distance errors: 0.5 + 0.5 on straight, 0.25 + 0.5 on right.
        assert_eq!(report.distance_l1, 1.75 / 12.0);
        assert_eq!(report.distance_l1_per_class[0], 0.0);
        assert_eq!(report.distance_l1_per_class[1], 1.0 / 10.0);
        assert_eq!(report.distance_l1_per_class[2], 0.75 / 2.0);

        // Confusion totals conserve the frames that had a forced choice.
        let total: usize = report.top1_support.iter().sum();
        assert_eq!(total, 10);
    }

    #[test]
    fn always_straight_predictor_scores_the_class_mix() {
        // 60/20/20 single-class mix; the predictor only ever says straight.
        let mut truth = Vec::new();
        for i in 0..6 {
            truth.push(straight_truth(&format!("m{i}")));
        }
        for i in 6..8 {
            truth.push(frame(
                &format!("m{i}"),
                [true, false, false],
                [1.0, 0.0, 0.0],
                [Some((100.0, 150.0)), None, None],
                [Some(4.0), None, None],
            ));
        }
        for i in 8..10 {
            truth.push(frame(
                &format!("m{i}"),
                [false, false, true],
                [0.0, 0.0, 1.0],
                [None, None, Some((500.0, 150.0))],
                [None, None, Some(4.0)],
            ));
        }
        let predictions: Vec<CompleteAffordance> = truth
            .iter()
            .map(|t| {
                frame(
                    &t.frame_id,
                    [false, true, false],
                    [0.1, 0.9, 0.1],
                    [None, Some((320.0, 160.0)), None],
                    [None, Some(10.0), None],
                )
            })
            .collect();
        let report = evaluate(&predictions, &truth, 16).unwrap();
        assert_eq!(report.direction_accuracy, 0.6);
        assert_eq!(report.image_accuracy, 0.6);
        assert_eq!(report.top1_accuracy, 0.6);
    }

    #[test]
    fn offsets_follow_grid_cell_arithmetic() {
        assert_eq!(attention_offset((100.0, 50.0), (100.0, 50.0), 16), (0, 0));
        // Adjacent cells horizontally: 15 and 16 straddle a cell edge.
        assert_eq!(attention_offset((16.0, 8.0), (15.0, 8.0), 16), (1, 0));
        // A (40, 10) pixel offset lands differently by where the cells cut.
        assert_eq!(attention_offset((40.0, 10.0), (0.0, 0.0), 16), (2, 0));
        assert_eq!(attention_offset((52.0, 22.0), (12.0, 12.0), 16), (3, 1));
    }

    #[test]
    fn forced_choice_prefers_the_nearest_class_and_turns_on_ties() {
        let (_, truth) = fixture();
        assert_eq!(forced_choice_class(&truth[0]), Some(Action::Straight));
        assert_eq!(forced_choice_class(&truth[6]), Some(Action::Right));
        let tie = frame(
            "t",
            [false, true, true],
            [0.0, 1.0, 1.0],
            [None, Some((320.0, 160.0)), Some((480.0, 176.0))],
            [None, Some(5.0), Some(5.0)],
        );
        assert_eq!(forced_choice_class(&tie), Some(Action::Right));
        let empty = frame("e", [false; 3], [0.0; 3], [None; 3], [None; 3]);
        assert_eq!(forced_choice_class(&empty), None);
    }

    #[test]
    fn frame_order_permutation_leaves_the_report_unchanged() {
        let (mut predictions, mut truth) = fixture();
        let report = evaluate(&predictions, &truth, 16).unwrap();
        predictions.reverse();
        truth.reverse();
        let reversed = evaluate(&predictions, &truth, 16).unwrap();
        assert_eq!(report, reversed);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let (predictions, truth) = fixture();
        let err = evaluate(&predictions[..9], &truth, 16).unwrap_err();
        assert!(matches!(err, Error::FrameMismatch(_)));

        let mut swapped = predictions.clone();
        swapped.swap(0, 1);
        let err = evaluate(&swapped, &truth, 16).unwrap_err();
        assert!(matches!(err, Error::FrameMismatch(_)));
    }

    #[test]
    fn report_renders_every_metric_family() {
        let (predictions, truth) = fixture();
        let report = evaluate(&predictions, &truth, 16).unwrap();
        let text = render_report(&report);
        assert!(text.contains("frames evaluated: 10"));
        assert!(text.contains("direction accuracy"));
        assert!(text.contains("image accuracy"));
        assert!(text.contains("distance L1"));
        assert!(text.contains("straight"));
    }
}
