//! Report rendering: a human-readable per-task table, machine-readable
//! JSON, and optional PR-curve SVGs.

use std::path::Path;

use super::evaluate::EvalResult;
use super::EvalError;

/// Tasks as rows, AP@0.5 plus counts, mean at the bottom.
pub fn render_table(result: &EvalResult) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<6} {:<18} {:>8} {:>6} {:>6} {:>6} {:>6}\n",
        "task", "phrase", "AP@0.5", "dets", "gts", "tp", "fp"
    ));
    for t in &result.per_task {
        let c = &t.result.counts;
        out.push_str(&format!(
            "{:<6} {:<18} {:>8.4} {:>6} {:>6} {:>6} {:>6}\n",
            t.task_id,
            t.phrase,
            t.result.ap,
            c.detections,
            c.ground_truths,
            c.true_positives,
            c.false_positives
        ));
    }
    out.push_str(&format!("{:<6} {:<18} {:>8.4}\n", "", "Mean", result.mean_ap));
    out
}

pub fn report_to_json(result: &EvalResult) -> Result<String, EvalError> {
    let mut text = serde_json::to_string_pretty(result)?;
    text.push('\n');
    Ok(text)
}

/// One SVG per task: the raw PR points as a polyline over a unit-square
/// plot.
pub fn write_pr_svg(result: &EvalResult, dir: &Path) -> Result<Vec<std::path::PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in &result.per_task {
        let width = 360.0;
        let height = 360.0;
        let margin = 40.0;
        let plot = width - 2.0 * margin;
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
             viewBox=\"0 0 {width} {height}\">\n"
        ));
        svg.push_str(&format!(
            "<rect x=\"{margin}\" y=\"{margin}\" width=\"{plot}\" height=\"{plot}\" \
             fill=\"none\" stroke=\"#888\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">task {} ({}): \
             AP@0.5 = {:.4}</text>\n",
            width / 2.0,
            margin / 2.0,
            t.task_id,
            t.phrase,
            t.result.ap
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">recall</text>\n",
            width / 2.0,
            height - 8.0
        ));
        if !t.result.pr.is_empty() {
            let points: Vec<String> = t
                .result
                .pr
                .iter()
                .map(|p| {
                    let x = margin + p.recall * plot;
                    let y = margin + (1.0 - p.precision) * plot;
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n",
                points.join(" ")
            ));
        }
        svg.push_str("</svg>\n");
        let path = dir.join(format!("pr_task{}.svg", t.task_id));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ap::{ApResult, CountSummary, PrPoint};
    use crate::eval::evaluate::TaskEval;

    fn sample() -> EvalResult {
        EvalResult {
            per_task: vec![TaskEval {
                task_id: 9,
                phrase: "open parcel".to_string(),
                result: ApResult {
                    ap: 0.75,
                    counts: CountSummary {
                        detections: 4,
                        ground_truths: 3,
                        true_positives: 3,
                        false_positives: 1,
                    },
                    pr: vec![
                        PrPoint {
                            recall: 0.33,
                            precision: 1.0,
                        },
                        PrPoint {
                            recall: 1.0,
                            precision: 0.75,
                        },
                    ],
                },
            }],
            mean_ap: 0.75,
        }
    }

    #[test]
    fn table_lists_tasks_and_mean() {
        let table = render_table(&sample());
        assert!(table.contains("open parcel"));
        assert!(table.contains("0.7500"));
        assert!(table.contains("Mean"));
    }

    #[test]
    fn json_round_trips() {
        let text = report_to_json(&sample()).unwrap();
        let back: EvalResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn svg_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let written = write_pr_svg(&sample(), dir.path()).unwrap();
        assert_eq!(written.len(), 1);
        let content = std::fs::read_to_string(&written[0]).unwrap();
        assert!(content.starts_with("<svg"));
        assert!(content.contains("polyline"));
    }
}
