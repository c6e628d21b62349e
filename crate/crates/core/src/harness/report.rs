//! Plain-text result tables, each with a machine-readable companion
//! file of `{method, dist, metric, value}` lines.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::datamodel::DistributionTag;
use crate::error::{Error, Result};

use super::experiment::{EvalReport, METHODS};

/// Styles accepted by [`render_report`], in the order `run` emits them.
pub const REPORT_STYLES: [&str; 4] = ["table2", "table3", "table4", "table5"];

/// Cell marker for a grid entry that is absent by construction.
const ABSENT: &str = "---";

/// One metric column: display name and machine-readable key.
struct Column {
    display: &'static str,
    key: &'static str,
}

struct Table {
    title: &'static str,
    columns: Vec<Column>,
    /// (method, distribution, one cell per column).
    rows: Vec<(String, String, Vec<Option<f64>>)>,
    /// Indexes of columns that get best/second-best markers.
    marked: Vec<usize>,
    /// Lower values win in the marked columns.
    lower_is_better: bool,
}

/// Per-row marker for one column: `*` on the best value within each
/// distribution, `+` on the second-best distinct value. Ties share a
/// marker.
fn column_markers(
    rows: &[(String, String, Vec<Option<f64>>)],
    col: usize,
    lower_is_better: bool,
) -> Vec<Option<char>> {
    let mut markers = vec![None; rows.len()];
    let dists: Vec<&str> = {
        let mut seen = Vec::new();
        for (_, dist, _) in rows {
            if !seen.contains(&dist.as_str()) {
                seen.push(dist.as_str());
            }
        }
        seen
    };
    for dist in dists {
        let mut present: Vec<(usize, f64)> = rows
            .iter()
            .enumerate()
            .filter(|(_, (_, d, _))| d == dist)
            .filter_map(|(i, (_, _, cells))| cells[col].map(|v| (i, v)))
            .collect();
        if present.is_empty() {
            continue;
        }
        present.sort_by(|a, b| {
            if lower_is_better {
                a.1.total_cmp(&b.1)
            } else {
                b.1.total_cmp(&a.1)
            }
        });
        let best = present[0].1;
        let second = present.iter().map(|&(_, v)| v).find(|&v| v != best);
        for &(i, v) in &present {
            if v == best {
                markers[i] = Some('*');
            } else if Some(v) == second {
                markers[i] = Some('+');
            }
        }
    }
    markers
}

fn render_text(table: &Table) -> String {
    let mut marker_grid: Vec<Vec<Option<char>>> = vec![vec![None; table.columns.len()]; table.rows.len()];
    for &col in &table.marked {
        for (i, m) in column_markers(&table.rows, col, table.lower_is_better)
            .into_iter()
            .enumerate()
        {
            marker_grid[i][col] = m;
        }
    }

    let mut grid: Vec<Vec<String>> = Vec::with_capacity(table.rows.len() + 1);
    let mut header = vec!["method".to_string(), "distribution".to_string()];
    header.extend(table.columns.iter().map(|c| c.display.to_string()));
    grid.push(header);
    let mut prev_method = "";
    for (i, (method, dist, cells)) in table.rows.iter().enumerate() {
        let method_cell = if method == prev_method {
            String::new()
        } else {
            method.clone()
        };
        prev_method = method;
        let mut row = vec![method_cell, dist.clone()];
        for (col, cell) in cells.iter().enumerate() {
            row.push(match cell {
                Some(v) => match marker_grid[i][col] {
                    Some(m) => format!("{v:.4}{m}"),
                    None => format!("{v:.4}"),
                },
                None => ABSENT.to_string(),
            });
        }
        grid.push(row);
    }

    let cols = grid[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| grid.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::from(table.title);
    out.push('\n');
    out.push('\n');
    for row in &grid {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            line.push_str(cell);
            if c + 1 < cols {
                line.extend(std::iter::repeat_n(' ', widths[c] - cell.len() + 2));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct MachineLine<'a> {
    method: &'a str,
    dist: &'a str,
    metric: &'a str,
    value: f64,
}

fn write_machine_lines(table: &Table, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (method, dist, cells) in &table.rows {
        for (col, cell) in cells.iter().enumerate() {
            if let Some(value) = cell {
                let line = MachineLine {
                    method,
                    dist,
                    metric: table.columns[col].key,
                    value: *value,
                };
                let s = serde_json::to_string(&line).map_err(|e| Error::ReportFile {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
                text.push_str(&s);
                text.push('\n');
            }
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A classification cell, absent only where the grid is absent by
/// construction (the few-shot method on in-domain data).
fn grid_cell(
    report: &EvalReport,
    method: &str,
    tag: &DistributionTag,
    pick: impl Fn(&crate::metrics::MetricBlock) -> f64,
) -> Result<Option<f64>> {
    if method == "fsl" && tag.is_in_domain() {
        return Ok(None);
    }
    report.block(method, tag.as_str()).map(|b| Some(pick(b)))
}

fn performance_table(report: &EvalReport) -> Result<Table> {
    let mut rows = Vec::new();
    for method in METHODS {
        for tag in DistributionTag::eval_tags() {
            let cells = vec![
                grid_cell(report, method, &tag, |b| b.accuracy)?,
                grid_cell(report, method, &tag, |b| b.auroc)?,
                grid_cell(report, method, &tag, |b| b.aupr)?,
            ];
            rows.push((method.to_string(), tag.as_str().to_string(), cells));
        }
    }
    Ok(Table {
        title: "predictive performance under dataset shift \
                (* best, + second best per distribution and metric)",
        columns: vec![
            Column { display: "acc", key: "accuracy" },
            Column { display: "auroc", key: "auroc" },
            Column { display: "aupr", key: "aupr" },
        ],
        marked: vec![0, 1, 2],
        rows,
        lower_is_better: false,
    })
}

fn entropy_table(
    report: &EvalReport,
    tags: &[DistributionTag],
    title: &'static str,
) -> Result<Table> {
    let mut rows = Vec::new();
    for method in METHODS {
        for tag in tags {
            let cells = vec![
                grid_cell(report, method, tag, |b| b.mean_entropy)?,
                grid_cell(report, method, tag, |b| b.auroc)?,
                grid_cell(report, method, tag, |b| b.aupr)?,
            ];
            rows.push((method.to_string(), tag.as_str().to_string(), cells));
        }
    }
    Ok(Table {
        title,
        columns: vec![
            Column { display: "entropy", key: "entropy" },
            Column { display: "auroc", key: "auroc" },
            Column { display: "aupr", key: "aupr" },
        ],
        marked: vec![0],
        rows,
        lower_is_better: true,
    })
}

fn detection_table(report: &EvalReport) -> Result<Table> {
    let tags = [DistributionTag::Ext5ad, DistributionTag::OodScc];
    let mut rows = Vec::new();
    for method in METHODS {
        for tag in &tags {
            let block = report.detection_entry(method, tag.as_str())?;
            let cells = vec![Some(block.auroc), Some(block.aupr), Some(block.fpr)];
            rows.push((method.to_string(), tag.as_str().to_string(), cells));
        }
    }
    Ok(Table {
        title: "shift detection from predictive uncertainty \
                (* lowest, + second lowest FPR per distribution)",
        columns: vec![
            Column { display: "auroc", key: "detect_auroc" },
            Column { display: "aupr", key: "detect_aupr" },
            Column { display: "fpr@95tpr", key: "detect_fpr95" },
        ],
        marked: vec![2],
        rows,
        lower_is_better: true,
    })
}

/// Render one result table to `path` in aligned plain text and write
/// the same numbers as JSON lines next to it (`.jsonl` extension).
///
/// Styles: `table2` is classification quality over all six evaluation
/// distributions; `table3` and `table4` are predictive entropy under
/// in-distribution and out-of-distribution shift; `table5` is shift
/// detection.
pub fn render_report(report: &EvalReport, style: &str, path: &Path) -> Result<()> {
    if report.blocks.is_empty() {
        return Err(Error::EmptyMetricInput);
    }
    let table = match style {
        "table2" => performance_table(report)?,
        "table3" => entropy_table(
            report,
            &[
                DistributionTag::InTest,
                DistributionTag::ExtProt,
                DistributionTag::Ext5ad,
            ],
            "predictive entropy under in-distribution shift \
             (* lowest, + second lowest entropy per distribution)",
        )?,
        "table4" => entropy_table(
            report,
            &[
                DistributionTag::OodScc,
                DistributionTag::OodCad,
                DistributionTag::OodCxr,
            ],
            "predictive entropy under out-of-distribution shift \
             (* lowest, + second lowest entropy per distribution)",
        )?,
        "table5" => detection_table(report)?,
        other => return Err(Error::UnknownReportStyle(other.to_string())),
    };
    fs::write(path, render_text(&table)).map_err(|e| Error::io(path, e))?;
    write_machine_lines(&table, &path.with_extension("jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::{DetectionBlock, RunMeta};
    use crate::metrics::MetricBlock;
    use std::collections::BTreeMap;

    fn block(accuracy: f64, entropy: f64) -> MetricBlock {
        MetricBlock {
            accuracy,
            auroc: accuracy,
            aupr: accuracy,
            fpr: 1.0 - accuracy,
            mean_entropy: entropy,
            n: 100,
        }
    }

    fn fake_report() -> EvalReport {
        let mut blocks = BTreeMap::new();
        for (i, method) in METHODS.iter().enumerate() {
            let mut tags = BTreeMap::new();
            for tag in DistributionTag::eval_tags() {
                if *method == "fsl" && tag.is_in_domain() {
                    continue;
                }
                let acc = 0.9 - 0.1 * i as f64;
                tags.insert(tag.as_str().to_string(), block(acc, 0.1 + 0.2 * i as f64));
            }
            blocks.insert(method.to_string(), tags);
        }
        let mut detection = BTreeMap::new();
        for (i, method) in METHODS.iter().enumerate() {
            let mut tags = BTreeMap::new();
            for tag in [DistributionTag::Ext5ad, DistributionTag::OodScc] {
                tags.insert(
                    tag.as_str().to_string(),
                    DetectionBlock {
                        auroc: 0.9,
                        aupr: 0.8,
                        fpr: 0.1 * (i + 1) as f64,
                        n_id: 100,
                        n_ood: 50,
                    },
                );
            }
            detection.insert(method.to_string(), tags);
        }
        EvalReport {
            blocks,
            detection,
            meta: RunMeta {
                config_hash: "0".repeat(64),
                master_seed: 42,
            },
        }
    }

    #[test]
    fn performance_table_marks_best_and_absent_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table2.txt");
        render_report(&fake_report(), "table2", &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();

        assert!(text.contains("0.9000*"), "baseline should win every column:\n{text}");
        assert!(text.contains("0.8000+"), "second best should be flagged:\n{text}");
        assert!(text.contains("---"), "fsl in-domain cells should be absent:\n{text}");

        let lines = fs::read_to_string(dir.path().join("table2.jsonl")).unwrap();
        let parsed: Vec<serde_json::Value> = lines
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        // 3 methods x 6 distributions + fsl x 5, times 3 metrics.
        assert_eq!(parsed.len(), (3 * 6 + 5) * 3);
        assert!(parsed.iter().all(|v| v["value"].is_f64()));
    }

    #[test]
    fn entropy_tables_mark_lowest_entropy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table3.txt");
        render_report(&fake_report(), "table3", &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // Baseline has the lowest entropy (0.1) in the fake report.
        assert!(text.contains("0.1000*"), "{text}");
        assert!(text.contains("0.3000+"), "{text}");

        render_report(&fake_report(), "table4", &dir.path().join("table4.txt")).unwrap();
        let text4 = fs::read_to_string(dir.path().join("table4.txt")).unwrap();
        assert!(text4.contains("ood_cxr"));
        assert!(!text4.contains("in_test"));
    }

    #[test]
    fn detection_table_marks_lowest_fpr() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table5.txt");
        render_report(&fake_report(), "table5", &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("0.1000*"), "{text}");
        assert!(text.contains("0.2000+"), "{text}");
        assert!(text.contains("fpr@95tpr"));
    }

    #[test]
    fn unknown_style_and_empty_report_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        match render_report(&fake_report(), "table9", &path) {
            Err(Error::UnknownReportStyle(s)) => assert_eq!(s, "table9"),
            other => panic!("expected UnknownReportStyle, got {other:?}"),
        }

        let empty = EvalReport {
            blocks: BTreeMap::new(),
            detection: BTreeMap::new(),
            meta: RunMeta {
                config_hash: String::new(),
                master_seed: 0,
            },
        };
        match render_report(&empty, "table2", &path) {
            Err(Error::EmptyMetricInput) => {}
            other => panic!("expected EmptyMetricInput, got {other:?}"),
        }
    }

    #[test]
    fn missing_nonstructural_entry_is_an_error() {
        let mut report = fake_report();
        report
            .blocks
            .get_mut("ensemble")
            .unwrap()
            .remove("ood_scc");
        let dir = tempfile::tempdir().unwrap();
        match render_report(&report, "table2", &dir.path().join("t.txt")) {
            Err(Error::MissingReportEntry { method, dist }) => {
                assert_eq!(method, "ensemble");
                assert_eq!(dist, "ood_scc");
            }
            other => panic!("expected MissingReportEntry, got {other:?}"),
        }
    }
}
