//! Report emission: accuracy bars per strategy and alpha, accuracy-vs-step
//! curves with the step-0 baseline, synthetic-data efficacy bars, a timing
//! table, and the synthetic-data statistics table. Charts are SVG; tables
//! come out as CSV plus an aligned text rendering.

use std::path::Path;

use fligan_core::{AugmentationHistory, EfficacyReport, MetricsRecord};
use plotters::prelude::*;

use crate::config::ExperimentConfig;
use crate::runner::{compute_averages, AverageRow, MatrixOutcome, RunPaths};
use crate::{CliError, Result};

const BAR_COLORS: &[RGBColor] = &[
    RGBColor(68, 114, 196),
    RGBColor(237, 125, 49),
    RGBColor(112, 173, 71),
    RGBColor(158, 72, 14),
    RGBColor(99, 99, 99),
];

fn chart_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Report(format!("chart rendering failed: {e}"))
}

/// Grouped bars: one cluster per alpha, one bar per strategy, mean accuracy
/// over seeds.
pub fn accuracy_chart(path: &Path, dataset: &str, averages: &[AverageRow]) -> Result<()> {
    let mut alphas: Vec<f64> = averages.iter().map(|a| a.alpha).collect();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    alphas.dedup();
    let mut strategies: Vec<String> = Vec::new();
    for a in averages {
        if !strategies.contains(&a.strategy) {
            strategies.push(a.strategy.clone());
        }
    }
    if alphas.is_empty() || strategies.is_empty() {
        return Err(CliError::Report("no averages to chart".into()));
    }

    let root = SVGBackend::new(path, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("Mean classification accuracy — {dataset}"),
            ("sans-serif", 22),
        )
        .margin(12)
        .x_label_area_size(44)
        .y_label_area_size(52)
        .build_cartesian_2d(0.0..alphas.len() as f64, 0.0..1.0)
        .map_err(chart_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc("accuracy")
        .x_desc("Dirichlet alpha")
        .x_labels(alphas.len())
        .x_label_formatter(&|x| {
            let idx = x.floor() as usize;
            if (x - idx as f64 - 0.5).abs() < 0.26 && idx < alphas.len() {
                format!("{}", alphas[idx])
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(chart_err)?;

    let group_width = 0.8;
    let bar_width = group_width / strategies.len() as f64;
    for (si, strategy) in strategies.iter().enumerate() {
        let color = BAR_COLORS[si % BAR_COLORS.len()];
        let bars: Vec<Rectangle<(f64, f64)>> = alphas
            .iter()
            .enumerate()
            .filter_map(|(ai, &alpha)| {
                averages
                    .iter()
                    .find(|a| a.strategy == *strategy && a.alpha == alpha)
                    .map(|a| {
                        let x0 = ai as f64 + 0.1 + si as f64 * bar_width;
                        Rectangle::new([(x0, 0.0), (x0 + bar_width * 0.92, a.mean_accuracy)], color.filled())
                    })
            })
            .collect();
        chart
            .draw_series(bars)
            .map_err(chart_err)?
            .label(strategy.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 6), (x + 12, y + 6)], color.filled()));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(chart_err)?;
    root.present().map_err(chart_err)?;
    Ok(())
}

/// Accuracy versus augmentation step, one line per recorded history, with
/// step 0 as the no-synthetic baseline.
pub fn step_chart(
    path: &Path,
    dataset: &str,
    histories: &[(String, AugmentationHistory)],
) -> Result<bool> {
    if histories.is_empty() {
        return Ok(false);
    }
    let max_step = histories
        .iter()
        .flat_map(|(_, h)| h.steps.iter().map(|s| s.step))
        .max()
        .unwrap_or(0)
        .max(1);

    let root = SVGBackend::new(path, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("Accuracy per augmentation step — {dataset}"),
            ("sans-serif", 22),
        )
        .margin(12)
        .x_label_area_size(44)
        .y_label_area_size(52)
        .build_cartesian_2d(0.0..max_step as f64, 0.0..1.0)
        .map_err(chart_err)?;
    chart
        .configure_mesh()
        .y_desc("accuracy")
        .x_desc("step (0 = no synthetic data)")
        .draw()
        .map_err(chart_err)?;

    for (i, (label, history)) in histories.iter().enumerate() {
        let color = BAR_COLORS[i % BAR_COLORS.len()];
        let points: Vec<(f64, f64)> = history
            .steps
            .iter()
            .map(|s| (s.step as f64, s.accuracy))
            .collect();
        chart
            .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
            .map_err(chart_err)?
            .label(label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 14, y)], color.stroke_width(2))
            });
        chart
            .draw_series(points.iter().map(|&(x, y)| Circle::new((x, y), 3, color.filled())))
            .map_err(chart_err)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(chart_err)?;
    root.present().map_err(chart_err)?;
    Ok(true)
}

/// Efficacy bars: forest accuracy when trained on real rows versus on each
/// strategy's synthetic rows, evaluated on the same real test split.
pub fn efficacy_chart(
    path: &Path,
    dataset: &str,
    reports: &[(String, EfficacyReport)],
) -> Result<bool> {
    if reports.is_empty() {
        return Ok(false);
    }
    // one "real" bar (they are trained identically; average across reports)
    let real_mean =
        reports.iter().map(|(_, r)| r.real_data_accuracy).sum::<f64>() / reports.len() as f64;
    let mut bars: Vec<(String, f64)> = vec![("real".into(), real_mean)];
    let mut strategies: Vec<String> = Vec::new();
    for (s, _) in reports {
        if !strategies.contains(s) {
            strategies.push(s.clone());
        }
    }
    for s in &strategies {
        let group: Vec<f64> = reports
            .iter()
            .filter(|(rs, _)| rs == s)
            .map(|(_, r)| r.synthetic_data_accuracy)
            .collect();
        bars.push((
            format!("{s} synthetic"),
            group.iter().sum::<f64>() / group.len() as f64,
        ));
    }

    let root = SVGBackend::new(path, (760, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("Synthetic-data efficacy (forest, test-on-real) — {dataset}"),
            ("sans-serif", 20),
        )
        .margin(12)
        .x_label_area_size(44)
        .y_label_area_size(52)
        .build_cartesian_2d(0.0..bars.len() as f64, 0.0..1.0)
        .map_err(chart_err)?;
    let labels: Vec<String> = bars.iter().map(|(l, _)| l.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc("accuracy on real test split")
        .x_labels(bars.len())
        .x_label_formatter(&|x| {
            let idx = x.floor() as usize;
            if (x - idx as f64 - 0.5).abs() < 0.26 && idx < labels.len() {
                labels[idx].clone()
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(chart_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, v))| {
            let color = BAR_COLORS[i % BAR_COLORS.len()];
            Rectangle::new([(i as f64 + 0.18, 0.0), (i as f64 + 0.82, *v)], color.filled())
        }))
        .map_err(chart_err)?;
    root.present().map_err(chart_err)?;
    Ok(true)
}

fn write_table(path_csv: &Path, path_txt: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut csv = header.join(",");
    csv.push('\n');
    for row in rows {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    std::fs::write(path_csv, csv)?;

    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let fmt_row = |cells: &[String]| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:width$}", c, width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut txt = fmt_row(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    txt.push('\n');
    txt.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    txt.push('\n');
    for row in rows {
        txt.push_str(&fmt_row(row));
        txt.push('\n');
    }
    std::fs::write(path_txt, txt)?;
    Ok(())
}

/// Mean wall-clock seconds per strategy and alpha.
pub fn timing_table(paths: &RunPaths, averages: &[AverageRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = averages
        .iter()
        .map(|a| {
            vec![
                a.strategy.clone(),
                format!("{}", a.alpha),
                format!("{:.1}", a.mean_wall_clock_seconds),
            ]
        })
        .collect();
    write_table(
        &paths.tables.join("timing.csv"),
        &paths.tables.join("timing.txt"),
        &["strategy", "alpha", "mean_seconds"],
        &rows,
    )
}

/// Synthetic-data statistics at the best step, per strategy and alpha:
/// real rows, synthetic rows, share of new data, steps taken.
pub fn synthetic_stats_table(
    paths: &RunPaths,
    dataset: &str,
    real_rows: usize,
    averages: &[AverageRow],
) -> Result<()> {
    let rows: Vec<Vec<String>> = averages
        .iter()
        .filter(|a| a.strategy != "fedavg")
        .map(|a| {
            let pct = if real_rows > 0 {
                100.0 * a.mean_synthetic_rows / real_rows as f64
            } else {
                0.0
            };
            vec![
                dataset.to_string(),
                a.strategy.clone(),
                format!("{}", a.alpha),
                format!("{real_rows}"),
                format!("{:.0}", a.mean_synthetic_rows),
                format!("{pct:.1}%"),
                format!("{:.1}", a.mean_steps),
            ]
        })
        .collect();
    write_table(
        &paths.tables.join("synthetic_stats.csv"),
        &paths.tables.join("synthetic_stats.txt"),
        &["dataset", "strategy", "alpha", "real_rows", "synthetic_rows", "pct_new_data", "steps"],
        &rows,
    )
}

/// Emit every report artifact for a finished matrix run.
pub fn emit_reports(cfg: &ExperimentConfig, outcome: &MatrixOutcome, paths: &RunPaths) -> Result<()> {
    let dataset = cfg.dataset.name();
    emit_from_parts(
        &dataset,
        &outcome.records,
        &collect_histories(outcome),
        &collect_efficacy(outcome),
        outcome.real_train_rows,
        paths,
    )
}

fn collect_histories(outcome: &MatrixOutcome) -> Vec<(String, AugmentationHistory)> {
    outcome
        .cells
        .iter()
        .filter_map(|c| {
            c.history.as_ref().map(|h| {
                (
                    format!(
                        "{} a={} s={}",
                        c.record.strategy, c.record.alpha, c.record.seed
                    ),
                    h.clone(),
                )
            })
        })
        .collect()
}

fn collect_efficacy(outcome: &MatrixOutcome) -> Vec<(String, EfficacyReport)> {
    outcome
        .cells
        .iter()
        .filter_map(|c| c.efficacy.as_ref().map(|e| (c.record.strategy.clone(), e.clone())))
        .collect()
}

/// Shared by `run` (fresh outcome) and `report` (reloaded artifacts).
pub fn emit_from_parts(
    dataset: &str,
    records: &[MetricsRecord],
    histories: &[(String, AugmentationHistory)],
    efficacy: &[(String, EfficacyReport)],
    real_rows: usize,
    paths: &RunPaths,
) -> Result<()> {
    if records.is_empty() {
        return Err(CliError::Report("no records to report on".into()));
    }
    let averages = compute_averages(records);

    accuracy_chart(&paths.plots.join("accuracy_by_strategy.svg"), dataset, &averages)?;
    if !step_chart(&paths.plots.join("steps_accuracy.svg"), dataset, histories)? {
        log::info!("no augmentation histories recorded; step chart skipped");
    }
    if !efficacy_chart(&paths.plots.join("efficacy.svg"), dataset, efficacy)? {
        log::info!("no efficacy reports recorded; efficacy chart skipped");
    }
    timing_table(paths, &averages)?;
    synthetic_stats_table(paths, dataset, real_rows, &averages)?;

    let mut summary = String::new();
    summary.push_str(&format!("dataset: {dataset}\n"));
    summary.push_str(&format!("records: {}\n\n", records.len()));
    for a in &averages {
        summary.push_str(&format!(
            "{:8} alpha={:<6} seeds={} accuracy={:.4} wall={:.1}s synthetic={:.0} steps={:.1}\n",
            a.strategy,
            a.alpha,
            a.seeds,
            a.mean_accuracy,
            a.mean_wall_clock_seconds,
            a.mean_synthetic_rows,
            a.mean_steps
        ));
    }
    std::fs::write(paths.root.join("summary.txt"), summary)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use fligan_core::StepRecord;

    fn paths() -> (tempfile::TempDir, RunPaths) {
        let dir = tempfile::tempdir().unwrap();
        let p = crate::runner::prepare_run_dir(dir.path()).unwrap();
        (dir, p)
    }

    fn rec(strategy: &str, alpha: f64, seed: u64, acc: f64) -> MetricsRecord {
        MetricsRecord {
            strategy: strategy.into(),
            alpha,
            seed,
            accuracy: acc,
            wall_clock_seconds: 2.0,
            synthetic_rows_added: 40,
            steps_taken: 3,
        }
    }

    fn history() -> AugmentationHistory {
        AugmentationHistory {
            steps: vec![
                StepRecord { step: 0, synthetic_rows_total: 0, accuracy: 0.6, max_node_spread: 9 },
                StepRecord { step: 1, synthetic_rows_total: 5, accuracy: 0.8, max_node_spread: 4 },
            ],
            best_step: 1,
            best_accuracy: 0.8,
        }
    }

    #[test]
    fn emits_all_report_files() {
        let (_tmp, paths) = paths();
        let records = vec![
            rec("fedavg", 0.05, 1, 0.55),
            rec("fligan", 0.05, 1, 0.9),
            rec("fedgan", 0.05, 1, 0.8),
        ];
        let histories = vec![("fligan a=0.05 s=1".to_string(), history())];
        let efficacy = vec![(
            "fligan".to_string(),
            EfficacyReport {
                real_data_accuracy: 0.95,
                synthetic_data_accuracy: 0.9,
                gap: 0.05,
                classifier_descriptor: "forest".into(),
                dataset_descriptor: "toy".into(),
                degenerate_synthetic: false,
            },
        )];
        emit_from_parts("toy", &records, &histories, &efficacy, 1000, &paths).unwrap();

        for file in [
            paths.plots.join("accuracy_by_strategy.svg"),
            paths.plots.join("steps_accuracy.svg"),
            paths.plots.join("efficacy.svg"),
            paths.tables.join("timing.csv"),
            paths.tables.join("timing.txt"),
            paths.tables.join("synthetic_stats.csv"),
            paths.tables.join("synthetic_stats.txt"),
            paths.root.join("summary.txt"),
        ] {
            assert!(file.exists(), "missing {}", file.display());
            assert!(std::fs::metadata(&file).unwrap().len() > 0);
        }

        // bar charts contain one labeled group per strategy
        let svg = std::fs::read_to_string(paths.plots.join("accuracy_by_strategy.svg")).unwrap();
        for s in ["fedavg", "fligan", "fedgan"] {
            assert!(svg.contains(s), "accuracy chart missing {s}");
        }
        // the stats table carries the report columns
        let stats = std::fs::read_to_string(paths.tables.join("synthetic_stats.csv")).unwrap();
        assert!(stats.starts_with("dataset,strategy,alpha,real_rows,synthetic_rows,pct_new_data,steps"));
        assert!(!stats.contains("fedavg"));
    }

    #[test]
    fn empty_histories_skip_the_step_chart() {
        let (_tmp, paths) = paths();
        let records = vec![rec("fedavg", 0.05, 1, 0.55)];
        emit_from_parts("toy", &records, &[], &[], 100, &paths).unwrap();
        assert!(!paths.plots.join("steps_accuracy.svg").exists());
    }
}
