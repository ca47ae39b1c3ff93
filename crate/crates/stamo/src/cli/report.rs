//! Consolidated markdown report over finished run directories.

use super::manifest::{RunManifest, RunRecorder};
use crate::error::{Error, Result};
use crate::plot::{BarChart, LineChart};
use crate::probing::ProbeReport;
use crate::worldpolicy::EvalReport;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub fn consolidate(mut rec: RunRecorder, runs: &[PathBuf]) -> Result<RunManifest> {
    let mut md = String::from("# Experiment report\n");
    let mut probe_reports: Vec<(String, ProbeReport)> = Vec::new();
    let mut eval_reports: Vec<(String, EvalReport)> = Vec::new();
    let mut metric_tables: Vec<(String, String)> = Vec::new();
    let mut train_logs: Vec<(String, Vec<(u64, f64)>)> = Vec::new();

    for dir in runs {
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| dir.display().to_string());
        let manifest = RunManifest::read(dir)?;
        manifest.validate(dir)?;
        writeln!(md, "\n## {label}\n\ncommand: `{}`\n", manifest.command).ok();

        let probe_path = dir.join("probe_report.json");
        if probe_path.exists() {
            let report: ProbeReport = read_json(&probe_path)?;
            probe_reports.push((label.clone(), report));
        }
        let eval_path = dir.join("eval_report.json");
        if eval_path.exists() {
            let report: EvalReport = read_json(&eval_path)?;
            eval_reports.push((label.clone(), report));
        }
        let metrics_path = dir.join("metrics.csv");
        if metrics_path.exists() {
            let text = std::fs::read_to_string(&metrics_path)
                .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
            metric_tables.push((label.clone(), text));
        }
        let log_path = dir.join("train_log.csv");
        if log_path.exists() {
            let text = std::fs::read_to_string(&log_path)
                .map_err(|e| Error::io(log_path.display().to_string(), e))?;
            let mut points = Vec::new();
            for line in text.lines().skip(1) {
                let mut fields = line.split(',');
                if let (Some(step), Some(loss)) = (fields.next(), fields.next()) {
                    if let (Ok(s), Ok(l)) = (step.parse::<u64>(), loss.parse::<f64>()) {
                        points.push((s, l));
                    }
                }
            }
            if !points.is_empty() {
                train_logs.push((label.clone(), points));
            }
        }
    }

    // Reconstruction metric tables.
    if !metric_tables.is_empty() {
        writeln!(md, "\n## Reconstruction quality\n").ok();
        for (label, csv) in &metric_tables {
            writeln!(md, "### {label}\n").ok();
            writeln!(md, "{}", csv_to_markdown(csv)).ok();
        }
    }

    // Linear probing.
    for (label, report) in &probe_reports {
        writeln!(md, "\n## Linear probing ({label})\n").ok();
        writeln!(md, "| method | k | LP-MSE | replay success |").ok();
        writeln!(md, "|---|---|---|---|").ok();
        for r in &report.results {
            writeln!(
                md,
                "| {} | {} | {:.3e} | {} |",
                r.method,
                r.k,
                r.lp_mse,
                r.replay_success_fraction
                    .map(|v| format!("{:.1}%", v * 100.0))
                    .unwrap_or_else(|| "-".into())
            )
            .ok();
        }
        let mut methods: Vec<String> = report.results.iter().map(|r| r.method.clone()).collect();
        methods.dedup();
        let mut horizons: Vec<usize> = report.results.iter().map(|r| r.k).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let chart = BarChart {
            title: "LP-MSE BY HORIZON",
            groups: horizons.iter().map(|k| format!("K={k}")).collect(),
            series: methods
                .iter()
                .map(|m| {
                    (
                        m.clone(),
                        horizons
                            .iter()
                            .map(|k| {
                                report
                                    .results
                                    .iter()
                                    .find(|r| &r.method == m && r.k == *k)
                                    .map(|r| r.lp_mse)
                                    .unwrap_or(f64::NAN)
                            })
                            .collect(),
                    )
                })
                .collect(),
            log_y: true,
        };
        let name = format!("lp_mse_{}.png", sanitize(label));
        chart.render(&rec.path(&name))?;
        rec.record(&name);
        writeln!(md, "\n![lp-mse]({name})\n").ok();
    }

    // Policy success tables.
    if !eval_reports.is_empty() {
        writeln!(md, "\n## Policy success rates (%)\n").ok();
        let mut tasks: Vec<String> = eval_reports
            .iter()
            .flat_map(|(_, r)| r.tasks.iter().map(|t| t.task.clone()))
            .collect();
        tasks.sort();
        tasks.dedup();
        write!(md, "| run |").ok();
        for t in &tasks {
            write!(md, " {t} |").ok();
        }
        writeln!(md, " average |").ok();
        write!(md, "|---|").ok();
        for _ in &tasks {
            write!(md, "---|").ok();
        }
        writeln!(md, "---|").ok();
        for (label, r) in &eval_reports {
            write!(md, "| {label} |").ok();
            for t in &tasks {
                let v = r
                    .tasks
                    .iter()
                    .find(|te| &te.task == t)
                    .map(|te| format!("{:.1}", te.success_rate * 100.0))
                    .unwrap_or_else(|| "-".into());
                write!(md, " {v} |").ok();
            }
            writeln!(md, " {:.1} |", r.mean_success * 100.0).ok();
        }

        let chart = BarChart {
            title: "TASK SUCCESS",
            groups: tasks.clone(),
            series: eval_reports
                .iter()
                .map(|(label, r)| {
                    (
                        label.clone(),
                        tasks
                            .iter()
                            .map(|t| {
                                r.tasks
                                    .iter()
                                    .find(|te| &te.task == t)
                                    .map(|te| te.success_rate)
                                    .unwrap_or(0.0)
                            })
                            .collect(),
                    )
                })
                .collect(),
            log_y: false,
        };
        chart.render(&rec.path("success.png"))?;
        rec.record("success.png");
        writeln!(md, "\n![success](success.png)\n").ok();
    }

    // Training curves.
    if !train_logs.is_empty() {
        // plot on the grid of the longest log
        let longest = train_logs.iter().map(|(_, p)| p.len()).max().unwrap_or(0);
        let xs: Vec<f64> = train_logs
            .iter()
            .max_by_key(|(_, p)| p.len())
            .map(|(_, p)| p.iter().map(|(s, _)| *s as f64).collect())
            .unwrap_or_default();
        let chart = LineChart {
            title: "TRAINING LOSS",
            xs,
            series: train_logs
                .iter()
                .map(|(label, points)| {
                    let mut vals: Vec<f64> = points.iter().map(|(_, l)| *l).collect();
                    vals.resize(longest, *vals.last().unwrap_or(&0.0));
                    (label.clone(), vals)
                })
                .collect(),
        };
        chart.render(&rec.path("loss.png"))?;
        rec.record("loss.png");
        writeln!(md, "\n![loss](loss.png)\n").ok();
    }

    std::fs::write(rec.path("report.md"), md).map_err(|e| Error::io("report.md".to_string(), e))?;
    rec.record("report.md");
    rec.finish()
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_to_markdown(csv: &str) -> String {
    let mut out = String::new();
    for (i, line) in csv.lines().enumerate() {
        out.push_str("| ");
        out.push_str(&line.replace(',', " | "));
        out.push_str(" |\n");
        if i == 0 {
            let cols = line.split(',').count();
            out.push('|');
            for _ in 0..cols {
                out.push_str("---|");
            }
            out.push('\n');
        }
    }
    out
}
