//! Report bundle: CSV tables, markdown tables and optional SVG plots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::runlog::RunLog;

use super::curve::{crossing, ALCurve, Axis};
use super::rank::{
    collection_curves, correlation_history, cross_collection_matrix, final_aucs,
    Collection, CorrelationHistory, CorrelationMatrix, MethodRanking, Metric,
};
use super::svg::plot_curves;
use super::EvalError;

/// `(dataset, detector)`.
pub type ExperimentKey = (String, String);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaxPerformanceTable {
    pub entries: BTreeMap<ExperimentKey, f64>,
}

#[derive(Debug, Deserialize)]
struct MaxPerformanceRow {
    dataset: String,
    detector: String,
    max_map50: f64,
}

impl MaxPerformanceTable {
    /// Reads a CSV with columns `dataset,detector,max_map50`.
    pub fn read_csv(path: &Path) -> Result<Self, EvalError> {
        let err = |message: String| EvalError::MaxPerformance {
            path: path.display().to_string(),
            message,
        };
        let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: MaxPerformanceRow = row.map_err(|e| err(e.to_string()))?;
            if !(0.0..=1.0).contains(&row.max_map50) {
                return Err(err(format!(
                    "{}/{}: max_map50 {} outside [0, 1]",
                    row.dataset, row.detector, row.max_map50
                )));
            }
            entries.insert((row.dataset, row.detector), row.max_map50);
        }
        Ok(Self { entries })
    }

    pub fn get(&self, dataset: &str, detector: &str) -> Option<f64> {
        self.entries
            .get(&(dataset.to_string(), detector.to_string()))
            .copied()
    }
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    /// Fraction of the maximum performance defining the crossing mark.
    pub level_fraction: f64,
    pub svg: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            level_fraction: 0.9,
            svg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisRow {
    pub strategy: String,
    pub crossing: Option<f64>,
    pub auc: f64,
    pub auc_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub detector: String,
    pub max_map50: f64,
    pub level: f64,
    pub axes: BTreeMap<Axis, Vec<AxisRow>>,
    /// `(strategy, mean, std)` of mAP at the last image-axis grid point.
    pub final_map: Vec<(String, f64, f64)>,
    pub curves: BTreeMap<Axis, BTreeMap<String, ALCurve>>,
    pub histories: Vec<CorrelationHistory>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub experiments: Vec<ExperimentReport>,
    pub correlations: BTreeMap<Axis, CorrelationMatrix>,
}

pub fn group_runlogs(logs: Vec<RunLog>) -> BTreeMap<ExperimentKey, Collection> {
    let mut out: BTreeMap<ExperimentKey, Collection> = BTreeMap::new();
    for log in logs {
        out.entry((log.dataset.clone(), log.detector.clone()))
            .or_default()
            .entry(log.strategy.clone())
            .or_default()
            .push(log);
    }
    for coll in out.values_mut() {
        for logs in coll.values_mut() {
            logs.sort_by_key(|l| l.seed);
        }
    }
    out
}

fn analyze(
    key: &ExperimentKey,
    coll: &Collection,
    max_perf: &MaxPerformanceTable,
    options: &ReportOptions,
) -> Result<ExperimentReport, EvalError> {
    let (dataset, detector) = key;
    let mut curves = BTreeMap::new();
    for axis in Axis::BOTH {
        curves.insert(axis, collection_curves(coll, axis)?);
    }
    let image_curves = &curves[&Axis::Images];
    let max_map50 = match max_perf.get(dataset, detector) {
        Some(m) => m,
        None => {
            let observed = image_curves
                .values()
                .flat_map(|c| c.mean.iter().copied())
                .fold(0.0, f64::max);
            log::warn!(
                "no max performance for {dataset}/{detector}; using best observed mean mAP {observed}"
            );
            observed
        }
    };
    let level = options.level_fraction * max_map50;

    let mut axes = BTreeMap::new();
    for (&axis, cs) in &curves {
        let x_max = coll
            .values()
            .flatten()
            .flat_map(|l| axis.points(l))
            .map(|p| p.0)
            .fold(0.0, f64::max);
        let aucs = if cs.len() > 1 {
            final_aucs(cs)?
        } else {
            let c = cs.values().next().expect("nonempty collection");
            vec![super::curve::auc(c, c.domain().1)?]
        };
        let rows = cs
            .iter()
            .zip(aucs)
            .map(|((s, c), auc)| AxisRow {
                strategy: s.clone(),
                crossing: crossing(c, level),
                auc,
                auc_normalized: auc / x_max,
            })
            .collect();
        axes.insert(axis, rows);
    }

    let final_map = image_curves
        .iter()
        .map(|(s, c)| (s.clone(), c.final_mean(), c.final_std()))
        .collect();

    let mut histories = Vec::new();
    if coll.len() >= 2 {
        for axis in Axis::BOTH {
            let reference = MethodRanking::reference(&curves[&axis], level);
            for metric in [Metric::Map50, Metric::Auc] {
                match correlation_history(coll, &reference, metric, axis) {
                    Ok(h) => histories.push(h),
                    Err(e) => log::warn!(
                        "{dataset}/{detector}: no {} correlation history on {}: {e}",
                        metric.name(),
                        axis.file_label()
                    ),
                }
            }
        }
    }

    Ok(ExperimentReport {
        dataset: dataset.clone(),
        detector: detector.clone(),
        max_map50,
        level,
        axes,
        final_map,
        curves,
        histories,
    })
}

/// Computes every table for the given runlogs and writes them below `out`.
pub fn report(
    logs: Vec<RunLog>,
    max_perf: &MaxPerformanceTable,
    out: &Path,
    options: &ReportOptions,
) -> Result<Report, EvalError> {
    if logs.is_empty() {
        return Err(EvalError::NoRunlogs);
    }
    let groups = group_runlogs(logs);
    let experiments = groups
        .iter()
        .map(|(k, c)| analyze(k, c, max_perf, options))
        .collect::<Result<Vec<_>, _>>()?;

    let mut correlations = BTreeMap::new();
    if groups.len() >= 2 {
        let keyed: BTreeMap<String, Collection> = groups
            .iter()
            .map(|((d, m), c)| (format!("{d}/{m}"), c.clone()))
            .collect();
        for axis in Axis::BOTH {
            match cross_collection_matrix(&keyed, axis) {
                Ok(m) => {
                    correlations.insert(axis, m);
                }
                Err(e) => log::warn!("skipping cross-experiment correlations: {e}"),
            }
        }
    }

    let report = Report {
        experiments,
        correlations,
    };
    write_report(&report, out, options)?;
    Ok(report)
}

fn io_err(path: &Path, e: impl ToString) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_report(report: &Report, out: &Path, options: &ReportOptions) -> Result<(), EvalError> {
    let curves_dir = out.join("curves");
    fs::create_dir_all(&curves_dir).map_err(|e| io_err(&curves_dir, e))?;
    let exps = &report.experiments;

    for axis in Axis::BOTH {
        let label = axis.file_label();
        let mut crossings = Vec::new();
        let mut aucs = Vec::new();
        for e in exps {
            for r in &e.axes[&axis] {
                crossings.push(vec![
                    e.dataset.clone(),
                    e.detector.clone(),
                    r.strategy.clone(),
                    e.level.to_string(),
                    opt(r.crossing),
                ]);
                aucs.push(vec![
                    e.dataset.clone(),
                    e.detector.clone(),
                    r.strategy.clone(),
                    r.auc.to_string(),
                    r.auc_normalized.to_string(),
                ]);
            }
        }
        write_csv(
            &out.join(format!("crossings_{label}.csv")),
            &["dataset", "detector", "strategy", "level", "crossing"],
            crossings,
        )?;
        write_csv(
            &out.join(format!("auc_{label}.csv")),
            &["dataset", "detector", "strategy", "auc", "auc_normalized"],
            aucs,
        )?;

        let strategies: BTreeSet<&String> =
            exps.iter().flat_map(|e| e.curves[&axis].keys()).collect();
        for s in strategies {
            let mut rows = Vec::new();
            for e in exps {
                if let Some(c) = e.curves[&axis].get(s) {
                    for i in 0..c.x.len() {
                        rows.push(vec![
                            e.dataset.clone(),
                            e.detector.clone(),
                            c.x[i].to_string(),
                            c.mean[i].to_string(),
                            c.std[i].to_string(),
                        ]);
                    }
                }
            }
            write_csv(
                &curves_dir.join(format!("{}_{label}.csv", file_safe(s))),
                &["dataset", "detector", "x", "mean", "std"],
                rows,
            )?;
        }

        if options.svg {
            for e in exps {
                let path = out.join(format!(
                    "{}_{}_{label}.svg",
                    file_safe(&e.dataset),
                    file_safe(&e.detector)
                ));
                let title = format!("{} / {} ({label})", e.dataset, e.detector);
                let svg = plot_curves(&title, &e.curves[&axis], Some(e.level));
                fs::write(&path, svg).map_err(|err| io_err(&path, err))?;
            }
        }
    }

    write_csv(
        &out.join("final_map.csv"),
        &["dataset", "detector", "strategy", "map50_mean", "map50_std"],
        exps.iter()
            .flat_map(|e| {
                e.final_map.iter().map(|(s, m, sd)| {
                    vec![
                        e.dataset.clone(),
                        e.detector.clone(),
                        s.clone(),
                        m.to_string(),
                        sd.to_string(),
                    ]
                })
            })
            .collect(),
    )?;

    let mut corr_rows = Vec::new();
    for (axis, m) in &report.correlations {
        for (i, a) in m.labels.iter().enumerate() {
            for (j, b) in m.labels.iter().enumerate() {
                corr_rows.push(vec![
                    axis.file_label().to_string(),
                    a.clone(),
                    b.clone(),
                    opt(m.rho[i][j]),
                ]);
            }
        }
    }
    write_csv(
        &out.join("correlations.csv"),
        &["axis", "row", "col", "rho"],
        corr_rows,
    )?;

    let mut hist_rows = Vec::new();
    for e in exps {
        for h in &e.histories {
            for (t, rho) in &h.points {
                hist_rows.push(vec![
                    e.dataset.clone(),
                    e.detector.clone(),
                    h.axis.file_label().to_string(),
                    h.metric.name().to_string(),
                    t.to_string(),
                    opt(*rho),
                ]);
            }
        }
    }
    write_csv(
        &out.join("correlation_history.csv"),
        &["dataset", "detector", "axis", "metric", "t_normalized", "rho"],
        hist_rows,
    )?;

    let md = render_markdown(report);
    let path = out.join("tables.md");
    fs::write(&path, md).map_err(|e| io_err(&path, e))
}

/// Bold for the best value, `<u>` for the second best distinct value.
fn highlight(values: &[Option<f64>], higher_is_better: bool, fmt: impl Fn(f64) -> String) -> Vec<String> {
    let mut distinct: Vec<f64> = values.iter().flatten().copied().collect();
    distinct.sort_by(|a, b| if higher_is_better { b.total_cmp(a) } else { a.total_cmp(b) });
    distinct.dedup();
    values
        .iter()
        .map(|v| match v {
            None => "n/c".to_string(),
            Some(x) => {
                let s = fmt(*x);
                if Some(x) == distinct.first() {
                    format!("**{s}**")
                } else if Some(x) == distinct.get(1) {
                    format!("<u>{s}</u>")
                } else {
                    s
                }
            }
        })
        .collect()
}

fn table(
    md: &mut String,
    title: &str,
    exps: &[ExperimentReport],
    cell: impl Fn(&ExperimentReport, &str) -> Option<f64>,
    higher_is_better: bool,
    fmt: impl Fn(f64) -> String + Copy,
) {
    let strategies: BTreeSet<&String> = exps
        .iter()
        .flat_map(|e| e.final_map.iter().map(|f| &f.0))
        .collect();
    let _ = writeln!(md, "### {title}\n");
    let header: Vec<String> = exps
        .iter()
        .map(|e| format!("{} ({})", e.dataset, e.detector))
        .collect();
    let _ = writeln!(md, "| Strategy | {} |", header.join(" | "));
    let _ = writeln!(md, "|---|{}", "---:|".repeat(exps.len()));
    let columns: Vec<Vec<String>> = exps
        .iter()
        .map(|e| {
            let vals: Vec<Option<f64>> = strategies.iter().map(|s| cell(e, s)).collect();
            highlight(&vals, higher_is_better, fmt)
        })
        .collect();
    for (i, s) in strategies.iter().enumerate() {
        let cells: Vec<&str> = columns.iter().map(|c| c[i].as_str()).collect();
        let _ = writeln!(md, "| {s} | {} |", cells.join(" | "));
    }
    md.push('\n');
}

fn axis_value(e: &ExperimentReport, axis: Axis, s: &str, f: impl Fn(&AxisRow) -> Option<f64>) -> Option<f64> {
    e.axes[&axis].iter().find(|r| r.strategy == s).and_then(f)
}

pub(crate) fn render_markdown(report: &Report) -> String {
    let exps = &report.experiments;
    let mut md = String::from("# Active learning report\n\n");
    let levels: Vec<String> = exps
        .iter()
        .map(|e| format!("{}/{}: {}", e.dataset, e.detector, e.level))
        .collect();
    let _ = writeln!(md, "Crossing levels: {}\n", levels.join(", "));
    for axis in Axis::BOTH {
        let unit = match axis {
            Axis::Images => "images",
            Axis::Instances => "bounding boxes",
        };
        table(
            &mut md,
            &format!("Labeled {unit} needed to cross the mark (lower is better)"),
            exps,
            |e, s| axis_value(e, axis, s, |r| r.crossing),
            false,
            |x| format!("{x:.1}"),
        );
    }
    table(
        &mut md,
        "Final mAP@50 in % (higher is better)",
        exps,
        |e, s| e.final_map.iter().find(|f| f.0 == s).map(|f| f.1),
        true,
        |x| format!("{:.2}", 100.0 * x),
    );
    for axis in Axis::BOTH {
        table(
            &mut md,
            &format!("AUC over {} (higher is better)", axis.file_label()),
            exps,
            |e, s| axis_value(e, axis, s, |r| Some(r.auc)),
            true,
            |x| format!("{x:.1}"),
        );
    }
    let histories: Vec<(&ExperimentReport, &CorrelationHistory)> = exps
        .iter()
        .flat_map(|e| e.histories.iter().map(move |h| (e, h)))
        .collect();
    if !histories.is_empty() {
        md.push_str("### Rank correlation with the crossing ranking\n\n");
        md.push_str("| Experiment | Axis | Metric | min ρ | mean ρ |\n|---|---|---|---:|---:|\n");
        for (e, h) in histories {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                md,
                "| {} ({}) | {} | {} | {} | {} |",
                e.dataset,
                e.detector,
                h.axis.file_label(),
                h.metric.name(),
                f(h.min),
                f(h.mean)
            );
        }
        md.push('\n');
    }
    for (axis, m) in &report.correlations {
        let _ = writeln!(md, "### AUC rank correlations across experiments ({})\n", axis.file_label());
        let _ = writeln!(md, "| | {} |", m.labels.join(" | "));
        let _ = writeln!(md, "|---|{}", "---:|".repeat(m.labels.len()));
        for (i, l) in m.labels.iter().enumerate() {
            let cells: Vec<String> = m.rho[i]
                .iter()
                .map(|r| r.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into()))
                .collect();
            let _ = writeln!(md, "| {l} | {} |", cells.join(" | "));
        }
        md.push('\n');
    }
    md
}

#[cfg(test)]
mod tests {
    use super::super::curve::tests::log_from;
    use super::*;

    fn fixture() -> Vec<RunLog> {
        let mut logs = Vec::new();
        for (s, o) in [("random", 0.0), ("entropy", 0.1)] {
            for seed in 0..2 {
                logs.push(log_from(
                    s,
                    seed,
                    &[(100, 300, 0.3 + o), (200, 600, 0.5 + o), (300, 900, 0.7 + o)],
                ));
            }
        }
        logs
    }

    #[test]
    fn highlight_marks_best_and_second() {
        let v = [Some(1.0), Some(3.0), None, Some(2.0)];
        let h = highlight(&v, true, |x| format!("{x}"));
        assert_eq!(h, vec!["1", "**3**", "n/c", "<u>2</u>"]);
        let h = highlight(&v, false, |x| format!("{x}"));
        assert_eq!(h, vec!["**1**", "3", "n/c", "<u>2</u>"]);
        assert_eq!(highlight(&[Some(5.0)], true, |x| format!("{x}")), vec!["**5**"]);
        assert_eq!(
            highlight(&[Some(5.0), None, Some(4.0)], true, |x| format!("{x}")),
            vec!["**5**", "n/c", "<u>4</u>"]
        );
    }

    #[test]
    fn report_tables_match_crossings() {
        let dir = tempfile::tempdir().unwrap();
        let max = MaxPerformanceTable {
            entries: BTreeMap::from([(("D".into(), "sim".into()), 0.8)]),
        };
        let opts = ReportOptions {
            svg: true,
            ..ReportOptions::default()
        };
        let r = report(fixture(), &max, dir.path(), &opts).unwrap();
        let e = &r.experiments[0];
        assert!((e.level - 0.72).abs() < 1e-15);
        let rows = &e.axes[&Axis::Images];
        // entropy: 0.6 → 0.8 between 200 and 300 crosses 0.72 at 260.
        assert_eq!(rows[0].strategy, "entropy");
        assert!((rows[0].crossing.unwrap() - 260.0).abs() < 1e-9);
        assert_eq!(rows[1].crossing, None);
        let csv = fs::read_to_string(dir.path().join("crossings_images.csv")).unwrap();
        assert!(csv.contains(&format!("D,sim,entropy,{},{}", e.level, rows[0].crossing.unwrap())));
        assert!(csv.contains(&format!("D,sim,random,{},\n", e.level)));
        for f in [
            "crossings_boxes.csv",
            "final_map.csv",
            "auc_images.csv",
            "auc_boxes.csv",
            "curves/entropy_images.csv",
            "curves/random_boxes.csv",
            "correlations.csv",
            "correlation_history.csv",
            "tables.md",
            "D_sim_images.svg",
        ] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let md = fs::read_to_string(dir.path().join("tables.md")).unwrap();
        assert!(md.contains("| entropy | **260.0** |"));
        assert!(md.contains("| random | n/c |"));
    }
}
