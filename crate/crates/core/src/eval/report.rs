use std::fmt::Write as _;

use super::{Aggregate, CaseMetrics, EvalReport, ModelKind, REFERENCE_IMPORTANCES};
use crate::error::{Error, Result};
use crate::features::{CaseId, FEATURE_NAMES};
use crate::geometry::Axis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    /// Per-case and aggregate rows; no timing, so identical runs give
    /// identical bytes.
    Csv,
    /// One row per fold plus a literature reference row.
    ImportanceCsv,
}

const NA: &str = "n/a";

const CSV_HEADER: [&str; 14] = [
    "record", "case", "model", "mae", "sd", "near_mse", "far_mse", "n_voxels", "n_near", "n_far", "n_cases", "mean",
    "min", "max",
];

/// A parsed row of the [`ReportFormat::Csv`] rendering.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvRecord {
    Case {
        case: CaseId,
        model: ModelKind,
        metrics: CaseMetrics,
    },
    Aggregate(Aggregate),
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn render_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).unwrap();
    for r in &report.results {
        let m = &r.metrics;
        w.write_record([
            "case".to_string(),
            r.case.to_string(),
            r.model.to_string(),
            m.mae.to_string(),
            m.sd.to_string(),
            opt(m.near_mse),
            opt(m.far_mse),
            m.n_voxels.to_string(),
            m.n_near.to_string(),
            m.n_far.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])
        .unwrap();
    }
    for a in &report.aggregates {
        w.write_record([
            "aggregate".to_string(),
            "all".to_string(),
            a.model.to_string(),
            String::new(),
            opt(a.sd),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            a.n_cases.to_string(),
            a.mean.to_string(),
            a.min.to_string(),
            a.max.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn render_importance_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["fold"];
    header.extend(FEATURE_NAMES);
    header.extend(["uniform", "oob_mse", "train_rows"]);
    w.write_record(&header).unwrap();
    for f in &report.importances {
        let mut row = vec![format!("p{:03}", f.held_out)];
        row.extend(f.importances.iter().map(|v| v.to_string()));
        row.extend([f.uniform.to_string(), opt(f.oob_mse), f.train_rows.to_string()]);
        w.write_record(&row).unwrap();
    }
    let mut row = vec!["reference".to_string()];
    row.extend(REFERENCE_IMPORTANCES.iter().map(|v| v.to_string()));
    row.extend([String::new(), String::new(), String::new()]);
    w.write_record(&row).unwrap();
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn cell(report: &EvalReport, phantom: usize, axis: Axis, model: ModelKind) -> String {
    report
        .result(CaseId::new(phantom, axis), model)
        .map_or_else(|| NA.to_string(), |r| format!("{:.4} ({:.4})", r.metrics.mae, r.metrics.sd))
}

fn render_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let cases = report.cases();
    let mut phantoms: Vec<usize> = cases.iter().map(|c| c.phantom).collect();
    phantoms.dedup();
    let _ = writeln!(
        s,
        "Leave-one-phantom-out evaluation: {} phantoms, {} cases",
        phantoms.len(),
        cases.len()
    );
    let _ = writeln!(s, "Metrics over {}; |pred - gold| in V/cm, mean (SD)\n", report.mask);
    let _ = writeln!(
        s,
        "{:<8} {:>18} {:>18} {:>18} {:>18}",
        "phantom", "forest AP", "forest LR", "linear AP", "linear LR"
    );
    for &p in &phantoms {
        let _ = writeln!(
            s,
            "{:<8} {:>18} {:>18} {:>18} {:>18}",
            format!("p{p:03}"),
            cell(report, p, Axis::AP, ModelKind::Forest),
            cell(report, p, Axis::LR, ModelKind::Forest),
            cell(report, p, Axis::AP, ModelKind::Linear),
            cell(report, p, Axis::LR, ModelKind::Linear),
        );
    }

    let _ = writeln!(s, "\nPer-case MAE across cases");
    let _ = writeln!(s, "{:<8} {:>4} {:>10} {:>10} {:>10} {:>10}", "model", "n", "mean", "sd", "min", "max");
    for a in &report.aggregates {
        let sd = a.sd.map_or_else(|| NA.to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "{:<8} {:>4} {:>10.4} {:>10} {:>10.4} {:>10.4}",
            a.model.as_str(),
            a.n_cases,
            a.mean,
            sd,
            a.min,
            a.max
        );
    }

    let _ = writeln!(
        s,
        "\nSquared error near (d_e < {} mm) and far from the electrodes, (V/cm)^2",
        report.settings.near_threshold_mm
    );
    let _ = writeln!(s, "{:<8} {:<7} {:>12} {:>12} {:>8} {:>8}", "case", "model", "near_mse", "far_mse", "n_near", "n_far");
    for r in &report.results {
        let f = |v: Option<f64>| v.map_or_else(|| NA.to_string(), |x| format!("{x:.5}"));
        let _ = writeln!(
            s,
            "{:<8} {:<7} {:>12} {:>12} {:>8} {:>8}",
            r.case.to_string(),
            r.model.as_str(),
            f(r.metrics.near_mse),
            f(r.metrics.far_mse),
            r.metrics.n_near,
            r.metrics.n_far
        );
    }

    let _ = writeln!(s, "\nForest feature importances (mean decrease in impurity)");
    let _ = write!(s, "{:<10}", "fold");
    for n in FEATURE_NAMES {
        let _ = write!(s, " {n:>7}");
    }
    let _ = writeln!(s, " {:>10}", "oob_mse");
    for f in &report.importances {
        let _ = write!(s, "{:<10}", format!("p{:03}", f.held_out));
        for v in f.importances {
            let _ = write!(s, " {v:>7.3}");
        }
        let oob = f.oob_mse.map_or_else(|| NA.to_string(), |v| format!("{v:.5}"));
        let flag = if f.uniform { "  (uniform: no splits)" } else { "" };
        let _ = writeln!(s, " {oob:>10}{flag}");
    }
    let _ = write!(s, "{:<10}", "reference");
    for v in REFERENCE_IMPORTANCES {
        let _ = write!(s, " {v:>7.3}");
    }
    let _ = writeln!(s, "   (literature comparison)");

    let _ = writeln!(s, "\nTiming, seconds (single thread)");
    let _ = writeln!(
        s,
        "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "case", "solve", "features", "forest", "linear", "speedup"
    );
    for t in &report.timing {
        let solve = t.solve_seconds.map_or_else(|| NA.to_string(), |v| format!("{v:.3}"));
        let ratio = t.speedup().map_or_else(|| NA.to_string(), |v| format!("{v:.2}x"));
        let _ = writeln!(
            s,
            "{:<8} {:>10} {:>10.3} {:>10.3} {:>10.3} {:>10}",
            t.case.to_string(),
            solve,
            t.feature_seconds,
            t.forest_predict_seconds,
            t.linear_predict_seconds,
            ratio
        );
    }
    let _ = writeln!(s, "speedup = solve / (features + forest prediction)");

    let _ = writeln!(s, "\nLiterature comparison (patient data, FEM gold standard):");
    let _ = writeln!(s, "  mean absolute error: forest 0.14 V/cm, linear 0.29 V/cm");
    let _ = writeln!(s, "  patient 1: AP 0.14 (0.62), LR 0.23 (0.80)");
    s
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::ImportanceCsv => render_importance_csv(report),
    }
}

/// Parse the [`ReportFormat::Csv`] rendering back into records.
pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRecord>> {
    let bad = |msg: String| Error::Invalid(format!("report csv: {msg}"));
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    let real = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
    let count = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad count {s:?}")));
    let maybe = |s: &str| if s == NA { Ok(None) } else { real(s).map(Some) };
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let model: ModelKind = f(2).parse()?;
        out.push(match f(0) {
            "case" => CsvRecord::Case {
                case: f(1).parse()?,
                model,
                metrics: CaseMetrics {
                    mae: real(f(3))?,
                    sd: real(f(4))?,
                    near_mse: maybe(f(5))?,
                    far_mse: maybe(f(6))?,
                    n_voxels: count(f(7))?,
                    n_near: count(f(8))?,
                    n_far: count(f(9))?,
                },
            },
            "aggregate" => CsvRecord::Aggregate(Aggregate {
                model,
                n_cases: count(f(10))?,
                mean: real(f(11))?,
                sd: maybe(f(4))?,
                min: real(f(12))?,
                max: real(f(13))?,
            }),
            other => return Err(bad(format!("unknown record {other:?}"))),
        });
    }
    Ok(out)
}
