use std::fmt::Write;

use super::{DeltaTable, EvalReport};
use crate::hardness::HardnessLevel;
use crate::util::{fmt_delta_tenths, fmt_hundredths, fmt_tenths, percent_hundredths};

const LABEL_W: usize = 22;
const COL_W: usize = 9;

fn header(out: &mut String, first: &str) {
    let _ = write!(out, "{first:<LABEL_W$}");
    for l in HardnessLevel::ALL {
        let _ = write!(out, "{:>COL_W$}", l.title());
    }
    let _ = writeln!(out, "{:>COL_W$}", "All");
}

fn row(out: &mut String, label: &str, cells: impl IntoIterator<Item = String>) {
    let _ = write!(out, "{label:<LABEL_W$}");
    for c in cells {
        let _ = write!(out, "{c:>COL_W$}");
    }
    out.push('\n');
}

/// Plain-text report: accuracy by hardness, recognizer accuracy, confusion
/// matrix, optional ideal-vs-practical table and the skip ledger.
pub fn render_report(report: &EvalReport, deltas: Option<&DeltaTable>) -> String {
    let mut out = String::new();
    let buckets: Vec<_> = HardnessLevel::ALL
        .iter()
        .map(|&l| report.bucket(l))
        .chain([report.overall])
        .collect();

    out.push_str("Accuracy by gold hardness (%)\n");
    header(&mut out, "");
    row(
        &mut out,
        "Samples",
        buckets.iter().map(|b| b.count.to_string()),
    );
    row(
        &mut out,
        "EM",
        buckets.iter().map(|b| fmt_tenths(b.em_tenths())),
    );
    row(
        &mut out,
        "EX",
        buckets.iter().map(|b| fmt_tenths(b.ex_tenths())),
    );

    out.push_str("\nRecognizer accuracy (%)\n");
    header(&mut out, "");
    let cm = &report.confusion;
    let mut acc: Vec<(u64, u64)> = HardnessLevel::ALL
        .iter()
        .map(|&l| cm.class_accuracy(l))
        .collect();
    acc.push(cm.overall_accuracy());
    row(
        &mut out,
        "Accuracy",
        acc.iter()
            .map(|&(n, d)| fmt_hundredths(percent_hundredths(n, d))),
    );
    row(
        &mut out,
        "Correct/total",
        acc.iter().map(|&(n, d)| format!("{n}/{d}")),
    );

    out.push_str("\nConfusion matrix (rows: prediction, columns: gold)\n");
    let _ = write!(out, "{:<LABEL_W$}", "Prediction");
    for l in HardnessLevel::ALL {
        let _ = write!(out, "{:>COL_W$}", l.title());
    }
    out.push('\n');
    for p in HardnessLevel::ALL {
        row(
            &mut out,
            p.title(),
            cm.counts[p.index()].iter().map(u64::to_string),
        );
    }

    if let Some(d) = deltas {
        out.push('\n');
        out.push_str(&render_deltas(d));
    }

    let _ = writeln!(out, "\nSkipped or excluded: {}", report.skipped.len());
    for s in &report.skipped {
        let _ = writeln!(out, "  #{}: {}", s.id, s.reason);
    }
    out
}

fn with_delta(value: u64, delta: i64) -> String {
    if delta == 0 {
        fmt_tenths(value)
    } else {
        let d = fmt_delta_tenths(delta);
        format!("{}({})", fmt_tenths(value), d.trim_start_matches('+'))
    }
}

/// Ideal-vs-practical table; ideal values carry their difference in
/// parentheses when it is non-zero.
pub fn render_deltas(table: &DeltaTable) -> String {
    let mut out = String::from("Ideal vs practical routing (%)\n");
    let _ = write!(out, "{:<LABEL_W$}", "");
    for r in &table.rows {
        let _ = write!(out, "{:>w$}", r.label, w = COL_W + 3);
    }
    out.push('\n');
    let line = |out: &mut String, label: &str, cells: Vec<String>| {
        let _ = write!(out, "{label:<LABEL_W$}");
        for c in cells {
            let _ = write!(out, "{c:>w$}", w = COL_W + 3);
        }
        out.push('\n');
    };
    line(
        &mut out,
        "EX practical",
        table
            .rows
            .iter()
            .map(|r| fmt_tenths(r.practical_ex))
            .collect(),
    );
    line(
        &mut out,
        "EX ideal",
        table
            .rows
            .iter()
            .map(|r| with_delta(r.ideal_ex, r.ex_delta()))
            .collect(),
    );
    line(
        &mut out,
        "EM practical",
        table
            .rows
            .iter()
            .map(|r| fmt_tenths(r.practical_em))
            .collect(),
    );
    line(
        &mut out,
        "EM ideal",
        table
            .rows
            .iter()
            .map(|r| with_delta(r.ideal_em, r.em_delta()))
            .collect(),
    );
    out
}
