use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

fn csv_to_markdown(text: &str) -> String {
    let mut out = String::new();
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let Some(header) = lines.next() else {
        return out;
    };
    let cols: Vec<&str> = header.split(',').collect();
    let _ = writeln!(out, "| {} |", cols.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(cols.len()));
    for l in lines {
        let _ = writeln!(out, "| {} |", l.split(',').collect::<Vec<_>>().join(" | "));
    }
    out
}

/// Renders the summary tables found in `dir` into `dir/report.md`.
pub fn write_report(dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let sections = [
        ("Counting", "summary_count.csv"),
        ("Recall", "summary_recall.csv"),
        ("Threshold sweep", "sweep.csv"),
    ];
    let mut md = String::from("# Experiment report\n");
    let mut found = 0;
    for (title, file) in sections {
        let p = dir.join(file);
        if !p.exists() {
            continue;
        }
        found += 1;
        let _ = write!(md, "\n## {title}\n\n{}", csv_to_markdown(&std::fs::read_to_string(p)?));
    }
    if found == 0 {
        return Err(Error::MissingInput(dir.join("summary_count.csv")));
    }
    let out = dir.join("report.md");
    std::fs::write(&out, md)?;
    Ok(out)
}
