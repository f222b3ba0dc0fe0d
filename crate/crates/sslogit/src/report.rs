//! Rendering of run reports. All three formats list cells in plan order and
//! parameters in estimator order, so equal reports render byte-identically.

use std::fmt::Write as _;

use crate::driver::{CellOutcome, CellResult, RunReport};

fn window_fields(c: &CellResult) -> (String, String, String, String) {
    match c.window {
        Some(w) => (
            w.center.to_string(),
            w.lo.to_string(),
            w.hi.to_string(),
            w.truncated.to_string(),
        ),
        None => (String::new(), String::new(), String::new(), String::new()),
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        "NA".into()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Long format, one row per cell and parameter. Skipped and failed cells get
/// one row with an empty parameter and the reason in `status`.
pub fn results_csv(report: &RunReport) -> String {
    let mut out = String::from(
        "estimator,group,window_center,window_lo,window_hi,truncated,households,status,parameter,estimate,se,boot_se,notes\n",
    );
    for c in &report.cells {
        let (center, lo, hi, trunc) = window_fields(c);
        let head = format!(
            "{},{},{center},{lo},{hi},{trunc},{}",
            report.estimator,
            csv_field(&c.group),
            c.households
        );
        match &c.outcome {
            CellOutcome::Fitted(e) => {
                let status = if e.converged { "ok" } else { "not_converged" };
                let notes = csv_field(&e.notes.join("; "));
                for (k, name) in e.names.iter().enumerate() {
                    let boot = e.boot_se.as_ref().map_or(String::new(), |b| num(b[k]));
                    let _ = writeln!(
                        out,
                        "{head},{status},{name},{},{},{boot},{notes}",
                        num(e.estimates[k]),
                        num(e.se[k])
                    );
                }
            }
            CellOutcome::Skipped(why) => {
                let _ = writeln!(out, "{head},skipped,,,,,{}", csv_field(why));
            }
            CellOutcome::Failed(why) => {
                let _ = writeln!(out, "{head},failed,,,,,{}", csv_field(why));
            }
        }
    }
    out
}

/// Human-readable table, one block per cell.
pub fn results_text(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "estimator: {}", report.estimator);
    for line in report.config_echo.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for c in &report.cells {
        let _ = writeln!(out);
        let mut title = format!("group {}", c.group);
        if let Some(w) = c.window {
            let _ = write!(title, ", window {} [{}, {}]", w.center, w.lo, w.hi);
            if w.truncated {
                title.push_str(" (truncated)");
            }
        }
        let _ = writeln!(out, "{title}, {} households", c.households);
        match &c.outcome {
            CellOutcome::Fitted(e) => {
                let width = e.names.iter().map(String::len).max().unwrap_or(0).max(9);
                let boot = e.boot_se.is_some();
                let _ = write!(out, "  {:<width$} {:>12} {:>12}", "parameter", "estimate", "se");
                if boot {
                    let _ = write!(out, " {:>12}", "boot_se");
                }
                out.push('\n');
                for (k, name) in e.names.iter().enumerate() {
                    let _ = write!(out, "  {name:<width$} {:>12} {:>12}", num(e.estimates[k]), num(e.se[k]));
                    if let Some(b) = &e.boot_se {
                        let _ = write!(out, " {:>12}", num(b[k]));
                    }
                    out.push('\n');
                }
                if !e.converged {
                    let _ = writeln!(out, "  warning: the optimizer did not converge");
                }
                for n in &e.notes {
                    let _ = writeln!(out, "  note: {n}");
                }
            }
            CellOutcome::Skipped(why) => {
                let _ = writeln!(out, "  skipped: {why}");
            }
            CellOutcome::Failed(why) => {
                let _ = writeln!(out, "  FAILED: {why}");
            }
        }
    }
    out
}

/// Plotting data: fitted cells only, finite estimates only. `se` is the
/// bootstrap standard error when one was computed, and `window_center` is
/// empty without windows.
pub fn figure_csv(report: &RunReport) -> String {
    let mut out = String::from("group,window_center,parameter,estimate,se\n");
    for c in &report.cells {
        let CellOutcome::Fitted(e) = &c.outcome else { continue };
        let center = c.window.map_or(String::new(), |w| w.center.to_string());
        for (k, name) in e.names.iter().enumerate() {
            let se = e.boot_se.as_ref().map_or(e.se[k], |b| b[k]);
            if !e.estimates[k].is_finite() {
                continue;
            }
            let _ = writeln!(
                out,
                "{},{center},{name},{},{}",
                csv_field(&c.group),
                num(e.estimates[k]),
                num(se)
            );
        }
    }
    out
}

/// Writes `results.csv`, `results.txt` and `figure.csv` into `dir`.
pub fn write_all(report: &RunReport, dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), results_csv(report))?;
    std::fs::write(dir.join("results.txt"), results_text(report))?;
    std::fs::write(dir.join("figure.csv"), figure_csv(report))
}
