//! Curve and profile files with deterministic names and contents.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{IoContext, Result};

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '-' })
        .collect()
}

/// `<exp>_<metric>_<k>-<v>_....csv`, with parameters in the given order.
pub fn file_name(exp: &str, metric: &str, params: &[(&str, String)]) -> String {
    let mut name = format!("{}_{}", sanitize(exp), sanitize(metric));
    for (k, v) in params {
        let _ = write!(name, "_{}-{}", sanitize(k), sanitize(v));
    }
    name.push_str(".csv");
    name
}

/// First line names the metric and its parameters, then `x,y` rows.
pub fn render(metric: &str, params: &[(&str, String)], header: (&str, &str), rows: &[(f64, f64)]) -> String {
    let mut out = format!("# metric={metric}");
    for (k, v) in params {
        let _ = write!(out, " {k}={v}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{},{}", header.0, header.1);
    for (x, y) in rows {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

/// Writes a curve into `dir` and returns its path.
pub fn write_curve(
    dir: &Path,
    exp: &str,
    metric: &str,
    params: &[(&str, String)],
    header: (&str, &str),
    rows: &[(f64, f64)],
) -> Result<PathBuf> {
    let path = dir.join(file_name(exp, metric, params));
    std::fs::write(&path, render(metric, params, header, rows))
        .io_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
