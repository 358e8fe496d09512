//! Gradient-check reports and loss traces.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::gradcheck::{GradReport, ParamCheck};

fn worst_param(r: &GradReport) -> &str {
    r.params
        .iter()
        .fold(None::<&ParamCheck>, |m, p| match m {
            Some(m) if m.max_rel_error >= p.max_rel_error => Some(m),
            _ => Some(p),
        })
        .map_or("", |p| p.name.as_str())
}

/// Machine-readable report: one line of `key=value` fields per checked op.
pub fn grad_report_kv(reports: &[GradReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!(
            "op={} seed={} threshold={:?} max_rel_error={:?} max_abs_error={:?} worst_param={} passed={}\n",
            r.op,
            r.seed,
            r.threshold,
            r.max_rel_error(),
            r.max_abs_error(),
            worst_param(r),
            r.passed()
        ));
    }
    out
}

/// Human-readable table with one line per parameter group.
pub fn grad_report_table(reports: &[GradReport]) -> String {
    let mut out = format!(
        "{:<20} {:<12} {:>6} {:>12} {:>12}  {}\n",
        "op", "param", "len", "max_rel", "max_abs", "result"
    );
    for r in reports {
        for p in &r.params {
            out.push_str(&format!(
                "{:<20} {:<12} {:>6} {:>12.3e} {:>12.3e}  {}\n",
                r.op.name(),
                p.name,
                p.len,
                p.max_rel_error,
                p.max_abs_error,
                if p.passed { "pass" } else { "FAIL" }
            ));
        }
    }
    out
}

pub fn write_grad_report(path: impl AsRef<Path>, reports: &[GradReport]) -> Result<()> {
    write_bytes(path.as_ref(), grad_report_kv(reports).as_bytes())
}

pub fn write_loss_csv(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l:?}\n"));
    }
    write_bytes(path.as_ref(), out.as_bytes())
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let bytes = read_bytes(path.as_ref())?;
    let text = String::from_utf8_lossy(&bytes);
    let mut lines = text.lines();
    if lines.next() != Some("step,loss") {
        return Err(Error::parse(0, "missing step,loss header"));
    }
    let mut offset = "step,loss\n".len();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || Error::parse(offset, format!("malformed row {line:?}"));
        let (step, loss) = line.split_once(',').ok_or_else(bad)?;
        if step.parse::<usize>().map_err(|_| bad())? != i {
            return Err(bad());
        }
        out.push(loss.parse().map_err(|_| bad())?);
        offset += line.len() + 1;
    }
    Ok(out)
}
