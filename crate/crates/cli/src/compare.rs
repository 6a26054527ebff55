//! Cell-by-cell comparison of two CSV files with the same header.

use crate::CliError;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { abs: 5e-3, rel: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// 1-based data row.
    pub row: usize,
    pub column: String,
    pub produced: String,
    pub reference: String,
    /// Absolute difference; NaN for text cells.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub tolerances: Tolerances,
    pub cells: usize,
    pub max_abs_difference: f64,
    pub violations: Vec<Violation>,
}

impl CompareReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn read(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let schema = |m: String| CliError::Validation(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| schema(e.to_string()))?;
    let header = r
        .headers()
        .map_err(|e| schema(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(|s| s.trim().to_string()).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| schema(e.to_string()))?;
    Ok((header, rows))
}

/// A numeric cell passes when `|p − r| ≤ abs + rel·|r|`; text cells must be
/// equal. Differing headers or row counts are schema errors.
pub fn compare_csv(produced: &Path, reference: &Path, tol: Tolerances) -> Result<CompareReport, CliError> {
    let (hp, rp) = read(produced)?;
    let (hr, rr) = read(reference)?;
    if hp != hr {
        return Err(CliError::Validation(format!("schema mismatch: header {hp:?} vs {hr:?}")));
    }
    if rp.len() != rr.len() {
        return Err(CliError::Validation(format!(
            "schema mismatch: {} rows vs {} rows",
            rp.len(),
            rr.len()
        )));
    }
    let mut report = CompareReport {
        tolerances: tol,
        cells: 0,
        max_abs_difference: 0.0,
        violations: Vec::new(),
    };
    for (i, (a, b)) in rp.iter().zip(&rr).enumerate() {
        for (k, name) in hp.iter().enumerate() {
            let (x, y) = (&a[k], &b[k]);
            report.cells += 1;
            let bad = match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(p), Ok(r)) => {
                    let d = (p - r).abs();
                    if d.is_finite() {
                        report.max_abs_difference = report.max_abs_difference.max(d);
                    }
                    let equal_special = p.to_bits() == r.to_bits();
                    (!(d <= tol.abs + tol.rel * r.abs()) && !equal_special).then_some(d)
                }
                _ => (x != y).then_some(f64::NAN),
            };
            if let Some(d) = bad {
                report.violations.push(Violation {
                    row: i + 1,
                    column: name.clone(),
                    produced: x.clone(),
                    reference: y.clone(),
                    difference: d,
                });
            }
        }
    }
    Ok(report)
}
