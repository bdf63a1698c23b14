//! CSV rendering shared by the report types.

use crate::scalar::{to_f64, Real};

/// 17 significant digits, round-trip exact for `f64`.
pub fn num<T: Real>(x: T) -> String {
    let v = to_f64(x);
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// `prefix1..prefixd` column names.
pub fn indexed_columns(prefix: &str, d: usize) -> String {
    (1..=d).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

pub(crate) fn row<T: Real>(lead: &[String], values: &[T]) -> String {
    let mut cells: Vec<String> = lead.to_vec();
    cells.extend(values.iter().map(|&v| num(v)));
    cells.join(",")
}

pub(crate) fn finish(lines: Vec<String>) -> String {
    let mut out = lines.join("\n");
    out.push('\n');
    out
}
