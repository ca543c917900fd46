//! Per-iteration metrics and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "iter,objective,grad_norm,natgrad_norm,alpha,predicted_kl,realized_kl,solver_iters,backtracks,ms";

/// One training iteration. `None` renders as a blank field.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    /// Batch estimate of the objective at the parameters before the update.
    pub objective: f64,
    pub grad_norm: f64,
    pub natgrad_norm: Option<f64>,
    pub alpha: Option<f64>,
    pub predicted_kl: Option<f64>,
    pub realized_kl: Option<f64>,
    pub solver_iters: Option<usize>,
    pub backtracks: Option<usize>,
    pub ms: Option<f64>,
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn opt_int(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        [
            self.iter.to_string(),
            format_float(self.objective),
            format_float(self.grad_norm),
            opt_float(self.natgrad_norm),
            opt_float(self.alpha),
            opt_float(self.predicted_kl),
            opt_float(self.realized_kl),
            opt_int(self.solver_iters),
            opt_int(self.backtracks),
            opt_float(self.ms),
        ]
        .join(",")
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::InvalidArgument(format!(
                "expected 10 fields, got {} in `{line}`",
                fields.len()
            )));
        }
        fn parse<T: std::str::FromStr>(field: &str) -> Result<T> {
            field
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse field `{field}`")))
        }
        fn optional<T: std::str::FromStr>(field: &str) -> Result<Option<T>> {
            if field.is_empty() {
                Ok(None)
            } else {
                parse(field).map(Some)
            }
        }
        Ok(Self {
            iter: parse(fields[0])?,
            objective: parse(fields[1])?,
            grad_norm: parse(fields[2])?,
            natgrad_norm: optional(fields[3])?,
            alpha: optional(fields[4])?,
            predicted_kl: optional(fields[5])?,
            realized_kl: optional(fields[6])?,
            solver_iters: optional(fields[7])?,
            backtracks: optional(fields[8])?,
            ms: optional(fields[9])?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 + self.rows.len() * 200);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.to_csv());
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(CSV_HEADER) => {}
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unexpected header {other:?}"
                )));
            }
        }
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(MetricsRow::from_csv)
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// First iteration whose objective estimate reaches `threshold`.
    pub fn iterations_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.objective >= threshold)
            .map(|r| r.iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
            -1e3..1e3f64
        ]
    }

    prop_compose! {
        fn rows()(
            iter in 0usize..10_000,
            objective in finite(),
            grad_norm in finite(),
            natgrad_norm in proptest::option::of(finite()),
            alpha in proptest::option::of(finite()),
            predicted_kl in proptest::option::of(finite()),
            realized_kl in proptest::option::of(finite()),
            solver_iters in proptest::option::of(0usize..1000),
            backtracks in proptest::option::of(0usize..11),
            ms in proptest::option::of(0.0..1e6f64),
        ) -> MetricsRow {
            MetricsRow { iter, objective, grad_norm, natgrad_norm, alpha, predicted_kl, realized_kl, solver_iters, backtracks, ms }
        }
    }

    proptest! {
        #[test]
        fn rows_round_trip(row in rows()) {
            prop_assert_eq!(MetricsRow::from_csv(&row.to_csv()).unwrap(), row);
        }

        #[test]
        fn tables_round_trip(rows in proptest::collection::vec(rows(), 0..8)) {
            let table = MetricsTable { rows };
            prop_assert_eq!(MetricsTable::from_csv(&table.to_csv()).unwrap(), table);
        }
    }

    #[test]
    fn renders_seventeen_significant_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn blank_fields_for_missing_values() {
        let row = MetricsRow {
            iter: 3,
            objective: -1.0,
            grad_norm: 2.0,
            natgrad_norm: None,
            alpha: Some(0.05),
            predicted_kl: None,
            realized_kl: None,
            solver_iters: None,
            backtracks: None,
            ms: None,
        };
        assert_eq!(
            row.to_csv(),
            "3,-1.0000000000000000e0,2.0000000000000000e0,,5.0000000000000003e-2,,,,,"
        );
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(MetricsTable::from_csv("iter,objective\n").is_err());
    }
}
