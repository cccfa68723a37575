//! Parsers for the text inputs accepted by the command-line tool.
//!
//! CSV inputs are comma separated with a header row; columns are matched by
//! name and extra columns are ignored.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bench::{BenchConfig, BenchError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InputError {
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}, column `{column}`: {reason} (`{value}`)")]
    BadValue {
        line: u64,
        column: String,
        value: String,
        reason: String,
    },
    #[error("input has no data rows")]
    Empty,
    #[error("malformed json: {0}")]
    Json(String),
    #[error(transparent)]
    Config(#[from] BenchError),
}

struct Table {
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn parse(text: &str) -> Result<Self, InputError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| InputError::Csv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| InputError::Csv(e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            rows.push((line, record.iter().map(str::to_string).collect()));
        }
        if rows.is_empty() {
            return Err(InputError::Empty);
        }
        Ok(Self { headers, rows })
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn column<T>(&self, name: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<Vec<T>>, InputError> {
        let Some(i) = self.index(name) else {
            return Ok(None);
        };
        self.rows
            .iter()
            .map(|(line, row)| {
                let value = row.get(i).map_or("", String::as_str);
                parse(value).map_err(|reason| InputError::BadValue {
                    line: *line,
                    column: name.to_string(),
                    value: value.to_string(),
                    reason,
                })
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    fn required<T>(&self, name: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, InputError> {
        self.column(name, parse)?
            .ok_or_else(|| InputError::MissingColumn(name.to_string()))
    }
}

fn finite(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err("value is not finite".into()),
        Err(_) => Err("not a number".into()),
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

fn count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v = finite(s).map_err(|_| "not a nonnegative integer".to_string())?;
    if v < 0.0 {
        Err("count is negative".into())
    } else if v.fract() != 0.0 || v > u64::MAX as f64 {
        Err("count is not an integer".into())
    } else {
        Ok(v as u64)
    }
}

/// Observations for Gaussian smoothing: `y`, optional known `sd`, optional
/// positions `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussInput {
    pub x: Option<Vec<f64>>,
    pub y: Vec<f64>,
    pub sd: Option<Vec<f64>>,
}

pub fn parse_gauss_input(text: &str) -> Result<GaussInput, InputError> {
    let table = Table::parse(text)?;
    Ok(GaussInput {
        x: table.column("x", finite)?,
        y: table.required("y", finite)?,
        sd: table.column("sd", positive)?,
    })
}

/// Column `count` of nonnegative integers.
pub fn parse_counts(text: &str) -> Result<Vec<u64>, InputError> {
    Table::parse(text)?.required("count", count)
}

/// Columns `betahat` and `se` (positive).
pub fn parse_ash_input(text: &str) -> Result<(Vec<f64>, Vec<f64>), InputError> {
    let table = Table::parse(text)?;
    Ok((table.required("betahat", finite)?, table.required("se", positive)?))
}

/// Parses and validates a benchmark configuration.
pub fn parse_bench_config(text: &str) -> Result<BenchConfig, InputError> {
    let config: BenchConfig = serde_json::from_str(text).map_err(|e| InputError::Json(e.to_string()))?;
    config.scenarios()?;
    Ok(config)
}

/// Collapses repeated positions to the median of their values, sorted by
/// position.
pub fn dedupe_median(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for (&xi, &yi) in x.iter().zip(y) {
        // order-preserving key for finite floats
        let bits = xi.to_bits();
        let key = if xi.is_sign_negative() { !bits } else { bits | (1 << 63) };
        groups.entry(key).or_insert_with(|| (xi, Vec::new())).1.push(yi);
    }
    groups
        .into_values()
        .map(|(xi, ys)| (xi, crate::bench::median(&ys).expect("group is non-empty")))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_input_columns() {
        let g = parse_gauss_input("x,y\n1,2.5\n2, -1\n").unwrap();
        assert_eq!(g.y, vec![2.5, -1.0]);
        assert_eq!(g.x, Some(vec![1.0, 2.0]));
        assert_eq!(g.sd, None);
        let g = parse_gauss_input("y,sd\n1,0.5\n").unwrap();
        assert_eq!(g.sd, Some(vec![0.5]));
        assert!(matches!(parse_gauss_input("z\n1\n"), Err(InputError::MissingColumn(_))));
        assert!(matches!(parse_gauss_input("y\n"), Err(InputError::Empty)));
        assert!(matches!(parse_gauss_input("y,sd\n1,0\n"), Err(InputError::BadValue { .. })));
        assert!(matches!(parse_gauss_input("y\nNaN\n"), Err(InputError::BadValue { .. })));
    }

    #[test]
    fn counts() {
        assert_eq!(parse_counts("count\n0\n3\n4.0\n").unwrap(), vec![0, 3, 4]);
        for bad in ["count\n-1\n", "count\n1.5\n", "count\nabc\n", "count\n1e400\n"] {
            assert!(matches!(parse_counts(bad), Err(InputError::BadValue { .. })), "{bad}");
        }
        match parse_counts("count\n1\n2\n-3\n") {
            Err(InputError::BadValue { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ash_input() {
        let (b, s) = parse_ash_input("betahat,se\n1,1\n-2,0.5\n").unwrap();
        assert_eq!(b, vec![1.0, -2.0]);
        assert_eq!(s, vec![1.0, 0.5]);
        assert!(parse_ash_input("betahat\n1\n").is_err());
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(matches!(parse_gauss_input("x,y\n1,2\n3\n"), Err(InputError::Csv(_))));
    }

    #[test]
    fn bench_config() {
        let ok = r#"{"seed":3,"scenarios":[{"mean_fn":"bumps","noise":"poisson","min":0.1,"max":4,"len":64,"methods":["smash","anscombe"]}]}"#;
        assert_eq!(parse_bench_config(ok).unwrap().seed, 3);
        assert!(matches!(parse_bench_config("{"), Err(InputError::Json(_))));
        let bad = r#"{"scenarios":[{"mean_fn":"bumps","noise":"poisson","min":4,"max":1,"methods":["smash"]}]}"#;
        assert!(matches!(parse_bench_config(bad), Err(InputError::Config(_))));
        let huge = r#"{"scenarios":[{"mean_fn":"bumps","noise":"poisson","min":1,"max":4,"len":1099511627776,"methods":["smash"]}]}"#;
        assert!(matches!(parse_bench_config(huge), Err(InputError::Config(_))));
    }

    #[test]
    fn dedupe() {
        let (x, y) = dedupe_median(&[2.0, 1.0, 2.0, -1.0, 2.0], &[5.0, 1.0, 3.0, 0.0, 4.0]);
        assert_eq!(x, vec![-1.0, 1.0, 2.0]);
        assert_eq!(y, vec![0.0, 1.0, 4.0]);
        let (x, y) = dedupe_median(&[3.0, 3.0], &[1.0, 2.0]);
        assert_eq!((x, y), (vec![3.0], vec![1.5]));
    }
}
