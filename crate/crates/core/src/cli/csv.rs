//! Locale-independent CSV output and the line-list input format.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::fit::{ObservedDefect, DEFAULT_SIGMA};

pub const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Field {
    fn from(x: f64) -> Self {
        Field::Num(x)
    }
}

impl From<usize> for Field {
    fn from(x: usize) -> Self {
        Field::Int(x as i64)
    }
}

impl From<bool> for Field {
    fn from(x: bool) -> Self {
        Field::Int(x as i64)
    }
}

impl From<&str> for Field {
    fn from(x: &str) -> Self {
        Field::Text(x.to_string())
    }
}

impl From<String> for Field {
    fn from(x: String) -> Self {
        Field::Text(x)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Num(x) => f.write_str(&format_number(*x)),
            Field::Int(n) => write!(f, "{n}"),
            Field::Text(s) => f.write_str(s),
        }
    }
}

/// Nine significant digits: fixed notation for decimal exponents in
/// [−4, 14], scientific otherwise. Negative zero prints as zero.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return format!("{:.*}", SIGNIFICANT_DIGITS - 1, 0.0);
    }
    // the exponent after rounding to nine digits
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let exp: i32 = sci[sci.find('e').expect("scientific format") + 1..]
        .parse()
        .expect("integer exponent");
    if (-4..=14).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

/// Header line, then one line per row, all `\n` terminated.
pub fn csv_string(header: &[&str], rows: &[Vec<Field>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        assert_eq!(row.len(), header.len(), "rows must be rectangular");
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Field>]) -> io::Result<()> {
    fs::write(path, csv_string(header, rows))
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct InputError {
    pub line: usize,
    pub message: String,
}

/// Reads `defect_id,line_ghz[,sigma_ghz]` rows, grouped by id in order of
/// first appearance. Blank lines and `#` comments are skipped.
pub fn parse_lines_csv(text: &str) -> Result<Vec<ObservedDefect>, InputError> {
    let err = |line: usize, message: String| InputError { line, message };
    let mut rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = rows.next().ok_or_else(|| err(1, "empty input".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let with_sigma = match cols.as_slice() {
        ["defect_id", "line_ghz"] => false,
        ["defect_id", "line_ghz", "sigma_ghz"] => true,
        _ => {
            return Err(err(
                hline,
                format!("expected header `defect_id,line_ghz[,sigma_ghz]`, got `{header}`"),
            ))
        }
    };
    let mut out: Vec<ObservedDefect> = Vec::new();
    for (line, text) in rows {
        let cells: Vec<&str> = text.split(',').map(str::trim).collect();
        if cells.len() != cols.len() {
            return Err(err(line, format!("expected {} fields, got {}", cols.len(), cells.len())));
        }
        if cells[0].is_empty() {
            return Err(err(line, "empty defect_id".into()));
        }
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("{what} `{s}` is not a finite number")))
        };
        let value = num(cells[1], "line_ghz")?;
        let sigma = if with_sigma { num(cells[2], "sigma_ghz")? } else { DEFAULT_SIGMA };
        if !(sigma > 0.0) {
            return Err(err(line, format!("sigma_ghz must be positive, got {sigma}")));
        }
        match out.iter_mut().find(|d| d.id == cells[0]) {
            Some(d) => {
                if d.sigma != sigma {
                    return Err(err(line, format!("defect `{}` mixes sigma values", d.id)));
                }
                d.lines.push(value);
            }
            None => out.push(ObservedDefect {
                id: cells[0].to_string(),
                lines: vec![value],
                sigma,
            }),
        }
    }
    if out.is_empty() {
        return Err(err(hline, "no data rows".into()));
    }
    Ok(out)
}
