//! CSV tables: a header row, comma-separated, numbers to 12 significant digits.

use std::path::Path;

use replab::analysis::LayerCurve;
use replab::ingest::atomic_write_str;
use replab::probe::ProbeResult;
use replab::similarity::DiagMaxPoint;
use replab::{CkaMatrix, Error, Result};

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Formats like C's `%.12g`; undefined values print as `NaN`.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = SIGNIFICANT_DIGITS;
    let sci = format!("{:.*e}", p - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    fmt_num(v.unwrap_or(f64::NAN))
}

fn fmt_opt_index(v: Option<usize>) -> String {
    v.map_or_else(|| "NaN".into(), |i| i.to_string())
}

/// Parses a number written by [`fmt_num`].
pub fn parse_num(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("not a number: {s:?}")))
}

/// A parsed table: header plus rows of raw fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are UTF-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r
            .headers()
            .map_err(|e| Error::Format(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| {
                rec.map(|rec| rec.iter().map(str::to_string).collect())
                    .map_err(|e| Error::Format(e.to_string()))
            })
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Table { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_csv(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write_str(path, &self.to_csv())
    }

    /// Column `name` parsed as numbers.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("no column {name:?}")))?;
        self.rows.iter().map(|r| parse_num(&r[j])).collect()
    }
}

/// Rows and columns labelled with the full layer tags.
pub fn cka_matrix_table(grid: &CkaMatrix) -> Table {
    let mut header = vec!["layer".to_string()];
    header.extend(grid.col_tags().iter().map(|t| t.to_string()));
    let mut table = Table { header, rows: Vec::new() };
    for (tag, row) in grid.row_tags().iter().zip(grid.values().rows()) {
        let mut fields = vec![tag.to_string()];
        fields.extend(row.iter().map(|&v| fmt_num(v)));
        table.push(fields);
    }
    table
}

/// The numeric body of a table written by [`cka_matrix_table`].
pub fn parse_cka_matrix_values(table: &Table) -> Result<Vec<Vec<f64>>> {
    table
        .rows
        .iter()
        .map(|r| r[1..].iter().map(|s| parse_num(s)).collect())
        .collect()
}

/// `argmax` is the layer index of the most similar column layer.
pub fn diag_max_table(points: &[DiagMaxPoint]) -> Table {
    let mut table = Table::new(&["layer_index", "diag", "max", "argmax"]);
    for p in points {
        table.push(vec![
            p.layer_index.to_string(),
            fmt_opt(p.diag),
            fmt_opt(p.max),
            fmt_opt_index(p.argmax_layer_index),
        ]);
    }
    table
}

pub fn curve_table(curve: &LayerCurve, value_name: &str) -> Table {
    let mut table = Table::new(&["layer", "layer_index", "parity", "block_group", value_name]);
    for p in &curve.points {
        table.push(vec![
            p.tag.to_string(),
            p.tag.layer_index.to_string(),
            p.tag.parity.to_string(),
            p.tag.block_group.map_or_else(String::new, |g| g.to_string()),
            fmt_opt(p.value),
        ]);
    }
    table
}

pub fn probe_table(results: &[ProbeResult]) -> Table {
    let mut table = Table::new(&[
        "layer",
        "layer_index",
        "parity",
        "block_group",
        "train_accuracy",
        "test_accuracy",
        "converged",
    ]);
    for r in results {
        table.push(vec![
            r.tag.to_string(),
            r.tag.layer_index.to_string(),
            r.tag.parity.to_string(),
            r.tag.block_group.map_or_else(String::new, |g| g.to_string()),
            fmt_num(r.train_accuracy),
            fmt_num(r.test_accuracy),
            r.converged.to_string(),
        ]);
    }
    table
}
