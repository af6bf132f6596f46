//! The CSV dialect used for every output: comma separated, header row, LF
//! line endings, floats with 17 significant digits, and optional `# ` comment
//! lines before the header.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Round-trippable float formatting.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            comments: Vec::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_floats(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| fmt_f64(*v)).collect());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.comments {
            if c.is_empty() {
                s.push_str("#\n");
            } else {
                let _ = writeln!(s, "# {c}");
            }
        }
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.render().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t = CsvTable::default();
        for line in text.lines() {
            if let Some(c) = line.strip_prefix('#') {
                t.comments.push(c.strip_prefix(' ').unwrap_or(c).to_string());
            } else if line.is_empty() {
                continue;
            } else if t.header.is_empty() {
                t.header = line.split(',').map(str::to_string).collect();
            } else {
                let row: Vec<String> = line.split(',').map(str::to_string).collect();
                if row.len() != t.header.len() {
                    return Err(Error::InvalidConfig(format!(
                        "csv row has {} fields, header has {}",
                        row.len(),
                        t.header.len()
                    )));
                }
                t.rows.push(row);
            }
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut text = String::new();
        for line in f.lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::parse(&text)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("not a number: {s:?}"))),
    }
}

/// Rows of a matrix as a table with columns `x0, x1, ...`.
pub fn matrix_table(x: &DMatrix<f64>) -> CsvTable {
    let names: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut t = CsvTable::new(&refs);
    for i in 0..x.nrows() {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        t.push_floats(&row);
    }
    t
}

/// All columns of a table parsed as floats, one sample per row.
pub fn table_matrix(t: &CsvTable) -> Result<DMatrix<f64>> {
    let d = t.header.len();
    let mut data = Vec::with_capacity(t.rows.len() * d);
    for r in &t.rows {
        for v in r {
            data.push(parse_f64(v)?);
        }
    }
    Ok(DMatrix::from_row_slice(t.rows.len(), d, &data))
}

pub fn write_matrix(path: &Path, x: &DMatrix<f64>, comments: &[String]) -> Result<()> {
    let mut t = matrix_table(x);
    t.comments = comments.to_vec();
    t.write(path)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    table_matrix(&CsvTable::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bitwise() {
        for &x in &[0.1, -1.0 / 3.0, 1e-300, 6.02e23, 0.0, -0.0, f64::MIN_POSITIVE] {
            let back: f64 = parse_f64(&fmt_f64(x)).unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -3.5, 1e-9, 7.0, 1.0 / 7.0]);
        write_matrix(&p, &x, &["hello".into()]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# hello\nx0,x1\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_matrix(&p).unwrap(), x);
    }
}
