//! CSV and JSON writers. CSV: header row, comma separator, LF line endings,
//! floats with 17 significant digits.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

/// `x` with 17 significant digits, or `inf`, `-inf`, `nan`.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Default)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[String]) -> Self {
        let mut csv = Csv::default();
        csv.row(header);
        csv
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, &self.text).map_err(|e| io_error(path, e))
    }
}

/// CSV file written row by row, each row flushed as soon as it is added.
pub struct StreamingCsv {
    file: File,
    path: std::path::PathBuf,
}

impl StreamingCsv {
    pub fn create(path: &Path, header: &[String]) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| io_error(path, e))?;
        let mut csv = StreamingCsv {
            file,
            path: path.to_path_buf(),
        };
        csv.row(header)?;
        Ok(csv)
    }

    pub fn row(&mut self, cells: &[String]) -> Result<(), CliError> {
        let line = format!("{}\n", cells.join(","));
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| io_error(&self.path, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn numbered(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(1.0), "1.0000000000000000e0");
        assert_eq!(num(-2.5e-300), "-2.5000000000000000e-300");
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num(f64::NAN), "nan");
        for x in [0.1, 1.0 / 3.0, 123456.789, -9.87654321e-17, f64::MIN_POSITIVE] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_layout() {
        let mut csv = Csv::new(&["a".into(), "b".into()]);
        csv.row(&["1".into(), num(0.5)]);
        assert_eq!(csv.text, "a,b\n1,5.0000000000000000e-1\n");
    }
}
