use serde::Serialize;
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Seventeen significant digits, enough to round-trip any binary64.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub struct Output {
    dir: PathBuf,
    format: Format,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: &Path, format: Format) -> Self {
        Self { dir: dir.to_path_buf(), format, written: Vec::new() }
    }

    pub fn subdir(&self, name: &str) -> Self {
        Self::new(&self.dir.join(name), self.format)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn path(&mut self, file: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let p = self.dir.join(file);
        self.written.push(p.clone());
        Ok(p)
    }

    /// A numeric table in the chosen format.
    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> std::io::Result<()> {
        match self.format {
            Format::Csv => {
                let p = self.path(&format!("{name}.csv"))?;
                let mut w = csv::Writer::from_path(p)?;
                w.write_record(header)?;
                for r in rows {
                    w.write_record(r.iter().map(|&x| fmt_f64(x)))?;
                }
                w.flush()
            }
            Format::Json => {
                let records: Vec<Value> = rows
                    .iter()
                    .map(|r| {
                        let m: Map<String, Value> =
                            header.iter().zip(r).map(|(k, &x)| (k.to_string(), Value::from(x))).collect();
                        Value::Object(m)
                    })
                    .collect();
                self.json(name, &records)
            }
        }
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let p = self.path(&format!("{name}.json"))?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(p, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }
}
