//! Precomputed feature files: CSV (`label,f0,...,f{d-1}`) and JSON lines
//! (`{"label": ..., "features": [...]}`).

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use shotcast_core::{ClassLabel, DMatrix, FeatureSet};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Jsonl,
}

impl FromStr for FeatureFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(FeatureFormat::Csv),
            "jsonl" | "ndjson" => Ok(FeatureFormat::Jsonl),
            other => Err(CliError::UnknownFormat(other.to_string())),
        }
    }
}

impl FeatureFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        ext.parse()
    }
}

/// Per-class sample pools. Classes are sorted; samples keep file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    classes: Vec<ClassLabel>,
    pools: Vec<DMatrix<f64>>,
    dim: usize,
}

impl FeatureStore {
    pub fn from_rows(rows: Vec<(ClassLabel, Vec<f64>)>) -> Result<Self> {
        let Some(dim) = rows.first().map(|r| r.1.len()) else {
            return Err(CliError::EmptyFile);
        };
        let mut grouped: std::collections::BTreeMap<ClassLabel, Vec<f64>> = Default::default();
        for (label, values) in rows {
            if values.len() != dim {
                return Err(CliError::RaggedDimensions { line: 0, expected: dim, found: values.len() });
            }
            grouped.entry(label).or_default().extend(values);
        }
        let (classes, pools) = grouped
            .into_iter()
            .map(|(label, flat)| {
                let count = flat.len() / dim;
                (label, DMatrix::from_vec(dim, count, flat))
            })
            .unzip();
        Ok(Self { classes, pools, dim })
    }

    pub fn from_feature_set(set: &FeatureSet) -> Result<Self> {
        Self::from_rows(set.labels().iter().cloned().zip(set.vectors().iter().map(|v| v.as_slice().to_vec())).collect())
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    /// `dim × count` samples of class `i`.
    pub fn pool(&self, i: usize) -> &DMatrix<f64> {
        &self.pools[i]
    }

    pub fn pools(&self) -> &[DMatrix<f64>] {
        &self.pools
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_samples(&self) -> usize {
        self.pools.iter().map(|p| p.ncols()).sum()
    }

    /// All samples as one labeled set, class by class.
    pub fn to_feature_set(&self) -> Result<FeatureSet> {
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for (label, pool) in self.classes.iter().zip(&self.pools) {
            for col in pool.column_iter() {
                vectors.push(col.into_owned());
                labels.push(label.clone());
            }
        }
        Ok(FeatureSet::new(vectors, labels)?)
    }
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureStore> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_features(BufReader::new(file), format)
}

pub fn read_features(reader: impl Read, format: FeatureFormat) -> Result<FeatureStore> {
    let rows = match format {
        FeatureFormat::Csv => read_csv(reader)?,
        FeatureFormat::Jsonl => read_jsonl(BufReader::new(reader))?,
    };
    FeatureStore::from_rows(rows)
}

fn parse_value(raw: &str, line: u64) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| CliError::Parse { line, message: format!("invalid number `{raw}`") })?;
    finite(v, line)
}

fn finite(v: f64, line: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Parse { line, message: "non-finite feature value".into() })
    }
}

fn read_csv(reader: impl Read) -> Result<Vec<(ClassLabel, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::Parse { line: 1, message: e.to_string() })?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(CliError::EmptyFile);
    }
    if header[0].trim() != "label" {
        return Err(CliError::Parse { line: 1, message: "first column must be `label`".into() });
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(CliError::Parse { line: 1, message: "no feature columns".into() });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() - 1 != dim {
            return Err(CliError::RaggedDimensions { line, expected: dim, found: record.len() - 1 });
        }
        let values = record.iter().skip(1).map(|f| parse_value(f, line)).collect::<Result<Vec<f64>>>()?;
        rows.push((ClassLabel::parse(&record[0]), values));
    }
    if rows.is_empty() {
        return Err(CliError::EmptyFile);
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct JsonRow {
    label: serde_json::Value,
    features: Vec<f64>,
}

fn read_jsonl(reader: impl BufRead) -> Result<Vec<(ClassLabel, Vec<f64>)>> {
    let mut rows: Vec<(ClassLabel, Vec<f64>)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| CliError::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(&line).map_err(|e| CliError::Parse { line: line_no, message: e.to_string() })?;
        let label = match &row.label {
            serde_json::Value::Number(n) if n.is_i64() => ClassLabel::Int(n.as_i64().expect("checked")),
            serde_json::Value::String(s) => ClassLabel::parse(s),
            other => return Err(CliError::Parse { line: line_no, message: format!("unsupported label {other}") }),
        };
        if let Some(first) = rows.first() {
            if first.1.len() != row.features.len() {
                return Err(CliError::RaggedDimensions { line: line_no, expected: first.1.len(), found: row.features.len() });
            }
        }
        if row.features.is_empty() {
            return Err(CliError::Parse { line: line_no, message: "no features".into() });
        }
        for &v in &row.features {
            finite(v, line_no)?;
        }
        rows.push((label, row.features));
    }
    if rows.is_empty() {
        return Err(CliError::EmptyFile);
    }
    Ok(rows)
}

/// Writes a store in either format, class by class.
pub fn write_features(store: &FeatureStore, mut out: impl Write, format: FeatureFormat) -> std::io::Result<()> {
    match format {
        FeatureFormat::Csv => {
            let mut header = vec!["label".to_string()];
            header.extend((0..store.dim).map(|j| format!("f{j}")));
            writeln!(out, "{}", header.join(","))?;
            for (label, pool) in store.classes.iter().zip(&store.pools) {
                for col in pool.column_iter() {
                    let values: Vec<String> = col.iter().map(|v| v.to_string()).collect();
                    writeln!(out, "{label},{}", values.join(","))?;
                }
            }
        }
        FeatureFormat::Jsonl => {
            for (label, pool) in store.classes.iter().zip(&store.pools) {
                for col in pool.column_iter() {
                    let row = serde_json::json!({ "label": label, "features": col.iter().collect::<Vec<_>>() });
                    writeln!(out, "{row}")?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "label,f0,f1\ncat,1,2\ndog,3,4\ncat,5,6\n";

    #[test]
    fn csv_groups_and_sorts() {
        let s = read_features(CSV.as_bytes(), FeatureFormat::Csv).unwrap();
        assert_eq!(s.classes(), &[ClassLabel::from("cat"), ClassLabel::from("dog")]);
        assert_eq!(s.pool(0).column(1).as_slice(), &[5.0, 6.0]);
        assert_eq!(s.dim(), 2);
        assert_eq!(s.n_samples(), 3);
    }

    #[test]
    fn distinct_errors() {
        let ragged = "label,f0,f1\na,1,2\nb,3\n";
        assert!(matches!(
            read_features(ragged.as_bytes(), FeatureFormat::Csv),
            Err(CliError::RaggedDimensions { line: 3, expected: 2, found: 1 })
        ));
        assert!(matches!(read_features("".as_bytes(), FeatureFormat::Csv), Err(CliError::EmptyFile)));
        assert!(matches!(read_features("label,f0\n".as_bytes(), FeatureFormat::Csv), Err(CliError::EmptyFile)));
        assert!(matches!(read_features("".as_bytes(), FeatureFormat::Jsonl), Err(CliError::EmptyFile)));
        assert!(matches!("parquet".parse::<FeatureFormat>(), Err(CliError::UnknownFormat(_))));
        assert!(matches!(FeatureFormat::from_path(Path::new("x.bin")), Err(CliError::UnknownFormat(_))));
        let jl = "{\"label\": 1, \"features\": [1.0, 2.0]}\n{\"label\": 2, \"features\": [1.0]}\n";
        assert!(matches!(read_features(jl.as_bytes(), FeatureFormat::Jsonl), Err(CliError::RaggedDimensions { line: 2, .. })));
        assert!(matches!(read_features("label,f0\na,nan\n".as_bytes(), FeatureFormat::Csv), Err(CliError::Parse { .. })));
    }

    #[test]
    fn formats_round_trip() {
        let s = read_features("label,f0,f1\n3,0.5,-1\n1,2.25,1e-3\nx,0,7\n".as_bytes(), FeatureFormat::Csv).unwrap();
        for fmt in [FeatureFormat::Csv, FeatureFormat::Jsonl] {
            let mut buf = Vec::new();
            write_features(&s, &mut buf, fmt).unwrap();
            assert_eq!(read_features(buf.as_slice(), fmt).unwrap(), s);
        }
    }
}
