use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Dataset, Origin};
use crate::error::{Error, Result};

/// Seventeen significant digits: enough to round-trip any finite double.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Column layout of a dataset CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Feature columns in order; `None` takes every column other than the
    /// label and id columns.
    pub feature_columns: Option<Vec<String>>,
    pub label_column: Option<String>,
    pub id_column: Option<String>,
    /// Fail when the label column is absent.
    pub require_labels: bool,
    /// Subtracted from every raw label, e.g. 1 for labels stored as `1..=K`.
    pub label_base: i64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            feature_columns: None,
            label_column: Some("label".into()),
            id_column: Some("id".into()),
            require_labels: false,
            label_base: 0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    origin: Origin,
    n: usize,
    d: usize,
    has_labels: bool,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes `id,f0..,label` rows and an origin sidecar next to `path`.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..ds.d()).map(|j| format!("f{j}")));
    if ds.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (i, row) in ds.rows().enumerate() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(ds.ids()[i].to_string());
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        if let Some(l) = ds.labels() {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = Sidecar { origin: ds.origin, n: ds.n(), d: ds.d(), has_labels: ds.labels().is_some() };
    save_json(&meta, sidecar_path(path))
}

/// Reads a dataset; the origin comes from the sidecar when present.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let label_idx = schema.label_column.as_deref().and_then(find);
    if schema.require_labels && label_idx.is_none() {
        return Err(Error::Malformed {
            path: path.into(),
            line: 1,
            msg: format!("missing label column {:?}", schema.label_column.as_deref().unwrap_or("")),
        });
    }
    let id_idx = schema.id_column.as_deref().and_then(find);
    let feature_idx: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols
            .iter()
            .map(|c| {
                find(c).ok_or_else(|| Error::Malformed { path: path.into(), line: 1, msg: format!("missing column {c:?}") })
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| Some(i) != label_idx && Some(i) != id_idx).collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::Malformed { path: path.into(), line: 1, msg: "no feature columns".into() });
    }
    let mut features = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    let mut ids = Vec::new();
    for (row_no, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(row_no as u64 + 2, |p| p.line()) as usize;
        let bad = |msg: String| Error::Malformed { path: path.into(), line, msg };
        if rec.len() != headers.len() {
            return Err(bad(format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        for &j in &feature_idx {
            let v: f64 = rec[j].parse().map_err(|_| bad(format!("column {:?}: not a number: {:?}", headers[j], &rec[j])))?;
            features.push(v);
        }
        if let (Some(j), Some(out)) = (label_idx, labels.as_mut()) {
            let raw: i64 = rec[j].parse().map_err(|_| bad(format!("label is not an integer: {:?}", &rec[j])))?;
            let shifted = raw - schema.label_base;
            if shifted < 0 {
                return Err(bad(format!("label {raw} is below the label base {}", schema.label_base)));
            }
            out.push(shifted as usize);
        }
        ids.push(match id_idx {
            Some(j) => rec[j].parse().map_err(|_| bad(format!("id is not an integer: {:?}", &rec[j])))?,
            None => row_no as u64,
        });
    }
    if ids.is_empty() {
        return Err(Error::EmptyData("csv has no rows"));
    }
    let origin = match fs::read_to_string(sidecar_path(path)) {
        Ok(text) => serde_json::from_str::<Sidecar>(&text)?.origin,
        Err(_) => Origin::Source,
    };
    Dataset::with_ids(features, feature_idx.len(), labels, origin, ids)
}

/// Pretty JSON with a trailing newline.
pub fn save_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        let v = std::f64::consts::PI;
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn missing_labels_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "a,b\n1,2\n3,4\n").unwrap();
        let schema = CsvSchema { require_labels: true, ..CsvSchema::default() };
        assert!(matches!(load_csv(&p, &schema), Err(Error::Malformed { line: 1, .. })));
        let ds = load_csv(&p, &CsvSchema::default()).unwrap();
        assert_eq!(ds.d(), 2);
        assert!(ds.labels().is_none());
    }

    #[test]
    fn bad_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "a,label\n1,0\nzz,1\n").unwrap();
        match load_csv(&p, &CsvSchema::default()) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_based_labels_shift_down() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("uci.csv");
        fs::write(&p, "age,chol,num\n50,200,1\n61,250,5\n").unwrap();
        let schema = CsvSchema { label_column: Some("num".into()), label_base: 1, ..CsvSchema::default() };
        let ds = load_csv(&p, &schema).unwrap();
        assert_eq!(ds.labels().unwrap(), &[0, 4]);
    }
}
