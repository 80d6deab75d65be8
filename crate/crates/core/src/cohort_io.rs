//! Cohort CSV format: header `subject_id,age,group,r_<region_id>...`, one
//! subject per row, floats written with 17 significant digits so values
//! survive a round trip bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::covariance::FeatureMatrix;
use crate::error::{Error, Result};

pub const REGION_PREFIX: &str = "r_";
const FIXED_COLUMNS: [&str; 3] = ["subject_id", "age", "group"];

/// Formats a float with 17 significant digits (scientific notation).
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the cohort as CSV. An empty cohort produces a header-only file.
pub fn write_csv<W: Write>(data: &FeatureMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(data.region_ids().iter().map(|r| format!("{REGION_PREFIX}{r}")));
    w.write_record(&header).map_err(csv_io)?;
    for (i, row) in data.features().rows().into_iter().enumerate() {
        let mut rec = vec![data.subject_ids()[i].clone(), format_float(data.ages()[i]), data.groups()[i].clone()];
        rec.extend(row.iter().map(|&v| format_float(v)));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
    Ok(())
}

pub fn to_csv_string(data: &FeatureMatrix) -> String {
    let mut buf = Vec::new();
    write_csv(data, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Exports the cohort to `path`.
pub fn export_csv(data: &FeatureMatrix, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    write_csv(data, std::io::BufWriter::new(file)).map_err(|e| with_path(e, path))
}

/// Parses a cohort CSV. Requires at least two subjects.
pub fn read_csv<R: Read>(input: R, path: &Path) -> Result<FeatureMatrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.into(), line, msg };
    let header = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() < 4 || header.iter().take(3).ne(FIXED_COLUMNS.iter().copied()) {
        return Err(parse_err(
            1,
            format!("header must start with {} followed by region columns", FIXED_COLUMNS.join(",")),
        ));
    }
    let mut region_ids = Vec::with_capacity(header.len() - 3);
    for h in header.iter().skip(3) {
        match h.strip_prefix(REGION_PREFIX) {
            Some(id) if !id.is_empty() => region_ids.push(id.to_string()),
            _ => return Err(parse_err(1, format!("region column {h:?} lacks the {REGION_PREFIX:?} prefix"))),
        }
    }
    let m = region_ids.len();
    let (mut ids, mut ages, mut groups, mut values) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != m + 3 {
            return Err(parse_err(line, format!("expected {} fields, found {}", m + 3, rec.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| parse_err(line, format!("not a number: {s:?}")))
        };
        ids.push(rec[0].to_string());
        ages.push(num(&rec[1])?);
        groups.push(rec[2].to_string());
        for s in rec.iter().skip(3) {
            values.push(num(s)?);
        }
    }
    let n = ids.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let features = Array2::from_shape_vec((n, m), values).expect("row lengths checked");
    FeatureMatrix::new(ids, ages, groups, region_ids, features)
}

pub fn import_csv(path: &Path) -> Result<FeatureMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    read_csv(std::io::BufReader::new(file), path)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io { path: "<csv>".into(), source: std::io::Error::other(e.to_string()) }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::Io { path: path.into(), source },
        other => other,
    }
}
