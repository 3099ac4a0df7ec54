//! CSV input and output of datasets and weight vectors.
//!
//! A dataset file has a header row with `cluster_id`, `z` and `y` plus any
//! covariate columns. Cluster-level columns are named by the caller; the
//! remaining columns are individual-level unless an explicit list is given.

use std::io::{Read, Write};

use thiserror::Error;

use crate::data::{validate_dataset, DataError, MultilevelDataset, RawRow};

pub const CLUSTER_COLUMN: &str = "cluster_id";
pub const TREATMENT_COLUMN: &str = "z";
pub const OUTCOME_COLUMN: &str = "y";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: column `{column}`: cannot parse {value:?} as a number")]
    Parse { line: usize, column: String, value: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: DataError },
    #[error(transparent)]
    Data(DataError),
}

/// Line number in the file of a zero-based data row (the header is line 1).
fn line_of(row: usize) -> usize {
    row + 2
}

fn parse_cell(s: &str, line: usize, column: &str) -> Result<f64, IoError> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>().map_err(|_| IoError::Parse { line, column: column.into(), value: s.into() })
}

pub fn read_dataset<R: Read>(
    input: R,
    individual: Option<&[String]>,
    cluster_level: &[String],
) -> Result<MultilevelDataset, IoError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let find = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| IoError::MissingColumn(name.into()));
    let ci = find(CLUSTER_COLUMN)?;
    let zi = find(TREATMENT_COLUMN)?;
    let yi = find(OUTCOME_COLUMN)?;
    let x_names: Vec<String> = match individual {
        Some(x) => x.to_vec(),
        None => header
            .iter()
            .filter(|h| ![CLUSTER_COLUMN, TREATMENT_COLUMN, OUTCOME_COLUMN].contains(&h.as_str()))
            .filter(|h| !cluster_level.contains(h))
            .cloned()
            .collect(),
    };
    let xi: Vec<usize> = x_names.iter().map(|n| find(n)).collect::<Result<_, _>>()?;
    let vi: Vec<usize> = cluster_level.iter().map(|n| find(n)).collect::<Result<_, _>>()?;

    let mut raw = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = line_of(row);
        let cell = |j: usize| rec.get(j).unwrap_or("");
        raw.push(RawRow {
            cluster_id: cell(ci).to_string(),
            treatment: parse_cell(cell(zi), line, TREATMENT_COLUMN)?,
            outcome: parse_cell(cell(yi), line, OUTCOME_COLUMN)?,
            x: xi.iter().map(|&j| parse_cell(cell(j), line, &header[j])).collect::<Result<_, _>>()?,
            v: vi.iter().map(|&j| parse_cell(cell(j), line, &header[j])).collect::<Result<_, _>>()?,
        });
    }
    validate_dataset(raw, x_names, cluster_level.to_vec()).map_err(|e| match e {
        DataError::NonBinaryTreatment { row, .. }
        | DataError::MissingValue { row, .. }
        | DataError::RaggedCovariateVector { row, .. } => IoError::Invalid { line: line_of(row), source: e },
        other => IoError::Data(other),
    })
}

pub fn write_dataset<W: Write>(ds: &MultilevelDataset, out: W) -> Result<(), IoError> {
    let mut wr = csv::Writer::from_writer(out);
    let mut header = vec![CLUSTER_COLUMN.to_string(), TREATMENT_COLUMN.into(), OUTCOME_COLUMN.into()];
    header.extend(ds.individual_covariate_names().iter().cloned());
    header.extend(ds.cluster_covariate_names().iter().cloned());
    wr.write_record(&header)?;
    for r in ds.rows() {
        let mut rec = vec![r.cluster_id.clone(), r.treatment.to_string(), r.outcome.to_string()];
        rec.extend(r.x.iter().map(f64::to_string));
        rec.extend(r.v.iter().map(f64::to_string));
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads the `weight` column, or the first column if there is none.
pub fn read_weights<R: Read>(input: R) -> Result<Vec<f64>, IoError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let j = header.iter().position(|h| h == "weight").unwrap_or(0);
    let name = header.get(j).cloned().unwrap_or_else(|| "weight".into());
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let w = parse_cell(rec.get(j).unwrap_or(""), line_of(row), &name)?;
        if !(w.is_finite() && w >= 0.0) {
            return Err(IoError::Parse { line: line_of(row), column: name, value: rec.get(j).unwrap_or("").into() });
        }
        out.push(w);
    }
    Ok(out)
}
