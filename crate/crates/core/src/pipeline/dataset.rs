//! Analysis matrix CSV: `latitude,longitude,bio1,...,bio19,presence`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::climate::{BioclimVector, ExtractedSample};
use crate::discovery::DataMatrix;
use crate::inference::LabeledSamples;
use crate::sampling::SamplePoint;
use crate::{bio_names, N_BIO};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad dataset: {0}")]
    Format(String),
}

pub fn header() -> Vec<String> {
    let mut h = vec!["latitude".to_string(), "longitude".to_string()];
    h.extend((1..=N_BIO).map(|i| format!("bio{i}")));
    h.push("presence".into());
    h
}

pub fn write_dataset<W: Write>(rows: &[ExtractedSample], writer: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header())?;
    for r in rows {
        let mut rec = vec![r.point.latitude.to_string(), r.point.longitude.to_string()];
        rec.extend(r.bio.0.iter().map(|v| v.to_string()));
        rec.push(r.point.presence.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_dataset(rows: &[ExtractedSample], path: &Path) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    write_dataset(rows, &mut buf)?;
    crate::http::write_atomic(path, &buf)?;
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<ExtractedSample>, DatasetError> {
    let mut r = csv::Reader::from_reader(reader);
    let got: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if got != header() {
        return Err(DatasetError::Format(format!("unexpected header {}", got.join(","))));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64, DatasetError> {
            let s = rec.get(k).unwrap_or("").trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DatasetError::Format(format!("row {}: bad number {s:?}", line + 1)))
        };
        let mut bio = [0.0; N_BIO];
        for (j, b) in bio.iter_mut().enumerate() {
            *b = num(2 + j)?;
        }
        let presence = match rec.get(2 + N_BIO).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => return Err(DatasetError::Format(format!("row {}: presence {other:?}", line + 1))),
        };
        out.push(ExtractedSample {
            point: SamplePoint { latitude: num(0)?, longitude: num(1)?, presence },
            bio: BioclimVector(bio),
        });
    }
    Ok(out)
}

pub fn import_dataset(path: &Path) -> Result<Vec<ExtractedSample>, DatasetError> {
    read_dataset(File::open(path)?)
}

/// `BIO1..BIO19` feature matrix of the rows.
pub fn feature_matrix(rows: &[ExtractedSample]) -> Result<DataMatrix, DatasetError> {
    let x = DMatrix::from_fn(rows.len(), N_BIO, |i, j| rows[i].bio.0[j]);
    DataMatrix::new(x, bio_names()).map_err(|e| DatasetError::Format(e.to_string()))
}

pub fn labeled_samples(rows: &[ExtractedSample]) -> Result<LabeledSamples, DatasetError> {
    let y = rows.iter().map(|r| r.point.presence).collect();
    LabeledSamples::new(feature_matrix(rows)?, y).map_err(|e| DatasetError::Format(e.to_string()))
}
