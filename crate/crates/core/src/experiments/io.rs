//! JSON documents and CSV result tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::montecarlo::ResultRow;
use super::summary::SummaryRow;
use crate::error::Result;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Pretty-printed with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn read_rows_file(path: &Path) -> Result<Vec<ResultRow>> {
    read_rows(BufReader::new(File::open(path)?))
}

pub fn write_rows<W: Write>(writer: W, rows: &[ResultRow]) -> Result<()> {
    write_csv(writer, rows)
}

pub fn write_summary<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    write_csv(writer, rows)
}

fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::montecarlo::CSV_SCHEMA_VERSION;
    use crate::inverse::{EstimationMethod, EstimationStatus};
    use crate::observation::ObservationKind;

    #[test]
    fn rows_round_trip_with_missing_values() {
        let row = ResultRow {
            schema_version: CSV_SCHEMA_VERSION,
            scenario: "two-player-crossing".into(),
            method: EstimationMethod::Baseline,
            obs_kind: ObservationKind::Partial,
            sigma: 0.05,
            seed_index: 3,
            noise_seed: u64::MAX,
            cosine_error: Some(0.125),
            position_error: None,
            failed: true,
            failure: Some("forward-ill-conditioned".into()),
            status: Some(EstimationStatus::Converged),
            nll: Some(1.5),
            presolve_nll: Some(1.25),
            kkt_residual: Some(3e-9),
            iterations: Some(12),
            estimate_runtime_s: None,
            predict_runtime_s: None,
        };
        let mut buf = Vec::new();
        write_rows(&mut buf, &[row.clone(), row.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("schema_version,scenario,method,obs_kind,sigma"));
        assert!(text.contains(",baseline,partial,0.05,3,"));
        assert_eq!(read_rows(&buf[..]).unwrap(), vec![row.clone(), row]);
    }
}
