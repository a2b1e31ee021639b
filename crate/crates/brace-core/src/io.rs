//! CSV and JSON serialization for datasets and chain traces.
//!
//! All reals are written with Rust's shortest round-trip formatting, so
//! reading a file back reproduces the original doubles bit for bit. Matrix
//! CSVs carry a header row of feature names with one row per sample; the
//! response is a one-column CSV aligned by row order.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{BraceError, Result};
use crate::gibbs::ChainTrace;

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, header: &[String]) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(BraceError::invalid(format!(
            "{} header names for {} columns",
            header.len(),
            m.ncols()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    let mut record = Vec::with_capacity(m.ncols());
    for i in 0..m.nrows() {
        record.clear();
        for j in 0..m.ncols() {
            record.push(format!("{}", m[(i, j)]));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
    let p = header.len();
    let mut values: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for record in r.records() {
        let record = record?;
        if record.len() != p {
            return Err(BraceError::invalid(format!(
                "row {} has {} fields, expected {p} ({})",
                n + 1,
                record.len(),
                path.display()
            )));
        }
        for field in record.iter() {
            values.push(parse_f64(field, path)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(BraceError::invalid(format!(
            "no data rows in {}",
            path.display()
        )));
    }
    Ok((DMatrix::from_row_slice(n, p, &values), header))
}

pub fn write_response_csv(path: &Path, y: &DVector<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["response"])?;
    for v in y.iter() {
        w.write_record([format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_response_csv(path: &Path) -> Result<DVector<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut values = Vec::new();
    for record in r.records() {
        let record = record?;
        match record.get(0) {
            Some(field) => values.push(parse_f64(field, path)?),
            None => {
                return Err(BraceError::invalid(format!(
                    "empty row in {}",
                    path.display()
                )))
            }
        }
    }
    if values.is_empty() {
        return Err(BraceError::invalid(format!(
            "no data rows in {}",
            path.display()
        )));
    }
    Ok(DVector::from_vec(values))
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        BraceError::invalid(format!(
            "could not parse '{field}' as a number in {}",
            path.display()
        ))
    })
}

/// File names of the three trace CSVs inside a run directory.
pub const TRACE_BETA: &str = "beta.csv";
pub const TRACE_SCALARS: &str = "scalars.csv";
pub const TRACE_Z: &str = "z.csv";

/// Writes beta.csv (p columns), scalars.csv, and z.csv into `dir`.
pub fn write_trace(dir: &Path, trace: &ChainTrace) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let p = trace.p();

    let mut w = csv::Writer::from_path(dir.join(TRACE_BETA))?;
    w.write_record(&trace.feature_names)?;
    let mut record = Vec::with_capacity(p);
    for beta in &trace.beta {
        record.clear();
        for v in beta.iter() {
            record.push(format!("{v}"));
        }
        w.write_record(&record)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(TRACE_SCALARS))?;
    w.write_record(["sigma2", "gamma2", "alpha", "k", "log_marginal"])?;
    for i in 0..trace.len() {
        w.write_record([
            format!("{}", trace.sigma2[i]),
            format!("{}", trace.gamma2[i]),
            format!("{}", trace.alpha[i]),
            format!("{}", trace.k[i]),
            format!("{}", trace.log_marginal[i]),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(TRACE_Z))?;
    w.write_record(&trace.feature_names)?;
    for z in &trace.z {
        record.clear();
        for label in z {
            record.push(format!("{label}"));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace directory written by [`write_trace`].
pub fn read_trace(dir: &Path) -> Result<ChainTrace> {
    let (beta_m, feature_names) = read_matrix_csv(&dir.join(TRACE_BETA))?;
    let t = beta_m.nrows();
    let beta: Vec<DVector<f64>> = (0..t).map(|i| beta_m.row(i).transpose()).collect();

    let mut r = csv::Reader::from_path(dir.join(TRACE_SCALARS))?;
    let mut sigma2 = Vec::with_capacity(t);
    let mut gamma2 = Vec::with_capacity(t);
    let mut alpha = Vec::with_capacity(t);
    let mut k = Vec::with_capacity(t);
    let mut log_marginal = Vec::with_capacity(t);
    let path = dir.join(TRACE_SCALARS);
    for record in r.records() {
        let record = record?;
        if record.len() < 5 {
            return Err(BraceError::invalid(format!(
                "scalars row has {} fields, expected 5",
                record.len()
            )));
        }
        sigma2.push(parse_f64(&record[0], &path)?);
        gamma2.push(parse_f64(&record[1], &path)?);
        alpha.push(parse_f64(&record[2], &path)?);
        k.push(parse_f64(&record[3], &path)? as usize);
        log_marginal.push(parse_f64(&record[4], &path)?);
    }

    let (z_m, _) = read_matrix_csv(&dir.join(TRACE_Z))?;
    let z: Vec<Vec<usize>> = (0..z_m.nrows())
        .map(|i| (0..z_m.ncols()).map(|j| z_m[(i, j)] as usize).collect())
        .collect();

    if sigma2.len() != t || z.len() != t {
        return Err(BraceError::invalid(format!(
            "trace files disagree on length: beta {t}, scalars {}, z {}",
            sigma2.len(),
            z.len()
        )));
    }
    Ok(ChainTrace {
        feature_names,
        beta,
        z,
        sigma2,
        gamma2,
        alpha,
        k,
        log_marginal,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Serde adapter for `DVector<f64>` fields.
pub mod dvector_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
