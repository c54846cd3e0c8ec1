//! Plain CSV helpers for node-level vectors.

use crate::error::{dim, Error, Result};
use nalgebra::DVector;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Reads one value per line. A non-numeric first line is taken as a header;
/// blank lines are skipped.
pub fn read_vector<R: Read>(r: R) -> Result<DVector<f64>> {
    let mut values = Vec::new();
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(_) => {
                return Err(Error::Format {
                    line: idx + 1,
                    message: format!("non-finite value `{field}`"),
                })
            }
            Err(_) if idx == 0 => {}
            Err(_) => {
                return Err(Error::Format {
                    line: idx + 1,
                    message: format!("cannot parse `{field}` as a number"),
                })
            }
        }
    }
    Ok(DVector::from_vec(values))
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    read_vector(File::open(path)?)
}

/// Shortest round-trip text for a float, switching to exponent form for very
/// small or large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_vector<W: Write>(mut w: W, name: &str, v: &DVector<f64>) -> Result<()> {
    writeln!(w, "{name}")?;
    for x in v.iter() {
        writeln!(w, "{}", fmt_f64(*x))?;
    }
    Ok(())
}

pub fn save_vector(path: impl AsRef<Path>, name: &str, v: &DVector<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_vector(&mut f, name, v)?;
    f.flush()?;
    Ok(())
}

/// `node,y,fitted,residual` per node.
pub fn write_fitted<W: Write>(w: W, y: &DVector<f64>, fitted: &DVector<f64>) -> Result<()> {
    if y.len() != fitted.len() {
        return Err(dim("response and fitted values differ in length"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["node", "y", "fitted", "residual"])?;
    for i in 0..y.len() {
        out.write_record([
            i.to_string(),
            fmt_f64(y[i]),
            fmt_f64(fitted[i]),
            fmt_f64(y[i] - fitted[i]),
        ])?;
    }
    out.flush()?;
    Ok(())
}
