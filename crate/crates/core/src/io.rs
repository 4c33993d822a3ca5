//! CSV and JSON artifacts. Floats are written in scientific notation with 17
//! significant digits so every value round-trips exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::engine::Trajectory;
use crate::error::{Error, Result};
use crate::problem::{GaussianLinearLaw, LawParams, RegressionProblem};

pub const DESIGN_FILE: &str = "design.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const LAW_FILE: &str = "law.json";

/// `{:.16e}`; non-finite values as `NaN`, `inf`, `-inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// Writes rows of floats under a header.
pub fn write_rows<W: Write>(
    out: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::DimensionMismatch {
                expected: header.len(),
                got: row.len(),
            });
        }
        w.write_record(row.iter().map(|&x| fmt_f64(x)))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV. A first row that does not parse as numbers is taken
/// as a header and skipped.
pub fn read_matrix<R: std::io::Read>(input: R) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("row {}: {e}", i + 1))),
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::Parse("no numeric rows".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Parse(format!(
            "row {} has {} fields, expected {ncols}",
            bad + 1,
            rows[bad].len()
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(fs::File::open(path)?)
}

pub fn write_matrix<W: Write>(out: W, m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    let names: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    write_rows(
        out,
        &header,
        m.row_iter().map(|r| r.iter().cloned().collect()),
    )
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    write_matrix(fs::File::create(path)?, m, prefix)
}

pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(Error::Parse(format!(
            "{} must have one column",
            path.display()
        )));
    }
    Ok(m.column(0).into_owned())
}

pub fn write_vector_csv(path: &Path, v: &DVector<f64>, name: &str) -> Result<()> {
    write_rows(fs::File::create(path)?, &[name], v.iter().map(|&x| vec![x]))
}

/// Writes `design.csv`, `labels.csv` and, when given, `law.json` into `dir`.
pub fn save_problem(
    dir: &Path,
    p: &RegressionProblem,
    law: Option<&GaussianLinearLaw>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join(DESIGN_FILE), p.design(), "z")?;
    write_vector_csv(&dir.join(LABELS_FILE), p.labels(), "y")?;
    if let Some(law) = law {
        write_json(&dir.join(LAW_FILE), &LawParams::from(law))?;
    }
    Ok(())
}

/// Loads a problem saved by [`save_problem`]; the law sidecar is optional.
pub fn load_problem(dir: &Path) -> Result<(RegressionProblem, Option<GaussianLinearLaw>)> {
    let design = read_matrix_csv(&dir.join(DESIGN_FILE))?;
    let labels = read_vector_csv(&dir.join(LABELS_FILE))?;
    let p = RegressionProblem::new(design, labels)?;
    let law_path = dir.join(LAW_FILE);
    let law = if law_path.exists() {
        let params: LawParams = serde_json::from_str(&fs::read_to_string(law_path)?)?;
        Some(GaussianLinearLaw::try_from(params)?)
    } else {
        None
    };
    Ok((p, law))
}

pub const TRAJECTORY_HEADER: [&str; 5] = ["t", "risk", "delta", "r", "potential"];

pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    write_rows(
        out,
        &TRAJECTORY_HEADER,
        traj.records
            .iter()
            .map(|r| vec![r.t, r.risk, r.delta, r.r, r.potential]),
    )
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    write_trajectory(fs::File::create(path)?, traj)
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}
