//! File formats shared by the library and the command line: numeric CSV with
//! 17 significant digits, dot decimals, and LF line endings, so re-emitting a
//! parsed file is byte-identical.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::posterior::{Provenance, SampleSet};

/// Canonical float formatting: 17 significant digits, scientific notation.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn write_sample_csv(path: &Path, set: &SampleSet) -> Result<()> {
    let mut out = String::new();
    out.push_str(&set.names.join(","));
    out.push('\n');
    for row in 0..set.draws.nrows() {
        for col in 0..set.draws.ncols() {
            if col > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(set.draws[(row, col)]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_sample_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut values: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(Error::Parse(format!(
                "{}: row {} has {} cells, expected {}",
                path.display(),
                idx + 2,
                cells.len(),
                names.len()
            )));
        }
        for cell in cells {
            let value: f64 = cell.trim().parse().map_err(|_| {
                Error::Parse(format!("{}: bad number {cell:?} in row {}", path.display(), idx + 2))
            })?;
            values.push(value);
        }
        n_rows += 1;
    }
    Ok((names.clone(), DMatrix::from_row_iterator(n_rows, names.len(), values)))
}

pub fn write_provenance(path: &Path, provenance: &Provenance) -> Result<()> {
    let mut text = serde_json::to_string_pretty(provenance)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_provenance(path: &Path) -> Result<Provenance> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn sample_set() -> SampleSet {
        SampleSet {
            names: vec!["x".into(), "theta".into()],
            draws: DMatrix::from_row_slice(3, 2, &[0.1, -1.0, 1.5e-17, 2.0, f64::MIN_POSITIVE, 3.0]),
            seed: 5,
            provenance: Provenance {
                method: "AGHQ-dense".into(),
                model: "gauss_conjugate".into(),
                config_digest: "abc".into(),
                k: Some(3),
                s: None,
                seed: 5,
                log_normconst: Some(-1.5),
                output_names: vec![],
            },
        }
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        let set = sample_set();
        write_sample_csv(&path, &set).unwrap();
        let first = std::fs::read(&path).unwrap();

        let (names, draws) = read_sample_csv(&path).unwrap();
        assert_eq!(names, set.names);
        assert_eq!(draws, set.draws);

        let again = SampleSet { names, draws, seed: 5, provenance: set.provenance.clone() };
        let path2 = dir.path().join("samples2.csv");
        write_sample_csv(&path2, &again).unwrap();
        let second = std::fs::read(&path2).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn provenance_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("provenance.json");
        let set = sample_set();
        write_provenance(&path, &set.provenance).unwrap();
        let loaded = read_provenance(&path).unwrap();
        assert_eq!(loaded.method, "AGHQ-dense");
        assert_eq!(loaded.k, Some(3));
        // Re-emitting is byte-identical.
        let first = std::fs::read(&path).unwrap();
        let path2 = dir.path().join("provenance2.json");
        write_provenance(&path2, &loaded).unwrap();
        assert_eq!(first, std::fs::read(&path2).unwrap());
    }

    #[test]
    fn missing_artifact_error() {
        let err = read_sample_csv(Path::new("/nonexistent/samples.csv")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }
}
