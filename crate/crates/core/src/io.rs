//! Medium definition files and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::{AdmissibleBounds, CoefficientProfile, Grid1D, LayeredMedium};

/// A coefficient given either as samples over `[0, H]` or analytically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Samples(Vec<f64>),
    Analytic(AnalyticProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnalyticProfile {
    Constant { value: f64 },
    /// `value0 + slope * y`
    Linear { value0: f64, slope: f64 },
    /// `mean + amplitude * sin(2 pi frequency y + phase)`
    Sine {
        mean: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl AnalyticProfile {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            AnalyticProfile::Constant { value } => value,
            AnalyticProfile::Linear { value0, slope } => value0 + slope * y,
            AnalyticProfile::Sine {
                mean,
                amplitude,
                frequency,
                phase,
            } => mean + amplitude * (2.0 * std::f64::consts::PI * frequency * y + phase).sin(),
        }
    }
}

impl ProfileSpec {
    /// Evaluate on `grid`. Sample lists of a different length are taken as
    /// uniform over `[0, H]` and linearly resampled.
    pub fn evaluate(&self, grid: Grid1D) -> Result<CoefficientProfile> {
        match self {
            ProfileSpec::Analytic(a) => CoefficientProfile::from_fn(grid, |y| a.eval(y)),
            ProfileSpec::Samples(v) if v.len() == grid.n_points() => {
                CoefficientProfile::new(grid, v.clone())
            }
            ProfileSpec::Samples(v) => {
                let own = Grid1D::new(v.len(), grid.y_max())?;
                CoefficientProfile::new(own, v.clone())?.resample(grid)
            }
        }
    }
}

/// JSON-shaped medium definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    #[serde(rename = "L")]
    pub width_l: f64,
    #[serde(rename = "H")]
    pub depth: f64,
    pub n_points: usize,
    #[serde(rename = "D")]
    pub diffusion: ProfileSpec,
    pub mu_a: ProfileSpec,
    pub c: ProfileSpec,
    pub bounds: AdmissibleBounds,
}

impl MediumSpec {
    pub fn build(&self) -> Result<LayeredMedium> {
        self.build_with_points(self.n_points)
    }

    /// Build on a grid with `n_points` nodes instead of the file's own count.
    pub fn build_with_points(&self, n_points: usize) -> Result<LayeredMedium> {
        let grid = Grid1D::new(n_points, self.depth)?;
        LayeredMedium::new(
            self.diffusion.evaluate(grid)?,
            self.mu_a.evaluate(grid)?,
            self.c.evaluate(grid)?,
            self.width_l,
            self.bounds,
        )
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("medium spec serializes");
        write_string(path, &text)
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Parse {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

/// Column-oriented numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: &[&str], columns: Vec<Vec<f64>>) -> Result<Self> {
        if headers.len() != columns.len() {
            return Err(Error::structural("table header/column count mismatch"));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(Error::structural("table columns differ in length"));
            }
        }
        Ok(Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            columns,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }

    /// Floats are written in shortest round-trip form, so reading the file
    /// back reproduces the values bit for bit.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(&self.headers).map_err(|e| csv_error(path, e))?;
        for r in 0..self.n_rows() {
            let row: Vec<String> = self.columns.iter().map(|c| c[r].to_string()).collect();
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers: Vec<String> = r
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| csv_error(path, e))?;
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("row {}: `{field}` is not a number", line + 1),
                })?;
                columns[j].push(v);
            }
        }
        Ok(Self { headers, columns })
    }
}

/// Read a depth profile from a CSV whose first column is `y` and whose
/// second column holds the values.
pub fn read_profile_csv(path: &Path, grid: Option<Grid1D>) -> Result<CoefficientProfile> {
    let table = Table::read_csv(path)?;
    if table.columns.len() < 2 || table.n_rows() < 3 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "profile CSV needs columns y,value and at least 3 rows".into(),
        });
    }
    let ys = &table.columns[0];
    let own = Grid1D::new(ys.len(), ys[ys.len() - 1])?;
    let profile = CoefficientProfile::new(own, table.columns[1].clone())?;
    match grid {
        Some(g) if !g.same_as(&own) => Err(Error::structural(format!(
            "{}: profile grid ({} nodes) does not match the medium grid ({} nodes)",
            path.display(),
            own.n_points(),
            g.n_points()
        ))),
        Some(g) => CoefficientProfile::new(g, profile.into_values()),
        None => Ok(profile),
    }
}

pub fn write_profile_csv(path: &Path, profile: &CoefficientProfile, name: &str) -> Result<()> {
    let ys: Vec<f64> = profile.grid().nodes().collect();
    Table::new(&["y", name], vec![ys, profile.values().to_vec()])?.write_csv(path)
}

/// Ensure a directory exists.
pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "L": 2.0, "H": 1.0, "n_points": 11,
        "D": {"kind": "linear", "value0": 1.0, "slope": 0.5},
        "mu_a": {"kind": "sine", "mean": 1.0, "amplitude": 0.1, "frequency": 0.5},
        "c": [1.0, 1.0, 1.0],
        "bounds": {"d0": 0.5, "mu0": 0.5, "M": 20.0, "c_m": 0.2}
    }"#;

    #[test]
    fn parses_analytic_and_sampled_profiles() {
        let spec = MediumSpec::from_json(SAMPLE).unwrap();
        let m = spec.build().unwrap();
        assert_eq!(m.grid().n_points(), 11);
        assert!((m.diffusion.last() - 1.5).abs() < 1e-15);
        assert!((m.absorption.interpolate(0.5) - 1.1).abs() < 1e-12);
        assert_eq!(m.speed.values(), &[1.0; 11]);
        assert_eq!(m.width_l, 2.0);
        let finer = spec.build_with_points(21).unwrap();
        assert_eq!(finer.grid().n_points(), 21);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let col: Vec<f64> = (0..7).map(|i| (i as f64 * 0.1).sin() / 3.0).collect();
        let t = Table::new(&["y", "v"], vec![col.clone(), col.iter().map(|v| v * 1e-17).collect()]).unwrap();
        t.write_csv(&path).unwrap();
        let back = Table::read_csv(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn profile_grid_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let g = Grid1D::new(5, 1.0).unwrap();
        write_profile_csv(&path, &CoefficientProfile::constant(g, 2.0).unwrap(), "f").unwrap();
        assert!(read_profile_csv(&path, Some(g)).is_ok());
        let other = Grid1D::new(6, 1.0).unwrap();
        assert!(matches!(read_profile_csv(&path, Some(other)), Err(Error::Structural(_))));
    }
}
