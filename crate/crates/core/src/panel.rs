//! Panels of equal-length series with per-series covariates, and their CSV
//! formats.
//!
//! Series file: wide CSV, first column a time label, one column per series,
//! `NA` or an empty cell marks a missing value.
//! Covariate file: first column the series name, then one column per
//! covariate.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::TimeSeries;

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub time_labels: Vec<String>,
    pub names: Vec<String>,
    pub series: Vec<TimeSeries>,
    pub covariate_names: Vec<String>,
    /// One row of `P` covariates per series.
    pub covariates: Vec<Vec<f64>>,
}

impl Panel {
    pub fn new(
        names: Vec<String>,
        series: Vec<TimeSeries>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = series.first().map(|s| s.len()).unwrap_or(0);
        let time_labels = (1..=n).map(|t| t.to_string()).collect();
        let p = Panel {
            time_labels,
            names,
            series,
            covariate_names,
            covariates,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.series.is_empty() {
            return Err(Error::invalid("panel has no series"));
        }
        let n = self.series_length();
        if self.series.iter().any(|s| s.len() != n) {
            return Err(Error::invalid(
                "all series in a panel must have equal length",
            ));
        }
        if self.names.len() != self.series.len() || self.covariates.len() != self.series.len() {
            return Err(Error::invalid(
                "names, series and covariate rows disagree in count",
            ));
        }
        if self.time_labels.len() != n {
            return Err(Error::invalid("time labels disagree with series length"));
        }
        let p = self.covariate_names.len();
        if self
            .covariates
            .iter()
            .any(|r| r.len() != p || r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid(
                "every covariate row needs the declared number of finite values",
            ));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::invalid(format!("duplicate series name {dup}")));
        }
        Ok(())
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    pub fn series_length(&self) -> usize {
        self.series[0].len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_missing(&self) -> usize {
        self.series.iter().map(|s| s.n_missing()).sum()
    }

    pub fn read(series_path: &Path, covariate_path: &Path) -> Result<Self> {
        let sf = std::fs::File::open(series_path)?;
        let cf = std::fs::File::open(covariate_path)?;
        Self::from_readers(
            sf,
            &series_path.display().to_string(),
            cf,
            &covariate_path.display().to_string(),
        )
    }

    pub fn from_readers<R1: Read, R2: Read>(
        series: R1,
        series_name: &str,
        covariates: R2,
        cov_name: &str,
    ) -> Result<Self> {
        let (time_labels, names, values) = read_wide(series, series_name)?;
        let (covariate_names, rows) = read_covariates(covariates, cov_name)?;
        let mut covs = Vec::with_capacity(names.len());
        for name in &names {
            match rows.get(name) {
                Some(r) => covs.push(r.clone()),
                None => {
                    return Err(Error::invalid(format!(
                        "no covariate row for series {name} in {cov_name}"
                    )))
                }
            }
        }
        if rows.len() != names.len() {
            let extra = rows
                .keys()
                .find(|k| !names.contains(k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::invalid(format!(
                "covariate row {extra} has no matching series column"
            )));
        }
        let mut series = Vec::with_capacity(names.len());
        for (name, col) in names.iter().zip(values) {
            let missing: Vec<bool> = col.iter().map(|v| v.is_none()).collect();
            let vals: Vec<f64> = col.iter().map(|v| v.unwrap_or(0.0)).collect();
            let ts = TimeSeries::new(vals, missing)
                .map_err(|e| Error::invalid(format!("series {name}: {e}")))?;
            series.push(ts);
        }
        let p = Panel {
            time_labels,
            names,
            series,
            covariate_names,
            covariates: covs,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn write(&self, series_path: &Path, covariate_path: &Path) -> Result<()> {
        self.write_series(std::fs::File::create(series_path)?)?;
        self.write_covariates(std::fs::File::create(covariate_path)?)
    }

    pub fn write_series<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for t in 0..self.series_length() {
            let mut row = vec![self.time_labels[t].clone()];
            for s in &self.series {
                row.push(if s.missing_mask()[t] {
                    "NA".to_string()
                } else {
                    format_f64(s.values()[t])
                });
            }
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_covariates<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["series".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for (name, row) in self.names.iter().zip(&self.covariates) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| format_f64(*v)));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same value.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn csv_parse(file: &str, e: csv::Error) -> Error {
    let (line, column) = match e.position() {
        Some(p) => (p.line() as usize, 1),
        None => (0, 0),
    };
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    Error::Parse {
        file: file.to_string(),
        line,
        column,
        message,
    }
}

/// Byte-free column index (1-based) of field `i` in `record`.
fn column_of(record: &csv::StringRecord, i: usize) -> usize {
    record
        .iter()
        .take(i)
        .map(|f| f.chars().count() + 1)
        .sum::<usize>()
        + 1
}

pub(crate) fn parse_field(
    file: &str,
    record: &csv::StringRecord,
    i: usize,
    what: &str,
) -> Result<f64> {
    let raw = record.get(i).unwrap_or("").trim();
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            file: file.to_string(),
            line: record.position().map(|p| p.line() as usize).unwrap_or(0),
            column: column_of(record, i),
            message: format!("invalid {what} value {raw:?}"),
        })
}

type WideColumns = (Vec<String>, Vec<String>, Vec<Vec<Option<f64>>>);

fn read_wide<R: Read>(input: R, file: &str) -> Result<WideColumns> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| csv_parse(file, e))?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            file: file.to_string(),
            line: 1,
            column: 1,
            message: "header needs a time column and at least one series column".into(),
        });
    }
    let names: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let mut labels = Vec::new();
    let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_parse(file, e))?;
        labels.push(rec.get(0).unwrap_or("").trim().to_string());
        for (j, col) in cols.iter_mut().enumerate() {
            let raw = rec.get(j + 1).unwrap_or("").trim();
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                col.push(None);
            } else {
                col.push(Some(parse_field(file, &rec, j + 1, "series")?));
            }
        }
    }
    Ok((labels, names, cols))
}

fn read_covariates<R: Read>(
    input: R,
    file: &str,
) -> Result<(Vec<String>, HashMap<String, Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| csv_parse(file, e))?.clone();
    let names: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_parse(file, e))?;
        let key = rec.get(0).unwrap_or("").trim().to_string();
        let vals = (1..rec.len())
            .map(|i| parse_field(file, &rec, i, "covariate"))
            .collect::<Result<Vec<_>>>()?;
        if rows.insert(key.clone(), vals).is_some() {
            return Err(Error::Parse {
                file: file.to_string(),
                line: rec.position().map(|p| p.line() as usize).unwrap_or(0),
                column: 1,
                message: format!("duplicate covariate row for {key}"),
            });
        }
    }
    Ok((names, rows))
}

/// Covariate points without series: first column a label, covariates
/// taken from the columns named in `covariate_names`; other columns are
/// ignored.
pub fn read_points(
    path: &Path,
    covariate_names: &[String],
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let f = std::fs::File::open(path)?;
    read_points_from(f, &path.display().to_string(), covariate_names)
}

pub fn read_points_from<R: Read>(
    input: R,
    file: &str,
    covariate_names: &[String],
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| csv_parse(file, e))?.clone();
    let cols = covariate_names
        .iter()
        .map(|name| {
            header
                .iter()
                .skip(1)
                .position(|h| h.trim() == name)
                .map(|i| i + 1)
                .ok_or_else(|| Error::Parse {
                    file: file.to_string(),
                    line: 1,
                    column: 1,
                    message: format!("missing covariate column {name:?}"),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_parse(file, e))?;
        labels.push(rec.get(0).unwrap_or("").trim().to_string());
        rows.push(
            cols.iter()
                .map(|&i| parse_field(file, &rec, i, "covariate"))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((labels, rows))
}
