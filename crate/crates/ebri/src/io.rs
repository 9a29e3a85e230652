//! CSV and JSON file formats.
//!
//! Survey files are comma-separated with a header row and dot decimals. The
//! required columns are `id,y,z1,v,missing`; sample files add `pi` and `d`. A
//! missing `y` is written as an empty field.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ebri_core::cube::TraceRow;
use ebri_core::imputation::{balance_target, ImputedDataset};
use ebri_core::population::{Population, PopulationRecipe};
use ebri_core::regression::FittedModel;
use ebri_core::sampling::SampleData;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Record { path: String, line: u64, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

/// One survey or population file, column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyFile {
    pub ids: Vec<String>,
    /// `NaN` where `y` is missing.
    pub y: Vec<f64>,
    pub z1: Vec<f64>,
    pub v: Vec<f64>,
    pub missing: Vec<bool>,
    pub pi: Option<Vec<f64>>,
    pub d: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct SurveyRecord {
    id: String,
    y: Option<f64>,
    z1: f64,
    v: Option<f64>,
    missing: Option<u8>,
    pi: Option<f64>,
    d: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SurveyRow<'a> {
    id: &'a str,
    y: Option<f64>,
    z1: f64,
    v: f64,
    missing: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<f64>,
}

impl SurveyFile {
    pub fn from_population(pop: &Population, missing: Vec<bool>) -> Self {
        SurveyFile {
            ids: (1..=pop.len()).map(|i| i.to_string()).collect(),
            y: pop.y().to_vec(),
            z1: pop.z1().to_vec(),
            v: pop.v().to_vec(),
            missing,
            pi: None,
            d: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ratio-model population with `z = z1`; `y` is `NaN` where flagged missing.
    pub fn population(&self) -> Result<Population, ebri_core::Error> {
        let y = self.y.iter().zip(&self.missing).map(|(&y, &m)| if m { f64::NAN } else { y }).collect();
        Population::new(y, self.z1.clone(), 1, self.v.clone(), self.z1.clone())
    }

    /// Treats every row as sampled. Weights come from the `d` or `pi` column, or
    /// from `π = n / population_size` when the file has neither.
    pub fn sample(&self, population_size: Option<usize>) -> Result<SampleData, ebri_core::Error> {
        let n = self.len();
        let pi: Vec<f64> = match (&self.pi, &self.d) {
            (Some(pi), _) => pi.clone(),
            (None, Some(d)) => d.iter().map(|d| 1.0 / d).collect(),
            (None, None) => vec![n as f64 / population_size.unwrap_or(n) as f64; n],
        };
        let big_n = population_size.unwrap_or_else(|| pi.iter().map(|p| 1.0 / p).sum::<f64>().round() as usize);
        let mut s = SampleData::new(big_n.max(n), (0..n).collect(), pi)?;
        if let Some(d) = &self.d {
            s.d = d.clone();
        }
        s.with_response(self.missing.iter().map(|m| !m).collect())
    }
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_survey_csv(path: &Path) -> Result<SurveyFile, FormatError> {
    let file = File::open(path).map_err(|source| FormatError::Io { path: path_str(path), source })?;
    parse_survey_csv(file, &path_str(path))
}

pub fn parse_survey_csv<R: Read>(reader: R, label: &str) -> Result<SurveyFile, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| FormatError::Invalid { path: label.into(), message: e.to_string() })?
        .clone();
    for required in ["id", "y", "z1"] {
        if !headers.iter().any(|h| h == required) {
            return Err(FormatError::Invalid { path: label.into(), message: format!("missing column `{required}`") });
        }
    }
    let has_pi = headers.iter().any(|h| h == "pi");
    let has_d = headers.iter().any(|h| h == "d");

    let mut out = SurveyFile {
        ids: Vec::new(),
        y: Vec::new(),
        z1: Vec::new(),
        v: Vec::new(),
        missing: Vec::new(),
        pi: has_pi.then(Vec::new),
        d: has_d.then(Vec::new),
    };
    for result in rdr.deserialize::<SurveyRecord>() {
        let rec = result.map_err(|e| FormatError::Record {
            path: label.into(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = out.len() as u64 + 2;
        let bad = |message: String| FormatError::Record { path: label.into(), line, message };
        let missing = match rec.missing {
            None | Some(0) => rec.y.is_none(),
            Some(1) => true,
            Some(other) => return Err(bad(format!("missing flag must be 0 or 1, got {other}"))),
        };
        if !missing && rec.y.is_none() {
            return Err(bad("y is empty but the unit is not flagged missing".into()));
        }
        if !(rec.z1 > 0.0 && rec.z1.is_finite()) {
            return Err(bad(format!("z1 = {} must be positive", rec.z1)));
        }
        let v = rec.v.unwrap_or(rec.z1);
        if !(v > 0.0 && v.is_finite()) {
            return Err(bad(format!("v = {v} must be positive")));
        }
        if let Some(col) = out.pi.as_mut() {
            col.push(rec.pi.ok_or_else(|| bad("empty pi".into()))?);
        }
        if let Some(col) = out.d.as_mut() {
            col.push(rec.d.ok_or_else(|| bad("empty d".into()))?);
        }
        out.ids.push(rec.id);
        out.y.push(if missing { f64::NAN } else { rec.y.unwrap_or(f64::NAN) });
        out.z1.push(rec.z1);
        out.v.push(v);
        out.missing.push(missing);
    }
    if out.is_empty() {
        return Err(FormatError::Invalid { path: label.into(), message: "no data rows".into() });
    }
    Ok(out)
}

pub fn write_survey_csv(path: &Path, file: &SurveyFile) -> Result<(), FormatError> {
    let io_err = |e: csv::Error| FormatError::Invalid { path: path_str(path), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    for i in 0..file.len() {
        w.serialize(SurveyRow {
            id: &file.ids[i],
            y: (!file.missing[i]).then_some(file.y[i]),
            z1: file.z1[i],
            v: file.v[i],
            missing: file.missing[i] as u8,
            pi: file.pi.as_ref().map(|c| c[i]),
            d: file.d.as_ref().map(|c| c[i]),
        })
        .map_err(io_err)?;
    }
    w.flush().map_err(|source| FormatError::Io { path: path_str(path), source })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let file = File::open(path).map_err(|source| FormatError::Io { path: path_str(path), source })?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| FormatError::Json { path: path_str(path), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut file = File::create(path).map_err(|source| FormatError::Io { path: path_str(path), source })?;
    let text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json { path: path_str(path), source })?;
    file.write_all(text.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(|source| FormatError::Io { path: path_str(path), source })
}

pub fn read_recipe(path: &Path) -> Result<PopulationRecipe, FormatError> {
    let recipe: PopulationRecipe = read_json(path)?;
    recipe
        .validate()
        .map_err(|e| FormatError::Invalid { path: path_str(path), message: e.to_string() })?;
    Ok(recipe)
}

#[derive(Debug, Serialize)]
struct ImputedRow<'a> {
    id: &'a str,
    z1: f64,
    v: f64,
    d: f64,
    missing: u8,
    y: f64,
    residual: Option<f64>,
    pure: Option<u8>,
}

/// Writes every sampled unit with its final (observed or imputed) value.
pub fn write_imputed_csv(path: &Path, file: &SurveyFile, ds: &ImputedDataset) -> Result<(), FormatError> {
    let io_err = |e: csv::Error| FormatError::Invalid { path: path_str(path), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut by_pos = vec![None; file.len()];
    for u in &ds.imputed {
        by_pos[u.position] = Some(u);
    }
    for (i, &u) in by_pos.iter().enumerate() {
        w.serialize(ImputedRow {
            id: &file.ids[i],
            z1: file.z1[i],
            v: file.v[i],
            d: ds.d[i],
            missing: file.missing[i] as u8,
            y: ds.values[i],
            residual: u.map(|u| u.residual),
            pure: u.filter(|u| !u.donors.is_empty()).map(|u| u.is_pure() as u8),
        })
        .map_err(io_err)?;
    }
    w.flush().map_err(|source| FormatError::Io { path: path_str(path), source })
}

/// Flight-phase trace: `step,fixed,balance_residual`.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<(), FormatError> {
    let io_err = |e: csv::Error| FormatError::Invalid { path: path_str(path), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["step", "fixed", "balance_residual"]).map_err(io_err)?;
    for r in rows {
        w.write_record([r.step.to_string(), r.fixed.to_string(), format!("{:e}", r.balance_residual)])
            .map_err(io_err)?;
    }
    w.flush().map_err(|source| FormatError::Io { path: path_str(path), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorEntry {
    pub id: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedRowReport {
    pub id: String,
    pub prediction: f64,
    pub residual: f64,
    pub value: f64,
    pub pure: bool,
    pub donors: Vec<DonorEntry>,
}

/// JSON report of one imputation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeReport {
    pub method: String,
    pub b_ar: Vec<f64>,
    pub respondents: usize,
    pub nonrespondents: usize,
    pub ebar_r: f64,
    pub balance_target: f64,
    pub achieved_balance: f64,
    pub total_imputed: f64,
    pub fractional_rows: Vec<String>,
    pub rows: Vec<ImputedRowReport>,
}

impl ImputeReport {
    pub fn new(file: &SurveyFile, fit: &FittedModel, sample: &SampleData, ds: &ImputedDataset) -> Self {
        ImputeReport {
            method: ds.method.label().to_string(),
            b_ar: fit.b_ar.clone(),
            respondents: fit.respondents.len(),
            nonrespondents: ds.imputed.len(),
            ebar_r: fit.ebar_r,
            balance_target: balance_target(fit, sample),
            achieved_balance: ds.achieved_balance(),
            total_imputed: ebri_core::estimators::imputed_total(ds),
            fractional_rows: ds
                .imputed
                .iter()
                .filter(|u| !u.donors.is_empty() && !u.is_pure())
                .map(|u| file.ids[u.position].clone())
                .collect(),
            rows: ds
                .imputed
                .iter()
                .map(|u| ImputedRowReport {
                    id: file.ids[u.position].clone(),
                    prediction: u.prediction,
                    residual: u.residual,
                    value: u.value(),
                    pure: u.is_pure(),
                    donors: u
                        .donors
                        .iter()
                        .map(|d| DonorEntry { id: file.ids[d.respondent].clone(), weight: d.weight })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Model dump for `impute --explain`.
#[derive(Debug, Clone, Serialize)]
pub struct FitExplanation {
    pub b_ar: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub a: f64,
    pub ebar_r: f64,
    pub residuals: Vec<ResidualEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualEntry {
    pub id: String,
    pub residual: f64,
    pub omega_tilde: f64,
}

impl FitExplanation {
    pub fn new(file: &SurveyFile, fit: &FittedModel) -> Self {
        FitExplanation {
            b_ar: fit.b_ar.clone(),
            eigenvalues: fit.eigenvalues.clone(),
            a: fit.a,
            ebar_r: fit.ebar_r,
            residuals: fit
                .respondents
                .iter()
                .zip(&fit.residuals)
                .zip(&fit.omega_tilde)
                .map(|((&i, &e), &w)| ResidualEntry { id: file.ids[i].clone(), residual: e, omega_tilde: w })
                .collect(),
        }
    }
}
