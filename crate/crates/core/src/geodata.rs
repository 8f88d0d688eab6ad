//! Survey CSV schema: parsing, validation, and abnormal-value handling.
//!
//! The sample file carries `SAMPLEID`, optional `SAMPLETYPE`, planar
//! coordinates `x`/`y` (GDA2020 longitude/latitude), and one column per
//! element named `<Symbol>_<unit>` with unit one of `ppm`, `ppb`, `pct`.
//! Sentinel entries such as `-9999` or `-0.5` are retained verbatim at parse
//! time; [`handle_abnormal_values`] deals with them as a separate step.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concentration unit suffix of an element column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConcentrationUnit {
    Ppm,
    Ppb,
    Pct,
}

impl ConcentrationUnit {
    pub fn suffix(&self) -> &'static str {
        match self {
            ConcentrationUnit::Ppm => "ppm",
            ConcentrationUnit::Ppb => "ppb",
            ConcentrationUnit::Pct => "pct",
        }
    }

    fn from_suffix(s: &str) -> Option<Self> {
        match s {
            "ppm" => Some(ConcentrationUnit::Ppm),
            "ppb" => Some(ConcentrationUnit::Ppb),
            "pct" => Some(ConcentrationUnit::Pct),
            _ => None,
        }
    }
}

impl fmt::Display for ConcentrationUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

/// One element column of the survey.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementDescriptor {
    pub symbol: String,
    pub unit: ConcentrationUnit,
    /// Original CSV header, e.g. `Au_ppb`.
    pub column_name: String,
}

impl ElementDescriptor {
    pub fn new(symbol: &str, unit: ConcentrationUnit) -> Self {
        ElementDescriptor {
            symbol: symbol.to_string(),
            unit,
            column_name: format!("{symbol}_{}", unit.suffix()),
        }
    }

    /// Parse a header like `Cu_ppm`. Metadata columns and anything without a
    /// recognized unit suffix return `None`.
    pub fn from_column_name(name: &str) -> Option<Self> {
        let (symbol, suffix) = name.rsplit_once('_')?;
        if symbol.is_empty() {
            return None;
        }
        let unit = ConcentrationUnit::from_suffix(suffix)?;
        Some(ElementDescriptor {
            symbol: symbol.to_string(),
            unit,
            column_name: name.to_string(),
        })
    }
}

/// One survey row: identifier, position, and per-element readings.
///
/// `values[c]` is meaningful only where `missing[c]` is false; masked slots
/// hold `0.0` so that value-for-value survey comparison stays well defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub sample_type: String,
    pub position: [f64; 2],
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

/// An in-memory geochemical survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    pub samples: Vec<Sample>,
    pub elements: Vec<ElementDescriptor>,
    pub crs_tag: String,
}

impl Survey {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.samples.iter().map(|s| s.position).collect()
    }

    /// Index of the element with the given symbol, if present.
    pub fn element_index(&self, symbol: &str) -> Option<usize> {
        self.elements.iter().position(|e| e.symbol == symbol)
    }

    /// Check the structural invariants: non-empty, unique ids, aligned masks.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptySurvey("survey has no samples".into()));
        }
        if self.elements.is_empty() {
            return Err(Error::Validation("survey has no element columns".into()));
        }
        let c = self.elements.len();
        let mut seen = HashSet::new();
        for s in &self.samples {
            if s.values.len() != c || s.missing.len() != c {
                return Err(Error::Validation(format!(
                    "sample {} has {} values / {} mask entries, expected {c}",
                    s.id,
                    s.values.len(),
                    s.missing.len()
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate SAMPLEID `{}`", s.id)));
            }
        }
        Ok(())
    }
}

/// A known mineralization site, used only by the evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositSite {
    pub site_id: String,
    pub project_id: String,
    pub position: [f64; 2],
}

/// How [`handle_abnormal_values`] treats nonpositive / sentinel entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbnormalStrategy {
    /// Remove every sample containing an abnormal entry.
    DropSample,
    /// Replace each abnormal entry with half the smallest strictly positive
    /// observed value of that element (detection-limit proxy).
    HalfDetectionLimit,
}

const META_COLUMNS: [&str; 4] = ["SAMPLEID", "SAMPLETYPE", "x", "y"];

fn is_abnormal(v: f64) -> bool {
    // Covers the -9999 / -0.5 sentinels and zero readings alike.
    v <= 0.0 || v <= -9000.0
}

/// Parse a survey CSV. `element_filter` restricts the survey to the listed
/// symbols (file order is kept); unknown symbols in the filter are an error.
pub fn parse_survey_csv<P: AsRef<Path>>(
    path: P,
    element_filter: Option<&[String]>,
) -> Result<Survey> {
    let file = std::fs::File::open(path)?;
    parse_survey_reader(file, element_filter)
}

/// Reader-based twin of [`parse_survey_csv`].
pub fn parse_survey_reader<R: Read>(reader: R, element_filter: Option<&[String]>) -> Result<Survey> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let id_col = find("SAMPLEID").ok_or_else(|| Error::MissingColumn("SAMPLEID".into()))?;
    let x_col = find("x").ok_or_else(|| Error::MissingColumn("x".into()))?;
    let y_col = find("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
    let type_col = find("SAMPLETYPE");

    let mut elements = Vec::new();
    let mut element_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if META_COLUMNS.contains(&h) {
            continue;
        }
        if let Some(desc) = ElementDescriptor::from_column_name(h) {
            elements.push(desc);
            element_cols.push(i);
        }
    }
    if let Some(filter) = element_filter {
        for sym in filter {
            if !elements.iter().any(|e| &e.symbol == sym) {
                return Err(Error::Validation(format!(
                    "element filter names `{sym}` which is not in the file"
                )));
            }
        }
        let keep: Vec<usize> = elements
            .iter()
            .enumerate()
            .filter(|(_, e)| filter.contains(&e.symbol))
            .map(|(i, _)| i)
            .collect();
        element_cols = keep.iter().map(|&i| element_cols[i]).collect();
        elements = keep.iter().map(|&i| elements[i].clone()).collect();
    }
    if elements.is_empty() {
        return Err(Error::MissingColumn("<Elem>_<ppm|ppb|pct>".into()));
    }

    let mut samples = Vec::new();
    let mut seen_ids = HashSet::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 2; // 1-based, after the header
        let record = record?;
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Row {
                line,
                msg: "empty SAMPLEID".into(),
            });
        }
        if !seen_ids.insert(id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate SAMPLEID `{id}` at line {line}"
            )));
        }
        let parse_coord = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| Error::Row {
                line,
                msg: format!("unparseable coordinate {name}=`{raw}`"),
            })
        };
        let x = parse_coord(x_col, "x")?;
        let y = parse_coord(y_col, "y")?;
        let sample_type = type_col
            .map(|c| record.get(c).unwrap_or("").trim().to_string())
            .unwrap_or_default();

        let mut values = Vec::with_capacity(elements.len());
        let mut missing = Vec::with_capacity(elements.len());
        for (&col, desc) in element_cols.iter().zip(&elements) {
            let raw = record.get(col).unwrap_or("").trim();
            if raw.is_empty() {
                values.push(0.0);
                missing.push(true);
            } else {
                let v = raw.parse::<f64>().map_err(|_| Error::Row {
                    line,
                    msg: format!("unparseable value `{raw}` in column {}", desc.column_name),
                })?;
                values.push(v);
                missing.push(false);
            }
        }
        samples.push(Sample {
            id,
            sample_type,
            position: [x, y],
            values,
            missing,
        });
    }

    let survey = Survey {
        samples,
        elements,
        crs_tag: "GDA2020".to_string(),
    };
    survey.validate()?;
    Ok(survey)
}

/// Write a survey back out in the canonical schema (round-trips through
/// [`parse_survey_csv`] value for value). Missing entries become empty cells.
pub fn write_survey_csv<P: AsRef<Path>>(path: P, survey: &Survey) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_survey_writer(file, survey)
}

pub fn write_survey_writer<W: Write>(writer: W, survey: &Survey) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["SAMPLEID".to_string(), "SAMPLETYPE".to_string(), "x".to_string(), "y".to_string()];
    header.extend(survey.elements.iter().map(|e| e.column_name.clone()));
    wtr.write_record(&header)?;
    for s in &survey.samples {
        let mut rec = vec![
            s.id.clone(),
            s.sample_type.clone(),
            format!("{}", s.position[0]),
            format!("{}", s.position[1]),
        ];
        for (v, &m) in s.values.iter().zip(&s.missing) {
            rec.push(if m { String::new() } else { format!("{v}") });
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parse a mineralization-site CSV (`SiteID`, optional `ProjectID`, `x`, `y`).
pub fn parse_deposits_csv<P: AsRef<Path>>(path: P) -> Result<Vec<DepositSite>> {
    let file = std::fs::File::open(path)?;
    parse_deposits_reader(file)
}

pub fn parse_deposits_reader<R: Read>(reader: R) -> Result<Vec<DepositSite>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let site_col = find("SiteID").ok_or_else(|| Error::MissingColumn("SiteID".into()))?;
    let x_col = find("x").ok_or_else(|| Error::MissingColumn("x".into()))?;
    let y_col = find("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
    let project_col = find("ProjectID");

    let mut sites = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 2;
        let record = record?;
        let coord = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| Error::Row {
                line,
                msg: format!("unparseable coordinate {name}=`{raw}`"),
            })
        };
        let x = coord(x_col, "x")?;
        let y = coord(y_col, "y")?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Row {
                line,
                msg: "non-finite deposit coordinate".into(),
            });
        }
        sites.push(DepositSite {
            site_id: record.get(site_col).unwrap_or("").trim().to_string(),
            project_id: project_col
                .map(|c| record.get(c).unwrap_or("").trim().to_string())
                .unwrap_or_default(),
            position: [x, y],
        });
    }
    Ok(sites)
}

/// Write deposits in the canonical schema.
pub fn write_deposits_csv<P: AsRef<Path>>(path: P, sites: &[DepositSite]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record(["SiteID", "ProjectID", "x", "y"])?;
    for s in sites {
        wtr.write_record([
            s.site_id.as_str(),
            s.project_id.as_str(),
            &format!("{}", s.position[0]),
            &format!("{}", s.position[1]),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Resolve nonpositive / sentinel entries.
///
/// `DropSample` removes every sample with any abnormal unmasked entry.
/// `HalfDetectionLimit` replaces each abnormal entry of element `c` with half
/// the smallest strictly positive observed value of `c`; if `c` has no
/// positive observation anywhere the entry is masked missing instead.
/// Idempotent: a second application is the identity.
pub fn handle_abnormal_values(survey: &Survey, strategy: AbnormalStrategy) -> Result<Survey> {
    let c = survey.n_elements();
    let mut out = survey.clone();
    match strategy {
        AbnormalStrategy::DropSample => {
            out.samples.retain(|s| {
                !s.values
                    .iter()
                    .zip(&s.missing)
                    .any(|(&v, &m)| !m && is_abnormal(v))
            });
            if out.samples.is_empty() {
                return Err(Error::EmptySurvey(
                    "all samples dropped by abnormal-value handling".into(),
                ));
            }
        }
        AbnormalStrategy::HalfDetectionLimit => {
            // Detection-limit proxy: half the smallest strictly positive
            // observation per element.
            let mut min_pos = vec![f64::INFINITY; c];
            for s in &survey.samples {
                for j in 0..c {
                    let v = s.values[j];
                    if !s.missing[j] && v > 0.0 && v < min_pos[j] {
                        min_pos[j] = v;
                    }
                }
            }
            for s in &mut out.samples {
                for j in 0..c {
                    if !s.missing[j] && is_abnormal(s.values[j]) {
                        if min_pos[j].is_finite() {
                            s.values[j] = min_pos[j] / 2.0;
                        } else {
                            s.values[j] = 0.0;
                            s.missing[j] = true;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
