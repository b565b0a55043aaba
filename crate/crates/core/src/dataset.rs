//! Observed clone-marker data and its CSV interchange format.
//!
//! A dataset is a cohort of animals; each animal is a series of sampling
//! occasions `(week, sample_size, d_count)`: at `week`, `sample_size` clones
//! were typed and `d_count` of them carried the d marker. `sample_size = 0`
//! rows are legal placeholders for occasions that yielded no usable sample.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

/// One sampling occasion for one animal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsRecord {
    /// Time of the sample, in weeks from the start of observation.
    pub week: f64,
    /// Number of clones typed on this occasion.
    pub sample_size: u64,
    /// Number of typed clones carrying the d marker.
    pub d_count: u64,
}

impl ObsRecord {
    /// Observed d fraction, if the occasion produced a sample.
    pub fn fraction_d(&self) -> Option<f64> {
        if self.sample_size == 0 {
            None
        } else {
            Some(self.d_count as f64 / self.sample_size as f64)
        }
    }
}

/// The full series of sampling occasions for one animal, in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub animal_id: String,
    pub records: Vec<ObsRecord>,
}

impl ObservationSeries {
    pub fn new(animal_id: impl Into<String>, records: Vec<ObsRecord>) -> Result<Self, DatasetError> {
        let series = ObservationSeries { animal_id: animal_id.into(), records };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.animal_id.is_empty() {
            return Err(DatasetError::Validation { line: None, message: "empty animal_id".into() });
        }
        let mut prev = f64::NEG_INFINITY;
        for r in &self.records {
            if !r.week.is_finite() || r.week < 0.0 {
                return Err(DatasetError::Validation {
                    line: None,
                    message: format!("animal {}: week {} is not a finite nonnegative time", self.animal_id, r.week),
                });
            }
            if r.week < prev {
                return Err(DatasetError::Validation {
                    line: None,
                    message: format!("animal {}: weeks not in nondecreasing order at week {}", self.animal_id, r.week),
                });
            }
            prev = r.week;
            if r.d_count > r.sample_size {
                return Err(DatasetError::Validation {
                    line: None,
                    message: format!(
                        "animal {}: d_count {} exceeds sample_size {} at week {}",
                        self.animal_id, r.d_count, r.sample_size, r.week
                    ),
                });
            }
        }
        Ok(())
    }

    /// Last sampling time, or 0 for an empty series.
    pub fn last_week(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.week)
    }

    /// `(week, d fraction)` for occasions with a nonempty sample.
    pub fn valid_fractions(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.fraction_d().map(|p| (r.week, p)))
            .collect()
    }
}

/// A cohort of animals with distinct ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub animals: Vec<ObservationSeries>,
}

impl Dataset {
    pub fn new(animals: Vec<ObservationSeries>) -> Result<Self, DatasetError> {
        let ds = Dataset { animals };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for a in &self.animals {
            a.validate()?;
            if !seen.insert(a.animal_id.as_str()) {
                return Err(DatasetError::Validation {
                    line: None,
                    message: format!("duplicate animal_id {:?}", a.animal_id),
                });
            }
        }
        Ok(())
    }

    /// Latest sampling time across the cohort, or 0 for an empty dataset.
    pub fn horizon(&self) -> f64 {
        self.animals.iter().map(|a| a.last_week()).fold(0.0, f64::max)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("animal_id,week,sample_size,d_count\n");
        for a in &self.animals {
            for r in &a.records {
                out.push_str(&format!("{},{},{},{}\n", a.animal_id, fmt_week(r.week), r.sample_size, r.d_count));
            }
        }
        out
    }
}

/// Format a week so the CSV round-trips exactly (shortest f64 representation).
fn fmt_week(w: f64) -> String {
    let mut buf = ryu_style(w);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_style(w: f64) -> String {
    let s = format!("{w}");
    if s.parse::<f64>() == Ok(w) { s } else { format!("{w:?}") }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid dataset{}: {message}", fmt_line(.line))]
    Validation { line: Option<u64>, message: String },
}

fn fmt_line(line: &Option<u64>) -> String {
    match line {
        Some(n) => format!(" at line {n}"),
        None => String::new(),
    }
}

impl DatasetError {
    /// True when the input file was read but its content was rejected.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, DatasetError::Io(_))
    }
}

const EXPECTED_HEADER: [&str; 4] = ["animal_id", "week", "sample_size", "d_count"];

/// Load a cohort from CSV with columns `animal_id,week,sample_size,d_count`.
///
/// Rows are grouped by `animal_id` in order of first appearance; each animal's
/// rows must appear with nondecreasing weeks.
pub fn load_dataset(path: impl AsRef<FsPath>) -> Result<Dataset, DatasetError> {
    let mut text = String::new();
    File::open(path.as_ref())?.read_to_string(&mut text)?;
    parse_dataset(&text)
}

/// Parse a cohort from CSV text. See [`load_dataset`].
pub fn parse_dataset(text: &str) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Parse { line: 1, message: e.to_string() })?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != EXPECTED_HEADER {
        return Err(DatasetError::Parse {
            line: 1,
            message: format!("expected header {:?}, got {:?}", EXPECTED_HEADER.join(","), got.join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<(u64, ObsRecord)>> = std::collections::HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(DatasetError::Parse {
                line,
                message: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let animal_id = record[0].to_string();
        if animal_id.is_empty() {
            return Err(DatasetError::Validation { line: Some(line), message: "empty animal_id".into() });
        }
        let week: f64 = parse_field(&record[1], "week", line)?;
        let sample_size: u64 = parse_field(&record[2], "sample_size", line)?;
        let d_count: u64 = parse_field(&record[3], "d_count", line)?;
        if !week.is_finite() || week < 0.0 {
            return Err(DatasetError::Validation {
                line: Some(line),
                message: format!("week {week} is not a finite nonnegative time"),
            });
        }
        if d_count > sample_size {
            return Err(DatasetError::Validation {
                line: Some(line),
                message: format!("d_count {d_count} exceeds sample_size {sample_size}"),
            });
        }
        if !groups.contains_key(&animal_id) {
            order.push(animal_id.clone());
        }
        groups
            .entry(animal_id)
            .or_default()
            .push((line, ObsRecord { week, sample_size, d_count }));
    }

    let mut animals = Vec::with_capacity(order.len());
    for id in order {
        let rows = groups.remove(&id).expect("group exists for every id in order");
        let mut prev = f64::NEG_INFINITY;
        for (line, r) in &rows {
            if r.week < prev {
                return Err(DatasetError::Validation {
                    line: Some(*line),
                    message: format!("animal {id}: weeks out of order (week {} after {prev})", r.week),
                });
            }
            prev = r.week;
        }
        animals.push(ObservationSeries {
            animal_id: id,
            records: rows.into_iter().map(|(_, r)| r).collect(),
        });
    }
    Dataset::new(animals)
}

/// Write a cohort as CSV. Inverse of [`load_dataset`].
pub fn write_dataset(path: impl AsRef<FsPath>, dataset: &Dataset) -> Result<(), DatasetError> {
    let mut file = File::create(path.as_ref())?;
    file.write_all(dataset.to_csv_string().as_bytes())?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(raw: &str, name: &str, line: u64) -> Result<T, DatasetError>
where
    T::Err: fmt::Display,
{
    raw.parse().map_err(|e| DatasetError::Parse {
        line,
        message: format!("bad {name} value {raw:?}: {e}"),
    })
}
