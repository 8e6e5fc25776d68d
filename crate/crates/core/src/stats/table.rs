use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One longitudinal measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub subject_id: String,
    pub visit: i64,
    pub age: f64,
    pub sex: u8,
    pub y: f64,
}

impl Observation {
    pub fn key(&self) -> (String, i64) {
        (self.subject_id.clone(), self.visit)
    }
}

/// Rows keyed by unique `(subject_id, visit)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationTable {
    rows: Vec<Observation>,
}

impl ObservationTable {
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in rows.iter().enumerate() {
            if !r.age.is_finite() {
                return Err(Error::Argument(format!("row {i}: age is not finite")));
            }
            if !r.y.is_finite() {
                return Err(Error::Argument(format!("row {i}: y is not finite")));
            }
            if r.sex > 1 {
                return Err(Error::Argument(format!("row {i}: sex must be 0 or 1, got {}", r.sex)));
            }
            if !seen.insert((r.subject_id.as_str(), r.visit)) {
                return Err(Error::Argument(format!("duplicate observation key ({}, {})", r.subject_id, r.visit)));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Returns a copy with `y` replaced row by row.
    pub fn with_y(&self, y: &[f64]) -> Result<Self> {
        if y.len() != self.rows.len() {
            return Err(Error::Argument("replacement y has wrong length".into()));
        }
        let rows = self.rows.iter().zip(y).map(|(r, &v)| Observation { y: v, ..r.clone() }).collect();
        Self::new(rows)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<Observation>, _>>()?;
        Self::new(rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_reader(f)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// One model prediction for an observation key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub visit: i64,
    pub method: String,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionTable {
    rows: Vec<Prediction>,
}

impl PredictionTable {
    pub fn new(rows: Vec<Prediction>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !r.y_pred.is_finite() {
                return Err(Error::Argument(format!(
                    "prediction ({}, {}, {}) is not finite",
                    r.subject_id, r.visit, r.method
                )));
            }
            if !seen.insert((r.method.as_str(), r.subject_id.as_str(), r.visit)) {
                return Err(Error::Argument(format!(
                    "duplicate prediction ({}, {}, {})",
                    r.subject_id, r.visit, r.method
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Prediction] {
        &self.rows
    }

    /// Method names in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<Prediction>, _>>()?;
        Self::new(rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_reader(f)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}
