use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attributes::Attribute;
use crate::error::{Error, Result};

/// One rating of one attribute of one image, as exported by the labeling tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub worker_id: String,
    pub assignment_id: String,
    pub image_id: String,
    pub attribute: Attribute,
    pub choice: u8,
    pub is_probe: bool,
    pub approval_rate: f64,
    pub is_real: bool,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.choice) {
            return Err(Error::Malformed(format!(
                "choice {} outside 1..=5 (assignment {}, image {})",
                self.choice, self.assignment_id, self.image_id
            )));
        }
        if !(0.0..=1.0).contains(&self.approval_rate) {
            return Err(Error::Malformed(format!(
                "approval rate {} outside [0, 1] (worker {})",
                self.approval_rate, self.worker_id
            )));
        }
        if self.worker_id.is_empty() || self.assignment_id.is_empty() || self.image_id.is_empty() {
            return Err(Error::Malformed("empty identifier in annotation record".into()));
        }
        Ok(())
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records_from(file)
}

pub fn read_records_from(reader: impl std::io::Read) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<AnnotationRecord>().enumerate() {
        let rec = row.map_err(|e| Error::Malformed(format!("record {}: {e}", line + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: impl AsRef<Path>, records: &[AnnotationRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// The records of one submitted task, which share a worker.
#[derive(Clone, Debug)]
pub struct Assignment<'a> {
    pub assignment_id: &'a str,
    pub worker_id: &'a str,
    pub approval_rate: f64,
    pub records: Vec<&'a AnnotationRecord>,
}

/// Groups records by assignment id, in id order.
pub fn group_assignments(records: &[AnnotationRecord]) -> Result<Vec<Assignment<'_>>> {
    let mut map: BTreeMap<&str, Assignment<'_>> = BTreeMap::new();
    for r in records {
        let entry = map.entry(&r.assignment_id).or_insert_with(|| Assignment {
            assignment_id: &r.assignment_id,
            worker_id: &r.worker_id,
            approval_rate: r.approval_rate,
            records: Vec::new(),
        });
        if entry.worker_id != r.worker_id {
            return Err(Error::Malformed(format!(
                "assignment {} mixes workers {} and {}",
                r.assignment_id, entry.worker_id, r.worker_id
            )));
        }
        entry.records.push(r);
    }
    Ok(map.into_values().collect())
}
