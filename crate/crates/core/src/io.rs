//! CSV ingestion and export of count data.
//!
//! Univariate files are wide, `subject_id,n_u,N_u,n_s,N_s`. Multivariate files
//! are long, `subject_id,condition,category,count` with condition `stim` or
//! `unstim`; categories are ordered by their sorted labels.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{MimosaError, Result};
use crate::model::{CountPair, MultiCountPair};

pub const UNIVARIATE_HEADER: [&str; 5] = ["subject_id", "n_u", "N_u", "n_s", "N_s"];
pub const MULTIVARIATE_HEADER: [&str; 4] = ["subject_id", "condition", "category", "count"];

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| MimosaError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn reader<R: Read>(input: R, expected: &[&str]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(MimosaError::Schema(format!("expected header {}, found {}", expected.join(","), header.join(","))));
    }
    Ok(rdr)
}

/// Converts a row-level CSV failure into a validation error naming the line.
fn row_error(e: csv::Error) -> MimosaError {
    match e.position() {
        Some(pos) => MimosaError::Validation { line: pos.line() as usize, message: e.to_string() },
        None => MimosaError::Csv(e),
    }
}

/// Deserializes every record, pairing it with the line it starts on.
fn rows<T: DeserializeOwned, R: Read>(mut rdr: csv::Reader<R>) -> Result<Vec<(usize, T)>> {
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(row_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = record.deserialize(Some(&headers)).map_err(|e| MimosaError::Validation { line, message: e.to_string() })?;
        out.push((line, row));
    }
    Ok(out)
}

fn check_id(id: &str, line: usize) -> Result<()> {
    if id.is_empty() {
        return Err(MimosaError::Validation { line, message: "empty subject_id".into() });
    }
    Ok(())
}

pub fn read_univariate<R: Read>(input: R) -> Result<Vec<CountPair>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (line, y) in rows::<CountPair, _>(reader(input, &UNIVARIATE_HEADER)?)? {
        check_id(&y.subject_id, line)?;
        y.validate().map_err(|e| MimosaError::Validation { line, message: e.to_string() })?;
        if !seen.insert(y.subject_id.clone()) {
            return Err(MimosaError::Validation { line, message: format!("duplicate subject_id {}", y.subject_id) });
        }
        records.push(y);
    }
    Ok(records)
}

pub fn ingest_univariate(path: &Path) -> Result<Vec<CountPair>> {
    read_univariate(open(path)?)
}

pub fn write_univariate<W: Write>(records: &[CountPair], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(UNIVARIATE_HEADER)?;
    for y in records {
        w.write_record([y.subject_id.clone(), y.n_u.to_string(), y.total_u.to_string(), y.n_s.to_string(), y.total_s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Condition {
    Unstim,
    Stim,
}

#[derive(Debug, Deserialize)]
struct LongRow {
    subject_id: String,
    condition: String,
    category: String,
    count: u64,
}

pub fn read_multivariate<R: Read>(input: R) -> Result<Vec<MultiCountPair>> {
    let mut blocks: BTreeMap<String, BTreeMap<Condition, BTreeMap<String, u64>>> = BTreeMap::new();
    for (line, row) in rows::<LongRow, _>(reader(input, &MULTIVARIATE_HEADER)?)? {
        check_id(&row.subject_id, line)?;
        let condition = match row.condition.as_str() {
            "stim" => Condition::Stim,
            "unstim" => Condition::Unstim,
            other => {
                return Err(MimosaError::Validation {
                    line,
                    message: format!("condition must be stim or unstim, got {other:?}"),
                })
            }
        };
        if row.category.is_empty() {
            return Err(MimosaError::Validation { line, message: "empty category".into() });
        }
        let block = blocks.entry(row.subject_id.clone()).or_default().entry(condition).or_default();
        match block.entry(row.category) {
            Entry::Occupied(e) => {
                return Err(MimosaError::Validation {
                    line,
                    message: format!("duplicate row for subject {}, category {}", row.subject_id, e.key()),
                })
            }
            Entry::Vacant(e) => {
                e.insert(row.count);
            }
        }
    }

    let mut categories: Option<Vec<String>> = None;
    let mut records = Vec::with_capacity(blocks.len());
    for (id, by_condition) in blocks {
        let (Some(unstim), Some(stim)) = (by_condition.get(&Condition::Unstim), by_condition.get(&Condition::Stim)) else {
            return Err(MimosaError::Schema(format!("subject {id} lacks a stim or unstim block")));
        };
        let labels: Vec<String> = unstim.keys().cloned().collect();
        if !stim.keys().eq(labels.iter()) {
            return Err(MimosaError::Schema(format!("subject {id}: stim and unstim category sets differ")));
        }
        match &categories {
            None => categories = Some(labels.clone()),
            Some(expected) if *expected != labels => {
                return Err(MimosaError::Schema(format!("subject {id}: category set differs from other subjects")));
            }
            Some(_) => {}
        }
        let n_u = unstim.values().copied().collect();
        let n_s = stim.values().copied().collect();
        let y = MultiCountPair::new(id.clone(), n_s, n_u, labels).map_err(|e| MimosaError::Schema(e.to_string()))?;
        records.push(y);
    }
    Ok(records)
}

pub fn ingest_multivariate(path: &Path) -> Result<Vec<MultiCountPair>> {
    read_multivariate(open(path)?)
}

pub fn write_multivariate<W: Write>(records: &[MultiCountPair], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MULTIVARIATE_HEADER)?;
    for y in records {
        for (condition, counts) in [("unstim", &y.n_u), ("stim", &y.n_s)] {
            for (label, count) in y.category_labels.iter().zip(counts.iter()) {
                w.write_record([y.subject_id.as_str(), condition, label.as_str(), &count.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Labels sidecar `subject_id,true_z` for simulated data.
pub fn write_labels<W: Write>(ids: &[&str], labels: &[bool], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "true_z"])?;
    for (id, &z) in ids.iter().zip(labels) {
        w.write_record([*id, if z { "1" } else { "0" }])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a labels sidecar into a map from subject id to the true indicator.
pub fn read_labels<R: Read>(input: R) -> Result<BTreeMap<String, bool>> {
    #[derive(Deserialize)]
    struct Row {
        subject_id: String,
        true_z: u8,
    }
    let mut out = BTreeMap::new();
    for (line, row) in rows::<Row, _>(reader(input, &["subject_id", "true_z"])?)? {
        let z = match row.true_z {
            0 => false,
            1 => true,
            v => return Err(MimosaError::Validation { line, message: format!("true_z must be 0 or 1, got {v}") }),
        };
        if out.insert(row.subject_id.clone(), z).is_some() {
            return Err(MimosaError::Validation { line, message: format!("duplicate subject_id {}", row.subject_id) });
        }
    }
    Ok(out)
}

pub fn ingest_labels(path: &Path) -> Result<BTreeMap<String, bool>> {
    read_labels(open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_well_formed_file() {
        let text = "subject_id,n_u,N_u,n_s,N_s\na,1,100,3,120\nb,0,50,0,60\nc,2,10,2,10\n";
        let r = read_univariate(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0], CountPair::new("a", 3, 120, 1, 100).unwrap());
    }

    #[test]
    fn invalid_row_names_its_line() {
        let text = "subject_id,n_u,N_u,n_s,N_s\na,1,100,3,120\nb,0,50,61,60\n";
        match read_univariate(text.as_bytes()) {
            Err(MimosaError::Validation { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "subject_id,n_u,N_u,n_s,N_s\na,1,100,x,120\n";
        assert!(matches!(read_univariate(text.as_bytes()), Err(MimosaError::Validation { line: 2, .. })));
        let text = "subject_id,n_u,N_u,n_s,N_s\na,1,100,3,120\na,1,100,3,120\n";
        assert!(matches!(read_univariate(text.as_bytes()), Err(MimosaError::Validation { line: 3, .. })));
        assert!(matches!(read_univariate("id,n\n".as_bytes()), Err(MimosaError::Schema(_))));
    }

    #[test]
    fn long_format_parses_and_sorts_categories() {
        let text = "subject_id,condition,category,count\n\
            s2,stim,b,1\ns2,stim,a,2\ns2,unstim,a,3\ns2,unstim,b,4\n\
            s1,unstim,b,5\ns1,unstim,a,6\ns1,stim,b,7\ns1,stim,a,8\n";
        let r = read_multivariate(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].subject_id, "s1");
        assert_eq!(r[0].category_labels, vec!["a", "b"]);
        assert_eq!((r[0].n_s.clone(), r[0].n_u.clone()), (vec![8, 7], vec![6, 5]));
    }

    #[test]
    fn long_format_schema_errors() {
        let missing = "subject_id,condition,category,count\ns1,stim,a,1\ns1,stim,b,1\n";
        assert!(matches!(read_multivariate(missing.as_bytes()), Err(MimosaError::Schema(_))));
        let inconsistent = "subject_id,condition,category,count\n\
            s1,stim,a,1\ns1,stim,b,1\ns1,unstim,a,1\ns1,unstim,b,1\n\
            s2,stim,a,1\ns2,stim,c,1\ns2,unstim,a,1\ns2,unstim,c,1\n";
        assert!(matches!(read_multivariate(inconsistent.as_bytes()), Err(MimosaError::Schema(_))));
        let bad_condition = "subject_id,condition,category,count\ns1,baseline,a,1\n";
        assert!(matches!(read_multivariate(bad_condition.as_bytes()), Err(MimosaError::Validation { line: 2, .. })));
    }

    #[test]
    fn labels_round_trip() {
        let mut buf = Vec::new();
        write_labels(&["a", "b"], &[true, false], &mut buf).unwrap();
        let m = read_labels(buf.as_slice()).unwrap();
        assert_eq!(m.get("a"), Some(&true));
        assert_eq!(m.get("b"), Some(&false));
    }
}
