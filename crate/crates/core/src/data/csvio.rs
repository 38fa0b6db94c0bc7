use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use super::{FlipDataset, FlipRecord, Side};
use crate::{Error, Result};

pub(crate) const COLUMNS: [&str; 7] =
    ["person_id", "coin_id", "site", "sequence_id", "flip_index", "start", "landed"];

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Abort on the first chaining violation instead of reporting it.
    pub strict: bool,
    /// When set, every site label must appear in this list.
    pub allowed_sites: Option<Vec<String>>,
}

/// A flip whose start side is not the previous landing of its sequence.
/// `row` counts data rows from 1 (the header is not counted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProtocolViolation {
    pub row: usize,
    pub sequence_id: String,
    pub expected: Side,
    pub found: Side,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub records: usize,
    pub persons: usize,
    pub coins: usize,
    pub sequences: usize,
    pub violations: Vec<ProtocolViolation>,
    pub min_sequence_length: usize,
    pub max_sequence_length: usize,
}

fn field(rec: &csv::StringRecord, i: usize, row: usize) -> Result<&str> {
    rec.get(i).ok_or_else(|| Error::Parse { row, message: format!("missing column {}", COLUMNS[i]) })
}

fn parse_record(rec: &csv::StringRecord, row: usize) -> Result<FlipRecord> {
    let parse_side = |i: usize| -> Result<Side> {
        field(rec, i, row)?
            .parse()
            .map_err(|m: String| Error::Parse { row, message: format!("{}: {m}", COLUMNS[i]) })
    };
    let idx = field(rec, 4, row)?.trim();
    let flip_index: i64 = idx
        .parse()
        .map_err(|_| Error::Parse { row, message: format!("flip_index: not an integer: {idx:?}") })?;
    if flip_index < 0 {
        return Err(Error::Parse { row, message: format!("flip_index: negative value {flip_index}") });
    }
    Ok(FlipRecord {
        person_id: field(rec, 0, row)?.trim().to_owned(),
        coin_id: field(rec, 1, row)?.trim().to_owned(),
        site: field(rec, 2, row)?.trim().to_owned(),
        sequence_id: field(rec, 3, row)?.trim().to_owned(),
        flip_index: flip_index as u64,
        start: parse_side(5)?,
        landed: parse_side(6)?,
    })
}

/// Reads the flip CSV format. Columns are located by header name, so their
/// order is free; extra columns are ignored.
pub fn ingest_csv<R: Read>(input: R, options: &IngestOptions) -> Result<(FlipDataset, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let mut positions = [0usize; 7];
    for (slot, name) in positions.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse { row: 0, message: format!("header lacks column {name}") })?;
    }
    let mut records = Vec::new();
    let mut ordered = csv::StringRecord::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        ordered.clear();
        for &p in &positions {
            ordered.push_field(rec.get(p).unwrap_or(""));
        }
        let r = parse_record(&ordered, row)?;
        if let Some(allowed) = &options.allowed_sites {
            if !allowed.iter().any(|s| s == &r.site) {
                return Err(Error::Parse { row, message: format!("site {:?} not in the allow-list", r.site) });
            }
        }
        records.push(r);
    }
    let dataset = FlipDataset::from_records(records)?;
    let violations = dataset.protocol_violations();
    if options.strict && !violations.is_empty() {
        return Err(Error::Protocol { count: violations.len(), first_row: violations[0].row });
    }
    let lengths = dataset.sequence_lengths();
    let report = IngestReport {
        records: dataset.len(),
        persons: dataset.persons().len(),
        coins: dataset.coins().len(),
        sequences: lengths.len(),
        violations,
        min_sequence_length: lengths.iter().map(|l| l.1).min().unwrap_or(0),
        max_sequence_length: lengths.iter().map(|l| l.1).max().unwrap_or(0),
    };
    Ok((dataset, report))
}

pub fn ingest_path(path: &Path, options: &IngestOptions) -> Result<(FlipDataset, IngestReport)> {
    ingest_csv(File::open(path)?, options)
}

/// Writes the dataset in the ingest schema.
pub fn write_csv<W: Write>(d: &FlipDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    let mut idx = String::new();
    for f in d.flips() {
        idx.clear();
        idx.push_str(&f.flip_index.to_string());
        w.write_record([
            d.person_name(f.person),
            d.coin_name(f.coin),
            d.site_name(f.site),
            d.sequence_name(f.sequence),
            idx.as_str(),
            f.start.token(),
            f.landed.token(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "person_id,coin_id,site,sequence_id,flip_index,start,landed
p1,0.50EUR,Internet,s1,0,H,H
p1,0.50EUR,Internet,s1,1,H,T
p1,0.50EUR,Internet,s1,2,T,T
p1,0.50EUR,Internet,s1,3,T,H
p1,0.50EUR,Internet,s1,4,H,H
p1,0.50EUR,Internet,s1,5,H,H
";

    #[test]
    fn toy_file() {
        let (d, rep) = ingest_csv(TOY.as_bytes(), &IngestOptions { strict: true, ..Default::default() }).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(rep.persons, 1);
        assert_eq!(rep.coins, 1);
        assert!(rep.violations.is_empty());
        assert_eq!(rep.max_sequence_length, 6);
    }

    #[test]
    fn bad_side_names_row() {
        let bad = TOY.replace("p1,0.50EUR,Internet,s1,3,T,H", "p1,0.50EUR,Internet,s1,3,T,X");
        match ingest_csv(bad.as_bytes(), &IngestOptions::default()) {
            Err(Error::Parse { row, message }) => {
                assert_eq!(row, 4);
                assert!(message.contains("landed"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_index_rejected() {
        let bad = TOY.replace(",s1,2,", ",s1,-2,");
        assert!(matches!(ingest_csv(bad.as_bytes(), &IngestOptions::default()), Err(Error::Parse { row: 3, .. })));
    }

    #[test]
    fn strict_and_lenient_protocol() {
        let broken = TOY.replace("p1,0.50EUR,Internet,s1,2,T,T", "p1,0.50EUR,Internet,s1,2,H,T");
        let strict = IngestOptions { strict: true, ..Default::default() };
        assert!(matches!(
            ingest_csv(broken.as_bytes(), &strict),
            Err(Error::Protocol { count: 1, first_row: 3 })
        ));
        let (_, rep) = ingest_csv(broken.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(rep.violations.len(), 1);
    }

    #[test]
    fn allow_list() {
        let opts = IngestOptions { strict: false, allowed_sites: Some(vec!["Marathon".into()]) };
        assert!(ingest_csv(TOY.as_bytes(), &opts).is_err());
    }

    #[test]
    fn round_trip() {
        let (d, _) = ingest_csv(TOY.as_bytes(), &IngestOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), TOY);
        let (again, _) = ingest_csv(buf.as_slice(), &IngestOptions::default()).unwrap();
        assert_eq!(again, d);
    }
}
