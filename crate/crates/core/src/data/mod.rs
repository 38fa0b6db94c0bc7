//! Flip records: ingestion, validation, aggregation and descriptive summaries.

mod csvio;
mod summary;

pub use csvio::{ingest_csv, ingest_path, write_csv, IngestOptions, IngestReport, ProtocolViolation};
pub use summary::{
    aggregate, betting_edge, combined_row, exclude_outliers, summarize_by, summary_row,
    write_summary_csv, AggregateCell, Cells, Exclusion, SummaryRow, Unit,
};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "H")]
    Heads,
    #[serde(rename = "T")]
    Tails,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::Heads => Side::Tails,
            Side::Tails => Side::Heads,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Side::Heads => "H",
            Side::Tails => "T",
        }
    }

    /// +1 for heads, -1 for tails: the sign of the same-side term in the
    /// heads log-odds.
    pub fn sign(self) -> f64 {
        match self {
            Side::Heads => 1.0,
            Side::Tails => -1.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "H" => Ok(Side::Heads),
            "T" => Ok(Side::Tails),
            other => Err(format!("bad side token {other:?} (expected H or T)")),
        }
    }
}

/// One coin flip in its external (string-keyed) form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub person_id: String,
    pub coin_id: String,
    pub site: String,
    pub sequence_id: String,
    pub flip_index: u64,
    pub start: Side,
    pub landed: Side,
}

/// Interned flip; the indices point into the owning dataset's tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flip {
    pub person: u32,
    pub coin: u32,
    pub site: u32,
    pub sequence: u32,
    pub flip_index: u64,
    pub start: Side,
    pub landed: Side,
}

impl Flip {
    pub fn is_same(&self) -> bool {
        self.start == self.landed
    }

    pub fn is_heads(&self) -> bool {
        self.landed == Side::Heads
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), i);
        i
    }
}

/// Validated, immutable collection of flips in recorded order.
///
/// Name tables are populated in order of first appearance, so two datasets
/// built from the same record sequence compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlipDataset {
    flips: Vec<Flip>,
    persons: Interner,
    coins: Interner,
    sites: Interner,
    sequences: Interner,
}

impl FlipDataset {
    /// Builds a dataset from records, enforcing the integrity rules: the flip
    /// index must strictly increase within each person's record. Protocol
    /// chaining is *not* checked here (see [`FlipDataset::protocol_violations`]).
    pub fn from_records<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = FlipRecord>,
    {
        let mut d = FlipDataset::default();
        let mut last_index: HashMap<u32, u64> = HashMap::new();
        for (row, r) in records.into_iter().enumerate() {
            let person = d.persons.intern(&r.person_id);
            if let Some(&prev) = last_index.get(&person) {
                if r.flip_index == prev {
                    return Err(Error::Integrity(format!(
                        "record {}: duplicate flip_index {} for person {}",
                        row + 1,
                        r.flip_index,
                        r.person_id
                    )));
                }
                if r.flip_index < prev {
                    return Err(Error::Integrity(format!(
                        "record {}: flip_index {} for person {} does not increase (previous {prev})",
                        row + 1,
                        r.flip_index,
                        r.person_id
                    )));
                }
            }
            last_index.insert(person, r.flip_index);
            let flip = Flip {
                person,
                coin: d.coins.intern(&r.coin_id),
                site: d.sites.intern(&r.site),
                sequence: d.sequences.intern(&r.sequence_id),
                flip_index: r.flip_index,
                start: r.start,
                landed: r.landed,
            };
            d.flips.push(flip);
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    pub fn flips(&self) -> &[Flip] {
        &self.flips
    }

    pub fn persons(&self) -> &[String] {
        &self.persons.names
    }

    pub fn coins(&self) -> &[String] {
        &self.coins.names
    }

    pub fn sites(&self) -> &[String] {
        &self.sites.names
    }

    pub fn person_name(&self, i: u32) -> &str {
        &self.persons.names[i as usize]
    }

    pub fn coin_name(&self, i: u32) -> &str {
        &self.coins.names[i as usize]
    }

    pub fn site_name(&self, i: u32) -> &str {
        &self.sites.names[i as usize]
    }

    pub fn sequence_name(&self, i: u32) -> &str {
        &self.sequences.names[i as usize]
    }

    pub fn record(&self, i: usize) -> FlipRecord {
        let f = &self.flips[i];
        FlipRecord {
            person_id: self.person_name(f.person).to_owned(),
            coin_id: self.coin_name(f.coin).to_owned(),
            site: self.site_name(f.site).to_owned(),
            sequence_id: self.sequence_name(f.sequence).to_owned(),
            flip_index: f.flip_index,
            start: f.start,
            landed: f.landed,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = FlipRecord> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    /// Site of each person (the site of their first record).
    pub fn person_sites(&self) -> Vec<String> {
        let mut out = vec![None; self.persons.names.len()];
        for f in &self.flips {
            let slot = &mut out[f.person as usize];
            if slot.is_none() {
                *slot = Some(f.site);
            }
        }
        out.into_iter()
            .map(|s| s.map(|s| self.site_name(s).to_owned()).unwrap_or_default())
            .collect()
    }

    /// Positions where the start side differs from the previous landing in
    /// the same sequence.
    pub fn protocol_violations(&self) -> Vec<ProtocolViolation> {
        let mut last: HashMap<u32, Side> = HashMap::new();
        let mut out = Vec::new();
        for (i, f) in self.flips.iter().enumerate() {
            if let Some(&prev) = last.get(&f.sequence) {
                if prev != f.start {
                    out.push(ProtocolViolation {
                        row: i + 1,
                        sequence_id: self.sequence_name(f.sequence).to_owned(),
                        expected: prev,
                        found: f.start,
                    });
                }
            }
            last.insert(f.sequence, f.landed);
        }
        out
    }

    /// Number of flips in each sequence, in order of first appearance.
    pub fn sequence_lengths(&self) -> Vec<(String, usize)> {
        let mut counts = vec![0usize; self.sequences.names.len()];
        for f in &self.flips {
            counts[f.sequence as usize] += 1;
        }
        self.sequences.names.iter().cloned().zip(counts).collect()
    }

    /// Keeps the flips for which `keep` is true; name tables are rebuilt.
    pub fn filter(&self, keep: impl Fn(&Flip) -> bool) -> FlipDataset {
        let kept = self
            .flips
            .iter()
            .enumerate()
            .filter(|(_, f)| keep(f))
            .map(|(i, _)| self.record(i));
        FlipDataset::from_records(kept).expect("subset of a valid dataset is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(person: &str, coin: &str, seq: &str, i: u64, s: Side, l: Side) -> FlipRecord {
        FlipRecord {
            person_id: person.into(),
            coin_id: coin.into(),
            site: "Internet".into(),
            sequence_id: seq.into(),
            flip_index: i,
            start: s,
            landed: l,
        }
    }

    #[test]
    fn side_tokens() {
        assert_eq!("H".parse::<Side>().unwrap(), Side::Heads);
        assert_eq!(" T ".parse::<Side>().unwrap(), Side::Tails);
        assert!("X".parse::<Side>().is_err());
        assert_eq!(Side::Heads.flip(), Side::Tails);
        assert_eq!(serde_json::to_string(&Side::Tails).unwrap(), "\"T\"");
    }

    #[test]
    fn duplicate_index_is_integrity_error() {
        use Side::*;
        let r = vec![rec("a", "c", "s", 0, Heads, Heads), rec("a", "c", "s", 0, Heads, Tails)];
        assert!(matches!(FlipDataset::from_records(r), Err(Error::Integrity(_))));
    }

    #[test]
    fn violations_are_reported() {
        use Side::*;
        let r = vec![
            rec("a", "c", "s", 0, Heads, Tails),
            rec("a", "c", "s", 1, Heads, Heads),
            rec("a", "c", "s", 2, Heads, Tails),
        ];
        let d = FlipDataset::from_records(r).unwrap();
        let v = d.protocol_violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].row, 2);
        assert_eq!(v[0].expected, Tails);
    }
}
