use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{FlipDataset, Side};
use crate::numerics::beta_quantile;
use crate::{Error, Result};

/// Sufficient statistics for one (coin, person, start side) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub coin: usize,
    pub person: usize,
    pub start: Side,
    pub n_trials: u64,
    pub n_heads: u64,
    pub n_same: u64,
}

impl AggregateCell {
    pub fn new(coin: usize, person: usize, start: Side, n_trials: u64, n_heads: u64) -> Self {
        let n_same = match start {
            Side::Heads => n_heads,
            Side::Tails => n_trials - n_heads,
        };
        AggregateCell { coin, person, start, n_trials, n_heads, n_same }
    }
}

/// Aggregated cells plus the unit tables they index into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cells {
    pub persons: Vec<String>,
    pub coins: Vec<String>,
    /// Site label per person (empty when unknown).
    pub person_sites: Vec<String>,
    pub cells: Vec<AggregateCell>,
}

impl Cells {
    pub fn new(persons: Vec<String>, coins: Vec<String>, person_sites: Vec<String>, cells: Vec<AggregateCell>) -> Result<Self> {
        for c in &cells {
            if c.person >= persons.len() || c.coin >= coins.len() {
                return Err(Error::InvalidArgument(format!("cell refers to unknown unit: {c:?}")));
            }
            if c.n_heads > c.n_trials {
                return Err(Error::InvalidArgument(format!("more heads than trials: {c:?}")));
            }
        }
        if person_sites.len() != persons.len() {
            return Err(Error::InvalidArgument("one site label per person expected".into()));
        }
        Ok(Cells { persons, coins, person_sites, cells })
    }

    pub fn n_trials(&self) -> u64 {
        self.cells.iter().map(|c| c.n_trials).sum()
    }

    pub fn n_heads(&self) -> u64 {
        self.cells.iter().map(|c| c.n_heads).sum()
    }

    pub fn n_same(&self) -> u64 {
        self.cells.iter().map(|c| c.n_same).sum()
    }

    /// `(same, trials)` per person.
    pub fn person_totals(&self) -> Vec<(u64, u64)> {
        let mut out = vec![(0, 0); self.persons.len()];
        for c in &self.cells {
            out[c.person].0 += c.n_same;
            out[c.person].1 += c.n_trials;
        }
        out
    }

    /// `(heads, trials)` per coin.
    pub fn coin_totals(&self) -> Vec<(u64, u64)> {
        let mut out = vec![(0, 0); self.coins.len()];
        for c in &self.cells {
            out[c.coin].0 += c.n_heads;
            out[c.coin].1 += c.n_trials;
        }
        out
    }

    /// Cell indices grouped by person.
    pub fn cells_by_person(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.persons.len()];
        for (i, c) in self.cells.iter().enumerate() {
            out[c.person].push(i);
        }
        out
    }

    /// Cell indices grouped by coin.
    pub fn cells_by_coin(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.coins.len()];
        for (i, c) in self.cells.iter().enumerate() {
            out[c.coin].push(i);
        }
        out
    }

    /// Restricts to the given persons, dropping coins left without cells.
    pub fn retain_persons(&self, keep: impl Fn(usize) -> bool) -> Cells {
        let person_map: Vec<Option<usize>> = {
            let mut next = 0;
            (0..self.persons.len())
                .map(|p| keep(p).then(|| {
                    next += 1;
                    next - 1
                }))
                .collect()
        };
        let used: BTreeSet<usize> = self.cells.iter().filter(|c| person_map[c.person].is_some()).map(|c| c.coin).collect();
        let coin_map: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let cells = self
            .cells
            .iter()
            .filter_map(|c| {
                let person = person_map[c.person]?;
                Some(AggregateCell { person, coin: coin_map[&c.coin], ..*c })
            })
            .collect();
        let persons = (0..self.persons.len()).filter(|&p| person_map[p].is_some());
        Cells {
            persons: persons.clone().map(|p| self.persons[p].clone()).collect(),
            person_sites: persons.map(|p| self.person_sites[p].clone()).collect(),
            coins: used.iter().map(|&c| self.coins[c].clone()).collect(),
            cells,
        }
    }
}

/// Tallies the dataset into one cell per observed (coin, person, start).
pub fn aggregate(d: &FlipDataset) -> Cells {
    let mut tally: BTreeMap<(u32, u32, Side), (u64, u64)> = BTreeMap::new();
    for f in d.flips() {
        let e = tally.entry((f.coin, f.person, f.start)).or_default();
        e.0 += 1;
        e.1 += f.is_heads() as u64;
    }
    let cells = tally
        .into_iter()
        .map(|((coin, person, start), (n, h))| AggregateCell::new(coin as usize, person as usize, start, n, h))
        .collect();
    Cells {
        persons: d.persons().to_vec(),
        coins: d.coins().to_vec(),
        person_sites: d.person_sites(),
        cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Person,
    Coin,
}

/// One line of a by-person (same-side) or by-coin (heads) summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub unit_id: String,
    pub k: u64,
    pub n: u64,
    pub proportion: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Coins used by the person, or people who used the coin.
    pub partners: usize,
    pub site: Option<String>,
}

/// Proportion with the central 95% interval of Beta(k+1, n-k+1).
pub fn summary_row(unit_id: &str, k: u64, n: u64, partners: usize, site: Option<String>) -> SummaryRow {
    let (a, b) = ((k + 1) as f64, (n - k + 1) as f64);
    SummaryRow {
        unit_id: unit_id.to_owned(),
        k,
        n,
        proportion: if n == 0 { f64::NAN } else { k as f64 / n as f64 },
        ci_low: beta_quantile(0.025, a, b).expect("valid beta parameters"),
        ci_high: beta_quantile(0.975, a, b).expect("valid beta parameters"),
        partners,
        site,
    }
}

/// Per-unit summaries sorted by ascending proportion (ties by name).
/// Persons are summarized by same-side landings, coins by heads.
pub fn summarize_by(d: &FlipDataset, unit: Unit) -> Vec<SummaryRow> {
    let (names, n_units) = match unit {
        Unit::Person => (d.persons(), d.persons().len()),
        Unit::Coin => (d.coins(), d.coins().len()),
    };
    let mut k = vec![0u64; n_units];
    let mut n = vec![0u64; n_units];
    let mut partners = vec![BTreeSet::new(); n_units];
    for f in d.flips() {
        let (u, other, hit) = match unit {
            Unit::Person => (f.person, f.coin, f.is_same()),
            Unit::Coin => (f.coin, f.person, f.is_heads()),
        };
        k[u as usize] += hit as u64;
        n[u as usize] += 1;
        partners[u as usize].insert(other);
    }
    let sites = d.person_sites();
    let mut rows: Vec<SummaryRow> = (0..n_units)
        .map(|u| {
            let site = (unit == Unit::Person).then(|| sites[u].clone());
            summary_row(&names[u], k[u], n[u], partners[u].len(), site)
        })
        .collect();
    rows.sort_by(|a, b| a.proportion.total_cmp(&b.proportion).then_with(|| a.unit_id.cmp(&b.unit_id)));
    rows
}

/// The "Combined" line: pooled counts, with `partners` the number of
/// distinct units on the other side (coins for persons, people for coins).
pub fn combined_row(d: &FlipDataset, unit: Unit) -> SummaryRow {
    let (k, partners) = match unit {
        Unit::Person => (d.flips().iter().filter(|f| f.is_same()).count(), d.coins().len()),
        Unit::Coin => (d.flips().iter().filter(|f| f.is_heads()).count(), d.persons().len()),
    };
    summary_row("Combined", k as u64, d.len() as u64, partners, None)
}

/// Table-style CSV: unit, successes, flips, partners, proportion, interval.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], unit: Unit, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match unit {
        Unit::Person => w.write_record(["person", "same_side", "flips", "coins", "proportion", "ci_low", "ci_high", "site"])?,
        Unit::Coin => w.write_record(["coin", "heads", "flips", "people", "proportion", "ci_low", "ci_high", "site"])?,
    }
    for r in rows {
        w.write_record([
            r.unit_id.clone(),
            r.k.to_string(),
            r.n.to_string(),
            r.partners.to_string(),
            format!("{:.6}", r.proportion),
            format!("{:.6}", r.ci_low),
            format!("{:.6}", r.ci_high),
            r.site.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Exclusion {
    pub dataset: FlipDataset,
    pub excluded: Vec<String>,
}

/// Drops every person whose observed same-side proportion exceeds
/// `threshold`.
pub fn exclude_outliers(d: &FlipDataset, threshold: f64) -> Result<Exclusion> {
    if !(threshold > 0.5 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("outlier threshold {threshold} outside (0.5, 1)")));
    }
    let mut same = vec![0u64; d.persons().len()];
    let mut total = vec![0u64; d.persons().len()];
    for f in d.flips() {
        same[f.person as usize] += f.is_same() as u64;
        total[f.person as usize] += 1;
    }
    let drop: Vec<bool> = same
        .iter()
        .zip(&total)
        .map(|(&s, &n)| n > 0 && s as f64 / n as f64 > threshold)
        .collect();
    let excluded = d
        .persons()
        .iter()
        .zip(&drop)
        .filter(|(_, &x)| x)
        .map(|(p, _)| p.clone())
        .collect();
    let dataset = d.filter(|f| !drop[f.person as usize]);
    Ok(Exclusion { dataset, excluded })
}

/// Expected profit from `n_bets` even-money bets on the same side.
pub fn betting_edge(p_same: f64, n_bets: u64, stake: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_same) {
        return Err(Error::InvalidArgument(format!("probability {p_same} outside [0, 1]")));
    }
    Ok(n_bets as f64 * stake * (2.0 * p_same - 1.0))
}
