//! Writes a simulated campaign to CSV, ingests it strictly and prints the
//! per-person and per-coin tables.

use coinflip::data::{combined_row, exclude_outliers, ingest_path, summarize_by, write_csv, IngestOptions, Unit};
use coinflip::simulator::{simulate, PopulationSpec};

fn main() -> coinflip::Result<()> {
    let cfg = PopulationSpec::constant(6, 3, 4, 0.51, 0.02).draw(7)?;
    let path = std::env::temp_dir().join("coinflip-example-flips.csv");
    write_csv(&simulate(&cfg)?, std::fs::File::create(&path)?)?;

    let (data, report) = ingest_path(&path, &IngestOptions { strict: true, ..Default::default() })?;
    println!("ingested {} flips from {} ({} violations)", data.len(), path.display(), report.violations.len());

    for unit in [Unit::Person, Unit::Coin] {
        println!("\n{unit:?}");
        for r in summarize_by(&data, unit).iter().chain([&combined_row(&data, unit)]) {
            println!("{:>10} {:>6}/{:<6} {:.4} [{:.4}, {:.4}]", r.unit_id, r.k, r.n, r.proportion, r.ci_low, r.ci_high);
        }
    }

    let kept = exclude_outliers(&data, 0.53)?;
    println!("\nexcluded above 0.53: {:?}", kept.excluded);
    Ok(())
}
