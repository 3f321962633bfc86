//! Study harness: configuration, seeded execution, hyperparameter
//! selection, rank aggregation, and report files.

pub mod config;
pub mod report;
pub mod runner;

use std::path::Path;

use adaptlab_core::Result;

pub use config::StudyConfig;
pub use report::{rank_protocols, ranks_csv, runs_csv, summarize, summary_csv, summary_markdown};
pub use runner::{run_study, RunRecord};

/// Runs a study and writes runs.csv, summary.csv, ranks.csv and summary.md
/// into `out_dir`. Returns the number of failed runs.
pub fn run_study_to_dir(study: &StudyConfig, out_dir: &Path, workers: usize) -> Result<usize> {
    std::fs::create_dir_all(out_dir)?;
    let records = run_study(study, out_dir, workers)?;
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    for r in records.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "run {} ({} rho={} seed={}) failed: {}",
            r.spec.run_id,
            r.spec.protocol_name,
            r.spec.rho,
            r.spec.seed,
            r.error.as_deref().unwrap_or("unknown")
        );
    }

    std::fs::write(out_dir.join("runs.csv"), runs_csv(&records))?;
    let rows = summarize(&records, study)?;
    std::fs::write(out_dir.join("summary.csv"), summary_csv(&rows))?;
    match rank_protocols(&rows) {
        Ok(table) => {
            std::fs::write(out_dir.join("ranks.csv"), ranks_csv(&table))?;
            std::fs::write(out_dir.join("summary.md"), summary_markdown(&rows, &table))?;
        }
        Err(e) => {
            // A single-protocol study has nothing to rank; still emit the
            // human-readable summary.
            eprintln!("skipping ranks.csv: {e}");
            let empty = report::RankTable { entries: Vec::new() };
            std::fs::write(out_dir.join("summary.md"), summary_markdown(&rows, &empty))?;
        }
    }
    Ok(failures)
}
