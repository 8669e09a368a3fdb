//! Shared test support: the planted-signal dataset generator, the
//! fixed-point UCB oracle, and the scripted fixture builders.

#![allow(dead_code)]

pub mod data;
pub mod fixture;
pub mod hp;

use std::path::Path;

/// Reads a run's iteration record bytes, keyed by iteration number.
pub fn record_bytes(run_dir: &Path, t: u32) -> Vec<u8> {
    let path = run_dir
        .join("iterations")
        .join(t.to_string())
        .join("record.json");
    std::fs::read(&path).unwrap_or_else(|e| panic!("missing {}: {e}", path.display()))
}

pub fn load_records(run_dir: &Path, max_t: u32) -> Vec<featforge::orchestrator::IterationRecord> {
    (1..=max_t)
        .map(|t| {
            let path = run_dir
                .join("iterations")
                .join(t.to_string())
                .join("record.json");
            featforge::orchestrator::IterationRecord::load(&path).expect("record loads")
        })
        .collect()
}
