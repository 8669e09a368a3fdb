//! Escape hatch: run an arbitrary generated program through an external
//! command and read the feature table back from CSV.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::DslError;
use crate::table::FeatureTable;
use crate::EntityId;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunnerConfig {
    /// Shell command with `{program}`, `{events}`, `{labels}`, `{schema}`
    /// and `{output}` placeholders.
    pub command_template: String,
    #[serde(default = "default_runner_timeout")]
    pub timeout_seconds: u64,
}

fn default_runner_timeout() -> u64 {
    120
}

/// Writes `program_text` to a temp file, substitutes the placeholders,
/// runs the command under `sh -c`, and validates the output CSV: one row
/// per requested entity, finite numeric cells.
pub fn execute_external(
    runner: &RunnerConfig,
    program_text: &str,
    events_path: &Path,
    labels_path: &Path,
    schema_path: &Path,
    ids: &[EntityId],
) -> Result<FeatureTable, DslError> {
    let dir = tempfile::tempdir()?;
    let program_path = dir.path().join("program.fdl");
    std::fs::write(&program_path, program_text)?;
    let output_path = dir.path().join("features.csv");

    let cmd = runner
        .command_template
        .replace("{program}", &program_path.display().to_string())
        .replace("{events}", &events_path.display().to_string())
        .replace("{labels}", &labels_path.display().to_string())
        .replace("{schema}", &schema_path.display().to_string())
        .replace("{output}", &output_path.display().to_string());

    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;

    // Drain pipes on threads so a chatty runner cannot deadlock the poll
    // loop below.
    let mut stdout_pipe = child.stdout.take().expect("stdout piped");
    let mut stderr_pipe = child.stderr.take().expect("stderr piped");
    let out_handle = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stdout_pipe.read_to_string(&mut buf);
        buf
    });
    let err_handle = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr_pipe.read_to_string(&mut buf);
        buf
    });

    let budget = Duration::from_secs(runner.timeout_seconds);
    let started = Instant::now();
    let status = loop {
        match child.try_wait()? {
            Some(status) => break status,
            None if started.elapsed() > budget => {
                let _ = child.kill();
                let _ = child.wait();
                // Grandchildren may still hold the pipes open; dropping
                // the reader handles detaches them instead of blocking.
                drop(out_handle);
                drop(err_handle);
                return Err(DslError::Timeout(budget));
            }
            None => std::thread::sleep(Duration::from_millis(10)),
        }
    };
    let _stdout = out_handle.join().unwrap_or_default();
    let stderr = err_handle.join().unwrap_or_default();

    if !status.success() {
        return Err(DslError::Runner {
            code: status.code(),
            stderr: stderr.trim().to_string(),
        });
    }

    let table = FeatureTable::read_csv(&output_path)
        .map_err(|e| DslError::OutputContract(e.to_string()))?;

    // Exactly one row per requested id; extra entities are ignored.
    let mut by_id: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (i, id) in table.entity_ids.iter().enumerate() {
        if by_id.insert(id.as_str(), i).is_some() {
            return Err(DslError::OutputContract(format!(
                "duplicate row for entity {id:?}"
            )));
        }
    }
    let mut values = Vec::with_capacity(ids.len());
    for id in ids {
        match by_id.get(id.as_str()) {
            Some(&i) => values.push(table.values[i].clone()),
            None => {
                return Err(DslError::OutputContract(format!(
                    "runner output is missing entity {id:?}"
                )))
            }
        }
    }
    Ok(FeatureTable {
        entity_ids: ids.to_vec(),
        columns: table.columns,
        values,
    })
}
