use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use degsde::models::ModelSpec;
use serde::Serialize;

use crate::CliError;

/// Start time and duration; the only part of a report that varies between runs.
#[derive(Debug, Serialize)]
pub struct WallClock {
    pub started_unix: f64,
    pub elapsed_seconds: f64,
}

pub struct Clock {
    started: f64,
    t0: Instant,
}

impl Clock {
    pub fn start() -> Self {
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        Self { started, t0: Instant::now() }
    }

    pub fn stop(&self) -> WallClock {
        WallClock { started_unix: self.started, elapsed_seconds: self.t0.elapsed().as_secs_f64() }
    }
}

#[derive(Serialize)]
pub struct Report<'a, C: Serialize, R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a C,
    pub seed: u64,
    pub wall_clock: WallClock,
    pub model_spec: &'a ModelSpec,
    pub passed: bool,
    pub result: R,
}

impl<'a, C: Serialize, R: Serialize> Report<'a, C, R> {
    pub fn new(command: &'static str, config: &'a C, seed: u64, clock: &Clock, spec: &'a ModelSpec, passed: bool, result: R) -> Self {
        Self {
            tool: crate::TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            seed,
            wall_clock: clock.stop(),
            model_spec: spec,
            passed,
            result,
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::usage(format!("serialising report: {e}")))
    }
}

/// Write `text` to `dir/name`, creating the directory.
pub fn write_file(dir: &str, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(Path::new(dir).join(name), text)?;
    Ok(())
}

/// Report to `dir/name` when an output directory is set, to stdout otherwise.
pub fn emit(out: Option<&str>, name: &str, json: &str) -> Result<(), CliError> {
    match out {
        Some(dir) => write_file(dir, name, &format!("{json}\n")),
        None => {
            let mut so = std::io::stdout().lock();
            writeln!(so, "{json}")?;
            Ok(())
        }
    }
}
