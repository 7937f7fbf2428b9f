//! Result files: JSON for single values, RFC 4180 CSV for grids, and a
//! key-value run log. Nothing here writes a timestamp or reads a clock, so
//! identical inputs produce byte-identical artifacts.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ResolvedConfig;

/// JSON has no inf or nan; they become null, and the companion flags
/// (converged, pass) carry the story.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn cplx(z: Complex64) -> Value {
    json!({ "re": finite(z.re), "im": finite(z.im) })
}

pub struct OutputSink {
    out: Option<PathBuf>,
    log: Option<PathBuf>,
}

impl OutputSink {
    /// When only --out is given the log sits next to it with extension "log";
    /// results on stdout get a log only if --log names one.
    pub fn new(out: &Option<PathBuf>, log: &Option<PathBuf>) -> Self {
        let log = log
            .clone()
            .or_else(|| out.as_ref().map(|p| p.with_extension("log")));
        Self {
            out: out.clone(),
            log,
        }
    }

    pub fn write_json(&self, payload: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(payload)?;
        text.push('\n');
        self.write_result(text.as_bytes())
    }

    pub fn write_csv<S: Serialize>(&self, rows: &[S]) -> Result<()> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        for row in rows {
            writer.serialize(row)?;
        }
        let bytes = writer.into_inner().context("flushing csv")?;
        self.write_result(&bytes)
    }

    fn write_result(&self, bytes: &[u8]) -> Result<()> {
        match &self.out {
            Some(path) => {
                fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
            }
            None => {
                std::io::stdout().write_all(bytes)?;
                Ok(())
            }
        }
    }

    pub fn write_log(
        &self,
        command: &str,
        config: &ResolvedConfig,
        extra: &[(&str, String)],
    ) -> Result<()> {
        let Some(path) = &self.log else {
            return Ok(());
        };
        let mut text = format!(
            "command: {command}\nversions: mlve-cli {}, mlve-core {}\n",
            env!("CARGO_PKG_VERSION"),
            mlve_core::VERSION,
        );
        text += &format!("config: {}\n", serde_json::to_string(config)?);
        text += &format!(
            "seeds: seed={}, qmc_seed={}\n",
            config.engine.seed, config.engine.qmc_seed
        );
        text += &format!(
            "tolerances: sigma_rel_tol={:e}, noise_floor={:e}\n",
            mlve_core::oracle::SIGMA_REL_TOL,
            config.engine.noise_floor
        );
        for (key, value) in extra {
            text += &format!("{key}: {value}\n");
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
