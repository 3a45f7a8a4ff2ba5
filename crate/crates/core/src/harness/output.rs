//! Files written after a run: the log, metrics, the gait diagram and
//! plot-ready series.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gait::save_fsm_trace;
use crate::harness::metrics::Metrics;
use crate::harness::sim::SimOutput;

#[derive(Clone, Debug, PartialEq)]
pub struct OutputPaths {
    pub log: PathBuf,
    pub metrics: PathBuf,
    pub gait: PathBuf,
    pub velocity: PathBuf,
    pub pitch: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path, stem: &str) -> Self {
        Self {
            log: dir.join(format!("{stem}_log.csv")),
            metrics: dir.join(format!("{stem}_metrics.json")),
            gait: dir.join(format!("{stem}_gait.csv")),
            velocity: dir.join(format!("{stem}_velocity.csv")),
            pitch: dir.join(format!("{stem}_pitch.csv")),
        }
    }
}

fn write_series(
    path: &Path,
    header: &str,
    config: &str,
    rows: impl Iterator<Item = [f64; 3]>,
) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(f);
    let go = || -> std::io::Result<()> {
        writeln!(out, "# config: {config}")?;
        writeln!(out, "{header}")?;
        for [a, b, c] in rows {
            writeln!(out, "{a},{b},{c}")?;
        }
        out.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

pub fn emit_outputs(run: &SimOutput, metrics: &Metrics, paths: &OutputPaths) -> Result<()> {
    for p in [
        &paths.log,
        &paths.metrics,
        &paths.gait,
        &paths.velocity,
        &paths.pitch,
    ] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    run.log.save(&paths.log)?;
    let doc = serde_json::json!({
        "config": serde_json::from_str::<serde_json::Value>(&run.log.config).unwrap_or(serde_json::Value::Null),
        "metrics": metrics,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::malformed("metrics", e))?;
    std::fs::write(&paths.metrics, text).map_err(|e| Error::io(&paths.metrics, e))?;
    save_fsm_trace(&paths.gait, &run.trace)?;
    let recs = &run.log.records;
    write_series(
        &paths.velocity,
        "t,vx,ref_vx",
        &run.log.config,
        recs.iter().map(|r| [r.t, r.state[3], r.reference[3]]),
    )?;
    write_series(
        &paths.pitch,
        "t,theta,ref_theta",
        &run.log.config,
        recs.iter().map(|r| [r.t, r.state[2], r.reference[2]]),
    )
}
