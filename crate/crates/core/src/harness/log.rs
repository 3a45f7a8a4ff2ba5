//! Per-tick run records and their CSV form.
//!
//! The file starts with `#`-prefixed header lines carrying the full config,
//! followed by one CSV row per control tick. Floats are written in shortest
//! round-trip form so reading a log back reproduces it exactly.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::{Contacts, Gait};
use crate::srb::{ContactMode, INPUT_DIM, STATE_DIM};

pub const LOG_COLUMNS: [&str; 40] = [
    "t",
    "px",
    "pz",
    "theta",
    "vx",
    "vz",
    "omega",
    "mode",
    "fr",
    "fl",
    "rr",
    "rl",
    "Fix",
    "Fiz",
    "Fjx",
    "Fjz",
    "tau_fr_hip",
    "tau_fr_knee",
    "tau_fl_hip",
    "tau_fl_knee",
    "tau_rr_hip",
    "tau_rr_knee",
    "tau_rl_hip",
    "tau_rl_knee",
    "qp_obj",
    "qp_kkt",
    "qp_ms",
    "event",
    "ref_px",
    "ref_pz",
    "ref_theta",
    "ref_vx",
    "ref_vz",
    "ref_omega",
    "gait",
    "phase",
    "phase_clock",
    "pending",
    "qp_iter",
    "slip",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpStats {
    pub objective: f64,
    pub kkt_residual: f64,
    /// Wall-clock solve time, milliseconds. Absent when timing is not logged.
    pub solve_ms: Option<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub state: [f64; STATE_DIM],
    pub mode: ContactMode,
    pub contacts: Contacts,
    pub forces: [f64; INPUT_DIM],
    /// `[hip, knee]` per leg in `FR, FL, RR, RL` order.
    pub torques: [f64; 8],
    pub qp: Option<QpStats>,
    /// `;`-separated event tags, empty when nothing happened.
    pub events: String,
    pub reference: [f64; STATE_DIM],
    pub gait: Gait,
    pub phase: usize,
    pub phase_clock: f64,
    pub pending: Option<Gait>,
    /// Force multiplier of an active slip window.
    pub slip: Option<f64>,
}

impl LogRecord {
    pub fn has_event(&self, prefix: &str) -> bool {
        self.event_tags().any(|e| e.starts_with(prefix))
    }

    pub fn event_tags(&self) -> impl Iterator<Item = &str> {
        self.events.split(';').filter(|s| !s.is_empty())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    /// Config JSON the run was produced with.
    pub config: String,
    pub records: Vec<LogRecord>,
    /// Set when the run ended early on a fall.
    pub failure: Option<String>,
}

impl RunLog {
    pub fn new(config: String) -> Self {
        Self {
            config,
            records: Vec::new(),
            failure: None,
        }
    }

    pub fn fell(&self) -> bool {
        self.failure.is_some()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        let io = |e: std::io::Error| Error::malformed("run log", e.to_string());
        writeln!(out, "# config: {}", self.config.replace('\n', " ")).map_err(io)?;
        if let Some(f) = &self.failure {
            writeln!(out, "# failure: {}", f.replace('\n', " ")).map_err(io)?;
        }
        {
            let mut w = csv::Writer::from_writer(&mut out);
            let csv_err = |e: csv::Error| Error::malformed("run log", e.to_string());
            w.write_record(LOG_COLUMNS).map_err(csv_err)?;
            for r in &self.records {
                w.write_record(record_fields(r)).map_err(csv_err)?;
            }
            w.flush().map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f).map_err(|e| match e {
            Error::Malformed { detail, .. } => Error::io(path, std::io::Error::other(detail)),
            other => other,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("log is UTF-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut config = None;
        let mut failure = None;
        let mut body = String::new();
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader
                .read_line(&mut line)
                .map_err(|e| Error::malformed("run log", e.to_string()))?;
            if n == 0 {
                break;
            }
            if let Some(rest) = line.strip_prefix("# config: ") {
                config = Some(rest.trim_end_matches(['\r', '\n']).to_string());
            } else if let Some(rest) = line.strip_prefix("# failure: ") {
                failure = Some(rest.trim_end_matches(['\r', '\n']).to_string());
            } else if line.starts_with('#') {
                continue;
            } else {
                body.push_str(&line);
                reader
                    .read_to_string(&mut body)
                    .map_err(|e| Error::malformed("run log", e.to_string()))?;
                break;
            }
        }
        let config = config.ok_or_else(|| Error::malformed("run log", "missing config header"))?;
        let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| Error::malformed("run log", e.to_string()))?
            .clone();
        if header.iter().ne(LOG_COLUMNS.iter().copied()) {
            return Err(Error::malformed("run log", "unexpected column header"));
        }
        let mut records = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::malformed("run log", e.to_string()))?;
            records.push(parse_record(&rec).map_err(|detail| {
                Error::malformed("run log", format!("row {}: {detail}", row + 1))
            })?);
        }
        if records.windows(2).any(|w| !(w[0].t < w[1].t)) {
            return Err(Error::malformed(
                "run log",
                "time is not strictly increasing",
            ));
        }
        Ok(Self {
            config,
            records,
            failure,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn record_fields(r: &LogRecord) -> Vec<String> {
    let mut f = Vec::with_capacity(LOG_COLUMNS.len());
    f.push(r.t.to_string());
    f.extend(r.state.iter().map(f64::to_string));
    f.push(r.mode.to_string());
    f.extend(r.contacts.iter().map(|&c| u8::from(c).to_string()));
    f.extend(r.forces.iter().map(f64::to_string));
    f.extend(r.torques.iter().map(f64::to_string));
    f.push(opt(r.qp.as_ref().map(|q| q.objective)));
    f.push(opt(r.qp.as_ref().map(|q| q.kkt_residual)));
    f.push(opt(r.qp.as_ref().and_then(|q| q.solve_ms)));
    f.push(r.events.clone());
    f.extend(r.reference.iter().map(f64::to_string));
    f.push(r.gait.to_string());
    f.push(r.phase.to_string());
    f.push(r.phase_clock.to_string());
    f.push(opt(r.pending));
    f.push(opt(r.qp.as_ref().map(|q| q.iterations)));
    f.push(opt(r.slip));
    f
}

fn parse_record(rec: &csv::StringRecord) -> std::result::Result<LogRecord, String> {
    if rec.len() != LOG_COLUMNS.len() {
        return Err(format!(
            "{} fields, expected {}",
            rec.len(),
            LOG_COLUMNS.len()
        ));
    }
    let num = |k: usize| -> std::result::Result<f64, String> {
        rec[k]
            .parse::<f64>()
            .map_err(|_| format!("column {} = '{}' is not a number", LOG_COLUMNS[k], &rec[k]))
    };
    let opt_num = |k: usize| -> std::result::Result<Option<f64>, String> {
        if rec[k].is_empty() {
            Ok(None)
        } else {
            num(k).map(Some)
        }
    };
    let flag = |k: usize| match &rec[k] {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("column {} = '{other}' is not 0/1", LOG_COLUMNS[k])),
    };
    let arr = |start: usize| -> std::result::Result<[f64; STATE_DIM], String> {
        let mut a = [0.0; STATE_DIM];
        for (c, v) in a.iter_mut().enumerate() {
            *v = num(start + c)?;
        }
        Ok(a)
    };
    let mut forces = [0.0; INPUT_DIM];
    for (c, v) in forces.iter_mut().enumerate() {
        *v = num(12 + c)?;
    }
    let mut torques = [0.0; 8];
    for (c, v) in torques.iter_mut().enumerate() {
        *v = num(16 + c)?;
    }
    let qp = match (opt_num(24)?, opt_num(25)?) {
        (Some(objective), Some(kkt_residual)) => Some(QpStats {
            objective,
            kkt_residual,
            solve_ms: opt_num(26)?,
            iterations: rec[38]
                .parse()
                .map_err(|_| format!("qp_iter = '{}' is not an integer", &rec[38]))?,
        }),
        (None, None) => None,
        _ => return Err("qp_obj and qp_kkt must be both present or both empty".into()),
    };
    let t = num(0)?;
    if !t.is_finite() {
        return Err("non-finite time".into());
    }
    Ok(LogRecord {
        t,
        state: arr(1)?,
        mode: rec[7].parse().map_err(|e: Error| e.to_string())?,
        contacts: [flag(8)?, flag(9)?, flag(10)?, flag(11)?],
        forces,
        torques,
        qp,
        events: rec[27].to_string(),
        reference: arr(28)?,
        gait: rec[34].parse().map_err(|e: Error| e.to_string())?,
        phase: rec[35]
            .parse()
            .map_err(|_| format!("phase = '{}' is not an integer", &rec[35]))?,
        phase_clock: num(36)?,
        pending: if rec[37].is_empty() {
            None
        } else {
            Some(rec[37].parse().map_err(|e: Error| e.to_string())?)
        },
        slip: opt_num(39)?,
    })
}
