//! QP instance dumps: one JSON object per line holding `H`, `P`, the bounds
//! and the returned solution, for offline solver cross-checks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::srb::ContactMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpDump {
    pub t: f64,
    pub mode: ContactMode,
    pub n: usize,
    /// Row-major `n x n`.
    pub h: Vec<f64>,
    pub p: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub u: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
}

impl QpDump {
    pub fn new(
        t: f64,
        mode: ContactMode,
        h: &DMatrix<f64>,
        p: &DVector<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
        solution: &super::QpSolution,
    ) -> Self {
        let n = p.len();
        Self {
            t,
            mode,
            n,
            h: (0..n)
                .flat_map(|i| (0..n).map(move |j| h[(i, j)]))
                .collect(),
            p: p.iter().copied().collect(),
            lower: lower.iter().copied().collect(),
            upper: upper.iter().copied().collect(),
            u: solution.u.iter().copied().collect(),
            objective: solution.objective,
            kkt_residual: solution.kkt_residual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n.checked_mul(n) != Some(self.h.len())
            || [&self.p, &self.lower, &self.upper, &self.u]
                .iter()
                .any(|v| v.len() != n)
        {
            return Err(Error::DimensionMismatch(format!(
                "QP dump with n = {n} has H {}, p {}, bounds {}/{}, u {}",
                self.h.len(),
                self.p.len(),
                self.lower.len(),
                self.upper.len(),
                self.u.len()
            )));
        }
        Ok(())
    }

    pub fn h_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.h)
    }

    pub fn p_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.p)
    }

    pub fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_column_slice(&self.lower),
            DVector::from_column_slice(&self.upper),
        )
    }
}

pub fn parse_qp_dump_line(line: &str) -> Result<QpDump> {
    let dump: QpDump =
        serde_json::from_str(line).map_err(|e| Error::malformed("QP dump", e.to_string()))?;
    dump.validate()?;
    Ok(dump)
}

pub fn read_qp_dump(path: &Path) -> Result<Vec<QpDump>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_qp_dump_line(&line)?);
    }
    Ok(out)
}

pub struct QpDumpWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl QpDumpWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, dump: &QpDump) -> Result<()> {
        let line =
            serde_json::to_string(dump).map_err(|e| Error::malformed("QP dump", e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
