//! Model files (JSON) and snapshot sets (CSV).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::edmd::{FitStats, KoopmanModel, SnapshotSet};
use super::observables::ObservableConfig;
use crate::error::{Error, Result};
use crate::srb::{ContactMode, SrbState, INPUT_DIM, STATE_DIM};

pub const MODEL_FILE_VERSION: u32 = 1;

pub const SNAPSHOT_HEADER: [&str; 18] = [
    "mode", "dt", "x0", "x1", "x2", "x3", "x4", "x5", "u0", "u1", "u2", "u3", "y0", "y1", "y2",
    "y3", "y4", "y5",
];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    mode: ContactMode,
    dt: f64,
    p_order: usize,
    #[serde(rename = "N")]
    n: usize,
    m: usize,
    /// Row-major.
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<f64>,
    fit_stats: FitStats,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn model_to_json(model: &KoopmanModel) -> Result<String> {
    model.validate()?;
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        mode: model.mode,
        dt: model.dt,
        p_order: model.config.p_order,
        n: model.lifted_dim(),
        m: INPUT_DIM,
        a: row_major(&model.a),
        b: row_major(&model.b),
        fit_stats: model.fit_stats.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::malformed("model file", e))
}

pub fn model_from_json(text: &str) -> Result<KoopmanModel> {
    // Check the version before the full schema so old files fail with the right error.
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::malformed("model file", e))?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_FILE_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::VersionMismatch {
                found: v.min(u32::MAX as u64) as u32,
                expected: MODEL_FILE_VERSION,
            })
        }
        None => {
            return Err(Error::malformed(
                "model file",
                "missing integer field 'version'",
            ))
        }
    }
    let file: ModelFile =
        serde_json::from_value(raw).map_err(|e| Error::malformed("model file", e))?;

    if file.p_order == 0 || file.p_order > 64 {
        return Err(Error::DimensionMismatch(format!(
            "p_order {} out of range",
            file.p_order
        )));
    }
    let config = ObservableConfig {
        p_order: file.p_order,
    };
    let n = config.lifted_dim();
    if file.n != n {
        return Err(Error::DimensionMismatch(format!(
            "N = {} but p_order {} implies N = {n}",
            file.n, file.p_order
        )));
    }
    if file.m != INPUT_DIM {
        return Err(Error::DimensionMismatch(format!(
            "m = {} but inputs are {INPUT_DIM}-dimensional",
            file.m
        )));
    }
    if file.a.len() != n * n {
        return Err(Error::DimensionMismatch(format!(
            "A has {} entries, expected {}",
            file.a.len(),
            n * n
        )));
    }
    if file.b.len() != n * INPUT_DIM {
        return Err(Error::DimensionMismatch(format!(
            "B has {} entries, expected {}",
            file.b.len(),
            n * INPUT_DIM
        )));
    }
    if !(file.dt > 0.0 && file.dt.is_finite()) {
        return Err(Error::malformed(
            "model file",
            format!("dt must be > 0, got {}", file.dt),
        ));
    }
    Ok(KoopmanModel {
        a: DMatrix::from_row_slice(n, n, &file.a),
        b: DMatrix::from_row_slice(n, INPUT_DIM, &file.b),
        mode: file.mode,
        config,
        dt: file.dt,
        fit_stats: file.fit_stats,
    })
}

pub fn save_model(model: &KoopmanModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = model_to_json(model)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KoopmanModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

pub fn write_snapshots<W: Write>(data: &SnapshotSet, writer: W) -> Result<()> {
    data.validate()?;
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::malformed("snapshot csv", e);
    w.write_record(SNAPSHOT_HEADER).map_err(wrap)?;
    let mode = data.mode.as_str();
    let dt = data.dt.to_string();
    for k in 0..data.len() {
        let mut rec: Vec<String> = Vec::with_capacity(SNAPSHOT_HEADER.len());
        rec.push(mode.to_string());
        rec.push(dt.clone());
        rec.extend(data.x[k].to_array().iter().map(f64::to_string));
        rec.extend(data.u[k].iter().map(f64::to_string));
        rec.extend(data.y[k].to_array().iter().map(f64::to_string));
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::malformed("snapshot csv", e))?;
    Ok(())
}

fn parse_f64(field: &str, line: u64, col: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| {
        Error::malformed(
            "snapshot csv",
            format!("line {line}: bad number '{field}' in column {col}"),
        )
    })?;
    if !v.is_finite() {
        return Err(Error::malformed(
            "snapshot csv",
            format!("line {line}: non-finite value in column {col}"),
        ));
    }
    Ok(v)
}

/// Reads a snapshot CSV. Every row must carry the same mode and dt.
pub fn read_snapshots<R: Read>(reader: R) -> Result<SnapshotSet> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = r
        .headers()
        .map_err(|e| Error::malformed("snapshot csv", e))?
        .clone();
    if headers.len() != SNAPSHOT_HEADER.len()
        || headers
            .iter()
            .zip(SNAPSHOT_HEADER)
            .any(|(a, b)| a.trim() != b)
    {
        return Err(Error::malformed(
            "snapshot csv",
            format!("expected header '{}'", SNAPSHOT_HEADER.join(",")),
        ));
    }
    let mut set: Option<SnapshotSet> = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::malformed("snapshot csv", e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != SNAPSHOT_HEADER.len() {
            return Err(Error::malformed(
                "snapshot csv",
                format!("line {line}: expected {} fields", SNAPSHOT_HEADER.len()),
            ));
        }
        let mode: ContactMode = rec[0].parse().map_err(|_| {
            Error::malformed(
                "snapshot csv",
                format!("line {line}: unknown mode '{}'", &rec[0]),
            )
        })?;
        let dt = parse_f64(&rec[1], line, "dt")?;
        let mut vals = [0.0; STATE_DIM * 2 + INPUT_DIM];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = parse_f64(&rec[k + 2], line, SNAPSHOT_HEADER[k + 2])?;
        }
        let x = SrbState::from_array(std::array::from_fn(|k| vals[k]));
        let u = std::array::from_fn(|k| vals[STATE_DIM + k]);
        let y = SrbState::from_array(std::array::from_fn(|k| vals[STATE_DIM + INPUT_DIM + k]));
        let set = set.get_or_insert_with(|| SnapshotSet::new(mode, dt));
        if set.mode != mode || set.dt != dt {
            return Err(Error::malformed(
                "snapshot csv",
                format!("line {line}: mixed mode or dt"),
            ));
        }
        set.push(x, u, y);
    }
    let set = set.ok_or_else(|| Error::malformed("snapshot csv", "no data rows"))?;
    set.validate()?;
    Ok(set)
}

pub fn save_snapshots(data: &SnapshotSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_snapshots(data, std::io::BufWriter::new(file))
}

pub fn load_snapshots(path: impl AsRef<Path>) -> Result<SnapshotSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_snapshots(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_model(seed: u64) -> KoopmanModel {
        let cfg = ObservableConfig::default();
        let n = cfg.lifted_dim();
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 1e3 / 7.0
        };
        KoopmanModel {
            a: DMatrix::from_fn(n, n, |_, _| next()),
            b: DMatrix::from_fn(n, 4, |_, _| next() * 1e-9),
            mode: ContactMode::RearStance,
            config: cfg,
            dt: 0.001,
            fit_stats: FitStats {
                residual: 1.234e-5,
                condition_number: 3.3e11,
                samples: 10_000,
                ridge: 1e-12,
            },
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = sample_model(42);
        let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_model_file_is_malformed() {
        let text = model_to_json(&sample_model(1)).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(model_from_json(cut), Err(Error::Malformed { .. })));
    }

    #[test]
    fn inconsistent_n_is_dimension_mismatch() {
        let text = model_to_json(&sample_model(1)).unwrap();
        let text = text.replace("\"N\": 23", "\"N\": 27");
        assert!(matches!(
            model_from_json(&text),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn wrong_version_is_reported() {
        let text = model_to_json(&sample_model(1)).unwrap();
        let text = text.replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            model_from_json(&text),
            Err(Error::VersionMismatch {
                found: 9,
                expected: 1
            })
        ));
    }

    #[test]
    fn short_matrix_is_dimension_mismatch() {
        let mut m = sample_model(3);
        let mut text = model_to_json(&m).unwrap();
        m.b = DMatrix::zeros(23, 4);
        let first_b = text.find("\"B\"").unwrap();
        let open = first_b + text[first_b..].find('[').unwrap();
        let comma = open + text[open..].find(',').unwrap();
        text.replace_range(open + 1..comma + 1, "");
        assert!(matches!(
            model_from_json(&text),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn snapshot_csv_round_trip() {
        let mut set = SnapshotSet::new(ContactMode::Flight, 0.001);
        set.push(
            SrbState::from_array([0.1, 0.2, 1.0 / 3.0, -4.0, 5e-17, 6.0]),
            [1.0, -2.0, 3.5, 0.1 + 0.2],
            SrbState::from_array([7.0, 8.0, 9.0, 10.0, 11.0, f64::MIN_POSITIVE]),
        );
        let mut buf = Vec::new();
        write_snapshots(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("mode,dt,x0,x1,x2,x3,x4,x5,u0,u1,u2,u3,y0,y1,y2,y3,y4,y5\n"));
        assert_eq!(read_snapshots(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn snapshot_csv_rejects_garbage() {
        assert!(read_snapshots("a,b\n1,2\n".as_bytes()).is_err());
        let hdr = SNAPSHOT_HEADER.join(",");
        assert!(read_snapshots(format!("{hdr}\n").as_bytes()).is_err());
        let row = "trot,0.001,1,2,3,4,5,6,1,2,3,4,1,2,3,4,5,nan";
        assert!(read_snapshots(format!("{hdr}\n{row}\n").as_bytes()).is_err());
        let a = "trot,0.001,1,2,3,4,5,6,1,2,3,4,1,2,3,4,5,6";
        let b = "flight,0.001,1,2,3,4,5,6,1,2,3,4,1,2,3,4,5,6";
        assert!(read_snapshots(format!("{hdr}\n{a}\n{b}\n").as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn model_json_never_panics(s in "\\PC{0,200}") {
            let _ = model_from_json(&s);
        }
    }
}
