//! File formats.
//!
//! * Dataset CSV: header `t,u1..u{n_u},y1..y{n_y}`, one row per sample.
//! * Run log CSV: metadata lines `# key=value`, then the header
//!   `t,u1..,y1..,r1..,status,solve_time,objective`. A held step has status
//!   `<qp status>/hold`.
//! * Model JSON: dimensions, dictionary, row-major `A`, `B`, `C` and the
//!   scaler the model was identified under.
//! * Comparison CSV: `metric,base_value,other_value,percent`.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back gives the same bits.

use std::fs;
use std::io::Write;
use std::path::Path;

use dpc_core::dataio::{ScalerParams, TrajectoryDataset};
use dpc_core::koopman::{KoopmanModel, Lift};
use dpc_core::metrics::{ComparisonEntry, RunHeader, RunLog, RunRecord};
use dpc_core::qp::QpStatus;
use dpc_core::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

fn channel_names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn parse_f64(path: &Path, field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| BenchError::format(path, format!("line {line}: cannot parse {field:?} as a number")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| BenchError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> BenchError {
    BenchError::format(path, e.to_string())
}

pub fn dataset_to_csv(data: &TrajectoryDataset) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> =
        std::iter::once("t".to_string()).chain(channel_names("u", data.n_u())).chain(channel_names("y", data.n_y())).collect();
    w.write_record(&header).expect("in-memory write");
    for t in 0..data.len() {
        let row: Vec<String> = std::iter::once(t.to_string())
            .chain(data.u.row(t).iter().map(|v| v.to_string()))
            .chain(data.y.row(t).iter().map(|v| v.to_string()))
            .collect();
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_dataset(path: &Path, data: &TrajectoryDataset) -> Result<()> {
    write_file(path, &dataset_to_csv(data))
}

/// Reads a dataset; the sampling time is not stored and must be supplied.
pub fn read_dataset(path: &Path, ts: f64) -> Result<TrajectoryDataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let n_u = header.iter().filter(|h| h.starts_with('u')).count();
    let n_y = header.iter().filter(|h| h.starts_with('y')).count();
    let expected: Vec<String> =
        std::iter::once("t".to_string()).chain(channel_names("u", n_u)).chain(channel_names("y", n_y)).collect();
    if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() || n_u == 0 || n_y == 0 {
        return Err(BenchError::format(path, "header must be t,u1..u{n_u},y1..y{n_y}"));
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let t = rec[0].trim().parse::<usize>().ok();
        if t != Some(i) {
            return Err(BenchError::format(path, format!("line {line}: expected t = {i}")));
        }
        for c in 0..n_u {
            u.push(parse_f64(path, &rec[1 + c], line)?);
        }
        for c in 0..n_y {
            y.push(parse_f64(path, &rec[1 + n_u + c], line)?);
        }
    }
    let rows = u.len() / n_u;
    Ok(TrajectoryDataset::new(DMatrix::from_row_slice(rows, n_u, &u), DMatrix::from_row_slice(rows, n_y, &y), ts)?)
}

pub fn run_log_to_csv(log: &RunLog) -> Vec<u8> {
    let mut out = Vec::new();
    let h = &log.header;
    let meta = [
        ("controller", h.controller.clone()),
        ("config_hash", h.config_hash.clone()),
        ("plant_id", h.plant_id.clone()),
        ("seed", h.seed.to_string()),
    ];
    for (k, v) in meta.iter().map(|(k, v)| (*k, v.as_str())).chain(h.extra.iter().map(|(k, v)| (k.as_str(), v.as_str()))) {
        writeln!(out, "# {k}={v}").expect("in-memory write");
    }
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(channel_names("u", log.n_u()))
        .chain(channel_names("y", log.n_y()))
        .chain(channel_names("r", log.n_y()))
        .chain(["status", "solve_time", "objective"].map(String::from))
        .collect();
    w.write_record(&header).expect("in-memory write");
    for rec in log.records() {
        let status = if rec.hold { format!("{}/hold", rec.status) } else { rec.status.to_string() };
        let row: Vec<String> = std::iter::once(rec.t.to_string())
            .chain(rec.u.iter().chain(rec.y.iter()).chain(rec.r.iter()).map(|v| v.to_string()))
            .chain([status, rec.solve_time.to_string(), rec.objective.to_string()])
            .collect();
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_run_log(path: &Path, log: &RunLog) -> Result<()> {
    write_file(path, &run_log_to_csv(log))
}

pub fn read_run_log(path: &Path) -> Result<RunLog> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let mut header = RunHeader::default();
    let mut body_start = 0;
    for line in text.lines() {
        let Some(meta) = line.strip_prefix('#') else { break };
        body_start += line.len() + 1;
        let (k, v) = meta
            .trim_start()
            .split_once('=')
            .ok_or_else(|| BenchError::format(path, format!("metadata line {line:?} lacks '='")))?;
        match k {
            "controller" => header.controller = v.to_string(),
            "config_hash" => header.config_hash = v.to_string(),
            "plant_id" => header.plant_id = v.to_string(),
            "seed" => header.seed = v.parse().map_err(|_| BenchError::format(path, "seed is not an integer"))?,
            _ => header.extra.push((k.to_string(), v.to_string())),
        }
    }
    let n_meta = text[..body_start.min(text.len())].lines().count();
    let mut r = csv::Reader::from_reader(text[body_start.min(text.len())..].as_bytes());
    let cols = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let n_u = cols.iter().filter(|h| h.starts_with('u')).count();
    let n_y = cols.iter().filter(|h| h.starts_with('y')).count();
    if cols.len() != 1 + n_u + 2 * n_y + 3 || &cols[0] != "t" {
        return Err(BenchError::format(path, "header must be t,u1..,y1..,r1..,status,solve_time,objective"));
    }
    let mut log = RunLog::new(header, n_u, n_y);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = n_meta + i + 2;
        let t = rec[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| BenchError::format(path, format!("line {line}: bad sample index")))?;
        let num = |c: usize| parse_f64(path, &rec[c], line);
        let vec_at = |start: usize, n: usize| -> Result<DVector<f64>> {
            Ok(DVector::from_vec((start..start + n).map(num).collect::<Result<Vec<_>>>()?))
        };
        let status_field = &rec[1 + n_u + 2 * n_y];
        let (status_text, hold) = match status_field.strip_suffix("/hold") {
            Some(s) => (s, true),
            None => (status_field, false),
        };
        let status = QpStatus::parse(status_text)
            .ok_or_else(|| BenchError::format(path, format!("line {line}: unknown status {status_field:?}")))?;
        log.push(RunRecord {
            t,
            u: vec_at(1, n_u)?,
            y: vec_at(1 + n_u, n_y)?,
            r: vec_at(1 + n_u + n_y, n_y)?,
            status,
            hold,
            solve_time: num(2 + n_u + 2 * n_y)?,
            objective: num(3 + n_u + 2 * n_y)?,
        })
        .map_err(|e| BenchError::format(path, format!("line {line}: {e}")))?;
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatrixFile {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl MatrixFile {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixFile { rows: m.nrows(), cols: m.ncols(), data: m.transpose().as_slice().to_vec() }
    }

    fn to_matrix(&self) -> Option<DMatrix<f64>> {
        (self.data.len() == self.rows * self.cols).then(|| DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LiftFile {
    Identity,
    DelayEmbedding { output_delays: usize, input_delays: usize },
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScalerFile {
    mean_u: Vec<f64>,
    std_u: Vec<f64>,
    mean_y: Vec<f64>,
    std_y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    n_z: usize,
    n_u: usize,
    n_y: usize,
    lift: LiftFile,
    a: MatrixFile,
    b: MatrixFile,
    c: MatrixFile,
    scaler: ScalerFile,
}

pub fn model_to_json(model: &KoopmanModel, scaler: &ScalerParams) -> String {
    let lift = match model.lift {
        Lift::Identity => LiftFile::Identity,
        Lift::DelayEmbedding { output_delays, input_delays } => LiftFile::DelayEmbedding { output_delays, input_delays },
        Lift::External => LiftFile::External,
    };
    let file = ModelFile {
        n_z: model.n_z(),
        n_u: model.n_u(),
        n_y: model.n_y(),
        lift,
        a: MatrixFile::from_matrix(&model.a),
        b: MatrixFile::from_matrix(&model.b),
        c: MatrixFile::from_matrix(&model.c),
        scaler: ScalerFile {
            mean_u: scaler.mean_u.as_slice().to_vec(),
            std_u: scaler.std_u.as_slice().to_vec(),
            mean_y: scaler.mean_y.as_slice().to_vec(),
            std_y: scaler.std_y.as_slice().to_vec(),
        },
    };
    serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
}

pub fn write_model(path: &Path, model: &KoopmanModel, scaler: &ScalerParams) -> Result<()> {
    write_file(path, model_to_json(model, scaler).as_bytes())
}

/// Model and the scaler of its coordinates.
pub fn read_model(path: &Path) -> Result<(KoopmanModel, ScalerParams)> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| BenchError::format(path, e.to_string()))?;
    let bad = || BenchError::format(path, "matrix data length differs from its dimensions");
    let (a, b, c) = (file.a.to_matrix().ok_or_else(bad)?, file.b.to_matrix().ok_or_else(bad)?, file.c.to_matrix().ok_or_else(bad)?);
    if a.shape() != (file.n_z, file.n_z) || b.shape() != (file.n_z, file.n_u) || c.shape() != (file.n_y, file.n_z) {
        return Err(BenchError::format(path, "matrix shapes differ from n_z, n_u, n_y"));
    }
    let lift = match file.lift {
        LiftFile::Identity => Lift::Identity,
        LiftFile::DelayEmbedding { output_delays, input_delays } => Lift::DelayEmbedding { output_delays, input_delays },
        LiftFile::External => Lift::External,
    };
    let s = file.scaler;
    let scaler = ScalerParams {
        mean_u: DVector::from_vec(s.mean_u),
        std_u: DVector::from_vec(s.std_u),
        mean_y: DVector::from_vec(s.mean_y),
        std_y: DVector::from_vec(s.std_y),
    };
    scaler.validate()?;
    if scaler.n_u() != file.n_u || scaler.n_y() != file.n_y {
        return Err(BenchError::format(path, "scaler dimensions differ from the model"));
    }
    Ok((KoopmanModel::new(a, b, c, lift)?, scaler))
}

pub fn comparison_to_csv(entries: &[ComparisonEntry]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "base_value", "other_value", "percent"]).expect("in-memory write");
    for e in entries {
        let percent = e.percent.map_or_else(|| "undefined".to_string(), |p| format!("{p:.1}"));
        w.write_record([e.metric.to_string(), e.base.to_string(), e.other.to_string(), percent]).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
