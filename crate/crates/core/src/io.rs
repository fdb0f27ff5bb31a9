//! CSV tables and JSON metadata.
//!
//! Every CSV starts with a header row. Numbers are written with Rust's
//! shortest round-trip formatting, so reading a file back gives the exact
//! values that were written.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path as FsPath;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::deepest::ContinuousDiagnostics;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::action::MlBatch;
use crate::models::{MlpSpec, MlpWeights};
use crate::twin::MlpObservations;
use crate::types::{ActionLevelTable, ObservationSet, Path, TimeGrid};

pub const LEVEL_HEADER: [&str; 5] = ["beta", "rf", "rank", "action", "measurement_term"];
pub const PARAM_HEADER: [&str; 7] = ["beta", "rf", "rank", "branch", "action", "param", "value"];
pub const OBS_HEADER: [&str; 6] = ["time_index", "slot", "time", "component", "value", "noise"];
pub const MLP_OBS_HEADER: [&str; 6] = ["pair", "side", "component", "value", "noise", "clean"];
pub const WEIGHT_HEADER: [&str; 4] = ["layer", "row", "col", "value"];
pub const DIAG_HEADER: [&str; 8] = [
    "slot",
    "time",
    "observed",
    "momentum_norm",
    "el_residual_norm",
    "hamiltonian",
    "discrete_momentum_norm",
    "discrete_el_residual_norm",
];
pub const PREDICTION_HEADER: [&str; 7] =
    ["level_rank", "L", "M", "M_P", "action", "error", "error_noiseless"];
pub const FORECAST_HEADER: [&str; 4] = ["level_rank", "step", "time", "rmse"];
pub const SWEEP_HEADER: [&str; 7] = [
    "axis",
    "value",
    "seed",
    "level_count",
    "lowest_level",
    "param_estimate",
    "status",
];

fn writer(path: &FsPath) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn parse_err(path: &FsPath, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        message: message.into(),
    }
}

fn reader(path: &FsPath, header: &[&str]) -> Result<csv::Reader<File>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let got = rdr.headers()?.clone();
    if !got.iter().eq(header.iter().copied()) {
        return Err(parse_err(path, format!("expected header {header:?}, found {got:?}")));
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(path: &FsPath, rec: &csv::StringRecord, i: usize) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(i)
        .ok_or_else(|| parse_err(path, format!("line {line}: missing column {i}")))?
        .trim()
        .parse()
        .map_err(|_| parse_err(path, format!("line {line}: bad value in column {i}")))
}

/// One row per `(β, rank)`.
pub fn write_level_table(path: &FsPath, table: &ActionLevelTable<f64>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(LEVEL_HEADER)?;
    for row in &table.rows {
        for (rank, (a, m)) in row.action_values.iter().zip(&row.measurement_term_values).enumerate() {
            w.write_record([
                row.beta.to_string(),
                row.rf.to_string(),
                rank.to_string(),
                a.to_string(),
                m.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_level_table(path: &FsPath) -> Result<ActionLevelTable<f64>> {
    let mut rdr = reader(path, &LEVEL_HEADER)?;
    let mut table = ActionLevelTable { rows: Vec::new() };
    for rec in rdr.records() {
        let rec = rec?;
        let beta: u32 = field(path, &rec, 0)?;
        let rf: f64 = field(path, &rec, 1)?;
        let rank: usize = field(path, &rec, 2)?;
        let action: f64 = field(path, &rec, 3)?;
        let meas: f64 = field(path, &rec, 4)?;
        if table.rows.last().is_none_or(|r| r.beta != beta) {
            table.rows.push(crate::types::LevelRow {
                beta,
                rf,
                action_values: Vec::new(),
                measurement_term_values: Vec::new(),
                branch_ids: Vec::new(),
                params: Vec::new(),
            });
        }
        let row = table.rows.last_mut().expect("pushed above");
        if rank != row.action_values.len() {
            return Err(parse_err(path, format!("beta {beta}: rank {rank} out of order")));
        }
        row.action_values.push(action);
        row.measurement_term_values.push(meas);
    }
    Ok(table)
}

/// Parameter estimates of every branch at every β, in rank order.
pub fn write_param_estimates(path: &FsPath, table: &ActionLevelTable<f64>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(PARAM_HEADER)?;
    for row in &table.rows {
        for (rank, params) in row.params.iter().enumerate() {
            for (j, v) in params.iter().enumerate() {
                w.write_record([
                    row.beta.to_string(),
                    row.rf.to_string(),
                    rank.to_string(),
                    row.branch_ids[rank].to_string(),
                    row.action_values[rank].to_string(),
                    j.to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn path_header(dim: usize) -> Vec<String> {
    ["slot".to_string(), "time".to_string()]
        .into_iter()
        .chain((0..dim).map(|a| format!("x{a}")))
        .collect()
}

/// States as `slot,time,x0,…`. Parameters are stored separately by
/// [`write_params`].
pub fn write_path(path: &FsPath, states: &Path<f64>, time: impl Fn(usize) -> f64) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(path_header(states.dim()))?;
    for s in 0..states.n_slots() {
        let mut rec = vec![s.to_string(), time(s).to_string()];
        rec.extend(states.state(s).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_params(path: &FsPath, params: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["index", "value"])?;
    for (i, v) in params.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_params(path: &FsPath) -> Result<Vec<f64>> {
    let mut rdr = reader(path, &["index", "value"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let i: usize = field(path, &rec, 0)?;
        if i != out.len() {
            return Err(parse_err(path, format!("parameter index {i} out of order")));
        }
        out.push(field(path, &rec, 1)?);
    }
    Ok(out)
}

/// Reads a file written by [`write_path`], checking slot order and width.
pub fn read_path(path: &FsPath, params: Vec<f64>) -> Result<Path<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 3 {
        return Err(parse_err(path, "path file needs slot, time and state columns"));
    }
    let dim = header.len() - 2;
    let expected = path_header(dim);
    if !header.iter().eq(expected.iter().map(String::as_str)) {
        return Err(parse_err(path, format!("expected header {expected:?}, found {header:?}")));
    }
    let mut states = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let slot: usize = field(path, &rec, 0)?;
        if slot != n {
            return Err(parse_err(path, format!("slot {slot} where {n} was expected")));
        }
        for a in 0..dim {
            states.push(field::<f64>(path, &rec, a + 2)?);
        }
    }
    if states.is_empty() {
        return Err(parse_err(path, "no states"));
    }
    Path::from_parts(dim, states, params).map_err(|e| parse_err(path, e.to_string()))
}

/// Long format: one row per observed scalar. `noise` is the recorded draw
/// for each value, or empty when unknown.
pub fn write_observations(
    path: &FsPath,
    obs: &ObservationSet<f64>,
    grid: &TimeGrid<f64>,
    noise: &[f64],
) -> Result<()> {
    if !noise.is_empty() {
        Error::check_len("noise draws", obs.values.len(), noise.len())?;
    }
    let l = obs.n_observed();
    let mut w = writer(path)?;
    w.write_record(OBS_HEADER)?;
    for (s, &slot) in grid.obs_slots().iter().enumerate() {
        for (r, &i) in obs.observed_indices.iter().enumerate() {
            w.write_record([
                s.to_string(),
                slot.to_string(),
                grid.time(slot).to_string(),
                i.to_string(),
                obs.row(s)[r].to_string(),
                noise.get(s * l + r).map_or(String::new(), f64::to_string),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads observations back; the grid fixes the expected layout.
pub fn read_observations(path: &FsPath, grid: &TimeGrid<f64>, rm: f64) -> Result<ObservationSet<f64>> {
    let mut rdr = reader(path, &OBS_HEADER)?;
    let mut values = Vec::new();
    let mut indices: Vec<usize> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let s: usize = field(path, &rec, 0)?;
        let slot: usize = field(path, &rec, 1)?;
        let comp: usize = field(path, &rec, 3)?;
        if grid.obs_slots().get(s) != Some(&slot) {
            return Err(parse_err(path, format!("time index {s} is not at slot {slot}")));
        }
        if s == 0 {
            indices.push(comp);
        } else {
            let r = values.len() % indices.len().max(1);
            if indices.get(r) != Some(&comp) {
                return Err(parse_err(path, format!("time index {s}: unexpected component {comp}")));
            }
        }
        values.push(field(path, &rec, 4)?);
    }
    if values.len() != indices.len() * grid.obs_slots().len() {
        return Err(parse_err(path, "observation count does not match the grid"));
    }
    Ok(ObservationSet::new(values, indices, rm))
}

pub fn write_weights(path: &FsPath, weights: &MlpWeights<f64>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(WEIGHT_HEADER)?;
    for (l, m) in weights.layers.iter().enumerate() {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                w.write_record([l.to_string(), r.to_string(), c.to_string(), m[(r, c)].to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(path: &FsPath, spec: &MlpSpec) -> Result<MlpWeights<f64>> {
    let mut rdr = reader(path, &WEIGHT_HEADER)?;
    let mut weights = MlpWeights::zeros(spec);
    let n = spec.n_neurons;
    let mut count = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let (l, r, c): (usize, usize, usize) = (field(path, &rec, 0)?, field(path, &rec, 1)?, field(path, &rec, 2)?);
        if l >= weights.layers.len() || r >= n || c >= n {
            return Err(parse_err(path, format!("entry ({l}, {r}, {c}) outside the network")));
        }
        weights.layers[l][(r, c)] = field(path, &rec, 3)?;
        count += 1;
    }
    if count != spec.n_weights() {
        return Err(parse_err(path, format!("{count} weights, expected {}", spec.n_weights())));
    }
    Ok(weights)
}

/// One row per observed scalar; `side` is `input` or `output`.
pub fn write_mlp_observations(path: &FsPath, obs: &MlpObservations<f64>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(MLP_OBS_HEADER)?;
    let l = obs.batch.n_observed();
    for k in 0..obs.batch.n_pairs() {
        for (r, &i) in obs.batch.observed_indices.iter().enumerate() {
            let j = k * l + r;
            let input = obs.batch.inputs[j];
            let output = obs.batch.outputs[j];
            w.write_record([
                k.to_string(),
                "input".into(),
                i.to_string(),
                input.to_string(),
                obs.input_noise[j].to_string(),
                (input - obs.input_noise[j]).to_string(),
            ])?;
            w.write_record([
                k.to_string(),
                "output".into(),
                i.to_string(),
                output.to_string(),
                obs.output_noise[j].to_string(),
                obs.clean_outputs[j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_mlp_observations(path: &FsPath, rm: f64) -> Result<MlpObservations<f64>> {
    let mut rdr = reader(path, &MLP_OBS_HEADER)?;
    let mut obs = MlpObservations {
        batch: MlBatch {
            inputs: Vec::new(),
            outputs: Vec::new(),
            observed_indices: Vec::new(),
        },
        input_noise: Vec::new(),
        output_noise: Vec::new(),
        clean_outputs: Vec::new(),
        rm,
    };
    for rec in rdr.records() {
        let rec = rec?;
        let k: usize = field(path, &rec, 0)?;
        let side: String = field(path, &rec, 1)?;
        let comp: usize = field(path, &rec, 2)?;
        let value: f64 = field(path, &rec, 3)?;
        let noise: f64 = field(path, &rec, 4)?;
        let clean: f64 = field(path, &rec, 5)?;
        match side.as_str() {
            "input" => {
                if k == 0 {
                    obs.batch.observed_indices.push(comp);
                }
                let l = obs.batch.observed_indices.len();
                let r = obs.batch.inputs.len() % l.max(1);
                if k != obs.batch.inputs.len() / l.max(1) || obs.batch.observed_indices.get(r) != Some(&comp) {
                    return Err(parse_err(path, format!("pair {k}: unexpected input component {comp}")));
                }
                obs.batch.inputs.push(value);
                obs.input_noise.push(noise);
            }
            "output" => {
                if obs.batch.outputs.len() + 1 != obs.batch.inputs.len() {
                    return Err(parse_err(path, format!("pair {k}: output row out of order")));
                }
                obs.batch.outputs.push(value);
                obs.output_noise.push(noise);
                obs.clean_outputs.push(clean);
            }
            other => return Err(parse_err(path, format!("unknown side {other:?}"))),
        }
    }
    if obs.batch.inputs.is_empty() || obs.batch.inputs.len() != obs.batch.outputs.len() {
        return Err(parse_err(path, "incomplete observation pairs"));
    }
    Ok(obs)
}

/// Layer states of every pair as `pair,layer,x0,…`.
pub fn write_network_states(path: &FsPath, paths: &[Path<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    let dim = paths.first().map_or(0, Path::dim);
    let mut header = vec!["pair".to_string(), "layer".to_string()];
    header.extend((0..dim).map(|a| format!("x{a}")));
    w.write_record(&header)?;
    for (k, p) in paths.iter().enumerate() {
        for l in 0..p.n_slots() {
            let mut rec = vec![k.to_string(), l.to_string()];
            rec.extend(p.state(l).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn inf_norm(m: &Matrix<f64>, s: usize) -> f64 {
    m.row(s).iter().fold(0.0, |a: f64, v| a.max(v.abs()))
}

/// One row per slot. `discrete_momentum_norm` belongs to the step starting
/// at the slot and is blank on the last one.
pub fn write_diagnostics(
    path: &FsPath,
    diag: &ContinuousDiagnostics<f64>,
    grid: &TimeGrid<f64>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(DIAG_HEADER)?;
    for s in 0..diag.momentum.rows() {
        let observed = grid.obs_slots().binary_search(&s).is_ok();
        let discrete = if s < diag.discrete_momentum.rows() {
            inf_norm(&diag.discrete_momentum, s).to_string()
        } else {
            String::new()
        };
        w.write_record([
            s.to_string(),
            grid.time(s).to_string(),
            u8::from(observed).to_string(),
            inf_norm(&diag.momentum, s).to_string(),
            inf_norm(&diag.el_residual, s).to_string(),
            diag.hamiltonian_trace[s].to_string(),
            discrete,
            inf_norm(&diag.discrete_el_residual, s).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub level_rank: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "M_P")]
    pub m_p: usize,
    pub action: f64,
    pub error: f64,
    pub error_noiseless: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub level_rank: usize,
    pub step: usize,
    pub time: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub level_count: usize,
    pub lowest_level: f64,
    pub param_estimate: Option<f64>,
    pub status: String,
}

/// Writes serde records; an empty slice still gets the header.
pub fn write_records<R: Serialize>(path: &FsPath, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: DeserializeOwned>(path: &FsPath, header: &[&str]) -> Result<Vec<R>> {
    let mut rdr = reader(path, header)?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| parse_err(path, e.to_string())))
        .collect()
}

pub fn write_json<V: Serialize>(path: &FsPath, value: &V) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<V: DeserializeOwned>(path: &FsPath) -> Result<V> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}
