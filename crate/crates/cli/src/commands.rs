use std::path::{Path as FsPath, PathBuf};

use anyhow::{anyhow, Context};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use assim_core::annealing::{alpha_check, convergence_check, default_group_tol, group_levels, Convergence, VaOutcome};
use assim_core::deepest::diagnostics;
use assim_core::experiment::{ExperimentConfig, Lorenz96Setup, MlpSetup, Resolved};
use assim_core::io::{self, ForecastRow, PredictionRow, SweepRow};
use assim_core::twin::{forecast_lorenz96, mlp_prediction_error, prediction_error_against, rmse_by_slot};
use assim_core::{action, ActionLevelTable, MlpWeights, Path};

use crate::manifest::{derive_seed, hash_outputs, now_unix, sha256_hex, ExperimentManifest};
use crate::{Axis, Common};

pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<assim_core::Error> for Failure {
    fn from(e: assim_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

const GENERATE_FILES_L96: [&str; 4] = ["truth.csv", "truth.params.csv", "observations.csv", "twin.json"];
const GENERATE_FILES_MLP: [&str; 4] = ["truth_weights.csv", "truth_states.csv", "observations.csv", "twin.json"];

struct Loaded {
    config: ExperimentConfig,
    resolved: Resolved,
    bytes: Vec<u8>,
}

fn load(path: &FsPath) -> CmdResult<Loaded> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Config)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Failure::Config(anyhow!("config {} is not UTF-8", path.display())))?;
    let config = ExperimentConfig::from_json(&text).map_err(|e| Failure::Config(e.into()))?;
    let resolved = config.resolve().map_err(|e| Failure::Config(e.into()))?;
    Ok(Loaded { config, resolved, bytes })
}

fn prepare_out(dir: &FsPath) -> CmdResult {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(())
}

fn thread_pool(jobs: Option<usize>) -> CmdResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Failure::Config(anyhow!("--jobs must be at least 1")));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Failure::Runtime(e.into()))
}

fn finish(common: &Common, command: &str, config_bytes: &[u8], started: u64, files: &[String]) -> CmdResult {
    let manifest = ExperimentManifest {
        command: command.into(),
        config_path: common.config.clone(),
        config_sha256: sha256_hex(config_bytes),
        output_dir: common.out.clone(),
        seed: common.seed,
        jobs: common.jobs,
        started_unix: started,
        finished_unix: now_unix(),
        version: env!("CARGO_PKG_VERSION").into(),
        outputs: hash_outputs(&common.out, files).context("hashing outputs")?,
    };
    io::write_json(&common.out.join(format!("manifest.{command}.json")), &manifest)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TwinMeta {
    kind: String,
    seed: u64,
    noise_variance: f64,
    rm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lorenz96: Option<assim_core::twin::GenerationMeta>,
}

pub fn generate(common: &Common) -> CmdResult {
    let started = now_unix();
    let loaded = load(&common.config)?;
    prepare_out(&common.out)?;
    let files = generate_into(&loaded.resolved, &common.out, common.seed)?;
    finish(common, "generate", &loaded.bytes, started, &files)
}

fn generate_into(resolved: &Resolved, out: &FsPath, seed: u64) -> CmdResult<Vec<String>> {
    match resolved {
        Resolved::Lorenz96(s) => {
            let twin = s.generate(seed)?;
            io::write_path(&out.join("truth.csv"), &twin.truth, |n| s.grid.time(n))?;
            io::write_params(&out.join("truth.params.csv"), &[s.model.forcing])?;
            io::write_observations(&out.join("observations.csv"), &twin.observations, &s.grid, &twin.noise)?;
            io::write_json(
                &out.join("twin.json"),
                &TwinMeta {
                    kind: "lorenz96".into(),
                    seed,
                    noise_variance: s.noise_variance,
                    rm: s.rm,
                    lorenz96: Some(twin.meta),
                },
            )?;
            info!("generated {} slots of truth for D = {}", s.grid.n_slots(), s.model.dim);
            Ok(GENERATE_FILES_L96.map(String::from).to_vec())
        }
        Resolved::Mlp(s) => {
            let twin = s.generate(seed)?;
            io::write_weights(&out.join("truth_weights.csv"), &twin.weights)?;
            io::write_network_states(&out.join("truth_states.csv"), &twin.paths)?;
            io::write_mlp_observations(&out.join("observations.csv"), &twin.observations)?;
            io::write_json(
                &out.join("twin.json"),
                &TwinMeta {
                    kind: "mlp".into(),
                    seed,
                    noise_variance: s.noise_variance,
                    rm: s.rm,
                    lorenz96: None,
                },
            )?;
            info!("generated {} training pairs through {} layers", s.m_pairs, s.spec.n_layers);
            Ok(GENERATE_FILES_MLP.map(String::from).to_vec())
        }
    }
}

fn missing(path: PathBuf, what: &str) -> CmdResult<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::Runtime(anyhow!("missing {what}: {} (run the earlier command first)", path.display())))
    }
}

/// Final-β summary written next to the level table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnealSummary {
    pub beta: u32,
    pub rf: f64,
    pub expected_level: f64,
    pub group_tol: f64,
    /// `(level, multiplicity)` at the final β.
    pub levels: Vec<(f64, usize)>,
    pub convergence: Convergence,
    pub param_estimate: Vec<f64>,
    pub failed_branches: usize,
    /// Branch id holding each level's lowest action.
    pub level_branches: Vec<usize>,
}

pub fn anneal(common: &Common, alpha: Option<f64>) -> CmdResult {
    let started = now_unix();
    let loaded = load(&common.config)?;
    if let Some(a) = alpha {
        let current = loaded.config.schedule.alpha;
        if !(a > 1.0 && a < current) {
            return Err(Failure::Config(anyhow!("--alpha-check must satisfy 1 < {a} < alpha = {current}")));
        }
    }
    prepare_out(&common.out)?;
    let pool = thread_pool(common.jobs)?;
    let files = pool.install(|| anneal_into(&loaded.resolved, &common.out, common.seed, alpha))?;
    finish(common, "anneal", &loaded.bytes, started, &files)
}

fn summarize(out: &VaOutcome<f64>, expected: f64, rm: f64) -> CmdResult<AnnealSummary> {
    let last = out
        .table
        .last()
        .ok_or_else(|| anyhow!("annealing produced no rows"))?;
    if last.action_values.is_empty() {
        return Err(Failure::Runtime(anyhow!("every branch failed")));
    }
    let tol = default_group_tol(rm);
    let levels = group_levels(&last.action_values, tol);
    let mut level_branches = Vec::new();
    let mut rank = 0;
    for &(_, mult) in &levels {
        level_branches.push(last.branch_ids[rank]);
        rank += mult;
    }
    Ok(AnnealSummary {
        beta: last.beta,
        rf: last.rf,
        expected_level: expected,
        group_tol: tol,
        levels,
        convergence: convergence_check(&out.table, expected, 3, 0.15),
        param_estimate: last.params[0].clone(),
        failed_branches: out.state.branches.iter().filter(|b| b.failed).count(),
        level_branches,
    })
}

fn branch_x(out: &VaOutcome<f64>, id: usize) -> &[f64] {
    &out.state
        .branches
        .iter()
        .find(|b| b.id == id)
        .expect("level branch exists")
        .x
}

fn log_row(row: &assim_core::types::LevelRow<f64>) {
    info!(
        "beta {:>3}  rf {:>10.4e}  lowest {:>12.6}  branches {}",
        row.beta,
        row.rf,
        row.lowest().unwrap_or(f64::NAN),
        row.action_values.len()
    );
}

fn anneal_into(resolved: &Resolved, out: &FsPath, seed: u64, alpha: Option<f64>) -> CmdResult<Vec<String>> {
    let mut files = vec!["levels.csv".to_string(), "params.csv".into(), "summary.json".into()];
    match resolved {
        Resolved::Lorenz96(s) => {
            let obs_file = missing(out.join("observations.csv"), "observations")?;
            let obs = io::read_observations(&obs_file, &s.grid, s.rm)?;
            let (problem, result) = s.anneal(&obs, seed, log_row)?;
            let summary = summarize(&result, action::expected_measurement_level(&obs, &s.grid), s.rm)?;
            for (rank, &id) in summary.level_branches.iter().take(2).enumerate() {
                let path = problem.to_path(branch_x(&result, id));
                let stem = format!("level{rank}");
                io::write_path(&out.join(format!("{stem}.csv")), &path, |n| s.grid.time(n))?;
                io::write_params(&out.join(format!("{stem}.params.csv")), &estimate_or_fixed(s, &path))?;
                files.push(format!("{stem}.csv"));
                files.push(format!("{stem}.params.csv"));
            }
            if s.output.write_paths {
                files.extend(write_branches_l96(s, &problem, &result, out)?);
            }
            write_tables(out, &result.table, &summary)?;
            if let Some(a) = alpha {
                let check = alpha_check(&problem, s.init(&obs, seed)?, &s.schedule, &result.table, a, &s.optimizer)?;
                info!("alpha check: lowest {} vs {} at alpha {}", check.lowest, check.lowest_check, a);
                io::write_json(&out.join("alpha_check.json"), &check)?;
                files.push("alpha_check.json".into());
            }
        }
        Resolved::Mlp(s) => {
            let obs_file = missing(out.join("observations.csv"), "observations")?;
            let obs = io::read_mlp_observations(&obs_file, s.rm)?;
            let (problem, result) = s.anneal(&obs, seed, log_row)?;
            let summary = summarize(&result, problem.expected_measurement_level(), s.rm)?;
            for (rank, &id) in summary.level_branches.iter().take(2).enumerate() {
                let net = problem.to_network(branch_x(&result, id));
                io::write_weights(&out.join(format!("level{rank}_weights.csv")), &net.weights)?;
                files.push(format!("level{rank}_weights.csv"));
                if rank == 0 {
                    io::write_network_states(&out.join("level0_states.csv"), &net.paths)?;
                    files.push("level0_states.csv".into());
                }
            }
            write_tables(out, &result.table, &summary)?;
            if let Some(a) = alpha {
                let check = alpha_check(&problem, s.init(&obs, seed)?, &s.schedule, &result.table, a, &s.optimizer)?;
                io::write_json(&out.join("alpha_check.json"), &check)?;
                files.push("alpha_check.json".into());
            }
        }
    }
    Ok(files)
}

fn estimate_or_fixed(s: &Lorenz96Setup, path: &Path) -> Vec<f64> {
    vec![s.model.forcing_for(path.params())]
}

fn write_branches_l96(
    s: &Lorenz96Setup,
    problem: &assim_core::StandardAction,
    result: &VaOutcome<f64>,
    out: &FsPath,
) -> CmdResult<Vec<String>> {
    let dir = out.join("branches");
    prepare_out(&dir)?;
    let mut files = Vec::new();
    for b in result.state.branches.iter().filter(|b| !b.failed) {
        let name = format!("branches/branch{:03}.csv", b.id);
        let path = problem.to_path(&b.x);
        io::write_path(&out.join(&name), &path, |n| s.grid.time(n))?;
        files.push(name);
    }
    Ok(files)
}

fn write_tables(out: &FsPath, table: &ActionLevelTable, summary: &AnnealSummary) -> CmdResult {
    io::write_level_table(&out.join("levels.csv"), table)?;
    io::write_param_estimates(&out.join("params.csv"), table)?;
    io::write_json(&out.join("summary.json"), summary)?;
    info!(
        "final beta {}: {} level(s), lowest {:.6} (expected {:.1}), {:?}",
        summary.beta,
        summary.levels.len(),
        summary.levels[0].0,
        summary.expected_level,
        summary.convergence
    );
    Ok(())
}

fn read_summary(out: &FsPath) -> CmdResult<AnnealSummary> {
    Ok(io::read_json(&missing(out.join("summary.json"), "annealing summary")?)?)
}

fn read_lorenz_path(file: &FsPath) -> CmdResult<Path> {
    let file = missing(file.to_path_buf(), "path file")?;
    let params_file = file.with_extension("params.csv");
    let params = if params_file.is_file() {
        io::read_params(&params_file)?
    } else {
        Vec::new()
    };
    Ok(io::read_path(&file, params)?)
}

pub fn predict(common: &Common) -> CmdResult {
    let started = now_unix();
    let loaded = load(&common.config)?;
    let summary = read_summary(&common.out)?;
    let files = match &loaded.resolved {
        Resolved::Lorenz96(s) => predict_l96(s, &common.out, &summary)?,
        Resolved::Mlp(s) => predict_mlp(s, &common.out, &summary, common.seed)?,
    };
    finish(common, "predict", &loaded.bytes, started, &files)
}

/// Path with exactly the parameters the model expects; `ν` comes from the
/// stored parameter file or falls back to the configured forcing.
fn conform(s: &Lorenz96Setup, path: Path) -> CmdResult<Path> {
    let params = if s.model.forcing_unknown {
        vec![path.params().first().copied().unwrap_or(s.model.forcing)]
    } else {
        Vec::new()
    };
    Ok(Path::from_parts(s.model.dim, path.states().to_vec(), params)?)
}

fn predict_l96(s: &Lorenz96Setup, out: &FsPath, summary: &AnnealSummary) -> CmdResult<Vec<String>> {
    let truth = conform(s, read_lorenz_path(&out.join("truth.csv"))?)?;
    let dt = s.grid.dt_model();
    let steps = s.output.forecast_steps;
    let reference = forecast_lorenz96(&truth, &s.model, dt, steps)?;
    let mut rows = Vec::new();
    for rank in 0..summary.level_branches.len().min(2) {
        let est = conform(s, read_lorenz_path(&out.join(format!("level{rank}.csv")))?)?;
        let fc = forecast_lorenz96(&est, &s.model, dt, steps)?;
        for (step, rmse) in rmse_by_slot(&fc, &reference)?.into_iter().enumerate() {
            rows.push(ForecastRow {
                level_rank: rank,
                step,
                time: s.grid.tf() + step as f64 * dt,
                rmse,
            });
        }
    }
    io::write_records(&out.join("forecast.csv"), &io::FORECAST_HEADER, &rows)?;
    info!("forecast {} steps from {} level(s)", steps, summary.level_branches.len().min(2));
    Ok(vec!["forecast.csv".into()])
}

fn predict_mlp(s: &MlpSetup, out: &FsPath, summary: &AnnealSummary, seed: u64) -> CmdResult<Vec<String>> {
    let truth = io::read_weights(&missing(out.join("truth_weights.csv"), "truth weights")?, &s.spec)?;
    let fresh = s.fresh_pairs(&truth, s.output.m_predict, seed)?;
    let mut rows = Vec::new();
    for rank in 0..summary.level_branches.len().min(2) {
        let file = missing(out.join(format!("level{rank}_weights.csv")), "estimated weights")?;
        let w: MlpWeights = io::read_weights(&file, &s.spec)?;
        rows.push(PredictionRow {
            level_rank: rank,
            l: s.observed_indices.len(),
            m: s.m_pairs,
            m_p: s.output.m_predict,
            action: summary.levels[rank].0,
            error: mlp_prediction_error(&w, &fresh.batch, &s.spec)?,
            error_noiseless: prediction_error_against(&w, &fresh.batch, &fresh.clean_outputs, &s.spec)?,
        });
    }
    for r in &rows {
        info!("level {}: prediction error {:.6e} (noiseless {:.6e})", r.level_rank, r.error, r.error_noiseless);
    }
    io::write_records(&out.join("prediction.csv"), &io::PREDICTION_HEADER, &rows)?;
    Ok(vec!["prediction.csv".into()])
}

#[derive(Serialize)]
struct ElcheckReport {
    path: PathBuf,
    rf: f64,
    boundary: assim_core::deepest::BoundaryCheck<f64>,
    discrete_boundary: assim_core::deepest::BoundaryCheck<f64>,
    max_momentum: f64,
    max_el_residual: f64,
    max_discrete_momentum: f64,
    max_discrete_el_residual: f64,
}

pub fn elcheck(common: &Common, path: Option<&FsPath>) -> CmdResult {
    let started = now_unix();
    let loaded = load(&common.config)?;
    let Resolved::Lorenz96(s) = &loaded.resolved else {
        return Err(Failure::Config(anyhow!("elcheck needs a lorenz96 model")));
    };
    let file = path.map_or_else(|| common.out.join("level0.csv"), FsPath::to_path_buf);
    let est = conform(s, read_lorenz_path(&file)?)?;
    if est.n_slots() != s.grid.n_slots() {
        return Err(Failure::Runtime(anyhow!(
            "{} has {} slots but the grid has {}",
            file.display(),
            est.n_slots(),
            s.grid.n_slots()
        )));
    }
    prepare_out(&common.out)?;
    let obs = io::read_observations(&missing(common.out.join("observations.csv"), "observations")?, &s.grid, s.rm)?;
    let rf = s.schedule.rf(s.schedule.beta_max);
    let d = diagnostics(&est, &s.grid, &s.model, &obs, rf, s.output.boundary_tol)?;
    io::write_diagnostics(&common.out.join("diagnostics.csv"), &d, &s.grid)?;
    let report = ElcheckReport {
        path: file,
        rf,
        boundary: d.boundary,
        discrete_boundary: d.discrete_boundary,
        max_momentum: d.momentum.max_abs(),
        max_el_residual: d.el_residual.max_abs(),
        max_discrete_momentum: d.discrete_momentum.max_abs(),
        max_discrete_el_residual: d.discrete_el_residual.max_abs(),
    };
    info!(
        "boundary: stencil start/end {:.3e}/{:.3e} of {:.3e}; discrete start/end {:.3e}/{:.3e} of {:.3e} ({})",
        d.boundary.start,
        d.boundary.end,
        d.boundary.interior_max,
        d.discrete_boundary.start,
        d.discrete_boundary.end,
        d.discrete_boundary.interior_max,
        if d.discrete_boundary.pass { "pass" } else { "fail" }
    );
    io::write_json(&common.out.join("elcheck.json"), &report)?;
    finish(common, "elcheck", &loaded.bytes, started, &["diagnostics.csv".into(), "elcheck.json".into()])
}

fn apply_axis(config: &ExperimentConfig, axis: Axis, value: usize) -> ExperimentConfig {
    use assim_core::experiment::ModelConfig;
    let mut c = config.clone();
    match (axis, &mut c.model) {
        (Axis::L, _) => {
            c.observations.observed_indices = None;
            c.observations.n_observed = Some(value);
        }
        (Axis::M, ModelConfig::Mlp { m_pairs, .. }) => *m_pairs = value,
        (Axis::LF, ModelConfig::Mlp { n_layers, .. }) => *n_layers = value,
        (Axis::StepsBetweenObs, _) => c.grid.steps_between_obs = value,
        (Axis::M | Axis::LF, ModelConfig::Lorenz96 { .. }) => {}
    }
    c
}

pub fn sweep(common: &Common, axis: Axis, values: &[usize]) -> CmdResult {
    let started = now_unix();
    let loaded = load(&common.config)?;
    if matches!(axis, Axis::M | Axis::LF) && matches!(loaded.resolved, Resolved::Lorenz96(_)) {
        return Err(Failure::Config(anyhow!("axis {} applies only to mlp models", axis.name())));
    }
    prepare_out(&common.out)?;
    let pool = thread_pool(common.jobs)?;
    let rows: Vec<SweepRow> = pool.install(|| {
        values
            .par_iter()
            .map(|&v| sweep_item(&loaded.config, axis, v, &common.out, common.seed))
            .collect()
    });
    let summary = "sweep_summary.csv".to_string();
    io::write_records(&common.out.join(&summary), &io::SWEEP_HEADER, &rows)?;
    finish(common, "sweep", &loaded.bytes, started, &[summary])
}

fn sweep_item(base: &ExperimentConfig, axis: Axis, value: usize, out: &FsPath, seed: u64) -> SweepRow {
    let item_seed = derive_seed(seed, axis.name(), &value.to_string());
    let mut row = SweepRow {
        axis: axis.name().into(),
        value: value as f64,
        seed: item_seed,
        level_count: 0,
        lowest_level: f64::NAN,
        param_estimate: None,
        status: "ok".into(),
    };
    let run = || -> CmdResult<AnnealSummary> {
        let config = apply_axis(base, axis, value);
        let dir = out.join(format!("{}_{value}", axis.name()));
        prepare_out(&dir)?;
        let text = serde_json::to_string_pretty(&config).map_err(|e| Failure::Runtime(e.into()))?;
        std::fs::write(dir.join("config.json"), text).context("writing item config")?;
        let resolved = config.resolve().map_err(|e| Failure::Config(e.into()))?;
        generate_into(&resolved, &dir, item_seed)?;
        anneal_into(&resolved, &dir, item_seed, None)?;
        read_summary(&dir)
    };
    match run() {
        Ok(s) => {
            row.level_count = s.levels.len();
            row.lowest_level = s.levels[0].0;
            row.param_estimate = s.param_estimate.first().copied();
        }
        Err(Failure::Config(e) | Failure::Runtime(e)) => {
            log::error!("sweep item {}={value} failed: {e:#}", axis.name());
            row.status = format!("error: {e:#}");
        }
    }
    row
}
