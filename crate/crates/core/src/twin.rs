//! Twin experiments: known truth, noisy observations of it, and the
//! prediction checks run after assimilation.

use serde::{Deserialize, Serialize};

use crate::action::MlBatch;
use crate::error::{Error, Result};
use crate::models::lorenz96::integrate;
use crate::models::{Lorenz96Spec, MlpSpec, MlpWeights};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::types::{ObservationSet, Path, TimeGrid};

/// Fine-grid and transient settings for truth generation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthOptions {
    /// RK4 steps discarded before `t0`, taken at the generation step.
    pub spin_up_steps: usize,
    /// Generation steps per model step. `1` integrates with `dt_model`
    /// itself; larger values integrate finer and subsample.
    pub substeps: usize,
}

impl Default for TruthOptions {
    fn default() -> Self {
        Self {
            spin_up_steps: 0,
            substeps: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub seed: u64,
    pub truth_stream: u64,
    pub noise_stream: u64,
    pub noise_variance: f64,
    pub rm: f64,
    pub spin_up_steps: usize,
    pub substeps: usize,
    pub x0: Vec<f64>,
}

/// Truth, data, and the exact noise draws that connect them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct TwinRecord<T> {
    pub truth: Path<T>,
    pub observations: ObservationSet<T>,
    /// Row-major `[S][L]`, so `observations.values = truth + noise`.
    pub noise: Vec<T>,
    pub meta: GenerationMeta,
}

/// Lorenz96 trajectory on `grid` from `x0 ~ U[x0_range]`.
pub fn generate_lorenz96_truth<T: Real>(
    spec: &Lorenz96Spec<T>,
    grid: &TimeGrid<T>,
    x0_range: (T, T),
    rng: &mut RngStream,
) -> Result<Path<T>> {
    generate_lorenz96_truth_with(spec, grid, x0_range, &TruthOptions::default(), rng)
}

pub fn generate_lorenz96_truth_with<T: Real>(
    spec: &Lorenz96Spec<T>,
    grid: &TimeGrid<T>,
    x0_range: (T, T),
    opts: &TruthOptions,
    rng: &mut RngStream,
) -> Result<Path<T>> {
    if opts.substeps == 0 {
        return Err(Error::invalid("generation.substeps", "must be at least 1"));
    }
    let (lo, hi) = x0_range;
    let x0 = if lo == hi {
        vec![lo; spec.dim]
    } else {
        rng.uniform_draw(lo, hi, spec.dim)?
    };
    let h = grid.dt_model() / T::from_usize_lossy(opts.substeps);
    let nu = spec.forcing;
    let start = if opts.spin_up_steps > 0 {
        let warm = integrate(&x0, nu, h, opts.spin_up_steps)?;
        warm[opts.spin_up_steps * spec.dim..].to_vec()
    } else {
        x0
    };
    let fine = integrate(&start, nu, h, grid.n_steps() * opts.substeps)?;
    let params = if spec.forcing_unknown { vec![nu] } else { Vec::new() };
    let path = Path::from_parts(spec.dim, fine, params).map_err(|_| {
        Error::NonFinite("truth trajectory diverged")
    })?;
    Ok(path.subsample(opts.substeps))
}

/// Adds i.i.d. `N(0, σ²)` noise to the observed components at `obs_slots`.
///
/// `rm` defaults to `1/σ²`; it must be given when `σ² = 0`.
pub fn corrupt<T: Real>(
    truth: &Path<T>,
    observed_indices: &[usize],
    obs_slots: &[usize],
    noise_variance: T,
    rm: Option<T>,
    rng: &mut RngStream,
) -> Result<(ObservationSet<T>, Vec<T>)> {
    let rm = resolve_rm(noise_variance, rm)?;
    if let Some(&bad) = observed_indices.iter().find(|&&i| i >= truth.dim()) {
        return Err(Error::invalid(
            "observations.observed_indices",
            format!("index out of range: {bad} with dimension {}", truth.dim()),
        ));
    }
    if let Some(&bad) = obs_slots.iter().find(|&&s| s >= truth.n_slots()) {
        return Err(Error::invalid("grid.obs_times", format!("slot {bad} past end of truth")));
    }
    let sigma = noise_variance.sqrt();
    let noise: Vec<T> = rng
        .standard_normal(obs_slots.len() * observed_indices.len())
        .into_iter()
        .map(|z: T| z * sigma)
        .collect();
    let values = obs_slots
        .iter()
        .flat_map(|&s| observed_indices.iter().map(move |&i| truth.state(s)[i]))
        .zip(&noise)
        .map(|(x, &e)| x + e)
        .collect();
    Ok((ObservationSet::new(values, observed_indices.to_vec(), rm), noise))
}

fn resolve_rm<T: Real>(noise_variance: T, rm: Option<T>) -> Result<T> {
    if !(noise_variance >= T::zero()) || !noise_variance.is_finite() {
        return Err(Error::invalid("observations.noise_variance", "must be finite and >= 0"));
    }
    match rm {
        Some(r) if r >= T::zero() && r.is_finite() => Ok(r),
        Some(_) => Err(Error::invalid("observations.rm", "must be finite and >= 0")),
        None if noise_variance > T::zero() => Ok(noise_variance.recip()),
        None => Err(Error::invalid(
            "observations.rm",
            "noise variance is zero, so rm must be given explicitly",
        )),
    }
}

/// Complete Lorenz96 twin on `grid`: truth from stream `truth_stream`, noise
/// from `noise_stream`.
#[allow(clippy::too_many_arguments)]
pub fn lorenz96_twin(
    spec: &Lorenz96Spec<f64>,
    grid: &TimeGrid<f64>,
    x0_range: (f64, f64),
    observed_indices: &[usize],
    noise_variance: f64,
    rm: Option<f64>,
    opts: &TruthOptions,
    seed: u64,
) -> Result<TwinRecord<f64>> {
    use crate::rng::streams;
    let mut truth_rng = RngStream::new(seed, streams::TRUTH);
    let truth = generate_lorenz96_truth_with(spec, grid, x0_range, opts, &mut truth_rng)?;
    let mut noise_rng = RngStream::new(seed, streams::NOISE);
    let (observations, noise) = corrupt(
        &truth,
        observed_indices,
        grid.obs_slots(),
        noise_variance,
        rm,
        &mut noise_rng,
    )?;
    Ok(TwinRecord {
        meta: GenerationMeta {
            seed,
            truth_stream: streams::TRUTH,
            noise_stream: streams::NOISE,
            noise_variance,
            rm: observations.rm,
            spin_up_steps: opts.spin_up_steps,
            substeps: opts.substeps,
            x0: truth.state(0).to_vec(),
        },
        truth,
        observations,
        noise,
    })
}

/// `L` observed components spread evenly over `D`.
pub fn spread_indices(l: usize, d: usize) -> Vec<usize> {
    (0..l.min(d)).map(|i| i * d / l).collect()
}

/// Weights `W(l) ~ U[−0.1, 0.1]` and `m` exact forward passes from
/// `N(0, 1)` inputs. Each pair's layer states form one `Path`.
pub fn generate_mlp_truth<T: Real>(
    spec: &MlpSpec,
    m: usize,
    rng: &mut RngStream,
) -> Result<(MlpWeights<T>, Vec<Path<T>>)> {
    let flat = rng.uniform_draw(T::lit(-0.1), T::lit(0.1), spec.n_weights())?;
    let weights = MlpWeights::from_flat(spec, &flat)?;
    let paths = generate_mlp_pairs(spec, &weights, m, rng)?;
    Ok((weights, paths))
}

/// Fresh `N(0, 1)` inputs pushed through `weights`.
pub fn generate_mlp_pairs<T: Real>(
    spec: &MlpSpec,
    weights: &MlpWeights<T>,
    m: usize,
    rng: &mut RngStream,
) -> Result<Vec<Path<T>>> {
    if m == 0 {
        return Err(Error::invalid("model.m_pairs", "need at least one pair"));
    }
    (0..m)
        .map(|_| {
            let input = rng.standard_normal(spec.n_neurons);
            let layers = weights.forward(&input)?;
            Path::from_parts(spec.n_neurons, layers.concat(), Vec::new())
        })
        .collect()
}

/// Noisy input/output observations of MLP truth paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpObservations<T> {
    pub batch: MlBatch<T>,
    pub input_noise: Vec<T>,
    pub output_noise: Vec<T>,
    /// Noiseless outputs on the observed neurons, `[M][L]`.
    pub clean_outputs: Vec<T>,
    pub rm: T,
}

pub fn corrupt_mlp<T: Real>(
    paths: &[Path<T>],
    observed_indices: &[usize],
    noise_variance: T,
    rm: Option<T>,
    rng: &mut RngStream,
) -> Result<MlpObservations<T>> {
    let rm = resolve_rm(noise_variance, rm)?;
    let sigma = noise_variance.sqrt();
    let n = paths.first().map_or(0, Path::dim);
    if let Some(&bad) = observed_indices.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(
            "observations.observed_indices",
            format!("index out of range: {bad} with dimension {n}"),
        ));
    }
    let take = |slot: fn(&Path<T>) -> usize| -> Vec<T> {
        paths
            .iter()
            .flat_map(|p| observed_indices.iter().map(move |&i| p.state(slot(p))[i]))
            .collect()
    };
    let clean_inputs = take(|_| 0);
    let clean_outputs = take(|p| p.n_slots() - 1);
    let count = clean_inputs.len();
    let input_noise: Vec<T> = rng.standard_normal(count).into_iter().map(|z: T| z * sigma).collect();
    let output_noise: Vec<T> = rng.standard_normal(count).into_iter().map(|z: T| z * sigma).collect();
    let add = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &e)| x + e).collect::<Vec<_>>();
    Ok(MlpObservations {
        batch: MlBatch {
            inputs: add(&clean_inputs, &input_noise),
            outputs: add(&clean_outputs, &output_noise),
            observed_indices: observed_indices.to_vec(),
        },
        input_noise,
        output_noise,
        clean_outputs,
        rm,
    })
}

/// Continues the estimated path from its final state under its own `ν`.
///
/// The result starts at `x(t_F)` and has `n_steps + 1` slots.
pub fn forecast_lorenz96<T: Real>(
    estimated: &Path<T>,
    model: &Lorenz96Spec<T>,
    dt: T,
    n_steps: usize,
) -> Result<Path<T>> {
    Error::check_len("estimated path dimension", model.dim, estimated.dim())?;
    if !(dt > T::zero()) {
        return Err(Error::invalid("forecast.dt", "must be positive"));
    }
    let x_end = estimated.state(estimated.n_slots() - 1);
    let nu = model.forcing_for(estimated.params());
    let traj = integrate(x_end, nu, dt, n_steps)?;
    Path::from_parts(model.dim, traj, estimated.params().to_vec())
}

/// Per-slot root-mean-square difference of two equally shaped paths.
pub fn rmse_by_slot<T: Real>(a: &Path<T>, b: &Path<T>) -> Result<Vec<T>> {
    Error::check_len("rmse slots", a.n_slots(), b.n_slots())?;
    Error::check_len("rmse dimension", a.dim(), b.dim())?;
    let d = T::from_usize_lossy(a.dim());
    Ok((0..a.n_slots())
        .map(|n| {
            let ss: T = a.state(n).iter().zip(b.state(n)).map(|(&u, &v)| (u - v) * (u - v)).sum();
            (ss / d).sqrt()
        })
        .collect())
}

/// `(1/(L·M_P)) Σ_k Σ_r (x_r(l_F) − y_r(l_F))²` with the network run forward
/// from the batch inputs. Unobserved input neurons are set to zero, the
/// mean of the input distribution.
pub fn mlp_prediction_error<T: Real>(
    weights: &MlpWeights<T>,
    batch_new: &MlBatch<T>,
    spec: &MlpSpec,
) -> Result<T> {
    prediction_error_against(weights, batch_new, &batch_new.outputs, spec)
}

/// Same average against arbitrary `[M][L]` targets, such as the noiseless
/// outputs kept by [`corrupt_mlp`].
pub fn prediction_error_against<T: Real>(
    weights: &MlpWeights<T>,
    batch: &MlBatch<T>,
    targets: &[T],
    spec: &MlpSpec,
) -> Result<T> {
    batch.validate(spec.n_neurons)?;
    let m = batch.n_pairs();
    let l = batch.n_observed();
    if m == 0 {
        return Err(Error::invalid("prediction.m_pairs", "need at least one pair"));
    }
    Error::check_len("prediction targets", m * l, targets.len())?;
    let mut total = T::zero();
    let mut input = vec![T::zero(); spec.n_neurons];
    for k in 0..m {
        input.iter_mut().for_each(|v| *v = T::zero());
        for (r, &i) in batch.observed_indices.iter().enumerate() {
            input[i] = batch.input(k)[r];
        }
        let layers = weights.forward(&input)?;
        let out = layers.last().expect("at least two layers");
        for (r, &i) in batch.observed_indices.iter().enumerate() {
            let e = out[i] - targets[k * l + r];
            total += e * e;
        }
    }
    Ok(total / T::from_usize_lossy(l * m))
}
