//! Dataset generation, controller construction and the closed loop.

use std::time::Instant;

use dpc_core::dataio::{
    apply_scaler, fit_scaler, generate_step_excitation, minimum_data_length, persistent_excitation_check, ExcitationReport,
    ExcitationSpec, ScalerParams, TrajectoryDataset,
};
use dpc_core::deepc::DeepcController;
use dpc_core::hankel::HankelBlocks;
use dpc_core::koopman::{identify_edmd, IdentificationReport, KmpcController, KoopmanModel};
use dpc_core::metrics::{RunHeader, RunLog, RunRecord};
use dpc_core::plant::{steady_state_solve, MeasurementNoise, PasteurizerSurrogate, Plant};
use dpc_core::tuning::reference_window;
use dpc_core::{DMatrix, DVector, PredictiveController, SharedTuning};

use crate::config::ScenarioConfig;
use crate::error::{BenchError, Result};

pub const PLANT_ID: &str = "pasteurizer-surrogate";

/// Seed offsets so data, closed-loop noise and excitation draw independent streams.
const DATA_NOISE_STREAM: u64 = 0x5eed_0001;
const LOOP_NOISE_STREAM: u64 = 0x5eed_0002;

/// Surrogate at the steady state of the initial input, with the configured noise.
pub fn make_plant(cfg: &ScenarioConfig, noise_stream: u64) -> Result<PasteurizerSurrogate> {
    let mut plant = PasteurizerSurrogate::new(cfg.pasteurizer_params())?;
    let x0 = steady_state_solve(&plant, &cfg.initial_input())?;
    plant.reset(x0)?;
    if cfg.plant.noise_std.iter().any(|&s| s > 0.0) {
        let noise = MeasurementNoise::new(DVector::from_column_slice(&cfg.plant.noise_std), cfg.run.seed ^ noise_stream);
        plant.set_noise(Some(noise))?;
    }
    Ok(plant)
}

pub fn excitation_spec(cfg: &ScenarioConfig) -> ExcitationSpec {
    ExcitationSpec {
        n_u: cfg.n_u(),
        samples: cfg.data.samples,
        ts: cfg.shared.ts,
        bounds: cfg.shared.u_bounds.iter().map(|&[lo, hi]| (lo, hi)).collect(),
        step_duration_range: (cfg.data.step_duration[0], cfg.data.step_duration[1]),
        seed: cfg.run.seed,
        synchronized: cfg.data.synchronized,
    }
}

/// Excites the surrogate from its initial steady state and records `(u, y)`.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<TrajectoryDataset> {
    let u = generate_step_excitation(&excitation_spec(cfg))?;
    let mut plant = make_plant(cfg, DATA_NOISE_STREAM)?;
    let mut y = DMatrix::zeros(u.nrows(), cfg.n_y());
    for t in 0..u.nrows() {
        let yt = plant.step(&u.row(t).transpose())?;
        y.row_mut(t).copy_from(&yt.transpose());
    }
    Ok(TrajectoryDataset::new(u, y, cfg.shared.ts)?)
}

/// Excitation summary printed by `gen-data`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataSummary {
    /// Rank check of `U_p` (order `T_ini`).
    pub past: ExcitationReport,
    /// Rank check at order `T_ini + N + n_z`.
    pub full: ExcitationReport,
    pub minimum_length: usize,
    pub samples: usize,
}

pub fn summarize_dataset(cfg: &ScenarioConfig, data: &TrajectoryDataset) -> Result<DataSummary> {
    let (t_ini, n) = (cfg.deepc.t_ini, cfg.shared.horizon);
    let order = t_ini + n + cfg.kmpc.n_z;
    Ok(DataSummary {
        past: persistent_excitation_check(&data.u, t_ini)?,
        full: persistent_excitation_check(&data.u, order.min(data.len()))?,
        minimum_length: minimum_data_length(cfg.n_u(), t_ini, n, cfg.kmpc.n_z),
        samples: data.len(),
    })
}

pub fn build_deepc(cfg: &ScenarioConfig, data: &TrajectoryDataset) -> Result<(DeepcController, ScalerParams)> {
    let scaler = fit_scaler(data)?;
    let scaled = apply_scaler(data, &scaler)?;
    let blocks = HankelBlocks::from_trajectory(&scaled.u, &scaled.y, cfg.deepc.t_ini, cfg.shared.horizon)?;
    let ctrl = DeepcController::new(&blocks, cfg.deepc_config()?, scaler.clone(), cfg.solver_options())?;
    Ok((ctrl, scaler))
}

/// EDMD on the scaled dataset.
pub fn identify_model(cfg: &ScenarioConfig, data: &TrajectoryDataset) -> Result<(KoopmanModel, ScalerParams, IdentificationReport)> {
    let scaler = fit_scaler(data)?;
    let scaled = apply_scaler(data, &scaler)?;
    let (model, report) = identify_edmd(&scaled, cfg.kmpc.n_z, cfg.kmpc_lift()?)?;
    Ok((model, scaler, report))
}

pub fn build_kmpc(cfg: &ScenarioConfig, model: &KoopmanModel, scaler: ScalerParams) -> Result<KmpcController> {
    if model.n_u() != cfg.n_u() || model.n_y() != cfg.n_y() {
        return Err(BenchError::Mismatch("model channel counts differ from the plant".into()));
    }
    Ok(KmpcController::new(
        model,
        cfg.shared_tuning()?,
        cfg.kmpc_mode()?,
        scaler,
        cfg.kalman_settings(),
        cfg.solver_options(),
    )?)
}

/// Piecewise-constant reference (`t_sim × n_y`). Untracked channels hold `y0`.
pub fn reference_profile(cfg: &ScenarioConfig, y0: &DVector<f64>) -> DMatrix<f64> {
    let r = &cfg.reference;
    DMatrix::from_fn(cfg.run.t_sim, cfg.n_y(), |t, c| {
        if c == r.channel {
            let k = r.times.iter().rposition(|&s| s <= t).unwrap_or(0);
            r.levels[k]
        } else {
            y0[c]
        }
    })
}

/// Weights that evaluate the metric costs in the controller's scaled
/// coordinates: `S⁻¹ W S⁻¹` with `S` the per-channel standard deviation.
pub fn metric_weights(tuning: &SharedTuning, scaler: &ScalerParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let inv = |std: &DVector<f64>| DMatrix::from_diagonal(&std.map(|s| 1.0 / s));
    let (sy, su) = (inv(&scaler.std_y), inv(&scaler.std_u));
    (&sy * &tuning.q * &sy, &su * &tuning.r * &su)
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Header written with every run log.
pub fn run_header(cfg: &ScenarioConfig, controller: &str, scaler: &ScalerParams) -> Result<RunHeader> {
    let tuning = cfg.shared_tuning()?;
    let (q_m, r_m) = metric_weights(&tuning, scaler);
    let mut extra: Vec<(String, String)> =
        cfg.pasteurizer_params().entries().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    extra.push(("noise_std".into(), join(cfg.plant.noise_std.iter().copied())));
    extra.push(("u_bounds".into(), join(cfg.shared.u_bounds.concat())));
    extra.push(("tracked_channel".into(), cfg.reference.channel.to_string()));
    extra.push(("energy_channel".into(), cfg.run.energy_channel.to_string()));
    extra.push(("metric_q".into(), join(q_m.transpose().iter().copied())));
    extra.push(("metric_r".into(), join(r_m.transpose().iter().copied())));
    Ok(RunHeader {
        controller: controller.into(),
        config_hash: cfg.scenario_hash(),
        plant_id: PLANT_ID.into(),
        seed: cfg.run.seed,
        extra,
    })
}

/// Runs one controller on a fresh plant.
///
/// The plant starts at the steady state of the initial input, which is held
/// for `T_ini` samples to fill the controller's history. Each step then
/// computes an input, applies it, and logs the output measured with it.
/// `solve_time` is logged as 0 unless `timing` is set, so logs stay
/// reproducible byte for byte.
pub fn run_closed_loop(
    cfg: &ScenarioConfig,
    controller: &mut dyn PredictiveController,
    header: RunHeader,
    timing: bool,
) -> Result<RunLog> {
    let mut plant = make_plant(cfg, LOOP_NOISE_STREAM)?;
    let u0 = cfg.initial_input();
    let y0 = plant.state();
    for _ in 0..cfg.deepc.t_ini {
        let y = plant.step(&u0)?;
        controller.observe(&u0, &y)?;
    }
    let profile = reference_profile(cfg, &y0);
    let horizon = cfg.shared.horizon;
    let mut log = RunLog::new(header, cfg.n_u(), cfg.n_y());
    for t in 0..cfg.run.t_sim {
        let window = reference_window(&profile, t, horizon)?;
        let start = Instant::now();
        let out = controller.compute(&window)?;
        let elapsed = start.elapsed().as_secs_f64();
        let y = plant.step(&out.u)?;
        controller.observe(&out.u, &y)?;
        log.push(RunRecord {
            t,
            u: out.u,
            y,
            r: profile.row(t).transpose(),
            status: out.status,
            hold: out.fallback,
            solve_time: if timing { elapsed } else { 0.0 },
            objective: out.objective,
        })?;
    }
    Ok(log)
}

/// Count of held steps in a log.
pub fn hold_count(log: &RunLog) -> usize {
    log.records().iter().filter(|r| r.hold).count()
}
