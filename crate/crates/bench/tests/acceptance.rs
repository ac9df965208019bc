//! Acceptance checks. Runs without the libtest harness and prints one
//! `PASS`/`FAIL` line per criterion; the process fails if any criterion does.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{mpc_oracle_input, random_minimal_lti, white_noise, Lti};
use dpc_bench::io::run_log_to_csv;
use dpc_bench::report::compare_logs;
use dpc_bench::scenario::{build_deepc, build_kmpc, excitation_spec, generate_dataset, identify_model, run_closed_loop, run_header};
use dpc_bench::ScenarioConfig;
use dpc_core::dataio::{fit_scaler, generate_step_excitation, minimum_data_length, persistent_excitation_check, ScalerParams, TrajectoryDataset};
use dpc_core::deepc::{DeepcConfig, DeepcController, DeepcMode, DeepcQpBuilder, MeasurementWindow};
use dpc_core::hankel::{trajectory_completion, HankelBlocks};
use dpc_core::koopman::{KalmanSettings, KmpcController, KmpcMode, KoopmanModel, Lift};
use dpc_core::metrics::{compute_metrics, RunHeader, RunLog, RunRecord};
use dpc_core::plant::{LtiPlant, Plant};
use dpc_core::qp::{brute_force_qp_oracle, kkt_residuals, solve_qp, QpProblem, QpStatus, SolverOptions};
use dpc_core::{DMatrix, DVector, PredictiveController, SharedTuning};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn willems_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let systems = 24;
    for seed in 0..systems {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(1..=4);
        let n_u = rng.random_range(1..=3);
        let n_y = rng.random_range(1..=3);
        let sys = random_minimal_lti(&mut rng, n, n_u, n_y);
        let (t_ini, horizon) = (n, rng.random_range(1..=8));
        let t = minimum_data_length(n_u, t_ini, horizon, n) + 20;
        let u = white_noise(&mut rng, t, n_u);
        if !persistent_excitation_check(&u, t_ini + horizon + n).map_err(|e| e.to_string())?.is_full {
            return Err(format!("system {seed}: input not persistently exciting"));
        }
        let (y, _) = sys.simulate(&DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), &u);
        // Std-only normalization keeps the behavior linear.
        let full = fit_scaler(&TrajectoryDataset::new(u.clone(), y.clone(), 1.0).unwrap()).unwrap();
        let scaler = ScalerParams { mean_u: full.mean_u * 0.0, mean_y: full.mean_y * 0.0, ..full };
        let blocks = HankelBlocks::from_trajectory(&scaler.scale_u_rows(&u), &scaler.scale_y_rows(&y), t_ini, horizon)
            .map_err(|e| e.to_string())?;
        for _ in 0..3 {
            let u_test = white_noise(&mut rng, t_ini + horizon, n_u);
            let (y_test, _) = sys.simulate(&DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)), &u_test);
            let (us, ys) = (scaler.scale_u_rows(&u_test), scaler.scale_y_rows(&y_test));
            let predicted = trajectory_completion(
                &blocks,
                &us.rows(0, t_ini).into_owned(),
                &ys.rows(0, t_ini).into_owned(),
                &us.rows(t_ini, horizon).into_owned(),
            )
            .map_err(|e| e.to_string())?;
            worst = worst.max((predicted - ys.rows(t_ini, horizon)).amax());
        }
    }
    check(
        worst <= 1e-8,
        format!("{systems} systems, max error {worst:.2e}"),
        format!("max error {worst:.2e} > 1e-8"),
    )
}

fn deepc_matches_mpc() -> Outcome {
    let (t_ini, horizon) = (3, 10);
    let sys = Lti {
        a: DMatrix::from_row_slice(2, 2, &[0.7, 0.2, -0.1, 0.8]),
        b: DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    };
    let (q, r) = (DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 0.1);
    let tuning = SharedTuning::new(horizon, q.clone(), r.clone(), vec![(-1e3, 1e3)], vec![(-1e3, 1e3)], 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = white_noise(&mut rng, 200, 1);
    let (y, _) = sys.simulate(&DVector::zeros(2), &u);
    let blocks = HankelBlocks::from_trajectory(&u, &y, t_ini, horizon).unwrap();
    let config = DeepcConfig::new(tuning, t_ini, 1e-6, f64::INFINITY);
    let mut ctrl =
        DeepcController::new(&blocks, config, ScalerParams::identity(1, 1), SolverOptions::default()).map_err(|e| e.to_string())?;
    let plant = || LtiPlant::new(sys.a.clone(), sys.b.clone(), sys.c.clone(), 1.0).unwrap();
    let (mut deepc_plant, mut oracle_plant) = (plant(), plant());
    let reference = DMatrix::from_element(horizon, 1, 1.0);
    let zero = DVector::zeros(1);
    let (mut hist_u, mut hist_y) = (Vec::new(), Vec::new());
    for _ in 0..t_ini {
        let y = deepc_plant.step(&zero).unwrap();
        ctrl.observe(&zero, &y).unwrap();
        hist_u.push(zero.clone());
        hist_y.push(oracle_plant.step(&zero).unwrap());
    }
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let out = ctrl.compute(&reference).map_err(|e| e.to_string())?;
        let y = deepc_plant.step(&out.u).unwrap();
        ctrl.observe(&out.u, &y).unwrap();
        let k = hist_u.len();
        let u_win = DMatrix::from_fn(t_ini, 1, |i, _| hist_u[k - t_ini + i][0]);
        let y_win = DMatrix::from_fn(t_ini, 1, |i, _| hist_y[k - t_ini + i][0]);
        let x = sys.deadbeat_state(&u_win, &y_win);
        let u_oracle = mpc_oracle_input(&sys, &x, &hist_u[k - 1], &reference, &q, &r);
        hist_y.push(oracle_plant.step(&u_oracle).unwrap());
        worst = worst.max((out.u[0] - u_oracle[0]).abs());
        hist_u.push(u_oracle);
    }
    check(worst <= 1e-4, format!("50 steps, max input gap {worst:.2e}"), format!("max input gap {worst:.2e} > 1e-4"))
}

fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(1..=8);
    let m_eq = rng.random_range(0..=2.min(n - 1));
    let m_in = rng.random_range(0..=6);
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let f = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(m_eq, n, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    let a_in = DMatrix::from_fn(m_in, n, |_, _| rng.random_range(-1.0..1.0));
    let ax0 = &a_in * &x0;
    let lb = DVector::from_fn(m_in, |i, _| ax0[i] - rng.random_range(0.0..0.5));
    let ub = DVector::from_fn(m_in, |i, _| ax0[i] + rng.random_range(0.0..0.5));
    QpProblem::new(h, f).with_equalities(a_eq, b_eq).with_inequalities(a_in, lb, ub)
}

fn qp_certification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut obj_gap, mut kkt) = (0.0f64, 0.0f64);
    let mut optimal = 0;
    for case in 0..200 {
        let p = random_qp(&mut rng);
        let oracle = brute_force_qp_oracle(&p).map_err(|e| e.to_string())?;
        let s = solve_qp(&p, &SolverOptions::default()).map_err(|e| e.to_string())?;
        if oracle.status != QpStatus::Optimal || s.status != QpStatus::Optimal {
            return Err(format!("case {case}: oracle {:?}, solver {:?}", oracle.status, s.status));
        }
        optimal += 1;
        obj_gap = obj_gap.max((s.objective - oracle.objective).abs());
        kkt = kkt.max(kkt_residuals(&p, &s).map_err(|e| e.to_string())?.max());
    }
    check(
        obj_gap <= 1e-6 && kkt <= 1e-6,
        format!("200 QPs, {optimal} optimal, objective gap {obj_gap:.2e}, KKT {kkt:.2e}"),
        format!("objective gap {obj_gap:.2e}, KKT {kkt:.2e}"),
    )
}

fn offset_free_kmpc() -> Outcome {
    let sys = Lti {
        a: DMatrix::from_row_slice(2, 2, &[0.7, 0.2, -0.1, 0.8]),
        b: DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    };
    let model = KoopmanModel::new(sys.a.clone(), sys.b.clone(), sys.c.clone(), Lift::External).unwrap();
    let tuning = SharedTuning::new(
        10,
        DMatrix::from_element(1, 1, 20.0),
        DMatrix::from_element(1, 1, 1.0),
        vec![(-10.0, 10.0)],
        vec![(-50.0, 50.0)],
        1.0,
    )
    .unwrap();
    let mut ctrl = KmpcController::new(
        &model,
        tuning,
        KmpcMode::Condensed,
        ScalerParams::identity(1, 1),
        KalmanSettings::default(),
        SolverOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut plant = LtiPlant::new(sys.a.clone(), sys.b.clone(), sys.c.clone(), 1.0).unwrap();
    plant.add_disturbance_step(0, DVector::from_element(1, 0.5)).unwrap();
    let u0 = DVector::zeros(1);
    let y0 = plant.step(&u0).unwrap();
    ctrl.observe(&u0, &y0).unwrap();
    let reference = DMatrix::from_element(10, 1, 1.0);
    let mut y = y0;
    for _ in 0..500 {
        let out = ctrl.compute(&reference).map_err(|e| e.to_string())?;
        y = plant.step(&out.u).unwrap();
        ctrl.observe(&out.u, &y).unwrap();
    }
    let err = (y[0] - 1.0).abs();
    check(err <= 1e-3, format!("|y - r| = {err:.2e} after 500 steps"), format!("|y - r| = {err:.2e} > 1e-3"))
}

fn pe_rank() -> Outcome {
    let cfg = ScenarioConfig::default();
    let u = generate_step_excitation(&excitation_spec(&cfg)).map_err(|e| e.to_string())?;
    let report = persistent_excitation_check(&u, cfg.deepc.t_ini).map_err(|e| e.to_string())?;
    check(
        u.nrows() == 4000 && report.rank == 30 && report.is_full,
        format!("T = {}, rank(U_p) = {} / {}", u.nrows(), report.rank, report.required),
        format!("T = {}, rank(U_p) = {} / {}", u.nrows(), report.rank, report.required),
    )
}

fn qp_dimensioning() -> Outcome {
    let mut cfg = ScenarioConfig::default();
    cfg.deepc.layout = "full".into();
    cfg.deepc.enforce_continuity = false;
    let data = generate_dataset(&cfg).map_err(|e| e.to_string())?;
    let scaler = fit_scaler(&data).map_err(|e| e.to_string())?;
    let scaled = dpc_core::dataio::apply_scaler(&data, &scaler).map_err(|e| e.to_string())?;
    let blocks = HankelBlocks::from_trajectory(&scaled.u, &scaled.y, cfg.deepc.t_ini, cfg.shared.horizon).map_err(|e| e.to_string())?;
    let config = cfg.deepc_config().map_err(|e| e.to_string())?;
    assert_eq!(config.mode, DeepcMode::Full);
    let tuning = config.tuning.clone();
    let (u_b, y_b) = (scaler.scale_u_bounds(&tuning.u_bounds), scaler.scale_y_bounds(&tuning.y_bounds));
    let builder = DeepcQpBuilder::new(&blocks, &config, &u_b, &y_b).map_err(|e| e.to_string())?;
    let dims = builder.dimensions();
    let mut window = MeasurementWindow::new(cfg.deepc.t_ini, 3, 3);
    for t in 0..cfg.deepc.t_ini {
        window.push(&scaled.u.row(t).transpose(), &scaled.y.row(t).transpose()).unwrap();
    }
    let reference = DMatrix::zeros(cfg.shared.horizon, 3);
    let qp = builder.build(&window, &reference, &scaled.u.row(cfg.deepc.t_ini - 1).transpose()).map_err(|e| e.to_string())?;
    let p = &qp.problem;
    let consistent = dims == builder.expected_dimensions()
        && p.num_variables() == dims.variables
        && p.num_equalities() == dims.equalities
        && p.num_inequalities() == dims.inequalities;
    check(
        dims.columns == 3931 && dims.variables == 4321 && consistent,
        format!(
            "M = {}, {} variables, {} equalities, {} two-sided inequalities, matrix rows agree",
            dims.columns, dims.variables, dims.equalities, dims.inequalities
        ),
        format!("dimensions {dims:?}, matrix ({}, {}, {})", p.num_variables(), p.num_equalities(), p.num_inequalities()),
    )
}

/// One closed-loop pair on the default surrogate scenario.
fn scenario_pair(cfg: &ScenarioConfig) -> Result<(RunLog, RunLog), String> {
    let data = generate_dataset(cfg).map_err(|e| e.to_string())?;
    let (mut deepc, ds) = build_deepc(cfg, &data).map_err(|e| e.to_string())?;
    let (model, ks, _) = identify_model(cfg, &data).map_err(|e| e.to_string())?;
    let mut kmpc = build_kmpc(cfg, &model, ks.clone()).map_err(|e| e.to_string())?;
    let (ld, lk) = std::thread::scope(|s| {
        let d = s.spawn(|| run_closed_loop(cfg, &mut deepc, run_header(cfg, "deepc", &ds)?, false));
        let k = run_closed_loop(cfg, &mut kmpc, run_header(cfg, "kmpc", &ks)?, false);
        Ok::<_, dpc_bench::BenchError>((d.join().expect("deepc run panicked")?, k?))
    })
    .map_err(|e| e.to_string())?;
    Ok((ld, lk))
}

fn head_to_head(deepc: &RunLog, kmpc: &RunLog, elapsed: Duration) -> Outcome {
    let report = compare_logs(kmpc, deepc).map_err(|e| e.to_string())?;
    let (k, d) = (&report.base, &report.other);
    let ratio = d.metrics.e_rms / k.metrics.e_rms;
    let summary = format!(
        "T_sim {}/{}, violations {}/{}, J_du deepc {:.4} vs kmpc {:.4} ({:.1} %), e_rms ratio {ratio:.3}, {:.0} s",
        d.metrics.t_sim,
        k.metrics.t_sim,
        d.violations,
        k.violations,
        d.metrics.j_du,
        k.metrics.j_du,
        100.0 * d.metrics.j_du / k.metrics.j_du,
        elapsed.as_secs_f64()
    );
    within(elapsed, 3600.0)?;
    check(
        d.metrics.t_sim == 2000
            && k.metrics.t_sim == 2000
            && d.violations == 0
            && k.violations == 0
            && d.metrics.j_du < k.metrics.j_du
            && ratio.is_finite()
            && (0.5..=2.0).contains(&ratio),
        summary.clone(),
        summary,
    )
}

fn determinism(first: &(RunLog, RunLog), cfg: &ScenarioConfig) -> Outcome {
    let second = scenario_pair(cfg)?;
    let same_d = run_log_to_csv(&first.0) == run_log_to_csv(&second.0);
    let same_k = run_log_to_csv(&first.1) == run_log_to_csv(&second.1);
    check(
        same_d && same_k,
        "repeated run logs are byte-identical".into(),
        format!("byte-identical: deepc {same_d}, kmpc {same_k}"),
    )
}

fn metric_formulas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.random_range(1..500);
        let mut log = RunLog::new(RunHeader::default(), 3, 3);
        for t in 0..len {
            let mut v = |lo: f64, hi: f64| DVector::from_fn(3, |_, _| rng.random_range(lo..hi));
            let (u, y, r) = (v(0.0, 100.0), v(10.0, 90.0), v(60.0, 80.0));
            log.push(RunRecord { t, u, y, r, status: QpStatus::Optimal, hold: false, solve_time: 0.0, objective: 0.0 })
                .unwrap();
        }
        let psd = |rng: &mut ChaCha8Rng| {
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            &m * m.transpose()
        };
        let (q, r) = (psd(&mut rng), psd(&mut rng));
        let m = compute_metrics(&log, &q, &r, 0, 2).map_err(|e| e.to_string())?;
        let recs = log.records();
        let (mut sq, mut jy, mut jdu, mut e) = (0.0, 0.0, 0.0, 0.0);
        for t in 0..recs.len() {
            sq += (recs[t].y[0] - recs[t].r[0]).powi(2);
            let prev = &recs[t.saturating_sub(1)].u;
            for i in 0..3 {
                for j in 0..3 {
                    jy += (recs[t].y[i] - recs[t].r[i]) * q[(i, j)] * (recs[t].y[j] - recs[t].r[j]);
                    jdu += (recs[t].u[i] - prev[i]) * r[(i, j)] * (recs[t].u[j] - prev[j]);
                }
            }
            e += recs[t].u[2];
        }
        let oracle = [(sq / len as f64).sqrt(), jy, jdu, e];
        for (value, expected) in [m.e_rms, m.j_y, m.j_du, m.energy].into_iter().zip(oracle) {
            worst = worst.max((value - expected).abs() / expected.abs().max(1.0));
        }
    }
    check(worst <= 1e-12, format!("100 random logs, max relative gap {worst:.2e}"), format!("max relative gap {worst:.2e}"))
}

fn timed(limit_s: Option<f64>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    if let Some(limit) = limit_s {
        within(start.elapsed(), limit)?;
    }
    outcome
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "Willems exactness", timed(Some(10.0), willems_exactness)),
        (2, "DeePC matches MPC oracle", timed(Some(30.0), deepc_matches_mpc)),
        (3, "QP certification", timed(Some(60.0), qp_certification)),
        (4, "offset-free KMPC", timed(Some(30.0), offset_free_kmpc)),
        (5, "PE rank", timed(Some(10.0), pe_rank)),
        (6, "QP dimensioning", timed(None, qp_dimensioning)),
    ];

    let cfg = ScenarioConfig::default();
    let start = Instant::now();
    let pair = catch_unwind(AssertUnwindSafe(|| scenario_pair(&cfg))).unwrap_or_else(|_| Err("panicked".into()));
    let elapsed = start.elapsed();
    match &pair {
        Ok(p) => {
            results.push((7, "head-to-head scenario", timed(None, || head_to_head(&p.0, &p.1, elapsed))));
            results.push((8, "determinism", timed(None, || determinism(p, &cfg))));
        }
        Err(e) => {
            results.push((7, "head-to-head scenario", Err(e.clone())));
            results.push((8, "determinism", Err(format!("no first run: {e}"))));
        }
    }
    results.push((9, "metric formulas", timed(Some(10.0), metric_formulas)));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
