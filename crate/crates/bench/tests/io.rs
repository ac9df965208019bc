use dpc_bench::io::{
    comparison_to_csv, dataset_to_csv, model_to_json, read_dataset, read_model, read_run_log, run_log_to_csv, write_dataset,
    write_model, write_run_log,
};
use dpc_core::dataio::{ScalerParams, TrajectoryDataset};
use dpc_core::koopman::{KoopmanModel, Lift};
use dpc_core::metrics::{ComparisonEntry, RunHeader, RunLog, RunRecord};
use dpc_core::qp::QpStatus;
use dpc_core::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Values spread over many magnitudes so that shortest round-trip printing is exercised.
fn awkward(rng: &mut ChaCha8Rng) -> f64 {
    let m: f64 = rng.random_range(-1.0..1.0);
    m * 10f64.powi(rng.random_range(-12..12))
}

fn random_log(seed: u64, len: usize) -> RunLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let header = RunHeader {
        controller: "deepc".into(),
        config_hash: "abc123".into(),
        plant_id: "test".into(),
        seed,
        extra: vec![("metric_q".into(), "1 0 0 1".into()), ("note".into(), "a=b".into())],
    };
    let mut log = RunLog::new(header, 2, 2);
    for t in 0..len {
        let v = |rng: &mut ChaCha8Rng| DVector::from_fn(2, |_, _| awkward(rng));
        let status = [QpStatus::Optimal, QpStatus::MaxIter, QpStatus::Infeasible][t % 3];
        log.push(RunRecord {
            t,
            u: v(&mut rng),
            y: v(&mut rng),
            r: v(&mut rng),
            status,
            hold: status != QpStatus::Optimal,
            solve_time: rng.random_range(0.0..1e-2),
            objective: awkward(&mut rng),
        })
        .unwrap();
    }
    log
}

#[test]
fn run_log_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let log = random_log(3, 40);
    write_run_log(&path, &log).unwrap();
    let back = read_run_log(&path).unwrap();
    assert_eq!(back, log);
    assert_eq!(run_log_to_csv(&back), std::fs::read(&path).unwrap());
}

#[test]
fn dataset_round_trips_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = DMatrix::from_fn(50, 3, |_, _| awkward(&mut rng));
    let y = DMatrix::from_fn(50, 2, |_, _| awkward(&mut rng));
    let data = TrajectoryDataset::new(u, y, 10.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/data.csv");
    write_dataset(&path, &data).unwrap();
    let back = read_dataset(&path, 10.0).unwrap();
    assert_eq!(back.u, data.u);
    assert_eq!(back.y, data.y);
    assert_eq!(dataset_to_csv(&back), dataset_to_csv(&data));
    let text = String::from_utf8(dataset_to_csv(&data)).unwrap();
    assert!(text.starts_with("t,u1,u2,u3,y1,y2\n0,"));
}

#[test]
fn model_round_trips_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut m = |r, c| DMatrix::from_fn(r, c, |_, _| awkward(&mut rng));
    let (a, b, c) = (m(6, 6), m(6, 2), m(2, 6));
    for lift in [Lift::DelayEmbedding { output_delays: 1, input_delays: 1 }, Lift::External] {
        let model = KoopmanModel::new(a.clone(), b.clone(), c.clone(), lift).unwrap();
        let scaler = ScalerParams {
            mean_u: DVector::from_vec(vec![0.1, 1e-9]),
            std_u: DVector::from_vec(vec![3.0, 7.25]),
            mean_y: DVector::from_vec(vec![65.4514051515653, -2.0]),
            std_y: DVector::from_vec(vec![1.0 / 3.0, 2.0]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        write_model(&path, &model, &scaler).unwrap();
        let (back, back_scaler) = read_model(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_scaler, scaler);
        assert_eq!(model_to_json(&back, &back_scaler), model_to_json(&model, &scaler));
    }
}

#[test]
fn model_matrices_are_row_major() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let model = KoopmanModel::new(a, DMatrix::from_row_slice(2, 1, &[5.0, 6.0]), DMatrix::from_row_slice(1, 2, &[7.0, 8.0]), Lift::External)
        .unwrap();
    let json: serde_json::Value = serde_json::from_str(&model_to_json(&model, &ScalerParams::identity(1, 1))).unwrap();
    assert_eq!(json["a"]["data"], serde_json::json!([1.0, 2.0, 3.0, 4.0]));
    assert_eq!(json["a"]["rows"], 2);
    assert_eq!(json["lift"]["kind"], "external");
}

#[test]
fn malformed_files_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "t,u1,y1\n0,1.0,2.0\n1,x,3.0\n").unwrap();
    let err = read_dataset(&path, 1.0).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");

    let mut text = String::from_utf8(run_log_to_csv(&random_log(1, 3))).unwrap();
    text = text.replace(",optimal,", ",unknown,");
    std::fs::write(&path, text).unwrap();
    let err = read_run_log(&path).unwrap_err().to_string();
    assert!(err.contains("unknown status"), "{err}");

    std::fs::write(&path, "{\"n_z\": 2}").unwrap();
    assert!(read_model(&path).is_err());
}

#[test]
fn comparison_csv_marks_zero_baselines() {
    let entries = vec![
        ComparisonEntry { metric: "e_rms".into(), base: 2.0, other: 1.0, percent: Some(50.0) },
        ComparisonEntry { metric: "J_du".into(), base: 0.0, other: 1.0, percent: None },
    ];
    let text = String::from_utf8(comparison_to_csv(&entries)).unwrap();
    assert_eq!(text, "metric,base_value,other_value,percent\ne_rms,2,1,50.0\nJ_du,0,1,undefined\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn run_log_text_round_trip(seed in any::<u64>(), len in 0usize..30) {
        let log = random_log(seed, len);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_run_log(&path, &log).unwrap();
        prop_assert_eq!(read_run_log(&path).unwrap(), log);
    }
}
