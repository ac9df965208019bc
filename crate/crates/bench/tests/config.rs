use dpc_bench::{BenchError, ScenarioConfig};
use dpc_core::deepc::DeepcMode;
use dpc_core::koopman::{KmpcMode, Lift};

#[test]
fn defaults_are_the_benchmark_tuning() {
    let cfg = ScenarioConfig::default();
    cfg.validate().unwrap();
    let t = cfg.shared_tuning().unwrap();
    assert_eq!(t.horizon, 60);
    assert_eq!(t.ts, 10.0);
    assert_eq!(t.q.diagonal().as_slice(), &[20.0, 0.0, 0.0]);
    assert_eq!(t.r.diagonal().as_slice(), &[20.0, 20.0, 20.0]);
    assert_eq!(t.u_bounds, vec![(30.0, 100.0), (20.0, 100.0), (0.0, 50.0)]);
    let d = cfg.deepc_config().unwrap();
    assert_eq!((d.t_ini, d.lambda_g, d.lambda_sigma), (10, 1e4, 1e5));
    assert_eq!(d.mode, DeepcMode::Reduced);
    assert_eq!(cfg.kmpc_mode().unwrap(), KmpcMode::Condensed);
    assert_eq!(cfg.kmpc_lift().unwrap(), Lift::DelayEmbedding { output_delays: 1, input_delays: 1 });
    assert_eq!((cfg.data.samples, cfg.run.t_sim), (4000, 2000));
    assert_eq!(cfg.reference.times, vec![0, 700, 1400]);
}

#[test]
fn empty_file_gives_defaults_and_text_round_trips() {
    assert_eq!(ScenarioConfig::from_toml_str("").unwrap(), ScenarioConfig::default());
    let mut cfg = ScenarioConfig::default();
    cfg.run.seed = 9;
    cfg.deepc.lambda_sigma = f64::INFINITY;
    cfg.reference.levels = vec![68.5, 71.0, 66.25];
    let text = cfg.to_toml_string();
    assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
}

#[test]
fn both_controllers_share_one_tuning_instance() {
    let cfg = ScenarioConfig::default();
    let d = cfg.deepc_config().unwrap();
    assert_eq!(*d.tuning, *cfg.shared_tuning().unwrap());
}

#[test]
fn matching_repeats_are_accepted() {
    let text = "[shared]\nhorizon = 60\n[deepc]\nhorizon = 60\nq = [20.0, 0.0, 0.0]\n[kmpc]\nts = 10.0\n";
    ScenarioConfig::from_toml_str(text).unwrap();
}

#[test]
fn divergent_repeats_are_rejected() {
    for (section, line, key) in [
        ("deepc", "horizon = 50", "horizon"),
        ("kmpc", "r = [20.0, 20.0, 2.0]", "r"),
        ("kmpc", "u_bounds = [[30.0, 100.0], [20.0, 100.0], [0.0, 60.0]]", "u_bounds"),
        ("deepc", "ts = 5.0", "ts"),
    ] {
        let err = ScenarioConfig::from_toml_str(&format!("[{section}]\n{line}\n")).unwrap_err();
        assert!(matches!(err, BenchError::Core(dpc_core::Error::DivergentTuning(_))), "{err}");
        assert!(err.to_string().contains(&format!("{section}.{key}")), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let err = ScenarioConfig::from_toml_str("[shared]\nhorizon = 60\n\n[run]\nt_sim = \"long\"\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 5"), "{msg}");
    assert_eq!(err.exit_code(), 2);
    let err = ScenarioConfig::from_toml_str("[plant]\nnoise = [0.1]\n").unwrap_err();
    assert!(err.to_string().contains("line 2") && err.to_string().contains("noise"), "{err}");
}

#[test]
fn semantic_errors_are_config_errors() {
    for text in [
        "[reference]\ntimes = [0, 700]\nlevels = [70.0]\n",
        "[reference]\ntimes = [100]\nlevels = [70.0]\n",
        "[run]\ninitial_input = [10.0, 60.0, 25.0]\n",
        "[deepc]\nlayout = \"sparse\"\n",
        "[shared]\nq = [20.0, 0.0]\n",
        "[data]\nstep_duration = [10, 5]\n",
        "[plant]\nmodel = \"digital-twin\"\n",
    ] {
        let err = ScenarioConfig::from_toml_str(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}: {err}");
    }
}

#[test]
fn scenario_hash_tracks_the_scenario() {
    let base = ScenarioConfig::default();
    let h = base.scenario_hash();
    assert_eq!(h.len(), 64);
    assert_eq!(h, ScenarioConfig::default().scenario_hash());
    let mut other = base.clone();
    other.reference.levels[1] = 67.0;
    assert_ne!(other.scenario_hash(), h);
    let mut other = base.clone();
    other.run.seed = 2;
    assert_ne!(other.scenario_hash(), h);
    let mut other = base.clone();
    other.plant.constants.p1 += 1.0;
    assert_ne!(other.scenario_hash(), h);
    // Controller-specific settings do not change the scenario.
    let mut other = base;
    other.deepc.lambda_g = 1.0;
    other.kmpc.q_d = 5.0;
    assert_eq!(other.scenario_hash(), h);
}

#[test]
fn documented_defaults_parse_to_the_defaults() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```toml\n").expect("README has a TOML block") + "```toml\n".len();
    let block = &readme[start..start + readme[start..].find("```").unwrap()];
    assert_eq!(ScenarioConfig::from_toml_str(block).unwrap(), ScenarioConfig::default());
}
