//! Scenario configuration, read from TOML.
//!
//! Every section and key is optional; omitted values take the defaults of
//! [`ScenarioConfig::default`]. Unknown keys are rejected. The README lists
//! every key.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dpc_core::deepc::{DeepcConfig, DeepcMode};
use dpc_core::koopman::{KalmanSettings, KmpcMode, Lift};
use dpc_core::plant::PasteurizerParams;
use dpc_core::qp::SolverOptions;
use dpc_core::{DMatrix, DVector, SharedTuning};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: PlantSection,
    pub shared: SharedSection,
    pub data: DataSection,
    pub deepc: DeepcSection,
    pub kmpc: KmpcSection,
    pub reference: ReferenceSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    /// Only `"surrogate"` is available.
    pub model: String,
    /// Measurement noise standard deviation per output; zeros disable noise.
    pub noise_std: Vec<f64>,
    pub constants: SurrogateConstants,
}

/// Mirror of [`PasteurizerParams`] with serde support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConstants {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: f64,
    pub p6: f64,
    pub p7: f64,
    pub c2: f64,
    pub c3: f64,
    pub v: f64,
    pub t_amb: f64,
    pub t_in: f64,
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharedSection {
    pub horizon: usize,
    /// Sampling time in seconds.
    pub ts: f64,
    /// Diagonal of Q.
    pub q: Vec<f64>,
    /// Diagonal of R.
    pub r: Vec<f64>,
    pub u_bounds: Vec<[f64; 2]>,
    pub y_bounds: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub samples: usize,
    /// Inclusive range of excitation segment lengths in samples.
    pub step_duration: [usize; 2],
    pub synchronized: bool,
    /// Dataset CSV used by `identify` and `run` when no `--data` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepcSection {
    pub t_ini: usize,
    pub lambda_g: f64,
    /// `inf` enforces exact past matching.
    pub lambda_sigma: f64,
    /// `"full"`, `"condensed"` or `"reduced"`.
    pub layout: String,
    pub enforce_continuity: bool,
    /// Optional repeats of `[shared]` keys; they must match it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_bounds: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_bounds: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmpcSection {
    pub n_z: usize,
    /// Delay-embedding shape; both or neither must be given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_delays: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_delays: Option<usize>,
    /// `"full"` or `"condensed"`.
    pub layout: String,
    pub q_z: f64,
    pub q_d: f64,
    pub r_kf: f64,
    pub p0: f64,
    /// Model JSON used by `run` when no `--model` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    /// Optional repeats of `[shared]` keys; they must match it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_bounds: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_bounds: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    /// Output channel that follows the setpoints (0-based).
    pub channel: usize,
    /// Switch samples, starting at 0 and strictly increasing.
    pub times: Vec<usize>,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub t_sim: usize,
    pub seed: u64,
    /// Input held before the loop starts; the plant starts at its steady state.
    pub initial_input: Vec<f64>,
    /// Channel summed in the energy metric (0-based).
    pub energy_channel: usize,
    /// Largest tolerated fraction of held (fallback) steps.
    pub max_hold_fraction: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            plant: PlantSection::default(),
            shared: SharedSection::default(),
            data: DataSection::default(),
            deepc: DeepcSection::default(),
            kmpc: KmpcSection::default(),
            reference: ReferenceSection::default(),
            run: RunSection::default(),
        }
    }
}

impl Default for PlantSection {
    fn default() -> Self {
        PlantSection { model: "surrogate".into(), noise_std: vec![0.0; 3], constants: SurrogateConstants::default() }
    }
}

impl Default for SurrogateConstants {
    fn default() -> Self {
        let p = PasteurizerParams::default();
        SurrogateConstants {
            p1: p.p1,
            p2: p.p2,
            p3: p.p3,
            p4: p.p4,
            p5: p.p5,
            p6: p.p6,
            p7: p.p7,
            c2: p.c2,
            c3: p.c3,
            v: p.v,
            t_amb: p.t_amb,
            t_in: p.t_in,
            substeps: p.substeps,
        }
    }
}

impl Default for SharedSection {
    fn default() -> Self {
        SharedSection {
            horizon: 60,
            ts: 10.0,
            q: vec![20.0, 0.0, 0.0],
            r: vec![20.0, 20.0, 20.0],
            u_bounds: vec![[30.0, 100.0], [20.0, 100.0], [0.0, 50.0]],
            y_bounds: vec![[0.0, 400.0]; 3],
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { samples: 4000, step_duration: [5, 60], synchronized: false, path: None }
    }
}

impl Default for DeepcSection {
    fn default() -> Self {
        DeepcSection {
            t_ini: 10,
            lambda_g: 1e4,
            lambda_sigma: 1e5,
            layout: "reduced".into(),
            enforce_continuity: false,
            horizon: None,
            ts: None,
            q: None,
            r: None,
            u_bounds: None,
            y_bounds: None,
        }
    }
}

impl Default for KmpcSection {
    fn default() -> Self {
        let kf = KalmanSettings::default();
        KmpcSection {
            n_z: 9,
            output_delays: None,
            input_delays: None,
            layout: "condensed".into(),
            q_z: kf.q_z,
            q_d: kf.q_d,
            r_kf: kf.r,
            p0: kf.p0,
            model_path: None,
            horizon: None,
            ts: None,
            q: None,
            r: None,
            u_bounds: None,
            y_bounds: None,
        }
    }
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection { channel: 0, times: vec![0, 700, 1400], levels: vec![70.0, 66.0, 74.0] }
    }
}

impl Default for RunSection {
    fn default() -> Self {
        let solver = SolverOptions::default();
        RunSection {
            t_sim: 2000,
            seed: 1,
            initial_input: vec![65.0, 60.0, 25.0],
            energy_channel: 2,
            max_hold_fraction: 0.01,
            abs_tol: solver.abs_tol,
            rel_tol: solver.rel_tol,
            max_iterations: solver.max_iterations,
        }
    }
}

type Echo<'a> = (
    Option<usize>,
    Option<f64>,
    &'a Option<Vec<f64>>,
    &'a Option<Vec<f64>>,
    &'a Option<Vec<[f64; 2]>>,
    &'a Option<Vec<[f64; 2]>>,
);

fn config_err(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

fn bounds_vec(b: &[[f64; 2]]) -> Vec<(f64, f64)> {
    b.iter().map(|&[lo, hi]| (lo, hi)).collect()
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            BenchError::Config(msg) => config_err(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n_u(&self) -> usize {
        self.shared.u_bounds.len()
    }

    pub fn n_y(&self) -> usize {
        self.shared.y_bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.plant.model != "surrogate" {
            return Err(config_err(format!("unknown plant model {:?}", self.plant.model)));
        }
        let (n_u, n_y) = (self.n_u(), self.n_y());
        if n_u != 3 || n_y != 3 {
            return Err(config_err("the surrogate plant has 3 inputs and 3 outputs"));
        }
        if self.plant.noise_std.len() != n_y || self.plant.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(config_err("plant.noise_std needs one non-negative entry per output"));
        }
        self.pasteurizer_params().validate()?;
        if self.shared.q.len() != n_y || self.shared.r.len() != n_u {
            return Err(config_err("shared.q needs one entry per output and shared.r one per input"));
        }
        self.shared_tuning()?;

        let d = &self.deepc;
        self.check_echo("deepc", (d.horizon, d.ts, &d.q, &d.r, &d.u_bounds, &d.y_bounds))?;
        let k = &self.kmpc;
        self.check_echo("kmpc", (k.horizon, k.ts, &k.q, &k.r, &k.u_bounds, &k.y_bounds))?;

        let [lo, hi] = self.data.step_duration;
        if !(1 <= lo && lo <= hi && hi <= self.data.samples) {
            return Err(config_err("data.step_duration must satisfy 1 <= min <= max <= samples"));
        }
        DeepcMode::parse(&self.deepc.layout)
            .ok_or_else(|| config_err(format!("unknown deepc.layout {:?}", self.deepc.layout)))?;
        self.deepc_config()?.validate()?;
        self.kmpc_mode()?;
        self.kmpc_lift()?;
        self.kalman_settings().validate()?;

        let r = &self.reference;
        if r.channel >= n_y {
            return Err(config_err("reference.channel out of range"));
        }
        if r.times.is_empty() || r.times.len() != r.levels.len() || r.times[0] != 0 {
            return Err(config_err("reference.times must start at 0 and match reference.levels in length"));
        }
        if r.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err("reference.times must be strictly increasing"));
        }
        if r.levels.iter().any(|v| !v.is_finite()) {
            return Err(config_err("reference.levels must be finite"));
        }

        let run = &self.run;
        if run.t_sim == 0 {
            return Err(config_err("run.t_sim must be at least 1"));
        }
        if run.initial_input.len() != n_u {
            return Err(config_err("run.initial_input needs one entry per input"));
        }
        let tuning = self.shared_tuning()?;
        if !tuning.input_within_bounds(&DVector::from_column_slice(&run.initial_input)) {
            return Err(config_err("run.initial_input violates shared.u_bounds"));
        }
        if run.energy_channel >= n_u {
            return Err(config_err("run.energy_channel out of range"));
        }
        if !(0.0..=1.0).contains(&run.max_hold_fraction) {
            return Err(config_err("run.max_hold_fraction must lie in [0, 1]"));
        }
        self.solver_options().validate()?;
        Ok(())
    }

    fn check_echo(&self, section: &str, echo: Echo<'_>) -> Result<()> {
        let s = &self.shared;
        let (horizon, ts, q, r, u_bounds, y_bounds) = echo;
        let differs = [
            ("horizon", horizon.is_some_and(|v| v != s.horizon)),
            ("ts", ts.is_some_and(|v| v != s.ts)),
            ("q", q.as_ref().is_some_and(|v| *v != s.q)),
            ("r", r.as_ref().is_some_and(|v| *v != s.r)),
            ("u_bounds", u_bounds.as_ref().is_some_and(|v| *v != s.u_bounds)),
            ("y_bounds", y_bounds.as_ref().is_some_and(|v| *v != s.y_bounds)),
        ];
        match differs.iter().find(|(_, d)| *d) {
            Some((key, _)) => Err(BenchError::Core(dpc_core::Error::DivergentTuning(format!(
                "{section}.{key} differs from shared.{key}"
            )))),
            None => Ok(()),
        }
    }

    pub fn pasteurizer_params(&self) -> PasteurizerParams {
        let c = &self.plant.constants;
        PasteurizerParams {
            p1: c.p1,
            p2: c.p2,
            p3: c.p3,
            p4: c.p4,
            p5: c.p5,
            p6: c.p6,
            p7: c.p7,
            c2: c.c2,
            c3: c.c3,
            v: c.v,
            t_amb: c.t_amb,
            t_in: c.t_in,
            ts: self.shared.ts,
            substeps: c.substeps,
        }
    }

    /// The single tuning instance both controllers share.
    pub fn shared_tuning(&self) -> Result<Arc<SharedTuning>> {
        let s = &self.shared;
        Ok(SharedTuning::new(
            s.horizon,
            DMatrix::from_diagonal(&DVector::from_column_slice(&s.q)),
            DMatrix::from_diagonal(&DVector::from_column_slice(&s.r)),
            bounds_vec(&s.u_bounds),
            bounds_vec(&s.y_bounds),
            s.ts,
        )?)
    }

    pub fn deepc_mode(&self) -> Result<DeepcMode> {
        DeepcMode::parse(&self.deepc.layout).ok_or_else(|| config_err(format!("unknown deepc.layout {:?}", self.deepc.layout)))
    }

    pub fn deepc_config(&self) -> Result<DeepcConfig> {
        let mut cfg = DeepcConfig::new(self.shared_tuning()?, self.deepc.t_ini, self.deepc.lambda_g, self.deepc.lambda_sigma);
        cfg.mode = self.deepc_mode()?;
        cfg.enforce_continuity = self.deepc.enforce_continuity;
        Ok(cfg)
    }

    pub fn kmpc_mode(&self) -> Result<KmpcMode> {
        match self.kmpc.layout.as_str() {
            "full" => Ok(KmpcMode::Full),
            "condensed" => Ok(KmpcMode::Condensed),
            other => Err(config_err(format!("unknown kmpc.layout {other:?}"))),
        }
    }

    pub fn kmpc_lift(&self) -> Result<Lift> {
        let lift = match (self.kmpc.output_delays, self.kmpc.input_delays) {
            (Some(p), Some(q)) => Lift::DelayEmbedding { output_delays: p, input_delays: q },
            (None, None) => Lift::delay_embedding_for(self.kmpc.n_z, self.n_y(), self.n_u())?,
            _ => return Err(config_err("kmpc.output_delays and kmpc.input_delays must be given together")),
        };
        if lift.dimension(self.n_y(), self.n_u()) != Some(self.kmpc.n_z) {
            return Err(config_err("kmpc delays do not produce n_z lifted states"));
        }
        Ok(lift)
    }

    pub fn kalman_settings(&self) -> KalmanSettings {
        KalmanSettings { q_z: self.kmpc.q_z, q_d: self.kmpc.q_d, r: self.kmpc.r_kf, p0: self.kmpc.p0 }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            abs_tol: self.run.abs_tol,
            rel_tol: self.run.rel_tol,
            max_iterations: self.run.max_iterations,
            ..SolverOptions::default()
        }
    }

    pub fn initial_input(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.run.initial_input)
    }

    /// Digest of plant parameters, shared tuning, reference and seed.
    pub fn scenario_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |tag: &str, values: &[f64]| {
            h.update(tag.as_bytes());
            for v in values {
                h.update(v.to_le_bytes());
            }
        };
        for (name, value) in self.pasteurizer_params().entries() {
            feed(name, &[value]);
        }
        feed("noise", &self.plant.noise_std);
        let s = &self.shared;
        feed("horizon", &[s.horizon as f64]);
        feed("ts", &[s.ts]);
        feed("q", &s.q);
        feed("r", &s.r);
        feed("u_bounds", &s.u_bounds.concat());
        feed("y_bounds", &s.y_bounds.concat());
        let r = &self.reference;
        feed("channel", &[r.channel as f64]);
        feed("times", &r.times.iter().map(|&t| t as f64).collect::<Vec<_>>());
        feed("levels", &r.levels);
        feed("t_sim", &[self.run.t_sim as f64]);
        feed("initial_input", &self.run.initial_input);
        h.update(b"seed");
        h.update(self.run.seed.to_le_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
