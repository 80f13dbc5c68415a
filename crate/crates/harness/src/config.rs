//! Experiment configuration: a sectioned TOML file, see `docs/CONFIG.md`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tpc_core::controller::{
    InputBox, ReferenceSchedule, RegularizationConfig, RegularizationKind, TpcConfig,
};
use tpc_core::deepc::DeepcSettings;
use tpc_core::hankel::{ExcitationSpec, SignalLayout};
use tpc_core::sim::{GridMode, GridSpec, NonlinearitySpec, PlantModel};
use tpc_core::solver::SolverSettings;

use crate::error::{HarnessError, HarnessResult};

pub const PRESETS: &[(&str, &str)] = &[
    ("fig3", include_str!("../presets/fig3.toml")),
    ("fig5", include_str!("../presets/fig5.toml")),
    ("fig6", include_str!("../presets/fig6.toml")),
    ("table1", include_str!("../presets/table1.toml")),
    ("bias", include_str!("../presets/bias.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub plant: PlantSection,
    pub grid: GridSection,
    pub nonlinearity: NonlinearitySection,
    pub controller: ControllerSection,
    pub training: TrainingSection,
    pub scenario: ScenarioSection,
    pub output: OutputSection,
    pub bench: BenchSection,
    pub bias: BiasSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            seed: 0,
            plant: PlantSection::default(),
            grid: GridSection::default(),
            nonlinearity: NonlinearitySection::default(),
            controller: ControllerSection::default(),
            training: TrainingSection::default(),
            scenario: ScenarioSection::default(),
            output: OutputSection::default(),
            bench: BenchSection::default(),
            bias: BiasSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    /// Current-loop time constant [s].
    pub theta: f64,
    pub substep_dt: f64,
    pub substeps: usize,
    /// Measurement noise on `[P, Q, i_d, i_q]`.
    pub noise_std: [f64; 4],
}

impl Default for PlantSection {
    fn default() -> Self {
        PlantSection { theta: 2e-3, substep_dt: 2e-4, substeps: 50, noise_std: [1e-3; 4] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    InfiniteBus,
    Thevenin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub mode: GridKind,
    pub v_d: f64,
    pub v_q: f64,
    pub frequency: f64,
    pub r: f64,
    pub x: f64,
    pub drift_amplitude: f64,
    pub drift_period: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        GridSection {
            mode: GridKind::InfiniteBus,
            v_d: g.v_d,
            v_q: g.v_q,
            frequency: g.frequency,
            r: g.r,
            x: g.x,
            drift_amplitude: g.drift_amplitude,
            drift_period: g.drift_period,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearitySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current_saturation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deadzone: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Tpc,
    Deepc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationName {
    #[default]
    None,
    InputQuadratic,
    LeadinCoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    pub rho: usize,
    pub tau: usize,
    pub ly_weights: Vec<f64>,
    pub lu_weights: Vec<f64>,
    pub regularization: RegularizationName,
    pub reg_weight: f64,
    /// Row-major `mτ × (q+m)ρ` matrix for `leadin_coupled`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current_limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_upper: Option<Vec<f64>>,
    pub safe_input: Vec<f64>,
    /// DeePC weight on `½γ‖g‖²`.
    pub gamma: f64,
    pub solver: SolverSection,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let d = TpcConfig::inverter_default();
        ControllerSection {
            kind: ControllerKind::Tpc,
            rho: d.rho,
            tau: d.tau,
            ly_weights: d.ly_weights,
            lu_weights: d.lu_weights,
            regularization: RegularizationName::None,
            reg_weight: 0.0,
            coupling: None,
            current_limit: None,
            input_lower: None,
            input_upper: None,
            safe_input: d.safe_input,
            gamma: DeepcSettings::inverter_default().gamma,
            solver: SolverSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub max_dim: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverSettings::default();
        SolverSection { tol: s.tol, gap_tol: s.gap_tol, max_iter: s.max_iter, max_dim: s.max_dim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub amplitude: f64,
    pub length: usize,
    pub closed_loop: bool,
    /// Gain of the proportional power loop used for closed-loop collection
    /// when no predictor artifact is supplied.
    pub feedback_gain: f64,
    /// `[t, P_r, Q_r]` rows tracked during closed-loop collection.
    pub schedule: Vec<[f64; 3]>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            amplitude: 0.1,
            length: 500,
            closed_loop: false,
            feedback_gain: 0.5,
            schedule: vec![[0.0, 0.2, 0.1]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantSection {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current_limit: Option<f64>,
}

impl Default for VariantSection {
    fn default() -> Self {
        VariantSection { name: "run".into(), current_limit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub breakpoints: Vec<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_ref: Option<Vec<f64>>,
    pub duration: f64,
    /// Band used for the settling-time metric [p.u.].
    pub settle_band: f64,
    /// Runs repeated with different current limits; empty means one run
    /// with the controller's own limit.
    pub variants: Vec<VariantSection>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            breakpoints: vec![[0.0, 0.0, 0.0], [0.1, 0.3, 0.0]],
            u_ref: None,
            duration: 1.0,
            settle_band: 0.02,
            variants: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into(), plots: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub n_list: Vec<usize>,
    /// Closed-loop ticks per controller and round.
    pub ticks: usize,
    /// DeePC rounds, interleaved over all N.
    pub rounds: usize,
    /// TPC rounds; TPC ticks are cheap, so more rounds steady the median.
    pub tpc_rounds: usize,
    pub deepc: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { n_list: vec![100, 500], ticks: 60, rounds: 3, tpc_rounds: 30, deepc: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSection {
    pub seeds: usize,
    pub n_list: Vec<usize>,
    pub feedback_gain: f64,
    pub noise_std: f64,
    pub amplitude: f64,
    pub schedule: Vec<[f64; 3]>,
    pub validation_length: usize,
    pub validation_amplitude: f64,
}

impl Default for BiasSection {
    fn default() -> Self {
        BiasSection {
            seeds: 20,
            n_list: vec![500, 1000, 2000, 4000, 8000],
            feedback_gain: 0.5,
            noise_std: 0.1,
            amplitude: 0.1,
            schedule: vec![[0.0, 0.2, 0.1]],
            validation_length: 300,
            validation_amplitude: 0.3,
        }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> HarnessResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> HarnessResult<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| config_err(format!("unknown preset '{name}'")))?;
        Self::from_toml(text)
    }

    /// A file path, or a preset name when no such file exists.
    pub fn load(spec: &str) -> HarnessResult<Self> {
        let path = Path::new(spec);
        if path.exists() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
            return Self::from_toml(&text);
        }
        if PRESETS.iter().any(|(n, _)| *n == spec) {
            return Self::preset(spec);
        }
        Err(config_err(format!("'{spec}' is neither a config file nor a preset")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn layout(&self) -> SignalLayout {
        SignalLayout::inverter()
    }

    pub fn validate(&self) -> HarnessResult<()> {
        let c = &self.controller;
        let layout = self.layout();
        let (q, m) = (layout.q(), layout.m());
        if c.rho == 0 || c.tau == 0 {
            return Err(config_err("controller.rho and controller.tau must be positive"));
        }
        if c.ly_weights.len() != q {
            return Err(config_err(format!("controller.ly_weights needs {q} entries")));
        }
        if c.lu_weights.len() != m || c.safe_input.len() != m {
            return Err(config_err(format!("controller.lu_weights and safe_input need {m} entries")));
        }
        for (name, v) in [("input_lower", &c.input_lower), ("input_upper", &c.input_upper)] {
            if let Some(v) = v {
                if v.len() != m {
                    return Err(config_err(format!("controller.{name} needs {m} entries")));
                }
            }
        }
        if c.input_lower.is_some() != c.input_upper.is_some() {
            return Err(config_err("controller.input_lower and input_upper go together"));
        }
        if c.regularization == RegularizationName::LeadinCoupled {
            let k = c.coupling.as_ref().ok_or_else(|| config_err("leadin_coupled needs controller.coupling"))?;
            let (rows, cols) = (m * c.tau, (q + m) * c.rho);
            if k.len() != rows || k.iter().any(|r| r.len() != cols) {
                return Err(config_err(format!("controller.coupling must be {rows}×{cols}")));
            }
        }
        let rows = (q + m) * (c.rho + c.tau);
        let needed = rows + c.rho + c.tau - 1;
        if self.training.length < needed {
            return Err(config_err(format!(
                "training.length {} gives fewer Hankel columns than its {rows} rows; need at least {needed}",
                self.training.length
            )));
        }
        if !(self.training.amplitude >= 0.0) {
            return Err(config_err("training.amplitude must be nonnegative"));
        }
        if !(self.scenario.duration >= 0.0) || !(self.scenario.settle_band > 0.0) {
            return Err(config_err("scenario.duration must be nonnegative and settle_band positive"));
        }
        if self.bench.n_list.is_empty() || self.bench.n_list.iter().any(|&n| n < rows) {
            return Err(config_err(format!("bench.n_list must be nonempty with every N ≥ {rows}")));
        }
        if self.bench.rounds == 0 || self.bench.tpc_rounds == 0 || self.bench.ticks <= c.rho {
            return Err(config_err("bench rounds must be positive and bench.ticks exceed the lead-in"));
        }
        if self.bias.seeds < 5 {
            return Err(config_err("bias.seeds must be at least 5"));
        }
        if self.bias.n_list.is_empty() || self.bias.n_list.iter().any(|&n| n < rows) {
            return Err(config_err(format!("bias.n_list must be nonempty with every N ≥ {rows}")));
        }
        if self.bias.validation_length < c.rho + c.tau + 1 {
            return Err(config_err("bias.validation_length is shorter than one prediction window"));
        }
        self.schedule()?;
        self.training_schedule()?;
        self.bias_schedule()?;
        self.plant()?;
        self.tpc_config(None).validate(&layout).map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        let g = &self.grid;
        GridSpec {
            mode: match g.mode {
                GridKind::InfiniteBus => GridMode::InfiniteBus,
                GridKind::Thevenin => GridMode::Thevenin,
            },
            v_d: g.v_d,
            v_q: g.v_q,
            frequency: g.frequency,
            r: g.r,
            x: g.x,
            drift_amplitude: g.drift_amplitude,
            drift_period: g.drift_period,
        }
    }

    pub fn plant(&self) -> HarnessResult<PlantModel> {
        self.plant_with_noise(self.plant.noise_std)
    }

    pub fn plant_with_noise(&self, noise_std: [f64; 4]) -> HarnessResult<PlantModel> {
        let nonlin = NonlinearitySpec {
            current_saturation: self.nonlinearity.current_saturation,
            deadzone: self.nonlinearity.deadzone,
        };
        PlantModel::first_order_lag(self.plant.theta, self.plant.substep_dt, self.plant.substeps, self.grid(), nonlin, noise_std)
            .map_err(|e| config_err(e.to_string()))
    }

    pub fn tick_dt(&self) -> f64 {
        self.plant.substep_dt * self.plant.substeps as f64
    }

    fn schedule_from(rows: &[[f64; 3]], u_ref: Option<&Vec<f64>>, what: &str) -> HarnessResult<ReferenceSchedule> {
        let mut s = ReferenceSchedule::new(rows.iter().map(|r| (r[0], r[1], r[2])).collect())
            .map_err(|e| config_err(format!("{what}: {e}")))?;
        s.u_ref = u_ref.cloned();
        s.validate().map_err(|e| config_err(format!("{what}: {e}")))?;
        Ok(s)
    }

    pub fn schedule(&self) -> HarnessResult<ReferenceSchedule> {
        Self::schedule_from(&self.scenario.breakpoints, self.scenario.u_ref.as_ref(), "scenario.breakpoints")
    }

    pub fn training_schedule(&self) -> HarnessResult<ReferenceSchedule> {
        Self::schedule_from(&self.training.schedule, None, "training.schedule")
    }

    pub fn bias_schedule(&self) -> HarnessResult<ReferenceSchedule> {
        Self::schedule_from(&self.bias.schedule, None, "bias.schedule")
    }

    pub fn excitation(&self) -> ExcitationSpec {
        ExcitationSpec { amplitude: self.training.amplitude, length: self.training.length, channels: 2 }
    }

    pub fn solver(&self) -> SolverSettings {
        let s = &self.controller.solver;
        SolverSettings { tol: s.tol, gap_tol: s.gap_tol, max_iter: s.max_iter, max_dim: s.max_dim }
    }

    fn input_box(&self) -> Option<InputBox> {
        match (&self.controller.input_lower, &self.controller.input_upper) {
            (Some(l), Some(u)) => Some(InputBox { lower: l.clone(), upper: u.clone() }),
            _ => None,
        }
    }

    /// Controller settings; `current_limit` overrides the configured limit
    /// when given.
    pub fn tpc_config(&self, current_limit: Option<Option<f64>>) -> TpcConfig {
        let c = &self.controller;
        let kind = match c.regularization {
            RegularizationName::None => RegularizationKind::None,
            RegularizationName::InputQuadratic => RegularizationKind::InputQuadratic,
            RegularizationName::LeadinCoupled => RegularizationKind::LeadinCoupled,
        };
        let coupling = c.coupling.as_ref().filter(|k| !k.is_empty()).map(|k| {
            DMatrix::from_fn(k.len(), k[0].len(), |i, j| k[i][j])
        });
        TpcConfig {
            rho: c.rho,
            tau: c.tau,
            ly_weights: c.ly_weights.clone(),
            lu_weights: c.lu_weights.clone(),
            reg: RegularizationConfig { kind, weight: c.reg_weight, coupling },
            input_box: self.input_box(),
            current_limit: current_limit.unwrap_or(c.current_limit),
            safe_input: c.safe_input.clone(),
            solver: self.solver(),
        }
    }

    pub fn deepc_settings(&self, current_limit: Option<Option<f64>>) -> DeepcSettings {
        let c = &self.controller;
        DeepcSettings {
            gamma: c.gamma,
            ly_weights: c.ly_weights.clone(),
            lu_weights: c.lu_weights.clone(),
            input_box: self.input_box(),
            current_limit: current_limit.unwrap_or(c.current_limit),
            safe_input: c.safe_input.clone(),
            solver: self.solver(),
        }
    }

    /// Scenario variants, with a single default when none are listed.
    pub fn variants(&self) -> Vec<VariantSection> {
        if self.scenario.variants.is_empty() {
            vec![VariantSection { name: "run".into(), current_limit: self.controller.current_limit }]
        } else {
            self.scenario.variants.clone()
        }
    }
}
