//! Experiment configuration and the scenario pipeline: inputs, dispatch,
//! validation and reporting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispatch::{
    build_step_maps, run_rho, ConstraintSet, DispatchSettings, GridLimits, ObjectiveTerms, RhoEvent, RhoInputs,
    TariffMode, DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::evaluate::{
    stakeholder_metrics, transformer_trace, validate, ScenarioReport, Summary, Validation, ValidationOptions,
    DEFAULT_OVERLOAD_ALLOWANCE,
};
use crate::fixtures;
use crate::fleet::{
    generate_sessions, load_sessions, place_points, uncontrolled_schedule, validate_sessions, with_v2g,
    ChargeSchedule, ChargingPoint, EvSession, SessionProfile,
};
use crate::grid::{load_network, Network};
use crate::powerflow::{
    base_injections, solve_sweep, CorrectionFactor, Injections, LinearGridMap, CALIBRATION_MIN_LOADING,
    DEFAULT_MAX_ITER, DEFAULT_TOL_PU,
};
use crate::tariff::{load_prices, synthetic_day_ahead, StackedTariff, TariffConfig};

pub const BASELINE: &str = "S0";
pub const DEFAULT_LABELS: [&str; 5] = ["S0", "S1", "S2", "S3", "S4"];

/// How a scenario dispatches its sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub label: String,
    /// `false` charges at full power on arrival and ignores the fields below.
    pub controlled: bool,
    pub tariff_mode: TariffMode,
    pub v2g_share: f64,
    pub constraint_set: ConstraintSet,
    pub objective_components: Vec<String>,
    pub w_loss: f64,
}

impl ScenarioConfig {
    /// The five reference scenarios.
    pub fn reference(label: &str) -> Option<Self> {
        let sc = |tariff_mode, v2g_share, constraint_set, objective: &[&str]| ScenarioConfig {
            label: label.to_string(),
            controlled: true,
            tariff_mode,
            v2g_share,
            constraint_set,
            objective_components: objective.iter().map(|s| s.to_string()).collect(),
            w_loss: 1.0,
        };
        use ConstraintSet::*;
        use TariffMode::*;
        Some(match label {
            "S0" => ScenarioConfig {
                controlled: false,
                ..sc(DayAhead, 0.8, None, &[])
            },
            "S1" => sc(DayAhead, 0.8, Transformer, &["I", "IV"]),
            "S2" => sc(Stacked, 0.8, Transformer, &["I", "II", "IV"]),
            "S3" => sc(Stacked, 0.0, Transformer, &["I", "II", "IV"]),
            "S4" => sc(Stacked, 0.8, TransformerPowerFlow, &["I", "II", "III", "IV"]),
            _ => return Option::None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.v2g_share) {
            return Err(Error::Config(format!("{}: v2g_share {} outside [0, 1]", self.label, self.v2g_share)));
        }
        if !(self.w_loss >= 0.0) {
            return Err(Error::Config(format!("{}: w_loss must be non-negative", self.label)));
        }
        if self.label.is_empty() || !self.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::Config(format!("scenario label {:?} must be alphanumeric", self.label)));
        }
        let terms = self.objective()?;
        if self.controlled {
            if terms.network && self.tariff_mode != TariffMode::Stacked {
                return Err(Error::Config(format!(
                    "{}: objective II needs the stacked tariff",
                    self.label
                )));
            }
            if terms.losses && self.constraint_set != ConstraintSet::TransformerPowerFlow {
                return Err(Error::Config(format!(
                    "{}: objective III needs the power-flow constraint set",
                    self.label
                )));
            }
            if !terms.soc {
                return Err(Error::Config(format!("{}: objective IV is required", self.label)));
            }
        }
        Ok(())
    }

    pub fn objective(&self) -> Result<ObjectiveTerms> {
        ObjectiveTerms::from_labels(&self.objective_components)
    }
}

/// Per-scenario overrides in the config file; unset fields keep the
/// reference values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverride {
    pub controlled: Option<bool>,
    pub tariff_mode: Option<TariffMode>,
    pub v2g_share: Option<f64>,
    pub constraint_set: Option<ConstraintSet>,
    pub objective_components: Option<Vec<String>>,
    pub w_loss: Option<f64>,
}

impl ScenarioOverride {
    fn apply(&self, label: &str, base: Option<ScenarioConfig>) -> Result<ScenarioConfig> {
        let missing = |field: &str| Error::Config(format!("custom scenario {label} must set {field}"));
        let sc = ScenarioConfig {
            label: label.to_string(),
            controlled: self
                .controlled
                .or(base.as_ref().map(|b| b.controlled))
                .unwrap_or(true),
            tariff_mode: self
                .tariff_mode
                .or(base.as_ref().map(|b| b.tariff_mode))
                .ok_or_else(|| missing("tariff_mode"))?,
            v2g_share: self
                .v2g_share
                .or(base.as_ref().map(|b| b.v2g_share))
                .ok_or_else(|| missing("v2g_share"))?,
            constraint_set: self
                .constraint_set
                .or(base.as_ref().map(|b| b.constraint_set))
                .ok_or_else(|| missing("constraint_set"))?,
            objective_components: self
                .objective_components
                .clone()
                .or(base.as_ref().map(|b| b.objective_components.clone()))
                .ok_or_else(|| missing("objective_components"))?,
            w_loss: self.w_loss.or(base.as_ref().map(|b| b.w_loss)).unwrap_or(1.0),
        };
        sc.validate()?;
        Ok(sc)
    }
}

/// Lines and buses that receive linearized power-flow rows, by bus id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederSubset {
    pub lines: Vec<(u32, u32)>,
    pub buses: Vec<u32>,
}

impl FeederSubset {
    pub fn bundled() -> Self {
        FeederSubset {
            lines: fixtures::FEEDER_A_LINES.to_vec(),
            buses: fixtures::FEEDER_A_BUSES.to_vec(),
        }
    }

    /// Line and bus indices in `net`.
    pub fn resolve(&self, net: &Network) -> Result<(Vec<usize>, Vec<usize>)> {
        let lines = self
            .lines
            .iter()
            .map(|&(a, b)| {
                net.line_index(a, b)
                    .ok_or_else(|| Error::Config(format!("modelled feeder line {a}-{b} not in network")))
            })
            .collect::<Result<_>>()?;
        let buses = self
            .buses
            .iter()
            .map(|&b| {
                net.bus_index(b)
                    .ok_or_else(|| Error::Config(format!("modelled feeder bus {b} not in network")))
            })
            .collect::<Result<_>>()?;
        Ok((lines, buses))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Number of randomized operating points.
    pub samples: usize,
    /// Range of the multiplier applied to the forecast base load.
    pub load_scale: (f64, f64),
    /// Probability that a charging point draws full power in a sample.
    pub ev_probability: f64,
    /// Use this factor instead of calibrating.
    pub kappa: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            samples: 48,
            load_scale: (0.8, 1.2),
            ev_probability: 0.5,
            kappa: None,
        }
    }
}

/// One experiment: shared inputs plus the scenario definitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Simulated days; used by the bundled network and generated inputs.
    pub days: usize,
    /// Network JSON; the bundled 13-bus feeder when unset.
    pub network: Option<PathBuf>,
    /// Day-ahead price CSV; a synthetic winter profile when unset.
    pub prices: Option<PathBuf>,
    /// Session CSV; generated from `profile` when unset.
    pub sessions: Option<PathBuf>,
    /// Explicit charging points. When unset, `point_count` points are placed
    /// at random, or the bundled twelve demo points are used on the bundled
    /// network.
    pub points: Option<Vec<ChargingPoint>>,
    pub point_count: Option<usize>,
    pub point_power_kw: f64,
    pub profile: SessionProfile,
    pub tariff: TariffConfig,
    pub window: usize,
    pub overload_allowance: f64,
    pub modelled_feeder: Option<FeederSubset>,
    pub calibration: CalibrationConfig,
    pub scenarios: BTreeMap<String, ScenarioOverride>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            days: 2,
            network: None,
            prices: None,
            sessions: None,
            points: None,
            point_count: None,
            point_power_kw: 11.0,
            profile: SessionProfile::default(),
            tariff: TariffConfig::default(),
            window: DEFAULT_WINDOW,
            overload_allowance: DEFAULT_OVERLOAD_ALLOWANCE,
            modelled_feeder: None,
            calibration: CalibrationConfig::default(),
            scenarios: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML config. Relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.network, &mut cfg.prices, &mut cfg.sessions].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if cfg.days == 0 {
            return Err(Error::Config("days must be at least 1".into()));
        }
        if cfg.window == 0 {
            return Err(Error::Config("window must be at least 1 step".into()));
        }
        cfg.tariff.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Scenario definition for `label`: reference values with overrides.
    pub fn scenario(&self, label: &str) -> Result<ScenarioConfig> {
        let base = ScenarioConfig::reference(label);
        match self.scenarios.get(label) {
            Some(o) => o.apply(label, base),
            None => base.ok_or_else(|| Error::Config(format!("unknown scenario {label}"))),
        }
    }
}

/// Inputs shared by all scenarios of an experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub net: Network,
    pub points: Vec<ChargingPoint>,
    pub prices: Vec<f64>,
    pub tariff: StackedTariff,
    /// Sessions from a file; `None` means generated per scenario.
    file_sessions: Option<Vec<EvSession>>,
    /// Modelled feeder as (line, bus) indices.
    pub feeder: Option<(Vec<usize>, Vec<usize>)>,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        let bundled_net = config.network.is_none();
        let net = match &config.network {
            Some(p) => load_network(p)?,
            None => fixtures::feeder13(config.days),
        };
        let prices = match &config.prices {
            Some(p) => load_prices(p)?,
            None => synthetic_day_ahead(config.days, net.step_hours()),
        }
        .fit_horizon(net.horizon(), net.step_hours())?
        .prices;
        let points = match (&config.points, config.point_count) {
            (Some(p), _) => p.clone(),
            (None, Some(n)) => place_points(&net, n, config.seed.wrapping_add(1), config.point_power_kw * 1000.0)?,
            (None, None) if bundled_net => fixtures::demo_points(),
            (None, None) => {
                return Err(Error::Config(
                    "set points or point_count when using a custom network".into(),
                ))
            }
        };
        let file_sessions = match &config.sessions {
            Some(p) => {
                let s = load_sessions(p)?;
                validate_sessions(&s, &points)?;
                Some(s)
            }
            None => None,
        };
        let tariff = StackedTariff::new(&net, &config.tariff, &net.base_load_series())?;
        let feeder = match (&config.modelled_feeder, bundled_net) {
            (Some(f), _) => Some(f.resolve(&net)?),
            (None, true) => Some(FeederSubset::bundled().resolve(&net)?),
            (None, false) => None,
        };
        Ok(Experiment {
            config,
            net,
            points,
            prices,
            tariff,
            file_sessions,
            feeder,
        })
    }

    /// Session set for a given V2G share. Generated sets share one random
    /// stream, so scenarios differ only in the V2G flags.
    pub fn sessions(&self, v2g_share: f64) -> Result<Vec<EvSession>> {
        match &self.file_sessions {
            Some(s) if v2g_share == 0.0 => Ok(with_v2g(s, false)),
            Some(s) => Ok(s.clone()),
            None => {
                let profile = SessionProfile {
                    v2g_share,
                    ..self.config.profile.clone()
                };
                generate_sessions(&self.net, &self.points, self.config.days, self.config.seed, &profile)
            }
        }
    }

    /// Randomized operating points around the forecast, each paired with
    /// the step whose surrogate it should be compared against.
    pub fn calibration_set(&self) -> Result<Vec<(usize, Injections)>> {
        let cal = &self.config.calibration;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(2));
        let phases = self.net.phases() as f64;
        let mut out = Vec::with_capacity(cal.samples);
        for _ in 0..cal.samples {
            let t = rng.gen_range(0..self.net.horizon());
            let scale = rng.gen_range(cal.load_scale.0..=cal.load_scale.1);
            let mut inj = base_injections(&self.net, t)?;
            for row in inj.iter_mut() {
                for s in row.iter_mut() {
                    *s *= scale;
                }
            }
            for p in &self.points {
                let draw = rng.gen::<f64>() < cal.ev_probability;
                if draw {
                    let b = self
                        .net
                        .bus_index(p.bus)
                        .ok_or_else(|| Error::Config(format!("charging point {} on unknown bus {}", p.id, p.bus)))?;
                    for s in inj[b].iter_mut() {
                        s.re += p.rated_power_w / phases;
                    }
                }
            }
            out.push((t, inj));
        }
        Ok(out)
    }

    /// Correction factor for the modelled feeder's current rows.
    pub fn calibrate(&self, maps: &[LinearGridMap]) -> Result<CorrectionFactor> {
        if let Some(k) = self.config.calibration.kappa {
            return CorrectionFactor::new(k);
        }
        let (lines, _) = self
            .feeder
            .as_ref()
            .ok_or_else(|| Error::Config("calibration needs a modelled feeder".into()))?;
        let set = self.calibration_set()?;
        if set.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        let mut pairs = Vec::new();
        for (t, inj) in &set {
            let sweep = solve_sweep(&self.net, inj, DEFAULT_TOL_PU, DEFAULT_MAX_ITER)?;
            let linear = maps[*t].current_magnitudes(inj);
            for &l in lines {
                let amp = self.net.lines()[l].ampacity_a;
                for ph in 0..self.net.phases() {
                    let true_i = sweep.line_currents[l][ph].norm();
                    if true_i >= CALIBRATION_MIN_LOADING * amp {
                        pairs.push((linear[l][ph], true_i));
                    }
                }
            }
        }
        if pairs.is_empty() {
            return Ok(CorrectionFactor::ONE);
        }
        CorrectionFactor::from_estimates(pairs)
    }

    /// Grid limits for power-flow constrained scenarios.
    pub fn grid_limits(&self) -> Result<GridLimits> {
        let (lines, buses) = self
            .feeder
            .clone()
            .ok_or_else(|| Error::Config("power-flow constraints need a modelled feeder".into()))?;
        let maps = build_step_maps(&self.net)?;
        let kappa = self.calibrate(&maps)?;
        info!("correction factor {:.4}", kappa.kappa());
        Ok(GridLimits::from_maps(&self.net, maps, lines, buses, kappa))
    }

    pub fn settings(&self, sc: &ScenarioConfig) -> Result<DispatchSettings> {
        Ok(DispatchSettings {
            tariff: sc.tariff_mode,
            constraints: sc.constraint_set,
            objective: sc.objective()?,
            w_loss: sc.w_loss,
            window: self.config.window,
            ..DispatchSettings::default()
        })
    }
}

/// Full outcome of one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub sessions: Vec<EvSession>,
    pub schedule: ChargeSchedule,
    pub validation: Validation,
    pub events: Vec<RhoEvent>,
    pub report: ScenarioReport,
}

/// Dispatch, validate and score one scenario.
pub fn run_scenario(exp: &Experiment, sc: &ScenarioConfig, grid: Option<&GridLimits>) -> Result<ScenarioRun> {
    sc.validate()?;
    let net = &exp.net;
    let sessions = exp.sessions(sc.v2g_share)?;
    let (schedule, events) = if sc.controlled {
        let settings = exp.settings(sc)?;
        let tariff = (sc.tariff_mode == TariffMode::Stacked).then_some(&exp.tariff);
        let grid = match sc.constraint_set {
            ConstraintSet::TransformerPowerFlow => Some(grid.ok_or_else(|| {
                Error::Config(format!("{}: power-flow constraints need grid limits", sc.label))
            })?),
            _ => None,
        };
        let outcome = run_rho(
            RhoInputs {
                scenario: &sc.label,
                net,
                points: &exp.points,
                sessions: &sessions,
                prices: &exp.prices,
                tariff,
                grid,
            },
            &settings,
        )?;
        info!("{}: {} window LPs, {} fallbacks", sc.label, outcome.windows, outcome.events.len());
        (outcome.schedule, outcome.events)
    } else {
        (
            uncontrolled_schedule(&sessions, exp.points.len(), net.horizon(), net.step_hours()),
            Vec::new(),
        )
    };

    let opts = ValidationOptions {
        overload_allowance: exp.config.overload_allowance,
        ..ValidationOptions::default()
    };
    let validation = validate(net, &exp.points, &schedule, &opts).map_err(|e| {
        let step = match &e {
            Error::StepNonConvergence { step, .. } => *step,
            _ => 0,
        };
        Error::Scenario {
            scenario: sc.label.clone(),
            step,
            source: Box::new(e),
        }
    })?;
    let metrics = stakeholder_metrics(&sessions, &schedule, &validation, &exp.prices, &exp.tariff)?;
    let report = ScenarioReport {
        label: sc.label.clone(),
        violations: validation.counts,
        modelled_feeder_congestion: exp
            .feeder
            .as_ref()
            .map_or(0, |(lines, _)| validation.congestion_on(lines)),
        metrics,
        trace_w: transformer_trace(net, &schedule),
        events: events.iter().map(|e| format!("{e:?}")).collect(),
    };
    Ok(ScenarioRun {
        config: sc.clone(),
        sessions,
        schedule,
        validation,
        events,
        report,
    })
}

/// Run the given scenarios with up to `workers` in parallel. Results come
/// back in the order of `labels` regardless of scheduling.
pub fn run_scenarios(exp: &Experiment, labels: &[String], workers: usize) -> Result<Vec<ScenarioRun>> {
    let configs = labels.iter().map(|l| exp.config.scenario(l)).collect::<Result<Vec<_>>>()?;
    let grid = if configs
        .iter()
        .any(|c| c.controlled && c.constraint_set == ConstraintSet::TransformerPowerFlow)
    {
        Some(exp.grid_limits()?)
    } else {
        None
    };
    let workers = workers.clamp(1, configs.len().max(1));
    if workers == 1 {
        return configs.iter().map(|sc| run_scenario(exp, sc, grid.as_ref())).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<ScenarioRun>>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let run = run_scenario(exp, &configs[i], grid.as_ref());
                *results[i].lock().expect("result slot") = Some(run);
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.into_inner().expect("result slot").expect("every scenario ran"))
        .collect()
}

/// Summary across runs, relative to S0 when present.
pub fn summarize(runs: &[ScenarioRun]) -> Summary {
    Summary::new(runs.iter().map(|r| r.report.clone()).collect(), BASELINE)
}
