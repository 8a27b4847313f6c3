//! Receding-horizon EV dispatch.
//!
//! Each window is a linear program over the sessions currently plugged in:
//! per-step charging powers, SOC trajectories and a departure-SOC fraction
//! per session, plus (for the stacked tariff) the power bought in each
//! network band. The controller commits the first step of every window and
//! rolls forward one step at a time.

pub mod lp;
mod rho;
mod window;

use serde::{Deserialize, Serialize};

pub use lp::{Backend, LpProblem, LpSolution, Row, RowClass, SolveStatus, VarKind, DEFAULT_TOL};
pub use rho::{run_rho, RhoEvent, RhoInputs, RhoOutcome};
pub use window::{assemble, solve, DispatchWindow, WindowLayout, WindowLp, WindowSession, WindowSolution};

use crate::error::{Error, Result};
use crate::fleet::ChargingPoint;
use crate::grid::Network;
use crate::powerflow::{base_injections, build_linear_map, CorrectionFactor, LinearGridMap};

/// Default window: 24 h of quarter-hour steps.
pub const DEFAULT_WINDOW: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TariffMode {
    DayAhead,
    Stacked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintSet {
    /// Session rows only (SOC, power limits).
    None,
    /// Plus the no-loss transformer limit.
    Transformer,
    /// Plus linearized line-current and voltage rows on the modelled feeder.
    #[serde(rename = "transformer+pf")]
    TransformerPowerFlow,
}

/// Which objective terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// Day-ahead energy cost.
    pub energy: bool,
    /// Network band cost.
    pub network: bool,
    /// Transformer power (loss proxy).
    pub losses: bool,
    /// Departure-SOC reward.
    pub soc: bool,
}

impl ObjectiveTerms {
    /// Parse a list such as `["I", "II", "IV"]`.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let mut t = ObjectiveTerms {
            energy: false,
            network: false,
            losses: false,
            soc: false,
        };
        for l in labels {
            match l.as_ref() {
                "I" => t.energy = true,
                "II" => t.network = true,
                "III" => t.losses = true,
                "IV" => t.soc = true,
                other => return Err(Error::Config(format!("unknown objective term {other:?}"))),
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSettings {
    pub tariff: TariffMode,
    pub constraints: ConstraintSet,
    pub objective: ObjectiveTerms,
    /// Weight of the transformer-power term, currency per kWh.
    pub w_loss: f64,
    /// Departure-SOC weight; derived from prices and powers when `None`.
    pub big_m: Option<f64>,
    /// Cost ramp per step offset and kWh, to break ties toward earlier steps.
    pub tie_epsilon: f64,
    pub window: usize,
    pub tol: f64,
    pub backend: Backend,
}

impl Default for DispatchSettings {
    fn default() -> Self {
        DispatchSettings {
            tariff: TariffMode::Stacked,
            constraints: ConstraintSet::Transformer,
            objective: ObjectiveTerms {
                energy: true,
                network: true,
                losses: false,
                soc: true,
            },
            w_loss: 1.0,
            big_m: None,
            tie_epsilon: 1e-9,
            window: DEFAULT_WINDOW,
            tol: DEFAULT_TOL,
            backend: Backend::default(),
        }
    }
}

/// Linearized grid limits for the modelled part of the network: one
/// surrogate per step, built around that step's base load.
#[derive(Debug, Clone)]
pub struct GridLimits {
    pub maps: Vec<LinearGridMap>,
    pub kappa: CorrectionFactor,
    /// Line indices with current rows.
    pub lines: Vec<usize>,
    /// Bus indices with voltage rows.
    pub buses: Vec<usize>,
    /// Voltage band in per unit of nominal.
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub ampacity_a: Vec<f64>,
    pub v_nom: Vec<f64>,
    pub phases: usize,
}

pub const VOLTAGE_BAND_PU: (f64, f64) = (0.95, 1.05);

impl GridLimits {
    pub fn build(net: &Network, lines: Vec<usize>, buses: Vec<usize>, kappa: CorrectionFactor) -> Result<Self> {
        let maps = build_step_maps(net)?;
        Ok(Self::from_maps(net, maps, lines, buses, kappa))
    }

    pub fn from_maps(
        net: &Network,
        maps: Vec<LinearGridMap>,
        lines: Vec<usize>,
        buses: Vec<usize>,
        kappa: CorrectionFactor,
    ) -> Self {
        GridLimits {
            maps,
            kappa,
            lines,
            buses,
            v_min_pu: VOLTAGE_BAND_PU.0,
            v_max_pu: VOLTAGE_BAND_PU.1,
            ampacity_a: net.lines().iter().map(|l| l.ampacity_a).collect(),
            v_nom: net.buses().iter().map(|b| b.v_nom).collect(),
            phases: net.phases(),
        }
    }
}

/// One surrogate per horizon step around the base (no-EV) operating point.
pub fn build_step_maps(net: &Network) -> Result<Vec<LinearGridMap>> {
    (0..net.horizon())
        .map(|t| {
            build_linear_map(net, &base_injections(net, t)?).map_err(|e| Error::StepNonConvergence {
                step: t,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Bus index of every charging point.
pub fn point_buses(net: &Network, points: &[ChargingPoint]) -> Result<Vec<usize>> {
    points
        .iter()
        .map(|p| {
            net.bus_index(p.bus)
                .ok_or_else(|| Error::Config(format!("charging point {} on unknown bus {}", p.id, p.bus)))
        })
        .collect()
}
