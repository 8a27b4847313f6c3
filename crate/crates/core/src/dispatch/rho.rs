use log::{debug, warn};

use crate::error::{Error, Result};
use crate::fleet::{soc_step, ChargeSchedule, ChargingPoint, EvSession};
use crate::grid::Network;
use crate::tariff::StackedTariff;
use crate::units::power_for_soc_delta;

use super::window::{assemble, solve, DispatchWindow, WindowSession};
use super::{point_buses, ConstraintSet, DispatchSettings, GridLimits};

/// Fallback taken when a window had no feasible solution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RhoEvent {
    /// Line and voltage rows were dropped at `step`; `class` is the row
    /// family reported as violated.
    DroppedPowerFlow { step: usize, class: String },
    /// Departure and interim SOC targets were dropped at `step`.
    RelaxedSocFloor { step: usize },
}

#[derive(Debug, Clone)]
pub struct RhoOutcome {
    pub schedule: ChargeSchedule,
    pub events: Vec<RhoEvent>,
    /// Number of window LPs solved, retries included.
    pub windows: usize,
}

/// Inputs shared by every window of a run.
#[derive(Debug, Clone, Copy)]
pub struct RhoInputs<'a> {
    /// Label used in error reports.
    pub scenario: &'a str,
    pub net: &'a Network,
    pub points: &'a [ChargingPoint],
    pub sessions: &'a [EvSession],
    /// Day-ahead prices per step of the horizon.
    pub prices: &'a [f64],
    pub tariff: Option<&'a StackedTariff>,
    pub grid: Option<&'a GridLimits>,
}

/// Receding-horizon dispatch over the whole horizon.
///
/// At every step with at least one connected session a window of
/// `settings.window` steps is solved and only its first step is applied.
/// Windows that turn out infeasible are retried without line and voltage
/// rows, then without SOC targets; the transformer limit is never relaxed.
pub fn run_rho(inputs: RhoInputs<'_>, settings: &DispatchSettings) -> Result<RhoOutcome> {
    let RhoInputs {
        scenario,
        net,
        points,
        sessions,
        prices,
        tariff,
        grid,
    } = inputs;
    let horizon = net.horizon();
    let dt = net.step_hours();
    let wrap = |step: usize, e: Error| Error::Scenario {
        scenario: scenario.to_string(),
        step,
        source: Box::new(e),
    };
    let buses = point_buses(net, points).map_err(|e| wrap(0, e))?;
    for s in sessions {
        if s.departure > horizon {
            return Err(wrap(
                s.arrival,
                Error::InvalidSession(format!("session departs at {} past the horizon {horizon}", s.departure)),
            ));
        }
        s.validate(points).map_err(|e| wrap(s.arrival, e))?;
    }

    let mut soc: Vec<f64> = sessions.iter().map(|s| s.soc_init).collect();
    let mut traces: Vec<Vec<f64>> = sessions.iter().map(|s| Vec::with_capacity(s.duration())).collect();
    let mut events = Vec::new();
    let mut windows = 0;

    for t in 0..horizon {
        let active: Vec<WindowSession> = sessions
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_active(t))
            .map(|(i, s)| WindowSession {
                index: i,
                session: s.clone(),
                soc_now: soc[i],
                bus: buses[s.point],
            })
            .collect();
        if active.is_empty() {
            continue;
        }
        let window = DispatchWindow::new(net, prices, t, settings.window, active).map_err(|e| wrap(t, e))?;

        let mut stage = settings.clone();
        let mut relaxed = false;
        let solution = loop {
            let wlp = assemble(&window, tariff, grid, &stage, relaxed).map_err(|e| wrap(t, e))?;
            windows += 1;
            match solve(&wlp, stage.tol, stage.backend) {
                Ok(sol) => break sol,
                Err(Error::Infeasible { class }) if stage.constraints == ConstraintSet::TransformerPowerFlow => {
                    warn!("{scenario}: step {t} infeasible ({class}), dropping line and voltage rows");
                    events.push(RhoEvent::DroppedPowerFlow { step: t, class });
                    stage.constraints = ConstraintSet::Transformer;
                }
                Err(Error::Infeasible { class }) if !relaxed => {
                    warn!("{scenario}: step {t} infeasible ({class}), relaxing SOC targets");
                    events.push(RhoEvent::RelaxedSocFloor { step: t });
                    relaxed = true;
                }
                Err(e) => return Err(wrap(t, e)),
            }
        };
        debug!("{scenario}: step {t} objective {:.6}", solution.objective);

        for (w, ws) in window.sessions.iter().enumerate() {
            let s = &ws.session;
            let floor = if relaxed { 0.0 } else { s.soc_min.min(ws.soc_now) };
            let mut p = solution.powers_w[w][0].clamp(s.min_power_w(), s.rated_power_w);
            let next = soc_step(ws.soc_now, p, dt, s.capacity_kwh);
            // Solver tolerance can push the SOC a hair outside its bounds.
            if next > s.soc_max {
                p = power_for_soc_delta(s.soc_max - ws.soc_now, dt, s.capacity_kwh);
            } else if next < floor {
                p = power_for_soc_delta(floor - ws.soc_now, dt, s.capacity_kwh);
            }
            soc[ws.index] = soc_step(ws.soc_now, p, dt, s.capacity_kwh);
            traces[ws.index].push(p);
        }
    }

    let schedule = ChargeSchedule::from_session_powers(sessions, points.len(), horizon, dt, &traces);
    Ok(RhoOutcome {
        schedule,
        events,
        windows,
    })
}
