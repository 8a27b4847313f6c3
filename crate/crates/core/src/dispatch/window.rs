use crate::error::{Error, Result};
use crate::fleet::EvSession;
use crate::grid::Network;
use crate::tariff::{StackedTariff, BANDS};
use crate::units::{PERCENT, W_PER_KW};

use super::lp::{solve_lp, Backend, LpProblem, RowClass, SolveStatus, VarKind};
use super::{ConstraintSet, DispatchSettings, GridLimits, TariffMode};

/// A session as seen by one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSession {
    /// Position in the run's session list.
    pub index: usize,
    pub session: EvSession,
    /// SOC at the start of the window.
    pub soc_now: f64,
    /// Bus index of the session's charging point.
    pub bus: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchWindow {
    pub start: usize,
    pub length: usize,
    pub step_hours: f64,
    pub sessions: Vec<WindowSession>,
    /// Forecast non-EV transformer loading per step, W.
    pub base_load: Vec<f64>,
    /// Day-ahead prices per step, currency per kWh.
    pub prices: Vec<f64>,
    pub rated_w: f64,
}

impl DispatchWindow {
    /// Window of up to `length` steps from `start`, clipped to the horizon.
    pub fn new(
        net: &Network,
        prices: &[f64],
        start: usize,
        length: usize,
        sessions: Vec<WindowSession>,
    ) -> Result<Self> {
        if length == 0 {
            return Err(Error::Config("window length must be at least one step".into()));
        }
        if start >= net.horizon() {
            return Err(Error::StepOutOfRange {
                step: start,
                horizon: net.horizon(),
            });
        }
        if prices.len() != net.horizon() {
            return Err(Error::LengthMismatch {
                what: "day-ahead prices",
                expected: net.horizon(),
                got: prices.len(),
            });
        }
        let end = (start + length).min(net.horizon());
        let base_load = (start..end)
            .map(|t| net.aggregate_base_load(t))
            .collect::<Result<Vec<_>>>()?;
        for ws in &sessions {
            let s = &ws.session;
            if !s.is_active(start) {
                return Err(Error::InvalidSession(format!(
                    "session {} is not connected at window start {start}",
                    ws.index
                )));
            }
            // A relaxed earlier window may leave the SOC below its floor.
            if !(ws.soc_now >= -1e-6 && ws.soc_now <= s.soc_max + 1e-6) {
                return Err(Error::InvalidSession(format!(
                    "session {} SOC {} outside [0, {}]",
                    ws.index, ws.soc_now, s.soc_max
                )));
            }
        }
        Ok(DispatchWindow {
            start,
            length: end - start,
            step_hours: net.step_hours(),
            sessions,
            base_load,
            prices: prices[start..end].to_vec(),
            rated_w: net.transformer().rated_w(),
        })
    }

    /// Steps of session `i` inside the window.
    pub fn steps_of(&self, i: usize) -> usize {
        self.sessions[i].session.departure.min(self.start + self.length) - self.start
    }

    /// True if session `i` departs inside the window.
    pub fn departs_inside(&self, i: usize) -> bool {
        self.sessions[i].session.departure <= self.start + self.length
    }
}

/// Column indices of the window's variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowLayout {
    /// `[session][k]`
    pub power: Vec<Vec<usize>>,
    /// `[session][k - 1]`, SOC after step offset `k`.
    pub soc: Vec<Vec<usize>>,
    pub alpha: Vec<usize>,
    /// `[k][band]`, empty without the stacked tariff.
    pub bands: Vec<[usize; BANDS]>,
    pub discharge: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct WindowLp {
    pub start: usize,
    pub lp: LpProblem,
    pub layout: WindowLayout,
    pub big_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    pub start: usize,
    /// `[session][k]` in W.
    pub powers_w: Vec<Vec<f64>>,
    /// `[session][k]` SOC in percent after step offset `k + 1`.
    pub socs: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// `[k][band]` in W.
    pub bands_w: Vec<[f64; BANDS]>,
    pub discharge_w: Vec<f64>,
    /// Objective in currency.
    pub objective: f64,
    pub status: SolveStatus,
    pub max_violation: f64,
}

/// Build the window LP.
///
/// Objective, per step and scaled by the step length: day-ahead price times
/// net EV power, band prices times band powers, `w_loss` times transformer
/// power, minus `M * alpha` once per session. Rows: SOC recursion, departure
/// SOC at least `alpha * soc_max` (or a proportional interim target when the
/// session leaves after the window), band balance, the no-loss transformer
/// limit and, when enabled, linearized current and voltage limits.
///
/// `relax_soc_floor` drops the departure and interim SOC rows and the SOC
/// lower bounds, for the last fallback stage.
pub fn assemble(
    window: &DispatchWindow,
    tariff: Option<&StackedTariff>,
    grid: Option<&GridLimits>,
    settings: &DispatchSettings,
    relax_soc_floor: bool,
) -> Result<WindowLp> {
    let stacked = settings.tariff == TariffMode::Stacked;
    if stacked && tariff.is_none() {
        return Err(Error::InconsistentMode("stacked tariff mode needs band envelopes".into()));
    }
    if !stacked && settings.objective.network {
        return Err(Error::InconsistentMode(
            "network cost term requires the stacked tariff".into(),
        ));
    }
    let use_pf = settings.constraints == ConstraintSet::TransformerPowerFlow;
    if use_pf && grid.is_none() {
        return Err(Error::InconsistentMode(
            "line/voltage constraints requested without a linear grid map".into(),
        ));
    }
    if let Some(t) = tariff {
        if t.envelopes.len() < window.start + window.length {
            return Err(Error::LengthMismatch {
                what: "band envelopes",
                expected: window.start + window.length,
                got: t.envelopes.len(),
            });
        }
    }
    if let Some(g) = grid {
        if g.maps.len() < window.start + window.length {
            return Err(Error::LengthMismatch {
                what: "grid maps",
                expected: window.start + window.length,
                got: g.maps.len(),
            });
        }
    }

    let dt = window.step_hours;
    let n = window.length;
    let obj = settings.objective;
    // The loss proxy is linearized transformer power when a map is present,
    // otherwise the no-loss sum of loads.
    let loss_map = if obj.losses { grid } else { None };
    let phases = grid.map_or(1, |g| g.phases) as f64;

    // Marginal transformer power per kW at each (step, session).
    let loss_factor = |k: usize, bus: usize| -> f64 {
        match loss_map {
            Some(g) => {
                let map = &g.maps[window.start + k];
                (0..g.phases)
                    .map(|ph| map.transformer_sensitivity(ph, bus).dp)
                    .sum::<f64>()
                    / phases
            }
            None => 1.0,
        }
    };

    let mut lp = LpProblem::new();
    let mut layout = WindowLayout::default();

    let p_max_kw = window
        .sessions
        .iter()
        .map(|ws| ws.session.rated_power_w / W_PER_KW)
        .fold(0.0, f64::max);
    let mut max_loss_factor: f64 = 1.0;
    if obj.losses {
        for (i, ws) in window.sessions.iter().enumerate() {
            for k in 0..window.steps_of(i) {
                max_loss_factor = max_loss_factor.max(loss_factor(k, ws.bus));
            }
        }
    }
    let max_price = window.prices.iter().fold(0.0, |m: f64, p| m.max(p.abs()));
    let band_high = match tariff {
        Some(t) if stacked => t.high_price(),
        _ => 0.0,
    };
    let unit_cost = max_price + band_high + if obj.losses { settings.w_loss * max_loss_factor } else { 0.0 };
    // Energy that the reward has to outweigh: a full-power window, or filling
    // the largest battery from empty when the window is short.
    let fill_kwh = window
        .sessions
        .iter()
        .map(|ws| ws.session.capacity_kwh * ws.session.soc_max / 100.0)
        .fold(0.0, f64::max);
    let energy_kwh = (p_max_kw.max(1.0) * n as f64 * dt).max(fill_kwh);
    let big_m = settings
        .big_m
        .unwrap_or(10.0 * unit_cost.max(1e-3) * energy_kwh / dt);

    // Session columns and SOC rows.
    for (i, ws) in window.sessions.iter().enumerate() {
        let s = &ws.session;
        let steps = window.steps_of(i);
        let lo_kw = s.min_power_w() / W_PER_KW;
        let hi_kw = s.rated_power_w / W_PER_KW;
        let soc_per_kw = PERCENT * dt / s.capacity_kwh;
        let soc_floor = if relax_soc_floor { 0.0 } else { s.soc_min };

        let mut powers = Vec::with_capacity(steps);
        let mut socs = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut cost = settings.tie_epsilon * k as f64 * dt;
            if obj.energy {
                cost += window.prices[k] * dt;
            }
            if obj.losses {
                cost += settings.w_loss * loss_factor(k, ws.bus) * dt;
            }
            let p = lp.add_var(VarKind::Power { session: i, k }, cost, lo_kw, hi_kw);
            let v = lp.add_var(VarKind::Soc { session: i, k: k + 1 }, 0.0, soc_floor, s.soc_max);
            // V[k+1] - V[k] - a P[k] = 0, with V[0] the known current SOC.
            match socs.last() {
                Some(&prev) => lp.add_row(
                    RowClass::SocUpdate,
                    vec![(v, 1.0), (prev, -1.0), (p, -soc_per_kw)],
                    0.0,
                    0.0,
                ),
                None => lp.add_row(
                    RowClass::SocUpdate,
                    vec![(v, 1.0), (p, -soc_per_kw)],
                    ws.soc_now,
                    ws.soc_now,
                ),
            }
            powers.push(p);
            socs.push(v);
        }

        let alpha_cost = if obj.soc { -big_m * dt } else { 0.0 };
        let a = lp.add_var(VarKind::Alpha { session: i }, alpha_cost, 0.0, 1.0);
        let last = *socs.last().expect("active session has at least one step");
        if !relax_soc_floor {
            if window.departs_inside(i) {
                lp.add_row(
                    RowClass::DepartureSoc,
                    vec![(last, 1.0), (a, -s.soc_max)],
                    0.0,
                    f64::INFINITY,
                );
            } else {
                let remaining = (s.departure - window.start) as f64;
                let target = ws.soc_now + (s.soc_max - ws.soc_now) * steps as f64 / remaining;
                lp.add_row(
                    RowClass::InterimSoc,
                    vec![(last, 1.0), (a, -target)],
                    0.0,
                    f64::INFINITY,
                );
            }
        }
        layout.power.push(powers);
        layout.soc.push(socs);
        layout.alpha.push(a);
    }

    // Session power columns active at each step offset.
    let mut at_step: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, cols) in layout.power.iter().enumerate() {
        for (k, &col) in cols.iter().enumerate() {
            at_step[k].push((i, col));
        }
    }

    if obj.losses {
        lp.objective_offset = (0..n)
            .map(|k| {
                let base_w = match loss_map {
                    Some(g) => g.maps[window.start + k].base_point().transformer_power.re,
                    None => window.base_load[k],
                };
                settings.w_loss * base_w / W_PER_KW * dt
            })
            .sum();
    }

    if stacked {
        let t = tariff.expect("checked above");
        for k in 0..n {
            let caps = t.envelopes[window.start + k];
            let mut cols = [0; BANDS];
            for (p, col) in cols.iter_mut().enumerate() {
                let cost = if obj.network { t.band_prices[p] * dt } else { 0.0 };
                *col = lp.add_var(VarKind::Band { k, band: p }, cost, 0.0, caps[p] / W_PER_KW);
            }
            let discharge_floor: f64 = at_step[k]
                .iter()
                .map(|&(i, _)| window.sessions[i].session.min_power_w() / W_PER_KW)
                .sum();
            let d = lp.add_var(VarKind::Discharge { k }, 0.0, discharge_floor, 0.0);
            let mut coeffs: Vec<(usize, f64)> = at_step[k].iter().map(|&(_, c)| (c, 1.0)).collect();
            coeffs.extend(cols.iter().map(|&c| (c, -1.0)));
            coeffs.push((d, -1.0));
            lp.add_row(RowClass::BandBalance, coeffs, 0.0, 0.0);
            layout.bands.push(cols);
            layout.discharge.push(d);
        }
    }

    if settings.constraints >= ConstraintSet::Transformer {
        for k in 0..n {
            if at_step[k].is_empty() {
                continue;
            }
            let headroom_kw = (window.rated_w - window.base_load[k]) / W_PER_KW;
            let coeffs = at_step[k].iter().map(|&(_, c)| (c, 1.0)).collect();
            lp.add_row(RowClass::Transformer, coeffs, f64::NEG_INFINITY, headroom_kw);
        }
    }

    if use_pf {
        let g = grid.expect("checked above");
        let kappa = g.kappa.kappa();
        for k in 0..n {
            if at_step[k].is_empty() {
                continue;
            }
            let map = &g.maps[window.start + k];
            for &l in &g.lines {
                let limit = kappa * g.ampacity_a[l];
                for ph in 0..g.phases {
                    let coeffs: Vec<(usize, f64)> = at_step[k]
                        .iter()
                        .map(|&(i, c)| {
                            let s = map.current_sensitivity(l, ph, window.sessions[i].bus);
                            (c, s.dp * W_PER_KW / phases)
                        })
                        .filter(|&(_, a)| a != 0.0)
                        .collect();
                    if coeffs.is_empty() {
                        continue;
                    }
                    let base = map.base_current(l, ph);
                    lp.add_row(RowClass::LineCurrent, coeffs, -limit - base, limit - base);
                }
            }
            for &b in &g.buses {
                let (lo, hi) = (g.v_min_pu * g.v_nom[b], g.v_max_pu * g.v_nom[b]);
                for ph in 0..g.phases {
                    let coeffs: Vec<(usize, f64)> = at_step[k]
                        .iter()
                        .map(|&(i, c)| {
                            let s = map.voltage_sensitivity(b, ph, window.sessions[i].bus);
                            (c, s.dp * W_PER_KW / phases)
                        })
                        .filter(|&(_, a)| a != 0.0)
                        .collect();
                    if coeffs.is_empty() {
                        continue;
                    }
                    let base = map.base_voltage(b, ph);
                    lp.add_row(RowClass::Voltage, coeffs, lo - base, hi - base);
                }
            }
        }
    }

    Ok(WindowLp {
        start: window.start,
        lp,
        layout,
        big_m,
    })
}

/// Solve a window LP and map the columns back to physical quantities.
pub fn solve(wlp: &WindowLp, tol: f64, backend: Backend) -> Result<WindowSolution> {
    let sol = solve_lp(&wlp.lp, tol, backend)?;
    let x = &sol.x;
    let layout = &wlp.layout;
    Ok(WindowSolution {
        start: wlp.start,
        powers_w: layout
            .power
            .iter()
            .map(|cols| cols.iter().map(|&c| x[c] * W_PER_KW).collect())
            .collect(),
        socs: layout
            .soc
            .iter()
            .map(|cols| cols.iter().map(|&c| x[c]).collect())
            .collect(),
        alpha: layout.alpha.iter().map(|&c| x[c]).collect(),
        bands_w: layout
            .bands
            .iter()
            .map(|cols| cols.map(|c| x[c] * W_PER_KW))
            .collect(),
        discharge_w: layout.discharge.iter().map(|&c| x[c] * W_PER_KW).collect(),
        objective: sol.objective,
        status: sol.status,
        max_violation: sol.max_violation,
    })
}
