//! Replays committed schedules through the full load flow and derives the
//! grid and stakeholder metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{ChargeSchedule, ChargingPoint, EvSession};
use crate::grid::Network;
use crate::powerflow::{base_injections, solve_sweep, PowerFlowSolution, DEFAULT_MAX_ITER, DEFAULT_TOL_PU};
use crate::tariff::{fill_bands, StackedTariff, BANDS};
use crate::units::{energy_kwh, PERCENT};

/// Transformer loading tolerated before a step counts as overloaded.
pub const DEFAULT_OVERLOAD_ALLOWANCE: f64 = 1.2;
/// Margin below the reachable SOC still counted as a full charge, in pp.
pub const FULL_SOC_MARGIN_PP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub overload_allowance: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub tol_pu: f64,
    pub max_iter: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            overload_allowance: DEFAULT_OVERLOAD_ALLOWANCE,
            v_min_pu: 0.95,
            v_max_pu: 1.05,
            tol_pu: DEFAULT_TOL_PU,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Violation events, one per (step, element) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    /// Lines other than the transformer cable above ampacity.
    pub line_congestion: usize,
    /// Transformer cable above ampacity.
    pub transformer_line: usize,
    /// Transformer apparent power above rating times the allowance.
    pub transformer: usize,
    pub undervoltage: usize,
    pub overvoltage: usize,
}

impl ViolationCounts {
    pub const CATEGORIES: [&'static str; 5] = [
        "line_congestion",
        "transformer_line",
        "transformer",
        "undervoltage",
        "overvoltage",
    ];

    pub fn values(&self) -> [usize; 5] {
        [
            self.line_congestion,
            self.transformer_line,
            self.transformer,
            self.undervoltage,
            self.overvoltage,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Validation {
    pub solutions: Vec<PowerFlowSolution>,
    pub counts: ViolationCounts,
    /// Congested steps per line.
    pub line_events: Vec<usize>,
}

impl Validation {
    /// Congestion events on a subset of lines.
    pub fn congestion_on(&self, lines: &[usize]) -> usize {
        lines.iter().map(|&l| self.line_events[l]).sum()
    }

    /// Transformer active power per step from the sweep, in W.
    pub fn transformer_power(&self) -> Vec<f64> {
        self.solutions.iter().map(|s| s.transformer_power.re).collect()
    }
}

/// Base load plus EV power at step `t`; EVs draw at unity power factor,
/// split evenly over the phases.
pub fn injections_with_ev(net: &Network, t: usize, ev_bus_w: &[f64]) -> Result<Vec<Vec<Complex64>>> {
    let mut inj = base_injections(net, t)?;
    let phases = net.phases() as f64;
    for (row, &p) in inj.iter_mut().zip(ev_bus_w) {
        for s in row.iter_mut() {
            s.re += p / phases;
        }
    }
    Ok(inj)
}

/// Run one sweep per step with the schedule's EV powers added at their buses
/// and count violations against raw element ratings.
pub fn validate(
    net: &Network,
    points: &[ChargingPoint],
    schedule: &ChargeSchedule,
    opts: &ValidationOptions,
) -> Result<Validation> {
    if schedule.horizon() != net.horizon() {
        return Err(Error::LengthMismatch {
            what: "schedule horizon",
            expected: net.horizon(),
            got: schedule.horizon(),
        });
    }
    let ev = schedule.bus_powers(net, points)?;
    let trafo_lines: Vec<usize> = net.transformer_lines().collect();
    let limit_va = net.transformer().rated_w() * opts.overload_allowance;
    let mut counts = ViolationCounts::default();
    let mut line_events = vec![0; net.lines().len()];
    let mut solutions = Vec::with_capacity(net.horizon());

    for (t, ev_t) in ev.iter().enumerate() {
        let inj = injections_with_ev(net, t, ev_t)?;
        let sol = solve_sweep(net, &inj, opts.tol_pu, opts.max_iter).map_err(|e| Error::StepNonConvergence {
            step: t,
            source: Box::new(e),
        })?;
        for (l, line) in net.lines().iter().enumerate() {
            if sol.line_currents[l].iter().any(|i| i.norm() > line.ampacity_a) {
                line_events[l] += 1;
                if trafo_lines.contains(&l) {
                    counts.transformer_line += 1;
                } else {
                    counts.line_congestion += 1;
                }
            }
        }
        if sol.transformer_power.norm() > limit_va {
            counts.transformer += 1;
        }
        for (b, bus) in net.buses().iter().enumerate() {
            let v = &sol.bus_voltages[b];
            if v.iter().any(|x| x.norm() < opts.v_min_pu * bus.v_nom) {
                counts.undervoltage += 1;
            }
            if v.iter().any(|x| x.norm() > opts.v_max_pu * bus.v_nom) {
                counts.overvoltage += 1;
            }
        }
        solutions.push(sol);
    }
    Ok(Validation {
        solutions,
        counts,
        line_events,
    })
}

/// Table-style outcome of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StakeholderMetrics {
    pub power_loss_kwh: f64,
    pub rms_trafo_load_w: f64,
    /// Day-ahead energy component.
    pub energy_cost: f64,
    /// Network band component.
    pub network_cost: f64,
    /// Sum of both components.
    pub cpo_cost: f64,
    pub full_soc_pct: f64,
}

/// Root of the mean square of `values`.
pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Day-ahead and network components of the bill for the committed net EV
/// import. Network fees apply band by band, cheapest first; import above
/// the top band is billed at the top-band price. Exports earn the
/// day-ahead price and pay no network fee.
pub fn cpo_costs(schedule: &ChargeSchedule, prices: &[f64], tariff: &StackedTariff) -> Result<(f64, f64)> {
    let horizon = schedule.horizon();
    if prices.len() < horizon || tariff.envelopes.len() < horizon {
        return Err(Error::LengthMismatch {
            what: "prices or envelopes",
            expected: horizon,
            got: prices.len().min(tariff.envelopes.len()),
        });
    }
    let dt = schedule.step_hours;
    let mut energy = 0.0;
    let mut network = 0.0;
    for t in 0..horizon {
        let p = schedule.total_power(t);
        energy += prices[t] * energy_kwh(p, dt);
        let (bands, overflow) = fill_bands(&tariff.envelopes[t], p);
        for b in 0..BANDS {
            network += tariff.band_prices[b] * energy_kwh(bands[b], dt);
        }
        network += tariff.high_price() * energy_kwh(overflow, dt);
    }
    Ok((energy, network))
}

/// Share of sessions, in percent, that leave within the margin of the SOC
/// they could have reached charging at full power.
pub fn full_soc_pct(sessions: &[EvSession], schedule: &ChargeSchedule) -> f64 {
    if sessions.is_empty() {
        return PERCENT;
    }
    let full = sessions
        .iter()
        .enumerate()
        .filter(|(i, s)| schedule.final_soc(*i) >= s.reachable_soc(schedule.step_hours) - FULL_SOC_MARGIN_PP)
        .count();
    PERCENT * full as f64 / sessions.len() as f64
}

pub fn stakeholder_metrics(
    sessions: &[EvSession],
    schedule: &ChargeSchedule,
    validation: &Validation,
    prices: &[f64],
    tariff: &StackedTariff,
) -> Result<StakeholderMetrics> {
    let dt = schedule.step_hours;
    let power_loss_kwh = validation.solutions.iter().map(|s| energy_kwh(s.losses_w, dt)).sum();
    let (energy_cost, network_cost) = cpo_costs(schedule, prices, tariff)?;
    Ok(StakeholderMetrics {
        power_loss_kwh,
        rms_trafo_load_w: rms(&validation.transformer_power()),
        energy_cost,
        network_cost,
        cpo_cost: energy_cost + network_cost,
        full_soc_pct: full_soc_pct(sessions, schedule),
    })
}

/// Change relative to the baseline, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeMetrics {
    pub power_loss_pct: f64,
    pub rms_trafo_load_pct: f64,
    pub energy_cost_pct: f64,
    pub cpo_cost_pct: f64,
    /// Absolute, not relative.
    pub full_soc_pct: f64,
}

fn rel(value: f64, base: f64) -> f64 {
    if base == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::NAN
        }
    } else {
        PERCENT * (value - base) / base.abs()
    }
}

/// Metrics of every scenario relative to `baseline`.
pub fn stakeholder_table(
    runs: &BTreeMap<String, StakeholderMetrics>,
    baseline: &str,
) -> Result<BTreeMap<String, RelativeMetrics>> {
    let base = runs
        .get(baseline)
        .ok_or_else(|| Error::MissingBaseline(baseline.to_string()))?;
    Ok(runs
        .iter()
        .map(|(label, m)| {
            (
                label.clone(),
                RelativeMetrics {
                    power_loss_pct: rel(m.power_loss_kwh, base.power_loss_kwh),
                    rms_trafo_load_pct: rel(m.rms_trafo_load_w, base.rms_trafo_load_w),
                    energy_cost_pct: rel(m.energy_cost, base.energy_cost),
                    cpo_cost_pct: rel(m.cpo_cost, base.cpo_cost),
                    full_soc_pct: m.full_soc_pct,
                },
            )
        })
        .collect())
}

/// No-loss aggregate transformer loading per step: base load plus net EV
/// power, in W.
pub fn transformer_trace(net: &Network, schedule: &ChargeSchedule) -> Vec<f64> {
    net.base_load_series()
        .iter()
        .enumerate()
        .map(|(t, l)| l + schedule.total_power(t))
        .collect()
}

/// Steps where `trace` is within `rel_tol` of `rated_w` or above it.
pub fn rating_touching_steps(trace: &[f64], rated_w: f64, rel_tol: f64) -> usize {
    trace.iter().filter(|&&p| p >= rated_w * (1.0 - rel_tol)).count()
}

/// Everything reported for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub label: String,
    pub violations: ViolationCounts,
    /// Congestion events on lines with detailed power-flow rows.
    pub modelled_feeder_congestion: usize,
    pub metrics: StakeholderMetrics,
    pub trace_w: Vec<f64>,
    /// Fallbacks taken by the controller, as readable strings.
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub baseline: Option<String>,
    pub scenarios: Vec<ScenarioReport>,
    pub relative: BTreeMap<String, RelativeMetrics>,
}

impl Summary {
    pub fn new(scenarios: Vec<ScenarioReport>, baseline: &str) -> Self {
        let runs: BTreeMap<String, StakeholderMetrics> =
            scenarios.iter().map(|r| (r.label.clone(), r.metrics)).collect();
        let (baseline, relative) = match stakeholder_table(&runs, baseline) {
            Ok(table) => (Some(baseline.to_string()), table),
            Err(_) => (None, BTreeMap::new()),
        };
        Summary {
            baseline,
            scenarios,
            relative,
        }
    }

    pub fn get(&self, label: &str) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|r| r.label == label)
    }
}

pub fn violations_csv(summary: &Summary) -> String {
    let mut out = String::from("scenario,category,count\n");
    for r in &summary.scenarios {
        for (cat, n) in ViolationCounts::CATEGORIES.iter().zip(r.violations.values()) {
            writeln!(out, "{},{},{}", r.label, cat, n).unwrap();
        }
    }
    out
}

fn fmt_rel(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        _ => String::new(),
    }
}

pub fn metrics_csv(summary: &Summary) -> String {
    let mut out = String::from(
        "scenario,power_loss_kwh,rms_trafo_load_w,energy_cost,network_cost,cpo_cost,full_soc_pct,\
         power_loss_rel_pct,rms_trafo_load_rel_pct,energy_cost_rel_pct,cpo_cost_rel_pct\n",
    );
    for r in &summary.scenarios {
        let m = &r.metrics;
        let rel = summary.relative.get(&r.label);
        writeln!(
            out,
            "{},{:.6},{:.3},{:.6},{:.6},{:.6},{:.4},{},{},{},{}",
            r.label,
            m.power_loss_kwh,
            m.rms_trafo_load_w,
            m.energy_cost,
            m.network_cost,
            m.cpo_cost,
            m.full_soc_pct,
            fmt_rel(rel.map(|x| x.power_loss_pct)),
            fmt_rel(rel.map(|x| x.rms_trafo_load_pct)),
            fmt_rel(rel.map(|x| x.energy_cost_pct)),
            fmt_rel(rel.map(|x| x.cpo_cost_pct)),
        )
        .unwrap();
    }
    out
}

pub fn trace_csv(report: &ScenarioReport) -> String {
    let mut out = String::from("step,aggregate_w\n");
    for (t, p) in report.trace_w.iter().enumerate() {
        writeln!(out, "{t},{p:.3}").unwrap();
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `violations.csv`, `metrics.csv`, one `trace_<label>.csv` per
/// scenario and `summary.json` into `dir`.
pub fn write_reports(dir: &Path, summary: &Summary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("violations.csv"), &violations_csv(summary))?;
    write_file(&dir.join("metrics.csv"), &metrics_csv(summary))?;
    for r in &summary.scenarios {
        write_file(&dir.join(format!("trace_{}.csv", r.label)), &trace_csv(r))?;
    }
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::parse("summary", e))?;
    write_file(&dir.join("summary.json"), &json)
}
