//! Browser bindings for three views of the bundled 13-bus feeder: stacked
//! tariff envelopes over a day, the voltage profile along each feeder for a
//! chosen EV load, and the transformer trace of a small dispatch run.
//!
//! Every function returns a JSON string so the page needs no extra glue.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use evgrid::fixtures::{self, FEEDER13_RATED_KVA};
use evgrid::scenario::{run_scenarios, Experiment, ExperimentConfig};
use evgrid::tariff::{build_envelopes, TariffConfig};
use evgrid::{evaluate, powerflow};

fn to_json<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct EnvelopeView {
    hours: Vec<f64>,
    base_load_kw: Vec<f64>,
    /// `[band][step]` in kW.
    bands_kw: Vec<Vec<f64>>,
    rated_kw: f64,
}

/// Band envelopes for one day of the bundled feeder with its base load
/// scaled by `load_scale` and band tops at the given fractions of the
/// transformer rating.
#[wasm_bindgen]
pub fn envelopes(load_scale: f64, low: f64, mid: f64, high: f64) -> Result<String, JsValue> {
    let net = fixtures::feeder13_scaled(1, load_scale);
    let cfg = TariffConfig {
        band_fractions: [low, mid, high],
        ..TariffConfig::default()
    };
    cfg.validate().map_err(js_err)?;
    let base = net.base_load_series();
    let env = build_envelopes(&net, &cfg.band_fractions, &base).map_err(js_err)?;
    to_json(&EnvelopeView {
        hours: (0..net.horizon()).map(|t| t as f64 * net.step_hours()).collect(),
        base_load_kw: base.iter().map(|p| p / 1000.0).collect(),
        bands_kw: (0..3).map(|b| env.iter().map(|e| e[b] / 1000.0).collect()).collect(),
        rated_kw: FEEDER13_RATED_KVA,
    })
}

#[derive(Serialize)]
struct FeederProfile {
    name: String,
    /// Bus ids from the busbar outward.
    buses: Vec<u32>,
    /// Mean phase voltage in per unit, per bus.
    sweep_pu: Vec<f64>,
    /// The linear surrogate's estimate of the same.
    linear_pu: Vec<f64>,
}

#[derive(Serialize)]
struct VoltageView {
    feeders: Vec<FeederProfile>,
    /// Largest line loading relative to ampacity.
    max_loading: f64,
    losses_kw: f64,
}

const FEEDERS: [(&str, &[u32]); 3] = [
    ("A", &[1, 2, 3, 4, 5, 6, 7]),
    ("B", &[1, 8, 9, 10]),
    ("C", &[1, 11, 12]),
];

/// Voltage along each feeder at quarter-hour `step` of the day with `ev_kw`
/// of charging added at bus `ev_bus`, from the sweep and from the surrogate
/// built around the base load.
#[wasm_bindgen]
pub fn voltage_profile(step: usize, ev_bus: u32, ev_kw: f64) -> Result<String, JsValue> {
    let net = fixtures::feeder13(1);
    if step >= net.horizon() {
        return Err(js_err(format!("step must be below {}", net.horizon())));
    }
    let b = net
        .bus_index(ev_bus)
        .ok_or_else(|| js_err(format!("unknown bus {ev_bus}")))?;
    let mut ev = vec![0.0; net.buses().len()];
    ev[b] = ev_kw * 1000.0;
    let inj = evaluate::injections_with_ev(&net, step, &ev).map_err(js_err)?;
    let sol = powerflow::solve_sweep(&net, &inj, powerflow::DEFAULT_TOL_PU, powerflow::DEFAULT_MAX_ITER)
        .map_err(js_err)?;
    let map = powerflow::build_linear_map(&net, &powerflow::base_injections(&net, step).map_err(js_err)?)
        .map_err(js_err)?;
    let linear = map.voltage_magnitudes(&inj);
    let mean_pu = |vals: &[f64], v_nom: f64| vals.iter().sum::<f64>() / vals.len() as f64 / v_nom;

    let feeders = FEEDERS
        .iter()
        .map(|(name, ids)| {
            let idx: Vec<usize> = ids.iter().map(|&id| net.bus_index(id).expect("bundled bus")).collect();
            FeederProfile {
                name: name.to_string(),
                buses: ids.to_vec(),
                sweep_pu: idx
                    .iter()
                    .map(|&i| {
                        let mags: Vec<f64> = sol.bus_voltages[i].iter().map(|v| v.norm()).collect();
                        mean_pu(&mags, net.buses()[i].v_nom)
                    })
                    .collect(),
                linear_pu: idx.iter().map(|&i| mean_pu(&linear[i], net.buses()[i].v_nom)).collect(),
            }
        })
        .collect();
    let max_loading = net
        .lines()
        .iter()
        .enumerate()
        .flat_map(|(l, line)| sol.line_currents[l].iter().map(move |i| i.norm() / line.ampacity_a))
        .fold(0.0, f64::max);
    to_json(&VoltageView {
        feeders,
        max_loading,
        losses_kw: sol.losses_w / 1000.0,
    })
}

#[derive(Serialize)]
struct TraceView {
    hours: Vec<f64>,
    rated_kw: f64,
    /// `(label, aggregate kW per step)`.
    traces: Vec<(String, Vec<f64>)>,
    line_congestion: Vec<(String, usize)>,
}

/// One-day dispatch of `points` chargers at the end of feeder A under the
/// uncontrolled, day-ahead and stacked-tariff scenarios, with a short
/// look-ahead so it stays interactive.
#[wasm_bindgen]
pub fn dispatch_trace(points: usize, window_steps: usize, seed: u32) -> Result<String, JsValue> {
    let points = points.clamp(1, 12);
    let config = ExperimentConfig {
        seed: u64::from(seed),
        days: 1,
        window: window_steps.clamp(4, 96),
        points: Some(fixtures::demo_points().into_iter().take(points).collect()),
        ..ExperimentConfig::default()
    };
    let exp = Experiment::prepare(config).map_err(js_err)?;
    let labels: Vec<String> = ["S0", "S1", "S2"].iter().map(|s| s.to_string()).collect();
    let runs = run_scenarios(&exp, &labels, 1).map_err(js_err)?;
    to_json(&TraceView {
        hours: (0..exp.net.horizon()).map(|t| t as f64 * exp.net.step_hours()).collect(),
        rated_kw: exp.net.transformer().rated_kva,
        traces: runs
            .iter()
            .map(|r| (r.config.label.clone(), r.report.trace_w.iter().map(|p| p / 1000.0).collect()))
            .collect(),
        line_congestion: runs
            .iter()
            .map(|r| (r.config.label.clone(), r.report.violations.line_congestion))
            .collect(),
    })
}
