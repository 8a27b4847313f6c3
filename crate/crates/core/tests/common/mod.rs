//! Shared builders and the brute-force dispatch oracle.
#![allow(dead_code)]

use evgrid::dispatch::{
    assemble, solve, Backend, ConstraintSet, DispatchSettings, DispatchWindow, ObjectiveTerms, TariffMode,
    WindowSession,
};
use evgrid::fleet::{soc_step, ChargingPoint, EvSession};
use evgrid::grid::{Bus, Line, Network, Transformer};
use evgrid::tariff::{StackedTariff, TariffConfig, BANDS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Single-phase two-bus network with the given base load series at bus 1.
pub fn two_bus(loads_w: &[f64], rated_kva: f64) -> Network {
    two_bus_with(loads_w, rated_kva, 200.0)
}

pub fn two_bus_with(loads_w: &[f64], rated_kva: f64, ampacity_a: f64) -> Network {
    let steps = loads_w.len();
    Network::new(
        vec![
            Bus {
                id: 0,
                phases: 1,
                v_nom: 230.0,
                p_load: vec![vec![0.0]; steps],
                q_load: vec![vec![0.0]; steps],
            },
            Bus {
                id: 1,
                phases: 1,
                v_nom: 230.0,
                p_load: loads_w.iter().map(|&p| vec![p]).collect(),
                q_load: vec![vec![0.0]; steps],
            },
        ],
        vec![Line {
            from: 0,
            to: 1,
            r_ohm: 0.02,
            x_ohm: 0.01,
            ampacity_a,
        }],
        Transformer {
            rated_kva,
            bus: 0,
            ratio: 1.0,
        },
        0.25,
        steps,
    )
    .unwrap()
}

pub fn points(n: usize, bus: u32, power_w: f64) -> Vec<ChargingPoint> {
    (0..n)
        .map(|id| ChargingPoint {
            id,
            bus,
            rated_power_w: power_w,
        })
        .collect()
}

/// A random tiny dispatch instance.
#[derive(Debug, Clone)]
pub struct TinyCase {
    pub net: Network,
    pub sessions: Vec<EvSession>,
    pub prices: Vec<f64>,
    pub tariff: StackedTariff,
    pub settings: DispatchSettings,
}

pub const TINY_POWER_W: f64 = 4_000.0;
pub const GRID_LEVELS: i32 = 4;

pub fn tiny_case(seed: u64) -> TinyCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sessions = rng.gen_range(1..=2);
    let v2g: Vec<bool> = (0..n_sessions).map(|_| rng.gen_bool(0.5)).collect();
    let levels: usize = v2g.iter().map(|&b| if b { 9 } else { 5 }).product();
    // Keep the enumeration under about a million schedules.
    let max_steps = (1..=4).rev().find(|&n| (levels as f64).powi(n) <= 1.0e6).unwrap();
    let steps = rng.gen_range(2..=max_steps.max(2)) as usize;
    let rated_kva = 20.0;
    let loads: Vec<f64> = (0..steps).map(|_| rng.gen_range(4_000.0..17_000.0)).collect();
    let net = two_bus(&loads, rated_kva);
    let prices: Vec<f64> = (0..steps).map(|_| rng.gen_range(-0.02..0.3)).collect();
    let sessions = (0..n_sessions)
        .map(|i| EvSession {
            point: i,
            arrival: 0,
            departure: steps,
            soc_init: rng.gen_range(0.0..60.0),
            soc_max: rng.gen_range(70.0..=100.0),
            soc_min: 0.0,
            capacity_kwh: rng.gen_range(3.0..8.0),
            rated_power_w: TINY_POWER_W,
            v2g: v2g[i],
        })
        .collect();
    let stacked = rng.gen_bool(0.5);
    let tariff = StackedTariff::new(&net, &TariffConfig::default(), &loads).unwrap();
    let settings = DispatchSettings {
        tariff: if stacked { TariffMode::Stacked } else { TariffMode::DayAhead },
        constraints: ConstraintSet::Transformer,
        objective: ObjectiveTerms {
            energy: true,
            network: stacked,
            losses: false,
            soc: true,
        },
        window: steps,
        backend: Backend::default(),
        ..DispatchSettings::default()
    };
    TinyCase {
        net,
        sessions,
        prices,
        tariff,
        settings,
    }
}

pub struct OracleComparison {
    pub lp: f64,
    pub enumerated: f64,
    /// Largest cost change from moving every power by one grid step.
    pub bound: f64,
}

/// Solve the tiny case as an LP and by enumerating every schedule on a
/// grid of `P/4`.
pub fn compare_with_enumeration(case: &TinyCase) -> OracleComparison {
    let net = &case.net;
    let steps = net.horizon();
    let dt = net.step_hours();
    let ws: Vec<WindowSession> = case
        .sessions
        .iter()
        .enumerate()
        .map(|(i, s)| WindowSession {
            index: i,
            session: s.clone(),
            soc_now: s.soc_init,
            bus: 1,
        })
        .collect();
    let window = DispatchWindow::new(net, &case.prices, 0, steps, ws).unwrap();
    let stacked = case.settings.tariff == TariffMode::Stacked;
    let wlp = assemble(&window, stacked.then_some(&case.tariff), None, &case.settings, false).unwrap();
    let lp = solve(&wlp, case.settings.tol, case.settings.backend).unwrap();
    let big_m = wlp.big_m;
    let eps = case.settings.tie_epsilon;

    let grid_kw = TINY_POWER_W / 1000.0 / GRID_LEVELS as f64;
    let levels: Vec<Vec<f64>> = case
        .sessions
        .iter()
        .map(|s| {
            let lo = if s.v2g { -GRID_LEVELS } else { 0 };
            (lo..=GRID_LEVELS).map(|j| j as f64 * grid_kw).collect()
        })
        .collect();
    let headroom_kw: Vec<f64> = (0..steps)
        .map(|t| (net.transformer().rated_w() - net.aggregate_base_load(t).unwrap()) / 1000.0)
        .collect();

    let n = case.sessions.len();
    let vars = n * steps;
    let mut idx = vec![0usize; vars];
    let mut best = f64::INFINITY;
    'outer: loop {
        let mut cost = 0.0;
        let mut feasible = true;
        let mut socs: Vec<f64> = case.sessions.iter().map(|s| s.soc_init).collect();
        for k in 0..steps {
            let mut total = 0.0;
            for (i, s) in case.sessions.iter().enumerate() {
                let p = levels[i][idx[i * steps + k]];
                total += p;
                cost += (case.prices[k] + eps * k as f64) * dt * p;
                socs[i] = soc_step(socs[i], p * 1000.0, dt, s.capacity_kwh);
                if socs[i] < s.soc_min - 1e-9 || socs[i] > s.soc_max + 1e-9 {
                    feasible = false;
                }
            }
            if total > headroom_kw[k] + 1e-9 {
                feasible = false;
            }
            if stacked && total > 0.0 {
                let caps = case.tariff.envelopes[k];
                let mut remaining = total;
                for b in 0..BANDS {
                    let take = remaining.min(caps[b] / 1000.0);
                    cost += case.tariff.band_prices[b] * dt * take;
                    remaining -= take;
                }
                if remaining > 1e-9 {
                    feasible = false;
                }
            }
            if !feasible {
                break;
            }
        }
        if feasible {
            for (i, s) in case.sessions.iter().enumerate() {
                let alpha = (socs[i] / s.soc_max).min(1.0);
                cost -= big_m * dt * alpha;
            }
            best = best.min(cost);
        }
        for j in 0..vars {
            idx[j] += 1;
            if idx[j] < levels[j / steps].len() {
                continue 'outer;
            }
            idx[j] = 0;
        }
        break;
    }

    let max_price = case.prices.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let band = if stacked { case.tariff.high_price() } else { 0.0 };
    let bound: f64 = case
        .sessions
        .iter()
        .map(|s| {
            let per_step_money = grid_kw * dt * (max_price + band + eps * steps as f64);
            let soc_per_grid = 100.0 * grid_kw * dt / s.capacity_kwh;
            steps as f64 * (per_step_money + big_m * dt * soc_per_grid / s.soc_max)
        })
        .sum();
    OracleComparison {
        lp: lp.objective,
        enumerated: best,
        bound,
    }
}
