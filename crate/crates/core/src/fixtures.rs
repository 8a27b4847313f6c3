//! Synthetic networks and inputs bundled for tests and the demo run.
//!
//! `feeder13` is a 400 kVA three-phase LV network with a short transformer
//! cable, one long feeder (A) and two shorter ones (B, C). Base loads follow
//! an evening-peaked winter profile with a small phase imbalance.

use crate::fleet::ChargingPoint;
use crate::grid::{Bus, Line, Network, Transformer, DEFAULT_STEP_HOURS};

pub const FEEDER13_RATED_KVA: f64 = 400.0;
/// Aggregate base-load peak of a nominal day, in W.
pub const FEEDER13_PEAK_W: f64 = 330_000.0;
pub const V_NOM: f64 = 230.0;

/// Bus ids of the long feeder that receives detailed power-flow rows.
pub const FEEDER_A_BUSES: [u32; 6] = [2, 3, 4, 5, 6, 7];
/// Lines of the long feeder as `(from, to)` bus ids.
pub const FEEDER_A_LINES: [(u32, u32); 6] = [(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7)];

const PHASE_SHARE: [f64; 3] = [1.06, 1.0, 0.94];

/// Share of the aggregate peak carried by each bus id 0..=12.
const BUS_SHARE: [f64; 13] = [
    0.0, 0.0, // transformer terminal and busbar
    0.05, 0.05, 0.05, 0.05, 0.05, 0.05, // feeder A
    0.12, 0.12, 0.12, // feeder B
    0.17, 0.17, // feeder C
];

/// (hour, factor) knots of the daily load shape, relative to the peak.
const DAILY_SHAPE: [(f64, f64); 10] = [
    (0.0, 0.62),
    (3.0, 0.56),
    (6.0, 0.60),
    (8.0, 0.78),
    (12.0, 0.66),
    (16.0, 0.78),
    (18.0, 1.0),
    (20.5, 1.0),
    (22.0, 0.80),
    (24.0, 0.62),
];

/// Normalized daily load factor at `hour` in `[0, 24)`.
pub fn daily_load_factor(hour: f64) -> f64 {
    let h = hour.rem_euclid(24.0);
    for w in DAILY_SHAPE.windows(2) {
        let ((h0, f0), (h1, f1)) = (w[0], w[1]);
        if h >= h0 && h <= h1 {
            return f0 + (f1 - f0) * (h - h0) / (h1 - h0);
        }
    }
    DAILY_SHAPE[0].1
}

fn feeder13_lines() -> Vec<Line> {
    let cable = |from, to, metres: f64, r_per_km: f64, x_per_km: f64, ampacity_a| Line {
        from,
        to,
        r_ohm: r_per_km * metres / 1000.0,
        x_ohm: x_per_km * metres / 1000.0,
        ampacity_a,
    };
    let mut lines = vec![cable(0, 1, 10.0, 0.125, 0.08, 600.0)];
    for (from, to) in FEEDER_A_LINES {
        lines.push(cable(from, to, 70.0, 0.206, 0.08, 240.0));
    }
    for (from, to) in [(1, 8), (8, 9), (9, 10)] {
        lines.push(cable(from, to, 60.0, 0.206, 0.08, 240.0));
    }
    for (from, to) in [(1, 11), (11, 12)] {
        lines.push(cable(from, to, 50.0, 0.206, 0.08, 240.0));
    }
    lines
}

/// Three-phase 13-bus feeder with `days` days of quarter-hour base load.
pub fn feeder13(days: usize) -> Network {
    feeder13_scaled(days, 1.0)
}

/// As [`feeder13`] with every base load multiplied by `scale`.
pub fn feeder13_scaled(days: usize, scale: f64) -> Network {
    let dt = DEFAULT_STEP_HOURS;
    let steps_per_day = (24.0 / dt) as usize;
    let horizon = days * steps_per_day;
    let tan_phi = (1.0f64 / 0.97f64.powi(2) - 1.0).sqrt();

    let buses = BUS_SHARE
        .iter()
        .enumerate()
        .map(|(id, &share)| {
            let p_load: Vec<Vec<f64>> = (0..horizon)
                .map(|t| {
                    let day = t / steps_per_day;
                    let hour = (t % steps_per_day) as f64 * dt;
                    let day_scale = 1.0 + 0.03 * (day as f64 * 1.3).sin();
                    let ripple = 1.0 + 0.04 * (hour / 24.0 * 6.0 * std::f64::consts::PI + id as f64).sin();
                    let total = scale
                        * FEEDER13_PEAK_W
                        * share
                        * daily_load_factor(hour)
                        * day_scale
                        * ripple;
                    PHASE_SHARE.iter().map(|s| total * s / 3.0).collect()
                })
                .collect();
            let q_load = p_load
                .iter()
                .map(|row| row.iter().map(|p| p * tan_phi).collect())
                .collect();
            Bus {
                id: id as u32,
                phases: 3,
                v_nom: V_NOM,
                p_load,
                q_load,
            }
        })
        .collect();

    Network::new(
        buses,
        feeder13_lines(),
        Transformer {
            rated_kva: FEEDER13_RATED_KVA,
            bus: 0,
            ratio: 10_000.0 / 400.0,
        },
        dt,
        horizon,
    )
    .expect("bundled fixture is valid")
}

/// Twelve 11 kW points: two-point stations on buses 3 to 7 of feeder A and
/// one at the end of feeder B.
pub fn demo_points() -> Vec<ChargingPoint> {
    [3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 10, 10]
        .into_iter()
        .enumerate()
        .map(|(id, bus)| ChargingPoint {
            id,
            bus,
            rated_power_w: 11_000.0,
        })
        .collect()
}

/// Line and bus indices of feeder A in `net`.
pub fn feeder_a_subset(net: &Network) -> (Vec<usize>, Vec<usize>) {
    let lines = FEEDER_A_LINES
        .iter()
        .map(|&(a, b)| net.line_index(a, b).expect("feeder A line"))
        .collect();
    let buses = FEEDER_A_BUSES
        .iter()
        .map(|&b| net.bus_index(b).expect("feeder A bus"))
        .collect();
    (lines, buses)
}
