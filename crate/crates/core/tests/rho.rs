//! Receding-horizon controller behaviour.

mod common;

use common::{points, two_bus, two_bus_with};
use evgrid::dispatch::{
    assemble, run_rho, solve, ConstraintSet, DispatchSettings, DispatchWindow, GridLimits, ObjectiveTerms, RhoEvent,
    RhoInputs, TariffMode, WindowSession,
};
use evgrid::fleet::{ChargingPoint, EvSession};
use evgrid::grid::Network;
use evgrid::powerflow::CorrectionFactor;
use evgrid::Error;

fn session(point: usize, arrival: usize, departure: usize, soc_init: f64, v2g: bool) -> EvSession {
    EvSession {
        point,
        arrival,
        departure,
        soc_init,
        soc_max: 100.0,
        soc_min: 0.0,
        capacity_kwh: 20.0,
        rated_power_w: 7_000.0,
        v2g,
    }
}

fn day_ahead(window: usize) -> DispatchSettings {
    DispatchSettings {
        tariff: TariffMode::DayAhead,
        constraints: ConstraintSet::Transformer,
        objective: ObjectiveTerms::from_labels(&["I", "IV"]).unwrap(),
        window,
        ..DispatchSettings::default()
    }
}

fn prices(n: usize) -> Vec<f64> {
    (0..n).map(|t| 0.12 + 0.08 * ((t as f64) * 0.7).sin()).collect()
}

fn inputs<'a>(
    net: &'a Network,
    pts: &'a [ChargingPoint],
    sessions: &'a [EvSession],
    prices: &'a [f64],
) -> RhoInputs<'a> {
    RhoInputs {
        scenario: "test",
        net,
        points: pts,
        sessions,
        prices,
        tariff: None,
        grid: None,
    }
}

#[test]
fn full_window_matches_open_loop() {
    let horizon = 16;
    let net = two_bus(&vec![10_000.0; horizon], 30.0);
    let pts = points(2, 1, 7_000.0);
    let sessions = vec![session(0, 0, horizon, 10.0, true), session(1, 0, horizon, 40.0, false)];
    let p = prices(horizon);
    let settings = day_ahead(horizon);

    let ws = sessions
        .iter()
        .enumerate()
        .map(|(i, s)| WindowSession {
            index: i,
            session: s.clone(),
            soc_now: s.soc_init,
            bus: 1,
        })
        .collect();
    let window = DispatchWindow::new(&net, &p, 0, horizon, ws).unwrap();
    let open = solve(&assemble(&window, None, None, &settings, false).unwrap(), 1e-7, settings.backend).unwrap();
    let rho = run_rho(inputs(&net, &pts, &sessions, &p), &settings).unwrap();

    let cost = |powers: &dyn Fn(usize, usize) -> f64| -> f64 {
        (0..horizon)
            .map(|t| (0..2).map(|i| powers(i, t)).sum::<f64>() * p[t] * 0.25 / 1000.0)
            .sum()
    };
    let open_cost = cost(&|i, t| open.powers_w[i][t]);
    let rho_cost = cost(&|i, t| rho.schedule.power[i][t]);
    assert!((open_cost - rho_cost).abs() < 1e-6, "open {open_cost} vs rho {rho_cost}");
    for i in 0..2 {
        assert!((open.socs[i][horizon - 1] - rho.schedule.final_soc(i)).abs() < 1e-6);
    }
}

#[test]
fn commitments_ignore_prices_beyond_the_window() {
    let horizon = 32;
    let window = 8;
    let net = two_bus(&vec![8_000.0; horizon], 30.0);
    let pts = points(2, 1, 7_000.0);
    let sessions = vec![session(0, 0, 30, 5.0, true), session(1, 2, 28, 30.0, true)];
    let settings = day_ahead(window);
    let base = prices(horizon);
    let mut shifted = base.clone();
    for p in shifted.iter_mut().skip(20) {
        *p = 0.5 - *p;
    }
    let a = run_rho(inputs(&net, &pts, &sessions, &base), &settings).unwrap();
    let b = run_rho(inputs(&net, &pts, &sessions, &shifted), &settings).unwrap();
    // The decision at step s sees prices up to s + window - 1.
    for t in 0..=(20 - window) {
        for pt in 0..2 {
            assert_eq!(a.schedule.power[pt][t], b.schedule.power[pt][t], "step {t}");
        }
    }
}

#[test]
fn later_arrivals_do_not_change_earlier_steps() {
    let horizon = 24;
    let net = two_bus(&vec![12_000.0; horizon], 25.0);
    let pts = points(2, 1, 7_000.0);
    let one = vec![session(0, 0, 20, 10.0, true)];
    let two = vec![session(0, 0, 20, 10.0, true), session(1, 12, 24, 0.0, false)];
    let p = prices(horizon);
    let settings = day_ahead(12);
    let a = run_rho(inputs(&net, &pts, &one, &p), &settings).unwrap();
    let b = run_rho(inputs(&net, &pts, &two, &p), &settings).unwrap();
    for t in 0..12 {
        assert_eq!(a.schedule.power[0][t], b.schedule.power[0][t]);
    }
}

#[test]
fn committed_schedule_respects_transformer_and_soc_bookkeeping() {
    let horizon = 24;
    let loads: Vec<f64> = (0..horizon).map(|t| 8_000.0 + 600.0 * t as f64).collect();
    let net = two_bus(&loads, 30.0);
    let pts = points(3, 1, 7_000.0);
    let sessions = vec![
        session(0, 0, 24, 0.0, false),
        session(1, 1, 20, 20.0, true),
        session(2, 3, 24, 50.0, true),
    ];
    let p = prices(horizon);
    let out = run_rho(inputs(&net, &pts, &sessions, &p), &day_ahead(96)).unwrap();
    for t in 0..horizon {
        let total = loads[t] + out.schedule.total_power(t);
        assert!(total <= 30_000.0 * (1.0 + 1e-6), "step {t}: {total}");
    }
    assert!(out.schedule.energy_bookkeeping_error(&sessions) < 1e-9);
    assert!(out.events.is_empty());
}

#[test]
fn infeasible_line_rows_are_dropped_with_an_event() {
    // The base load alone already exceeds the line limit, and the sessions
    // cannot discharge, so the current rows cannot be met.
    let horizon = 6;
    let net = two_bus_with(&vec![60_000.0; horizon], 100.0, 150.0);
    let pts = points(1, 1, 7_000.0);
    let sessions = vec![session(0, 0, horizon, 10.0, false)];
    let p = prices(horizon);
    let grid = GridLimits::build(&net, vec![0], vec![1], CorrectionFactor::ONE).unwrap();
    let settings = DispatchSettings {
        constraints: ConstraintSet::TransformerPowerFlow,
        ..day_ahead(4)
    };
    let out = run_rho(
        RhoInputs {
            grid: Some(&grid),
            ..inputs(&net, &pts, &sessions, &p)
        },
        &settings,
    )
    .unwrap();
    assert!(matches!(out.events[0], RhoEvent::DroppedPowerFlow { step: 0, .. }));
}

#[test]
fn transformer_infeasibility_reports_scenario_and_step() {
    // Base load above the rating from step 2 on: a charging-only session
    // cannot bring the loading back under the limit.
    let loads = [10_000.0, 10_000.0, 32_000.0, 32_000.0];
    let net = two_bus(&loads, 30.0);
    let pts = points(1, 1, 7_000.0);
    let sessions = vec![session(0, 0, 4, 10.0, false)];
    let p = prices(4);
    let err = run_rho(inputs(&net, &pts, &sessions, &p), &day_ahead(4)).unwrap_err();
    match err {
        Error::Scenario { scenario, step, .. } => {
            assert_eq!(scenario, "test");
            assert_eq!(step, 0);
        }
        other => panic!("unexpected error {other}"),
    }
}
