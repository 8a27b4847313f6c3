//! Property tests for invariants that hold for any valid input.

use evgrid::evaluate::{validate, ValidationOptions};
use evgrid::fixtures;
use evgrid::fleet::{
    generate_sessions, place_points, soc_step, uncontrolled_schedule, validate_sessions, ChargeSchedule, EvSession,
    SessionProfile,
};
use evgrid::grid::{Bus, Line, Network, Transformer};
use evgrid::powerflow::{build_linear_map, kcl_residual, solve_sweep, Injections};
use evgrid::tariff::{band_capacities, fill_bands};
use evgrid::units::power_for_soc_delta;
use num_complex::Complex64;
use proptest::prelude::*;

/// Random radial tree: bus `i > 0` hangs off a random earlier bus.
fn arb_tree() -> impl Strategy<Value = (Network, Injections)> {
    (2usize..9, 1usize..=3)
        .prop_flat_map(|(n, phases)| {
            let parents = (1..n).map(|i| 0..i).collect::<Vec<_>>();
            let lines = proptest::collection::vec((0.01f64..0.08, 0.0f64..0.04), n - 1);
            let loads = proptest::collection::vec(proptest::collection::vec((-2_000.0f64..6_000.0, 0.0f64..1_500.0), phases), n);
            (Just(n), Just(phases), parents, lines, loads)
        })
        .prop_map(|(n, phases, parents, lines, loads)| {
            let phases = if phases == 2 { 3 } else { phases };
            let buses = (0..n)
                .map(|i| Bus {
                    id: i as u32,
                    phases,
                    v_nom: 230.0,
                    p_load: vec![vec![0.0; phases]],
                    q_load: vec![vec![0.0; phases]],
                })
                .collect();
            let lines = parents
                .iter()
                .zip(&lines)
                .enumerate()
                .map(|(k, (&p, &(r, x)))| Line {
                    from: p as u32,
                    to: (k + 1) as u32,
                    r_ohm: r,
                    x_ohm: x,
                    ampacity_a: 300.0,
                })
                .collect();
            let net = Network::new(
                buses,
                lines,
                Transformer {
                    rated_kva: 250.0,
                    bus: 0,
                    ratio: 1.0,
                },
                0.25,
                1,
            )
            .unwrap();
            let inj = loads
                .iter()
                .enumerate()
                .map(|(b, row)| {
                    (0..phases)
                        .map(|ph| {
                            let (p, q) = row[ph % row.len()];
                            if b == 0 {
                                Complex64::new(0.0, 0.0)
                            } else {
                                Complex64::new(p, q)
                            }
                        })
                        .collect()
                })
                .collect();
            (net, inj)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweep_balances_power((net, inj) in arb_tree()) {
        let sol = solve_sweep(&net, &inj, 1e-9, 200).unwrap();
        prop_assert!(kcl_residual(&net, &inj, &sol) < 1e-6);
        let load: f64 = inj.iter().flatten().map(|s| s.re).sum();
        let balance = sol.transformer_power.re - load - sol.losses_w;
        prop_assert!(balance.abs() < 1e-3 * (1.0 + load.abs()), "imbalance {balance}");
        prop_assert!(sol.losses_w >= 0.0);
    }

    #[test]
    fn linear_map_reproduces_its_base_point((net, inj) in arb_tree()) {
        let map = build_linear_map(&net, &inj).unwrap();
        let sweep = solve_sweep(&net, &inj, 1e-9, 200).unwrap();
        let lin = map.current_magnitudes(&inj);
        for (l, row) in lin.iter().enumerate() {
            for (ph, i) in row.iter().enumerate() {
                prop_assert!((i - sweep.line_currents[l][ph].norm()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn band_capacities_fill_the_gap_to_the_top_band(load in -2.0e5f64..6.0e5) {
        let edges = [240_000.0, 320_000.0, 400_000.0];
        let caps = band_capacities(&edges, load);
        prop_assert!(caps.iter().all(|&c| c >= 0.0));
        let total: f64 = caps.iter().sum();
        prop_assert!((total - (edges[2] - load).max(0.0)).abs() < 1e-6);
    }

    #[test]
    fn fill_bands_conserves_import(
        caps in proptest::array::uniform3(0.0f64..1e5),
        import in -5e4f64..4e5,
    ) {
        let (bands, overflow) = fill_bands(&caps, import);
        let sum: f64 = bands.iter().sum::<f64>() + overflow;
        prop_assert!((sum - import.max(0.0)).abs() < 1e-6);
        for b in 0..3 {
            prop_assert!(bands[b] <= caps[b] + 1e-9 && bands[b] >= 0.0);
        }
        // Cheaper bands are exhausted before dearer ones are touched.
        for b in 1..3 {
            if bands[b] > 0.0 {
                prop_assert!((bands[b - 1] - caps[b - 1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn soc_step_inverts(soc in 0.0f64..100.0, delta in -50.0f64..50.0, cap in 10.0f64..100.0) {
        let p = power_for_soc_delta(delta, 0.25, cap);
        prop_assert!((soc_step(soc, p, 0.25, cap) - soc - delta).abs() < 1e-9);
    }

    #[test]
    fn uncontrolled_charging_conserves_energy(seed in 0u64..1_000) {
        let net = fixtures::feeder13(1);
        let points = fixtures::demo_points();
        let sessions = generate_sessions(&net, &points, 1, seed, &SessionProfile::default()).unwrap();
        validate_sessions(&sessions, &points).unwrap();
        let s = uncontrolled_schedule(&sessions, points.len(), net.horizon(), net.step_hours());
        prop_assert!(s.energy_bookkeeping_error(&sessions) < 1e-9);
        for (i, sess) in sessions.iter().enumerate() {
            prop_assert!(s.final_soc(i) <= sess.soc_max + 1e-9);
            prop_assert!(sess.departure <= net.horizon());
        }
    }

    #[test]
    fn generated_points_stay_on_the_network(count in 1usize..80, seed in 0u64..100) {
        let net = fixtures::feeder13(1);
        let pts = place_points(&net, count, seed, 11_000.0).unwrap();
        prop_assert_eq!(pts.len(), count);
        prop_assert!(pts.iter().all(|p| net.bus_index(p.bus).is_some() && p.bus != 0));
    }
}

fn scaled(schedule: &ChargeSchedule, sessions: &[EvSession], n_points: usize, horizon: usize, f: f64) -> ChargeSchedule {
    let traces: Vec<Vec<f64>> = sessions
        .iter()
        .map(|s| schedule.session_powers(s).iter().map(|p| p * f).collect())
        .collect();
    ChargeSchedule::from_session_powers(sessions, n_points, horizon, schedule.step_hours, &traces)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn violation_counts_grow_with_ev_power(seed in 0u64..50) {
        let net = fixtures::feeder13(1);
        let points = fixtures::demo_points();
        let sessions = generate_sessions(&net, &points, 1, seed, &SessionProfile::default()).unwrap();
        let s = uncontrolled_schedule(&sessions, points.len(), net.horizon(), net.step_hours());
        let big = scaled(&s, &sessions, points.len(), net.horizon(), 1.1);
        let opts = ValidationOptions::default();
        let a = validate(&net, &points, &s, &opts).unwrap().counts;
        let b = validate(&net, &points, &big, &opts).unwrap().counts;
        prop_assert!(b.line_congestion >= a.line_congestion);
        prop_assert!(b.transformer_line >= a.transformer_line);
        prop_assert!(b.transformer >= a.transformer);
        prop_assert!(b.undervoltage >= a.undervoltage);
    }
}
