mod common;

use ircard::radiation::Patch;
use ircard::thermal::{
    build_network, pixel_name, run_transient, solve_steady, CardSpec, EdgeKind, Exposure,
    HeatSource, Terminal, ThermalNetwork, TransientSolver,
};
use proptest::prelude::*;

const AMBIENT: f64 = 21.0;

fn plate(temperature: f64, gap: f64) -> HeatSource {
    HeatSource::prescribed(Patch::square(0.0, 0.0, 0.100, gap), temperature)
}

fn steady_plates(card: &CardSpec, source: HeatSource) -> Vec<f64> {
    let net = build_network(card, AMBIENT).unwrap();
    let ex = Exposure::new(&net, vec![source]).unwrap();
    solve_steady(&net, &ex).unwrap().temperatures
}

#[test]
fn steady_state_balances_absorbed_and_lost_heat() {
    let card = CardSpec::default();
    let net = build_network(&card, AMBIENT).unwrap();
    let source = HeatSource::prescribed(Patch::square(0.004, -0.006, 0.02, 0.012), 120.0);
    let ex = Exposure::new(&net, vec![source]).unwrap();
    let s = solve_steady(&net, &ex).unwrap();
    let absorbed: f64 = ex.radiative_injection(&s.temperatures).iter().sum();
    let lost = net.heat_to_ambient(&s.temperatures);
    assert!(
        ((absorbed - lost) / lost).abs() < 1e-6,
        "{absorbed} W in, {lost} W out"
    );
}

#[test]
fn implicit_step_conserves_energy() {
    let card = CardSpec::default();
    let mut net = build_network(&card, AMBIENT).unwrap();
    net.add_power(5, 0.05);
    net.add_power(20, 0.01);
    let mut ex = Exposure::none();
    let dt = 0.5;
    let solver = TransientSolver::new(&net, &ex, dt).unwrap();
    for _ in 0..10 {
        let before = net.temperatures();
        solver.step(&mut net, &mut ex).unwrap();
        let after = net.temperatures();
        let stored: f64 = net
            .nodes
            .iter()
            .zip(before.iter().zip(&after))
            .map(|(n, (b, a))| n.capacitance * (a - b) / dt)
            .sum();
        let balance = 0.06 - net.heat_to_ambient(&after);
        assert!((stored - balance).abs() < 1e-10, "{stored} vs {balance}");
    }
}

#[test]
fn rc_node_follows_exponential() {
    let (c, g, p) = (3.0, 0.5, 2.0);
    let mut net = ThermalNetwork::new(AMBIENT);
    let n = net.add_node("n", c);
    net.connect(n, Terminal::Ambient, g, EdgeKind::Other);
    net.add_power(n, p);
    let mut ex = Exposure::none();
    let s = run_transient(&mut net, &mut ex, 30.0, 1e-3, 1.5).unwrap();
    for (t, nodes) in s.times.iter().zip(&s.nodes) {
        let want = common::rc_step(p, g, c, *t);
        assert!((nodes[n] - AMBIENT - want).abs() < 1e-3 * p / g, "t={t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hotter_source_heats_every_node(t in 30.0..200.0f64, extra in 1.0..50.0f64, gap in 0.01..0.1f64) {
        let card = CardSpec::default();
        let low = steady_plates(&card, plate(t, gap));
        let high = steady_plates(&card, plate(t + extra, gap));
        for (l, h) in low.iter().zip(&high) {
            prop_assert!(h > l);
        }
    }

    #[test]
    fn temperatures_stay_between_ambient_and_source(t in 22.0..250.0f64, x in -0.02..0.02f64, y in -0.02..0.02f64) {
        let card = CardSpec::default();
        let source = HeatSource::prescribed(Patch::square(x, y, 0.015, 0.012), t);
        for v in steady_plates(&card, source) {
            prop_assert!(v >= AMBIENT && v <= t, "{v} outside [{AMBIENT}, {t}]");
        }
    }
}

#[test]
fn centered_source_gives_symmetric_map() {
    let card = CardSpec::default();
    let t = steady_plates(&card, plate(80.0, 0.02));
    let at = |r: usize, c: usize| t[r * card.cols + c];
    for r in 0..card.rows {
        for c in 0..card.cols {
            let rise = at(r, c) - AMBIENT;
            for other in [at(r, card.cols - 1 - c), at(card.rows - 1 - r, c), at(c, r)] {
                assert!(
                    ((other - AMBIENT) - rise).abs() <= 1e-9 * rise,
                    "{}",
                    pixel_name(r, c)
                );
            }
        }
    }
}

#[test]
fn second_board_rows_see_the_same_rise() {
    // Two rows mirror each other about a source centered on the card.
    let card = CardSpec::second_board();
    let source = HeatSource::prescribed(Patch::square(-0.00625, 0.0, 0.015, 0.010), 90.0);
    let t = steady_plates(&card, source);
    let (a2, b2) = (t[1] - AMBIENT, t[card.cols + 1] - AMBIENT);
    assert!(((a2 - b2) / a2).abs() < 1e-6, "A2 {a2} vs B2 {b2}");
}

#[test]
fn long_transient_reaches_steady_state() {
    let card = CardSpec::default();
    let mut net = build_network(&card, AMBIENT).unwrap();
    let tau = net.time_constants()[0];
    let mut ex = Exposure::new(&net, vec![plate(60.0, 0.01)]).unwrap();
    let steady = solve_steady(&net, &ex).unwrap();
    let end = 20.0 * tau;
    let s = run_transient(&mut net, &mut ex, end, 0.5, end).unwrap();
    for (a, b) in s.last().unwrap().iter().zip(&steady.temperatures) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn doubling_small_power_doubles_every_rise() {
    let card = CardSpec::default();
    let powered =
        |p: f64| HeatSource::powered(Patch::square(-0.004, 0.003, 0.015, 0.010), p, 35.7, 2.5);
    let one = steady_plates(&card, powered(0.010));
    let two = steady_plates(&card, powered(0.020));
    for (a, b) in one.iter().zip(&two) {
        let ratio = (b - AMBIENT) / (a - AMBIENT);
        assert!((ratio - 2.0).abs() < 0.01, "ratio {ratio}");
    }
}

#[test]
fn powered_source_settles_at_its_thermal_resistance() {
    let card = CardSpec::default();
    let net = build_network(&card, AMBIENT).unwrap();
    // Far away the card barely loads the source: T_s ≈ ambient + P·R.
    let src = HeatSource::powered(Patch::square(0.0, 0.0, 0.01, 0.5), 1.0, 20.0, 2.0);
    let ex = Exposure::new(&net, vec![src]).unwrap();
    let s = solve_steady(&net, &ex).unwrap();
    assert!((s.source_temperatures[0] - (AMBIENT + 20.0)).abs() < 0.01);
}
