use ircard::localization::{forward_rise_map, locate_argmax, Localizer, LocateOptions, RiseMap};
use ircard::radiation::Patch;
use ircard::thermal::{CardSpec, HeatSource};
use ircard::Error;
use proptest::prelude::*;

const GAP: f64 = 0.010;

fn source_at(x: f64, y: f64) -> HeatSource {
    HeatSource::prescribed(Patch::square(x, y, 0.010, GAP), 70.0)
}

fn rises(card: &CardSpec, x: f64, y: f64) -> RiseMap {
    forward_rise_map(&source_at(x, y), card, GAP, 21.0).unwrap()
}

#[test]
fn noiseless_round_trip_is_sub_millimetre() {
    let card = CardSpec::default();
    let loc = Localizer::new(&card, GAP, 0.010, LocateOptions::default()).unwrap();
    for (x, y) in [(0.0, 0.0), (0.0071, -0.0033), (-0.016, 0.011)] {
        let e = loc.locate(&rises(&card, x, y)).unwrap();
        assert!(
            (e.x - x).hypot(e.y - y) < 1e-3,
            "({x}, {y}) -> ({}, {})",
            e.x,
            e.y
        );
        assert!((e.strength - 70.0).abs() < 0.5);
        assert!(e.converged);
    }
}

#[test]
fn mirrored_map_gives_mirrored_estimate() {
    let card = CardSpec::default();
    let loc = Localizer::new(&card, GAP, 0.010, LocateOptions::default()).unwrap();
    let map = rises(&card, 0.0052, -0.004);
    let a = loc.locate(&map).unwrap();
    let b = loc.locate(&map.mirrored_cols()).unwrap();
    assert!(
        (a.x + b.x).abs() < 1e-4 && (a.y - b.y).abs() < 1e-4,
        "{a:?} vs {b:?}"
    );
}

#[test]
fn dead_pixel_is_ignored() {
    let card = CardSpec::default();
    let loc = Localizer::new(&card, GAP, 0.010, LocateOptions::default()).unwrap();
    let mut map = rises(&card, 0.003, 0.002);
    map.rises[5] = 1e6;
    map.mask_pixel(1, 1);
    let e = loc.locate(&map).unwrap();
    assert!((e.x - 0.003).hypot(e.y - 0.002) < 1e-3);
}

#[test]
fn cold_map_is_no_detection() {
    let card = CardSpec::default();
    let loc = Localizer::new(&card, GAP, 0.010, LocateOptions::default()).unwrap();
    let map = RiseMap::new(4, 4, vec![0.05; 16], GAP).unwrap();
    assert!(matches!(loc.locate(&map), Err(Error::NoDetection { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn argmax_ignores_positive_scaling(x in -0.02..0.02f64, y in -0.02..0.02f64, k in 0.1..10.0f64) {
        let card = CardSpec::default();
        let map = rises(&card, x, y);
        let a = locate_argmax(&map, 0.0).unwrap();
        let b = locate_argmax(&map.scaled(k), 0.0).unwrap();
        prop_assert_eq!((a.row, a.col), (b.row, b.col));
    }

    #[test]
    fn one_pitch_shift_moves_the_argmax_one_column(r in 0usize..4, c in 0usize..3) {
        let card = CardSpec::default();
        let (x, y) = card.pixel_center(r, c);
        let here = locate_argmax(&rises(&card, x, y), 0.0).unwrap();
        let there = locate_argmax(&rises(&card, x + card.pitch, y), 0.0).unwrap();
        prop_assert_eq!((here.row, here.col), (r, c));
        prop_assert_eq!((there.row, there.col), (r, c + 1));
    }
}
