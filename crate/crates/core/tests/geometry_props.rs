use covsched::geometry::{
    pattern_exit_point, pattern_path_length, pattern_polyline, polyline_length, schedule_cost,
    validate_schedule, Area, Pattern, PatternKind, Point, Violation,
};
use covsched::mapgen::{generate_map_seeded, RadiusRange};
use covsched::{AreaMap, CostModel, Decision, Schedule};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_schedule(n: usize, seed: u64) -> Vec<Decision> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .map(|a| Decision::new(a, rng.gen_range(0..4), rng.gen_range(0..3)))
        .collect()
}

fn transformed(map: &AreaMap, f: impl Fn(Point) -> Point) -> AreaMap {
    let areas = map.areas().iter().map(|a| a.map_points(&f).unwrap()).collect();
    AreaMap::unnormalized(areas).unwrap()
}

fn cost_model(lambda: f64, closed: bool, lanes: usize) -> CostModel {
    CostModel {
        lanes,
        lambda_intra: lambda,
        closed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_is_translation_invariant(
        seed in 0u64..10_000,
        n in 1usize..10,
        dx in -5.0f64..5.0,
        dy in -5.0f64..5.0,
        lambda in 0.0f64..2.0,
        closed: bool,
    ) {
        let map = generate_map_seeded(n, RadiusRange::default(), seed).unwrap();
        let moved = transformed(&map, |p| Point::new(p.x + dx, p.y + dy));
        let d = random_schedule(n, seed);
        let cm = cost_model(lambda, closed, 5);
        let a = schedule_cost(&map, &d, &cm).unwrap();
        let b = schedule_cost(&moved, &d, &cm).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn cost_scales_linearly(
        seed in 0u64..10_000,
        n in 1usize..10,
        s in 0.1f64..20.0,
        lambda in 0.0f64..2.0,
        lanes in 2usize..9,
    ) {
        let map = generate_map_seeded(n, RadiusRange::default(), seed).unwrap();
        let scaled = transformed(&map, |p| Point::new(p.x * s, p.y * s));
        let d = random_schedule(n, seed + 1);
        let cm = cost_model(lambda, true, lanes);
        let a = schedule_cost(&map, &d, &cm).unwrap();
        let b = schedule_cost(&scaled, &d, &cm).unwrap();
        prop_assert!((a * s - b).abs() <= 1e-9 * b.max(1.0), "{} vs {b}", a * s);
    }

    // With an odd lane count both zig-zags leave from the opposite corner.
    #[test]
    fn swapping_zigzags_with_shared_exit_keeps_cost(
        seed in 0u64..10_000,
        n in 2usize..10,
        lanes in prop::sample::select(vec![3usize, 5, 7, 9]),
        lambda in 0.0f64..2.0,
    ) {
        let map = generate_map_seeded(n, RadiusRange::default(), seed).unwrap();
        let cm = cost_model(lambda, true, lanes);
        let d: Vec<Decision> = random_schedule(n, seed).into_iter().map(|x| Decision::new(x.area, x.corner, 0)).collect();
        let swapped: Vec<Decision> = d.iter().map(|x| Decision::new(x.area, x.corner, 1)).collect();
        let a = schedule_cost(&map, &d, &cm).unwrap();
        let b = schedule_cost(&map, &swapped, &cm).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn rotating_a_closed_schedule_keeps_cost(seed in 0u64..10_000, n in 1usize..10, r in 0usize..10) {
        let map = generate_map_seeded(n, RadiusRange::default(), seed).unwrap();
        let cm = CostModel::default();
        let d = random_schedule(n, seed);
        let mut rotated = d.clone();
        rotated.rotate_left(r % n);
        let a = schedule_cost(&map, &d, &cm).unwrap();
        let b = schedule_cost(&map, &rotated, &cm).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn polyline_starts_at_corner_and_ends_at_exit(
        x in 0.1f64..0.9,
        y in 0.1f64..0.9,
        half in 0.001f64..0.1,
        corner in 0usize..4,
        lanes in 2usize..12,
        kind in prop::sample::select(PatternKind::ALL.to_vec()),
    ) {
        let area = Area::square(Point::new(x, y), half).unwrap();
        let pattern = Pattern::new(kind, lanes).unwrap();
        let pts = pattern_polyline(&area, corner, pattern);
        prop_assert!(pts[0].distance(area.corner(corner)) <= 1e-12);
        prop_assert!(pts.last().unwrap().distance(pattern_exit_point(&area, corner, pattern)) <= 1e-12);
        prop_assert!(pts.iter().all(|p| area.contains(*p, 1e-12)));
        let len = pattern_path_length(&area, corner, pattern);
        prop_assert!((len - polyline_length(&pts)).abs() <= 1e-12);
    }
}

#[test]
fn spiral_length_depends_only_on_side() {
    let area = Area::square(Point::new(0.3, 0.6), 0.05).unwrap();
    for lanes in 2..10 {
        let pattern = Pattern::new(PatternKind::Spiral, lanes).unwrap();
        let lengths: Vec<f64> = (0..4).map(|c| pattern_path_length(&area, c, pattern)).collect();
        assert!(lengths.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12), "{lengths:?}");
        assert_eq!(pattern_exit_point(&area, 0, pattern), area.center());
    }
}

#[test]
fn lambda_zero_means_flight_only() {
    let map = generate_map_seeded(6, RadiusRange::default(), 9).unwrap();
    let d = random_schedule(6, 9);
    let cm = CostModel::default();
    let s = Schedule::evaluate(&map, d.clone(), &cm).unwrap();
    let flights: f64 = (0..6)
        .map(|t| s.exit_points[t].distance(s.entry_points[(t + 1) % 6]))
        .sum();
    assert!((s.total_cost - flights).abs() < 1e-12);
    let with_service = schedule_cost(&map, &d, &CostModel { lambda_intra: 1.0, ..cm }).unwrap();
    assert!(with_service > s.total_cost);
}

#[test]
fn invalid_schedules_are_reported() {
    let map = generate_map_seeded(3, RadiusRange::default(), 1).unwrap();
    let dup = vec![Decision::new(0, 0, 0), Decision::new(0, 1, 0), Decision::new(2, 0, 0)];
    let v = validate_schedule(&map, &dup);
    assert!(v.iter().any(|x| x.to_string() == "area 0 visited twice"), "{v:?}");
    assert!(v.iter().any(|x| *x == Violation::AreaMissing { area: 1 }), "{v:?}");
    assert!(schedule_cost(&map, &dup, &CostModel::default()).is_err());
    let bad_corner = vec![Decision::new(0, 4, 0), Decision::new(1, 0, 0), Decision::new(2, 0, 0)];
    assert!(!validate_schedule(&map, &bad_corner).is_empty());
}

#[test]
fn non_square_is_rejected() {
    let corners = [
        Point::new(0.0, 0.0),
        Point::new(0.2, 0.0),
        Point::new(0.2, 0.1),
        Point::new(0.0, 0.1),
    ];
    assert!(Area::from_corners(corners).is_err());
}
