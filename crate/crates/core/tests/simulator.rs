use matchradius::geo::LonLat;
use matchradius::market::{grid_index, BBox, GridSpec, Order, OrderStatus};
use matchradius::sim::{read_window_log, run, write_window_log, RadiusSchedule, SimConfig, Simulator};
use proptest::prelude::*;

const START: f64 = 8.0 * 3600.0;
const HORIZON: f64 = 1800.0;

fn grid() -> GridSpec {
    GridSpec::new(BBox::new(0.0, 0.0, 0.04, 0.04), 2).unwrap()
}

fn orders(raw: &[(f64, f64, f64, f64, f64)]) -> Vec<Order> {
    let g = grid();
    let mut out: Vec<Order> = raw
        .iter()
        .map(|&(t, x0, y0, x1, y1)| {
            let origin = LonLat::new(x0 * 0.04, y0 * 0.04);
            Order::new(0, START + t * HORIZON, origin, LonLat::new(x1 * 0.04, y1 * 0.04), 10.0, grid_index(origin, &g))
        })
        .collect();
    out.sort_by(|a, b| a.created_s.total_cmp(&b.created_s));
    for (i, o) in out.iter_mut().enumerate() {
        o.id = i as u64;
    }
    out
}

fn scenario() -> impl Strategy<Value = (usize, u64, Vec<Order>, Vec<Vec<f64>>)> {
    let order = (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64);
    let radii = prop::collection::vec(prop::collection::vec(prop::sample::select(vec![0.5, 1.0, 2.0, 4.0]), 4), 6);
    (1usize..12, any::<u64>(), prop::collection::vec(order, 0..120), radii)
        .prop_map(|(drivers, seed, raw, radii)| (drivers, seed, orders(&raw), radii))
}

fn config(drivers: usize, seed: u64) -> SimConfig {
    SimConfig {
        seed,
        start_s: START,
        ..SimConfig::new(grid(), drivers, 20.0)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn orders_are_conserved_and_radii_respected((drivers, seed, stream, radii) in scenario()) {
        let cfg = config(drivers, seed);
        let window_s = cfg.window_s;
        let mut sim = Simulator::new(cfg, stream.clone(), RadiusSchedule(radii.clone())).unwrap();
        for _ in 0..(HORIZON / 10.0) as usize {
            sim.step().unwrap();
            let injected = stream.iter().filter(|o| o.created_s < sim.clock()).count();
            let n = |s| sim.orders().iter().filter(|o| o.status == s).count();
            prop_assert_eq!(n(OrderStatus::Matched) + n(OrderStatus::Expired) + n(OrderStatus::Open), injected);
            prop_assert!(sim.counts().conserved());
            prop_assert_eq!(sim.drivers().len(), drivers);
        }
        for o in sim.orders().iter().filter(|o| o.status == OrderStatus::Matched) {
            let w = ((o.matched_s.unwrap() - START) / window_s).floor() as usize;
            prop_assert!(o.pickup_km.unwrap() <= radii[w][o.grid.unwrap()] + 1e-9);
            prop_assert!(o.matched_s.unwrap() >= o.created_s);
        }
        for o in sim.orders().iter().filter(|o| o.status == OrderStatus::Expired) {
            prop_assert!(o.matched_s.is_none());
        }
    }

    #[test]
    fn window_metrics_are_well_formed((drivers, seed, stream, radii) in scenario()) {
        let out = run(&config(drivers, seed), stream, HORIZON, RadiusSchedule(radii.clone())).unwrap();
        prop_assert_eq!(out.windows.len(), 6 * 4);
        for w in &out.windows {
            prop_assert!((0.0..=1.0).contains(&w.metrics.ofr));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&w.metrics.dur));
            prop_assert!(w.metrics.apd >= 0.0 && w.metrics.pr >= 0.0);
            prop_assert_eq!(w.radius_km, radii[w.window][w.grid]);
            prop_assert!(w.n_idle <= w.n_vehicles);
        }
        let s = out.summary;
        prop_assert_eq!(s.matched + s.expired <= s.orders, true);
        prop_assert_eq!(out.matches.len(), s.matched);
    }

    #[test]
    fn same_seed_same_log((drivers, seed, stream, radii) in scenario()) {
        let a = run(&config(drivers, seed), stream.clone(), HORIZON, RadiusSchedule(radii.clone())).unwrap();
        let b = run(&config(drivers, seed), stream, HORIZON, RadiusSchedule(radii)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn window_log_round_trips_through_csv() {
    let raw: Vec<_> = (0..60).map(|i| (i as f64 / 60.0, 0.3, 0.4, 0.9, 0.1)).collect();
    let out = run(&config(5, 3), orders(&raw), HORIZON, RadiusSchedule(vec![vec![1.0; 4]])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.csv");
    write_window_log(&path, &out.windows).unwrap();
    let back = read_window_log(&path).unwrap();
    assert_eq!(back.len(), out.windows.len());
    for (a, b) in back.iter().zip(&out.windows) {
        assert_eq!((a.grid, a.window, a.n_idle, a.n_open, a.n_vehicles), (b.grid, b.window, b.n_idle, b.n_open, b.n_vehicles));
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.radius_km, b.radius_km);
        assert_eq!(a.window_start_s, b.window_start_s);
    }
}
