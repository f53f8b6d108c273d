//! Discrete-time simulator of broadcast matching.
//!
//! Each tick injects new orders, expires stale ones, runs one broadcast round
//! (oldest order first, every idle driver bids at most once), moves busy
//! drivers and accrues driver time. At every window boundary the simulator
//! emits one [`MarketWindow`] per grid and asks its [`RadiusSource`] for the
//! radii of the next window.

mod log;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{sample_accept, AcceptanceModel};
use crate::geo::{LonLat, Projection};
use crate::market::{
    compute_window_metrics, time_of_day, BBox, Driver, DriverStatus, DriverTime, GridSpec, MarketWindow, Order,
    OrderStatus, TimeOfDay, TimeOfDayBoundaries, TimeWindow,
};
use crate::{Error, Result};

pub use log::{read_window_log, write_summary, write_window_log, WindowLogRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub tick_s: f64,
    /// Metric and decision window.
    pub window_s: f64,
    pub speed_kmh: f64,
    pub drivers: usize,
    pub grid: GridSpec,
    /// Orders still open after this long expire.
    pub patience_s: f64,
    pub seed: u64,
    /// Clock at the first tick, in seconds since midnight.
    pub start_s: f64,
    pub acceptance: AcceptanceModel<f64>,
    pub time_of_day: TimeOfDayBoundaries,
    /// Idle drivers wander instead of waiting in place.
    pub random_walk: bool,
}

impl SimConfig {
    pub fn new(grid: GridSpec, drivers: usize, speed_kmh: f64) -> Self {
        Self {
            tick_s: 10.0,
            window_s: 300.0,
            speed_kmh,
            drivers,
            grid,
            patience_s: 300.0,
            seed: 0,
            start_s: 0.0,
            acceptance: AcceptanceModel::default(),
            time_of_day: TimeOfDayBoundaries::default(),
            random_walk: false,
        }
    }

    /// Hong Kong-like preset: 200 drivers at 20.6 km/h over a 4×4 grid.
    pub fn hong_kong() -> Self {
        let bbox = BBox::new(114.130, 22.245, 114.188, 22.299);
        Self::new(GridSpec { bbox, side_count: 4 }, 200, 20.6)
    }

    /// Manhattan-like preset: 500 drivers at 22.79 km/h over a 4×4 grid.
    pub fn manhattan() -> Self {
        let bbox = BBox::new(-74.010, 40.705, -73.915, 40.777);
        Self::new(GridSpec { bbox, side_count: 4 }, 500, 22.79)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.acceptance.validate()?;
        self.time_of_day.validate()?;
        if !(self.tick_s > 0.0 && self.window_s > 0.0) {
            return Err(Error::Config("tick and window lengths must be positive".into()));
        }
        let ratio = self.window_s / self.tick_s;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "tick {} s does not divide window {} s",
                self.tick_s, self.window_s
            )));
        }
        if !(self.speed_kmh > 0.0 && self.speed_kmh.is_finite()) {
            return Err(Error::Config(format!("speed must be positive, got {}", self.speed_kmh)));
        }
        if self.patience_s < self.tick_s {
            return Err(Error::Config("order patience must be at least one tick".into()));
        }
        if !self.start_s.is_finite() {
            return Err(Error::Config("start time must be finite".into()));
        }
        Ok(())
    }

    pub fn ticks_per_window(&self) -> usize {
        (self.window_s / self.tick_s).round() as usize
    }
}

/// Market state of one grid at a window boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GridSnapshot {
    pub n_idle: u32,
    pub n_open: u32,
    pub n_vehicles: u32,
}

/// What a radius source sees when a window opens.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    /// Index of the window about to start.
    pub window: usize,
    pub window_start_s: f64,
    pub tod: TimeOfDay,
    /// Every completed window row so far, ordered by window then grid.
    pub history: &'a [MarketWindow],
    /// Per-grid state at the boundary.
    pub snapshot: &'a [GridSnapshot],
}

impl<'a> DecisionContext<'a> {
    pub fn grid_count(&self) -> usize {
        self.snapshot.len()
    }

    /// Completed rows for one grid, oldest first.
    pub fn grid_history(&self, grid: usize) -> impl Iterator<Item = &'a MarketWindow> + 'a {
        let n = self.grid_count();
        let history: &'a [MarketWindow] = self.history;
        history.iter().skip(grid).step_by(n.max(1))
    }
}

/// Decides the per-grid radii of each window.
pub trait RadiusSource {
    /// One radius (km) per grid for the window described by `ctx`.
    fn radii(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>>;
}

/// The same radius everywhere, always.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedRadius(pub f64);

impl RadiusSource for FixedRadius {
    fn radii(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>> {
        Ok(vec![self.0; ctx.grid_count()])
    }
}

/// Pre-set per-grid radii per window; the last entry repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSchedule(pub Vec<Vec<f64>>);

impl RadiusSource for RadiusSchedule {
    fn radii(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>> {
        let row = self
            .0
            .get(ctx.window)
            .or(self.0.last())
            .ok_or_else(|| Error::Config("empty radius schedule".into()))?;
        if row.len() != ctx.grid_count() {
            return Err(Error::Config(format!(
                "schedule row has {} radii for {} grids",
                row.len(),
                ctx.grid_count()
            )));
        }
        Ok(row.clone())
    }
}

impl<S: RadiusSource + ?Sized> RadiusSource for &mut S {
    fn radii(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>> {
        (**self).radii(ctx)
    }
}

impl<S: RadiusSource + ?Sized> RadiusSource for Box<S> {
    fn radii(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>> {
        (**self).radii(ctx)
    }
}

/// A committed match, kept for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub order: u64,
    pub driver: u32,
    pub at_s: f64,
    pub pickup_km: f64,
    pub radius_km: f64,
}

/// Order bookkeeping totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OrderCounts {
    pub injected: usize,
    pub matched: usize,
    pub expired: usize,
    pub open: usize,
}

impl OrderCounts {
    pub fn conserved(&self) -> bool {
        self.matched + self.expired + self.open == self.injected
    }
}

/// Episode-level metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub ofr: f64,
    pub dur: f64,
    pub pr: f64,
    pub apd: f64,
    pub orders: usize,
    pub matched: usize,
    pub expired: usize,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub windows: Vec<MarketWindow>,
    pub summary: EpisodeSummary,
    pub matches: Vec<MatchRecord>,
}

/// Full simulator state. Drive it with [`Simulator::step`] or use [`run`].
pub struct Simulator<S> {
    cfg: SimConfig,
    proj: Projection,
    source: S,
    rng: ChaCha8Rng,
    clock: f64,
    stream: Vec<Order>,
    next_inject: usize,
    orders: Vec<Order>,
    open: Vec<usize>,
    drivers: Vec<Driver>,
    radii: Vec<f64>,
    window: usize,
    window_start: f64,
    tick_in_window: usize,
    snapshot: Vec<GridSnapshot>,
    /// Orders created or matched in the current window, per grid.
    window_orders: Vec<Vec<usize>>,
    window_time: Vec<DriverTime>,
    log: Vec<MarketWindow>,
    matches: Vec<MatchRecord>,
    counts: OrderCounts,
}

impl<S: RadiusSource> Simulator<S> {
    /// Places the drivers, takes the first snapshot and asks `source` for the
    /// first window's radii. `stream` must be sorted by creation time.
    pub fn new(cfg: SimConfig, stream: Vec<Order>, source: S) -> Result<Self> {
        cfg.validate()?;
        if let Some(i) = stream.windows(2).position(|w| w[1].created_s < w[0].created_s) {
            return Err(Error::UnsortedStream(i + 1));
        }
        let cells = cfg.grid.cell_count();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let b = cfg.grid.bbox;
        let drivers = (0..cfg.drivers)
            .map(|id| {
                let lon = b.min_lon + rng.random::<f64>() * (b.max_lon - b.min_lon);
                let lat = b.min_lat + rng.random::<f64>() * (b.max_lat - b.min_lat);
                Driver::new(id as u32, LonLat::new(lon, lat))
            })
            .collect();
        let mut sim = Self {
            proj: b.projection(),
            source,
            rng,
            clock: cfg.start_s,
            stream,
            next_inject: 0,
            orders: Vec::new(),
            open: Vec::new(),
            drivers,
            radii: Vec::new(),
            window: 0,
            window_start: cfg.start_s,
            tick_in_window: 0,
            snapshot: Vec::new(),
            window_orders: vec![Vec::new(); cells],
            window_time: vec![DriverTime::default(); cells],
            log: Vec::new(),
            matches: Vec::new(),
            counts: OrderCounts::default(),
            cfg,
        };
        sim.open_window()?;
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn counts(&self) -> OrderCounts {
        self.counts
    }

    pub fn drivers(&self) -> &[Driver] {
        &self.drivers
    }

    pub fn orders(&self) -> &[Order] {
        &self.orders
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn window_log(&self) -> &[MarketWindow] {
        &self.log
    }

    pub fn matches(&self) -> &[MatchRecord] {
        &self.matches
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn into_source(self) -> S {
        self.source
    }

    /// Grid of a point, clamping boundary points into the box.
    fn cell_of(&self, p: LonLat) -> usize {
        let g = &self.cfg.grid;
        g.index(p).unwrap_or_else(|| {
            let n = g.side_count;
            let col = ((p.lon - g.bbox.min_lon) / g.cell_width()).floor().clamp(0.0, (n - 1) as f64) as usize;
            let row = ((p.lat - g.bbox.min_lat) / g.cell_height()).floor().clamp(0.0, (n - 1) as f64) as usize;
            row * n + col
        })
    }

    fn take_snapshot(&self) -> Vec<GridSnapshot> {
        let mut snap = vec![GridSnapshot::default(); self.cfg.grid.cell_count()];
        for d in &self.drivers {
            let s = &mut snap[self.cell_of(d.position)];
            s.n_vehicles += 1;
            if d.is_idle() {
                s.n_idle += 1;
            }
        }
        for &i in &self.open {
            if let Some(g) = self.orders[i].grid {
                snap[g].n_open += 1;
            }
        }
        snap
    }

    fn open_window(&mut self) -> Result<()> {
        self.snapshot = self.take_snapshot();
        let ctx = DecisionContext {
            window: self.window,
            window_start_s: self.window_start,
            tod: time_of_day(self.window_start, &self.cfg.time_of_day),
            history: &self.log,
            snapshot: &self.snapshot,
        };
        let radii = self.source.radii(&ctx)?;
        if radii.len() != self.snapshot.len() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("radius source returned invalid radii {radii:?}")));
        }
        self.radii = radii;
        Ok(())
    }

    fn close_window(&mut self) {
        let window = TimeWindow {
            start_s: self.window_start,
            end_s: self.clock,
        };
        let tod = time_of_day(self.window_start, &self.cfg.time_of_day);
        for grid in 0..self.snapshot.len() {
            let metrics = compute_window_metrics(
                self.window_orders[grid].iter().map(|&i| &self.orders[i]),
                &self.window_time[grid..=grid],
                &window,
            );
            let s = self.snapshot[grid];
            self.log.push(MarketWindow {
                grid,
                window: self.window,
                window_start_s: self.window_start,
                n_idle: s.n_idle,
                n_open: s.n_open,
                n_vehicles: s.n_vehicles,
                metrics,
                radius_km: self.radii[grid],
                tod,
            });
            self.window_orders[grid].clear();
            self.window_time[grid] = DriverTime::default();
        }
        self.window += 1;
        self.window_start = self.clock;
        self.tick_in_window = 0;
    }

    fn inject(&mut self, until: f64) {
        while let Some(o) = self.stream.get(self.next_inject) {
            if o.created_s >= until {
                break;
            }
            let idx = self.orders.len();
            self.orders.push(o.clone());
            self.next_inject += 1;
            self.open.push(idx);
            self.counts.injected += 1;
            self.counts.open += 1;
            if let Some(g) = o.grid {
                self.window_orders[g].push(idx);
            }
        }
    }

    fn expire(&mut self) {
        let (now, patience) = (self.clock, self.cfg.patience_s);
        let orders = &mut self.orders;
        let counts = &mut self.counts;
        self.open.retain(|&i| {
            if now - orders[i].created_s > patience {
                orders[i].mark_expired();
                counts.open -= 1;
                counts.expired += 1;
                false
            } else {
                true
            }
        });
    }

    fn broadcast(&mut self) {
        let mut bid = vec![false; self.drivers.len()];
        let mut accepters = Vec::new();
        let mut still_open = Vec::with_capacity(self.open.len());
        for &oi in &self.open {
            let order = &self.orders[oi];
            let Some(grid) = order.grid else {
                still_open.push(oi);
                continue;
            };
            let radius = self.radii[grid];
            accepters.clear();
            for (di, d) in self.drivers.iter().enumerate() {
                if bid[di] || !d.is_idle() {
                    continue;
                }
                let km = self.proj.distance_km(d.position, order.origin);
                if km <= radius && sample_accept(&self.cfg.acceptance, km, order.fare, &mut self.rng) {
                    bid[di] = true;
                    accepters.push((di, km));
                }
            }
            let Some(&(di, km)) = accepters.choose(&mut self.rng) else {
                still_open.push(oi);
                continue;
            };
            let at = order.created_s.max(self.clock);
            let order = &mut self.orders[oi];
            order.mark_matched(at, km);
            if order.created_s < self.window_start {
                // Created in an earlier window, so not yet listed for this one.
                self.window_orders[grid].push(oi);
            }
            let driver = &mut self.drivers[di];
            driver.status = DriverStatus::Pickup;
            driver.assignment = Some(oi);
            self.matches.push(MatchRecord {
                order: order.id,
                driver: driver.id,
                at_s: at,
                pickup_km: km,
                radius_km: radius,
            });
            self.counts.open -= 1;
            self.counts.matched += 1;
        }
        self.open = still_open;
    }

    /// Moves busy drivers and accrues driver time, attributed to the grid
    /// each driver occupies at the start of the tick.
    fn advance(&mut self) {
        let tick = self.cfg.tick_s;
        let budget_km = self.cfg.speed_kmh * tick / 3600.0;
        for di in 0..self.drivers.len() {
            let cell = self.cell_of(self.drivers[di].position);
            let mut busy_km = 0.0;
            let mut left = budget_km;
            while let Some(oi) = self.drivers[di].assignment {
                let d = &mut self.drivers[di];
                let target = match d.status {
                    DriverStatus::Pickup => self.orders[oi].origin,
                    _ => self.orders[oi].destination,
                };
                let dist = self.proj.distance_km(d.position, target);
                if dist > left {
                    let (x0, y0) = self.proj.to_km(d.position);
                    let (x1, y1) = self.proj.to_km(target);
                    let f = left / dist;
                    d.position = self.proj.from_km(x0 + f * (x1 - x0), y0 + f * (y1 - y0));
                    busy_km += left;
                    left = 0.0;
                    break;
                }
                d.position = target;
                busy_km += dist;
                left -= dist;
                if d.status == DriverStatus::Pickup {
                    d.status = DriverStatus::InService;
                } else {
                    d.status = DriverStatus::Idle;
                    d.assignment = None;
                }
            }
            let busy_s = if self.drivers[di].is_idle() {
                if budget_km > 0.0 { tick * busy_km / budget_km } else { 0.0 }
            } else {
                tick
            };
            let d = &mut self.drivers[di];
            if d.is_idle() && self.cfg.random_walk && left > 0.0 {
                let angle = self.rng.random::<f64>() * std::f64::consts::TAU;
                let (x, y) = self.proj.to_km(d.position);
                let cand = self.proj.from_km(x + left * angle.cos(), y + left * angle.sin());
                if self.cfg.grid.bbox.contains(cand) {
                    d.position = cand;
                }
            }
            d.occupied_s += busy_s;
            d.online_s += tick;
            let acc = &mut self.window_time[cell];
            acc.occupied_s += busy_s;
            acc.online_s += tick;
        }
    }

    /// Advances the world by one tick. Returns `true` when the tick closed a
    /// window.
    pub fn step(&mut self) -> Result<bool> {
        let tick_end = self.clock + self.cfg.tick_s;
        self.inject(tick_end);
        self.expire();
        self.broadcast();
        self.advance();
        self.tick_in_window += 1;
        self.clock = self.window_start + self.tick_in_window as f64 * self.cfg.tick_s;
        debug_assert!(self.counts.conserved());
        if self.tick_in_window == self.cfg.ticks_per_window() {
            self.close_window();
            self.open_window()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Episode summary over everything simulated so far.
    pub fn summary(&self) -> EpisodeSummary {
        let matched: Vec<&Order> = self.orders.iter().filter(|o| o.status == OrderStatus::Matched).collect();
        let (occupied, online) = self
            .drivers
            .iter()
            .fold((0.0, 0.0), |(a, b), d| (a + d.occupied_s, b + d.online_s));
        let n = self.counts.injected;
        EpisodeSummary {
            ofr: if n > 0 { matched.len() as f64 / n as f64 } else { 0.0 },
            dur: if online > 0.0 { occupied / online } else { 0.0 },
            pr: matched.iter().map(|o| o.fare).sum(),
            apd: if matched.is_empty() {
                0.0
            } else {
                matched.iter().map(|o| o.pickup_km.unwrap_or(0.0)).sum::<f64>() / matched.len() as f64
            },
            orders: n,
            matched: matched.len(),
            expired: self.counts.expired,
            windows: self.window,
        }
    }

    pub fn finish(self) -> (SimOutput, S) {
        let summary = self.summary();
        (
            SimOutput {
                windows: self.log,
                summary,
                matches: self.matches,
            },
            self.source,
        )
    }
}

/// Replays `stream` for `horizon_s` seconds, which must be a whole number of
/// windows.
pub fn run<S: RadiusSource>(cfg: &SimConfig, stream: Vec<Order>, horizon_s: f64, source: S) -> Result<SimOutput> {
    Ok(run_with_source(cfg, stream, horizon_s, source)?.0)
}

/// Like [`run`] but hands the radius source back.
pub fn run_with_source<S: RadiusSource>(
    cfg: &SimConfig,
    stream: Vec<Order>,
    horizon_s: f64,
    source: S,
) -> Result<(SimOutput, S)> {
    let windows = horizon_s / cfg.window_s;
    if !(windows >= 0.0) || (windows - windows.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "horizon {horizon_s} s is not a whole number of {} s windows",
            cfg.window_s
        )));
    }
    let mut sim = Simulator::new(cfg.clone(), stream, source)?;
    let ticks = windows.round() as usize * cfg.ticks_per_window();
    for _ in 0..ticks {
        sim.step()?;
    }
    Ok(sim.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 4 km × 4 km-ish box near the equator, one cell.
    fn small_config(drivers: usize) -> SimConfig {
        let grid = GridSpec::new(BBox::new(0.0, 0.0, 0.04, 0.04), 1).unwrap();
        SimConfig {
            acceptance: AcceptanceModel::new(50.0, 0.0, 0.0, 0.0).unwrap(),
            ..SimConfig::new(grid, drivers, 20.0)
        }
    }

    fn order_at(p: LonLat, t: f64) -> Order {
        Order::new(0, t, p, LonLat::new(0.035, 0.035), 5.0, Some(0))
    }

    fn with_drivers_at<S: RadiusSource>(cfg: SimConfig, stream: Vec<Order>, src: S, at: &[LonLat]) -> Simulator<S> {
        let mut sim = Simulator::new(cfg, stream, src).unwrap();
        for (d, p) in sim.drivers.iter_mut().zip(at) {
            d.position = *p;
        }
        sim
    }

    #[test]
    fn co_located_driver_matches_immediately() {
        let p = LonLat::new(0.01, 0.01);
        let mut sim = with_drivers_at(small_config(1), vec![order_at(p, 1.0)], FixedRadius(1.0), &[p]);
        sim.step().unwrap();
        assert_eq!(sim.orders()[0].status, OrderStatus::Matched);
        assert_eq!(sim.orders()[0].pickup_km, Some(0.0));
        while !sim.step().unwrap() {}
        let w = sim.window_log()[0];
        assert_eq!(w.metrics.ofr, 1.0);
        assert_eq!(w.metrics.apd, 0.0);
    }

    #[test]
    fn out_of_radius_order_expires() {
        let p = LonLat::new(0.01, 0.01);
        // About 2.2 km north of the order.
        let d = LonLat::new(0.01, 0.03);
        let mut sim = with_drivers_at(small_config(1), vec![order_at(p, 0.0)], FixedRadius(1.0), &[d]);
        for _ in 0..60 {
            sim.step().unwrap();
        }
        assert_eq!(sim.orders()[0].status, OrderStatus::Expired);
        assert_eq!(sim.window_log()[0].metrics.ofr, 0.0);
        assert!(sim.drivers()[0].is_idle());
    }

    #[test]
    fn two_bidders_one_winner_reproducibly() {
        let p = LonLat::new(0.01, 0.01);
        let near = [LonLat::new(0.011, 0.01), LonLat::new(0.01, 0.011)];
        let winner = |seed| {
            let cfg = SimConfig { seed, ..small_config(2) };
            let mut sim = with_drivers_at(cfg, vec![order_at(p, 0.0)], FixedRadius(1.0), &near);
            sim.step().unwrap();
            assert_eq!(sim.drivers().iter().filter(|d| d.is_idle()).count(), 1);
            assert_eq!(sim.counts().matched, 1);
            sim.matches()[0].driver
        };
        for seed in 0..8 {
            assert_eq!(winner(seed), winner(seed));
        }
        let winners: Vec<u32> = (0..32).map(winner).collect();
        assert!(winners.contains(&0) && winners.contains(&1));
    }

    #[test]
    fn driver_bids_once_per_tick() {
        let p = LonLat::new(0.01, 0.01);
        let stream = vec![order_at(p, 0.0), order_at(p, 0.5)];
        let mut sim = with_drivers_at(small_config(1), stream, FixedRadius(1.0), &[p]);
        sim.step().unwrap();
        assert_eq!(sim.counts().matched, 1);
        assert_eq!(sim.counts().open, 1);
    }

    #[test]
    fn zero_orders_give_zero_summary() {
        let out = run(&small_config(3), Vec::new(), 600.0, FixedRadius(2.0)).unwrap();
        let s = out.summary;
        assert_eq!((s.ofr, s.pr, s.apd, s.dur), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(s.windows, 2);
        assert_eq!(out.windows.len(), 2);
    }

    #[test]
    fn unsorted_stream_is_rejected() {
        let p = LonLat::new(0.01, 0.01);
        let stream = vec![order_at(p, 5.0), order_at(p, 1.0)];
        assert!(matches!(
            run(&small_config(1), stream, 300.0, FixedRadius(1.0)),
            Err(Error::UnsortedStream(1))
        ));
    }

    #[test]
    fn partial_horizon_is_rejected() {
        assert!(run(&small_config(1), Vec::new(), 250.0, FixedRadius(1.0)).is_err());
    }

    #[test]
    fn trip_completes_and_driver_becomes_idle() {
        let p = LonLat::new(0.01, 0.01);
        let mut sim = with_drivers_at(small_config(1), vec![order_at(p, 0.0)], FixedRadius(1.0), &[p]);
        let trip_km = sim.config().grid.bbox.projection().distance_km(p, LonLat::new(0.035, 0.035));
        for _ in 0..80 {
            sim.step().unwrap();
        }
        let d = &sim.drivers()[0];
        assert!(d.is_idle());
        assert_eq!(d.position, LonLat::new(0.035, 0.035));
        assert!((d.occupied_s - trip_km / 20.0 * 3600.0).abs() < 1e-6, "{}", d.occupied_s);
        assert_eq!(d.online_s, 800.0);
    }

    #[test]
    fn config_validation() {
        let good = small_config(1);
        assert!(good.validate().is_ok());
        assert!(SimConfig { tick_s: 7.0, ..good.clone() }.validate().is_err());
        assert!(SimConfig { speed_kmh: 0.0, ..good.clone() }.validate().is_err());
        assert!(SimConfig { patience_s: 5.0, ..good.clone() }.validate().is_err());
        assert!(SimConfig::manhattan().validate().is_ok());
        assert!(SimConfig::hong_kong().validate().is_ok());
    }

    #[test]
    fn schedule_changes_radius_per_window() {
        let cfg = small_config(1);
        let sched = RadiusSchedule(vec![vec![1.0], vec![3.0]]);
        let out = run(&cfg, Vec::new(), 900.0, sched).unwrap();
        let radii: Vec<f64> = out.windows.iter().map(|w| w.radius_km).collect();
        assert_eq!(radii, vec![1.0, 3.0, 3.0]);
    }
}
