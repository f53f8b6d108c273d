//! Domain types shared across the crate: the spatial grid, time-of-day codes,
//! orders, drivers and the per-grid, per-window market record.

use serde::{Deserialize, Serialize};

use crate::geo::{LonLat, Projection};
use crate::{Error, Result};

/// Axis-aligned lon/lat rectangle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        Self {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        }
    }

    pub fn contains(&self, p: LonLat) -> bool {
        p.lon >= self.min_lon && p.lon < self.max_lon && p.lat >= self.min_lat && p.lat < self.max_lat
    }

    pub fn center(&self) -> LonLat {
        LonLat::new(
            0.5 * (self.min_lon + self.max_lon),
            0.5 * (self.min_lat + self.max_lat),
        )
    }

    /// Projection anchored at the south-west corner, scaled at the centre latitude.
    pub fn projection(&self) -> Projection {
        Projection::new(LonLat::new(self.min_lon, self.min_lat), self.center().lat)
    }
}

/// An `I × I` partition of a bounding box into half-open cells indexed row-major
/// from the south-west corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BBox,
    pub side_count: usize,
}

impl GridSpec {
    pub fn new(bbox: BBox, side_count: usize) -> Result<Self> {
        let spec = Self { bbox, side_count };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side_count == 0 {
            return Err(Error::Config("grid side count must be >= 1".into()));
        }
        let b = &self.bbox;
        let finite = [b.min_lon, b.min_lat, b.max_lon, b.max_lat]
            .iter()
            .all(|v| v.is_finite());
        if !finite || b.max_lon <= b.min_lon || b.max_lat <= b.min_lat {
            return Err(Error::Config(format!("degenerate bounding box {b:?}")));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.side_count * self.side_count
    }

    pub fn cell_width(&self) -> f64 {
        (self.bbox.max_lon - self.bbox.min_lon) / self.side_count as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.bbox.max_lat - self.bbox.min_lat) / self.side_count as f64
    }

    /// Row-major cell index of `p`, or `None` when `p` lies outside the box.
    pub fn index(&self, p: LonLat) -> Option<usize> {
        grid_index(p, self)
    }

    pub fn cell_center(&self, index: usize) -> LonLat {
        let (row, col) = (index / self.side_count, index % self.side_count);
        LonLat::new(
            self.bbox.min_lon + (col as f64 + 0.5) * self.cell_width(),
            self.bbox.min_lat + (row as f64 + 0.5) * self.cell_height(),
        )
    }

    /// South-west corner of a cell.
    pub fn cell_origin(&self, index: usize) -> LonLat {
        let (row, col) = (index / self.side_count, index % self.side_count);
        LonLat::new(
            self.bbox.min_lon + col as f64 * self.cell_width(),
            self.bbox.min_lat + row as f64 * self.cell_height(),
        )
    }
}

/// Row-major grid index with half-open cells: a point on an interior edge
/// belongs to the cell whose low edge it touches.
pub fn grid_index(p: LonLat, spec: &GridSpec) -> Option<usize> {
    if !p.lon.is_finite() || !p.lat.is_finite() || !spec.bbox.contains(p) {
        return None;
    }
    let n = spec.side_count;
    let col = ((p.lon - spec.bbox.min_lon) / spec.cell_width()).floor() as usize;
    let row = ((p.lat - spec.bbox.min_lat) / spec.cell_height()).floor() as usize;
    // Rounding at the high edge can push the quotient to n.
    Some(row.min(n - 1) * n + col.min(n - 1))
}

/// Time-of-day dummy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TimeOfDay {
    Evening = 0,
    Morning = 1,
    Midnight = 2,
    Other = 3,
}

impl TimeOfDay {
    pub const COUNT: usize = 4;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        [Self::Evening, Self::Morning, Self::Midnight, Self::Other].get(code).copied()
    }
}

/// Clock-hour interval `[start, end)` in seconds of day; wraps past midnight
/// when `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayInterval {
    pub start_s: u32,
    pub end_s: u32,
}

impl DayInterval {
    pub const fn hours(start: u32, end: u32) -> Self {
        Self {
            start_s: start * 3600,
            end_s: end * 3600,
        }
    }

    pub fn contains(&self, s: u32) -> bool {
        if self.start_s <= self.end_s {
            s >= self.start_s && s < self.end_s
        } else {
            s >= self.start_s || s < self.end_s
        }
    }
}

/// Peak and midnight intervals; everything else is [`TimeOfDay::Other`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeOfDayBoundaries {
    pub morning: DayInterval,
    pub evening: DayInterval,
    pub midnight: DayInterval,
}

impl Default for TimeOfDayBoundaries {
    fn default() -> Self {
        Self {
            morning: DayInterval::hours(7, 10),
            evening: DayInterval::hours(17, 20),
            midnight: DayInterval::hours(23, 5),
        }
    }
}

impl TimeOfDayBoundaries {
    /// Rejects overlapping intervals, so that together with "other" the four
    /// codes partition the day.
    pub fn validate(&self) -> Result<()> {
        let named = [self.morning, self.evening, self.midnight];
        for iv in named {
            if iv.start_s >= 86_400 || iv.end_s > 86_400 {
                return Err(Error::Config(format!("time-of-day interval out of range: {iv:?}")));
            }
        }
        // Minute resolution is enough to detect overlap of hour-scale intervals.
        for minute in 0..1440u32 {
            let s = minute * 60;
            if named.iter().filter(|iv| iv.contains(s)).count() > 1 {
                return Err(Error::Config(format!("time-of-day intervals overlap at {s} s")));
            }
        }
        Ok(())
    }
}

pub fn time_of_day(clock_s: f64, cfg: &TimeOfDayBoundaries) -> TimeOfDay {
    let s = clock_s.rem_euclid(86_400.0).floor() as u32;
    if cfg.evening.contains(s) {
        TimeOfDay::Evening
    } else if cfg.morning.contains(s) {
        TimeOfDay::Morning
    } else if cfg.midnight.contains(s) {
        TimeOfDay::Midnight
    } else {
        TimeOfDay::Other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStatus {
    Open,
    Matched,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: u64,
    /// Creation time in seconds since midnight of the simulated day.
    pub created_s: f64,
    pub origin: LonLat,
    pub destination: LonLat,
    pub fare: f64,
    pub grid: Option<usize>,
    pub status: OrderStatus,
    pub matched_s: Option<f64>,
    pub pickup_km: Option<f64>,
}

impl Order {
    pub fn new(id: u64, created_s: f64, origin: LonLat, destination: LonLat, fare: f64, grid: Option<usize>) -> Self {
        Self {
            id,
            created_s,
            origin,
            destination,
            fare,
            grid,
            status: OrderStatus::Open,
            matched_s: None,
            pickup_km: None,
        }
    }

    /// open → matched. Panics on any other transition.
    pub fn mark_matched(&mut self, at_s: f64, pickup_km: f64) {
        assert_eq!(self.status, OrderStatus::Open, "order {} matched twice", self.id);
        self.status = OrderStatus::Matched;
        self.matched_s = Some(at_s);
        self.pickup_km = Some(pickup_km);
    }

    /// open → expired. Panics on any other transition.
    pub fn mark_expired(&mut self) {
        assert_eq!(self.status, OrderStatus::Open, "order {} already closed", self.id);
        self.status = OrderStatus::Expired;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverStatus {
    Idle,
    Pickup,
    InService,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    pub id: u32,
    pub position: LonLat,
    pub status: DriverStatus,
    pub occupied_s: f64,
    pub online_s: f64,
    /// Index into the simulator's order table; present iff not idle.
    pub assignment: Option<usize>,
}

impl Driver {
    pub fn new(id: u32, position: LonLat) -> Self {
        Self {
            id,
            position,
            status: DriverStatus::Idle,
            occupied_s: 0.0,
            online_s: 0.0,
            assignment: None,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.status == DriverStatus::Idle
    }
}

/// Realised performance of one grid over one window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowMetrics {
    /// Order fulfilment rate.
    pub ofr: f64,
    /// Average pickup distance (km).
    pub apd: f64,
    /// Driver utilisation rate.
    pub dur: f64,
    /// Platform revenue.
    pub pr: f64,
}

impl WindowMetrics {
    /// `[o, d, u, p]`, the task order used by the predictor.
    pub fn to_array(&self) -> [f64; 4] {
        [self.ofr, self.apd, self.dur, self.pr]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            ofr: a[0],
            apd: a[1],
            dur: a[2],
            pr: a[3],
        }
    }
}

/// Busy and online driver-seconds accrued inside one window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriverTime {
    pub occupied_s: f64,
    pub online_s: f64,
}

/// Half-open time window `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }

    pub fn len_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Windowed metrics from the orders touching a window and the driver time
/// accrued in it.
///
/// - `o`: among orders created in the window, the share matched before the
///   window closed (0 when none were created).
/// - `d`: mean pickup distance of orders matched in the window (0 when none).
/// - `u`: occupied over online driver-seconds (0 when nobody was online).
/// - `p`: sum of fares of orders matched in the window.
pub fn compute_window_metrics<'a, I>(orders: I, drivers: &[DriverTime], window: &TimeWindow) -> WindowMetrics
where
    I: IntoIterator<Item = &'a Order>,
{
    let mut created = 0usize;
    let mut created_and_matched = 0usize;
    let mut matched = 0usize;
    let mut pickup_sum = 0.0;
    let mut revenue = 0.0;
    for order in orders {
        let matched_here = order.matched_s.is_some_and(|t| window.contains(t));
        if window.contains(order.created_s) {
            created += 1;
            if order.matched_s.is_some_and(|t| t < window.end_s) {
                created_and_matched += 1;
            }
        }
        if matched_here {
            matched += 1;
            pickup_sum += order.pickup_km.unwrap_or(0.0);
            revenue += order.fare;
        }
    }
    let (occupied, online) = drivers
        .iter()
        .fold((0.0, 0.0), |(o, n), d| (o + d.occupied_s, n + d.online_s));
    WindowMetrics {
        ofr: if created > 0 {
            created_and_matched as f64 / created as f64
        } else {
            0.0
        },
        apd: if matched > 0 { pickup_sum / matched as f64 } else { 0.0 },
        dur: if online > 0.0 { (occupied / online).clamp(0.0, 1.0) } else { 0.0 },
        pr: revenue,
    }
}

/// One row of the window log: market snapshot at the window's start, the
/// radius in force, and the metrics realised over the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketWindow {
    pub grid: usize,
    pub window: usize,
    pub window_start_s: f64,
    /// Idle vehicles.
    pub n_idle: u32,
    /// Open orders.
    pub n_open: u32,
    /// All vehicles in the grid.
    pub n_vehicles: u32,
    pub metrics: WindowMetrics,
    pub radius_km: f64,
    pub tod: TimeOfDay,
}
