//! Order streams for the simulator: CSV trip ingestion, synthetic Poisson
//! demand, and the z-score statistics used to normalise predictor features.

use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::geo::LonLat;
use crate::market::{GridSpec, Order};
use crate::{Error, Result, Scalar};

/// Linear fare: `base + per_km × straight-line trip length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FareModel {
    pub base: f64,
    pub per_km: f64,
}

impl Default for FareModel {
    fn default() -> Self {
        Self { base: 2.5, per_km: 1.0 }
    }
}

impl FareModel {
    pub fn fare(&self, trip_km: f64) -> f64 {
        self.base + self.per_km * trip_km
    }
}

/// One row of the trip CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TripRecord {
    pub pickup_datetime: String,
    pub pickup_lon: f64,
    pub pickup_lat: f64,
    pub dropoff_lon: f64,
    pub dropoff_lat: f64,
    #[serde(default)]
    pub fare_amount: Option<f64>,
}

/// Inclusive-exclusive datetime range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub emitted: usize,
    pub out_of_area: usize,
    pub out_of_range: usize,
    pub malformed: usize,
    pub fares_filled: usize,
}

/// Accepts `YYYY-MM-DD HH:MM:SS`, the `T`-separated form, and RFC 3339.
pub fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    const FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| chrono::DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc()))
}

fn seconds_since(day: NaiveDate, t: NaiveDateTime) -> f64 {
    let midnight = day.and_hms_opt(0, 0, 0).expect("midnight exists");
    (t - midnight).num_milliseconds() as f64 / 1000.0
}

/// Loads trips from a CSV with header
/// `pickup_datetime,pickup_lon,pickup_lat,dropoff_lon,dropoff_lat[,fare_amount]`.
///
/// Creation times are seconds since midnight of `range.start`'s date. Rows
/// outside the grid or the range are dropped and counted; unparseable rows
/// are counted as malformed and fail the load when they exceed 10 %.
pub fn load_trips(
    path: impl AsRef<Path>,
    grid: &GridSpec,
    range: &TimeRange,
    fares: &FareModel,
) -> Result<(Vec<Order>, IngestReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trips(file, grid, range, fares)
}

pub fn read_trips<R: std::io::Read>(
    reader: R,
    grid: &GridSpec,
    range: &TimeRange,
    fares: &FareModel,
) -> Result<(Vec<Order>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["pickup_datetime", "pickup_lon", "pickup_lat", "dropoff_lon", "dropoff_lat"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Config(format!("trip csv header is missing column `{required}`")));
        }
    }

    let proj = grid.bbox.projection();
    let day = range.start.date();
    let mut report = IngestReport::default();
    let mut orders = Vec::new();
    for record in rdr.deserialize::<TripRecord>() {
        report.rows += 1;
        let Ok(rec) = record else {
            report.malformed += 1;
            continue;
        };
        let coords = [rec.pickup_lon, rec.pickup_lat, rec.dropoff_lon, rec.dropoff_lat];
        let Some(at) = parse_datetime(&rec.pickup_datetime).filter(|_| coords.iter().all(|c| c.is_finite())) else {
            report.malformed += 1;
            continue;
        };
        if at < range.start || at >= range.end {
            report.out_of_range += 1;
            continue;
        }
        let origin = LonLat::new(rec.pickup_lon, rec.pickup_lat);
        let Some(cell) = grid.index(origin) else {
            report.out_of_area += 1;
            continue;
        };
        let destination = LonLat::new(rec.dropoff_lon, rec.dropoff_lat);
        let fare = match rec.fare_amount {
            Some(f) if f.is_finite() && f >= 0.0 => f,
            _ => {
                report.fares_filled += 1;
                fares.fare(proj.distance_km(origin, destination))
            }
        };
        orders.push(Order::new(0, seconds_since(day, at), origin, destination, fare, Some(cell)));
    }

    if report.rows > 0 && report.malformed * 10 > report.rows {
        return Err(Error::Malformed {
            malformed: report.malformed,
            total: report.rows,
        });
    }
    orders.sort_by(|a, b| a.created_s.total_cmp(&b.created_s));
    for (i, o) in orders.iter_mut().enumerate() {
        o.id = i as u64;
    }
    report.emitted = orders.len();
    Ok((orders, report))
}

/// Hourly demand multipliers with morning and evening peaks and a 05:00 trough.
pub const DEFAULT_HOURLY_SHAPE: [f64; 24] = [
    0.55, 0.40, 0.30, 0.22, 0.15, 0.12, 0.30, 0.65, 0.95, 0.90, 0.75, 0.72, 0.75, 0.74, 0.76, 0.78, 0.85, 0.95, 1.00,
    0.95, 0.85, 0.80, 0.75, 0.65,
];

/// Per-grid, per-hour arrival rates plus destination and fare models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub grid: GridSpec,
    /// Orders per hour, indexed `[grid][hour]`.
    pub rates: Vec<[f64; 24]>,
    /// Destination-grid distribution per origin grid, indexed `[origin][dest]`.
    pub destinations: Vec<Vec<f64>>,
    pub fares: FareModel,
}

impl DemandProfile {
    /// Dense-core synthetic profile: spatial weights decay with a Gaussian of
    /// width `spread_cells` (in cells) around the box centre, the day follows
    /// [`DEFAULT_HOURLY_SHAPE`], and `peak_per_hour` is the region-wide rate at
    /// the busiest hour.
    pub fn synthetic(grid: GridSpec, peak_per_hour: f64, spread_cells: f64, fares: FareModel) -> Self {
        let n = grid.side_count;
        let mid = (n as f64 - 1.0) / 2.0;
        let cell_rc = |i: usize| ((i / n) as f64, (i % n) as f64);
        let weights: Vec<f64> = (0..grid.cell_count())
            .map(|i| {
                let (r, c) = cell_rc(i);
                let d2 = (r - mid).powi(2) + (c - mid).powi(2);
                (-d2 / (2.0 * spread_cells * spread_cells)).exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let rates = weights
            .iter()
            .map(|w| {
                let mut row = [0.0; 24];
                for (h, r) in row.iter_mut().enumerate() {
                    *r = peak_per_hour * w / total * DEFAULT_HOURLY_SHAPE[h];
                }
                row
            })
            .collect();
        let destinations = (0..grid.cell_count())
            .map(|o| {
                let (ro, co) = cell_rc(o);
                let raw: Vec<f64> = (0..grid.cell_count())
                    .map(|d| {
                        let (rd, cd) = cell_rc(d);
                        weights[d] * (-((rd - ro).hypot(cd - co)) / 2.0).exp()
                    })
                    .collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        Self {
            grid,
            rates,
            destinations,
            fares,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let cells = self.grid.cell_count();
        if self.rates.len() != cells || self.destinations.len() != cells {
            return Err(Error::Config(format!("profile must cover {cells} grids")));
        }
        if self.rates.iter().flatten().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("arrival rates must be finite and >= 0".into()));
        }
        for (i, dist) in self.destinations.iter().enumerate() {
            let s: f64 = dist.iter().sum();
            if dist.len() != cells || dist.iter().any(|p| !p.is_finite() || *p < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("destination distribution of grid {i} is not a probability vector")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

fn uniform_in_cell<R: Rng>(grid: &GridSpec, cell: usize, rng: &mut R) -> LonLat {
    let o = grid.cell_origin(cell);
    // Stay strictly inside the half-open cell.
    let u: f64 = rng.random::<f64>() * 0.999_999;
    let v: f64 = rng.random::<f64>() * 0.999_999;
    LonLat::new(o.lon + u * grid.cell_width(), o.lat + v * grid.cell_height())
}

/// Inhomogeneous Poisson orders over `[start_s, start_s + duration_s)` with
/// piecewise-constant hourly rates. Deterministic in `seed`.
pub fn synth_demand(profile: &DemandProfile, seed: u64, start_s: f64, duration_s: f64) -> Vec<Order> {
    let grid = &profile.grid;
    let proj = grid.bbox.projection();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let end_s = start_s + duration_s;
    let mut orders = Vec::new();
    for (cell, rates) in profile.rates.iter().enumerate() {
        let dest_sampler = WeightedIndex::new(&profile.destinations[cell]).ok();
        let mut seg_start = start_s;
        while seg_start < end_s {
            let seg_end = (((seg_start / 3600.0).floor() + 1.0) * 3600.0).min(end_s);
            let hour = ((seg_start / 3600.0).floor() as i64).rem_euclid(24) as usize;
            let lambda = rates[hour] * (seg_end - seg_start) / 3600.0;
            let count = if lambda > 0.0 {
                Poisson::new(lambda).map(|p| p.sample(&mut rng) as usize).unwrap_or(0)
            } else {
                0
            };
            for _ in 0..count {
                let t = seg_start + rng.random::<f64>() * (seg_end - seg_start);
                let origin = uniform_in_cell(grid, cell, &mut rng);
                let dest_cell = dest_sampler.as_ref().map_or(cell, |s| s.sample(&mut rng));
                let destination = uniform_in_cell(grid, dest_cell, &mut rng);
                let fare = profile.fares.fare(proj.distance_km(origin, destination));
                orders.push(Order::new(0, t, origin, destination, fare, Some(cell)));
            }
            seg_start = seg_end;
        }
    }
    orders.sort_by(|a, b| a.created_s.total_cmp(&b.created_s).then(a.grid.cmp(&b.grid)));
    for (i, o) in orders.iter_mut().enumerate() {
        o.id = i as u64;
    }
    orders
}

/// Per-feature population mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NormStats<T: Scalar> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> NormStats<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        apply_norm(x, self)
    }

    pub fn invert(&self, x: &[T]) -> Vec<T> {
        invert_norm(x, self)
    }

    /// Single-feature z-score.
    pub fn z(&self, feature: usize, v: T) -> T {
        (v - self.mean[feature]) / self.std[feature]
    }
}

/// Column statistics of a row-major matrix. Columns whose spread is
/// negligible get `std = 1` so they pass through after centring.
pub fn fit_norm_stats<T: Scalar, R: AsRef<[T]>>(rows: &[R]) -> Result<NormStats<T>> {
    let first = rows.first().ok_or_else(|| Error::Empty("cannot fit normalisation on zero rows".into()))?;
    let dim = first.as_ref().len();
    if rows.iter().any(|r| r.as_ref().len() != dim) {
        return Err(Error::Shape("ragged feature matrix".into()));
    }
    let n = T::lit(rows.len() as f64);
    let mut mean = vec![T::zero(); dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.as_ref()) {
            *m = *m + *v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut var = vec![T::zero(); dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
            let d = *v - *m;
            *s = *s + d * d;
        }
    }
    let std = var
        .into_iter()
        .zip(&mean)
        .map(|(s, m)| {
            let sd = (s / n).sqrt();
            let floor = T::lit(1e-12) * T::one().max(m.abs());
            if sd > floor {
                sd
            } else {
                T::one()
            }
        })
        .collect();
    Ok(NormStats { mean, std })
}

pub fn apply_norm<T: Scalar>(x: &[T], stats: &NormStats<T>) -> Vec<T> {
    x.iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(v, (m, s))| (*v - *m) / *s)
        .collect()
}

pub fn invert_norm<T: Scalar>(x: &[T], stats: &NormStats<T>) -> Vec<T> {
    x.iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(v, (m, s))| *v * *s + *m)
        .collect()
}
