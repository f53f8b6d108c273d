use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EpisodeSummary;
use crate::market::{MarketWindow, TimeOfDay, WindowMetrics};
use crate::{Error, Result};

/// Flat CSV form of a [`MarketWindow`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowLogRow {
    pub grid: usize,
    pub window_start: f64,
    #[serde(rename = "N_e")]
    pub n_e: u32,
    #[serde(rename = "N_o")]
    pub n_o: u32,
    #[serde(rename = "N_v")]
    pub n_v: u32,
    pub o: f64,
    pub d: f64,
    pub u: f64,
    pub p: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub h: usize,
}

impl From<&MarketWindow> for WindowLogRow {
    fn from(w: &MarketWindow) -> Self {
        Self {
            grid: w.grid,
            window_start: w.window_start_s,
            n_e: w.n_idle,
            n_o: w.n_open,
            n_v: w.n_vehicles,
            o: w.metrics.ofr,
            d: w.metrics.apd,
            u: w.metrics.dur,
            p: w.metrics.pr,
            r: w.radius_km,
            h: w.tod.code(),
        }
    }
}

pub fn write_window_log(path: impl AsRef<Path>, windows: &[MarketWindow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for row in windows {
        w.serialize(WindowLogRow::from(row))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a window log back. Window indices are recovered by ranking the
/// distinct window start times.
pub fn read_window_log(path: impl AsRef<Path>) -> Result<Vec<MarketWindow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<WindowLogRow>, _>>()?;
    let mut starts: Vec<f64> = rows.iter().map(|r| r.window_start).collect();
    starts.sort_by(f64::total_cmp);
    starts.dedup();
    rows.iter()
        .map(|r| {
            let tod = TimeOfDay::from_code(r.h)
                .ok_or_else(|| Error::Config(format!("unknown time-of-day code {}", r.h)))?;
            Ok(MarketWindow {
                grid: r.grid,
                window: starts.partition_point(|s| *s < r.window_start),
                window_start_s: r.window_start,
                n_idle: r.n_e,
                n_open: r.n_o,
                n_vehicles: r.n_v,
                metrics: WindowMetrics {
                    ofr: r.o,
                    apd: r.d,
                    dur: r.u,
                    pr: r.p,
                },
                radius_km: r.r,
                tod,
            })
        })
        .collect()
}

pub fn write_summary(path: impl AsRef<Path>, summary: &EpisodeSummary) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_string_pretty(summary)? + "\n").map_err(|e| Error::io(path, e))
}
