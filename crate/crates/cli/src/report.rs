//! Summary tables and the cross-run comparison report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use matchradius::sim::EpisodeSummary;
use serde::{Deserialize, Serialize};

use crate::config::InvalidConfig;
use crate::manifest::Manifest;

/// One model's seed-averaged episode metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(rename = "Model")]
    pub model: String,
    #[serde(rename = "OFR")]
    pub ofr: f64,
    #[serde(rename = "DUR")]
    pub dur: f64,
    #[serde(rename = "PR")]
    pub pr: f64,
    #[serde(rename = "APD")]
    pub apd: f64,
}

impl SummaryRow {
    pub fn mean(model: String, episodes: &[EpisodeSummary]) -> Self {
        let n = episodes.len().max(1) as f64;
        let avg = |f: fn(&EpisodeSummary) -> f64| episodes.iter().map(f).sum::<f64>() / n;
        Self {
            model,
            ofr: avg(|e| e.ofr),
            dur: avg(|e| e.dur),
            pr: avg(|e| e.pr),
            apd: avg(|e| e.apd),
        }
    }

    fn metrics(&self) -> [f64; 4] {
        [self.ofr, self.dur, self.pr, self.apd]
    }
}

pub fn write_summary_table(path: impl AsRef<Path>, rows: &[SummaryRow]) -> anyhow::Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_table(path: impl AsRef<Path>) -> anyhow::Result<Vec<SummaryRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Signed relative change, e.g. `+7.55%`.
pub fn percent_delta(value: f64, baseline: f64) -> String {
    if baseline == 0.0 {
        return "n/a".into();
    }
    format!("{:+.2}%", (value - baseline) / baseline.abs() * 100.0)
}

/// Merges the `summary.csv` of every run directory into `out/combined.csv`
/// and renders `out/report.md`, with deltas against `baseline` when given.
/// All runs must come from the same city.
pub fn report(runs: &[&Path], baseline: Option<&str>, out: &Path) -> anyhow::Result<Vec<SummaryRow>> {
    if runs.is_empty() {
        bail!(InvalidConfig("report needs at least one run directory".into()));
    }
    let mut city: Option<String> = None;
    let mut rows = Vec::new();
    for dir in runs {
        let manifest = Manifest::load(dir)?;
        match &city {
            Some(c) if *c != manifest.city => {
                bail!(InvalidConfig(format!(
                    "cannot combine runs from {c} and {} ({})",
                    manifest.city,
                    dir.display()
                )))
            }
            _ => city = Some(manifest.city),
        }
        rows.extend(read_summary_table(dir.join("summary.csv"))?);
    }
    let base = match baseline {
        Some(name) => Some(
            rows.iter()
                .find(|r| r.model == name)
                .cloned()
                .ok_or_else(|| InvalidConfig(format!("baseline {name:?} not among the reported models")))?,
        ),
        None => None,
    };

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_summary_table(out.join("combined.csv"), &rows)?;
    let md = render_markdown(city.as_deref().unwrap_or_default(), &rows, base.as_ref());
    let path = out.join("report.md");
    fs::write(&path, md).with_context(|| format!("writing {}", path.display()))?;
    Ok(rows)
}

fn render_markdown(city: &str, rows: &[SummaryRow], base: Option<&SummaryRow>) -> String {
    let mut s = format!("# Matching-radius comparison ({city})\n\n");
    s.push_str("| Model | OFR | DUR | PR | APD | ΔOFR | ΔDUR | ΔPR | ΔAPD |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for row in rows {
        let values = row.metrics().map(|v| format!("{v:.4}"));
        let deltas: [String; 4] = match base {
            Some(b) if b.model != row.model => {
                let (rm, bm) = (row.metrics(), b.metrics());
                std::array::from_fn(|k| percent_delta(rm[k], bm[k]))
            }
            _ => Default::default(),
        };
        let _ = writeln!(s, "| {} | {} | {} |", row.model, values.join(" | "), deltas.join(" | "));
    }
    if let Some(b) = base {
        let _ = writeln!(s, "\nDeltas are relative to {}.", b.model);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_are_signed_percentages() {
        assert_eq!(percent_delta(1.0755, 1.0), "+7.55%");
        assert_eq!(percent_delta(0.9, 1.0), "-10.00%");
        assert_eq!(percent_delta(1.0, 0.0), "n/a");
    }

    #[test]
    fn mean_over_episodes() {
        let e = |ofr| EpisodeSummary {
            ofr,
            dur: 0.5,
            pr: 10.0,
            apd: 1.0,
            orders: 1,
            matched: 1,
            expired: 0,
            windows: 1,
        };
        let row = SummaryRow::mean("FR-1".into(), &[e(0.2), e(0.4)]);
        assert!((row.ofr - 0.3).abs() < 1e-15);
        assert_eq!(row.pr, 10.0);
    }

    #[test]
    fn markdown_marks_baseline() {
        let a = SummaryRow {
            model: "FR-1".into(),
            ofr: 0.5,
            dur: 0.5,
            pr: 1.0,
            apd: 1.0,
        };
        let b = SummaryRow {
            model: "TEB + WESM".into(),
            ofr: 0.55,
            ..a.clone()
        };
        let md = render_markdown("hk", &[a.clone(), b], Some(&a));
        assert!(md.contains("| FR-1 | 0.5000 | 0.5000 | 1.0000 | 1.0000 |  |  |  |  |"));
        assert!(md.contains("| TEB + WESM | 0.5500 | 0.5000 | 1.0000 | 1.0000 | +10.00% | +0.00% | +0.00% | +0.00% |"));
        let single = render_markdown("hk", &[a.clone()], None);
        assert_eq!(single.lines().filter(|l| l.starts_with("| FR-1")).count(), 1);
        assert!(single.contains("|  |  |  |  |"));
    }
}
