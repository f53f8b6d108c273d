//! Scenario configuration: a TOML or JSON file, city presets and flag
//! overrides, resolved into the core library's configuration types.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use matchradius::behavior::AcceptanceModel;
use matchradius::demand::{load_trips, parse_datetime, synth_demand, DemandProfile, FareModel, TimeRange};
use matchradius::market::{BBox, GridSpec, Order};
use matchradius::multitask::{StrategyConfig, StrategyKind, TrainConfig};
use matchradius::nn::{ResidualForm, TebConfig};
use matchradius::radius::{CandidateSet, FeatureLayout};
use matchradius::sim::SimConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "MATCHRADIUS_OUT";

/// Offset between a run seed and the seed of its synthetic demand stream, so
/// that driver placement and demand draw from unrelated streams.
const DEMAND_SEED_OFFSET: u64 = 1_000_003;

/// The configuration was rejected before anything ran. Maps to exit code 2.
#[derive(Debug)]
pub struct InvalidConfig(pub String);

impl fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for InvalidConfig {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    InvalidConfig(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum City {
    Hk,
    Manhattan,
    Custom,
}

impl City {
    pub fn name(self) -> &'static str {
        match self {
            Self::Hk => "hk",
            Self::Manhattan => "manhattan",
            Self::Custom => "custom",
        }
    }
}

/// Simulator fields that override the city preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOverrides {
    pub drivers: Option<usize>,
    pub speed_kmh: Option<f64>,
    pub tick_s: Option<f64>,
    pub window_s: Option<f64>,
    pub patience_s: Option<f64>,
    pub random_walk: Option<bool>,
    pub grid_side: Option<usize>,
    /// `[min_lon, min_lat, max_lon, max_lat]`.
    pub bbox: Option<[f64; 4]>,
    pub acceptance: Option<AcceptanceModel<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DemandSource {
    /// Dense-core synthetic profile with morning and evening peaks.
    Synthetic {
        peak_per_hour: f64,
        spread_cells: f64,
        #[serde(default)]
        fares: Option<FareModel>,
    },
    /// A saved [`DemandProfile`] JSON file.
    Profile { path: PathBuf },
    /// Trip records; `start`/`end` as `YYYY-MM-DD HH:MM:SS`.
    Csv {
        path: PathBuf,
        start: String,
        end: String,
        #[serde(default)]
        fares: Option<FareModel>,
    },
}

impl Default for DemandSource {
    fn default() -> Self {
        Self::Synthetic {
            peak_per_hour: 2500.0,
            spread_cells: 1.0,
            fares: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub seq_len: usize,
    pub d_model: usize,
    pub embed_hidden: usize,
    pub block_hidden: usize,
    pub n_blocks: usize,
    pub head_hidden: usize,
    pub residual: ResidualForm,
    pub positional: bool,
    pub init_seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let t = TebConfig::new(1, 1);
        Self {
            seq_len: 6,
            d_model: t.d_model,
            embed_hidden: t.embed_hidden,
            block_hidden: t.block_hidden,
            n_blocks: t.n_blocks,
            head_hidden: t.head_hidden,
            residual: t.residual,
            positional: t.positional,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSettings {
    pub strategy: StrategyKind,
    pub gamma: f64,
    pub history: usize,
    pub refresh: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let s = StrategyConfig::new(StrategyKind::Wesm);
        let t = TrainConfig::new(s.clone());
        Self {
            strategy: s.kind,
            gamma: s.gamma,
            history: s.history,
            refresh: s.refresh,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub city: City,
    pub seeds: Vec<u64>,
    /// Clock hour at which episodes start.
    pub start_hour: f64,
    /// Episode length in hours (a whole number of windows).
    pub hours: f64,
    pub output_dir: Option<PathBuf>,
    /// Candidate radii in km; defaults to 1..=4 (hk) or 1..=10 otherwise.
    pub candidates: Option<Vec<f64>>,
    pub sim: SimOverrides,
    pub demand: DemandSource,
    pub model: ModelSettings,
    pub training: TrainingSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            city: City::Manhattan,
            seeds: vec![0, 1, 2, 3, 4],
            start_hour: 6.0,
            hours: 6.0,
            output_dir: None,
            candidates: None,
            sim: SimOverrides::default(),
            demand: DemandSource::default(),
            model: ModelSettings::default(),
            training: TrainingSettings::default(),
        }
    }
}

impl ScenarioConfig {
    /// Reads `.toml` or `.json` by extension.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?,
            Some("toml") => toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?,
            _ => return Err(invalid(format!("{}: expected a .toml or .json file", path.display()))),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required"));
        }
        if !(0.0..24.0).contains(&self.start_hour) {
            return Err(invalid(format!("start_hour {} outside [0, 24)", self.start_hour)));
        }
        if !(self.hours > 0.0) {
            return Err(invalid("hours must be positive"));
        }
        if self.city == City::Custom && (self.sim.bbox.is_none() || self.sim.drivers.is_none() || self.sim.speed_kmh.is_none())
        {
            return Err(invalid("custom city needs sim.bbox, sim.drivers and sim.speed_kmh"));
        }
        let sim = self.sim_config(0)?;
        let windows = self.horizon_s() / sim.window_s;
        if (windows - windows.round()).abs() > 1e-9 {
            return Err(invalid(format!("{} h is not a whole number of {} s windows", self.hours, sim.window_s)));
        }
        self.candidate_set()?;
        self.strategy()?;
        self.teb_config()?;
        if !(0.0..1.0).contains(&self.training.test_fraction) {
            return Err(invalid("training.test_fraction must lie in [0, 1)"));
        }
        if let DemandSource::Csv { start, end, .. } = &self.demand {
            parse_range(start, end)?;
        }
        Ok(())
    }

    pub fn start_s(&self) -> f64 {
        self.start_hour * 3600.0
    }

    pub fn horizon_s(&self) -> f64 {
        self.hours * 3600.0
    }

    pub fn sim_config(&self, seed: u64) -> anyhow::Result<SimConfig> {
        let mut cfg = match self.city {
            City::Hk => SimConfig::hong_kong(),
            City::Manhattan | City::Custom => SimConfig::manhattan(),
        };
        let o = &self.sim;
        if let Some(b) = o.bbox {
            cfg.grid.bbox = BBox::new(b[0], b[1], b[2], b[3]);
        }
        if let Some(n) = o.grid_side {
            cfg.grid.side_count = n;
        }
        cfg.drivers = o.drivers.unwrap_or(cfg.drivers);
        cfg.speed_kmh = o.speed_kmh.unwrap_or(cfg.speed_kmh);
        cfg.tick_s = o.tick_s.unwrap_or(cfg.tick_s);
        cfg.window_s = o.window_s.unwrap_or(cfg.window_s);
        cfg.patience_s = o.patience_s.unwrap_or(cfg.patience_s);
        cfg.random_walk = o.random_walk.unwrap_or(cfg.random_walk);
        if let Some(a) = o.acceptance {
            cfg.acceptance = a;
        }
        cfg.seed = seed;
        cfg.start_s = self.start_s();
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn grid(&self) -> anyhow::Result<GridSpec> {
        Ok(self.sim_config(0)?.grid)
    }

    pub fn candidate_set(&self) -> anyhow::Result<CandidateSet> {
        let radii = self.candidates.clone().unwrap_or_else(|| {
            let max = if self.city == City::Hk { 4 } else { 10 };
            (1..=max).map(f64::from).collect()
        });
        CandidateSet::new(radii).map_err(|e| invalid(e.to_string()))
    }

    pub fn strategy(&self) -> anyhow::Result<StrategyConfig> {
        let t = &self.training;
        let s = StrategyConfig {
            kind: t.strategy,
            gamma: t.gamma,
            history: t.history,
            refresh: t.refresh,
        };
        s.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(s)
    }

    pub fn train_config(&self) -> anyhow::Result<TrainConfig> {
        let t = &self.training;
        let cfg = TrainConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            ..TrainConfig::new(self.strategy()?)
        };
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn layout(&self) -> anyhow::Result<FeatureLayout> {
        FeatureLayout::new(self.model.seq_len, self.grid()?.cell_count()).map_err(|e| invalid(e.to_string()))
    }

    pub fn teb_config(&self) -> anyhow::Result<TebConfig> {
        let m = &self.model;
        let layout = self.layout()?;
        let cfg = TebConfig {
            d_model: m.d_model,
            embed_hidden: m.embed_hidden,
            block_hidden: m.block_hidden,
            n_blocks: m.n_blocks,
            head_hidden: m.head_hidden,
            residual: m.residual,
            positional: m.positional,
            ..TebConfig::new(layout.dim(), layout.seq_len)
        };
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Order stream for one seed.
    pub fn demand(&self, seed: u64) -> anyhow::Result<Vec<Order>> {
        let grid = self.grid()?;
        Ok(match &self.demand {
            DemandSource::Synthetic {
                peak_per_hour,
                spread_cells,
                fares,
            } => {
                let profile = DemandProfile::synthetic(grid, *peak_per_hour, *spread_cells, fares.unwrap_or_default());
                profile.validate().map_err(|e| invalid(e.to_string()))?;
                synth_demand(&profile, seed.wrapping_add(DEMAND_SEED_OFFSET), self.start_s(), self.horizon_s())
            }
            DemandSource::Profile { path } => {
                let profile = DemandProfile::load(path).with_context(|| format!("loading {}", path.display()))?;
                if profile.grid != grid {
                    return Err(invalid("demand profile grid differs from the scenario grid"));
                }
                synth_demand(&profile, seed.wrapping_add(DEMAND_SEED_OFFSET), self.start_s(), self.horizon_s())
            }
            DemandSource::Csv { path, start, end, fares } => {
                let range = parse_range(start, end)?;
                let (orders, _) = load_trips(path, &grid, &range, &fares.unwrap_or_default())
                    .with_context(|| format!("loading {}", path.display()))?;
                orders
            }
        })
    }

    /// Output directory after applying the environment root.
    pub fn resolved_output(&self, flag: Option<&Path>, default: &str) -> PathBuf {
        let dir = flag
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(default));
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_range(start: &str, end: &str) -> anyhow::Result<TimeRange> {
    let parse = |s: &str| {
        parse_datetime(s).ok_or_else(|| invalid(format!("cannot parse {s:?} as YYYY-MM-DD HH:MM:SS")))
    };
    let range = TimeRange {
        start: parse(start)?,
        end: parse(end)?,
    };
    if range.end <= range.start {
        bail!(InvalidConfig("demand time range is empty".into()));
    }
    Ok(range)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_pin_the_presets() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let sim = cfg.sim_config(3).unwrap();
        assert_eq!((sim.drivers, sim.speed_kmh, sim.tick_s), (500, 22.79, 10.0));
        assert_eq!(sim.grid.side_count, 4);
        let hk = ScenarioConfig {
            city: City::Hk,
            ..ScenarioConfig::default()
        };
        let sim = hk.sim_config(0).unwrap();
        assert_eq!((sim.drivers, sim.speed_kmh), (200, 20.6));
        assert_eq!(hk.candidate_set().unwrap().radii(), &[1.0, 2.0, 3.0, 4.0]);
        let t = cfg.train_config().unwrap();
        assert_eq!((t.lr, t.batch_size), (1e-3, 1024));
        assert_eq!(t.strategy.gamma, 0.1);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            city = "hk"
            seeds = [7]
            hours = 1.0
            candidates = [1.0, 2.5]

            [sim]
            drivers = 50

            [demand]
            kind = "synthetic"
            peak_per_hour = 300.0
            spread_cells = 2.0

            [training]
            strategy = "AM"
            epochs = 2
        "#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, text).unwrap();
        let cfg = ScenarioConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.city, City::Hk);
        assert_eq!(cfg.sim_config(0).unwrap().drivers, 50);
        assert_eq!(cfg.training.strategy, StrategyKind::Am);
        assert_eq!(cfg.candidate_set().unwrap().radii(), &[1.0, 2.5]);
    }

    #[test]
    fn invalid_settings_are_flagged() {
        let bad = [
            ScenarioConfig {
                seeds: vec![],
                ..Default::default()
            },
            ScenarioConfig {
                hours: 0.01,
                ..Default::default()
            },
            ScenarioConfig {
                candidates: Some(vec![2.0, 1.0]),
                ..Default::default()
            },
            ScenarioConfig {
                city: City::Custom,
                ..Default::default()
            },
        ];
        for cfg in bad {
            let err = cfg.validate().unwrap_err();
            assert!(err.downcast_ref::<InvalidConfig>().is_some(), "{err:#}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, "citty = \"hk\"\n").unwrap();
        let err = ScenarioConfig::load(&path).unwrap_err();
        assert!(err.downcast_ref::<InvalidConfig>().is_some());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::default();
        let b = ScenarioConfig {
            seeds: vec![1],
            ..Default::default()
        };
        assert_eq!(a.hash(), ScenarioConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn synthetic_demand_is_seeded() {
        let cfg = ScenarioConfig {
            hours: 0.5,
            ..Default::default()
        };
        assert_eq!(cfg.demand(1).unwrap(), cfg.demand(1).unwrap());
        assert_ne!(cfg.demand(1).unwrap(), cfg.demand(2).unwrap());
    }
}
