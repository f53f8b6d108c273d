use matchradius::demand::{synth_demand, DemandProfile, FareModel};
use matchradius::market::{BBox, GridSpec, MarketWindow, Order};
use matchradius::multitask::{train, StrategyConfig, StrategyKind, TrainConfig};
use matchradius::nn::{Checkpoint, TebConfig, TebModel};
use matchradius::radius::{collect_episode, CandidateSet, Dbras, FeatureLayout, TrainingData};
use matchradius::sim::{run_with_source, SimConfig};
use matchradius::Error;

const HORIZON: f64 = 3600.0;

fn setup(seed: u64) -> (SimConfig, Vec<Order>) {
    let grid = GridSpec::new(BBox::new(0.0, 0.0, 0.05, 0.05), 2).unwrap();
    let cfg = SimConfig {
        seed,
        start_s: 7.0 * 3600.0,
        ..SimConfig::new(grid, 30, 20.0)
    };
    let profile = DemandProfile::synthetic(grid, 300.0, 1.0, FareModel::default());
    let stream = synth_demand(&profile, seed + 50, cfg.start_s, HORIZON);
    (cfg, stream)
}

fn trained(candidates: &CandidateSet) -> Checkpoint<f64> {
    let episodes: Vec<Vec<MarketWindow>> = (0..4)
        .map(|s| {
            let (cfg, stream) = setup(s);
            collect_episode(&cfg, stream, HORIZON, candidates, s).unwrap()
        })
        .collect();
    let layout = FeatureLayout::new(3, 4).unwrap();
    let data = TrainingData::build(&episodes, &layout, 0.25, 1).unwrap();
    let cfg = TebConfig {
        d_model: 8,
        embed_hidden: 8,
        block_hidden: 8,
        head_hidden: 4,
        n_blocks: 1,
        ..TebConfig::new(layout.dim(), layout.seq_len)
    };
    let mut model = TebModel::new(cfg, 0).unwrap();
    let tc = TrainConfig {
        batch_size: 32,
        epochs: 3,
        ..TrainConfig::new(StrategyConfig::new(StrategyKind::Wesm))
    };
    let report = train(&mut model, &data.split, &tc).unwrap();
    assert!(report.final_test.iter().all(|l| l.is_finite()));
    Checkpoint::new(model, data.feature_stats, data.label_stats).unwrap()
}

#[test]
fn learned_controller_decides_every_grid_every_window() {
    let candidates = CandidateSet::new(vec![0.5, 1.0, 2.0]).unwrap();
    let ck = trained(&candidates);
    let (cfg, stream) = setup(99);
    let ctrl = Dbras::from_checkpoint(ck.clone(), 4, candidates.clone()).unwrap();
    let (out, ctrl) = run_with_source(&cfg, stream.clone(), HORIZON, ctrl).unwrap();
    // One decision per grid for each of the 12 windows, plus the boundary at the horizon.
    assert_eq!(ctrl.decisions().len(), 4 * 13);
    for d in ctrl.decisions() {
        assert!(candidates.radii().contains(&d.chosen));
        assert_eq!(d.candidates.len(), 3);
        let best = d.candidates.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
        let chosen = d.candidates.iter().find(|c| c.radius == d.chosen).unwrap();
        assert_eq!(chosen.score, best);
    }
    for w in &out.windows {
        let d = ctrl.decisions().iter().find(|d| d.grid == w.grid && d.window == w.window).unwrap();
        assert_eq!(w.radius_km, d.chosen);
    }

    let again = Dbras::from_checkpoint(ck, 4, candidates).unwrap();
    let (out2, _) = run_with_source(&cfg, stream, HORIZON, again).unwrap();
    assert_eq!(out, out2);
}

#[test]
fn checkpoint_for_another_grid_is_rejected() {
    let candidates = CandidateSet::integers(2).unwrap();
    let ck = trained(&candidates);
    let err = Dbras::from_checkpoint(ck, 9, candidates).unwrap_err();
    assert!(matches!(err, Error::CheckpointMismatch(_)));
}
