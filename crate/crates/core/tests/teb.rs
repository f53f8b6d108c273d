use matchradius::nn::{per_task_mse, Checkpoint, MlpWeights, NormWeights, ResidualForm, TebConfig, TebModel, TebParameters};
use matchradius::{Error, NormStats, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Mat = Vec<Vec<f64>>;

fn rows(t: &Tensor) -> Mat {
    let c = t.shape()[t.shape().len() - 1];
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

fn affine(x: &Mat, w: &Tensor, b: Option<&Tensor>) -> Mat {
    let w = rows(w);
    x.iter()
        .map(|r| {
            (0..w[0].len())
                .map(|j| b.map_or(0.0, |b| b.data()[j]) + r.iter().zip(&w).map(|(v, wr)| v * wr[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn mlp(x: &Mat, w: &MlpWeights<Tensor>) -> Mat {
    let h: Mat = affine(x, &w.w1, Some(&w.b1))
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    affine(&h, &w.w2, Some(&w.b2))
}

fn ln(x: &Mat, w: &NormWeights<Tensor>, eps: f64) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| w.gamma.data()[j] * (v - mu) / (var + eps).sqrt() + w.beta.data()[j])
                .collect()
        })
        .collect()
}

fn attention(x: &Mat, wq: &Tensor, wk: &Tensor, wv: &Tensor) -> Mat {
    let (q, k, v) = (affine(x, wq, None), affine(x, wk, None), affine(x, wv, None));
    let scale = (k[0].len() as f64).sqrt();
    q.iter()
        .map(|qi| {
            let s: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / scale).collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            (0..v[0].len()).map(|c| s.iter().zip(&v).map(|(sj, vj)| sj.exp() / z * vj[c]).sum()).collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

/// Forward pass of one sequence written out step by step.
fn trace(cfg: &TebConfig, p: &TebParameters<f64>, seq: &Mat) -> Vec<f64> {
    let mut o = mlp(seq, &p.embed);
    if let Some(pos) = &p.positional {
        o = add(&o, &rows(pos));
    }
    for b in &p.blocks {
        o = match cfg.residual {
            ResidualForm::Literal => {
                let h1 = attention(&add(&o, &ln(&o, &b.attn_norm, cfg.ln_eps)), &b.wq, &b.wk, &b.wv);
                mlp(&add(&h1, &ln(&h1, &b.mlp_norm, cfg.ln_eps)), &b.mlp)
            }
            ResidualForm::PreNorm => {
                let h1 = add(&o, &attention(&ln(&o, &b.attn_norm, cfg.ln_eps), &b.wq, &b.wk, &b.wv));
                add(&h1, &mlp(&ln(&h1, &b.mlp_norm, cfg.ln_eps), &b.mlp))
            }
        };
    }
    let t = o.len() as f64;
    let pooled: Vec<f64> = (0..o[0].len()).map(|j| o.iter().map(|r| r[j]).sum::<f64>() / t).collect();
    p.heads.iter().map(|h| mlp(&vec![pooled.clone()], h)[0][0]).collect()
}

fn perturbed(cfg: TebConfig, seed: u64) -> TebModel<f64> {
    let mut model = TebModel::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for slot in model.params.slots_mut() {
        for v in slot.data_mut() {
            *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    model
}

fn batch(b: usize, cfg: &TebConfig, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[b, cfg.seq_len, cfg.input_dim], |_| rng.sample(StandardNormal))
}

fn small() -> TebConfig {
    TebConfig {
        d_model: 4,
        embed_hidden: 6,
        block_hidden: 5,
        head_hidden: 3,
        n_blocks: 1,
        ..TebConfig::new(5, 3)
    }
}

#[test]
fn forward_matches_hand_trace() {
    for residual in [ResidualForm::Literal, ResidualForm::PreNorm] {
        for n_blocks in [1, 2] {
            let cfg = TebConfig {
                residual,
                n_blocks,
                ..small()
            };
            let model = perturbed(cfg, 3);
            let x = batch(4, &cfg, 9);
            let got = model.forward(&x).unwrap();
            assert_eq!(got.shape(), &[4, 4]);
            for (i, seq) in x.data().chunks(cfg.seq_len * cfg.input_dim).enumerate() {
                let seq: Mat = seq.chunks(cfg.input_dim).map(<[f64]>::to_vec).collect();
                for (k, want) in trace(&cfg, &model.params, &seq).into_iter().enumerate() {
                    assert!((got.get(&[i, k]) - want).abs() < 1e-10, "{residual:?} {n_blocks}: {} vs {want}", got.get(&[i, k]));
                }
            }
        }
    }
}

#[test]
fn one_hot_weights_leave_other_heads_untouched() {
    let cfg = small();
    let model = perturbed(cfg, 1);
    let x = batch(5, &cfg, 2);
    let y = batch(5, &TebConfig { seq_len: 1, input_dim: 4, ..cfg }, 3).reshape(&[5, 4]).unwrap();
    for k in 0..4 {
        let mut w = vec![0.0; 4];
        w[k] = 1.0;
        let back = model.backward(&x, &y, &w).unwrap();
        for (j, head) in back.grads.heads.iter().enumerate() {
            let norm: f64 = [&head.w1, &head.b1, &head.w2, &head.b2].iter().map(|t| t.max_abs()).fold(0.0, f64::max);
            if j == k {
                assert!(norm > 0.0);
            } else {
                assert_eq!(norm, 0.0, "head {j} got gradient under one-hot task {k}");
            }
        }
        assert!((back.objective - back.task_losses[k]).abs() < 1e-15);
    }
}

#[test]
fn perfect_predictions_give_zero_loss_and_gradient() {
    let cfg = small();
    let model = perturbed(cfg, 4);
    let x = batch(3, &cfg, 5);
    let y = model.forward(&x).unwrap();
    let back = model.backward(&x, &y, &[0.25; 4]).unwrap();
    assert_eq!(back.task_losses, vec![0.0; 4]);
    assert!(back.grads.slots().iter().all(|g| g.max_abs() == 0.0));
}

#[test]
fn forward_is_pure_and_batch_independent() {
    let cfg = small();
    let model = perturbed(cfg, 6);
    let before = model.clone();
    let x = batch(6, &cfg, 7);
    let a = model.forward(&x).unwrap();
    let b = model.forward(&x).unwrap();
    assert_eq!(a, b);
    assert_eq!(model, before);
    // Each sample's prediction does not depend on the rest of the batch.
    let row = cfg.seq_len * cfg.input_dim;
    let single = Tensor::new(vec![1, cfg.seq_len, cfg.input_dim], x.data()[2 * row..3 * row].to_vec()).unwrap();
    let one = model.forward(&single).unwrap();
    for k in 0..4 {
        assert!((one.get(&[0, k]) - a.get(&[2, k])).abs() < 1e-12);
    }
}

#[test]
fn single_step_sequences_work() {
    let cfg = TebConfig { seq_len: 1, ..small() };
    let model = perturbed(cfg, 8);
    let x = batch(2, &cfg, 8);
    let y = Tensor::zeros(&[2, 4]);
    let back = model.backward(&x, &y, &[0.25; 4]).unwrap();
    assert!(back.objective.is_finite() && back.grads.all_finite());
}

#[test]
fn identical_rows_collapse_to_one_step() {
    // Without positional embeddings, attention over identical rows returns
    // the shared value row, so a repeated row behaves like a length-1 input.
    let long = TebConfig {
        positional: false,
        seq_len: 4,
        ..small()
    };
    let short = TebConfig { seq_len: 1, ..long };
    let model = perturbed(long, 10);
    let one = TebModel {
        config: short,
        params: model.params.clone(),
    };
    let row: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
    let repeated = Tensor::new(vec![1, 4, 5], row.repeat(4)).unwrap();
    let single = Tensor::new(vec![1, 1, 5], row).unwrap();
    let (a, b) = (model.forward(&repeated).unwrap(), one.forward(&single).unwrap());
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn f32_model_tracks_f64() {
    let cfg = small();
    let m64 = perturbed(cfg, 11);
    let m32 = TebModel::<f32> {
        config: cfg,
        params: m64.params.map(|t| Tensor32::new(t.shape().to_vec(), t.data().iter().map(|v| *v as f32).collect()).unwrap()),
    };
    let x = batch(3, &cfg, 12);
    let x32 = Tensor32::new(x.shape().to_vec(), x.data().iter().map(|v| *v as f32).collect()).unwrap();
    let (a, b) = (m64.forward(&x).unwrap(), m32.forward(&x32).unwrap());
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - *q as f64).abs() < 1e-4, "{p} vs {q}");
    }
    let y = Tensor32::zeros(&[3, 4]);
    let loss = per_task_mse(&m32.forward(&x32).unwrap(), &y);
    assert!(loss.iter().all(|l| l.is_finite()));
}

type Tensor32 = matchradius::nn::Tensor<f32>;

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let cfg = small();
    let model = perturbed(cfg, 13);
    let stats = |d: usize| NormStats {
        mean: vec![0.5; d],
        std: vec![2.0; d],
    };
    let mut ck = Checkpoint::new(model, stats(5), stats(4)).unwrap();
    ck.meta.insert("strategy".into(), "WESM".into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), ck);
    assert!(Checkpoint::<f64>::load_expecting(&path, &cfg).is_ok());
    let other = TebConfig { d_model: 8, ..cfg };
    assert!(matches!(Checkpoint::<f64>::load_expecting(&path, &other), Err(Error::CheckpointMismatch(_))));
    let bad = Checkpoint::new(ck.model.clone(), stats(4), stats(4));
    assert!(bad.is_err());
}
