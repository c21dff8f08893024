//! Gradients of the model variants and training-loop behaviour.

use epigraph::geometry::ContactMap;
use epigraph::model::{
    loss_and_grads, normalize_adjacency, walle_l_forward, Architecture, DecoderKind, EncoderKind, LossConfig, Mode,
    PreparedPair, WalleModel,
};
use epigraph::tensor::Tensor;
use epigraph::toy::{toy_dataset, toy_train_config, ToySpec};
use epigraph::training::{fit, sweep, HyperSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pair(rng: &mut ChaCha8Rng, m: usize, n: usize, dim: usize) -> PreparedPair {
    let mut feats = |rows: usize| {
        Tensor::from_vec(rows, dim, (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let (x_ab, x_ag) = (feats(m), feats(n));
    let path = |k: usize| {
        let edges: Vec<[usize; 2]> = (0..k - 1).map(|i| [i, i + 1]).collect();
        normalize_adjacency(&ContactMap::from_undirected(k, &edges).unwrap(), k).unwrap()
    };
    let labels: Vec<f64> = (0..m * n).map(|k| (k % 4 == 0) as u8 as f64).collect();
    PreparedPair {
        id: "r".into(),
        x_ab,
        x_ag,
        adj_ab: path(m),
        adj_ag: path(n),
        node_labels: (0..n).map(|j| j % 4 == 0).collect(),
        labels,
    }
}

fn max_rel_error(arch: Architecture, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pair = random_pair(&mut rng, 5, 7, arch.dim_ab);
    let cfg = LossConfig {
        w_pos: 100.0,
        w_neg: 1.0,
        lambda: 0.1,
        c: 43.0,
    };
    let mut model = WalleModel::new(arch, seed).unwrap();
    let eval = |m: &WalleModel| {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        loss_and_grads(m, &[&pair], &cfg, Mode::Train, &mut r).unwrap()
    };
    let grads = eval(&model).grads;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..model.params.len() {
        for e in 0..model.params[k].data.len() {
            let orig = model.params[k].data[e];
            model.params[k].data[e] = orig + h;
            let up = eval(&model).loss;
            model.params[k].data[e] = orig - h;
            let down = eval(&model).loss;
            model.params[k].data[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[k].data[e];
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4));
        }
    }
    worst
}

fn small(encoder: EncoderKind, decoder: DecoderKind, layers: usize) -> Architecture {
    Architecture {
        dim_ab: 4,
        dim_ag: 4,
        proj_dim: 4,
        hidden_dim: 3,
        out_dim: 3,
        layers,
        encoder,
        decoder,
        dropout: 0.2,
    }
}

#[test]
fn linear_variant_gradients_match_finite_differences() {
    for decoder in [DecoderKind::InnerProduct, DecoderKind::Fc] {
        for seed in 0..5 {
            let err = max_rel_error(small(EncoderKind::Linear, decoder, 2), seed);
            assert!(err < 1e-4, "{decoder:?} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn gradients_hold_for_other_depths() {
    for layers in [1, 3] {
        for decoder in [DecoderKind::InnerProduct, DecoderKind::Fc] {
            let err = max_rel_error(small(EncoderKind::Gcn, decoder, layers), layers as u64);
            assert!(err < 1e-4, "{layers} layers {decoder:?}: {err:e}");
        }
    }
}

#[test]
fn linear_forward_ignores_the_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pair = random_pair(&mut rng, 4, 6, 4);
    let mut rewired = pair.clone();
    rewired.adj_ag = Tensor::identity(6);
    let model = WalleModel::new(small(EncoderKind::Gcn, DecoderKind::InnerProduct, 2), 1).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let a = walle_l_forward(&model, &pair, Mode::Eval, &mut r).unwrap();
    let b = walle_l_forward(&model, &rewired, Mode::Eval, &mut r).unwrap();
    assert_eq!(a, b);
}

fn toy_split() -> (Vec<PreparedPair>, Vec<PreparedPair>) {
    let pairs = toy_dataset(
        &ToySpec {
            pairs: 12,
            ..ToySpec::default()
        },
        21,
    )
    .unwrap();
    let prep: Vec<PreparedPair> = pairs.iter().map(|p| PreparedPair::from_pair(p).unwrap()).collect();
    (prep[..8].to_vec(), prep[8..].to_vec())
}

#[test]
fn patience_stops_training_early() {
    let (train, val) = toy_split();
    let mut cfg = toy_train_config(2);
    cfg.epochs = 400;
    cfg.early_stop_patience = 3;
    let model = WalleModel::new(cfg.architecture(21, 21), 2).unwrap();
    let result = fit(model, &train, &val, &cfg).unwrap();
    let h = &result.history.epochs;
    assert!(result.stopped_early);
    assert!(h.len() < 400);
    // the last improvement is exactly patience + 1 epochs before the end
    let best = result.history.best_epoch().unwrap();
    assert_eq!(h.len() - best, 4);
    assert!(h.windows(2).all(|w| w[1].best_metric >= w[0].best_metric));
}

#[test]
fn returned_model_is_the_best_snapshot() {
    let (train, val) = toy_split();
    let mut cfg = toy_train_config(4);
    cfg.epochs = 30;
    let model = WalleModel::new(cfg.architecture(21, 21), 4).unwrap();
    let result = fit(model, &train, &val, &cfg).unwrap();
    let v = epigraph::training::validate(&result.model, &val, &cfg).unwrap();
    let best = result.history.epochs.last().unwrap().best_metric;
    assert_eq!(v.link_mcc, best);
}

#[test]
fn empty_partitions_are_configuration_errors() {
    let (train, _) = toy_split();
    let cfg = toy_train_config(0);
    let model = WalleModel::new(cfg.architecture(21, 21), 0).unwrap();
    assert!(fit(model.clone(), &train, &[], &cfg).is_err());
    assert!(fit(model, &[], &train, &cfg).is_err());
}

#[test]
fn sweep_ranks_by_validation_metric() {
    let (train, val) = toy_split();
    let mut base = toy_train_config(0);
    base.epochs = 5;
    let space = HyperSpace {
        w_pos: (1.0, 10.0),
        ..HyperSpace::default()
    };
    let ranked = sweep(&base, &space, 3, 17, &train, &val).unwrap();
    assert_eq!(ranked.len(), 3);
    assert!(ranked.windows(2).all(|w| w[0].best_metric >= w[1].best_metric));
    let again = sweep(&base, &space, 3, 17, &train, &val).unwrap();
    let metrics = |r: &[epigraph::training::SweepEntry]| r.iter().map(|e| e.best_metric).collect::<Vec<_>>();
    assert_eq!(metrics(&ranked), metrics(&again));
}
