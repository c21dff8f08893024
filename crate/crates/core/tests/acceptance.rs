//! Acceptance checks, one line per criterion on stdout.
//!
//! Runs without the default test harness so every pass/fail line is printed
//! even when all checks pass. Criterion 10 needs a local copy of the full
//! structure set and runs only when `EPIGRAPH_ASEP_DIR` points at it.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{LN_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use epigraph::alignment::{nw_align, score_aligned, Scoring};
use epigraph::evaluation::{auc_roc, binary_metrics, evaluate_testset};
use epigraph::geometry::{atom_sasa, contact_map, fibonacci_sphere, self_contact_map, ContactMap, SasaParams};
use epigraph::model::{
    loss_and_grads, walle_loss, Architecture, DecoderKind, EncoderKind, LossConfig, Mode, PreparedPair, WalleModel,
};
use epigraph::split::{split_by_group, split_by_ratio, GroupTargets, SplitFractions};
use epigraph::structure::{Atom, Residue};
use epigraph::tensor::Tensor;
use epigraph::toy::{toy_dataset, toy_train_config, ToySpec};
use epigraph::training::fit;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn random_pair(rng: &mut ChaCha8Rng, id: &str, m: usize, n: usize, dim: usize) -> PreparedPair {
    let feats = |rng: &mut ChaCha8Rng, rows: usize| {
        Tensor::from_vec(rows, dim, (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let graph = |rng: &mut ChaCha8Rng, k: usize| {
        let mut edges: Vec<[usize; 2]> = (0..k - 1).map(|i| [i, i + 1]).collect();
        for i in 0..k {
            for j in i + 2..k {
                if rng.gen_bool(0.25) {
                    edges.push([i, j]);
                }
            }
        }
        epigraph::model::normalize_adjacency(&ContactMap::from_undirected(k, &edges).unwrap(), k).unwrap()
    };
    let labels: Vec<f64> = (0..m * n).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
    let node_labels = (0..n).map(|j| (0..m).any(|i| labels[i * n + j] == 1.0)).collect();
    PreparedPair {
        id: id.to_string(),
        x_ab: feats(rng, m),
        x_ag: feats(rng, n),
        adj_ab: graph(rng, m),
        adj_ag: graph(rng, n),
        labels,
        node_labels,
    }
}

fn loss_at(model: &WalleModel, pairs: &[&PreparedPair], cfg: &LossConfig, mask_seed: u64) -> (f64, Vec<Tensor>) {
    // reseeding makes any dropout mask identical across evaluations
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let lg = loss_and_grads(model, pairs, cfg, Mode::Train, &mut rng).unwrap();
    (lg.loss, lg.grads)
}

fn gradient_fidelity() -> Outcome {
    const STEP: f64 = 1e-6;
    // gradients smaller than this are compared absolutely
    const FLOOR: f64 = 1e-4;
    let start = Instant::now();
    let cfg = LossConfig {
        w_pos: 100.0,
        w_neg: 1.0,
        lambda: 0.05,
        c: 43.0,
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..20u64 {
        for decoder in [DecoderKind::InnerProduct, DecoderKind::Fc] {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let dim = 6;
            let a = random_pair(&mut rng, "a", 5, 7, dim);
            let b = random_pair(&mut rng, "b", 5, 7, dim);
            let pairs = [&a, &b];
            let arch = Architecture {
                dim_ab: dim,
                dim_ag: dim,
                proj_dim: 5,
                hidden_dim: 4,
                out_dim: 3,
                layers: 2,
                encoder: EncoderKind::Gcn,
                decoder,
                dropout: 0.1,
            };
            let mut model = WalleModel::new(arch, seed).unwrap();
            // nonzero biases so every parameter carries signal
            for p in model.params.iter_mut() {
                if p.rows == 1 {
                    for v in p.data.iter_mut() {
                        *v = rng.gen_range(-0.3..0.3);
                    }
                }
            }
            let (_, grads) = loss_at(&model, &pairs, &cfg, seed);
            for k in 0..model.params.len() {
                for e in 0..model.params[k].data.len() {
                    let orig = model.params[k].data[e];
                    model.params[k].data[e] = orig + STEP;
                    let (up, _) = loss_at(&model, &pairs, &cfg, seed);
                    model.params[k].data[e] = orig - STEP;
                    let (down, _) = loss_at(&model, &pairs, &cfg, seed);
                    model.params[k].data[e] = orig;
                    let numeric = (up - down) / (2.0 * STEP);
                    let analytic = grads[k].data[e];
                    let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(FLOOR);
                    if rel >= 1e-4 {
                        return Err(format!(
                            "seed {seed} {decoder:?} {}[{e}]: analytic {analytic:e} numeric {numeric:e}",
                            model.names[k]
                        ));
                    }
                    worst = worst.max(rel);
                    checked += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} gradient entries, max rel err {worst:.2e}, {elapsed:.1?}"))
}

// ---------------------------------------------------------------- 2

fn random_residues(rng: &mut ChaCha8Rng, chain: &str, count: usize, near: &[[f64; 3]]) -> Vec<Residue> {
    (0..count)
        .map(|k| {
            let n_atoms = rng.gen_range(1..=8);
            let base = [rng.gen_range(0.0..12.0), rng.gen_range(0.0..12.0), rng.gen_range(0.0..12.0)];
            let mut atoms: Vec<Atom> = (0..n_atoms)
                .map(|a| {
                    let hydrogen = rng.gen_bool(0.2);
                    Atom {
                        name: format!("X{a}"),
                        element: if hydrogen { "H".into() } else { "C".into() },
                        coords: [
                            base[0] + rng.gen_range(-2.0..2.0),
                            base[1] + rng.gen_range(-2.0..2.0),
                            base[2] + rng.gen_range(-2.0..2.0),
                        ],
                        is_hydrogen: hydrogen,
                    }
                })
                .collect();
            // boundary probes: one heavy atom just inside or outside the cutoff
            if !near.is_empty() && rng.gen_bool(0.4) {
                let target = near[rng.gen_range(0..near.len())];
                let offset = [4.49, 4.51, 4.5][rng.gen_range(0..3)];
                let axis = rng.gen_range(0..3);
                let mut c = target;
                c[axis] += offset;
                atoms[0] = Atom {
                    name: "B".into(),
                    element: "N".into(),
                    coords: c,
                    is_hydrogen: false,
                };
            }
            Residue {
                chain_id: chain.to_string(),
                number: k as i32 + 1,
                insertion_code: None,
                aa3: "GLY".into(),
                aa1: 'G',
                atoms,
            }
        })
        .collect()
}

fn brute_contacts(a: &[Residue], b: &[Residue], cutoff: f64) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (i, ra) in a.iter().enumerate() {
        for (j, rb) in b.iter().enumerate() {
            let hit = ra.atoms.iter().filter(|x| !x.is_hydrogen).any(|x| {
                rb.atoms.iter().filter(|y| !y.is_hydrogen).any(|y| {
                    let d2: f64 = (0..3).map(|k| (x.coords[k] - y.coords[k]).powi(2)).sum();
                    d2.sqrt() < cutoff
                })
            });
            if hit {
                out.insert((i, j));
            }
        }
    }
    out
}

fn as_set(map: &ContactMap, rows: usize, cols: usize) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for i in 0..rows {
        for j in 0..cols {
            if map.contains(i, j) {
                out.insert((i, j));
            }
        }
    }
    assert_eq!(out.len(), map.len());
    out
}

fn contact_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let (mut total, mut boundary) = (0usize, 0usize);
    for case in 0..50 {
        let n_ab = rng.gen_range(1..=20);
        let ab = random_residues(&mut rng, "H", n_ab, &[]);
        let heavy: Vec<[f64; 3]> = ab.iter().flat_map(|r| r.heavy_atoms().map(|a| a.coords)).collect();
        let n_ag = rng.gen_range(1..=20);
        let ag = random_residues(&mut rng, "A", n_ag, &heavy);
        boundary += ag.iter().filter(|r| r.atoms[0].name == "B").count();
        let got = as_set(&contact_map(&ab, &ag, 4.5).unwrap(), ab.len(), ag.len());
        let want = brute_contacts(&ab, &ag, 4.5);
        ensure(got == want, || format!("case {case}: {got:?} != {want:?}"))?;
        let within = as_set(&self_contact_map(&ag, 4.5).unwrap(), ag.len(), ag.len());
        let mut want_self = brute_contacts(&ag, &ag, 4.5);
        want_self.retain(|(i, j)| i != j);
        ensure(within == want_self, || format!("case {case}: intra-chain contacts differ"))?;
        total += want.len();
    }
    // exact boundary: contact is strict
    let at = |x: f64| Residue {
        chain_id: "A".into(),
        number: 1,
        insertion_code: None,
        aa3: "GLY".into(),
        aa1: 'G',
        atoms: vec![Atom {
            name: "CA".into(),
            element: "C".into(),
            coords: [x, 0.0, 0.0],
            is_hydrogen: false,
        }],
    };
    for (x, expect) in [(4.49, true), (4.5, false), (4.51, false)] {
        let got = contact_map(&[at(0.0)], &[at(x)], 4.5).unwrap().contains(0, 0);
        ensure(got == expect, || format!("distance {x}: contact {got}"))?;
    }
    Ok(format!("50 complexes, {total} contacts, {boundary} boundary probes"))
}

// ---------------------------------------------------------------- 3

fn sasa_analytic() -> Outcome {
    let params = SasaParams::default();
    let radii = [1.2, 1.7, 1.9];
    for r in radii {
        let a = atom_sasa(&[[1.0, -2.0, 3.0]], &[r], params).unwrap()[0];
        let exact = 4.0 * PI * (r + 1.4) * (r + 1.4);
        ensure(((a - exact) / exact).abs() < 1e-9, || format!("radius {r}: {a} vs {exact}"))?;
    }
    // the same atoms far apart in one call
    let centers = [[0.0, 0.0, 0.0], [50.0, 0.0, 0.0], [0.0, 50.0, 0.0]];
    let areas = atom_sasa(&centers, &radii, params).unwrap();
    for (a, r) in areas.iter().zip(radii) {
        let exact = 4.0 * PI * (r + 1.4) * (r + 1.4);
        ensure(((a - exact) / exact).abs() < 1e-9, || format!("separated radius {r}: {a}"))?;
    }
    let mut centers = vec![[0.0, 0.0, 0.0]];
    let mut radii = vec![1.7];
    for u in fibonacci_sphere(60) {
        centers.push([3.0 * u[0], 3.0 * u[1], 3.0 * u[2]]);
        radii.push(1.9);
    }
    let enclosed = atom_sasa(&centers, &radii, params).unwrap()[0];
    ensure(enclosed == 0.0, || format!("enclosed atom area {enclosed}"))?;
    Ok("isolated radii 1.2/1.7/1.9 exact, enclosed atom 0".into())
}

// ---------------------------------------------------------------- 4

/// Best score over every global alignment, enumerated column by column.
fn exhaustive_score(a: &[char], b: &[char], s: &Scoring) -> i32 {
    // prev: 0 = match column, 1 = gap in b (a consumed), 2 = gap in a
    fn go(a: &[char], b: &[char], s: &Scoring, i: usize, j: usize, prev: u8) -> i32 {
        if i == a.len() && j == b.len() {
            return 0;
        }
        let mut best = i32::MIN;
        if i < a.len() && j < b.len() {
            best = best.max(s.pair(a[i], b[j]) + go(a, b, s, i + 1, j + 1, 0));
        }
        if i < a.len() {
            let g = if prev == 1 { s.gap_extend } else { s.gap_open };
            best = best.max(g + go(a, b, s, i + 1, j, 1));
        }
        if j < b.len() {
            let g = if prev == 2 { s.gap_extend } else { s.gap_open };
            best = best.max(g + go(a, b, s, i, j + 1, 2));
        }
        best
    }
    go(a, b, s, 0, 0, 0)
}

fn alignment_oracle() -> Outcome {
    let letters: Vec<char> = "ACDEFGHIKLMNPQRSTVWY".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let schemes = [("blosum62 affine", Scoring::blosum62_affine()), ("linear +1/-2", Scoring::seqres_linear())];
    for case in 0..100 {
        // a small alphabet half the time so matches are common
        let alphabet = if case % 2 == 0 { &letters[..4] } else { &letters[..] };
        let seq = |rng: &mut ChaCha8Rng| -> String {
            let len = rng.gen_range(1..=8);
            (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
        };
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        for (name, scoring) in &schemes {
            let aln = nw_align(&a, &b, scoring).unwrap();
            let want = exhaustive_score(&ca, &cb, scoring);
            ensure(aln.score == want, || format!("{name} {a} vs {b}: {} != {want}", aln.score))?;
            let rescored = score_aligned(&aln.aligned_a, &aln.aligned_b, scoring);
            ensure(rescored == want, || format!("{name} {a} vs {b}: returned alignment scores {rescored}"))?;
        }
    }
    Ok("100 pairs x 2 schemes equal exhaustive optimum".into())
}

// ---------------------------------------------------------------- 5

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut degenerate = 0;
    for case in 0..500 {
        let n = rng.gen_range(1..40);
        let p_true = [0.0, 0.3, 0.5, 1.0][case % 4];
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(p_true)).collect();
        let yhat: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let (mut tp, mut fp, mut tn, mut fn_) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (&t, &p) in y.iter().zip(&yhat) {
            match (t, p) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (false, false) => tn += 1.0,
                (true, false) => fn_ += 1.0,
            }
        }
        let safe = |num: f64, den: f64| if den == 0.0 { None } else { Some(num / den) };
        let precision = safe(tp, tp + fp);
        let recall = safe(tp, tp + fn_);
        let f1 = safe(2.0 * tp, 2.0 * tp + fp + fn_);
        let mcc = safe(tp * tn - fp * fn_, ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt());
        let m = binary_metrics(&y, &yhat).unwrap();
        let any_undefined = [precision, recall, f1, mcc].iter().any(Option::is_none);
        ensure(m.degenerate == any_undefined, || format!("case {case}: degenerate flag {}", m.degenerate))?;
        for (name, got, want) in [
            ("precision", m.precision, precision),
            ("recall", m.recall, recall),
            ("f1", m.f1, f1),
            ("mcc", m.mcc, mcc),
        ] {
            ensure(got == want.unwrap_or(0.0), || format!("case {case}: {name} {got} vs {want:?}"))?;
        }
        degenerate += any_undefined as usize;
    }
    let mut single_class = 0;
    for case in 0..100 {
        let n = rng.gen_range(1..30);
        // few distinct levels so ties are frequent
        let levels = rng.gen_range(1..6) as f64;
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * levels).floor() / levels).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let (pos, neg): (Vec<_>, Vec<_>) = scores.iter().zip(&y).partition(|(_, &t)| t);
        let got = auc_roc(&scores, &y).unwrap();
        if pos.is_empty() || neg.is_empty() {
            ensure(got.is_none(), || format!("case {case}: single class gave {got:?}"))?;
            single_class += 1;
            continue;
        }
        let mut wins = 0.0;
        for (a, _) in &pos {
            for (b, _) in &neg {
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        let want = wins / (pos.len() * neg.len()) as f64;
        let got = got.ok_or_else(|| format!("case {case}: no AUC for mixed labels"))?;
        ensure((got - want).abs() <= 1e-12, || format!("case {case}: AUC {got} vs {want}"))?;
    }
    ensure(single_class > 0 && degenerate > 0, || "no degenerate inputs were exercised".into())?;
    Ok(format!("500 metric cases ({degenerate} degenerate), 100 AUC cases ({single_class} single-class)"))
}

// ---------------------------------------------------------------- 6

fn loss_closed_forms() -> Outcome {
    let plain = LossConfig {
        w_pos: 1.0,
        w_neg: 1.0,
        lambda: 0.0,
        c: 43.0,
    };
    let labels: Vec<f64> = (0..30).map(|k| (k % 3 == 0) as u8 as f64).collect();
    let uniform = walle_loss(&[0.5; 30], &labels, &plain);
    ensure((uniform - LN_2).abs() < 1e-12, || format!("uniform loss {uniform}"))?;

    // 86 edges at 0.5 sum to exactly c = 43
    let with_reg = LossConfig { lambda: 7.0, ..plain };
    let labels: Vec<f64> = (0..86).map(|k| (k % 5 == 0) as u8 as f64).collect();
    let at_c = walle_loss(&[0.5; 86], &labels, &with_reg);
    let no_reg = walle_loss(&[0.5; 86], &labels, &plain);
    ensure(at_c == no_reg, || format!("regularizer at sum = c contributes {}", at_c - no_reg))?;
    ensure((at_c - LN_2).abs() < 1e-12, || format!("loss at sum = c {at_c}"))?;
    let off = walle_loss(&[0.5; 84], &labels[..84], &with_reg) - walle_loss(&[0.5; 84], &labels[..84], &plain);
    ensure((off - 7.0).abs() < 1e-12, || format!("regularizer one unit below c gave {off}"))?;

    // an all-zero model predicts 0.5 everywhere
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pair = random_pair(&mut rng, "z", 5, 7, 4);
    let model = WalleModel::zeros(Architecture {
        proj_dim: 4,
        hidden_dim: 4,
        out_dim: 2,
        ..Architecture::walle(4, 4)
    })
    .unwrap();
    let lg = loss_and_grads(&model, &[&pair], &plain, Mode::Eval, &mut rng).unwrap();
    ensure((lg.loss - LN_2).abs() < 1e-12, || format!("zero model loss {}", lg.loss))?;
    Ok("uniform ln 2 and zero regularizer at sum = 43 hold".into())
}

// ---------------------------------------------------------------- 7, 8

fn toy_sets() -> (Vec<PreparedPair>, Vec<PreparedPair>) {
    let pairs = toy_dataset(
        &ToySpec {
            pairs: 30,
            ..ToySpec::default()
        },
        7,
    )
    .unwrap();
    let prep: Vec<PreparedPair> = pairs.iter().map(|p| PreparedPair::from_pair(p).unwrap()).collect();
    let (train, val) = prep.split_at(20);
    (train.to_vec(), val.to_vec())
}

fn overfit_sanity() -> Outcome {
    let (train, _) = toy_sets();
    let cfg = toy_train_config(3);
    let arch = cfg.architecture(train[0].x_ab.cols, train[0].x_ag.cols);
    let start = Instant::now();
    let first = fit(WalleModel::new(arch, cfg.seed).unwrap(), &train, &train, &cfg).unwrap();
    let elapsed = start.elapsed();
    let report = evaluate_testset(&first.model, &train, &cfg.aggregation).unwrap();
    let (link, node) = (report.link.mcc.mean, report.node.mcc.mean);
    ensure(first.history.epochs.len() <= 500, || "more than 500 epochs".into())?;
    ensure(link >= 0.9, || format!("training link MCC {link:.3}"))?;
    ensure(node >= 0.8, || format!("training node MCC {node:.3}"))?;
    ensure(elapsed < Duration::from_secs(120), || format!("training took {elapsed:?}"))?;
    let second = fit(WalleModel::new(arch, cfg.seed).unwrap(), &train, &train, &cfg).unwrap();
    let bits = |h: &epigraph::training::TrainHistory| -> Vec<[u64; 4]> {
        h.epochs
            .iter()
            .map(|r| [r.train_loss.to_bits(), r.val_loss.to_bits(), r.val_metric.to_bits(), r.best_metric.to_bits()])
            .collect()
    };
    ensure(bits(&first.history) == bits(&second.history), || "histories differ between runs".into())?;
    ensure(first.model.params == second.model.params, || "final parameters differ".into())?;
    Ok(format!(
        "link MCC {link:.3}, node MCC {node:.3} after {} epochs in {elapsed:.1?}; rerun bitwise identical",
        first.history.epochs.len()
    ))
}

fn ablation_ordering() -> Outcome {
    let (train, val) = toy_sets();
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let mut scores = BTreeMap::new();
        for encoder in [EncoderKind::Gcn, EncoderKind::Linear] {
            let mut cfg = toy_train_config(seed);
            cfg.encoder = encoder;
            let arch = cfg.architecture(train[0].x_ab.cols, train[0].x_ag.cols);
            let result = fit(WalleModel::new(arch, seed).unwrap(), &train, &val, &cfg).unwrap();
            let report = evaluate_testset(&result.model, &val, &cfg.aggregation).unwrap();
            scores.insert(format!("{encoder:?}"), report.link.mcc.mean);
        }
        let (g, l) = (scores["Gcn"], scores["Linear"]);
        ensure(g > l, || format!("seed {seed}: graph {g:.3} vs linear {l:.3}"))?;
        lines.push(format!("{g:.2}>{l:.2}"));
    }
    Ok(format!("validation link MCC graph>linear on 5/5 seeds ({})", lines.join(", ")))
}

// ---------------------------------------------------------------- 9

fn split_invariants() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 200,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (1usize..80, 1usize..25, 0usize..9, any::<u64>(), 0usize..3);
    runner
        .run(&strategy, |(n, n_groups, n_bins, seed, mode)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ids: Vec<String> = (0..n).map(|k| format!("c{k:03}")).collect();
            let groups: Vec<(String, usize)> = ids.iter().map(|id| (id.clone(), rng.gen_range(0..n_groups))).collect();
            let bins: Vec<(String, usize)> = ids.iter().map(|id| (id.clone(), rng.gen_range(0..=n_bins))).collect();

            let ratio = split_by_ratio(&bins, SplitFractions::default(), seed).unwrap().assignment;
            ratio.check(&ids).unwrap();
            let targets = match mode {
                0 => GroupTargets::Fractions(SplitFractions::default()),
                1 => GroupTargets::Fractions(SplitFractions {
                    train: 0.6,
                    val: 0.2,
                    test: 0.2,
                }),
                _ => GroupTargets::Counts { val: n / 5, test: n / 5 },
            };
            let group = split_by_group(&groups, targets, seed).unwrap().assignment;
            // independent disjointness and coverage check
            let mut all: Vec<&String> = group.train.iter().chain(&group.val).chain(&group.test).collect();
            all.sort();
            let expected: Vec<&String> = ids.iter().collect();
            prop_assert_eq!(all, expected);
            let part = group.partition_of();
            let mut seen: BTreeMap<usize, &epigraph::split::Partition> = BTreeMap::new();
            for (id, g) in &groups {
                let p = &part[id.as_str()];
                let first = *seen.entry(*g).or_insert(p);
                prop_assert_eq!(first, p, "group {} spans partitions", g);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("200 random datasets: disjoint, exhaustive, groups intact".into())
}

// ---------------------------------------------------------------- 10

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["epigraph"];
    argv.extend_from_slice(args);
    match epigraph::cli::run(argv) {
        0 => Ok(()),
        code => Err(format!("epigraph {} exited with {code}", args.join(" "))),
    }
}

fn split_counts(path: &Path) -> Result<(BTreeMap<String, usize>, BTreeMap<usize, usize>, BTreeMap<usize, usize>), String> {
    let rows = epigraph::split::read_split_csv(path).map_err(|e| e.to_string())?;
    let (mut parts, mut val_bins, mut test_bins) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for r in rows {
        *parts.entry(r.partition.as_str().to_string()).or_insert(0) += 1;
        let bin = r.epitope_ratio_bin.unwrap_or(usize::MAX);
        match r.partition.as_str() {
            "val" => *val_bins.entry(bin).or_insert(0) += 1,
            "test" => *test_bins.entry(bin).or_insert(0) += 1,
            _ => {}
        }
    }
    Ok((parts, val_bins, test_bins))
}

fn full_dataset(dir: PathBuf) -> Outcome {
    let start = Instant::now();
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let graphs = work.path().join("graphs");
    let g = graphs.to_str().unwrap();
    run_cli(&["build", "--pdb-dir", dir.to_str().unwrap(), "--out", g])?;
    let pairs = epigraph::cli::read_graphs(&graphs).map_err(|e| e.to_string())?;
    ensure(pairs.len() == 1723, || format!("built {} graph pairs", pairs.len()))?;
    let stats = epigraph::cli::dataset_stats(&pairs).map_err(|e| e.to_string())?;
    ensure((stats.positive_edges_mean - 43.27).abs() <= 0.5, || {
        format!("positive edge mean {}", stats.positive_edges_mean)
    })?;
    ensure(stats.positive_edges_median == 43.0, || format!("median {}", stats.positive_edges_median))?;

    let ratio_dir = work.path().join("ratio");
    run_cli(&["split", "--graphs", g, "--by", "ratio", "--out", ratio_dir.to_str().unwrap()])?;
    let (_, val_bins, test_bins) = split_counts(&ratio_dir.join("split.csv"))?;
    let table = [40, 60, 38, 24, 6, 2, 0, 0];
    for (bin, &want) in table.iter().enumerate() {
        let (v, t) = (val_bins.get(&bin).copied().unwrap_or(0), test_bins.get(&bin).copied().unwrap_or(0));
        ensure(v == want && t == want, || format!("ratio bin {bin}: val {v} test {t}, want {want}"))?;
    }

    let group_dir = work.path().join("group");
    run_cli(&[
        "split", "--graphs", g, "--by", "group", "--val-count", "170", "--test-count", "170", "--out",
        group_dir.to_str().unwrap(),
    ])?;
    let (parts, _, _) = split_counts(&group_dir.join("split.csv"))?;
    let got = (parts.get("train"), parts.get("val"), parts.get("test"));
    ensure(got == (Some(&1383), Some(&170), Some(&170)), || format!("group split {got:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(7200), || format!("took {elapsed:?}"))?;
    Ok(format!("1723 pairs, edge mean {:.2}, bins and group sizes match", stats.positive_edges_mean))
}

// ----------------------------------------------------------------

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "gradient fidelity", gradient_fidelity),
        (2, "contact oracle", contact_oracle),
        (3, "SASA analytic case", sasa_analytic),
        (4, "alignment oracle", alignment_oracle),
        (5, "metric oracles", metric_oracles),
        (6, "loss closed forms", loss_closed_forms),
        (7, "overfit sanity", overfit_sanity),
        (8, "ablation ordering", ablation_ordering),
        (9, "split invariants", split_invariants),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): pass - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {detail}");
            }
        }
    }
    match std::env::var_os("EPIGRAPH_ASEP_DIR") {
        Some(dir) => match full_dataset(PathBuf::from(dir)) {
            Ok(detail) => println!("criterion 10 (full dataset): pass - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion 10 (full dataset): FAIL - {detail}");
            }
        },
        None => println!("criterion 10 (full dataset): skipped - set EPIGRAPH_ASEP_DIR to a local structure copy"),
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
