//! Small synthetic graph pairs with a planted neighbourhood rule.
//!
//! Each antigen graph holds one tryptophan "hotspot"; the epitope is the
//! hotspot plus its graph neighbours. The antibody side works the same way
//! with a tyrosine hotspot. Every paratope × epitope pair is a positive link.
//! Neighbours carry ordinary residue types, so a per-node model sees only the
//! hotspot while a graph model can also recover its neighbourhood.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::{attach_features, onehot_encode};
use crate::geometry::ContactMap;
use crate::graph::{ChainSegment, GraphPair, NodeGraph, PairStats};
use crate::model::{AggregationConfig, LossConfig};
use crate::structure::ResidueKey;
use crate::training::TrainConfig;
use crate::Result;

const FILLER: &[char] = &[
    'A', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V',
];
pub const ANTIBODY_HOTSPOT: char = 'Y';
pub const ANTIGEN_HOTSPOT: char = 'W';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySpec {
    pub pairs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Extra random non-path edges per graph.
    pub chords: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            pairs: 20,
            min_nodes: 6,
            max_nodes: 10,
            chords: 1,
        }
    }
}

struct ToyGraph {
    seq: String,
    edges: Vec<[usize; 2]>,
    active: Vec<bool>,
}

fn toy_graph(rng: &mut ChaCha8Rng, n: usize, chords: usize, hotspot: char) -> ToyGraph {
    let mut edges: Vec<[usize; 2]> = (0..n - 1).map(|i| [i, i + 1]).collect();
    for _ in 0..chords {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let e = [i.min(j), i.max(j)];
        if i != j && !edges.contains(&e) {
            edges.push(e);
        }
    }
    edges.sort_unstable();
    let h = rng.gen_range(0..n);
    let mut seq: Vec<char> = (0..n).map(|_| *FILLER.choose(rng).expect("non-empty")).collect();
    seq[h] = hotspot;
    let mut active = vec![false; n];
    active[h] = true;
    for &[a, b] in &edges {
        if a == h {
            active[b] = true;
        }
        if b == h {
            active[a] = true;
        }
    }
    ToyGraph {
        seq: seq.into_iter().collect(),
        edges,
        active,
    }
}

fn node_graph(chains: &[(&str, &str)], edges: &[[usize; 2]]) -> Result<NodeGraph> {
    let mut node_ids = Vec::new();
    let mut segments = Vec::new();
    for (chain, seq) in chains {
        let len = seq.chars().count();
        node_ids.extend((1..=len as i32).map(|k| ResidueKey::new(*chain, k, None)));
        segments.push(ChainSegment {
            chain: chain.to_string(),
            seqres: seq.to_string(),
            mask: vec![1; len],
        });
    }
    let n = node_ids.len();
    let mut g = NodeGraph {
        node_ids,
        adjacency: ContactMap::from_undirected(n, edges)?,
        features: None,
        segments,
    };
    let full: String = chains.iter().map(|c| c.1).collect();
    attach_features(&mut g, &onehot_encode(&full)?)?;
    Ok(g)
}

/// Deterministic toy dataset with one-hot features attached.
pub fn toy_dataset(spec: &ToySpec, seed: u64) -> Result<Vec<GraphPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.pairs);
    for k in 0..spec.pairs {
        let m = rng.gen_range(spec.min_nodes..=spec.max_nodes);
        let n = rng.gen_range(spec.min_nodes..=spec.max_nodes);
        let ab = toy_graph(&mut rng, m, spec.chords, ANTIBODY_HOTSPOT);
        let ag = toy_graph(&mut rng, n, spec.chords, ANTIGEN_HOTSPOT);
        let split = m.div_ceil(2);
        let (heavy, light) = ab.seq.split_at(split);
        let ab_graph = node_graph(&[("H", heavy), ("L", light)], &ab.edges)?;
        let ag_graph = node_graph(&[("A", &ag.seq)], &ag.edges)?;
        let mut edge_labels = Vec::new();
        for i in (0..m).filter(|&i| ab.active[i]) {
            for j in (0..n).filter(|&j| ag.active[j]) {
                edge_labels.push([i, j]);
            }
        }
        let node_labels = ag.active.clone();
        let epitope_count = node_labels.iter().filter(|&&l| l).count();
        let pair = GraphPair {
            id: format!("toy{k:03}"),
            ab: ab_graph,
            ag: ag_graph,
            stats: PairStats {
                cdr_count: m,
                surface_count: n,
                epitope_count,
                epitope_ratio: epitope_count as f64 / n as f64,
                positive_edge_count: edge_labels.len(),
            },
            edge_labels,
            node_labels,
        };
        pair.check_invariants()?;
        out.push(pair);
    }
    Ok(out)
}

/// Training settings sized for the toy graphs.
pub fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 5e-3,
        epochs: 500,
        seed,
        early_stop_patience: 500,
        loss: LossConfig {
            w_pos: 5.0,
            w_neg: 1.0,
            lambda: 0.0,
            c: 43.0,
        },
        aggregation: AggregationConfig { node_threshold: 1.5 },
        proj_dim: 32,
        hidden_dim: 32,
        out_dim: 16,
        ..TrainConfig::default()
    }
}
