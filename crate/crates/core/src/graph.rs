//! Antibody CDR graph and antigen surface graph for one complex, with
//! bipartite contact labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::seqres_to_atmseq_mask;
use crate::encoding::FeatureMatrix;
use crate::geometry::{self, ContactMap, SasaProfile};
use crate::structure::{AbAgComplex, Chain, Residue, ResidueKey};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CdrInterval {
    pub start: i32,
    pub end: i32,
}

impl CdrInterval {
    /// Insertion codes are ignored: `100A` belongs wherever `100` does.
    pub fn contains(&self, number: i32) -> bool {
        number >= self.start && number <= self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdrLoop {
    pub chain_type: char,
    pub name: String,
    pub interval: CdrInterval,
}

/// CDR loop boundaries per chain type (`H` or `L`).
#[derive(Debug, Clone, PartialEq)]
pub struct CdrRangeTable {
    pub loops: Vec<CdrLoop>,
}

const BUNDLED_ABM: &str = include_str!("../data/abm_martin.tsv");

impl CdrRangeTable {
    /// AbM loop definitions under Martin numbering.
    pub fn abm_martin() -> Self {
        Self::parse(BUNDLED_ABM).expect("bundled CDR table parses")
    }

    /// Tab/space separated `chain_type loop start end`; `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut loops = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = |m: &str| Error::Parse {
                line: i + 1,
                message: m.to_string(),
            };
            if parts.len() != 4 {
                return Err(bad("expected `chain_type loop start end`"));
            }
            let chain_type = match parts[0] {
                "H" => 'H',
                "L" => 'L',
                other => return Err(bad(&format!("chain type must be H or L, got {other}"))),
            };
            let start: i32 = parts[2].parse().map_err(|_| bad("bad start"))?;
            let end: i32 = parts[3].parse().map_err(|_| bad("bad end"))?;
            if end < start {
                return Err(bad("interval end before start"));
            }
            loops.push(CdrLoop {
                chain_type,
                name: parts[1].to_string(),
                interval: CdrInterval { start, end },
            });
        }
        Ok(CdrRangeTable { loops })
    }

    pub fn intervals(&self, chain_type: char) -> impl Iterator<Item = CdrInterval> + '_ {
        self.loops
            .iter()
            .filter(move |l| l.chain_type == chain_type)
            .map(|l| l.interval)
    }

    pub fn is_cdr(&self, chain_type: char, number: i32) -> bool {
        self.intervals(chain_type).any(|iv| iv.contains(number))
    }
}

/// `true` for residues inside any CDR loop of the given chain type.
pub fn cdr_mask(chain: &Chain, chain_type: char, ranges: &CdrRangeTable) -> Result<Vec<bool>> {
    let mask: Vec<bool> = chain
        .residues
        .iter()
        .map(|r| ranges.is_cdr(chain_type, r.number))
        .collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::Graph(format!(
            "chain {} has no residues in any {chain_type} CDR loop",
            chain.id
        )));
    }
    Ok(mask)
}

/// Per-chain residue selection projected onto that chain's SEQRES.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSegment {
    pub chain: String,
    pub seqres: String,
    /// `1` where the SEQRES position is a graph node.
    pub mask: Vec<u8>,
}

impl ChainSegment {
    pub fn node_positions(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 1)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeGraph {
    pub node_ids: Vec<ResidueKey>,
    pub adjacency: ContactMap,
    pub features: Option<FeatureMatrix>,
    /// One segment per chain, in node order (heavy then light for antibodies).
    pub segments: Vec<ChainSegment>,
}

impl NodeGraph {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// `(segment index, SEQRES position)` for each node, in node order.
    pub fn seqres_positions(&self) -> Vec<(usize, usize)> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(s, seg)| seg.node_positions().into_iter().map(move |p| (s, p)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub cdr_count: usize,
    pub surface_count: usize,
    pub epitope_count: usize,
    pub epitope_ratio: f64,
    pub positive_edge_count: usize,
}

impl PairStats {
    /// 5 %-wide epitope-ratio bin, computed in integers so bin edges are exact.
    pub fn ratio_bin(&self) -> usize {
        if self.surface_count == 0 {
            return 0;
        }
        self.epitope_count * 20 / self.surface_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphPair {
    pub id: String,
    pub ab: NodeGraph,
    pub ag: NodeGraph,
    /// Sorted `(antibody node, antigen node)` contacts.
    pub edge_labels: Vec<[usize; 2]>,
    pub node_labels: Vec<bool>,
    pub stats: PairStats,
}

impl GraphPair {
    pub fn m(&self) -> usize {
        self.ab.len()
    }

    pub fn n(&self) -> usize {
        self.ag.len()
    }

    /// Dense row-major `m × n` label matrix.
    pub fn dense_labels(&self) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; self.m() * n];
        for &[i, j] in &self.edge_labels {
            y[i * n + j] = 1.0;
        }
        y
    }

    /// Epitope flags implied by the bipartite labels.
    pub fn labels_from_edges(m_edges: &[[usize; 2]], n: usize) -> Vec<bool> {
        let mut out = vec![false; n];
        for &[_, j] in m_edges {
            out[j] = true;
        }
        out
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.node_labels.len() != self.n() {
            return Err(Error::Graph(format!("{}: node label count mismatch", self.id)));
        }
        if Self::labels_from_edges(&self.edge_labels, self.n()) != self.node_labels {
            return Err(Error::Graph(format!(
                "{}: node labels disagree with bipartite edges",
                self.id
            )));
        }
        for &[i, j] in &self.edge_labels {
            if i >= self.m() || j >= self.n() {
                return Err(Error::Graph(format!("{}: edge ({i}, {j}) out of range", self.id)));
            }
        }
        for g in [&self.ab, &self.ag] {
            if g.adjacency.rows != g.len() || g.adjacency.cols != g.len() {
                return Err(Error::Graph(format!("{}: adjacency size mismatch", self.id)));
            }
            if let Some(f) = &g.features {
                if f.rows != g.len() {
                    return Err(Error::Graph(format!(
                        "{}: {} feature rows for {} nodes",
                        self.id,
                        f.rows,
                        g.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub cutoff: f64,
    pub ranges: CdrRangeTable,
    /// Residues with area above this are surface (0 keeps any exposure).
    pub min_area: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            cutoff: geometry::DEFAULT_CUTOFF,
            ranges: CdrRangeTable::abm_martin(),
            min_area: 0.0,
        }
    }
}

fn chain_segment(chain: &Chain, selected: &[bool]) -> Result<ChainSegment> {
    let seqres = chain.full_sequence().to_string();
    let mapping = seqres_to_atmseq_mask(&seqres, &chain.atmseq)
        .map_err(|e| Error::Graph(format!("chain {}: {e}", chain.id)))?;
    let mut mask = vec![0u8; mapping.map.a_to_b.len()];
    let mut mapped = vec![false; chain.residues.len()];
    for (p, target) in mapping.map.a_to_b.iter().enumerate() {
        if let Some(r) = *target {
            mapped[r] = true;
            if selected[r] {
                mask[p] = 1;
            }
        }
    }
    if let Some(r) = (0..chain.residues.len()).find(|&r| selected[r] && !mapped[r]) {
        return Err(Error::Graph(format!(
            "residue {} has no SEQRES position",
            chain.residues[r].key()
        )));
    }
    Ok(ChainSegment {
        chain: chain.id.clone(),
        seqres,
        mask,
    })
}

fn select<'a>(residues: &'a [Residue], mask: &[bool]) -> Vec<&'a Residue> {
    residues.iter().zip(mask).filter(|(_, &m)| m).map(|(r, _)| r).collect()
}

fn owned(rs: &[&Residue]) -> Vec<Residue> {
    rs.iter().map(|r| (*r).clone()).collect()
}

/// Assembles the graph pair; `sasa` must be computed on the antigen chain alone.
pub fn build_graph_pair(c: &AbAgComplex, sasa: &SasaProfile, opts: &BuildOptions) -> Result<GraphPair> {
    if sasa.areas.len() != c.antigen.residues.len() {
        return Err(Error::Shape(format!(
            "SASA profile has {} entries for {} antigen residues",
            sasa.areas.len(),
            c.antigen.residues.len()
        )));
    }
    let heavy_mask = cdr_mask(&c.heavy, 'H', &opts.ranges)?;
    let light_mask = cdr_mask(&c.light, 'L', &opts.ranges)?;
    let surface = geometry::surface_mask(sasa, opts.min_area);
    if !surface.iter().any(|&s| s) {
        return Err(Error::Graph(format!("{}: antigen has no surface residues", c.id)));
    }

    // residue order inside a chain is SEQRES order, which is also CDR1..3 order
    let mut cdr: Vec<Residue> = owned(&select(&c.heavy.residues, &heavy_mask));
    cdr.extend(owned(&select(&c.light.residues, &light_mask)));
    let surface_idx: Vec<usize> = (0..surface.len()).filter(|&k| surface[k]).collect();

    // epitope over the whole antigen chain first, then checked against the surface
    let full = geometry::contact_map(&cdr, &c.antigen.residues, opts.cutoff)?;
    let mut epitope_full = vec![false; c.antigen.residues.len()];
    for &(_, j) in &full.entries {
        epitope_full[j] = true;
    }
    if let Some(j) = (0..epitope_full.len()).find(|&j| epitope_full[j] && !surface[j]) {
        return Err(Error::Graph(format!(
            "{}: epitope residue {} has zero accessible area",
            c.id,
            c.antigen.residues[j].key()
        )));
    }
    let all_cdr: Vec<usize> = (0..cdr.len()).collect();
    let bipartite = full.restrict(&all_cdr, &surface_idx);
    let edge_labels: Vec<[usize; 2]> = bipartite.entries.iter().map(|&(i, j)| [i, j]).collect();
    let node_labels = GraphPair::labels_from_edges(&edge_labels, surface_idx.len());

    let ab_adj = geometry::self_contact_map(&cdr, opts.cutoff)?;
    let ag_adj = geometry::self_contact_map(&c.antigen.residues, opts.cutoff)?
        .restrict(&surface_idx, &surface_idx);

    let ab = NodeGraph {
        node_ids: cdr.iter().map(Residue::key).collect(),
        adjacency: ab_adj,
        features: None,
        segments: vec![chain_segment(&c.heavy, &heavy_mask)?, chain_segment(&c.light, &light_mask)?],
    };
    let ag_segment = chain_segment(&c.antigen, &surface)?;
    let ag = NodeGraph {
        node_ids: surface_idx.iter().map(|&k| c.antigen.residues[k].key()).collect(),
        adjacency: ag_adj,
        features: None,
        segments: vec![ag_segment],
    };
    let epitope_count = node_labels.iter().filter(|&&l| l).count();
    let stats = PairStats {
        cdr_count: ab.len(),
        surface_count: ag.len(),
        epitope_count,
        epitope_ratio: epitope_count as f64 / ag.len() as f64,
        positive_edge_count: edge_labels.len(),
    };
    let pair = GraphPair {
        id: c.id.clone(),
        ab,
        ag,
        edge_labels,
        node_labels,
        stats,
    };
    pair.check_invariants()?;
    Ok(pair)
}

/// SEQRES-level epitope mask of the antigen (`seqres2epitope`).
pub fn seqres_epitope_mask(pair: &GraphPair) -> Vec<u8> {
    let seg = &pair.ag.segments[0];
    let mut mask = vec![0u8; seg.mask.len()];
    for (node, pos) in seg.node_positions().into_iter().enumerate() {
        if pair.node_labels[node] {
            mask[pos] = 1;
        }
    }
    mask
}

#[derive(Debug, Serialize, Deserialize)]
struct AbJson {
    chains: Vec<String>,
    seqres: Vec<String>,
    node_ids: Vec<ResidueKey>,
    edges: Vec<[usize; 2]>,
    seqres2cdr: Vec<Vec<u8>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AgJson {
    chains: Vec<String>,
    seqres: Vec<String>,
    node_ids: Vec<ResidueKey>,
    edges: Vec<[usize; 2]>,
    seqres2surf: Vec<u8>,
    seqres2epitope: Vec<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairJson {
    id: String,
    ab: AbJson,
    ag: AgJson,
    bipartite_edges: Vec<[usize; 2]>,
    stats: PairStats,
}

impl GraphPair {
    /// One JSON document, sorted edge lists, LF-terminated.
    pub fn to_json(&self) -> Result<String> {
        if self.ag.segments.len() != 1 {
            return Err(Error::Graph("antigen graph must have exactly one chain segment".into()));
        }
        let doc = PairJson {
            id: self.id.clone(),
            ab: AbJson {
                chains: self.ab.segments.iter().map(|s| s.chain.clone()).collect(),
                seqres: self.ab.segments.iter().map(|s| s.seqres.clone()).collect(),
                node_ids: self.ab.node_ids.clone(),
                edges: self.ab.adjacency.upper_pairs(),
                seqres2cdr: self.ab.segments.iter().map(|s| s.mask.clone()).collect(),
            },
            ag: AgJson {
                chains: vec![self.ag.segments[0].chain.clone()],
                seqres: vec![self.ag.segments[0].seqres.clone()],
                node_ids: self.ag.node_ids.clone(),
                edges: self.ag.adjacency.upper_pairs(),
                seqres2surf: self.ag.segments[0].mask.clone(),
                seqres2epitope: seqres_epitope_mask(self),
            },
            bipartite_edges: self.edge_labels.clone(),
            stats: self.stats,
        };
        let mut s = serde_json::to_string(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<GraphPair> {
        let doc: PairJson = serde_json::from_str(text)?;
        let segments = |chains: Vec<String>, seqres: Vec<String>, masks: Vec<Vec<u8>>| -> Result<Vec<ChainSegment>> {
            if chains.len() != seqres.len() || chains.len() != masks.len() {
                return Err(Error::Format("chains/seqres/mask lengths differ".into()));
            }
            chains
                .into_iter()
                .zip(seqres)
                .zip(masks)
                .map(|((chain, seqres), mask)| {
                    if seqres.chars().count() != mask.len() {
                        return Err(Error::Format(format!("chain {chain}: mask length != SEQRES length")));
                    }
                    Ok(ChainSegment { chain, seqres, mask })
                })
                .collect()
        };
        let mut edge_labels = doc.bipartite_edges;
        edge_labels.sort_unstable();
        let ab = NodeGraph {
            adjacency: ContactMap::from_undirected(doc.ab.node_ids.len(), &doc.ab.edges)?,
            node_ids: doc.ab.node_ids,
            features: None,
            segments: segments(doc.ab.chains, doc.ab.seqres, doc.ab.seqres2cdr)?,
        };
        let ag = NodeGraph {
            adjacency: ContactMap::from_undirected(doc.ag.node_ids.len(), &doc.ag.edges)?,
            node_ids: doc.ag.node_ids,
            features: None,
            segments: segments(doc.ag.chains, doc.ag.seqres, vec![doc.ag.seqres2surf])?,
        };
        for g in [&ab, &ag] {
            let mapped: usize = g.segments.iter().map(|s| s.node_positions().len()).sum();
            if mapped != g.len() {
                return Err(Error::Format(format!(
                    "{}: {} masked SEQRES positions for {} nodes",
                    doc.id,
                    mapped,
                    g.len()
                )));
            }
        }
        let node_labels = GraphPair::labels_from_edges(&edge_labels, ag.len());
        let pair = GraphPair {
            id: doc.id,
            ab,
            ag,
            edge_labels,
            node_labels,
            stats: doc.stats,
        };
        pair.check_invariants()?;
        Ok(pair)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn read_json(path: &Path) -> Result<GraphPair> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::Atom;

    fn res(chain: &str, number: i32, ins: Option<char>, aa: char, xyz: [f64; 3]) -> Residue {
        Residue {
            chain_id: chain.into(),
            number,
            insertion_code: ins,
            aa3: "ALA".into(),
            aa1: aa,
            atoms: vec![Atom { name: "CA".into(), element: "C".into(), coords: xyz, is_hydrogen: false }],
        }
    }

    fn chain(id: &str, residues: Vec<Residue>) -> Chain {
        Chain {
            id: id.into(),
            atmseq: residues.iter().map(|r| r.aa1).collect(),
            seqres: String::new(),
            residues,
        }
    }

    #[test]
    fn cdr_membership_and_insertions() {
        let t = CdrRangeTable::abm_martin();
        assert!(t.is_cdr('H', 100));
        assert!(!t.is_cdr('H', 70));
        assert!(t.is_cdr('L', 24));
        let heavy = chain(
            "H",
            vec![
                res("H", 97, None, 'A', [0.0; 3]),
                res("H", 70, None, 'A', [0.0; 3]),
                res("H", 100, Some('A'), 'A', [0.0; 3]),
            ],
        );
        assert_eq!(cdr_mask(&heavy, 'H', &t).unwrap(), vec![true, false, true]);
        let framework = chain("H", vec![res("H", 70, None, 'A', [0.0; 3])]);
        assert!(cdr_mask(&framework, 'H', &t).is_err());
    }

    #[test]
    fn table_parse_errors() {
        assert!(CdrRangeTable::parse("X H1 1 2").is_err());
        assert!(CdrRangeTable::parse("H H1 5 2").is_err());
        assert!(CdrRangeTable::parse("H H1 5").is_err());
    }

    /// Three CDR residues (H26, H27, L89) against four antigen residues.
    fn toy_complex(offset: f64) -> (AbAgComplex, SasaProfile) {
        let heavy = chain(
            "H",
            vec![
                res("H", 1, None, 'E', [100.0, 100.0, 100.0]),
                res("H", 26, None, 'G', [0.0 + offset, 4.0, 0.0]),
                res("H", 27, None, 'Y', [3.0 + offset, 4.0, 0.0]),
            ],
        );
        let light = chain(
            "L",
            vec![res("L", 89, None, 'Q', [9.0 + offset, 4.0, 0.0]), res("L", 2, None, 'I', [-100.0, 0.0, 0.0])],
        );
        let antigen = chain(
            "A",
            vec![
                res("A", 1, None, 'M', [0.0, 0.0, 0.0]),
                res("A", 2, None, 'K', [3.0, 0.0, 0.0]),
                res("A", 3, None, 'V', [6.0, 0.0, 0.0]),
                res("A", 4, None, 'L', [9.5, 0.0, 0.0]),
            ],
        );
        let c = AbAgComplex { id: "toy".into(), heavy, light, antigen, antigen_seqres_fallback: true };
        let sasa = SasaProfile { areas: vec![10.0, 5.0, 0.0, 8.0], probe_radius: 1.4, points_per_atom: 960 };
        (c, sasa)
    }

    #[test]
    fn toy_pair_matches_brute_force() {
        let (c, sasa) = toy_complex(0.0);
        let p = build_graph_pair(&c, &sasa, &BuildOptions::default()).unwrap();
        assert_eq!(p.m(), 3);
        assert_eq!(p.n(), 3); // residue A3 is buried
        let cdr: [[f64; 3]; 3] = [[0.0, 4.0, 0.0], [3.0, 4.0, 0.0], [9.0, 4.0, 0.0]];
        let surf = [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [9.5, 0.0, 0.0]];
        let mut expect = Vec::new();
        for (i, a) in cdr.iter().enumerate() {
            for (j, b) in surf.iter().enumerate() {
                let d: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
                if d < 4.5 {
                    expect.push([i, j]);
                }
            }
        }
        assert_eq!(p.edge_labels, expect);
        assert_eq!(p.node_labels, vec![true, true, true]);
        assert_eq!(p.stats.positive_edge_count, expect.len());
        assert_eq!(p.ab.node_ids[2].to_string(), "L:89");
        assert_eq!(p.ab.segments[0].mask, vec![0, 1, 1]);
        assert_eq!(p.ag.segments[0].mask, vec![1, 1, 0, 1]);
        assert_eq!(seqres_epitope_mask(&p), vec![1, 1, 0, 1]);
    }

    #[test]
    fn distant_antibody_has_no_labels() {
        let (c, sasa) = toy_complex(100.0);
        let p = build_graph_pair(&c, &sasa, &BuildOptions::default()).unwrap();
        assert!(p.edge_labels.is_empty());
        assert!(p.node_labels.iter().all(|l| !l));
        assert_eq!(p.stats.epitope_ratio, 0.0);
    }

    #[test]
    fn buried_epitope_is_an_error() {
        let (c, mut sasa) = toy_complex(0.0);
        sasa.areas[0] = 0.0;
        assert!(matches!(build_graph_pair(&c, &sasa, &BuildOptions::default()), Err(Error::Graph(_))));
        sasa.areas = vec![0.0; 4];
        assert!(build_graph_pair(&c, &sasa, &BuildOptions::default()).is_err());
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let (c, sasa) = toy_complex(0.0);
        let p = build_graph_pair(&c, &sasa, &BuildOptions::default()).unwrap();
        let text = p.to_json().unwrap();
        let back = GraphPair::from_json(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json().unwrap(), text);
        assert!(text.contains("\"bipartite_edges\""));
        assert!(text.contains("\"seqres2epitope\""));
    }

    #[test]
    fn ratio_bins_are_exact() {
        let s = |e, n| PairStats { cdr_count: 1, surface_count: n, epitope_count: e, epitope_ratio: 0.0, positive_edge_count: 0 };
        assert_eq!(s(0, 100).ratio_bin(), 0);
        assert_eq!(s(4, 100).ratio_bin(), 0);
        assert_eq!(s(5, 100).ratio_bin(), 1);
        assert_eq!(s(10, 100).ratio_bin(), 2);
        assert_eq!(s(39, 100).ratio_bin(), 7);
    }
}
