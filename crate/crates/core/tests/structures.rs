//! Structure fixtures against goldens computed by `fixtures/make_structures.py`.

use std::path::{Path, PathBuf};

use epigraph::graph::GraphPair;
use epigraph::structure::parse_pdb;
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn golden() -> Value {
    let text = std::fs::read_to_string(fixtures().join("fx01.golden.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn build_all() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("graphs");
    let code = epigraph::cli::run([
        "epigraph",
        "build",
        "--pdb-dir",
        fixtures().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    (dir, out)
}

fn read(out: &Path, id: &str) -> GraphPair {
    GraphPair::read_json(&out.join(format!("{id}.graph.json"))).unwrap()
}

#[test]
fn parser_handles_models_altlocs_and_hetero_residues() {
    let text = std::fs::read_to_string(fixtures().join("fx01.pdb")).unwrap();
    let s = parse_pdb(&text).unwrap();
    let g = golden();
    let antigen = s.chain("A").unwrap();
    assert_eq!(antigen.residues.len(), g["antigen_resolved"].as_u64().unwrap() as usize);
    // selenomethionine read as methionine, water dropped
    let mse = antigen.residues.iter().find(|r| r.number == 10).unwrap();
    assert_eq!(mse.aa1, 'M');
    assert!(antigen.residues.iter().all(|r| r.aa3 != "HOH"));
    // only the first alternate location survives
    let r12 = antigen.residues.iter().find(|r| r.number == 12).unwrap();
    let cas: Vec<_> = r12.atoms.iter().filter(|a| a.name == "CA").collect();
    assert_eq!(cas.len(), 1);
    assert!(cas[0].coords[2] < 20.0);
    assert!(r12.atoms.iter().any(|a| a.is_hydrogen));
    // second model ignored: first residue keeps its model-1 coordinates
    let first = &s.chain("H").unwrap().residues[0];
    assert!(first.atoms.iter().all(|a| a.coords[1] < 0.0));
    assert_eq!(antigen.full_sequence(), g["antigen_seqres"].as_str().unwrap());
}

#[test]
fn built_graph_matches_golden() {
    let (_dir, out) = build_all();
    let g = golden();
    for id in ["fx01", "fx01_noseqres"] {
        let pair = read(&out, id);
        let cdr: Vec<String> = pair.ab.node_ids.iter().map(|k| k.to_string()).collect();
        let want: Vec<String> = g["cdr_nodes"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
        assert_eq!(cdr, want, "{id}");
        let heavy = pair.ab.node_ids.iter().filter(|k| k.chain == "H").count();
        assert_eq!(heavy as u64, g["cdr_heavy"].as_u64().unwrap());
        assert_eq!(pair.n() as u64, g["surface_count"].as_u64().unwrap());

        let surface: Vec<i32> = pair.ag.node_ids.iter().map(|k| k.number).collect();
        for b in g["buried"].as_array().unwrap() {
            assert!(!surface.contains(&(b.as_i64().unwrap() as i32)), "{id}: buried {b} on surface");
        }
        let epitope: Vec<i64> = pair
            .ag
            .node_ids
            .iter()
            .zip(&pair.node_labels)
            .filter(|(_, &l)| l)
            .map(|(k, _)| k.number as i64)
            .collect();
        let want: Vec<i64> = g["epitope"].as_array().unwrap().iter().map(|v| v.as_i64().unwrap()).collect();
        assert_eq!(epitope, want, "{id}");

        let edges: Vec<[usize; 2]> = serde_json::from_value(g["edges"].clone()).unwrap();
        assert_eq!(pair.edge_labels, edges, "{id}");
        assert_eq!(pair.stats.positive_edge_count as u64, g["positive_edges"].as_u64().unwrap());
        pair.check_invariants().unwrap();
    }
}

#[test]
fn seqres_fallback_uses_resolved_residues() {
    let (_dir, out) = build_all();
    let with = read(&out, "fx01");
    let without = read(&out, "fx01_noseqres");
    let full = &with.ag.segments[0];
    assert_eq!(full.seqres.len(), 60);
    assert_eq!(full.mask.iter().filter(|&&m| m == 1).count(), with.n());
    let fallback = &without.ag.segments[0];
    assert_eq!(fallback.seqres.len(), golden()["antigen_resolved"].as_u64().unwrap() as usize);
    // same residues, same graph
    assert_eq!(with.ag.node_ids, without.ag.node_ids);
    assert_eq!(with.ag.adjacency, without.ag.adjacency);
}

#[test]
fn invalid_complexes_are_reported_not_built() {
    let (_dir, out) = build_all();
    let rejects = std::fs::read_to_string(out.join("rejects.csv")).unwrap();
    assert!(rejects.contains("fx02_short,antigen_too_short"), "{rejects}");
    assert!(rejects.contains("fx03_cdrgap,cdr_unresolved"), "{rejects}");
    assert!(!out.join("fx02_short.graph.json").exists());
    assert!(!out.join("fx03_cdrgap.graph.json").exists());
    let stats = std::fs::read_to_string(out.join("stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 3, "{stats}");
}

#[test]
fn graph_json_round_trips() {
    let (_dir, out) = build_all();
    let path = out.join("fx01.graph.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let pair = GraphPair::from_json(&text).unwrap();
    assert_eq!(pair.to_json().unwrap(), text);
}

#[test]
fn build_is_deterministic() {
    let (_a, first) = build_all();
    let (_b, second) = build_all();
    for id in ["fx01", "fx01_noseqres"] {
        let name = format!("{id}.graph.json");
        assert_eq!(std::fs::read(first.join(&name)).unwrap(), std::fs::read(second.join(&name)).unwrap());
    }
}
