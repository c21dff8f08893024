//! `epigraph` subcommands.
//!
//! Every command writes its artifacts plus a `manifest.json` into `--out`.
//! Graph pairs live in `<id>.graph.json` files; node features in
//! `<id>.ab.emb` / `<id>.ag.emb` (EMB1) next to them or in a separate directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{attach_features, blosum_encode, load_embedding_file, onehot_encode, write_embedding_file, FeatureMatrix};
use crate::evaluation::{evaluate_testset, summarize};
use crate::geometry::{shrake_rupley_sasa, RadiusTable, SasaParams, DEFAULT_CUTOFF};
use crate::graph::{build_graph_pair, seqres_epitope_mask, BuildOptions, CdrRangeTable, GraphPair};
use crate::model::{aggregate_node_predictions, load_checkpoint, predict, save_checkpoint, CheckpointHeader, EncoderKind, PreparedPair, WalleModel};
use crate::split::{
    assign_epitope_groups, deduplicate, greedy_cluster, read_split_csv, split_by_group, split_by_ratio, split_csv, split_rows,
    ComplexSequences, EpitopeInput, GroupOptions, GroupTargets, Linkage, Overlap, Partition, SplitFractions, SplitRow,
    ANTIGEN_CLUSTER_ID, CLUSTER_COVERAGE, CLUSTER_METHOD,
};
use crate::structure::{default_antigen_chain, extract_complex, parse_pdb, validate_complex};
use crate::toy::{toy_dataset, toy_train_config, ToySpec};
use crate::training::{fit, sweep, HyperSpace, TrainConfig};
use crate::{Error, Result};

pub const GRAPH_SUFFIX: &str = ".graph.json";
pub const MANIFEST: &str = "manifest.json";
pub const SASA_ESTIMATOR: &str = "shrake-rupley";
pub const MSA_METHOD: &str = "star-nw-blosum62";

#[derive(Parser, Debug, Serialize)]
#[command(name = "epigraph", version, about = "Antibody-antigen residue graphs and epitope link prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Parse structures and write one graph pair per valid complex.
    Build(BuildArgs),
    /// Write one-hot/BLOSUM62 features, or validate external EMB1 files.
    Encode(EncodeArgs),
    /// Keep one representative per (heavy, light, antigen) cluster key.
    Dedup(DedupArgs),
    /// Assign complexes to train/val/test.
    Split(SplitArgs),
    /// Train a model on the train partition, selecting on val.
    Train(TrainArgs),
    /// Node and link metrics for one partition.
    Eval(EvalArgs),
    /// Edge probabilities and epitope residues for one complex.
    Predict(PredictArgs),
    /// Dataset summary of built graphs.
    Stats(StatsArgs),
    /// Write the planted synthetic dataset.
    Toy(ToyArgs),
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct ChainArgs {
    #[arg(long, default_value = "H")]
    pub heavy: String,
    #[arg(long, default_value = "L")]
    pub light: String,
    /// Antigen chain; defaults to the first chain that is neither heavy nor light.
    #[arg(long)]
    pub antigen: Option<String>,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct StructureArgs {
    #[command(flatten)]
    pub chains: ChainArgs,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    pub cutoff: f64,
    #[arg(long, default_value_t = 1.4)]
    pub probe: f64,
    #[arg(long, default_value_t = 960)]
    pub points: usize,
    /// Residues with more accessible area than this are surface.
    #[arg(long, default_value_t = 0.0)]
    pub min_area: f64,
    /// Alternative CDR range table (`chain_type loop start end`).
    #[arg(long)]
    pub cdr_table: Option<PathBuf>,
    #[arg(long, default_value_t = crate::structure::MIN_ANTIGEN_LEN)]
    pub min_antigen_len: usize,
    #[arg(long, default_value_t = crate::structure::MAX_ANTIGEN_LEN)]
    pub max_antigen_len: usize,
}

impl Default for ChainArgs {
    fn default() -> Self {
        ChainArgs {
            heavy: "H".into(),
            light: "L".into(),
            antigen: None,
        }
    }
}

impl Default for StructureArgs {
    fn default() -> Self {
        StructureArgs {
            chains: ChainArgs::default(),
            cutoff: DEFAULT_CUTOFF,
            probe: 1.4,
            points: 960,
            min_area: 0.0,
            cdr_table: None,
            min_antigen_len: crate::structure::MIN_ANTIGEN_LEN,
            max_antigen_len: crate::structure::MAX_ANTIGEN_LEN,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct BuildArgs {
    #[arg(long)]
    pub pdb_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub structure: StructureArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodeKind {
    Onehot,
    Blosum62,
    External,
}

#[derive(Args, Debug, Serialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "onehot")]
    pub kind: EncodeKind,
    /// Directory of `<id>.ab.emb` / `<id>.ag.emb` files to validate (kind external).
    #[arg(long)]
    pub external: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct DedupArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitBy {
    Ratio,
    Group,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapArg {
    Min,
    Jaccard,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkageArg {
    Single,
    Complete,
}

#[derive(Args, Debug, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub by: SplitBy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    /// Explicit held-out sizes for group splits (both required together).
    #[arg(long, requires = "test_count")]
    pub val_count: Option<usize>,
    #[arg(long, requires = "val_count")]
    pub test_count: Option<usize>,
    #[arg(long, value_enum, default_value = "min")]
    pub overlap: OverlapArg,
    #[arg(long, value_enum, default_value = "single")]
    pub linkage: LinkageArg,
    /// File with one complex id per line restricting the dataset.
    #[arg(long)]
    pub subset: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    /// `onehot`, `blosum62`, or a directory of EMB1 files.
    #[arg(long, default_value = "onehot")]
    pub features: String,
    #[arg(long)]
    pub split: PathBuf,
    /// `key = value` training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    /// Random-search budget; the best configuration is then refit.
    #[arg(long)]
    pub sweep: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderArg {
    Gcn,
    Linear,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionArg {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long, default_value = "onehot")]
    pub features: String,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub partition: PartitionArg,
    /// Overrides the node threshold stored in the checkpoint.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A built graph pair.
    #[arg(long, conflicts_with = "pdb", required_unless_present = "pdb")]
    pub graph: Option<PathBuf>,
    /// A structure file, built on the fly.
    #[arg(long)]
    pub pdb: Option<PathBuf>,
    #[command(flatten)]
    pub structure: StructureArgs,
    #[arg(long, default_value = "onehot")]
    pub features: String,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub train: usize,
    #[arg(long, default_value_t = 10)]
    pub val: usize,
    #[arg(long, default_value_t = 10)]
    pub test: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Environment variable capping `build` workers.
pub const THREADS_ENV: &str = "EPIGRAPH_THREADS";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Input path → SHA-256 (hex); directories expand to their files.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    pub deviations: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let digest = Sha256::digest(&bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    Ok(s)
}

fn hash_inputs(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        if p.is_dir() {
            for f in sorted_files(p)? {
                if f.file_name().is_some_and(|n| n == MANIFEST) {
                    continue;
                }
                out.insert(f.display().to_string(), sha256_file(&f)?);
            }
        } else if p.is_file() {
            out.insert(p.display().to_string(), sha256_file(p)?);
        }
    }
    Ok(out)
}

impl RunManifest {
    fn new(command: &str, config: &impl Serialize, inputs: &[&Path], seed: Option<u64>) -> Result<Self> {
        let deviations = [
            ("sasa_estimator", SASA_ESTIMATOR),
            ("clustering_method", CLUSTER_METHOD),
            ("msa_method", MSA_METHOD),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            inputs: hash_inputs(inputs)?,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            deviations,
        })
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_text(&dir.join(MANIFEST), &text)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn graph_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let files: Vec<PathBuf> = sorted_files(dir)?
        .into_iter()
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(GRAPH_SUFFIX)))
        .collect();
    if files.is_empty() {
        return Err(Error::Invalid(format!("no *{GRAPH_SUFFIX} files in {}", dir.display())));
    }
    Ok(files)
}

pub fn read_graphs(dir: &Path) -> Result<Vec<GraphPair>> {
    graph_files(dir)?.iter().map(|p| GraphPair::read_json(p)).collect()
}

/// Where node features come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    Onehot,
    Blosum62,
    Directory(PathBuf),
}

impl FeatureSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "onehot" => FeatureSource::Onehot,
            "blosum62" => FeatureSource::Blosum62,
            other => FeatureSource::Directory(PathBuf::from(other)),
        }
    }

    fn input_path(&self) -> Option<&Path> {
        match self {
            FeatureSource::Directory(p) => Some(p),
            _ => None,
        }
    }
}

fn antibody_seqres(pair: &GraphPair) -> String {
    pair.ab.segments.iter().map(|s| s.seqres.as_str()).collect()
}

fn antigen_seqres(pair: &GraphPair) -> String {
    pair.ag.segments.iter().map(|s| s.seqres.as_str()).collect()
}

pub fn emb_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.ab.emb")), dir.join(format!("{id}.ag.emb")))
}

/// Full-SEQRES feature matrices `(antibody, antigen)` for one pair.
pub fn pair_features(pair: &GraphPair, source: &FeatureSource) -> Result<(FeatureMatrix, FeatureMatrix)> {
    match source {
        FeatureSource::Onehot => Ok((onehot_encode(&antibody_seqres(pair))?, onehot_encode(&antigen_seqres(pair))?)),
        FeatureSource::Blosum62 => Ok((blosum_encode(&antibody_seqres(pair))?, blosum_encode(&antigen_seqres(pair))?)),
        FeatureSource::Directory(dir) => {
            let (ab, ag) = emb_paths(dir, &pair.id);
            Ok((load_embedding_file(&ab)?, load_embedding_file(&ag)?))
        }
    }
}

pub fn attach_pair_features(pair: &mut GraphPair, source: &FeatureSource) -> Result<()> {
    let (ab, ag) = pair_features(pair, source)?;
    attach_features(&mut pair.ab, &ab).map_err(|e| Error::Invalid(format!("{}: antibody features: {e}", pair.id)))?;
    attach_features(&mut pair.ag, &ag).map_err(|e| Error::Invalid(format!("{}: antigen features: {e}", pair.id)))?;
    Ok(())
}

pub fn build_options(args: &StructureArgs) -> Result<BuildOptions> {
    let ranges = match &args.cdr_table {
        Some(p) => CdrRangeTable::parse(&std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?)?,
        None => CdrRangeTable::abm_martin(),
    };
    Ok(BuildOptions {
        cutoff: args.cutoff,
        ranges,
        min_area: args.min_area,
    })
}

/// Result of processing one structure file.
#[derive(Debug)]
pub enum BuildOutcome {
    Built(Box<GraphPair>),
    Rejected(Vec<String>),
}

pub fn build_from_pdb(path: &Path, args: &StructureArgs, opts: &BuildOptions) -> Result<BuildOutcome> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Invalid(format!("bad file name {}", path.display())))?
        .to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let s = parse_pdb(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let c = &args.chains;
    let antigen = match &c.antigen {
        Some(a) => a.clone(),
        None => default_antigen_chain(&s, &c.heavy, &c.light)
            .ok_or_else(|| Error::ChainNotFound(format!("{id}: no antigen chain")))?
            .to_string(),
    };
    let complex = extract_complex(&s, &id, &c.heavy, &c.light, &antigen)?;
    let report = validate_complex(&complex, &opts.ranges, args.min_antigen_len, args.max_antigen_len);
    if !report.passed() {
        return Ok(BuildOutcome::Rejected(report.reasons.iter().map(|r| r.code().to_string()).collect()));
    }
    let params = SasaParams {
        probe: args.probe,
        n_points: args.points,
    };
    let sasa = shrake_rupley_sasa(&complex.antigen.residues, &RadiusTable::bundled(), params)?;
    let pair = build_graph_pair(&complex, &sasa, opts)?;
    Ok(BuildOutcome::Built(Box::new(pair)))
}

fn worker_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

const STATS_HEADER: &str = "id,cdr_count,surface_count,epitope_count,epitope_ratio,positive_edge_count,epitope_ratio_bin\n";

fn stats_row(p: &GraphPair) -> String {
    let s = &p.stats;
    format!(
        "{},{},{},{},{:.6},{},{}\n",
        p.id,
        s.cdr_count,
        s.surface_count,
        s.epitope_count,
        s.epitope_ratio,
        s.positive_edge_count,
        s.ratio_bin()
    )
}

fn cmd_build(args: &BuildArgs) -> Result<usize> {
    let opts = build_options(&args.structure)?;
    let files: Vec<PathBuf> = sorted_files(&args.pdb_dir)?
        .into_iter()
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pdb" | "ent"))
        })
        .collect();
    if files.is_empty() {
        return Err(Error::Invalid(format!("no .pdb files in {}", args.pdb_dir.display())));
    }
    create_dir(&args.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<BuildOutcome>> =
        pool.install(|| files.par_iter().map(|f| build_from_pdb(f, &args.structure, &opts)).collect());

    let mut stats = String::from(STATS_HEADER);
    let mut rejects = String::from("id,reasons\n");
    let mut errors = 0;
    let mut built = 0;
    for (file, outcome) in files.iter().zip(outcomes) {
        let id = file.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
        match outcome {
            Ok(BuildOutcome::Built(pair)) => {
                pair.write_json(&args.out.join(format!("{}{GRAPH_SUFFIX}", pair.id)))?;
                stats.push_str(&stats_row(&pair));
                built += 1;
            }
            Ok(BuildOutcome::Rejected(reasons)) => {
                warn!("{id}: rejected ({})", reasons.join(";"));
                let _ = writeln!(rejects, "{id},{}", reasons.join(";"));
            }
            Err(e) => {
                error!("{id}: {e}");
                let _ = writeln!(rejects, "{id},error");
                errors += 1;
            }
        }
    }
    write_text(&args.out.join("stats.csv"), &stats)?;
    write_text(&args.out.join("rejects.csv"), &rejects)?;
    RunManifest::new("build", args, &[&args.pdb_dir], None)?.write(&args.out)?;
    info!("built {built} of {} complexes", files.len());
    Ok(errors)
}

fn cmd_encode(args: &EncodeArgs) -> Result<usize> {
    let pairs = read_graphs(&args.graphs)?;
    create_dir(&args.out)?;
    let mut errors = 0;
    match args.kind {
        EncodeKind::Onehot | EncodeKind::Blosum62 => {
            let source = if args.kind == EncodeKind::Onehot {
                FeatureSource::Onehot
            } else {
                FeatureSource::Blosum62
            };
            for p in &pairs {
                let (mut ab, mut ag) = pair_features(p, &source)?;
                ab.source_tag = format!("{}.ab", p.id);
                ag.source_tag = format!("{}.ag", p.id);
                let (ab_path, ag_path) = emb_paths(&args.out, &p.id);
                write_embedding_file(&ab_path, &ab)?;
                write_embedding_file(&ag_path, &ag)?;
            }
            info!("wrote features for {} complexes", pairs.len());
        }
        EncodeKind::External => {
            let dir = args
                .external
                .as_ref()
                .ok_or_else(|| Error::Config("--kind external needs --external DIR".into()))?;
            let mut report = String::from("id,status\n");
            for p in &pairs {
                let mut q = p.clone();
                let status = match attach_pair_features(&mut q, &FeatureSource::Directory(dir.clone())) {
                    Ok(()) => "ok".to_string(),
                    Err(e) => {
                        error!("{e}");
                        errors += 1;
                        "invalid".to_string()
                    }
                };
                let _ = writeln!(report, "{},{status}", p.id);
            }
            write_text(&args.out.join("external_check.csv"), &report)?;
        }
    }
    let mut inputs: Vec<&Path> = vec![&args.graphs];
    if let Some(e) = &args.external {
        inputs.push(e);
    }
    RunManifest::new("encode", args, &inputs, None)?.write(&args.out)?;
    Ok(errors)
}

fn complex_sequences(p: &GraphPair) -> Result<ComplexSequences> {
    if p.ab.segments.len() != 2 {
        return Err(Error::Invalid(format!("{}: expected heavy and light segments", p.id)));
    }
    Ok(ComplexSequences {
        id: p.id.clone(),
        heavy: p.ab.segments[0].seqres.clone(),
        light: p.ab.segments[1].seqres.clone(),
        antigen: antigen_seqres(p),
    })
}

fn cmd_dedup(args: &DedupArgs) -> Result<usize> {
    let pairs = read_graphs(&args.graphs)?;
    let seqs = pairs.iter().map(complex_sequences).collect::<Result<Vec<_>>>()?;
    let keep = deduplicate(&seqs)?;
    create_dir(&args.out)?;
    let mut text = keep.join("\n");
    text.push('\n');
    write_text(&args.out.join("representatives.txt"), &text)?;
    RunManifest::new("dedup", args, &[&args.graphs], None)?.write(&args.out)?;
    info!("{} representatives of {} complexes", keep.len(), pairs.len());
    Ok(0)
}

fn read_subset(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

/// Epitope group per complex: antigen clustering then epitope-column grouping.
pub fn epitope_groups(pairs: &[GraphPair], opts: &GroupOptions) -> Result<BTreeMap<String, usize>> {
    let seqs: Vec<(String, String)> = pairs.iter().map(|p| (p.id.clone(), antigen_seqres(p))).collect();
    let clusters = greedy_cluster(&seqs, ANTIGEN_CLUSTER_ID, CLUSTER_COVERAGE)?;
    let inputs: Vec<EpitopeInput> = pairs
        .iter()
        .map(|p| EpitopeInput {
            id: p.id.clone(),
            antigen: antigen_seqres(p),
            epitope: seqres_epitope_mask(p)
                .iter()
                .enumerate()
                .filter(|(_, &m)| m == 1)
                .map(|(k, _)| k)
                .collect(),
        })
        .collect();
    let grouping = assign_epitope_groups(&clusters, &inputs, opts)?;
    for w in &grouping.warnings {
        warn!("{w}");
    }
    Ok(grouping
        .groups
        .iter()
        .flat_map(|g| g.complex_ids.iter().map(move |id| (id.clone(), g.group_id)))
        .collect())
}

fn cmd_split(args: &SplitArgs) -> Result<usize> {
    let mut pairs = read_graphs(&args.graphs)?;
    if let Some(s) = &args.subset {
        let keep = read_subset(s)?;
        pairs.retain(|p| keep.contains(&p.id));
        if pairs.is_empty() {
            return Err(Error::Invalid("subset selects no complexes".into()));
        }
    }
    let fractions = SplitFractions {
        train: 1.0 - args.val_fraction - args.test_fraction,
        val: args.val_fraction,
        test: args.test_fraction,
    };
    let bins: BTreeMap<String, usize> = pairs.iter().map(|p| (p.id.clone(), p.stats.ratio_bin())).collect();
    let (result, groups) = match args.by {
        SplitBy::Ratio => {
            let items: Vec<(String, usize)> = bins.iter().map(|(k, v)| (k.clone(), *v)).collect();
            (split_by_ratio(&items, fractions, args.seed)?, BTreeMap::new())
        }
        SplitBy::Group => {
            let opts = GroupOptions {
                overlap: match args.overlap {
                    OverlapArg::Min => Overlap::Min,
                    OverlapArg::Jaccard => Overlap::Jaccard,
                },
                linkage: match args.linkage {
                    LinkageArg::Single => Linkage::Single,
                    LinkageArg::Complete => Linkage::Complete,
                },
                ..GroupOptions::default()
            };
            let groups = epitope_groups(&pairs, &opts)?;
            let items: Vec<(String, usize)> = groups.iter().map(|(k, v)| (k.clone(), *v)).collect();
            let targets = match (args.val_count, args.test_count) {
                (Some(val), Some(test)) => GroupTargets::Counts { val, test },
                _ => GroupTargets::Fractions(fractions),
            };
            (split_by_group(&items, targets, args.seed)?, groups)
        }
    };
    for w in &result.warnings {
        warn!("{w}");
    }
    let rows = split_rows(&result.assignment, &groups, &bins);
    create_dir(&args.out)?;
    write_text(&args.out.join("split.csv"), &split_csv(&rows))?;
    let mut inputs: Vec<&Path> = vec![&args.graphs];
    if let Some(s) = &args.subset {
        inputs.push(s);
    }
    RunManifest::new("split", args, &inputs, Some(args.seed))?.write(&args.out)?;
    let a = &result.assignment;
    info!("train {} / val {} / test {}", a.train.len(), a.val.len(), a.test.len());
    Ok(0)
}

fn partition_ids(rows: &[SplitRow], p: Partition) -> BTreeSet<String> {
    rows.iter().filter(|r| r.partition == p).map(|r| r.complex_id.clone()).collect()
}

/// Loads the graphs named in `ids` with features attached, in id order.
pub fn load_prepared(graphs: &Path, features: &FeatureSource, ids: &BTreeSet<String>) -> Result<Vec<PreparedPair>> {
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let path = graphs.join(format!("{id}{GRAPH_SUFFIX}"));
        let mut pair = GraphPair::read_json(&path)?;
        attach_pair_features(&mut pair, features)?;
        out.push(PreparedPair::from_pair(&pair)?);
    }
    Ok(out)
}

fn cmd_train(args: &TrainArgs) -> Result<usize> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::parse(&std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(e) = args.encoder {
        cfg.encoder = match e {
            EncoderArg::Gcn => EncoderKind::Gcn,
            EncoderArg::Linear => EncoderKind::Linear,
        };
    }
    cfg.validate()?;
    let rows = read_split_csv(&args.split)?;
    let features = FeatureSource::parse(&args.features);
    let train = load_prepared(&args.graphs, &features, &partition_ids(&rows, Partition::Train))?;
    let val = load_prepared(&args.graphs, &features, &partition_ids(&rows, Partition::Val))?;
    let first = train.first().ok_or_else(|| Error::Config("split has no training complexes".into()))?;
    let (dim_ab, dim_ag) = (first.x_ab.cols, first.x_ag.cols);
    create_dir(&args.out)?;

    if let Some(budget) = args.sweep {
        let ranked = sweep(&cfg, &HyperSpace::default(), budget, cfg.seed, &train, &val)?;
        let mut text = String::from("rank,best_val_mcc,epochs_run,w_pos,lambda,node_threshold,decoder,layers,seed\n");
        for (k, e) in ranked.iter().enumerate() {
            let c = &e.config;
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{},{},{}",
                k + 1,
                e.best_metric,
                e.epochs_run,
                c.loss.w_pos,
                c.loss.lambda,
                c.aggregation.node_threshold,
                serde_json::to_value(c.decoder)?.as_str().unwrap_or(""),
                c.layers,
                c.seed
            );
        }
        write_text(&args.out.join("sweep.csv"), &text)?;
        cfg = ranked[0].config.clone();
    }

    let model = WalleModel::new(cfg.architecture(dim_ab, dim_ag), cfg.seed)?;
    let result = fit(model, &train, &val, &cfg)?;
    let header = CheckpointHeader {
        architecture: result.model.arch,
        seed: cfg.seed,
        loss: cfg.loss,
        aggregation: cfg.aggregation,
        training: serde_json::to_value(&cfg)?,
    };
    save_checkpoint(&args.out.join("model.wlc"), &result.model, &header)?;
    write_text(&args.out.join("history.csv"), &result.history.to_csv())?;
    write_text(&args.out.join("config.txt"), &cfg.to_text())?;
    let mut inputs: Vec<&Path> = vec![&args.graphs, &args.split];
    if let Some(c) = &args.config {
        inputs.push(c);
    }
    if let Some(f) = features.input_path() {
        inputs.push(f);
    }
    RunManifest::new("train", args, &inputs, Some(cfg.seed))?.write(&args.out)?;
    let last = result.history.epochs.last().expect("at least one epoch");
    info!(
        "trained {} epochs, best validation metric {:.4}",
        result.history.epochs.len(),
        last.best_metric
    );
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<usize> {
    let (model, header) = load_checkpoint(&args.checkpoint)?;
    let mut aggregation = header.aggregation;
    if let Some(t) = args.threshold {
        aggregation.node_threshold = t;
    }
    let rows = read_split_csv(&args.split)?;
    let part = match args.partition {
        PartitionArg::Train => Partition::Train,
        PartitionArg::Val => Partition::Val,
        PartitionArg::Test => Partition::Test,
    };
    let ids = partition_ids(&rows, part);
    if ids.is_empty() {
        return Err(Error::Invalid(format!("split has no {} complexes", part.as_str())));
    }
    let features = FeatureSource::parse(&args.features);
    let pairs = load_prepared(&args.graphs, &features, &ids)?;
    let report = evaluate_testset(&model, &pairs, &aggregation)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("node_metrics.csv"), &report.node.to_csv())?;
    write_text(&args.out.join("link_metrics.csv"), &report.link.to_csv())?;
    let mut inputs: Vec<&Path> = vec![&args.checkpoint, &args.graphs, &args.split];
    if let Some(f) = features.input_path() {
        inputs.push(f);
    }
    RunManifest::new("eval", args, &inputs, Some(header.seed))?.write(&args.out)?;
    if report.node.degenerate_auc > 0 || report.link.degenerate_auc > 0 {
        warn!(
            "AUC undefined (single class) for {} node / {} link complexes",
            report.node.degenerate_auc, report.link.degenerate_auc
        );
    }
    info!(
        "node MCC {:.4} ({:.4}), link MCC {:.4} ({:.4})",
        report.node.mcc.mean, report.node.mcc.stderr, report.link.mcc.mean, report.link.mcc.stderr
    );
    Ok(0)
}

#[derive(Debug, Serialize)]
struct PredictionDoc {
    id: String,
    node_threshold: f64,
    antibody_nodes: Vec<String>,
    antigen_nodes: Vec<String>,
    /// Row-major by antibody node.
    probabilities: Vec<Vec<f64>>,
    node_scores: Vec<f64>,
    epitope: Vec<String>,
}

fn cmd_predict(args: &PredictArgs) -> Result<usize> {
    let (model, header) = load_checkpoint(&args.checkpoint)?;
    let mut pair = match (&args.graph, &args.pdb) {
        (Some(g), _) => GraphPair::read_json(g)?,
        (None, Some(pdb)) => {
            let opts = build_options(&args.structure)?;
            match build_from_pdb(pdb, &args.structure, &opts)? {
                BuildOutcome::Built(p) => *p,
                BuildOutcome::Rejected(r) => {
                    return Err(Error::Invalid(format!("{}: rejected ({})", pdb.display(), r.join(";"))))
                }
            }
        }
        (None, None) => return Err(Error::Config("one of --graph or --pdb is required".into())),
    };
    let features = FeatureSource::parse(&args.features);
    attach_pair_features(&mut pair, &features)?;
    let prepared = PreparedPair::from_pair(&pair)?;
    let pred = predict(&model, &prepared)?;
    let mut aggregation = header.aggregation;
    if let Some(t) = args.threshold {
        aggregation.node_threshold = t;
    }
    let (scores, labels) = aggregate_node_predictions(&pred.probs, &aggregation);
    let doc = PredictionDoc {
        id: pair.id.clone(),
        node_threshold: aggregation.node_threshold,
        antibody_nodes: pair.ab.node_ids.iter().map(|k| k.to_string()).collect(),
        antigen_nodes: pair.ag.node_ids.iter().map(|k| k.to_string()).collect(),
        probabilities: (0..pred.probs.rows).map(|i| pred.probs.row(i).to_vec()).collect(),
        node_scores: scores,
        epitope: pair
            .ag
            .node_ids
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l)
            .map(|(k, _)| k.to_string())
            .collect(),
    };
    create_dir(&args.out)?;
    let mut text = serde_json::to_string(&doc)?;
    text.push('\n');
    write_text(&args.out.join(format!("{}.prediction.json", pair.id)), &text)?;
    let mut inputs: Vec<&Path> = vec![&args.checkpoint];
    for p in [&args.graph, &args.pdb].into_iter().flatten() {
        inputs.push(p);
    }
    if let Some(f) = features.input_path() {
        inputs.push(f);
    }
    RunManifest::new("predict", args, &inputs, Some(header.seed))?.write(&args.out)?;
    info!("{}: {} predicted epitope residues", pair.id, doc.epitope.len());
    Ok(0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub complexes: usize,
    pub positive_edges_mean: f64,
    pub positive_edges_median: f64,
    pub positive_edges_sd: f64,
    pub epitope_count_mean: f64,
    /// Ratio bin → complex count.
    pub ratio_bins: BTreeMap<usize, usize>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn dataset_stats(pairs: &[GraphPair]) -> Result<DatasetStats> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no graphs".into()));
    }
    let mut edges: Vec<f64> = pairs.iter().map(|p| p.stats.positive_edge_count as f64).collect();
    edges.sort_by(f64::total_cmp);
    let s = summarize(&edges).expect("non-empty");
    let sd = s.stderr * (edges.len() as f64).sqrt();
    let mut ratio_bins = BTreeMap::new();
    for p in pairs {
        *ratio_bins.entry(p.stats.ratio_bin()).or_insert(0) += 1;
    }
    Ok(DatasetStats {
        complexes: pairs.len(),
        positive_edges_mean: s.mean,
        positive_edges_median: median(&edges),
        positive_edges_sd: sd,
        epitope_count_mean: pairs.iter().map(|p| p.stats.epitope_count as f64).sum::<f64>() / pairs.len() as f64,
        ratio_bins,
    })
}

fn cmd_stats(args: &StatsArgs) -> Result<usize> {
    let pairs = read_graphs(&args.graphs)?;
    let stats = dataset_stats(&pairs)?;
    let mut text = serde_json::to_string_pretty(&stats)?;
    text.push('\n');
    print!("{text}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_text(&out.join("stats.json"), &text)?;
        RunManifest::new("stats", args, &[&args.graphs], None)?.write(out)?;
    }
    Ok(0)
}

fn cmd_toy(args: &ToyArgs) -> Result<usize> {
    let total = args.train + args.val + args.test;
    let pairs = toy_dataset(
        &ToySpec {
            pairs: total,
            ..ToySpec::default()
        },
        args.seed,
    )?;
    create_dir(&args.out)?;
    let mut rows = Vec::new();
    for (k, p) in pairs.iter().enumerate() {
        p.write_json(&args.out.join(format!("{}{GRAPH_SUFFIX}", p.id)))?;
        let partition = if k < args.train {
            Partition::Train
        } else if k < args.train + args.val {
            Partition::Val
        } else {
            Partition::Test
        };
        rows.push(SplitRow {
            complex_id: p.id.clone(),
            partition,
            epitope_group: None,
            epitope_ratio_bin: Some(p.stats.ratio_bin()),
        });
    }
    write_text(&args.out.join("split.csv"), &split_csv(&rows))?;
    write_text(&args.out.join("train.cfg"), &toy_train_config(args.seed).to_text())?;
    RunManifest::new("toy", args, &[], Some(args.seed))?.write(&args.out)?;
    info!("wrote {total} toy graph pairs");
    Ok(0)
}

/// Runs one parsed command; returns the number of non-fatal errors logged.
pub fn execute(cli: &Cli) -> Result<usize> {
    match &cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Dedup(a) => cmd_dedup(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Toy(a) => cmd_toy(a),
    }
}

/// Parses `argv` (including the program name) and runs it. Exit code 0 iff
/// no error was logged; usage errors return clap's code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(0) => 0,
        Ok(n) => {
            error!("{n} error(s) logged");
            1
        }
        Err(e) => {
            error!("{e}");
            let _ = std::io::stderr().flush();
            1
        }
    }
}

static LOGGED_ERRORS: AtomicUsize = AtomicUsize::new(0);

struct CountingLogger(env_logger::Logger);

impl log::Log for CountingLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        self.0.enabled(metadata)
    }

    fn log(&self, record: &log::Record) {
        if record.level() == log::Level::Error {
            LOGGED_ERRORS.fetch_add(1, Ordering::Relaxed);
        }
        self.0.log(record);
    }

    fn flush(&self) {
        self.0.flush();
    }
}

/// Installs the stderr logger (`RUST_LOG`, default `info`).
pub fn init_logging() {
    let logger = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).build();
    let level = logger.filter();
    if log::set_boxed_logger(Box::new(CountingLogger(logger))).is_ok() {
        log::set_max_level(level);
    }
}

/// Errors logged through the installed logger so far.
pub fn logged_errors() -> usize {
    LOGGED_ERRORS.load(Ordering::Relaxed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_with_edges(id: &str, edges: usize) -> GraphPair {
        let mut p = toy_dataset(&ToySpec { pairs: 1, ..ToySpec::default() }, 3).unwrap().remove(0);
        p.id = id.into();
        p.stats.positive_edge_count = edges;
        p
    }

    #[test]
    fn structure_defaults_match_command_line_defaults() {
        let cli = Cli::try_parse_from(["epigraph", "build", "--pdb-dir", "in", "--out", "out"]).unwrap();
        let Command::Build(args) = cli.command else { panic!("not a build") };
        assert_eq!(
            serde_json::to_value(&args.structure).unwrap(),
            serde_json::to_value(StructureArgs::default()).unwrap()
        );
    }

    #[test]
    fn stats_closed_forms() {
        let s = dataset_stats(&[pair_with_edges("a", 5)]).unwrap();
        assert_eq!((s.positive_edges_mean, s.positive_edges_sd), (5.0, 0.0));
        let s = dataset_stats(&[pair_with_edges("a", 40), pair_with_edges("b", 46)]).unwrap();
        assert_eq!((s.positive_edges_mean, s.positive_edges_median), (43.0, 43.0));
        assert!(dataset_stats(&[]).is_err());
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_ne!(run(["epigraph", "frobnicate"]), 0);
        assert_ne!(run(["epigraph", "stats"]), 0);
    }

    #[test]
    fn feature_source_parsing() {
        assert_eq!(FeatureSource::parse("onehot"), FeatureSource::Onehot);
        assert_eq!(FeatureSource::parse("blosum62"), FeatureSource::Blosum62);
        assert_eq!(FeatureSource::parse("x/y"), FeatureSource::Directory("x/y".into()));
    }
}
