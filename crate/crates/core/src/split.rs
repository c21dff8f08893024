//! Sequence clustering, deduplication, epitope groups, and train/val/test splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::alignment::{nw_align, star_column_map, Scoring};
use crate::{Error, Result};

/// Tag recorded wherever cluster output is written.
pub const CLUSTER_METHOD: &str = "greedy-allpairs-nw";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub representative: String,
    pub members: Vec<String>,
}

fn passes(rep: &str, seq: &str, min_id: f64, min_cov: f64, scoring: &Scoring) -> Result<bool> {
    let (lr, ls) = (rep.chars().count(), seq.chars().count());
    if lr == 0 || ls == 0 {
        return Ok(false);
    }
    // coverage of the longer sequence can be at most shorter/longer
    if (lr.min(ls) as f64) < min_cov * lr.max(ls) as f64 {
        return Ok(false);
    }
    let aln = nw_align(seq, rep, scoring)?;
    Ok(aln.identity >= min_id && aln.coverage_a >= min_cov && aln.coverage_b >= min_cov)
}

/// Greedy representative clustering over `(id, sequence)`.
///
/// Sequences are visited longest first (ties keep input order); each joins the
/// earliest representative it matches, otherwise it becomes a representative.
pub fn greedy_cluster(seqs: &[(String, String)], min_id: f64, min_cov: f64) -> Result<Vec<Cluster>> {
    if seqs.is_empty() {
        return Err(Error::Invalid("no sequences to cluster".into()));
    }
    let scoring = Scoring::blosum62_affine();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(seqs[k].1.chars().count()));
    let mut clusters: Vec<(usize, Vec<usize>)> = Vec::new();
    for k in order {
        let seq = &seqs[k].1;
        let hits: Vec<Result<bool>> = clusters
            .par_iter()
            .map(|(rep, _)| passes(&seqs[*rep].1, seq, min_id, min_cov, &scoring))
            .collect();
        let mut joined = None;
        for (c, hit) in hits.into_iter().enumerate() {
            if hit? {
                joined = Some(c);
                break;
            }
        }
        match joined {
            Some(c) => clusters[c].1.push(k),
            None => clusters.push((k, vec![k])),
        }
    }
    Ok(clusters
        .into_iter()
        .map(|(rep, members)| Cluster {
            representative: seqs[rep].0.clone(),
            members: members.into_iter().map(|m| seqs[m].0.clone()).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexSequences {
    pub id: String,
    pub heavy: String,
    pub light: String,
    pub antigen: String,
}

pub const DEDUP_HEAVY_ID: f64 = 1.0;
pub const DEDUP_LIGHT_ID: f64 = 0.7;
pub const ANTIGEN_CLUSTER_ID: f64 = 0.7;
pub const CLUSTER_COVERAGE: f64 = 0.8;

fn cluster_index(clusters: &[Cluster]) -> HashMap<&str, usize> {
    clusters
        .iter()
        .enumerate()
        .flat_map(|(c, cl)| cl.members.iter().map(move |m| (m.as_str(), c)))
        .collect()
}

/// Keeps the lexicographically smallest id per (heavy, light, antigen) cluster key.
pub fn deduplicate(complexes: &[ComplexSequences]) -> Result<Vec<String>> {
    let column = |f: fn(&ComplexSequences) -> &str, min_id: f64| -> Result<Vec<Cluster>> {
        let seqs: Vec<(String, String)> = complexes.iter().map(|c| (c.id.clone(), f(c).to_string())).collect();
        greedy_cluster(&seqs, min_id, CLUSTER_COVERAGE)
    };
    let h = column(|c| &c.heavy, DEDUP_HEAVY_ID)?;
    let l = column(|c| &c.light, DEDUP_LIGHT_ID)?;
    let a = column(|c| &c.antigen, ANTIGEN_CLUSTER_ID)?;
    let (hi, li, ai) = (cluster_index(&h), cluster_index(&l), cluster_index(&a));
    let mut keep: BTreeMap<(usize, usize, usize), &str> = BTreeMap::new();
    for c in complexes {
        let key = (hi[c.id.as_str()], li[c.id.as_str()], ai[c.id.as_str()]);
        let slot = keep.entry(key).or_insert(&c.id);
        if c.id.as_str() < *slot {
            *slot = &c.id;
        }
    }
    let mut out: Vec<String> = keep.into_values().map(str::to_string).collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpitopeGroup {
    pub group_id: usize,
    pub complex_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlap {
    /// `|A ∩ B| / min(|A|, |B|)`
    Min,
    /// `|A ∩ B| / |A ∪ B|`
    Jaccard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    /// Connected components of the similarity relation.
    Single,
    /// A complex joins a group only if similar to every member.
    Complete,
}

pub const EPITOPE_SIMILARITY: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupOptions {
    pub overlap: Overlap,
    pub linkage: Linkage,
    /// Pairs strictly above this are the same epitope.
    pub threshold: f64,
}

impl Default for GroupOptions {
    fn default() -> Self {
        GroupOptions {
            overlap: Overlap::Min,
            linkage: Linkage::Single,
            threshold: EPITOPE_SIMILARITY,
        }
    }
}

/// Antigen sequence and epitope SEQRES positions of one complex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpitopeInput {
    pub id: String,
    pub antigen: String,
    pub epitope: Vec<usize>,
}

pub fn epitope_similarity(a: &BTreeSet<usize>, b: &BTreeSet<usize>, overlap: Overlap) -> f64 {
    let inter = a.intersection(b).count() as f64;
    let den = match overlap {
        Overlap::Min => a.len().min(b.len()),
        Overlap::Jaccard => a.union(b).count(),
    };
    if den == 0 {
        0.0
    } else {
        inter / den as f64
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Groups `columns` (already on a common column frame); returns member index lists.
pub fn group_column_sets(columns: &[BTreeSet<usize>], opts: &GroupOptions) -> Vec<Vec<usize>> {
    let n = columns.len();
    let similar = |i: usize, j: usize| epitope_similarity(&columns[i], &columns[j], opts.overlap) > opts.threshold;
    let groups: Vec<Vec<usize>> = match opts.linkage {
        Linkage::Single => {
            let mut parent: Vec<usize> = (0..n).collect();
            for i in 0..n {
                for j in i + 1..n {
                    if similar(i, j) {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
            let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for i in 0..n {
                let r = find(&mut parent, i);
                by_root.entry(r).or_default().push(i);
            }
            by_root.into_values().collect()
        }
        Linkage::Complete => {
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for i in 0..n {
                match groups.iter_mut().find(|g| g.iter().all(|&j| similar(i, j))) {
                    Some(g) => g.push(i),
                    None => groups.push(vec![i]),
                }
            }
            groups
        }
    };
    groups
}

pub struct GroupingResult {
    pub groups: Vec<EpitopeGroup>,
    pub warnings: Vec<String>,
}

/// Epitope groups within each antigen cluster. Cluster representatives and
/// members are complex ids present in `complexes`.
pub fn assign_epitope_groups(
    antigen_clusters: &[Cluster],
    complexes: &[EpitopeInput],
    opts: &GroupOptions,
) -> Result<GroupingResult> {
    let by_id: HashMap<&str, &EpitopeInput> = complexes.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut seen = BTreeSet::new();
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    let push = |ids: Vec<String>, groups: &mut Vec<EpitopeGroup>| {
        let group_id = groups.len();
        groups.push(EpitopeGroup { group_id, complex_ids: ids });
    };
    for cluster in antigen_clusters {
        let rep = by_id
            .get(cluster.representative.as_str())
            .ok_or_else(|| Error::Invalid(format!("cluster representative {} has no epitope", cluster.representative)))?;
        let mut members = Vec::new();
        for id in &cluster.members {
            let c = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Invalid(format!("clustered complex {id} has no epitope")))?;
            if !seen.insert(id.clone()) {
                return Err(Error::Invalid(format!("complex {id} appears in two antigen clusters")));
            }
            members.push(*c);
        }
        let seqs: Vec<&str> = members.iter().map(|c| c.antigen.as_str()).collect();
        let maps: Vec<Option<_>> = seqs
            .iter()
            .map(|s| star_column_map(&rep.antigen, &[s]).ok().map(|mut v| v.remove(0)))
            .collect();
        let mut mapped = Vec::new();
        let mut mapped_ids = Vec::new();
        for (c, map) in members.iter().zip(maps) {
            let cols: Option<BTreeSet<usize>> = map.map(|m| {
                c.epitope
                    .iter()
                    .filter_map(|&p| m.a_to_b.get(p).copied().flatten())
                    .collect()
            });
            match cols {
                Some(cols) if !cols.is_empty() => {
                    mapped.push(cols);
                    mapped_ids.push(c.id.clone());
                }
                _ => {
                    warnings.push(format!("{}: epitope maps to no representative columns", c.id));
                    push(vec![c.id.clone()], &mut groups);
                }
            }
        }
        for g in group_column_sets(&mapped, opts) {
            push(g.into_iter().map(|k| mapped_ids[k].clone()).collect(), &mut groups);
        }
    }
    if let Some(c) = complexes.iter().find(|c| !seen.contains(&c.id)) {
        return Err(Error::Invalid(format!("complex {} is in no antigen cluster", c.id)));
    }
    Ok(GroupingResult { groups, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Partition::Train),
            "val" => Some(Partition::Val),
            "test" => Some(Partition::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn partition(&self, p: Partition) -> &[String] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    fn push(&mut self, p: Partition, id: String) {
        match p {
            Partition::Train => self.train.push(id),
            Partition::Val => self.val.push(id),
            Partition::Test => self.test.push(id),
        }
    }

    fn sort(&mut self) {
        self.train.sort();
        self.val.sort();
        self.test.sort();
    }

    pub fn partition_of(&self) -> BTreeMap<&str, Partition> {
        let mut out = BTreeMap::new();
        for p in [Partition::Train, Partition::Val, Partition::Test] {
            for id in self.partition(p) {
                out.insert(id.as_str(), p);
            }
        }
        out
    }

    /// Disjoint partitions whose union is exactly `ids`.
    pub fn check(&self, ids: &[String]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::Invalid(format!("{id} assigned twice")));
            }
        }
        let all: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        if all != seen {
            return Err(Error::Invalid("split does not cover the dataset exactly".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<()> {
        let ok = [self.train, self.val, self.test].iter().all(|f| (0.0..=1.0).contains(f))
            && (self.train + self.val + self.test - 1.0).abs() < 1e-9;
        if !ok {
            return Err(Error::Config(format!("split fractions {self:?} must be in [0,1] and sum to 1")));
        }
        Ok(())
    }
}

fn floor_count(n: usize, f: f64) -> usize {
    (n as f64 * f + 1e-9).floor() as usize
}

pub struct SplitResult {
    pub assignment: SplitAssignment,
    pub warnings: Vec<String>,
}

/// Stratified by epitope-ratio bin: per bin, `floor(n·f)` to validation and to
/// test after a seeded shuffle, remainder to train. Bins under 3 go to train.
pub fn split_by_ratio(items: &[(String, usize)], fractions: SplitFractions, seed: u64) -> Result<SplitResult> {
    fractions.validate()?;
    let mut bins: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (id, bin) in items {
        bins.entry(*bin).or_default().push(id.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitAssignment::default();
    let mut warnings = Vec::new();
    for (bin, mut ids) in bins {
        ids.sort();
        if ids.len() < 3 {
            warnings.push(format!("ratio bin {bin} has {} complexes; all assigned to train", ids.len()));
            out.train.extend(ids);
            continue;
        }
        ids.shuffle(&mut rng);
        let n_test = floor_count(ids.len(), fractions.test);
        let n_val = floor_count(ids.len(), fractions.val);
        for (k, id) in ids.into_iter().enumerate() {
            let p = if k < n_test {
                Partition::Test
            } else if k < n_test + n_val {
                Partition::Val
            } else {
                Partition::Train
            };
            out.push(p, id);
        }
    }
    out.sort();
    let ids: Vec<String> = items.iter().map(|i| i.0.clone()).collect();
    out.check(&ids)?;
    Ok(SplitResult { assignment: out, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupTargets {
    Fractions(SplitFractions),
    /// Explicit validation and test complex counts.
    Counts { val: usize, test: usize },
}

/// Whole-group split: shuffled groups go to test, then validation, while they
/// fit under the target counts; everything else goes to train.
pub fn split_by_group(items: &[(String, usize)], targets: GroupTargets, seed: u64) -> Result<SplitResult> {
    let n = items.len();
    let (t_val, t_test) = match targets {
        GroupTargets::Fractions(f) => {
            f.validate()?;
            (floor_count(n, f.val), floor_count(n, f.test))
        }
        GroupTargets::Counts { val, test } => {
            if val + test > n {
                return Err(Error::Config(format!("{val} + {test} held-out complexes exceed {n}")));
            }
            (val, test)
        }
    };
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (id, g) in items {
        groups.entry(*g).or_default().push(id.clone());
    }
    let mut groups: Vec<(usize, Vec<String>)> = groups.into_iter().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = SplitAssignment::default();
    let mut warnings = Vec::new();
    let (mut n_val, mut n_test) = (0, 0);
    for (gid, ids) in groups {
        let size = ids.len();
        let p = if size > t_test {
            warnings.push(format!("epitope group {gid} ({size} complexes) exceeds the held-out targets; assigned to train"));
            Partition::Train
        } else if n_test + size <= t_test {
            n_test += size;
            Partition::Test
        } else if n_val + size <= t_val {
            n_val += size;
            Partition::Val
        } else {
            Partition::Train
        };
        for id in ids {
            out.push(p, id);
        }
    }
    out.sort();
    let ids: Vec<String> = items.iter().map(|i| i.0.clone()).collect();
    out.check(&ids)?;
    Ok(SplitResult { assignment: out, warnings })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRow {
    pub complex_id: String,
    pub partition: Partition,
    pub epitope_group: Option<usize>,
    pub epitope_ratio_bin: Option<usize>,
}

pub fn split_rows(
    assignment: &SplitAssignment,
    groups: &BTreeMap<String, usize>,
    bins: &BTreeMap<String, usize>,
) -> Vec<SplitRow> {
    assignment
        .partition_of()
        .into_iter()
        .map(|(id, p)| SplitRow {
            complex_id: id.to_string(),
            partition: p,
            epitope_group: groups.get(id).copied(),
            epitope_ratio_bin: bins.get(id).copied(),
        })
        .collect()
}

/// `complex_id,partition,epitope_group,epitope_ratio_bin`; empty cells for unknown values.
pub fn split_csv(rows: &[SplitRow]) -> String {
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("complex_id,partition,epitope_group,epitope_ratio_bin\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.complex_id,
            r.partition.as_str(),
            opt(r.epitope_group),
            opt(r.epitope_ratio_bin)
        );
    }
    s
}

pub fn parse_split_csv(text: &str) -> Result<Vec<SplitRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "complex_id,partition,epitope_group,epitope_ratio_bin" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing split CSV header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let opt = |s: &str| -> Result<Option<usize>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad integer"))
            }
        };
        rows.push(SplitRow {
            complex_id: f[0].to_string(),
            partition: Partition::parse(f[1]).ok_or_else(|| bad("unknown partition"))?,
            epitope_group: opt(f[2])?,
            epitope_ratio_bin: opt(f[3])?,
        });
    }
    Ok(rows)
}

pub fn read_split_csv(path: &Path) -> Result<Vec<SplitRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_split_csv(&text)
}
