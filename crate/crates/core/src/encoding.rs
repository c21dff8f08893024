//! Node feature matrices: one-hot, BLOSUM62 rows, and externally computed
//! embeddings stored in EMB1 files.
//!
//! EMB1 layout (all integers little-endian):
//!
//! ```text
//! "EMB1" | name_len: u16 | name: UTF-8 | rows: u32 | cols: u32 | rows*cols f32, row-major
//! ```

use std::path::Path;

use crate::alignment::SubstitutionMatrix;
use crate::graph::NodeGraph;
use crate::{Error, Result};

/// Canonical residues in alphabetical order of their one-letter codes.
pub const CANONICAL: [char; 20] = [
    'A', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V', 'W', 'Y',
];

/// Column order of BLOSUM62 features (the matrix's own row order).
pub const BLOSUM_ORDER: [char; 20] = [
    'A', 'R', 'N', 'D', 'C', 'Q', 'E', 'G', 'H', 'I', 'L', 'K', 'M', 'F', 'P', 'S', 'T', 'W', 'Y', 'V',
];

pub const ONEHOT_DIM: usize = 21;
pub const BLOSUM_DIM: usize = 20;
const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f32>,
    pub source_tag: String,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>, source_tag: impl Into<String>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{dim} feature matrix",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite feature value at flat index {k}")));
        }
        Ok(FeatureMatrix {
            rows,
            dim,
            values,
            source_tag: source_tag.into(),
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Stacks matrices of equal width (antibody heavy then light).
    pub fn concat_rows(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        if let Some(p) = parts.iter().find(|p| p.dim != first.dim) {
            return Err(Error::Shape(format!(
                "cannot stack feature widths {} and {}",
                first.dim, p.dim
            )));
        }
        let values: Vec<f32> = parts.iter().flat_map(|p| p.values.iter().copied()).collect();
        FeatureMatrix::new(
            parts.iter().map(|p| p.rows).sum(),
            first.dim,
            values,
            first.source_tag.clone(),
        )
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let values = rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        FeatureMatrix {
            rows: rows.len(),
            dim: self.dim,
            values,
            source_tag: self.source_tag.clone(),
        }
    }
}

fn canonical_index(c: char) -> Option<usize> {
    CANONICAL.iter().position(|&x| x == c)
}

fn check_alphabet(seq: &str) -> Result<()> {
    if let Some((i, c)) = seq
        .chars()
        .enumerate()
        .find(|(_, c)| *c != 'X' && canonical_index(*c).is_none())
    {
        return Err(Error::Invalid(format!(
            "residue {c:?} at position {i} is not a canonical amino acid or X"
        )));
    }
    Ok(())
}

/// One row per residue with a single 1: `A..Y → 0..19`, `X → 20`.
pub fn onehot_encode(seq: &str) -> Result<FeatureMatrix> {
    check_alphabet(seq)?;
    let rows = seq.chars().count();
    let mut values = vec![0.0f32; rows * ONEHOT_DIM];
    for (i, c) in seq.chars().enumerate() {
        let k = canonical_index(c).unwrap_or(20);
        values[i * ONEHOT_DIM + k] = 1.0;
    }
    FeatureMatrix::new(rows, ONEHOT_DIM, values, "onehot")
}

/// BLOSUM62 row of each residue over the 20 canonical columns ([`BLOSUM_ORDER`]).
pub fn blosum_encode(seq: &str) -> Result<FeatureMatrix> {
    check_alphabet(seq)?;
    let m = SubstitutionMatrix::blosum62();
    let rows = seq.chars().count();
    let values = seq
        .chars()
        .flat_map(|c| BLOSUM_ORDER.iter().map(move |&col| (c, col)))
        .map(|(c, col)| m.score(c, col) as f32)
        .collect();
    FeatureMatrix::new(rows, BLOSUM_DIM, values, "blosum62")
}

pub fn encode_emb1(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let name = m.source_tag.as_bytes();
    let name_len = u16::try_from(name.len())
        .map_err(|_| Error::Format("source tag longer than 65535 bytes".into()))?;
    let rows = u32::try_from(m.rows).map_err(|_| Error::Format("too many rows".into()))?;
    let cols = u32::try_from(m.dim).map_err(|_| Error::Format("too many columns".into()))?;
    let mut out = Vec::with_capacity(14 + name.len() + m.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in &m.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format(format!("truncated EMB1 data while reading {what}")))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

pub fn decode_emb1(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut at = 0;
    if take(bytes, &mut at, 4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, expected EMB1".into()));
    }
    let name_len = u16::from_le_bytes(take(bytes, &mut at, 2, "name length")?.try_into().unwrap()) as usize;
    let name = std::str::from_utf8(take(bytes, &mut at, name_len, "name")?)
        .map_err(|_| Error::Format("name is not UTF-8".into()))?
        .to_string();
    let rows = u32::from_le_bytes(take(bytes, &mut at, 4, "rows")?.try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(take(bytes, &mut at, 4, "cols")?.try_into().unwrap()) as usize;
    let payload = &bytes[at..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "header declares {rows}x{cols} but payload holds {} bytes (expected {expected})",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let tag = match name.as_str() {
        "onehot" | "blosum62" => name,
        n if n.starts_with("external:") => name,
        n => format!("external:{n}"),
    };
    FeatureMatrix::new(rows, cols, values, tag)
}

pub fn load_embedding_file(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_emb1(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_embedding_file(path: &Path, m: &FeatureMatrix) -> Result<()> {
    std::fs::write(path, encode_emb1(m)?).map_err(|e| Error::file(path, e))
}

/// Copies each node's row out of full-chain (SEQRES-indexed) features.
///
/// `full` holds the chains' SEQRES rows stacked in segment order, so for an
/// antibody graph it is the heavy matrix followed by the light matrix.
pub fn attach_features(g: &mut NodeGraph, full: &FeatureMatrix) -> Result<()> {
    let total: usize = g.segments.iter().map(|s| s.mask.len()).sum();
    if full.rows != total {
        return Err(Error::Shape(format!(
            "features have {} rows but the graph's SEQRES length is {total}",
            full.rows
        )));
    }
    let positions = g.seqres_positions();
    if positions.len() != g.len() {
        let k = positions.len().min(g.len().saturating_sub(1));
        return Err(Error::Graph(format!(
            "node {} has no SEQRES position",
            g.node_ids.get(k).map(|k| k.to_string()).unwrap_or_default()
        )));
    }
    let offsets: Vec<usize> = g
        .segments
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.mask.len();
            Some(o)
        })
        .collect();
    let rows: Vec<usize> = positions.iter().map(|&(s, p)| offsets[s] + p).collect();
    g.features = Some(full.select_rows(&rows));
    Ok(())
}
