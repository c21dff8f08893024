//! PDB parsing and antibody–antigen complex extraction.

use std::collections::HashMap;
use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::graph::CdrRangeTable;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub name: String,
    pub element: String,
    pub coords: [f64; 3],
    pub is_hydrogen: bool,
}

/// `(chain, residue number, insertion code)`, unique within a structure.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResidueKey {
    pub chain: String,
    pub number: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insertion: Option<char>,
}

impl ResidueKey {
    pub fn new(chain: impl Into<String>, number: i32, insertion: Option<char>) -> Self {
        ResidueKey {
            chain: chain.into(),
            number,
            insertion,
        }
    }
}

impl fmt::Display for ResidueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.chain, self.number)?;
        if let Some(c) = self.insertion {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residue {
    pub chain_id: String,
    pub number: i32,
    pub insertion_code: Option<char>,
    pub aa3: String,
    pub aa1: char,
    pub atoms: Vec<Atom>,
}

impl Residue {
    pub fn key(&self) -> ResidueKey {
        ResidueKey::new(self.chain_id.clone(), self.number, self.insertion_code)
    }

    pub fn heavy_atoms(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter().filter(|a| !a.is_hydrogen)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub id: String,
    pub residues: Vec<Residue>,
    /// One letter per resolved residue, in ATOM-record order.
    pub atmseq: String,
    /// Declared sequence from SEQRES records; empty when absent.
    pub seqres: String,
}

impl Chain {
    /// SEQRES when present, otherwise the resolved sequence.
    pub fn full_sequence(&self) -> &str {
        if self.seqres.is_empty() {
            &self.atmseq
        } else {
            &self.seqres
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Structure {
    pub chains: Vec<Chain>,
    pub warnings: Vec<String>,
}

impl Structure {
    pub fn chain(&self, id: &str) -> Option<&Chain> {
        self.chains.iter().find(|c| c.id == id)
    }

    pub fn chain_ids(&self) -> Vec<&str> {
        self.chains.iter().map(|c| c.id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbAgComplex {
    pub id: String,
    pub heavy: Chain,
    pub light: Chain,
    pub antigen: Chain,
    /// Set when the antigen had no SEQRES records and its ATMSEQ stands in.
    pub antigen_seqres_fallback: bool,
}

/// Standard residue names plus common modified residues that carry an
/// amino-acid identity.
pub fn three_to_one(code: &str) -> Option<char> {
    let c = match code {
        "ALA" => 'A',
        "ARG" => 'R',
        "ASN" => 'N',
        "ASP" => 'D',
        "CYS" => 'C',
        "GLN" => 'Q',
        "GLU" => 'E',
        "GLY" => 'G',
        "HIS" => 'H',
        "ILE" => 'I',
        "LEU" => 'L',
        "LYS" => 'K',
        "MET" => 'M',
        "PHE" => 'F',
        "PRO" => 'P',
        "SER" => 'S',
        "THR" => 'T',
        "TRP" => 'W',
        "TYR" => 'Y',
        "VAL" => 'V',
        "MSE" => 'M',
        "SEP" => 'S',
        "TPO" => 'T',
        "PTR" => 'Y',
        "HYP" => 'P',
        "CSO" | "CME" => 'C',
        "MLY" => 'K',
        "PCA" => 'E',
        _ => return None,
    };
    Some(c)
}

fn is_water(code: &str) -> bool {
    matches!(code, "HOH" | "WAT" | "DOD" | "H2O")
}

fn column(line: &str, start: usize, end: usize) -> &str {
    // 1-based inclusive columns, tolerant of short lines
    let bytes = line.as_bytes();
    if start > bytes.len() {
        return "";
    }
    let end = end.min(bytes.len());
    line.get(start - 1..end).unwrap_or("")
}

fn parse_coord(line: &str, start: usize, end: usize, lineno: usize) -> Result<f64> {
    let field = column(line, start, end).trim();
    let value: f64 = field.parse().map_err(|_| Error::Parse {
        line: lineno,
        message: format!("bad coordinate field {field:?} in columns {start}-{end}"),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse {
            line: lineno,
            message: "non-finite coordinate".into(),
        });
    }
    Ok(value)
}

fn infer_element(name: &str, explicit: &str) -> String {
    let explicit = explicit.trim();
    if !explicit.is_empty() {
        return explicit.to_ascii_uppercase();
    }
    name.trim()
        .chars()
        .find(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase().to_string())
        .unwrap_or_else(|| "C".to_string())
}

struct ChainBuilder {
    id: String,
    residues: Vec<Residue>,
    index: HashMap<(i32, Option<char>), usize>,
    seqres: Vec<char>,
}

impl ChainBuilder {
    fn new(id: &str) -> Self {
        ChainBuilder {
            id: id.to_string(),
            residues: Vec::new(),
            index: HashMap::new(),
            seqres: Vec::new(),
        }
    }
}

/// Parses PDB text into chains (first model only).
pub fn parse_pdb(text: &str) -> Result<Structure> {
    let mut order: Vec<String> = Vec::new();
    let mut builders: HashMap<String, ChainBuilder> = HashMap::new();
    let mut warnings = Vec::new();
    let mut in_first_model_done = false;

    let mut builder_for = |id: &str, order: &mut Vec<String>| -> String {
        if !builders.contains_key(id) {
            builders.insert(id.to_string(), ChainBuilder::new(id));
            order.push(id.to_string());
        }
        id.to_string()
    };
    // collected after the closure is dropped
    let mut records: Vec<(String, Record)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        let tag = column(line, 1, 6);
        if tag == "ENDMDL" {
            in_first_model_done = true;
            continue;
        }
        if tag == "SEQRES" {
            let chain = column(line, 12, 12).trim().to_string();
            let chain = if chain.is_empty() { " ".to_string() } else { chain };
            let key = builder_for(&chain, &mut order);
            let names: Vec<String> = column(line, 20, 80)
                .split_whitespace()
                .map(str::to_string)
                .collect();
            records.push((key, Record::Seqres(names)));
            continue;
        }
        if in_first_model_done || (tag != "ATOM  " && tag != "HETATM") {
            continue;
        }
        if line.len() < 54 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("{} record shorter than 54 columns", tag.trim()),
            });
        }
        let altloc = column(line, 17, 17).chars().next().unwrap_or(' ');
        if altloc != ' ' && altloc != 'A' {
            continue;
        }
        let res_name = column(line, 18, 20).trim().to_string();
        let hetatm = tag == "HETATM";
        if hetatm && (is_water(&res_name) || three_to_one(&res_name).is_none()) {
            continue;
        }
        let number: i32 = column(line, 23, 26).trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad residue number {:?}", column(line, 23, 26)),
        })?;
        let insertion = column(line, 27, 27).chars().next().filter(|c| *c != ' ');
        let x = parse_coord(line, 31, 38, lineno)?;
        let y = parse_coord(line, 39, 46, lineno)?;
        let z = parse_coord(line, 47, 54, lineno)?;
        let name = column(line, 13, 16).trim().to_string();
        let element = infer_element(column(line, 13, 16), column(line, 77, 78));
        let is_hydrogen = element == "H" || element == "D";
        let chain = column(line, 22, 22).to_string();
        let chain = if chain.is_empty() { " ".to_string() } else { chain };
        let key = builder_for(&chain, &mut order);
        records.push((
            key,
            Record::Atom {
                res_name,
                number,
                insertion,
                atom: Atom {
                    name,
                    element,
                    coords: [x, y, z],
                    is_hydrogen,
                },
            },
        ));
    }

    for (chain, record) in records {
        let b = builders.get_mut(&chain).expect("builder registered");
        match record {
            Record::Seqres(names) => {
                for n in names {
                    b.seqres.push(three_to_one(&n).unwrap_or('X'));
                }
            }
            Record::Atom {
                res_name,
                number,
                insertion,
                atom,
            } => {
                let idx = match b.index.get(&(number, insertion)) {
                    Some(&idx) => idx,
                    None => {
                        let aa1 = match three_to_one(&res_name) {
                            Some(c) => c,
                            None => {
                                let msg = format!(
                                    "unknown residue {res_name} at {}",
                                    ResidueKey::new(chain.clone(), number, insertion)
                                );
                                warn!("{msg}");
                                warnings.push(msg);
                                'X'
                            }
                        };
                        b.residues.push(Residue {
                            chain_id: chain.clone(),
                            number,
                            insertion_code: insertion,
                            aa3: res_name,
                            aa1,
                            atoms: Vec::new(),
                        });
                        b.index.insert((number, insertion), b.residues.len() - 1);
                        b.residues.len() - 1
                    }
                };
                b.residues[idx].atoms.push(atom);
            }
        }
    }

    let chains = order
        .into_iter()
        .filter_map(|id| builders.remove(&id))
        .filter(|b| !b.residues.is_empty())
        .map(|b| Chain {
            atmseq: b.residues.iter().map(|r| r.aa1).collect(),
            seqres: b.seqres.into_iter().collect(),
            id: b.id,
            residues: b.residues,
        })
        .collect();

    Ok(Structure { chains, warnings })
}

enum Record {
    Seqres(Vec<String>),
    Atom {
        res_name: String,
        number: i32,
        insertion: Option<char>,
        atom: Atom,
    },
}

pub fn extract_complex(
    s: &Structure,
    id: &str,
    heavy_id: &str,
    light_id: &str,
    antigen_id: &str,
) -> Result<AbAgComplex> {
    if heavy_id == light_id || heavy_id == antigen_id || light_id == antigen_id {
        return Err(Error::Invalid(format!(
            "chain roles must be distinct (heavy {heavy_id}, light {light_id}, antigen {antigen_id})"
        )));
    }
    let get = |cid: &str| {
        s.chain(cid)
            .cloned()
            .ok_or_else(|| Error::ChainNotFound(cid.to_string()))
    };
    let heavy = get(heavy_id)?;
    let light = get(light_id)?;
    let mut antigen = get(antigen_id)?;
    let fallback = antigen.seqres.is_empty();
    if fallback {
        warn!("{id}: antigen chain {antigen_id} has no SEQRES; using ATMSEQ");
        antigen.seqres = antigen.atmseq.clone();
    }
    Ok(AbAgComplex {
        id: id.to_string(),
        heavy,
        light,
        antigen,
        antigen_seqres_fallback: fallback,
    })
}

/// First chain that is neither the heavy nor the light chain (AbDb layout).
pub fn default_antigen_chain<'a>(s: &'a Structure, heavy: &str, light: &str) -> Option<&'a str> {
    s.chains
        .iter()
        .map(|c| c.id.as_str())
        .find(|id| *id != heavy && *id != light)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    AntigenTooShort,
    AntigenTooLong,
    CdrUnresolved,
    CdrUnknownResidue,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::AntigenTooShort => "antigen_too_short",
            RejectReason::AntigenTooLong => "antigen_too_long",
            RejectReason::CdrUnresolved => "cdr_unresolved",
            RejectReason::CdrUnknownResidue => "cdr_unknown_residue",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub reasons: Vec<RejectReason>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.reasons.is_empty()
    }
}

pub const MIN_ANTIGEN_LEN: usize = 50;
pub const MAX_ANTIGEN_LEN: usize = 1021;

pub fn validate_complex(
    c: &AbAgComplex,
    ranges: &CdrRangeTable,
    min_len: usize,
    max_len: usize,
) -> ValidationReport {
    let mut reasons = Vec::new();
    let len = c.antigen.full_sequence().chars().count();
    if len < min_len {
        reasons.push(RejectReason::AntigenTooShort);
    }
    if len > max_len {
        reasons.push(RejectReason::AntigenTooLong);
    }

    let mut unresolved = false;
    let mut unknown = false;
    for (chain, kind) in [(&c.heavy, 'H'), (&c.light, 'L')] {
        for interval in ranges.intervals(kind) {
            // every integer position of the loop must be present; insertions are optional
            for n in interval.start..=interval.end {
                if !chain.residues.iter().any(|r| r.number == n) {
                    unresolved = true;
                }
            }
            if chain
                .residues
                .iter()
                .filter(|r| interval.contains(r.number))
                .any(|r| r.aa1 == 'X')
            {
                unknown = true;
            }
        }
    }
    if unresolved {
        reasons.push(RejectReason::CdrUnresolved);
    }
    if unknown {
        reasons.push(RejectReason::CdrUnknownResidue);
    }
    ValidationReport { reasons }
}
