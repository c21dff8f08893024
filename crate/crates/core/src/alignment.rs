//! Global pairwise alignment (Needleman–Wunsch with affine gaps) and the
//! position maps built from it.

use std::sync::{Arc, OnceLock};

use crate::{Error, Result};

const BUNDLED_BLOSUM62: &str = include_str!("../data/blosum62.txt");

/// Square substitution matrix over single-letter residue codes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionMatrix {
    pub name: String,
    letters: Vec<char>,
    index: [u8; 128],
    scores: Vec<i32>,
}

const NO_INDEX: u8 = u8::MAX;

impl SubstitutionMatrix {
    /// Parses the NCBI text layout: comment lines start with `#`, then a
    /// header row of column letters, then one row per letter.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("substitution matrix has no header".into()))?;
        let letters: Vec<char> = header
            .split_whitespace()
            .map(|t| t.chars().next().unwrap_or('?'))
            .collect();
        let n = letters.len();
        let mut scores = vec![0; n * n];
        let mut seen = 0;
        for (lineno, line) in lines {
            let mut parts = line.split_whitespace();
            let row = parts.next().and_then(|t| t.chars().next()).unwrap_or('?');
            let r = letters.iter().position(|&c| c == row).ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: format!("row letter {row:?} not in header"),
            })?;
            let values: Vec<i32> = parts
                .map(|t| t.parse::<i32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            if values.len() != n {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected {n} scores, found {}", values.len()),
                });
            }
            scores[r * n..(r + 1) * n].copy_from_slice(&values);
            seen += 1;
        }
        if seen != n {
            return Err(Error::Format(format!("expected {n} matrix rows, found {seen}")));
        }
        let mut index = [NO_INDEX; 128];
        for (k, &c) in letters.iter().enumerate() {
            if c.is_ascii() {
                index[c as usize] = k as u8;
            }
        }
        Ok(SubstitutionMatrix {
            name: name.to_string(),
            letters,
            index,
            scores,
        })
    }

    pub fn blosum62() -> Arc<SubstitutionMatrix> {
        static CELL: OnceLock<Arc<SubstitutionMatrix>> = OnceLock::new();
        CELL.get_or_init(|| {
            Arc::new(Self::parse("BLOSUM62", BUNDLED_BLOSUM62).expect("bundled BLOSUM62 parses"))
        })
        .clone()
    }

    pub fn letters(&self) -> &[char] {
        &self.letters
    }

    fn idx(&self, c: char) -> usize {
        let k = if c.is_ascii() { self.index[c as usize] } else { NO_INDEX };
        if k != NO_INDEX {
            return k as usize;
        }
        // unknown letters score as X
        let x = self.index[b'X' as usize];
        if x != NO_INDEX {
            x as usize
        } else {
            0
        }
    }

    pub fn score(&self, a: char, b: char) -> i32 {
        let n = self.letters.len();
        self.scores[self.idx(a) * n + self.idx(b)]
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.letters.len();
        (0..n).all(|i| (0..n).all(|j| self.scores[i * n + j] == self.scores[j * n + i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Substitution {
    Matrix(Arc<SubstitutionMatrix>),
    MatchMismatch { matched: i32, mismatched: i32 },
}

impl Substitution {
    fn score(&self, a: char, b: char) -> i32 {
        match self {
            Substitution::Matrix(m) => m.score(a, b),
            Substitution::MatchMismatch { matched, mismatched } => {
                if a == b {
                    *matched
                } else {
                    *mismatched
                }
            }
        }
    }
}

/// A gap of length `k` costs `gap_open + (k - 1) * gap_extend`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scoring {
    pub substitution: Substitution,
    pub gap_open: i32,
    pub gap_extend: i32,
}

impl Scoring {
    /// BLOSUM62, open −10, extend −1; used for antigen-vs-antigen comparisons.
    pub fn blosum62_affine() -> Self {
        Scoring {
            substitution: Substitution::Matrix(SubstitutionMatrix::blosum62()),
            gap_open: -10,
            gap_extend: -1,
        }
    }

    /// +1 / −2 with linear gap −1, for SEQRES ↔ ATMSEQ mapping.
    pub fn seqres_linear() -> Self {
        Scoring {
            substitution: Substitution::MatchMismatch {
                matched: 1,
                mismatched: -2,
            },
            gap_open: -1,
            gap_extend: -1,
        }
    }

    pub fn pair(&self, a: char, b: char) -> i32 {
        self.substitution.score(a, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub aligned_a: String,
    pub aligned_b: String,
    pub score: i32,
    pub identity: f64,
    pub coverage_a: f64,
    pub coverage_b: f64,
    columns: Vec<(Option<usize>, Option<usize>)>,
}

impl Alignment {
    /// Column-wise `(a position, b position)`; `None` marks a gap.
    pub fn columns(&self) -> &[(Option<usize>, Option<usize>)] {
        &self.columns
    }

    pub fn aligned_pairs(&self) -> usize {
        self.columns.iter().filter(|(a, b)| a.is_some() && b.is_some()).count()
    }

    pub fn a_to_b(&self, len_a: usize) -> PositionMap {
        let mut a_to_b = vec![None; len_a];
        for &(i, j) in &self.columns {
            if let (Some(i), Some(j)) = (i, j) {
                a_to_b[i] = Some(j);
            }
        }
        PositionMap { a_to_b }
    }
}

/// Per-position optional index into another sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PositionMap {
    pub a_to_b: Vec<Option<usize>>,
}

impl PositionMap {
    pub fn identity(n: usize) -> Self {
        PositionMap {
            a_to_b: (0..n).map(Some).collect(),
        }
    }

    /// Defined entries are strictly increasing.
    pub fn is_monotone(&self) -> bool {
        let defined: Vec<usize> = self.a_to_b.iter().flatten().copied().collect();
        defined.windows(2).all(|w| w[0] < w[1])
    }

    pub fn mask(&self) -> Vec<bool> {
        self.a_to_b.iter().map(Option::is_some).collect()
    }
}

const NEG: i32 = i32::MIN / 4;

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Diag,
    Up,
    Left,
}

fn best3(m: i32, x: i32, y: i32) -> (i32, State) {
    // ties prefer diagonal, then up, then left
    if m >= x && m >= y {
        (m, State::Diag)
    } else if x >= y {
        (x, State::Up)
    } else {
        (y, State::Left)
    }
}

fn validate_sequence(s: &[char], which: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Alignment(format!("sequence {which} is empty")));
    }
    Ok(())
}

/// Optimal global alignment (Gotoh three-state recursion).
pub fn nw_align(a: &str, b: &str, scoring: &Scoring) -> Result<Alignment> {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    validate_sequence(&a, "a")?;
    validate_sequence(&b, "b")?;
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let (open, ext) = (scoring.gap_open, scoring.gap_extend);

    // score rows for the three states; traceback pointers for every cell
    let mut mm = vec![NEG; w];
    let mut xx = vec![NEG; w];
    let mut yy = vec![NEG; w];
    let mut ptr_m = vec![State::Diag; (n + 1) * w];
    let mut ptr_x = vec![State::Diag; (n + 1) * w];
    let mut ptr_y = vec![State::Diag; (n + 1) * w];

    mm[0] = 0;
    for j in 1..=m {
        let (v, s) = best3(mm[j - 1] + open, NEG, yy[j - 1] + ext);
        yy[j] = v;
        ptr_y[j] = s;
    }
    for i in 1..=n {
        let (pm, px, py) = (mm.clone(), xx.clone(), yy.clone());
        mm[0] = NEG;
        yy[0] = NEG;
        let (v, s) = best3(pm[0] + open, px[0] + ext, NEG);
        xx[0] = v;
        ptr_x[i * w] = s;
        for j in 1..=m {
            let (v, s) = best3(pm[j - 1], px[j - 1], py[j - 1]);
            mm[j] = v.saturating_add(scoring.pair(a[i - 1], b[j - 1])).max(NEG);
            ptr_m[i * w + j] = s;

            let (v, s) = best3(pm[j] + open, px[j] + ext, py[j] + open);
            xx[j] = v.max(NEG);
            ptr_x[i * w + j] = s;

            let (v, s) = best3(mm[j - 1] + open, xx[j - 1] + open, yy[j - 1] + ext);
            yy[j] = v.max(NEG);
            ptr_y[i * w + j] = s;
        }
    }

    let (score, mut state) = best3(mm[m], xx[m], yy[m]);
    let (mut i, mut j) = (n, m);
    let mut columns = Vec::with_capacity(n + m);
    while i > 0 || j > 0 {
        let cell = i * w + j;
        match state {
            State::Diag => {
                state = ptr_m[cell];
                columns.push((Some(i - 1), Some(j - 1)));
                i -= 1;
                j -= 1;
            }
            State::Up => {
                state = ptr_x[cell];
                columns.push((Some(i - 1), None));
                i -= 1;
            }
            State::Left => {
                state = ptr_y[cell];
                columns.push((None, Some(j - 1)));
                j -= 1;
            }
        }
    }
    columns.reverse();

    let mut aligned_a = String::with_capacity(columns.len());
    let mut aligned_b = String::with_capacity(columns.len());
    let mut pairs = 0usize;
    let mut matches = 0usize;
    for &(ci, cj) in &columns {
        aligned_a.push(ci.map_or('-', |k| a[k]));
        aligned_b.push(cj.map_or('-', |k| b[k]));
        if let (Some(ci), Some(cj)) = (ci, cj) {
            pairs += 1;
            if a[ci] == b[cj] {
                matches += 1;
            }
        }
    }
    Ok(Alignment {
        aligned_a,
        aligned_b,
        score,
        identity: if pairs == 0 { 0.0 } else { matches as f64 / pairs as f64 },
        coverage_a: pairs as f64 / n as f64,
        coverage_b: pairs as f64 / m as f64,
        columns,
    })
}

/// Score of a given gapped alignment under `scoring`.
pub fn score_aligned(aligned_a: &str, aligned_b: &str, scoring: &Scoring) -> i32 {
    let mut score = 0;
    let mut prev: Option<State> = None;
    for (x, y) in aligned_a.chars().zip(aligned_b.chars()) {
        let state = match (x, y) {
            ('-', _) => State::Left,
            (_, '-') => State::Up,
            _ => State::Diag,
        };
        score += match state {
            State::Diag => scoring.pair(x, y),
            s if prev == Some(s) => scoring.gap_extend,
            _ => scoring.gap_open,
        };
        prev = Some(state);
    }
    score
}

pub const SEQRES_MIN_IDENTITY: f64 = 0.9;
pub const STAR_MIN_IDENTITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SeqresMapping {
    /// SEQRES position → ATMSEQ position.
    pub map: PositionMap,
    pub mask: Vec<bool>,
    pub identity: f64,
}

/// Maps declared (SEQRES) positions onto resolved (ATMSEQ) residues.
pub fn seqres_to_atmseq_mask(seqres: &str, atmseq: &str) -> Result<SeqresMapping> {
    let aln = nw_align(seqres, atmseq, &Scoring::seqres_linear())?;
    if aln.identity < SEQRES_MIN_IDENTITY {
        return Err(Error::Alignment(format!(
            "SEQRES/ATMSEQ identity {:.3} below {SEQRES_MIN_IDENTITY}; chain mismatch?",
            aln.identity
        )));
    }
    let map = aln.a_to_b(seqres.chars().count());
    Ok(SeqresMapping {
        mask: map.mask(),
        map,
        identity: aln.identity,
    })
}

/// Maps each member's positions onto the representative's coordinates
/// (star alignment anchored at the representative).
pub fn star_column_map(representative: &str, members: &[&str]) -> Result<Vec<PositionMap>> {
    let scoring = Scoring::blosum62_affine();
    members
        .iter()
        .enumerate()
        .map(|(k, member)| {
            let aln = nw_align(member, representative, &scoring)?;
            if aln.identity < STAR_MIN_IDENTITY {
                return Err(Error::Alignment(format!(
                    "member {k} has identity {:.3} to the representative (< {STAR_MIN_IDENTITY})",
                    aln.identity
                )));
            }
            Ok(aln.a_to_b(member.chars().count()))
        })
        .collect()
}
