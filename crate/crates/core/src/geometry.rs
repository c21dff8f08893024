//! Residue contact maps and Shrake–Rupley solvent-accessible surface area.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use log::warn;

use crate::structure::{Atom, Residue};
use crate::{Error, Result};

pub const DEFAULT_CUTOFF: f64 = 4.5;
pub const DEFAULT_PROBE: f64 = 1.4;
pub const DEFAULT_POINTS: usize = 960;
pub const DEFAULT_RADIUS: f64 = 1.8;
pub const MIN_POINTS: usize = 16;

/// Sparse binary `rows × cols` contact matrix.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContactMap {
    pub rows: usize,
    pub cols: usize,
    pub entries: BTreeSet<(usize, usize)>,
}

impl ContactMap {
    pub fn new(rows: usize, cols: usize) -> Self {
        ContactMap {
            rows,
            cols,
            entries: BTreeSet::new(),
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.entries.contains(&(i, j))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn transpose(&self) -> ContactMap {
        ContactMap {
            rows: self.cols,
            cols: self.rows,
            entries: self.entries.iter().map(|&(i, j)| (j, i)).collect(),
        }
    }

    /// Keeps only the given rows and columns, renumbering them in order.
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> ContactMap {
        let row_pos: HashMap<usize, usize> = rows.iter().enumerate().map(|(k, &r)| (r, k)).collect();
        let col_pos: HashMap<usize, usize> = cols.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        let entries = self
            .entries
            .iter()
            .filter_map(|(i, j)| Some((*row_pos.get(i)?, *col_pos.get(j)?)))
            .collect();
        ContactMap {
            rows: rows.len(),
            cols: cols.len(),
            entries,
        }
    }

    /// Upper-triangle pairs `i < j`, the undirected edge list of a symmetric map.
    pub fn upper_pairs(&self) -> Vec<[usize; 2]> {
        self.entries
            .iter()
            .filter(|(i, j)| i < j)
            .map(|&(i, j)| [i, j])
            .collect()
    }

    pub fn from_undirected(n: usize, edges: &[[usize; 2]]) -> Result<ContactMap> {
        let mut map = ContactMap::new(n, n);
        for &[i, j] in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::Graph(format!("invalid edge ({i}, {j}) for {n} nodes")));
            }
            map.entries.insert((i, j));
            map.entries.insert((j, i));
        }
        Ok(map)
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

struct ResidueSphere<'a> {
    atoms: Vec<&'a [f64; 3]>,
    center: [f64; 3],
    radius: f64,
}

fn heavy_sphere(r: &Residue) -> Option<ResidueSphere<'_>> {
    let atoms: Vec<&[f64; 3]> = r.heavy_atoms().map(|a| &a.coords).collect();
    if atoms.is_empty() {
        warn!("residue {} has no non-hydrogen atoms; excluded from contacts", r.key());
        return None;
    }
    let n = atoms.len() as f64;
    let mut center = [0.0; 3];
    for a in &atoms {
        for k in 0..3 {
            center[k] += a[k] / n;
        }
    }
    let radius = atoms.iter().map(|a| dist2(a, &center).sqrt()).fold(0.0, f64::max);
    Some(ResidueSphere { atoms, center, radius })
}

fn in_contact(a: &ResidueSphere, b: &ResidueSphere, cutoff: f64) -> bool {
    let reach = a.radius + b.radius + cutoff;
    // generous prefilter; the exact test below decides
    if dist2(&a.center, &b.center) > reach * reach * (1.0 + 1e-9) + 1e-9 {
        return false;
    }
    // compared as a distance so the boundary matches the definition exactly
    a.atoms
        .iter()
        .any(|p| b.atoms.iter().any(|q| dist2(p, q).sqrt() < cutoff))
}

/// Residue pairs whose closest non-hydrogen atoms are strictly closer than `cutoff`.
pub fn contact_map(a: &[Residue], b: &[Residue], cutoff: f64) -> Result<ContactMap> {
    if !(cutoff > 0.0) {
        return Err(Error::Config(format!("contact cutoff must be positive, got {cutoff}")));
    }
    let sa: Vec<_> = a.iter().map(heavy_sphere).collect();
    let sb: Vec<_> = b.iter().map(heavy_sphere).collect();
    let mut map = ContactMap::new(a.len(), b.len());
    for (i, ra) in sa.iter().enumerate() {
        let Some(ra) = ra else { continue };
        for (j, rb) in sb.iter().enumerate() {
            let Some(rb) = rb else { continue };
            if in_contact(ra, rb, cutoff) {
                map.entries.insert((i, j));
            }
        }
    }
    Ok(map)
}

/// Intra-chain contacts: symmetric, no self pairs.
pub fn self_contact_map(residues: &[Residue], cutoff: f64) -> Result<ContactMap> {
    if !(cutoff > 0.0) {
        return Err(Error::Config(format!("contact cutoff must be positive, got {cutoff}")));
    }
    let spheres: Vec<_> = residues.iter().map(heavy_sphere).collect();
    let mut map = ContactMap::new(residues.len(), residues.len());
    for i in 0..spheres.len() {
        let Some(ri) = &spheres[i] else { continue };
        for j in i + 1..spheres.len() {
            let Some(rj) = &spheres[j] else { continue };
            if in_contact(ri, rj, cutoff) {
                map.entries.insert((i, j));
                map.entries.insert((j, i));
            }
        }
    }
    Ok(map)
}

/// Element → van der Waals radius in Å.
#[derive(Debug, Clone)]
pub struct RadiusTable {
    radii: HashMap<String, f64>,
    pub default_radius: f64,
}

const BUNDLED_RADII: &str = include_str!("../data/vdw_radii.txt");

impl RadiusTable {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_RADII).expect("bundled radius table parses")
    }

    /// Whitespace-separated `ELEMENT RADIUS` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut radii = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(el), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected `ELEMENT RADIUS`".into(),
                });
            };
            let r: f64 = r.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad radius {r:?}"),
            })?;
            if !(r > 0.0) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "radius must be positive".into(),
                });
            }
            radii.insert(el.to_ascii_uppercase(), r);
        }
        Ok(RadiusTable {
            radii,
            default_radius: DEFAULT_RADIUS,
        })
    }

    pub fn get(&self, element: &str) -> Option<f64> {
        self.radii.get(&element.to_ascii_uppercase()).copied()
    }

    pub fn radius_or_default(&self, element: &str) -> f64 {
        match self.get(element) {
            Some(r) => r,
            None => {
                warn!("no van der Waals radius for element {element:?}; using {}", self.default_radius);
                self.default_radius
            }
        }
    }
}

impl Default for RadiusTable {
    fn default() -> Self {
        Self::bundled()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SasaProfile {
    pub areas: Vec<f64>,
    pub probe_radius: f64,
    pub points_per_atom: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SasaParams {
    pub probe: f64,
    pub n_points: usize,
}

impl Default for SasaParams {
    fn default() -> Self {
        SasaParams {
            probe: DEFAULT_PROBE,
            n_points: DEFAULT_POINTS,
        }
    }
}

/// Deterministic, near-uniform unit vectors (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Per-atom accessible area for spheres given by centers and van der Waals radii.
pub fn atom_sasa(centers: &[[f64; 3]], radii: &[f64], params: SasaParams) -> Result<Vec<f64>> {
    if params.n_points < MIN_POINTS {
        return Err(Error::Config(format!(
            "n_points must be at least {MIN_POINTS}, got {}",
            params.n_points
        )));
    }
    if centers.len() != radii.len() {
        return Err(Error::Shape("centers and radii differ in length".into()));
    }
    let expanded: Vec<f64> = radii.iter().map(|r| r + params.probe).collect();
    let max_r = expanded.iter().copied().fold(0.0, f64::max);
    let cell = (2.0 * max_r).max(1e-6);
    let cell_of = |p: &[f64; 3]| -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, c) in centers.iter().enumerate() {
        grid.entry(cell_of(c)).or_default().push(i);
    }
    let sphere = fibonacci_sphere(params.n_points);

    let mut areas = Vec::with_capacity(centers.len());
    for (i, c) in centers.iter().enumerate() {
        let ri = expanded[i];
        let (cx, cy, cz) = cell_of(c);
        let mut neighbors: Vec<usize> = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in list {
                            if j == i {
                                continue;
                            }
                            let reach = ri + expanded[j];
                            if dist2(c, &centers[j]) < reach * reach {
                                neighbors.push(j);
                            }
                        }
                    }
                }
            }
        }
        neighbors.sort_unstable();

        let mut exposed = 0usize;
        let mut last_hit: Option<usize> = None;
        for u in &sphere {
            let p = [c[0] + ri * u[0], c[1] + ri * u[1], c[2] + ri * u[2]];
            let occluded_by = |j: usize| dist2(&p, &centers[j]) < expanded[j] * expanded[j];
            // neighboring points are usually buried by the same atom
            if let Some(j) = last_hit {
                if occluded_by(j) {
                    continue;
                }
            }
            match neighbors.iter().copied().find(|&j| occluded_by(j)) {
                Some(j) => last_hit = Some(j),
                None => exposed += 1,
            }
        }
        let fraction = exposed as f64 / params.n_points as f64;
        areas.push(fraction * 4.0 * PI * ri * ri);
    }
    Ok(areas)
}

/// Residue-level SASA of a chain in isolation. Hydrogens are ignored.
pub fn shrake_rupley_sasa(
    chain: &[Residue],
    radii: &RadiusTable,
    params: SasaParams,
) -> Result<SasaProfile> {
    let mut centers = Vec::new();
    let mut atom_radii = Vec::new();
    let mut owner = Vec::new();
    for (k, res) in chain.iter().enumerate() {
        for atom in res.heavy_atoms() {
            centers.push(atom.coords);
            atom_radii.push(radii.radius_or_default(&atom.element));
            owner.push(k);
        }
    }
    let per_atom = atom_sasa(&centers, &atom_radii, params)?;
    let mut areas = vec![0.0; chain.len()];
    for (a, k) in per_atom.into_iter().zip(owner) {
        areas[k] += a;
    }
    Ok(SasaProfile {
        areas,
        probe_radius: params.probe,
        points_per_atom: params.n_points,
    })
}

/// `true` where a residue's area exceeds `min_area` (0 means "any exposure").
pub fn surface_mask(profile: &SasaProfile, min_area: f64) -> Vec<bool> {
    profile.areas.iter().map(|&a| a > min_area).collect()
}

pub fn heavy_atom_count(atoms: &[Atom]) -> usize {
    atoms.iter().filter(|a| !a.is_hydrogen).count()
}
