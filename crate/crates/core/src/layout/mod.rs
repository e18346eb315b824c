//! The eight layout algorithms shown to annotators, plus normalization,
//! rasterization and the layout interchange file.

mod force;
mod mds;
mod raster;
mod stress;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed;
use crate::graph::Graph;
use crate::rng::{self, Domain};

pub use force::{coarsen_levels, ForceTrace};
pub use mds::classical_mds;
pub use raster::{read_pgm, render, write_pgm, PgmFormat, RasterImage, RenderParams};
pub use stress::{kamada_kawai_energy, weighted_stress, StressTrace};

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("{algorithm} needs a connected graph; {graph_id} is disconnected")]
    Disconnected { graph_id: String, algorithm: Algorithm },
    #[error("all points coincide; layout cannot be normalized")]
    Degenerate,
    #[error("raster size {0} is below the minimum of 16 pixels")]
    RasterTooSmall(usize),
    #[error("unknown layout algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error("layout file: {0}")]
    Format(String),
    #[error("layout set for {graph_id} is missing {missing}")]
    IncompleteSet { graph_id: String, missing: Algorithm },
    #[error(transparent)]
    Embedding(#[from] embed::EmbedError),
}

pub type Result<T> = std::result::Result<T, LayoutError>;

/// The eight layout algorithms, in canonical order. The canonical index is
/// the position used for soft targets, model outputs and tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Neato,
    KamadaKawai,
    Fa2,
    Fdp,
    Sfdp,
    Spring,
    Pmds,
    Spectral,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Neato,
        Algorithm::KamadaKawai,
        Algorithm::Fa2,
        Algorithm::Fdp,
        Algorithm::Sfdp,
        Algorithm::Spring,
        Algorithm::Pmds,
        Algorithm::Spectral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Neato => "neato",
            Algorithm::KamadaKawai => "kamada_kawai",
            Algorithm::Fa2 => "fa2",
            Algorithm::Fdp => "fdp",
            Algorithm::Sfdp => "sfdp",
            Algorithm::Spring => "spring",
            Algorithm::Pmds => "pmds",
            Algorithm::Spectral => "spectral",
        }
    }

    /// Algorithms whose objective uses graph-theoretic distances.
    pub fn needs_connected(self) -> bool {
        matches!(
            self,
            Algorithm::Neato | Algorithm::KamadaKawai | Algorithm::Pmds | Algorithm::Spectral
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = LayoutError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| LayoutError::UnknownAlgorithm(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub graph_id: String,
    pub algorithm: Algorithm,
    pub coords: Vec<[f64; 2]>,
    /// False when the iteration cap was reached before the convergence test
    /// passed; the coordinates are then the best found so far.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutParams {
    /// Iteration cap for stress majorization and Kamada-Kawai.
    pub max_iter_stress: usize,
    /// Iteration cap for the force-directed models.
    pub max_iter_force: usize,
    /// Relative energy change below which an energy-based layout stops.
    pub tolerance: f64,
    /// Pivot count for PMDS, capped at the node count.
    pub pivots: usize,
    /// sfdp stops coarsening once a level has at most this many nodes.
    pub coarsen_threshold: usize,
    /// Ideal edge length for the Fruchterman-Reingold `spring` model;
    /// `None` uses `1 / sqrt(n)`.
    pub spring_k: Option<f64>,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            max_iter_stress: 500,
            max_iter_force: 1000,
            tolerance: 1e-7,
            pivots: 50,
            coarsen_threshold: 10,
            spring_k: None,
        }
    }
}

/// Computes one layout. Identical `(g, algorithm, params, seed)` gives
/// bit-identical coordinates.
pub fn layout(g: &Graph, algorithm: Algorithm, params: &LayoutParams, seed: u64) -> Result<Layout> {
    if algorithm.needs_connected() && !g.is_connected() {
        return Err(LayoutError::Disconnected {
            graph_id: g.id().to_string(),
            algorithm,
        });
    }
    let mut rng = rng::stream(seed, Domain::Layout, algorithm.index() as u32);
    let (coords, converged) = if g.node_count() == 1 {
        (vec![[0.0, 0.0]], true)
    } else {
        match algorithm {
            Algorithm::Neato => {
                let t = stress::stress_majorization(g, params, &mut rng);
                (t.coords, t.converged)
            }
            Algorithm::KamadaKawai => {
                let t = stress::kamada_kawai(g, params);
                (t.coords, t.converged)
            }
            Algorithm::Spring => {
                let t = force::spring(g, params, &mut rng);
                (t.coords, t.converged)
            }
            Algorithm::Fdp => {
                let t = force::fdp(g, params, &mut rng);
                (t.coords, t.converged)
            }
            Algorithm::Fa2 => {
                let t = force::fa2(g, params, &mut rng);
                (t.coords, t.converged)
            }
            Algorithm::Sfdp => {
                let t = force::sfdp(g, params, &mut rng);
                (t.coords, t.converged)
            }
            Algorithm::Pmds => mds::pivot_mds(g, params.pivots, &mut rng),
            Algorithm::Spectral => (spectral_coords(g)?, true),
        }
    };
    if !converged {
        log::warn!(
            "{} on graph {} hit its iteration cap before converging",
            algorithm,
            g.id()
        );
    }
    Ok(Layout {
        graph_id: g.id().to_string(),
        algorithm,
        coords,
        converged,
    })
}

fn check_connected(g: &Graph, algorithm: Algorithm) -> Result<()> {
    if g.is_connected() {
        Ok(())
    } else {
        Err(LayoutError::Disconnected {
            graph_id: g.id().to_string(),
            algorithm,
        })
    }
}

/// The `neato` layout together with its stress after every iteration.
pub fn stress_majorization_trace(g: &Graph, params: &LayoutParams, seed: u64) -> Result<StressTrace> {
    check_connected(g, Algorithm::Neato)?;
    let mut rng = rng::stream(seed, Domain::Layout, Algorithm::Neato.index() as u32);
    Ok(stress::stress_majorization(g, params, &mut rng))
}

/// The `kamada_kawai` layout together with its energy after every sweep.
pub fn kamada_kawai_trace(g: &Graph, params: &LayoutParams) -> Result<StressTrace> {
    check_connected(g, Algorithm::KamadaKawai)?;
    Ok(stress::kamada_kawai(g, params))
}

/// Coordinates from the eigenvectors of the second and third smallest
/// Laplacian eigenvalues.
fn spectral_coords(g: &Graph) -> Result<Vec<[f64; 2]>> {
    let k = 2.min(g.node_count() - 1);
    let emb = embed::spectral_embedding(g, k)?;
    Ok(emb
        .vectors
        .iter()
        .map(|row| [row[0], row.get(1).copied().unwrap_or(0.0)])
        .collect())
}

/// A graph's eight layouts plus the display permutation.
#[derive(Debug, Clone)]
pub struct LayoutSet {
    pub graph_id: String,
    /// Indexed by canonical algorithm index.
    pub layouts: Vec<Layout>,
    /// `display_order[position] = canonical algorithm index` shown there.
    pub display_order: [usize; 8],
}

impl LayoutSet {
    pub fn new(graph_id: impl Into<String>, layouts: Vec<Layout>, display_order: [usize; 8]) -> Result<Self> {
        let graph_id = graph_id.into();
        let mut by_alg: Vec<Option<Layout>> = vec![None; 8];
        for l in layouts {
            let i = l.algorithm.index();
            by_alg[i] = Some(l);
        }
        let mut out = Vec::with_capacity(8);
        for (i, slot) in by_alg.into_iter().enumerate() {
            match slot {
                Some(l) => out.push(l),
                None => {
                    return Err(LayoutError::IncompleteSet {
                        graph_id,
                        missing: Algorithm::ALL[i],
                    })
                }
            }
        }
        if !is_permutation(&display_order) {
            return Err(LayoutError::Format(format!(
                "display order {display_order:?} is not a permutation of 0..8"
            )));
        }
        Ok(Self {
            graph_id,
            layouts: out,
            display_order,
        })
    }

    pub fn get(&self, algorithm: Algorithm) -> &Layout {
        &self.layouts[algorithm.index()]
    }

    /// Algorithm shown at a 0-based display position.
    pub fn at_position(&self, position: usize) -> Algorithm {
        Algorithm::ALL[self.display_order[position]]
    }

    /// 0-based display position of an algorithm.
    pub fn position_of(&self, algorithm: Algorithm) -> usize {
        self.display_order
            .iter()
            .position(|&a| a == algorithm.index())
            .expect("display order is a permutation")
    }
}

pub fn is_permutation(order: &[usize; 8]) -> bool {
    let mut seen = [false; 8];
    for &i in order {
        if i >= 8 || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Seeded uniform permutation of the eight display positions.
pub fn display_permutation(seed: u64) -> [usize; 8] {
    let mut order = [0, 1, 2, 3, 4, 5, 6, 7];
    order.shuffle(&mut rng::stream(seed, Domain::DisplayOrder, 0));
    order
}

pub fn layout_all(g: &Graph, seed: u64) -> Result<LayoutSet> {
    layout_all_with(g, &LayoutParams::default(), seed)
}

/// Runs all eight algorithms on scoped threads and assembles them in
/// canonical order.
pub fn layout_all_with(g: &Graph, params: &LayoutParams, seed: u64) -> Result<LayoutSet> {
    let results: Vec<Result<Layout>> = std::thread::scope(|s| {
        let handles: Vec<_> = Algorithm::ALL
            .iter()
            .map(|&alg| s.spawn(move || layout(g, alg, params, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("layout thread panicked"))
            .collect()
    });
    let layouts = results.into_iter().collect::<Result<Vec<_>>>()?;
    LayoutSet::new(g.id(), layouts, display_permutation(seed))
}

/// Translates and uniformly scales into the unit square: the longer
/// bounding-box side spans exactly `[0, 1]` and the shorter one is centered.
pub fn normalize(l: &Layout) -> Result<Layout> {
    let (mut min, mut max) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &l.coords {
        for a in 0..2 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let extent = [max[0] - min[0], max[1] - min[1]];
    let span = extent[0].max(extent[1]);
    if !(span > 0.0) || !span.is_finite() {
        return Err(LayoutError::Degenerate);
    }
    let offset = [(span - extent[0]) / (2.0 * span), (span - extent[1]) / (2.0 * span)];
    let coords = l
        .coords
        .iter()
        .map(|p| {
            let mut q = [0.0; 2];
            for a in 0..2 {
                q[a] = ((p[a] - min[a]) / span + offset[a]).clamp(0.0, 1.0);
            }
            q
        })
        .collect();
    Ok(Layout {
        coords,
        ..l.clone()
    })
}

/// [`normalize`], except that layouts with every point coincident (such as
/// a single node) are placed at the center of the unit square.
pub fn normalize_or_center(l: &Layout) -> Layout {
    normalize(l).unwrap_or_else(|_| Layout {
        coords: vec![[0.5, 0.5]; l.coords.len()],
        ..l.clone()
    })
}

/// Layout interchange text: a `graph_id algorithm n` header, then `n` lines
/// of `x y` with 17 significant digits.
pub fn write_layout(l: &Layout) -> String {
    let mut out = format!("{} {} {}\n", l.graph_id, l.algorithm, l.coords.len());
    for p in &l.coords {
        out.push_str(&format!("{:.16e} {:.16e}\n", p[0], p[1]));
    }
    out
}

pub fn read_layout(text: &str) -> Result<Layout> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| LayoutError::Format("missing header".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let [graph_id, algorithm, n] = parts.as_slice() else {
        return Err(LayoutError::Format(format!("bad header {header:?}")));
    };
    let algorithm: Algorithm = algorithm.parse()?;
    let n: usize = n
        .parse()
        .map_err(|_| LayoutError::Format(format!("bad node count {n:?}")))?;
    let mut coords = Vec::with_capacity(n);
    for line in lines {
        let xy: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| LayoutError::Format(format!("{line:?}: {e}")))?;
        let [x, y] = xy.as_slice() else {
            return Err(LayoutError::Format(format!("expected `x y`, got {line:?}")));
        };
        if !x.is_finite() || !y.is_finite() {
            return Err(LayoutError::Format(format!("non-finite coordinate in {line:?}")));
        }
        coords.push([*x, *y]);
    }
    if coords.len() != n {
        return Err(LayoutError::Format(format!(
            "header declares {n} nodes, found {}",
            coords.len()
        )));
    }
    Ok(Layout {
        graph_id: graph_id.to_string(),
        algorithm,
        coords,
        converged: true,
    })
}

pub(crate) fn pair_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;

    fn pairwise(coords: &[[f64; 2]]) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..coords.len() {
            for j in i + 1..coords.len() {
                out.push(pair_dist(coords[i], coords[j]));
            }
        }
        out
    }

    #[test]
    fn normalize_two_points() {
        let l = Layout {
            graph_id: "g".into(),
            algorithm: Algorithm::Spring,
            coords: vec![[0.0, 0.0], [2.0, 0.0]],
            converged: true,
        };
        let n = normalize(&l).unwrap();
        assert_eq!(n.coords, vec![[0.0, 0.5], [1.0, 0.5]]);
    }

    #[test]
    fn normalize_rejects_coincident_points() {
        let l = Layout {
            graph_id: "g".into(),
            algorithm: Algorithm::Spring,
            coords: vec![[1.0, 1.0], [1.0, 1.0]],
            converged: true,
        };
        assert!(matches!(normalize(&l), Err(LayoutError::Degenerate)));
    }

    #[test]
    fn normalize_is_idempotent_and_preserves_ratios() {
        let g = cycle(7);
        let l = layout(&g, Algorithm::Fdp, &LayoutParams::default(), 3).unwrap();
        let n1 = normalize(&l).unwrap();
        let n2 = normalize(&n1).unwrap();
        for (a, b) in n1.coords.iter().zip(&n2.coords) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        let before = pairwise(&l.coords);
        let after = pairwise(&n1.coords);
        let r0 = after[0] / before[0];
        for (a, b) in before.iter().zip(&after) {
            assert!((b / a - r0).abs() < 1e-12);
        }
        for p in &n1.coords {
            assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
        }
    }

    #[test]
    fn layout_all_gives_eight_distinct_algorithms() {
        let g = barbell(4, 2);
        let set = layout_all(&g, 9).unwrap();
        assert_eq!(set.layouts.len(), 8);
        for (i, l) in set.layouts.iter().enumerate() {
            assert_eq!(l.algorithm.index(), i);
            assert_eq!(l.coords.len(), g.node_count());
            assert!(l.coords.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
        }
        assert!(is_permutation(&set.display_order));
        let again = layout_all(&g, 9).unwrap();
        assert_eq!(again.display_order, set.display_order);
        for (a, b) in set.layouts.iter().zip(&again.layouts) {
            assert_eq!(a.coords, b.coords, "{} not bit-identical", a.algorithm);
        }
    }

    #[test]
    fn distance_based_algorithms_reject_disconnected() {
        let g = Graph::new("split", 4, &[(0, 1), (2, 3)]).unwrap();
        for alg in Algorithm::ALL {
            let res = layout(&g, alg, &LayoutParams::default(), 1);
            assert_eq!(res.is_err(), alg.needs_connected(), "{alg}");
        }
    }

    #[test]
    fn display_positions_are_uniform() {
        // 10,000 seeded draws; each algorithm should land in each slot
        // with frequency 1/8 +- 0.01, and a chi-square test over the 64
        // cells should not reject uniformity.
        let draws = 10_000;
        let mut counts = [[0usize; 8]; 8];
        for seed in 0..draws {
            let order = display_permutation(seed as u64);
            for (pos, &alg) in order.iter().enumerate() {
                counts[pos][alg] += 1;
            }
        }
        let expected = draws as f64 / 8.0;
        let mut chi2 = 0.0;
        for row in &counts {
            for &c in row {
                let freq = c as f64 / draws as f64;
                assert!((freq - 0.125).abs() <= 0.01, "freq {freq}");
                chi2 += (c as f64 - expected).powi(2) / expected;
            }
        }
        // 49 degrees of freedom; 99.9th percentile is about 85.4.
        assert!(chi2 < 85.4, "chi2 = {chi2}");
    }

    #[test]
    fn layout_file_round_trip_is_exact() {
        let g = cycle(5);
        let l = layout(&g, Algorithm::Neato, &LayoutParams::default(), 4).unwrap();
        let back = read_layout(&write_layout(&l)).unwrap();
        assert_eq!(back.coords, l.coords);
        assert_eq!(back.algorithm, Algorithm::Neato);
        assert!(read_layout("g neato 2\n0 0\n").is_err());
        assert!(read_layout("g bogus 1\n0 0\n").is_err());
    }

    #[test]
    fn algorithm_tags_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.tag().parse::<Algorithm>().unwrap(), a);
            assert_eq!(Algorithm::from_index(a.index()), Some(a));
        }
        assert_eq!(serde_json::to_string(&Algorithm::KamadaKawai).unwrap(), "\"kamada_kawai\"");
    }

    #[test]
    fn spectral_layout_on_c4_is_a_square() {
        let l = layout(&cycle(4), Algorithm::Spectral, &LayoutParams::default(), 0).unwrap();
        let mut d = pairwise(&l.coords);
        d.sort_by(f64::total_cmp);
        let s = d[0];
        for x in &d[..4] {
            assert!((x - s).abs() < 1e-6);
        }
        for x in &d[4..] {
            assert!((x - s * 2f64.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn spectral_layout_matches_embedding_columns() {
        let g = barbell(4, 3);
        let l = layout(&g, Algorithm::Spectral, &LayoutParams::default(), 0).unwrap();
        let emb = embed::spectral_embedding(&g, 2).unwrap();
        for (p, row) in l.coords.iter().zip(&emb.vectors) {
            assert_eq!(p[0], row[0]);
            assert_eq!(p[1], row[1]);
        }
    }
}
