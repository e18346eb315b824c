//! Force-directed layouts: Fruchterman-Reingold (`spring`), the grid-cutoff
//! variant (`fdp`), ForceAtlas2-style degree-weighted repulsion (`fa2`), and
//! a multilevel scheme (`sfdp`).
//!
//! All four share one annealing loop: at iteration `i` of `T` the
//! temperature is `t0 * (1 - i / T)` and every node moves `t` along its net
//! force, or proportionally less once the force drops below a floor. The loop
//! stops early when every force is below the floor.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{pair_dist, LayoutParams};
use crate::graph::Graph;
use crate::rng::StreamRng;

#[derive(Debug, Clone)]
pub struct ForceTrace {
    pub coords: Vec<[f64; 2]>,
    pub converged: bool,
    /// Largest node displacement in each iteration.
    pub max_displacement: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Repulsion {
    /// `k^2 / d` between all pairs, or only pairs closer than the cutoff.
    Fr { cutoff: Option<f64> },
    /// `kr (deg_i + 1)(deg_j + 1) / d`.
    Degree { kr: f64 },
}

#[derive(Debug, Clone, Copy)]
enum Attraction {
    /// `w d^2 / k` along each edge.
    Fr,
    /// `d` along each edge.
    Linear,
}

struct ForceModel<'a> {
    edges: &'a [(usize, usize, f64)],
    k: f64,
    repulsion: Repulsion,
    attraction: Attraction,
    /// Pull toward the origin of strength `kg (deg + 1)`.
    gravity: Option<f64>,
    degrees: Vec<f64>,
    iterations: usize,
    t0: f64,
    floor: f64,
}

impl ForceModel<'_> {
    fn forces(&self, coords: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let n = coords.len();
        let mut f = vec![[0.0; 2]; n];
        match self.repulsion {
            Repulsion::Fr { cutoff: None } => {
                for i in 0..n {
                    for j in i + 1..n {
                        self.repel(coords, &mut f, i, j, self.k * self.k);
                    }
                }
            }
            Repulsion::Fr { cutoff: Some(c) } => {
                let cell = |p: [f64; 2]| ((p[0] / c).floor() as i64, (p[1] / c).floor() as i64);
                let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
                for (i, &p) in coords.iter().enumerate() {
                    grid.entry(cell(p)).or_default().push(i);
                }
                for i in 0..n {
                    let (cx, cy) = cell(coords[i]);
                    for gx in cx - 1..=cx + 1 {
                        for gy in cy - 1..=cy + 1 {
                            let Some(bucket) = grid.get(&(gx, gy)) else { continue };
                            for &j in bucket {
                                if j > i && pair_dist(coords[i], coords[j]) < c {
                                    self.repel(coords, &mut f, i, j, self.k * self.k);
                                }
                            }
                        }
                    }
                }
            }
            Repulsion::Degree { kr } => {
                for i in 0..n {
                    for j in i + 1..n {
                        let s = kr * (self.degrees[i] + 1.0) * (self.degrees[j] + 1.0);
                        self.repel(coords, &mut f, i, j, s);
                    }
                }
            }
        }
        for &(u, v, w) in self.edges {
            let dx = coords[u][0] - coords[v][0];
            let dy = coords[u][1] - coords[v][1];
            let d = dx.hypot(dy);
            // Force magnitude divided by d, applied to the offset vector.
            let s = match self.attraction {
                Attraction::Fr => w * d / self.k,
                Attraction::Linear => w,
            };
            f[u][0] -= s * dx;
            f[u][1] -= s * dy;
            f[v][0] += s * dx;
            f[v][1] += s * dy;
        }
        if let Some(kg) = self.gravity {
            for i in 0..n {
                let d = coords[i][0].hypot(coords[i][1]);
                if d > 0.0 {
                    let s = kg * (self.degrees[i] + 1.0) / d;
                    f[i][0] -= s * coords[i][0];
                    f[i][1] -= s * coords[i][1];
                }
            }
        }
        f
    }

    /// Adds a repulsive force of magnitude `strength / d` between i and j.
    fn repel(&self, coords: &[[f64; 2]], f: &mut [[f64; 2]], i: usize, j: usize, strength: f64) {
        let mut dx = coords[i][0] - coords[j][0];
        let mut dy = coords[i][1] - coords[j][1];
        let mut d2 = dx * dx + dy * dy;
        if d2 < 1e-18 {
            // Coincident nodes: push apart along a fixed index-dependent axis.
            let a = (i * 31 + j * 17) as f64;
            dx = 1e-9 * a.cos();
            dy = 1e-9 * a.sin();
            d2 = dx * dx + dy * dy;
        }
        let s = strength / d2;
        f[i][0] += s * dx;
        f[i][1] += s * dy;
        f[j][0] -= s * dx;
        f[j][1] -= s * dy;
    }

    fn run(&self, mut coords: Vec<[f64; 2]>) -> ForceTrace {
        let mut max_displacement = Vec::with_capacity(self.iterations);
        for it in 0..self.iterations {
            let t = self.t0 * (1.0 - it as f64 / self.iterations as f64);
            let f = self.forces(&coords);
            let norms: Vec<f64> = f.iter().map(|v| v[0].hypot(v[1])).collect();
            if norms.iter().all(|&m| m < self.floor) {
                break;
            }
            let mut step_max: f64 = 0.0;
            for ((p, v), &m) in coords.iter_mut().zip(&f).zip(&norms) {
                let s = t / m.max(self.floor);
                p[0] += s * v[0];
                p[1] += s * v[1];
                step_max = step_max.max(s * m);
            }
            max_displacement.push(step_max);
        }
        // The annealing schedule is the stopping rule: when it runs out the
        // layout is final even if residual forces remain.
        ForceTrace {
            coords,
            converged: true,
            max_displacement,
        }
    }
}

fn unit_edges(g: &Graph) -> Vec<(usize, usize, f64)> {
    g.edges().iter().map(|&(u, v)| (u, v, 1.0)).collect()
}

fn degrees(g: &Graph) -> Vec<f64> {
    (0..g.node_count()).map(|v| g.degree(v) as f64).collect()
}

fn random_square(n: usize, side: f64, rng: &mut StreamRng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
        .collect()
}

pub(super) fn spring(g: &Graph, params: &LayoutParams, rng: &mut StreamRng) -> ForceTrace {
    let n = g.node_count();
    let k = params.spring_k.unwrap_or(1.0 / (n as f64).sqrt());
    let edges = unit_edges(g);
    let model = ForceModel {
        edges: &edges,
        k,
        repulsion: Repulsion::Fr { cutoff: None },
        attraction: Attraction::Fr,
        gravity: None,
        degrees: degrees(g),
        iterations: params.max_iter_force,
        t0: 0.1,
        floor: 1e-3 * k,
    };
    model.run(random_square(n, 1.0, rng))
}

pub(super) fn fdp(g: &Graph, params: &LayoutParams, rng: &mut StreamRng) -> ForceTrace {
    const K: f64 = 0.3;
    let n = g.node_count();
    let side = K * (n as f64).sqrt();
    let edges = unit_edges(g);
    let model = ForceModel {
        edges: &edges,
        k: K,
        repulsion: Repulsion::Fr { cutoff: Some(2.0 * K) },
        attraction: Attraction::Fr,
        gravity: None,
        degrees: degrees(g),
        iterations: params.max_iter_force,
        t0: side / 5.0,
        floor: 1e-3 * K,
    };
    model.run(random_square(n, side, rng))
}

pub(super) fn fa2(g: &Graph, params: &LayoutParams, rng: &mut StreamRng) -> ForceTrace {
    let n = g.node_count();
    let deg = degrees(g);
    let mean_deg = deg.iter().sum::<f64>() / n as f64;
    let side = (n as f64).sqrt() * (mean_deg + 1.0);
    let edges = unit_edges(g);
    let model = ForceModel {
        edges: &edges,
        k: 1.0,
        repulsion: Repulsion::Degree { kr: 2.0 },
        attraction: Attraction::Linear,
        gravity: Some(1.0),
        degrees: deg,
        iterations: params.max_iter_force,
        t0: side / 10.0,
        floor: 1e-3,
    };
    let init = random_square(n, side, rng)
        .into_iter()
        .map(|p| [p[0] - side / 2.0, p[1] - side / 2.0])
        .collect();
    model.run(init)
}

/// One level of the multilevel hierarchy.
struct Level {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    /// Fine node -> coarse node of the next level; empty on the coarsest.
    parent: Vec<usize>,
}

/// Heavy-edge matching: visits nodes in random order and pairs each
/// unmatched node with its unmatched neighbour of largest edge weight.
fn coarsen(n: usize, edges: &[(usize, usize, f64)], rng: &mut StreamRng) -> (usize, Vec<usize>, Vec<(usize, usize, f64)>) {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(u, v, w) in edges {
        adj[u].push((v, w));
        adj[v].push((u, w));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut parent = vec![usize::MAX; n];
    let mut next = 0;
    for &u in &order {
        if parent[u] != usize::MAX {
            continue;
        }
        let partner = adj[u]
            .iter()
            .filter(|&&(v, _)| parent[v] == usize::MAX && v != u)
            .fold(None, |best: Option<(usize, f64)>, &(v, w)| match best {
                Some((bv, bw)) if bw > w || (bw == w && bv < v) => Some((bv, bw)),
                _ => Some((v, w)),
            });
        parent[u] = next;
        if let Some((v, _)) = partner {
            parent[v] = next;
        }
        next += 1;
    }
    let mut merged: HashMap<(usize, usize), f64> = HashMap::new();
    for &(u, v, w) in edges {
        let (a, b) = (parent[u], parent[v]);
        if a != b {
            *merged.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
    }
    let mut coarse: Vec<(usize, usize, f64)> = merged.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    coarse.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    (next, parent, coarse)
}

fn hierarchy(g: &Graph, threshold: usize, rng: &mut StreamRng) -> Vec<Level> {
    let mut levels = vec![Level {
        n: g.node_count(),
        edges: unit_edges(g),
        parent: Vec::new(),
    }];
    loop {
        let last = levels.last().expect("nonempty");
        if last.n <= threshold.max(1) {
            break;
        }
        let (n, parent, edges) = coarsen(last.n, &last.edges, rng);
        if n >= last.n {
            break;
        }
        levels.last_mut().expect("nonempty").parent = parent;
        levels.push(Level {
            n,
            edges,
            parent: Vec::new(),
        });
    }
    levels
}

/// Node counts of each level of the sfdp hierarchy, finest first.
pub fn coarsen_levels(g: &Graph, threshold: usize, rng: &mut StreamRng) -> Vec<usize> {
    hierarchy(g, threshold, rng).iter().map(|l| l.n).collect()
}

pub(super) fn sfdp(g: &Graph, params: &LayoutParams, rng: &mut StreamRng) -> ForceTrace {
    const K: f64 = 1.0;
    let levels = hierarchy(g, params.coarsen_threshold, rng);
    let coarsest = levels.last().expect("nonempty");
    let side = (coarsest.n as f64).sqrt() * K;
    let run_level = |level: &Level, init: Vec<[f64; 2]>, iterations: usize, t0: f64| {
        let deg = vec![0.0; level.n];
        ForceModel {
            edges: &level.edges,
            k: K,
            repulsion: Repulsion::Fr { cutoff: None },
            attraction: Attraction::Fr,
            gravity: None,
            degrees: deg,
            iterations,
            t0,
            floor: 1e-3 * K,
        }
        .run(init)
    };
    let mut trace = run_level(coarsest, random_square(coarsest.n, side, rng), params.max_iter_force, side / 5.0);
    let mut displacement = trace.max_displacement;
    let refine_iters = (params.max_iter_force / 4).max(1);
    for li in (0..levels.len() - 1).rev() {
        let fine = &levels[li];
        let coarse_n = levels[li + 1].n;
        let scale = (fine.n as f64 / coarse_n as f64).sqrt();
        let init: Vec<[f64; 2]> = (0..fine.n)
            .map(|v| {
                let p = trace.coords[fine.parent[v]];
                [
                    p[0] * scale + (rng.random::<f64>() - 0.5) * 0.1 * K,
                    p[1] * scale + (rng.random::<f64>() - 0.5) * 0.1 * K,
                ]
            })
            .collect();
        trace = run_level(fine, init, refine_iters, K);
        displacement.extend_from_slice(&trace.max_displacement);
    }
    ForceTrace {
        coords: trace.coords,
        converged: true,
        max_displacement: displacement,
    }
}
