//! Distance-fitting layouts: stress majorization (neato) and Kamada-Kawai.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{pair_dist, LayoutParams};
use crate::graph::Graph;
use crate::rng::StreamRng;

#[derive(Debug, Clone)]
pub struct StressTrace {
    pub coords: Vec<[f64; 2]>,
    pub converged: bool,
    /// Objective value at the initial layout and after every iteration.
    pub energy: Vec<f64>,
}

fn distances(g: &Graph) -> Vec<f64> {
    g.distance_matrix().expect("caller checked connectivity")
}

/// `sum_{i<j} d_ij^-2 (|p_i - p_j| - d_ij)^2` with BFS distances `d_ij`.
pub fn weighted_stress(g: &Graph, coords: &[[f64; 2]]) -> f64 {
    stress_with(&distances(g), coords)
}

fn stress_with(d: &[f64], coords: &[[f64; 2]]) -> f64 {
    let n = coords.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dij = d[i * n + j];
            let r = pair_dist(coords[i], coords[j]) - dij;
            s += r * r / (dij * dij);
        }
    }
    s
}

/// Kamada-Kawai energy `1/2 sum_{i<j} k_ij (|p_i - p_j| - l_ij)^2` with
/// `l_ij = d_ij` and `k_ij = d_ij^-2`.
pub fn kamada_kawai_energy(g: &Graph, coords: &[[f64; 2]]) -> f64 {
    0.5 * weighted_stress(g, coords)
}

pub(super) fn stress_majorization(g: &Graph, params: &LayoutParams, rng: &mut StreamRng) -> StressTrace {
    let n = g.node_count();
    let d = distances(g);
    let diameter = d.iter().copied().fold(0.0, f64::max);

    // L_w + J/n is positive definite for a connected graph, and the Guttman
    // transform solves against it once per iteration.
    let mut m = DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let w = 1.0 / (d[i * n + j] * d[i * n + j]);
                m[(i, j)] -= w;
                m[(i, i)] += w;
            }
        }
    }
    let chol = m.cholesky().expect("weighted Laplacian plus J/n is positive definite");

    let mut coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random::<f64>() * diameter, rng.random::<f64>() * diameter])
        .collect();
    let mut energy = vec![stress_with(&d, &coords)];
    let mut converged = false;

    for _ in 0..params.max_iter_stress {
        let mut bz = [DVector::<f64>::zeros(n), DVector::<f64>::zeros(n)];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dist = pair_dist(coords[i], coords[j]);
                if dist <= 0.0 {
                    continue;
                }
                let dij = d[i * n + j];
                let b = dij / (dij * dij * dist);
                for a in 0..2 {
                    bz[a][i] += b * (coords[i][a] - coords[j][a]);
                }
            }
        }
        let xs = [chol.solve(&bz[0]), chol.solve(&bz[1])];
        let next: Vec<[f64; 2]> = (0..n).map(|i| [xs[0][i], xs[1][i]]).collect();
        let s_old = *energy.last().expect("nonempty");
        let s_new = stress_with(&d, &next);
        debug_assert!(
            s_new <= s_old * (1.0 + 1e-12) + 1e-15,
            "stress increased from {s_old} to {s_new}"
        );
        coords = next;
        energy.push(s_new);
        if s_old <= 0.0 || (s_old - s_new) / s_old < params.tolerance {
            converged = true;
            break;
        }
    }
    StressTrace {
        coords,
        converged,
        energy,
    }
}

/// Per-node gradient and Hessian of the Kamada-Kawai energy.
fn kk_local(d: &[f64], coords: &[[f64; 2]], m: usize) -> ([f64; 2], [f64; 3]) {
    let n = coords.len();
    let (mut gx, mut gy, mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        if i == m {
            continue;
        }
        let l = d[m * n + i];
        let k = 1.0 / (l * l);
        let dx = coords[m][0] - coords[i][0];
        let dy = coords[m][1] - coords[i][1];
        let dist = dx.hypot(dy).max(1e-12);
        let dist3 = dist * dist * dist;
        gx += k * (dx - l * dx / dist);
        gy += k * (dy - l * dy / dist);
        hxx += k * (1.0 - l * dy * dy / dist3);
        hxy += k * l * dx * dy / dist3;
        hyy += k * (1.0 - l * dx * dx / dist3);
    }
    ([gx, gy], [hxx, hxy, hyy])
}

fn kk_node_energy(d: &[f64], coords: &[[f64; 2]], m: usize, p: [f64; 2]) -> f64 {
    let n = coords.len();
    (0..n)
        .filter(|&i| i != m)
        .map(|i| {
            let l = d[m * n + i];
            let r = pair_dist(p, coords[i]) - l;
            0.5 * r * r / (l * l)
        })
        .sum()
}

/// Classic Kamada-Kawai: repeatedly moves the node with the largest energy
/// gradient by Newton-Raphson steps. The iteration cap counts sweeps of `n`
/// node selections. Every accepted move lowers the energy: a Newton step
/// that would not is replaced by the majorizing step `-grad / sum_i k_mi`.
pub(super) fn kamada_kawai(g: &Graph, params: &LayoutParams) -> StressTrace {
    const GRAD_TOL: f64 = 1e-6;
    const INNER_STEPS: usize = 50;

    let n = g.node_count();
    let d = distances(g);
    let radius = d.iter().copied().fold(0.0, f64::max) / 2.0;
    let mut coords: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect();
    let stiffness: Vec<f64> = (0..n)
        .map(|m| {
            (0..n)
                .filter(|&i| i != m)
                .map(|i| 1.0 / (d[m * n + i] * d[m * n + i]))
                .sum()
        })
        .collect();

    let mut energy = vec![0.5 * stress_with(&d, &coords)];
    let mut converged = false;
    'sweeps: for _ in 0..params.max_iter_stress {
        for _ in 0..n {
            let (m, grad_norm) = (0..n)
                .map(|m| {
                    let (g, _) = kk_local(&d, &coords, m);
                    (m, g[0].hypot(g[1]))
                })
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
            if grad_norm < GRAD_TOL {
                converged = true;
                break 'sweeps;
            }
            for _ in 0..INNER_STEPS {
                let (grad, h) = kk_local(&d, &coords, m);
                if grad[0].hypot(grad[1]) < GRAD_TOL {
                    break;
                }
                let current = kk_node_energy(&d, &coords, m, coords[m]);
                let det = h[0] * h[2] - h[1] * h[1];
                let mut accepted = false;
                if det > 0.0 && h[0] > 0.0 {
                    let dx = -(h[2] * grad[0] - h[1] * grad[1]) / det;
                    let dy = -(h[0] * grad[1] - h[1] * grad[0]) / det;
                    let p = [coords[m][0] + dx, coords[m][1] + dy];
                    if kk_node_energy(&d, &coords, m, p) <= current {
                        coords[m] = p;
                        accepted = true;
                    }
                }
                if !accepted {
                    let s = stiffness[m];
                    coords[m] = [coords[m][0] - grad[0] / s, coords[m][1] - grad[1] / s];
                }
            }
        }
        energy.push(0.5 * stress_with(&d, &coords));
    }
    StressTrace {
        coords,
        converged,
        energy,
    }
}

/// Largest per-node gradient norm of the Kamada-Kawai energy.
#[cfg(test)]
fn kk_max_gradient(g: &Graph, coords: &[[f64; 2]]) -> f64 {
    let d = distances(g);
    (0..coords.len())
        .map(|m| {
            let (gr, _) = kk_local(&d, coords, m);
            gr[0].hypot(gr[1])
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::layout::{layout, Algorithm};
    use crate::rng::{stream, Domain};

    #[test]
    fn kk_triangle_is_equilateral() {
        let l = layout(&complete(3), Algorithm::KamadaKawai, &LayoutParams::default(), 0).unwrap();
        let d = [
            pair_dist(l.coords[0], l.coords[1]),
            pair_dist(l.coords[0], l.coords[2]),
            pair_dist(l.coords[1], l.coords[2]),
        ];
        let max = d.iter().copied().fold(f64::MIN, f64::max);
        let min = d.iter().copied().fold(f64::MAX, f64::min);
        assert!((max - min) / max < 1e-3, "{d:?}");
        assert!(kamada_kawai_energy(&complete(3), &l.coords) < 1e-9);
        assert!(l.converged);
    }

    #[test]
    fn kk_reaches_gradient_tolerance() {
        for g in [path(6), cycle(9), barbell(4, 2)] {
            let t = kamada_kawai(&g, &LayoutParams::default());
            assert!(t.converged);
            assert!(kk_max_gradient(&g, &t.coords) < 1e-6);
            for w in t.energy.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn kk_cap_sets_warning_flag() {
        let params = LayoutParams {
            max_iter_stress: 1,
            ..LayoutParams::default()
        };
        let t = kamada_kawai(&barbell(5, 3), &params);
        assert!(!t.converged);
    }

    #[test]
    fn majorization_never_increases_stress() {
        for (i, g) in [cycle(12), barbell(5, 4), path(9)].iter().enumerate() {
            let mut rng = stream(i as u64, Domain::Layout, 0);
            let t = stress_majorization(g, &LayoutParams::default(), &mut rng);
            for w in t.energy.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
            }
            assert_eq!(*t.energy.last().unwrap(), weighted_stress(g, &t.coords));
        }
    }

    #[test]
    fn majorization_lays_a_path_out_straight() {
        let g = path(5);
        let mut rng = stream(1, Domain::Layout, 0);
        let t = stress_majorization(&g, &LayoutParams::default(), &mut rng);
        assert!(*t.energy.last().unwrap() < 1e-3);
    }
}
