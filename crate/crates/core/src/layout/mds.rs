//! Pivot MDS and classical MDS.

use rand::Rng;

use crate::graph::Graph;
use crate::linalg::symmetric_eigen;
use crate::rng::StreamRng;

/// Classical (Torgerson) MDS of a full `n x n` distance matrix: the top two
/// eigenvectors of the double-centered squared distances, scaled by the
/// square roots of their eigenvalues.
pub fn classical_mds(dist: &[f64], n: usize) -> Vec<[f64; 2]> {
    let sq: Vec<f64> = dist.iter().map(|d| d * d).collect();
    let b = double_center(&sq, n, n);
    let eig = symmetric_eigen(&b, n);
    let mut coords = vec![[0.0; 2]; n];
    for a in 0..2.min(n) {
        let idx = n - 1 - a;
        let s = eig.values[idx].max(0.0).sqrt();
        for (i, c) in coords.iter_mut().enumerate() {
            c[a] = eig.vectors[idx][i] * s;
        }
    }
    coords
}

/// `-1/2 (x_ij - rowmean_i - colmean_j + mean)` for a row-major `rows x cols`.
fn double_center(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let row_mean: Vec<f64> = (0..rows)
        .map(|i| x[i * cols..(i + 1) * cols].iter().sum::<f64>() / cols as f64)
        .collect();
    let col_mean: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|i| x[i * cols + j]).sum::<f64>() / rows as f64)
        .collect();
    let mean = row_mean.iter().sum::<f64>() / rows as f64;
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = -0.5 * (x[i * cols + j] - row_mean[i] - col_mean[j] + mean);
        }
    }
    out
}

/// Max-min pivot selection: a random first pivot, then repeatedly the node
/// farthest from all pivots chosen so far (lowest index on ties).
fn choose_pivots(dist: &[f64], n: usize, k: usize, rng: &mut StreamRng) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut pivots = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|v| dist[pivots[0] * n + v]).collect();
    while pivots.len() < k {
        let (next, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (v, &d)| if d > best.1 { (v, d) } else { best });
        pivots.push(next);
        for v in 0..n {
            nearest[v] = nearest[v].min(dist[next * n + v]);
        }
    }
    pivots
}

/// Top-2 eigenpairs of a symmetric `k x k` matrix by orthogonal iteration
/// with a final Rayleigh-Ritz rotation. Returns `(values, vectors, converged)`.
fn top_two(m: &[f64], k: usize, rng: &mut StreamRng) -> ([f64; 2], [Vec<f64>; 2], bool) {
    const MAX_ITER: usize = 20_000;
    let matvec = |v: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|i| m[i * k..(i + 1) * k].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let orthonormalize = |mut a: Vec<f64>, mut b: Vec<f64>| {
        let na = dot(&a, &a).sqrt();
        a.iter_mut().for_each(|x| *x /= na);
        // Two Gram-Schmidt passes keep b orthogonal to a even when b is
        // nearly parallel to it, as happens for rank-one distance matrices.
        for _ in 0..2 {
            let p = dot(&a, &b);
            b.iter_mut().zip(&a).for_each(|(x, y)| *x -= p * y);
        }
        let nb = dot(&b, &b).sqrt();
        b.iter_mut().for_each(|x| *x /= nb);
        (a, b)
    };
    let norm: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let init = |rng: &mut StreamRng| (0..k).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<f64>>();
    let (mut v0, mut v1) = orthonormalize(init(rng), init(rng));
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let (w0, w1) = (matvec(&v0), matvec(&v1));
        // Residual of the current basis against its own Rayleigh quotient.
        let h = [dot(&v0, &w0), dot(&v0, &w1), dot(&v1, &w1)];
        let res: f64 = (0..k)
            .map(|i| {
                let r0 = w0[i] - h[0] * v0[i] - h[1] * v1[i];
                let r1 = w1[i] - h[1] * v0[i] - h[2] * v1[i];
                r0 * r0 + r1 * r1
            })
            .sum::<f64>()
            .sqrt();
        if res <= 1e-13 * norm.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        (v0, v1) = orthonormalize(w0, w1);
    }
    // Rotate the converged basis onto the eigenvectors of the 2x2 projection.
    let (w0, w1) = (matvec(&v0), matvec(&v1));
    let (a, b, c) = (dot(&v0, &w0), dot(&v0, &w1), dot(&v1, &w1));
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = theta.sin_cos();
    let e0: Vec<f64> = v0.iter().zip(&v1).map(|(x, y)| co * x + s * y).collect();
    let e1: Vec<f64> = v0.iter().zip(&v1).map(|(x, y)| -s * x + co * y).collect();
    let l0 = dot(&e0, &matvec(&e0));
    let l1 = dot(&e1, &matvec(&e1));
    if l0 >= l1 {
        ([l0, l1], [e0, e1], converged)
    } else {
        ([l1, l0], [e1, e0], converged)
    }
}

/// Pivot MDS: with `C` the double-centered squared distances from every node
/// to `k` pivots, the coordinates are `C v_a / mu_a^(1/4)` for the top two
/// eigenpairs `(mu_a, v_a)` of `C^T C`. With all nodes as pivots this is
/// classical MDS.
pub(super) fn pivot_mds(g: &Graph, pivots: usize, rng: &mut StreamRng) -> (Vec<[f64; 2]>, bool) {
    let n = g.node_count();
    let dist = g.distance_matrix().expect("caller checked connectivity");
    let k = pivots.clamp(1, n);
    let chosen = choose_pivots(&dist, n, k, rng);
    let mut sq = vec![0.0; n * k];
    for i in 0..n {
        for (j, &p) in chosen.iter().enumerate() {
            let d = dist[i * n + p];
            sq[i * k + j] = d * d;
        }
    }
    let c = double_center(&sq, n, k);
    let mut ctc = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let s: f64 = (0..n).map(|i| c[i * k + a] * c[i * k + b]).sum();
            ctc[a * k + b] = s;
            ctc[b * k + a] = s;
        }
    }
    let (mu, vecs, converged) = if k == 1 {
        ([ctc[0], 0.0], [vec![1.0], vec![0.0]], true)
    } else {
        top_two(&ctc, k, rng)
    };
    let mut coords = vec![[0.0; 2]; n];
    for a in 0..2 {
        let scale = if mu[a] > mu[0] * 1e-24 && mu[a] > 0.0 {
            mu[a].powf(-0.25)
        } else {
            0.0
        };
        for (i, p) in coords.iter_mut().enumerate() {
            let cv: f64 = (0..k).map(|j| c[i * k + j] * vecs[a][j]).sum();
            p[a] = cv * scale;
        }
    }
    (coords, converged)
}
