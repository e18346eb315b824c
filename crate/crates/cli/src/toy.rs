//! Small named graphs bundled for the demo.

use layoutpref::graph::Graph;

fn build(id: &str, n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::new(id, n, edges).expect("toy graphs are well formed")
}

fn path_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n - 1).map(|v| (v, v + 1)).collect()
}

fn cycle_edges(n: usize) -> Vec<(usize, usize)> {
    let mut e = path_edges(n);
    e.push((0, n - 1));
    e
}

fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                e.push((v, v + 1));
            }
            if r + 1 < rows {
                e.push((v, v + cols));
            }
        }
    }
    e
}

fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect()
}

fn tree_edges(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|v| ((v - 1) / 2, v)).collect()
}

fn prism_edges(k: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for i in 0..k {
        e.push((i, (i + 1) % k));
        e.push((k + i, k + (i + 1) % k));
        e.push((i, k + i));
    }
    e
}

/// Twenty connected graphs of 5 to 16 nodes.
pub fn toy_graphs() -> Vec<Graph> {
    let mut gs = Vec::new();
    gs.push(build("toy-path7", 7, &path_edges(7)));
    gs.push(build("toy-cycle8", 8, &cycle_edges(8)));
    gs.push(build("toy-star7", 7, &(1..7).map(|v| (0, v)).collect::<Vec<_>>()));
    gs.push(build("toy-k5", 5, &complete_edges(5)));
    gs.push(build("toy-grid3x3", 9, &grid_edges(3, 3)));
    gs.push(build("toy-grid2x5", 10, &grid_edges(2, 5)));
    gs.push(build("toy-tree7", 7, &tree_edges(7)));
    gs.push(build("toy-tree15", 15, &tree_edges(15)));
    let mut wheel: Vec<(usize, usize)> = cycle_edges(6).iter().map(|&(u, v)| (u + 1, v + 1)).collect();
    wheel.extend((1..7).map(|v| (0, v)));
    gs.push(build("toy-wheel7", 7, &wheel));
    gs.push(build("toy-ladder5", 10, &grid_edges(5, 2)));
    let mut barbell = complete_edges(4);
    barbell.extend(complete_edges(4).iter().map(|&(u, v)| (u + 6, v + 6)));
    barbell.extend([(3, 4), (4, 5), (5, 6)]);
    gs.push(build("toy-barbell", 10, &barbell));
    let mut lollipop = complete_edges(4);
    lollipop.extend([(3, 4), (4, 5), (5, 6)]);
    gs.push(build("toy-lollipop", 7, &lollipop));
    let mut petersen: Vec<(usize, usize)> = cycle_edges(5);
    petersen.extend((0..5).map(|i| (i, i + 5)));
    petersen.extend((0..5).map(|i| (5 + i, 5 + (i + 2) % 5)));
    gs.push(build("toy-petersen", 10, &petersen));
    gs.push(build("toy-prism3", 6, &prism_edges(3)));
    gs.push(build("toy-cube", 8, &grid_edges(2, 2).iter().flat_map(|&(u, v)| [(u, v), (u + 4, v + 4)]).chain((0..4).map(|i| (i, i + 4))).collect::<Vec<_>>()));
    let mut caterpillar = path_edges(5);
    caterpillar.extend((0..5).map(|i| (i, 5 + i)));
    gs.push(build("toy-caterpillar", 10, &caterpillar));
    gs.push(build("toy-cycle12", 12, &cycle_edges(12)));
    gs.push(build("toy-k33", 6, &(0..3).flat_map(|u| (3..6).map(move |v| (u, v))).collect::<Vec<_>>()));
    gs.push(build("toy-windmill", 7, &[(0, 1), (1, 2), (0, 2), (0, 3), (3, 4), (0, 4), (0, 5), (5, 6), (0, 6)]));
    gs.push(build("toy-prism5", 10, &prism_edges(5)));
    gs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_connected_graphs_with_unique_ids() {
        let gs = toy_graphs();
        assert_eq!(gs.len(), 20);
        assert!(gs.iter().all(Graph::is_connected));
        let mut ids: Vec<&str> = gs.iter().map(Graph::id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
        let cube = gs.iter().find(|g| g.id() == "toy-cube").unwrap();
        assert_eq!(cube.edge_count(), 12);
        assert!((0..8).all(|v| cube.degree(v) == 3));
        let petersen = gs.iter().find(|g| g.id() == "toy-petersen").unwrap();
        assert!((0..10).all(|v| petersen.degree(v) == 3));
    }
}
