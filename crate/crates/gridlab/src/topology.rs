//! Graph utilities over grids: connectivity, degrees, and the structural
//! summary statistics reported for each benchmark network.
//!
//! Cascade bookkeeping works on the multigraph (every line counts), while the
//! summary statistics are computed on the simple projection (parallel lines
//! collapsed), matching the usual convention for the published benchmark
//! figures.

use crate::grid::PowerGrid;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::collections::VecDeque;

/// Connected components of a graph on `n` vertices given undirected edges.
///
/// Deterministic output: components are sorted by their smallest member and
/// each component lists its vertices in ascending order.
pub fn components_of(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            // Union by smaller root keeps the representative the minimum
            // member, which is what the ordering below relies on.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 0..n {
        let r = find(&mut parent, v);
        groups[r].push(v);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

/// Connected components of a grid over all of its lines.
pub fn connected_components(grid: &PowerGrid) -> Vec<Vec<usize>> {
    components_of(grid.n_buses(), grid.endpoints().iter().copied())
}

/// Multigraph degree of every vertex (each line contributes to both ends).
pub fn degrees_of(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut deg = vec![0usize; n];
    for (a, b) in edges {
        deg[a] += 1;
        deg[b] += 1;
    }
    deg
}

/// Structural summary of a grid, computed on the simple projection.
///
/// Conventions pinned here (they vary across tools):
/// * `mean_degree` = 2·E/N on the simple graph.
/// * `clustering` is the global transitivity 3·(triangles)/(connected
///   triples), not the mean of local coefficients.
/// * `mean_distance` averages shortest-path lengths over reachable pairs.
/// * `mean_betweenness` averages per-node betweenness normalised by
///   (N−1)(N−2)/2, each s–t pair counted once.
/// * `generator_count` / `load_count` count buses with positive generation /
///   positive demand (a bus supplying both counts in both).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStatistics {
    pub node_count: usize,
    pub edge_count: usize,
    pub mean_degree: f64,
    pub assortativity: f64,
    /// False when every vertex has the same degree (assortativity undefined);
    /// `assortativity` is reported as 0 in that case.
    pub assortativity_defined: bool,
    pub clustering: f64,
    pub mean_distance: f64,
    pub mean_betweenness: f64,
    pub generator_count: usize,
    pub load_count: usize,
}

/// Compute the structural summary of a grid.
pub fn summary_statistics(grid: &PowerGrid) -> SummaryStatistics {
    let n = grid.n_buses();
    let simple: Vec<(usize, usize)> = grid
        .endpoints()
        .iter()
        .map(|&(a, b)| if a < b { (a, b) } else { (b, a) })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let adj = adjacency(n, &simple);
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let e = simple.len();

    let mean_degree = if n > 0 { 2.0 * e as f64 / n as f64 } else { 0.0 };
    let (assortativity, assortativity_defined) = degree_assortativity(&simple, &deg);
    let clustering = transitivity(&adj, &deg);
    let (mean_distance, mean_betweenness) = distance_and_betweenness(&adj);

    SummaryStatistics {
        node_count: n,
        edge_count: e,
        mean_degree,
        assortativity,
        assortativity_defined,
        clustering,
        mean_distance,
        mean_betweenness,
        generator_count: grid.buses().iter().filter(|b| b.generation > 0.0).count(),
        load_count: grid.buses().iter().filter(|b| b.demand > 0.0).count(),
    }
}

fn adjacency(n: usize, simple: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in simple {
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// Newman's degree assortativity over edges; returns (0, false) when the
/// degree sequence at edge endpoints has no variance.
fn degree_assortativity(simple: &[(usize, usize)], deg: &[usize]) -> (f64, bool) {
    if simple.is_empty() {
        return (0.0, false);
    }
    // Treat each edge as two ordered stubs (j, k) and (k, j).
    let m = (2 * simple.len()) as f64;
    let (mut s_jk, mut s_j, mut s_j2) = (0.0, 0.0, 0.0);
    for &(a, b) in simple {
        let (dj, dk) = (deg[a] as f64, deg[b] as f64);
        s_jk += 2.0 * dj * dk;
        s_j += dj + dk;
        s_j2 += dj * dj + dk * dk;
    }
    let mean = s_j / m;
    let var = s_j2 / m - mean * mean;
    if var <= 1e-12 * (1.0 + mean * mean) {
        return (0.0, false);
    }
    ((s_jk / m - mean * mean) / var, true)
}

/// Global transitivity: 3·triangles / connected triples.
fn transitivity(adj: &[Vec<usize>], deg: &[usize]) -> f64 {
    let triples: usize = deg.iter().map(|&d| d * (d.saturating_sub(1)) / 2).sum();
    if triples == 0 {
        return 0.0;
    }
    // Sum over edges of |N(a) ∩ N(b)| counts each triangle three times.
    let mut closed = 0usize;
    for (a, nbrs) in adj.iter().enumerate() {
        for &b in nbrs {
            if b > a {
                closed += sorted_intersection_size(&adj[a], &adj[b]);
            }
        }
    }
    closed as f64 / triples as f64
}

fn sorted_intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// One BFS sweep per source yields both the mean shortest-path distance over
/// reachable pairs and Brandes' betweenness accumulation.
fn distance_and_betweenness(adj: &[Vec<usize>]) -> (f64, f64) {
    let n = adj.len();
    if n < 2 {
        return (0.0, 0.0);
    }
    let mut dist_sum = 0u64;
    let mut dist_pairs = 0u64;
    let mut betweenness = vec![0.0f64; n];

    // Brandes (2001), unweighted variant.
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut delta = vec![0.0f64; n];
    let mut stack: Vec<usize> = Vec::with_capacity(n);
    let mut queue: VecDeque<usize> = VecDeque::new();

    for s in 0..n {
        for v in 0..n {
            sigma[v] = 0.0;
            dist[v] = -1;
            preds[v].clear();
            delta[v] = 0.0;
        }
        stack.clear();
        queue.clear();
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &adj[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        for v in 0..n {
            if v != s && dist[v] > 0 {
                dist_sum += dist[v] as u64;
                dist_pairs += 1;
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                betweenness[w] += delta[w];
            }
        }
    }

    let mean_distance = if dist_pairs > 0 {
        dist_sum as f64 / dist_pairs as f64
    } else {
        0.0
    };
    // Each undirected pair was visited from both endpoints; halve, then
    // normalise by the number of pairs that could route through a node.
    let norm = (n - 1) as f64 * (n - 2) as f64 / 2.0;
    let mean_betweenness = if norm > 0.0 {
        betweenness.iter().map(|b| b / 2.0 / norm).sum::<f64>() / n as f64
    } else {
        0.0
    };
    (mean_distance, mean_betweenness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Bus, Line, PowerGrid};
    use approx::assert_relative_eq;

    fn grid_from(edges: &[(usize, usize)], n: usize) -> PowerGrid {
        let buses = (0..n)
            .map(|i| Bus {
                id: format!("b{i}"),
                x: i as f64,
                y: 0.0,
                generation: if i == 0 { 1.0 } else { 0.0 },
                demand: if i == 0 { 0.0 } else { 1.0 },
            })
            .collect();
        let lines = edges
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| Line {
                id: format!("l{k}"),
                from: format!("b{a}"),
                to: format!("b{b}"),
                susceptance: 1.0,
                capacity: None,
            })
            .collect();
        PowerGrid::new("t".into(), buses, lines).unwrap()
    }

    #[test]
    fn test_components_split_and_order() {
        // 0-1 2-3-4, plus isolated 5.
        let comps = components_of(6, [(1, 0), (3, 2), (4, 3)]);
        assert_eq!(comps, vec![vec![0, 1], vec![2, 3, 4], vec![5]]);
    }

    #[test]
    fn test_components_multigraph_and_empty() {
        let comps = components_of(3, [(0, 1), (0, 1)]);
        assert_eq!(comps, vec![vec![0, 1], vec![2]]);
        assert_eq!(components_of(0, []), Vec::<Vec<usize>>::new());
    }

    #[test]
    fn test_degrees_count_parallel_lines() {
        let deg = degrees_of(3, [(0, 1), (0, 1), (1, 2)]);
        assert_eq!(deg, vec![2, 3, 1]);
    }

    #[test]
    fn test_triangle_statistics() {
        let g = grid_from(&[(0, 1), (1, 2), (0, 2)], 3);
        let s = summary_statistics(&g);
        assert_eq!(s.node_count, 3);
        assert_eq!(s.edge_count, 3);
        assert_relative_eq!(s.mean_degree, 2.0);
        assert_relative_eq!(s.clustering, 1.0);
        assert_relative_eq!(s.mean_distance, 1.0);
        // Regular graph: assortativity undefined.
        assert!(!s.assortativity_defined);
        assert_relative_eq!(s.mean_betweenness, 0.0);
    }

    #[test]
    fn test_path_graph_statistics() {
        // Path 0-1-2-3: known closed forms.
        let g = grid_from(&[(0, 1), (1, 2), (2, 3)], 4);
        let s = summary_statistics(&g);
        assert_relative_eq!(s.mean_degree, 1.5);
        assert_relative_eq!(s.clustering, 0.0);
        // Distances: 1,2,3,1,2,1 over 6 pairs -> 10/6.
        assert_relative_eq!(s.mean_distance, 10.0 / 6.0, epsilon = 1e-12);
        // Betweenness: ends 0, middles carry pairs {0-2,0-3} resp {0-3,1-3}
        // -> 2 each, normalised by (n-1)(n-2)/2 = 3 -> 2/3; mean = 1/3.
        assert_relative_eq!(s.mean_betweenness, 1.0 / 3.0, epsilon = 1e-12);
        // Path assortativity: known value -1/2 for P4.
        assert!(s.assortativity_defined);
        assert_relative_eq!(s.assortativity, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn test_star_graph_betweenness_and_assortativity() {
        // Star with centre 0 and 4 leaves.
        let g = grid_from(&[(0, 1), (0, 2), (0, 3), (0, 4)], 5);
        let s = summary_statistics(&g);
        // Centre mediates all C(4,2)=6 leaf pairs; norm = 4*3/2 = 6 -> 1.0.
        assert_relative_eq!(s.mean_betweenness, 1.0 / 5.0, epsilon = 1e-12);
        // Perfectly disassortative.
        assert_relative_eq!(s.assortativity, -1.0, epsilon = 1e-12);
        assert_relative_eq!(s.clustering, 0.0);
    }

    #[test]
    fn test_transitivity_triangle_with_tail() {
        // Triangle 0-1-2 plus pendant 3 on node 0: 1 triangle, triples =
        // C(3,2)+C(2,2)... degrees 3,2,2,1 -> 3+1+1+0 = 5 -> 3/5.
        let g = grid_from(&[(0, 1), (1, 2), (0, 2), (0, 3)], 4);
        let s = summary_statistics(&g);
        assert_relative_eq!(s.clustering, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn test_disconnected_distance_ignores_unreachable() {
        let g = grid_from(&[(0, 1), (2, 3)], 4);
        let s = summary_statistics(&g);
        assert_relative_eq!(s.mean_distance, 1.0);
    }

    #[test]
    fn test_generator_and_load_counts() {
        let buses = vec![
            Bus {
                id: "g".into(),
                x: 0.0,
                y: 0.0,
                generation: 5.0,
                demand: 0.0,
            },
            Bus {
                id: "both".into(),
                x: 1.0,
                y: 0.0,
                generation: 2.0,
                demand: 3.0,
            },
            Bus {
                id: "load".into(),
                x: 2.0,
                y: 0.0,
                generation: 0.0,
                demand: 4.0,
            },
            Bus {
                id: "dead".into(),
                x: 3.0,
                y: 0.0,
                generation: 0.0,
                demand: 0.0,
            },
        ];
        let lines = vec![Line {
            id: "l0".into(),
            from: "g".into(),
            to: "load".into(),
            susceptance: 1.0,
            capacity: None,
        }];
        let g = PowerGrid::new("t".into(), buses, lines).unwrap();
        let s = summary_statistics(&g);
        assert_eq!(s.generator_count, 2);
        assert_eq!(s.load_count, 2);
    }
}
