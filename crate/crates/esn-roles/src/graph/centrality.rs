//! Betweenness and closeness centrality on the unweighted reply digraph.
//!
//! Both measures treat every edge as length 1; reply multiplicities do not
//! enter shortest paths. Betweenness accumulates pair dependencies with
//! one breadth-first pass per source and is reported unnormalized over
//! ordered `(source, target)` pairs. Work is split into fixed chunks of
//! sources whose partial sums are folded in source order, so results do
//! not depend on the number of worker threads.

use super::ReplyGraph;
use rayon::prelude::*;
use std::collections::VecDeque;

const SOURCE_CHUNK: usize = 256;

/// Dependency contributions of a single source to every node.
fn betweenness_from_source(graph: &ReplyGraph, s: usize) -> Vec<f64> {
    let n = graph.node_count();
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];

    sigma[s] = 1.0;
    dist[s] = 0;
    let mut queue = VecDeque::new();
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &(w, _) in graph.out_neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
                preds[w].push(v);
            }
        }
    }

    let mut delta = vec![0.0f64; n];
    for &w in order.iter().rev() {
        for &v in &preds[w] {
            // sigma[w] > 0 whenever w was reached, so the ratio is finite.
            delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
        }
    }
    delta[s] = 0.0;
    delta
}

/// Unnormalized betweenness centrality for every node, indexed like
/// [`ReplyGraph::nodes`]. A node on no shortest path between any ordered
/// pair scores 0; in graphs with fewer than three nodes everything is 0.
pub fn betweenness(graph: &ReplyGraph) -> Vec<f64> {
    let n = graph.node_count();
    let mut scores = vec![0.0f64; n];
    for chunk_start in (0..n).step_by(SOURCE_CHUNK) {
        let chunk: Vec<usize> = (chunk_start..(chunk_start + SOURCE_CHUNK).min(n)).collect();
        let partials: Vec<Vec<f64>> = chunk
            .par_iter()
            .map(|&s| betweenness_from_source(graph, s))
            .collect();
        // Sequential fold in source order keeps float sums reproducible.
        for partial in partials {
            for (acc, d) in scores.iter_mut().zip(partial) {
                *acc += d;
            }
        }
    }
    scores
}

/// Harmonic closeness on outgoing distances, normalized by `n - 1`:
/// the mean of `1 / d(u, v)` over all other nodes, with unreachable nodes
/// contributing 0. A graph with a single node scores 0.
pub fn harmonic_closeness(graph: &ReplyGraph) -> Vec<f64> {
    let n = graph.node_count();
    if n <= 1 {
        return vec![0.0; n];
    }
    let compute = |s: usize| -> f64 {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(s);
        let mut sum = 0.0f64;
        while let Some(v) = queue.pop_front() {
            for &(w, _) in graph.out_neighbors(v) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    sum += 1.0 / dist[w] as f64;
                    queue.push_back(w);
                }
            }
        }
        sum / (n - 1) as f64
    };
    let mut out = vec![0.0f64; n];
    for chunk_start in (0..n).step_by(SOURCE_CHUNK) {
        let chunk: Vec<usize> = (chunk_start..(chunk_start + SOURCE_CHUNK).min(n)).collect();
        let partials: Vec<f64> = chunk.par_iter().map(|&s| compute(s)).collect();
        for (i, value) in chunk.into_iter().zip(partials) {
            out[i] = value;
        }
    }
    out
}
