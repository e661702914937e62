//! Directed reply graph between users and its centrality measures.
//!
//! An edge `u -> v` means `u` replied to messages authored by `v`; its
//! weight counts those replies. The node set covers every user who wrote
//! or received at least one public reply, not only the users later kept
//! for analysis. Self-replies never create edges.

mod centrality;

pub use centrality::{betweenness, harmonic_closeness};

use crate::ids::UserId;
use crate::ingest::{Message, ThreadIndex};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Compact adjacency representation with nodes ordered by user id, which
/// keeps every derived quantity independent of input row order.
#[derive(Clone, Debug)]
pub struct ReplyGraph {
    nodes: Vec<UserId>,
    index: HashMap<UserId, usize>,
    out: Vec<Vec<(usize, u64)>>,
    inc: Vec<Vec<(usize, u64)>>,
}

impl ReplyGraph {
    /// Builds the graph from public messages and their thread index. Each
    /// resolved reply adds weight to `author -> target_author` unless the
    /// two coincide.
    pub fn from_messages(messages: &[Message], threads: &ThreadIndex) -> Self {
        let mut users: BTreeSet<&UserId> = BTreeSet::new();
        let mut weights: BTreeMap<(&UserId, &UserId), u64> = BTreeMap::new();
        for m in messages {
            if !m.is_reply() {
                continue;
            }
            users.insert(&m.author_id);
            if let Some(res) = threads.resolution(&m.message_id) {
                users.insert(&res.target_author);
                if res.target_author != m.author_id {
                    *weights.entry((&m.author_id, &res.target_author)).or_insert(0) += 1;
                }
            }
        }
        Self::assemble(
            users.into_iter().cloned(),
            weights
                .into_iter()
                .map(|((a, b), w)| (a.clone(), b.clone(), w)),
        )
    }

    /// Builds a graph from explicit weighted edges, merging parallel edges
    /// and dropping self-loops. Mostly useful for tests and for loading an
    /// exported edge list.
    pub fn from_weighted_edges<I>(edges: I) -> Self
    where
        I: IntoIterator<Item = (UserId, UserId, u64)>,
    {
        let mut users: BTreeSet<UserId> = BTreeSet::new();
        let mut weights: BTreeMap<(UserId, UserId), u64> = BTreeMap::new();
        for (a, b, w) in edges {
            users.insert(a.clone());
            users.insert(b.clone());
            if a != b && w > 0 {
                *weights.entry((a, b)).or_insert(0) += w;
            }
        }
        Self::assemble(users.into_iter(), weights.into_iter().map(|((a, b), w)| (a, b, w)))
    }

    fn assemble(
        users: impl IntoIterator<Item = UserId>,
        edges: impl IntoIterator<Item = (UserId, UserId, u64)>,
    ) -> Self {
        let nodes: Vec<UserId> = users.into_iter().collect();
        let index: HashMap<UserId, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        let mut out = vec![Vec::new(); nodes.len()];
        let mut inc = vec![Vec::new(); nodes.len()];
        for (a, b, w) in edges {
            let (ia, ib) = (index[&a], index[&b]);
            out[ia].push((ib, w));
            inc[ib].push((ia, w));
        }
        for adj in out.iter_mut().chain(inc.iter_mut()) {
            adj.sort_unstable();
        }
        Self {
            nodes,
            index,
            out,
            inc,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    /// Nodes in id order; indices into this slice are the node indices
    /// used everywhere else.
    pub fn nodes(&self) -> &[UserId] {
        &self.nodes
    }

    pub fn node_index(&self, user: &UserId) -> Option<usize> {
        self.index.get(user).copied()
    }

    pub fn out_neighbors(&self, node: usize) -> &[(usize, u64)] {
        &self.out[node]
    }

    pub fn in_neighbors(&self, node: usize) -> &[(usize, u64)] {
        &self.inc[node]
    }

    /// Edge list as `source,target,weight` CSV, sorted by source then
    /// target id.
    pub fn to_edge_list_csv(&self) -> String {
        let mut s = String::from("source,target,weight\n");
        for (i, adj) in self.out.iter().enumerate() {
            for (j, w) in adj {
                s.push_str(&format!("{},{},{}\n", self.nodes[i], self.nodes[*j], w));
            }
        }
        s
    }
}

/// Degree block of one node. Plain degrees count distinct neighbours; the
/// weighted variants sum reply multiplicities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Degrees {
    pub in_degree: u64,
    pub out_degree: u64,
    pub weighted_in: u64,
    pub weighted_out: u64,
}

/// Distinct-neighbour and weighted degrees for every node, indexed like
/// [`ReplyGraph::nodes`].
pub fn degrees(graph: &ReplyGraph) -> Vec<Degrees> {
    (0..graph.node_count())
        .map(|v| Degrees {
            in_degree: graph.in_neighbors(v).len() as u64,
            out_degree: graph.out_neighbors(v).len() as u64,
            weighted_in: graph.in_neighbors(v).iter().map(|(_, w)| w).sum(),
            weighted_out: graph.out_neighbors(v).iter().map(|(_, w)| w).sum(),
        })
        .collect()
}

/// Centrality values for one user.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Centrality {
    pub in_degree: u64,
    pub out_degree: u64,
    pub weighted_in: u64,
    pub weighted_out: u64,
    pub betweenness: f64,
    pub closeness: Option<f64>,
}

/// Per-user centrality keyed by id. Users absent from the graph simply
/// have no row; downstream metric lookups treat that as zero.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CentralityTable {
    pub rows: BTreeMap<UserId, Centrality>,
}

impl CentralityTable {
    pub fn get(&self, user: &UserId) -> Option<&Centrality> {
        self.rows.get(user)
    }
}

/// Computes degrees, betweenness and (optionally) harmonic closeness for
/// every node of the graph.
pub fn centrality_table(graph: &ReplyGraph, include_closeness: bool) -> CentralityTable {
    let deg = degrees(graph);
    let bc = betweenness(graph);
    let cl = include_closeness.then(|| harmonic_closeness(graph));
    let rows = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(v, user)| {
            (
                user.clone(),
                Centrality {
                    in_degree: deg[v].in_degree,
                    out_degree: deg[v].out_degree,
                    weighted_in: deg[v].weighted_in,
                    weighted_out: deg[v].weighted_out,
                    betweenness: bc[v],
                    closeness: cl.as_ref().map(|c| c[v]),
                },
            )
        })
        .collect();
    CentralityTable { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(s: &str) -> UserId {
        UserId::from(s)
    }

    #[test]
    fn parallel_edges_merge_and_self_loops_drop() {
        let g = ReplyGraph::from_weighted_edges([
            (u("a"), u("b"), 1),
            (u("a"), u("b"), 2),
            (u("b"), u("b"), 5),
            (u("b"), u("c"), 1),
        ]);
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
        let a = g.node_index(&u("a")).unwrap();
        let b = g.node_index(&u("b")).unwrap();
        assert_eq!(g.out_neighbors(a), &[(b, 3)]);
        let d = degrees(&g);
        assert_eq!(d[a].out_degree, 1);
        assert_eq!(d[a].weighted_out, 3);
        assert_eq!(d[b].in_degree, 1);
        assert_eq!(d[b].weighted_in, 3);
    }

    #[test]
    fn adding_an_edge_never_decreases_degrees() {
        let base = [(u("a"), u("b"), 1), (u("c"), u("b"), 1)];
        let g1 = ReplyGraph::from_weighted_edges(base.clone());
        let g2 = ReplyGraph::from_weighted_edges(base.into_iter().chain([(u("a"), u("c"), 1)]));
        for user in ["a", "b", "c"] {
            let d1 = degrees(&g1)[g1.node_index(&u(user)).unwrap()];
            let d2 = degrees(&g2)[g2.node_index(&u(user)).unwrap()];
            assert!(d2.in_degree >= d1.in_degree);
            assert!(d2.out_degree >= d1.out_degree);
        }
    }

    #[test]
    fn edge_list_round_trips() {
        let g = ReplyGraph::from_weighted_edges([
            (u("a"), u("b"), 3),
            (u("b"), u("c"), 1),
            (u("c"), u("a"), 2),
        ]);
        let csv = g.to_edge_list_csv();
        assert_eq!(csv, "source,target,weight\na,b,3\nb,c,1\nc,a,2\n");
    }
}
