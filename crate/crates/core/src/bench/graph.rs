//! Dynamic graphs for triangle counting: a random initial graph plus one
//! clique insertion per step. The number of triangles is `tr(A^3) / 6`.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{invalid, Result, TraceError};
use crate::linalg::{orthonormal_basis, schatten_norm_of_spectrum, symmetric_eigenvalues};
use crate::oracle::{LinearOperator, Operator, PowerOperator, SparseSymmetricOperator};
use crate::stream::StreamSource;

pub const MAX_CLIQUE: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphStream {
    pub node_count: usize,
    pub initial_edges: Vec<(usize, usize)>,
    /// Vertex sets inserted as cliques, one per step.
    pub events: Vec<Vec<usize>>,
}

impl GraphStream {
    pub fn validate(&self) -> Result<()> {
        let n = self.node_count;
        let check = |v: usize| {
            if v < n {
                Ok(())
            } else {
                Err(TraceError::VertexOutOfRange { vertex: v, nodes: n })
            }
        };
        for &(u, v) in &self.initial_edges {
            check(u)?;
            check(v)?;
        }
        for (i, clique) in self.events.iter().enumerate() {
            if !(2..=MAX_CLIQUE).contains(&clique.len()) {
                return Err(invalid(
                    "clique",
                    format!("event {} has {} vertices, expected 2 to {MAX_CLIQUE}", i + 1, clique.len()),
                ));
            }
            for &v in clique {
                check(v)?;
            }
        }
        Ok(())
    }

    /// Number of matrices in the derived stream: the initial graph plus one
    /// per event.
    pub fn steps(&self) -> usize {
        self.events.len() + 1
    }
}

/// A simple undirected graph that tracks its triangle count.
#[derive(Debug, Clone)]
pub struct Graph {
    adj: Vec<BTreeSet<usize>>,
    triangles: u64,
}

impl Graph {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![BTreeSet::new(); nodes],
            triangles: 0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Adds `{u, v}`; returns whether the edge is new. Self-loops and repeats
    /// are no-ops.
    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<bool> {
        let n = self.node_count();
        for w in [u, v] {
            if w >= n {
                return Err(TraceError::VertexOutOfRange { vertex: w, nodes: n });
            }
        }
        if u == v || self.adj[u].contains(&v) {
            return Ok(false);
        }
        self.triangles += self.adj[u].intersection(&self.adj[v]).count() as u64;
        self.adj[u].insert(v);
        self.adj[v].insert(u);
        Ok(true)
    }

    /// Adds every edge among `vertices`; returns the new edges.
    pub fn add_clique(&mut self, vertices: &[usize]) -> Result<Vec<(usize, usize)>> {
        let mut added = Vec::new();
        for (a, &u) in vertices.iter().enumerate() {
            for &v in &vertices[a + 1..] {
                if self.add_edge(u, v)? {
                    added.push((u.min(v), u.max(v)));
                }
            }
        }
        Ok(added)
    }

    pub fn triangles(&self) -> u64 {
        self.triangles
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.range(u + 1..).map(move |&v| (u, v)))
    }

    pub fn adjacency(&self) -> Result<SparseSymmetricOperator> {
        SparseSymmetricOperator::adjacency(self.node_count(), self.edges())
    }
}

/// Triangle count by enumerating each triangle once from its smallest edge.
pub fn count_triangles(g: &Graph) -> u64 {
    g.edges()
        .map(|(u, v)| {
            g.neighbors(u)
                .range(v + 1..)
                .filter(|w| g.neighbors(v).contains(w))
                .count() as u64
        })
        .sum()
}

/// `G(n, p)` initial graph followed by `steps` random cliques of 2 to 6 vertices.
pub fn random_graph_stream<R: Rng + ?Sized>(nodes: usize, edge_prob: f64, steps: usize, rng: &mut R) -> Result<GraphStream> {
    if nodes < MAX_CLIQUE {
        return Err(invalid("nodes", format!("{nodes} is below the largest clique size {MAX_CLIQUE}")));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(invalid("edge_prob", format!("{edge_prob} is outside [0, 1]")));
    }
    let mut initial_edges = Vec::new();
    for u in 0..nodes {
        for v in u + 1..nodes {
            if rng.random::<f64>() < edge_prob {
                initial_edges.push((u, v));
            }
        }
    }
    let events = (0..steps)
        .map(|_| {
            let k = rng.random_range(2..=MAX_CLIQUE);
            sample(rng, nodes, k).into_vec()
        })
        .collect();
    Ok(GraphStream {
        node_count: nodes,
        initial_edges,
        events,
    })
}

/// The cubed-adjacency stream of a graph and its exact triangle counts.
#[derive(Debug, Clone)]
pub struct GraphSeries {
    pub stream: StreamSource,
    pub adjacency: Vec<Arc<SparseSymmetricOperator>>,
    pub triangles: Vec<u64>,
    /// Edges added by each event.
    pub added: Vec<Vec<(usize, usize)>>,
}

impl GraphSeries {
    pub fn true_traces(&self) -> Vec<f64> {
        self.triangles.iter().map(|&t| 6.0 * t as f64).collect()
    }
}

/// Step 1 is the initial graph; step `i + 1` follows event `i`.
pub fn graph_to_stream(g: &GraphStream) -> Result<GraphSeries> {
    g.validate()?;
    let mut graph = Graph::new(g.node_count);
    for &(u, v) in &g.initial_edges {
        graph.add_edge(u, v)?;
    }
    let mut adjacency = vec![Arc::new(graph.adjacency()?)];
    let mut triangles = vec![graph.triangles()];
    let mut added = Vec::with_capacity(g.events.len());
    for clique in &g.events {
        added.push(graph.add_clique(clique)?);
        adjacency.push(Arc::new(graph.adjacency()?));
        triangles.push(graph.triangles());
    }
    let steps = adjacency
        .iter()
        .map(|a| Ok(Arc::new(PowerOperator::new(a.clone() as Operator, 3)?) as Operator))
        .collect::<Result<Vec<_>>>()?;
    Ok(GraphSeries {
        stream: StreamSource::new(steps)?,
        adjacency,
        triangles,
        added,
    })
}

/// Spectra of the cubed adjacency of the first graph and of each step's
/// change in the cube.
#[derive(Debug, Clone)]
pub struct CubeSpectra {
    pub first: Vec<f64>,
    pub steps: Vec<Vec<f64>>,
}

impl CubeSpectra {
    pub fn first_norm(&self, p: f64) -> f64 {
        schatten_norm_of_spectrum(&self.first, p)
    }

    pub fn step_norms(&self, p: f64) -> Vec<f64> {
        self.steps.iter().map(|ev| schatten_norm_of_spectrum(ev, p)).collect()
    }

    pub fn norm_bound(&self, p: f64) -> f64 {
        self.first_norm(p) + self.step_norms(p).iter().sum::<f64>()
    }
}

/// Nonzero spectrum of `B^3 - A^3` where `B` adds `new_edges` to `A`.
///
/// With `E = B - A` supported on the vertex set `S`, every term of the
/// expansion has its range inside `span[I_S, A I_S, A^2 I_S]`, so the
/// difference is compressed exactly onto an orthonormal basis of that span.
pub fn cube_difference_spectrum(
    before: &SparseSymmetricOperator,
    after: &SparseSymmetricOperator,
    new_edges: &[(usize, usize)],
) -> Vec<f64> {
    let touched: BTreeSet<usize> = new_edges.iter().flat_map(|&(u, v)| [u, v]).collect();
    if touched.is_empty() {
        return Vec::new();
    }
    let n = before.dim();
    let k = touched.len();
    let mut indicator = DMatrix::zeros(n, k);
    for (j, &v) in touched.iter().enumerate() {
        indicator[(v, j)] = 1.0;
    }
    let a1 = before.matmat(&indicator);
    let a2 = before.matmat(&a1);
    let mut w = DMatrix::zeros(n, 3 * k);
    w.columns_mut(0, k).copy_from(&indicator);
    w.columns_mut(k, k).copy_from(&a1);
    w.columns_mut(2 * k, k).copy_from(&a2);
    let q = orthonormal_basis(&w);
    let cube = |op: &SparseSymmetricOperator| op.matmat(&op.matmat(&op.matmat(&q)));
    let dq = cube(after) - cube(before);
    let mut small = q.transpose() * dq;
    small = (&small + small.transpose()) * 0.5;
    symmetric_eigenvalues(&small)
        .into_iter()
        .filter(|l| l.abs() > 1e-9)
        .collect()
}

pub fn cube_spectra(series: &GraphSeries) -> Result<CubeSpectra> {
    let first = symmetric_eigenvalues(&series.adjacency[0].to_dense())
        .into_iter()
        .map(|l| l * l * l)
        .collect();
    let steps = series
        .added
        .iter()
        .enumerate()
        .map(|(i, edges)| cube_difference_spectrum(&series.adjacency[i], &series.adjacency[i + 1], edges))
        .collect();
    Ok(CubeSpectra { first, steps })
}
