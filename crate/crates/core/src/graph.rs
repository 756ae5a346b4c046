//! Cluster-head communication topology.
//!
//! Edges are undirected and stored once as `(i, j)` with `i < j`; the edge
//! "originates" at `i` and "terminates" at `j`. The edge-node incidence matrix
//! `C` therefore has `+I_D` in column block `i` and `−I_D` in column block `j`
//! of the edge's row block. Clusters are 0-based internally.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on the power-iteration eigen-residual.
pub const POWER_ITERATION_TOL: f64 = 1e-9;
pub const POWER_ITERATION_MAX: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGraph {
    m: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl ClusterGraph {
    /// Build a graph over `m` clusters from 0-based edges. Pairs may be given in
    /// either orientation; they are normalized to `i < j` and sorted.
    pub fn new(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("graph needs at least one cluster".into()));
        }
        let mut norm: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop on cluster {}", a + 1)));
            }
            if a >= m || b >= m {
                return Err(Error::InvalidInput(format!(
                    "edge ({}, {}) outside 1..={m}",
                    a + 1,
                    b + 1
                )));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        if let Some(w) = norm.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!(
                "duplicate edge ({}, {})",
                w[0].0 + 1,
                w[0].1 + 1
            )));
        }
        let mut neighbors = vec![Vec::new(); m];
        for &(i, j) in &norm {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        neighbors.iter_mut().for_each(|n| n.sort_unstable());
        Ok(Self {
            m,
            edges: norm,
            neighbors,
        })
    }

    /// Build from 1-based edges as they appear in scenario files.
    pub fn from_one_based(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let zero: Vec<(usize, usize)> = edges
            .iter()
            .map(|&(i, j)| {
                if i == 0 || j == 0 {
                    Err(Error::InvalidInput(format!("edge ({i}, {j}) uses cluster id 0")))
                } else {
                    Ok((i - 1, j - 1))
                }
            })
            .collect::<Result<_>>()?;
        Self::new(m, &zero)
    }

    pub fn cluster_count(&self) -> usize {
        self.m
    }

    /// Edges in lexicographic `(i, j)` order, `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok()
    }

    /// Neighbour set `B_i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Copy of the graph without the given edges.
    pub fn without_edges(&self, removed: &[(usize, usize)]) -> Self {
        let kept: Vec<(usize, usize)> = self
            .edges
            .iter()
            .copied()
            .filter(|e| !removed.contains(e))
            .collect();
        Self::new(self.m, &kept).expect("subgraph of a valid graph is valid")
    }

    /// Connected components, each sorted ascending, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.m];
        let mut out = Vec::new();
        for start in 0..self.m {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = vec![start];
            label[start] = id;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in &self.neighbors[v] {
                    if label[w] == usize::MAX {
                        label[w] = id;
                        comp.push(w);
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn check_connected(&self) -> ConnectivityReport {
        let components = self.components();
        ConnectivityReport {
            connected: components.len() == 1,
            components,
        }
    }

    /// `α_max` of `CᵀC`, computed on the `D = 1` incidence matrix.
    pub fn alpha_max(&self) -> Result<f64> {
        if self.edges.is_empty() {
            return Ok(0.0);
        }
        spectral_bound(&incidence_block(self, 1))
    }

    /// Graph Laplacian `deg − adj`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.m, self.m);
        for &(i, j) in &self.edges {
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityReport {
    pub connected: bool,
    /// 0-based cluster indices per component.
    pub components: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct IncidenceMatrices {
    pub dimension: usize,
    /// `|E|·D × m·D` incidence matrix.
    pub c: DMatrix<f64>,
    /// Entrywise `min(0, C)`.
    pub h: DMatrix<f64>,
    /// Largest eigenvalue of `CᵀC`.
    pub alpha_max: f64,
}

fn incidence_block(graph: &ClusterGraph, dim: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(graph.edges.len() * dim, graph.m * dim);
    for (e, &(i, j)) in graph.edges.iter().enumerate() {
        for k in 0..dim {
            c[(e * dim + k, i * dim + k)] = 1.0;
            c[(e * dim + k, j * dim + k)] = -1.0;
        }
    }
    c
}

/// Build `C`, `H = min(0, C)` and `α_max` for the given dimension.
pub fn incidence_matrix(graph: &ClusterGraph, dim: usize) -> Result<IncidenceMatrices> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidInput(format!(
            "dimension must be 1, 2 or 3 (got {dim})"
        )));
    }
    let c = incidence_block(graph, dim);
    let h = h_matrix(&c);
    let alpha_max = graph.alpha_max()?;
    Ok(IncidenceMatrices {
        dimension: dim,
        c,
        h,
        alpha_max,
    })
}

pub fn h_matrix(c: &DMatrix<f64>) -> DMatrix<f64> {
    c.map(|v| v.min(0.0))
}

/// Largest eigenvalue of `CᵀC` by power iteration.
///
/// Stops once the eigen-residual `‖Av − θv‖` falls below
/// [`POWER_ITERATION_TOL`]`·θ`, which bounds the error of `θ` by the same amount
/// for symmetric `A`.
pub fn spectral_bound(c: &DMatrix<f64>) -> Result<f64> {
    if c.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("incidence matrix is zero".into()));
    }
    let a = c.transpose() * c;
    let n = a.nrows();
    // Deterministic start with no special symmetry.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i as f64 + 1.0) * 0.754_877_666).sin());
    v /= v.norm();
    let mut theta = 0.0;
    for _ in 0..POWER_ITERATION_MAX {
        let w = &a * &v;
        theta = v.dot(&w);
        let residual = (&w - &v * theta).norm();
        if theta > 0.0 && residual <= POWER_ITERATION_TOL * theta {
            return Ok(theta);
        }
        let norm = w.norm();
        if norm == 0.0 {
            // Start vector landed in the null space; nudge it.
            v = DVector::from_fn(n, |i, _| if i == 0 { 1.0 } else { 0.0 });
            continue;
        }
        v = w / norm;
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge in {POWER_ITERATION_MAX} iterations (last estimate {theta})"
    )))
}
