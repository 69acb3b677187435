//! Graph construction: the user–group hypergraph propagation operator and
//! the bipartite interaction graphs consumed by the attention layers.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::SparseMatrix;

/// Precomputed symmetric propagation operator
/// `P = D_N^{-1/2} · T · D_E^{-1} · Tᵀ · D_N^{-1/2}` over the user–group
/// hypergraph. Node order: users first, then groups. One hyperedge per
/// group, containing the group node itself and its member users; group
/// nodes therefore always have degree ≥ 1 while a user in no group gets a
/// zero row under the guarded inverse 1/0 ↦ 0.
#[derive(Clone, Debug)]
pub struct HypergraphOperator {
    pub propagation: Arc<SparseMatrix>,
    pub n_users: usize,
    pub n_groups: usize,
}

impl HypergraphOperator {
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_groups
    }
}

/// Build the propagation operator from the training membership matrix
/// (`z_train`: users × groups).
pub fn build_hypergraph(z_train: &SparseMatrix) -> Result<HypergraphOperator> {
    let n_users = z_train.rows();
    let n_groups = z_train.cols();
    let n_nodes = n_users + n_groups;

    // Incidence T: (users + groups) × hyperedges, one hyperedge per group.
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(z_train.nnz() + n_groups);
    for (u, g, _) in z_train.iter() {
        triplets.push((u, g, 1.0));
    }
    for g in 0..n_groups {
        triplets.push((n_users + g, g, 1.0));
    }
    let incidence = SparseMatrix::from_triplets(n_nodes, n_groups, triplets)?;

    // Node degrees = hyperedge memberships; hyperedge degrees = sizes.
    let node_deg: Vec<f64> = (0..n_nodes).map(|i| incidence.row_nnz(i) as f64).collect();
    let mut edge_deg = vec![0.0; n_groups];
    for (_, e, _) in incidence.iter() {
        edge_deg[e] += 1.0;
    }

    let inv_sqrt_node: Vec<f64> = node_deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let inv_edge: Vec<f64> = edge_deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();

    let scaled = incidence.scale_cols(&inv_edge);
    let product = scaled.matmul(&incidence.transpose())?;
    let propagation = product.scale_rows(&inv_sqrt_node).scale_cols(&inv_sqrt_node);
    propagation.validate()?;

    Ok(HypergraphOperator {
        propagation: Arc::new(propagation),
        n_users,
        n_groups,
    })
}

/// Directed edge list over a bipartite interaction graph. Nodes are numbered
/// left block first, then right block. Both directions of every interaction
/// are present plus a self-loop per node, so every node has at least one
/// in-edge. Edges are sorted by (destination, source); `edge_dst` therefore
/// doubles as the segment index grouping in-edges by destination.
#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    pub n_left: usize,
    pub n_right: usize,
    pub edge_src: Arc<Vec<usize>>,
    pub edge_dst: Arc<Vec<usize>>,
}

impl BipartiteGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_left + self.n_right
    }

    pub fn n_edges(&self) -> usize {
        self.edge_src.len()
    }
}

/// Build the edge list from an interaction matrix (left × right).
pub fn build_bipartite(m: &SparseMatrix, n_left: usize, n_right: usize) -> Result<BipartiteGraph> {
    if m.rows() != n_left || m.cols() != n_right {
        return Err(Error::ShapeMismatch {
            op: "build_bipartite",
            lhs: vec![m.rows(), m.cols()],
            rhs: vec![n_left, n_right],
        });
    }
    let n_nodes = n_left + n_right;
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(2 * m.nnz() + n_nodes);
    for (l, r, _) in m.iter() {
        edges.push((n_left + r, l)); // l -> r stored as (dst, src)
        edges.push((l, n_left + r)); // r -> l
    }
    for i in 0..n_nodes {
        edges.push((i, i));
    }
    edges.sort_unstable();
    let (dst, src): (Vec<usize>, Vec<usize>) = edges.into_iter().unzip();
    Ok(BipartiteGraph {
        n_left,
        n_right,
        edge_src: Arc::new(src),
        edge_dst: Arc::new(dst),
    })
}
