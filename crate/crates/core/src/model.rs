//! Model parameters and the forward pass.
//!
//! Users and groups each carry two learnable embeddings: a group-level one
//! refined by sigmoid hypergraph propagation over the user–group hypergraph,
//! and an item-level one refined by single-head attention stacks over the
//! group–item and user–item bipartite graphs. Items learned on the
//! group–item graph seed the user–item stack (item representation
//! enhancement), items interacted with by a user's groups contribute an
//! additive correction to the user's item-level mean (contextual
//! enhancement), and the final item-level user representation is sampled
//! from a diagonal Gaussian via the reparameterization trick.

use std::sync::Arc;

use rand::Rng;

use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::graph::{build_bipartite, build_hypergraph, BipartiteGraph, HypergraphOperator};
use crate::tensor::{SparseMatrix, Tape, Tensor};

/// Negative slope shared by the attention logits and the MLP hidden layers.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Additive floor keeping the interest standard deviation strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub n_users: usize,
    pub n_items: usize,
    pub n_groups: usize,
    pub d: usize,
    pub layers: usize,
}

/// Two-layer perceptron d -> d -> d with leaky-relu hidden activation.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// One attention layer: linear transform and the 2d attention vector.
/// The first d attention coefficients pair with the destination node's
/// transformed features, the last d with the source's.
#[derive(Clone, Debug)]
pub struct GatLayerParams {
    pub weight: Tensor,
    pub attn: Tensor,
}

/// Every learnable tensor of the model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub u_s: Tensor,
    pub u_v: Tensor,
    pub g_s: Tensor,
    pub g_v: Tensor,
    pub v: Tensor,
    pub w_ug: Vec<Tensor>,
    pub gat_gv: Vec<GatLayerParams>,
    pub gat_uv: Vec<GatLayerParams>,
    pub w_c: Tensor,
    pub mlp_sigma: MlpParams,
    pub mlp_ctx: MlpParams,
}

impl ModelParams {
    /// Initialize embeddings and weights from U(-1/√d, 1/√d); biases start
    /// at zero. Draw order is the canonical tensor order, so a fixed seed
    /// fully determines the initialization.
    pub fn init<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        let d = dims.d;
        let bound = 1.0 / (d as f64).sqrt();
        let mat = |rows: usize, cols: usize, rng: &mut R| {
            Tensor::uniform(vec![rows, cols], -bound, bound, rng)
        };
        let u_s = mat(dims.n_users, d, rng);
        let u_v = mat(dims.n_users, d, rng);
        let g_s = mat(dims.n_groups, d, rng);
        let g_v = mat(dims.n_groups, d, rng);
        let v = mat(dims.n_items, d, rng);
        let w_ug = (0..dims.layers).map(|_| mat(d, d, rng)).collect();
        let gat_stack = |rng: &mut R| -> Vec<GatLayerParams> {
            (0..dims.layers)
                .map(|_| GatLayerParams {
                    weight: mat(d, d, rng),
                    attn: Tensor::uniform(vec![2 * d], -bound, bound, rng),
                })
                .collect()
        };
        let gat_gv = gat_stack(rng);
        let gat_uv = gat_stack(rng);
        let w_c = mat(d, d, rng);
        let mlp = |rng: &mut R| MlpParams {
            w1: mat(d, d, rng),
            b1: Tensor::zeros(vec![d]),
            w2: mat(d, d, rng),
            b2: Tensor::zeros(vec![d]),
        };
        let mlp_sigma = mlp(rng);
        let mlp_ctx = mlp(rng);
        ModelParams {
            u_s,
            u_v,
            g_s,
            g_v,
            v,
            w_ug,
            gat_gv,
            gat_uv,
            w_c,
            mlp_sigma,
            mlp_ctx,
        }
    }

    /// All-zero tensors with the shapes implied by `dims`.
    pub fn zeros(dims: &ModelDims) -> Self {
        let d = dims.d;
        let zero_gat = |_: usize| GatLayerParams {
            weight: Tensor::zeros(vec![d, d]),
            attn: Tensor::zeros(vec![2 * d]),
        };
        let zero_mlp = || MlpParams {
            w1: Tensor::zeros(vec![d, d]),
            b1: Tensor::zeros(vec![d]),
            w2: Tensor::zeros(vec![d, d]),
            b2: Tensor::zeros(vec![d]),
        };
        ModelParams {
            u_s: Tensor::zeros(vec![dims.n_users, d]),
            u_v: Tensor::zeros(vec![dims.n_users, d]),
            g_s: Tensor::zeros(vec![dims.n_groups, d]),
            g_v: Tensor::zeros(vec![dims.n_groups, d]),
            v: Tensor::zeros(vec![dims.n_items, d]),
            w_ug: (0..dims.layers).map(|_| Tensor::zeros(vec![d, d])).collect(),
            gat_gv: (0..dims.layers).map(zero_gat).collect(),
            gat_uv: (0..dims.layers).map(zero_gat).collect(),
            w_c: Tensor::zeros(vec![d, d]),
            mlp_sigma: zero_mlp(),
            mlp_ctx: zero_mlp(),
        }
    }

    /// Concatenation of every tensor in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_parameters());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuild parameters from a flat buffer laid out in canonical order.
    pub fn from_flat(dims: &ModelDims, flat: &[f64]) -> Result<Self> {
        let mut params = ModelParams::zeros(dims);
        let expected: usize = params.total_parameters();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "from_flat",
                lhs: vec![flat.len()],
                rhs: vec![expected],
            });
        }
        let mut offset = 0;
        for slot in params.tensors_mut() {
            let len = slot.len();
            let shape = slot.shape().to_vec();
            *slot = Tensor::from_vec(shape, flat[offset..offset + len].to_vec())?;
            offset += len;
        }
        Ok(params)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_users: self.u_s.rows(),
            n_items: self.v.rows(),
            n_groups: self.g_s.rows(),
            d: self.u_s.row_width(),
            layers: self.w_ug.len(),
        }
    }

    /// All tensors in canonical order with stable names (checkpoint layout,
    /// optimizer slot order, regularization and parameter accounting all use
    /// this order).
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("u_s".into(), &self.u_s),
            ("u_v".into(), &self.u_v),
            ("g_s".into(), &self.g_s),
            ("g_v".into(), &self.g_v),
            ("v".into(), &self.v),
        ];
        for (l, w) in self.w_ug.iter().enumerate() {
            out.push((format!("w_ug.{l}"), w));
        }
        for (name, stack) in [("gat_gv", &self.gat_gv), ("gat_uv", &self.gat_uv)] {
            for (l, layer) in stack.iter().enumerate() {
                out.push((format!("{name}.{l}.weight"), &layer.weight));
                out.push((format!("{name}.{l}.attn"), &layer.attn));
            }
        }
        out.push(("w_c".into(), &self.w_c));
        for (name, mlp) in [("mlp_sigma", &self.mlp_sigma), ("mlp_ctx", &self.mlp_ctx)] {
            out.push((format!("{name}.w1"), &mlp.w1));
            out.push((format!("{name}.b1"), &mlp.b1));
            out.push((format!("{name}.w2"), &mlp.w2));
            out.push((format!("{name}.b2"), &mlp.b2));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![
            &mut self.u_s,
            &mut self.u_v,
            &mut self.g_s,
            &mut self.g_v,
            &mut self.v,
        ];
        out.extend(self.w_ug.iter_mut());
        for stack in [&mut self.gat_gv, &mut self.gat_uv] {
            for layer in stack.iter_mut() {
                out.push(&mut layer.weight);
                out.push(&mut layer.attn);
            }
        }
        out.push(&mut self.w_c);
        for mlp in [&mut self.mlp_sigma, &mut self.mlp_ctx] {
            out.push(&mut mlp.w1);
            out.push(&mut mlp.b1);
            out.push(&mut mlp.w2);
            out.push(&mut mlp.b2);
        }
        out
    }

    /// Enroll every tensor as a tape leaf, in canonical order.
    pub fn track(&self, tape: &mut Tape) -> ModelParams {
        let mut clone = self.clone();
        for t in clone.tensors_mut() {
            *t = tape.var(t);
        }
        clone
    }

    /// Sum of tensor sizes.
    pub fn total_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Closed-form learnable-parameter count:
///
/// - embeddings: d·(2·|U| + 2·|G| + |V|)
/// - hypergraph weights: L·d²
/// - two attention stacks: 2·L·(d² + 2d)
/// - context projection: d²
/// - two MLPs (d→d→d, weights and biases): 2·(2d² + 2d)
pub fn parameter_count(dims: &ModelDims) -> usize {
    let (d, l) = (dims.d, dims.layers);
    d * (2 * dims.n_users + 2 * dims.n_groups + dims.n_items)
        + l * d * d
        + 2 * l * (d * d + 2 * d)
        + d * d
        + 2 * (2 * d * d + 2 * d)
}

/// Fixed structures derived from the training data: the hypergraph
/// propagation operator, the two bipartite graphs, the row-normalized
/// context operator D⁻¹·(Z_train·Y) and the membership mask.
#[derive(Clone, Debug)]
pub struct ModelGraphs {
    pub hyper: HypergraphOperator,
    pub group_item: BipartiteGraph,
    pub user_item: BipartiteGraph,
    pub ctx: Arc<SparseMatrix>,
    /// 1.0 for users with at least one training membership, else 0.0.
    pub member_mask: Tensor,
}

impl ModelGraphs {
    pub fn build(ds: &InteractionDataset) -> Result<Self> {
        let hyper = build_hypergraph(&ds.z_train)?;
        let group_item = build_bipartite(&ds.y, ds.n_groups, ds.n_items)?;
        let user_item = build_bipartite(&ds.x, ds.n_users, ds.n_items)?;
        let zy = ds.z_train.matmul(&ds.y)?;
        let sums = zy.row_sums();
        let inv: Vec<f64> = sums
            .iter()
            .map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 })
            .collect();
        let ctx = Arc::new(zy.scale_rows(&inv));
        let mask: Vec<f64> = (0..ds.n_users)
            .map(|u| if ds.z_train.row_nnz(u) > 0 { 1.0 } else { 0.0 })
            .collect();
        Ok(ModelGraphs {
            hyper,
            group_item,
            user_item,
            ctx,
            member_mask: Tensor::vector(mask),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOpts {
    pub gamma: f64,
    /// Seed the user–item stack with items learned on the group–item graph.
    pub item_enhancement: bool,
    /// Apply the additive context correction to the item-level mean.
    pub context_enhancement: bool,
}

impl Default for ForwardOpts {
    fn default() -> Self {
        ForwardOpts {
            gamma: 1.0,
            item_enhancement: true,
            context_enhancement: true,
        }
    }
}

/// Every intermediate representation of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardState {
    pub u_s_hat: Tensor,
    pub g_s_hat: Tensor,
    pub g_v_hat: Tensor,
    pub v_hat: Tensor,
    pub u_v_mu: Tensor,
    pub v_hat_prime: Tensor,
    pub delta_u: Tensor,
    pub u_v_mu_c: Tensor,
    pub u_v_sigma: Tensor,
    pub u_v_hat: Tensor,
}

/// Sigmoid hypergraph propagation: N⁰ = [U‖G], Nˡ = σ(P·Nˡ⁻¹·Wˡ), split
/// back into user and group rows after the last layer.
pub fn hyperconv_forward(
    tape: &mut Tape,
    op: &HypergraphOperator,
    u_s: &Tensor,
    g_s: &Tensor,
    weights: &[Tensor],
) -> Result<(Tensor, Tensor)> {
    if weights.is_empty() {
        return Err(Error::Config("hypergraph propagation needs at least one layer".into()));
    }
    let mut h = tape.concat_rows(u_s, g_s)?;
    for w in weights {
        let prop = tape.spmm(&op.propagation, &h)?;
        let lin = tape.matmul(&prop, w)?;
        h = tape.sigmoid(&lin)?;
    }
    let u_hat = tape.slice_rows(&h, 0, op.n_users)?;
    let g_hat = tape.slice_rows(&h, op.n_users, op.n_groups)?;
    Ok((u_hat, g_hat))
}

/// One single-head attention layer over a bipartite edge list:
/// h'_i = Σ_{j∈in(i)} α_ij·(W·h_j) with α the per-destination softmax of
/// leaky-relu(aᵀ[W·h_i ‖ W·h_j]).
pub fn gat_layer(
    tape: &mut Tape,
    graph: &BipartiteGraph,
    h: &Tensor,
    layer: &GatLayerParams,
) -> Result<Tensor> {
    let n = graph.n_nodes();
    if h.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "gat_layer",
            lhs: h.shape().to_vec(),
            rhs: vec![n],
        });
    }
    let d = h.row_width();
    let hw = tape.matmul(h, &layer.weight)?;
    let a_dst = tape.slice_rows(&layer.attn, 0, d)?;
    let a_dst = tape.reshape(&a_dst, vec![d, 1])?;
    let a_src = tape.slice_rows(&layer.attn, d, d)?;
    let a_src = tape.reshape(&a_src, vec![d, 1])?;
    let dst_part = tape.matmul(&hw, &a_dst)?;
    let src_part = tape.matmul(&hw, &a_src)?;
    let dst_e = tape.gather_rows(&dst_part, &graph.edge_dst)?;
    let src_e = tape.gather_rows(&src_part, &graph.edge_src)?;
    let logits = tape.add(&dst_e, &src_e)?;
    let logits = tape.leaky_relu(&logits, LEAKY_SLOPE)?;
    let logits = tape.reshape(&logits, vec![graph.n_edges()])?;
    let alpha = tape.segment_softmax(&logits, &graph.edge_dst, n)?;
    let messages = tape.gather_rows(&hw, &graph.edge_src)?;
    let weighted = tape.scale_rows(&messages, &alpha)?;
    tape.segment_sum(&weighted, &graph.edge_dst, n)
}

fn mlp_forward(tape: &mut Tape, x: &Tensor, mlp: &MlpParams) -> Result<Tensor> {
    let h = tape.matmul(x, &mlp.w1)?;
    let h = tape.add_bias(&h, &mlp.b1)?;
    let h = tape.leaky_relu(&h, LEAKY_SLOPE)?;
    let o = tape.matmul(&h, &mlp.w2)?;
    tape.add_bias(&o, &mlp.b2)
}

/// Full forward pass. `eps` carries the standard-normal draw for the
/// reparameterized sample ([n_users × d]); pass `None` for inference, which
/// uses the mean directly.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    graphs: &ModelGraphs,
    opts: &ForwardOpts,
    eps: Option<&Tensor>,
) -> Result<ForwardState> {
    if opts.gamma < 0.0 {
        return Err(Error::Config(format!(
            "context weight gamma must be non-negative, got {}",
            opts.gamma
        )));
    }
    let dims = params.dims();
    let (n_users, n_items, n_groups, d) = (dims.n_users, dims.n_items, dims.n_groups, dims.d);

    let (u_s_hat, g_s_hat) =
        hyperconv_forward(tape, &graphs.hyper, &params.u_s, &params.g_s, &params.w_ug)?;

    // group-item stack
    let mut h = tape.concat_rows(&params.g_v, &params.v)?;
    for layer in &params.gat_gv {
        h = gat_layer(tape, &graphs.group_item, &h, layer)?;
    }
    let g_v_hat = tape.slice_rows(&h, 0, n_groups)?;
    let v_hat = tape.slice_rows(&h, n_groups, n_items)?;

    // user-item stack; enhanced item representations seed it unless ablated
    let mut h = if opts.item_enhancement {
        tape.concat_rows(&params.u_v, &v_hat)?
    } else {
        tape.concat_rows(&params.u_v, &params.v)?
    };
    for layer in &params.gat_uv {
        h = gat_layer(tape, &graphs.user_item, &h, layer)?;
    }
    let u_v_mu = tape.slice_rows(&h, 0, n_users)?;
    let v_hat_prime = tape.slice_rows(&h, n_users, n_items)?;

    // contextual enhancement; users with no training membership get a zero
    // increment since they have no context to subtract
    let (delta_u, u_v_mu_c) = if opts.context_enhancement {
        let proj = tape.matmul(&v_hat, &params.w_c)?;
        let ctx = tape.spmm(&graphs.ctx, &proj)?;
        let diff = tape.sub(&u_v_mu, &ctx)?;
        let delta_raw = mlp_forward(tape, &diff, &params.mlp_ctx)?;
        let delta = tape.scale_rows(&delta_raw, &graphs.member_mask)?;
        let scaled = tape.scale(&delta, opts.gamma)?;
        let mu_c = tape.add(&u_v_mu, &scaled)?;
        (delta, mu_c)
    } else {
        (Tensor::zeros(vec![n_users, d]), u_v_mu.clone())
    };

    // variance from the pre-context mean
    let sigma_raw = mlp_forward(tape, &u_v_mu, &params.mlp_sigma)?;
    let sigma_sp = tape.softplus(&sigma_raw)?;
    let u_v_sigma = tape.add_scalar(&sigma_sp, SIGMA_FLOOR)?;

    let u_v_hat = match eps {
        Some(e) => {
            if e.shape() != [n_users, d] {
                return Err(Error::ShapeMismatch {
                    op: "forward",
                    lhs: e.shape().to_vec(),
                    rhs: vec![n_users, d],
                });
            }
            let noise = tape.mul(&u_v_sigma, e)?;
            tape.add(&u_v_mu_c, &noise)?
        }
        None => u_v_mu_c.clone(),
    };

    Ok(ForwardState {
        u_s_hat,
        g_s_hat,
        g_v_hat,
        v_hat,
        u_v_mu,
        v_hat_prime,
        delta_u,
        u_v_mu_c,
        u_v_sigma,
        u_v_hat,
    })
}

/// Score every (user, group) pair: the dot product of concatenated
/// group-level and item-level representations, which decomposes into the
/// sum of the two branch dot products. Branch flags implement the
/// interest-ablation variants by zeroing a branch's contribution.
pub fn score_all(
    tape: &mut Tape,
    state: &ForwardState,
    include_group_level: bool,
    include_item_level: bool,
) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    if include_group_level {
        let gt = tape.transpose(&state.g_s_hat)?;
        total = Some(tape.matmul(&state.u_s_hat, &gt)?);
    }
    if include_item_level {
        let gt = tape.transpose(&state.g_v_hat)?;
        let item = tape.matmul(&state.u_v_hat, &gt)?;
        total = Some(match total {
            Some(t) => tape.add(&t, &item)?,
            None => item,
        });
    }
    total.ok_or_else(|| Error::Config("both interest branches disabled".into()))
}

/// Scores for explicit (user, group) index pairs.
pub fn score_pairs(
    tape: &mut Tape,
    state: &ForwardState,
    users: &Arc<Vec<usize>>,
    groups: &Arc<Vec<usize>>,
    include_group_level: bool,
    include_item_level: bool,
) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    let branch = |tape: &mut Tape, u_rep: &Tensor, g_rep: &Tensor| -> Result<Tensor> {
        let gu = tape.gather_rows(u_rep, users)?;
        let gg = tape.gather_rows(g_rep, groups)?;
        let prod = tape.mul(&gu, &gg)?;
        tape.row_sum(&prod)
    };
    if include_group_level {
        total = Some(branch(tape, &state.u_s_hat, &state.g_s_hat)?);
    }
    if include_item_level {
        let item = branch(tape, &state.u_v_hat, &state.g_v_hat)?;
        total = Some(match total {
            Some(t) => tape.add(&t, &item)?,
            None => item,
        });
    }
    total.ok_or_else(|| Error::Config("both interest branches disabled".into()))
}
