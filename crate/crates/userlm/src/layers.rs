//! Reusable model building blocks on top of the autodiff graph:
//! a named parameter store, per-pass graph bindings, and the standard
//! layers (linear, layer norm, multi-head attention, gated MLP).
//!
//! The graph is rebuilt every forward pass, so parameters live outside it in
//! a [`ParamSet`] and are attached to a particular graph through a
//! [`Binding`], which inserts each used parameter as a leaf exactly once.
//! Reusing a parameter twice in one pass therefore accumulates its gradient
//! automatically (this is how tied embeddings work).

use crate::rng::RngState;
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::{BoolMat, Tensor, TensorError};
use std::collections::HashMap;

/// Epsilon added to the variance in every layer norm.
pub const LN_EPS: f64 = 1e-6;

/// Handle to one named tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamRef(pub(crate) usize);

/// Named, ordered store of trainable tensors. Order is creation order and is
/// the canonical order for checkpoints and optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique name. Duplicate names are a
    /// programming error, not a runtime condition.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamRef {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(t);
        ParamRef(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of trainable scalars across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, r: ParamRef) -> &Tensor {
        &self.tensors[r.0]
    }

    pub fn get_mut(&mut self, r: ParamRef) -> &mut Tensor {
        &mut self.tensors[r.0]
    }

    pub fn name(&self, r: ParamRef) -> &str {
        &self.names[r.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamRef> {
        self.index.get(name).copied().map(ParamRef)
    }

    /// All handles in canonical (creation) order.
    pub fn refs(&self) -> impl Iterator<Item = ParamRef> + '_ {
        (0..self.tensors.len()).map(ParamRef)
    }
}

/// Associates parameters with leaves of one particular graph, inserting each
/// parameter lazily on first use so untouched parameters cost nothing.
pub struct Binding<'p> {
    params: &'p ParamSet,
    nodes: Vec<Option<NodeId>>,
}

impl<'p> Binding<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Binding { params, nodes: vec![None; params.len()] }
    }

    /// Binding whose leaves are supplied up front, in [`ParamSet`] order.
    /// Used by gradient checks, which need control over the leaf tensors.
    pub fn prebound(params: &'p ParamSet, nodes: &[NodeId]) -> Self {
        assert_eq!(nodes.len(), params.len(), "one node per parameter");
        Binding { params, nodes: nodes.iter().copied().map(Some).collect() }
    }

    /// Graph leaf for this parameter, created on first request and shared by
    /// every later request in the same pass.
    pub fn node(&mut self, g: &mut Graph, r: ParamRef) -> NodeId {
        if let Some(id) = self.nodes[r.0] {
            return id;
        }
        let id = g.param(self.params.get(r).clone());
        self.nodes[r.0] = Some(id);
        id
    }

    /// Gradients after `backward`, aligned with [`ParamSet`] order. Entries
    /// are `None` for parameters that never entered this graph.
    pub fn gradients(&self, g: &Graph) -> Vec<Option<Vec<f64>>> {
        self.nodes
            .iter()
            .map(|slot| slot.and_then(|id| g.grad_data(id).map(<[f64]>::to_vec)))
            .collect()
    }
}

/// Finite-difference gradient check over every tensor in a [`ParamSet`].
///
/// `build` re-runs the model forward pass against whatever parameter values
/// the checker supplies through the binding, returning the scalar loss node.
/// Convenience wrapper over [`grad_check`](crate::tensor::gradcheck::grad_check)
/// so whole models can be checked without hand-wiring their parameters.
pub fn param_grad_check(
    params: &ParamSet,
    build: &mut dyn FnMut(&mut Graph, &mut Binding) -> Result<NodeId, TensorError>,
    epsilon: f64,
) -> Result<crate::tensor::gradcheck::GradReport, TensorError> {
    let inputs: Vec<(String, Tensor)> = params
        .refs()
        .map(|r| (params.name(r).to_string(), params.get(r).clone()))
        .collect();
    crate::tensor::gradcheck::grad_check(
        &mut |g, ids| {
            let mut bind = Binding::prebound(params, ids);
            build(g, &mut bind)
        },
        &inputs,
        epsilon,
    )
}

/// Matrix of independent normal draws, row-major fill order.
pub fn normal_matrix(rng: &mut RngState, rows: usize, cols: usize, std: f64) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.next_normal() * std).collect();
    Tensor::new(vec![rows, cols], data).expect("shape/product consistent by construction")
}

fn fan_in_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

// ---- linear ----

#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub w: ParamRef,
    pub b: ParamRef,
}

impl LinearParams {
    /// Weight `[fan_in, fan_out]` drawn N(0, 1/fan_in), bias zeros.
    pub fn init(
        ps: &mut ParamSet,
        rng: &mut RngState,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let w = ps.add(format!("{prefix}.w"), normal_matrix(rng, fan_in, fan_out, fan_in_std(fan_in)));
        let b = ps.add(
            format!("{prefix}.b"),
            Tensor::zeros(vec![fan_out]),
        );
        LinearParams { w, b }
    }

    pub fn scalar_count(fan_in: usize, fan_out: usize) -> usize {
        fan_in * fan_out + fan_out
    }
}

pub fn linear(
    g: &mut Graph,
    bind: &mut Binding,
    p: &LinearParams,
    x: NodeId,
) -> Result<NodeId, TensorError> {
    let w = bind.node(g, p.w);
    let b = bind.node(g, p.b);
    let xw = g.matmul(x, w)?;
    g.bias_add(xw, b)
}

// ---- layer norm ----

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gain: ParamRef,
    pub bias: ParamRef,
}

impl LayerNormParams {
    /// Gain ones, bias zeros. Consumes no random draws.
    pub fn init(ps: &mut ParamSet, prefix: &str, width: usize) -> Self {
        let gain = ps.add(
            format!("{prefix}.gain"),
            Tensor::full(vec![width], 1.0),
        );
        let bias = ps.add(
            format!("{prefix}.bias"),
            Tensor::zeros(vec![width]),
        );
        LayerNormParams { gain, bias }
    }

    pub fn scalar_count(width: usize) -> usize {
        2 * width
    }
}

pub fn layer_norm(
    g: &mut Graph,
    bind: &mut Binding,
    p: &LayerNormParams,
    x: NodeId,
) -> Result<NodeId, TensorError> {
    let gain = bind.node(g, p.gain);
    let bias = bind.node(g, p.bias);
    g.layer_norm(x, gain, bias, LN_EPS)
}

// ---- attention ----

/// Single-head scaled dot-product attention over raw nodes:
/// `softmax(q kᵀ / √d) v`, where `d` is the column count of `q`.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    mask: Option<&BoolMat>,
) -> Result<NodeId, TensorError> {
    let (_, d) = g.value(q).dims2()?;
    if d == 0 {
        return Err(TensorError::BadDimension { msg: "attention over width 0".into() });
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (d as f64).sqrt());
    let probs = match mask {
        Some(m) => g.masked_softmax(scaled, m)?,
        None => g.softmax_lastdim(scaled)?,
    };
    g.matmul(probs, v)
}

/// Projection nodes for one attention layer, already inserted into a graph.
/// Lets gradient checks drive attention without a [`ParamSet`].
///
/// The key projection has no bias: shifting every key by a constant vector
/// adds the same amount to every score in a softmax row, which the softmax
/// cancels exactly — a key bias would be a parameter with an identically
/// zero gradient.
#[derive(Debug, Clone, Copy)]
pub struct AttnNodes {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
}

/// Multi-head attention from raw nodes. `x_q` is `[n_q, width_in]`, `x_kv`
/// is `[n_k, width_in]`; Q/K/V project to an inner width split evenly across
/// `heads`, each head attends with scale `1/√d_head`, and the concatenated
/// contexts are projected back out.
pub fn attention_from_nodes(
    g: &mut Graph,
    nodes: AttnNodes,
    heads: usize,
    x_q: NodeId,
    x_kv: NodeId,
    mask: Option<&BoolMat>,
) -> Result<NodeId, TensorError> {
    let (_, d_inner) = g.value(nodes.wq).dims2()?;
    if heads == 0 || d_inner % heads != 0 {
        return Err(TensorError::BadDimension {
            msg: format!("heads {heads} must divide attention width {d_inner}"),
        });
    }
    let d_head = d_inner / heads;

    let q_all = {
        let xq = g.matmul(x_q, nodes.wq)?;
        g.bias_add(xq, nodes.bq)?
    };
    let k_all = g.matmul(x_kv, nodes.wk)?;
    let v_all = {
        let xv = g.matmul(x_kv, nodes.wv)?;
        g.bias_add(xv, nodes.bv)?
    };

    let mut contexts = Vec::with_capacity(heads);
    for h in 0..heads {
        let q_h = g.slice_cols(q_all, h * d_head, d_head)?;
        let k_h = g.slice_cols(k_all, h * d_head, d_head)?;
        let v_h = g.slice_cols(v_all, h * d_head, d_head)?;
        contexts.push(scaled_dot_attention(g, q_h, k_h, v_h, mask)?);
    }
    let ctx = g.concat_cols(&contexts)?;
    let out = g.matmul(ctx, nodes.wo)?;
    g.bias_add(out, nodes.bo)
}

#[derive(Debug, Clone, Copy)]
pub struct AttnParams {
    pub q: LinearParams,
    /// Key projection weight; see [`AttnNodes`] for why it has no bias.
    pub k_w: ParamRef,
    pub v: LinearParams,
    pub o: LinearParams,
    pub heads: usize,
}

impl AttnParams {
    /// Q/K/V project `width_in → d_inner`, output projects
    /// `d_inner → width_out`. `heads` must divide `d_inner`.
    pub fn init(
        ps: &mut ParamSet,
        rng: &mut RngState,
        prefix: &str,
        width_in: usize,
        d_inner: usize,
        width_out: usize,
        heads: usize,
    ) -> Result<Self, TensorError> {
        if heads == 0 || d_inner % heads != 0 {
            return Err(TensorError::BadDimension {
                msg: format!("heads {heads} must divide attention width {d_inner}"),
            });
        }
        Ok(AttnParams {
            q: LinearParams::init(ps, rng, &format!("{prefix}.q"), width_in, d_inner),
            k_w: ps.add(
                format!("{prefix}.k.w"),
                normal_matrix(rng, width_in, d_inner, fan_in_std(width_in)),
            ),
            v: LinearParams::init(ps, rng, &format!("{prefix}.v"), width_in, d_inner),
            o: LinearParams::init(ps, rng, &format!("{prefix}.o"), d_inner, width_out),
            heads,
        })
    }

    pub fn scalar_count(width_in: usize, d_inner: usize, width_out: usize) -> usize {
        2 * LinearParams::scalar_count(width_in, d_inner)
            + width_in * d_inner
            + LinearParams::scalar_count(d_inner, width_out)
    }

    fn nodes(&self, g: &mut Graph, bind: &mut Binding) -> AttnNodes {
        AttnNodes {
            wq: bind.node(g, self.q.w),
            bq: bind.node(g, self.q.b),
            wk: bind.node(g, self.k_w),
            wv: bind.node(g, self.v.w),
            bv: bind.node(g, self.v.b),
            wo: bind.node(g, self.o.w),
            bo: bind.node(g, self.o.b),
        }
    }
}

pub fn attention(
    g: &mut Graph,
    bind: &mut Binding,
    p: &AttnParams,
    x_q: NodeId,
    x_kv: NodeId,
    mask: Option<&BoolMat>,
) -> Result<NodeId, TensorError> {
    let nodes = p.nodes(g, bind);
    attention_from_nodes(g, nodes, p.heads, x_q, x_kv, mask)
}

// ---- gated MLP ----

/// Raw nodes for a gated MLP, for gradient checks.
#[derive(Debug, Clone, Copy)]
pub struct MlpNodes {
    pub wg: NodeId,
    pub bg: NodeId,
    pub wu: NodeId,
    pub bu: NodeId,
    pub wd: NodeId,
    pub bd: NodeId,
}

/// Gated MLP from raw nodes: `down(gelu(gate(x)) ⊙ up(x))`.
pub fn gated_mlp_from_nodes(
    g: &mut Graph,
    nodes: MlpNodes,
    x: NodeId,
) -> Result<NodeId, TensorError> {
    let gate = {
        let xg = g.matmul(x, nodes.wg)?;
        g.bias_add(xg, nodes.bg)?
    };
    let up = {
        let xu = g.matmul(x, nodes.wu)?;
        g.bias_add(xu, nodes.bu)?
    };
    let act = g.gelu(gate);
    let mixed = g.mul(act, up)?;
    let down = g.matmul(mixed, nodes.wd)?;
    g.bias_add(down, nodes.bd)
}

#[derive(Debug, Clone, Copy)]
pub struct MlpParams {
    pub gate: LinearParams,
    pub up: LinearParams,
    pub down: LinearParams,
}

impl MlpParams {
    pub fn init(
        ps: &mut ParamSet,
        rng: &mut RngState,
        prefix: &str,
        width: usize,
        hidden: usize,
    ) -> Self {
        MlpParams {
            gate: LinearParams::init(ps, rng, &format!("{prefix}.gate"), width, hidden),
            up: LinearParams::init(ps, rng, &format!("{prefix}.up"), width, hidden),
            down: LinearParams::init(ps, rng, &format!("{prefix}.down"), hidden, width),
        }
    }

    pub fn scalar_count(width: usize, hidden: usize) -> usize {
        2 * LinearParams::scalar_count(width, hidden)
            + LinearParams::scalar_count(hidden, width)
    }
}

pub fn gated_mlp(
    g: &mut Graph,
    bind: &mut Binding,
    p: &MlpParams,
    x: NodeId,
) -> Result<NodeId, TensorError> {
    let nodes = MlpNodes {
        wg: bind.node(g, p.gate.w),
        bg: bind.node(g, p.gate.b),
        wu: bind.node(g, p.up.w),
        bu: bind.node(g, p.up.b),
        wd: bind.node(g, p.down.w),
        bd: bind.node(g, p.down.b),
    };
    gated_mlp_from_nodes(g, nodes, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check;
    use crate::tensor::graph::gelu_scalar;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn single_key_attention_returns_the_value_row() {
        let mut g = Graph::new();
        let q = g.constant(t2(1, 2, &[3.0, -1.0]));
        let k = g.constant(t2(1, 2, &[0.5, 0.25]));
        let v = g.constant(t2(1, 3, &[7.0, -2.0, 0.125]));
        let out = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        assert_eq!(g.value(out).data(), &[7.0, -2.0, 0.125]);
    }

    #[test]
    fn zero_scores_average_the_values() {
        let mut g = Graph::new();
        let q = g.constant(t2(1, 2, &[0.0, 0.0]));
        let k = g.constant(t2(3, 2, &[1.0, 2.0, -3.0, 0.5, 10.0, -4.0]));
        let v = g.constant(t2(3, 1, &[1.0, 2.0, 6.0]));
        let out = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        assert!((g.value(out).data()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn logit_gap_ln3_splits_attention_one_to_three() {
        // d = 1 so the 1/√d scale is 1; scores are exactly [0, ln 3],
        // so the weights are [1/4, 3/4].
        let mut g = Graph::new();
        let q = g.constant(t2(1, 1, &[1.0]));
        let k = g.constant(t2(2, 1, &[0.0, 3.0_f64.ln()]));
        let v = g.constant(t2(2, 1, &[4.0, 8.0]));
        let out = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        assert!((g.value(out).data()[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn param_reused_twice_is_one_leaf_with_accumulated_gradient() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", t2(1, 1, &[3.0]));
        let mut g = Graph::new();
        let mut bind = Binding::new(&ps);
        let a = bind.node(&mut g, w);
        let b = bind.node(&mut g, w);
        assert_eq!(a, b);
        // y = w·w → dy/dw = 2w = 6, accumulated across both uses.
        let prod = g.mul(a, b).unwrap();
        let y = g.sum_all(prod);
        g.backward(y).unwrap();
        let grads = bind.gradients(&g);
        assert_eq!(grads[0].as_deref(), Some(&[6.0][..]));
    }

    #[test]
    fn unbound_params_report_no_gradient() {
        let mut ps = ParamSet::new();
        let used = ps.add("used", t2(1, 1, &[2.0]));
        let _unused = ps.add("unused", t2(1, 1, &[5.0]));
        let mut g = Graph::new();
        let mut bind = Binding::new(&ps);
        let a = bind.node(&mut g, used);
        let y = g.sum_all(a);
        g.backward(y).unwrap();
        let grads = bind.gradients(&g);
        assert_eq!(grads[0].as_deref(), Some(&[1.0][..]));
        assert!(grads[1].is_none());
    }

    #[test]
    fn param_names_are_unique_and_findable() {
        let mut ps = ParamSet::new();
        let a = ps.add("block.w", t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(ps.find("block.w"), Some(a));
        assert_eq!(ps.find("missing"), None);
        assert_eq!(ps.name(a), "block.w");
        assert_eq!(ps.scalar_count(), 4);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_param_name_panics() {
        let mut ps = ParamSet::new();
        ps.add("w", t2(1, 1, &[0.0]));
        ps.add("w", t2(1, 1, &[0.0]));
    }

    #[test]
    fn linear_matches_manual_affine_map() {
        let mut ps = ParamSet::new();
        let p = LinearParams {
            w: ps.add("w", t2(2, 2, &[1.0, 2.0, 3.0, 4.0])),
            b: ps.add("b", Tensor::new(vec![2], vec![10.0, 20.0]).unwrap()),
        };
        let mut g = Graph::new();
        let mut bind = Binding::new(&ps);
        let x = g.constant(t2(1, 2, &[1.0, 1.0]));
        let y = linear(&mut g, &mut bind, &p, x).unwrap();
        assert_eq!(g.value(y).data(), &[14.0, 26.0]);
    }

    #[test]
    fn init_shapes_and_scalar_counts_line_up() {
        let mut ps = ParamSet::new();
        let mut rng = RngState::from_seed(1);
        let lin = LinearParams::init(&mut ps, &mut rng, "lin", 3, 5);
        assert_eq!(ps.get(lin.w).shape(), &[3, 5]);
        assert_eq!(ps.get(lin.b).shape(), &[5]);
        assert!(ps.get(lin.b).data().iter().all(|&v| v == 0.0));

        let ln = LayerNormParams::init(&mut ps, "ln", 4);
        assert!(ps.get(ln.gain).data().iter().all(|&v| v == 1.0));

        let attn = AttnParams::init(&mut ps, &mut rng, "attn", 6, 4, 6, 2).unwrap();
        assert_eq!(ps.get(attn.q.w).shape(), &[6, 4]);
        assert_eq!(ps.get(attn.o.w).shape(), &[4, 6]);

        let mlp = MlpParams::init(&mut ps, &mut rng, "mlp", 6, 8);
        assert_eq!(ps.get(mlp.down.w).shape(), &[8, 6]);

        let expected = LinearParams::scalar_count(3, 5)
            + LayerNormParams::scalar_count(4)
            + AttnParams::scalar_count(6, 4, 6)
            + MlpParams::scalar_count(6, 8);
        assert_eq!(ps.scalar_count(), expected);
    }

    #[test]
    fn heads_must_divide_inner_width() {
        let mut ps = ParamSet::new();
        let mut rng = RngState::from_seed(1);
        let err = AttnParams::init(&mut ps, &mut rng, "attn", 6, 4, 6, 3).unwrap_err();
        assert!(matches!(err, TensorError::BadDimension { .. }));
    }

    #[test]
    fn multi_head_with_identity_output_concatenates_per_head_attention() {
        // Identity Q/K/V/O projections make multi-head attention equal the
        // concatenation of single-head attention on column halves.
        let d = 4;
        let eye = {
            let mut data = vec![0.0; d * d];
            for i in 0..d {
                data[i * d + i] = 1.0;
            }
            t2(d, d, &data)
        };
        let zb = Tensor::zeros(vec![d]);
        let x = t2(
            3,
            d,
            &[0.5, -1.0, 2.0, 0.25, 1.5, 0.0, -0.5, 1.0, -2.0, 0.75, 0.1, -0.3],
        );

        let mut g = Graph::new();
        let xq = g.constant(x.clone());
        let nodes = AttnNodes {
            wq: g.constant(eye.clone()),
            bq: g.constant(zb.clone()),
            wk: g.constant(eye.clone()),
            wv: g.constant(eye.clone()),
            bv: g.constant(zb.clone()),
            wo: g.constant(eye.clone()),
            bo: g.constant(zb.clone()),
        };
        let multi = attention_from_nodes(&mut g, nodes, 2, xq, xq, None).unwrap();

        let mut expected = Vec::new();
        for h in 0..2 {
            let xh = g.slice_cols(xq, h * 2, 2).unwrap();
            let head = scaled_dot_attention(&mut g, xh, xh, xh, None).unwrap();
            expected.push(head);
        }
        let expected = g.concat_cols(&expected).unwrap();

        let got = g.value(multi).data().to_vec();
        let want = g.value(expected).data().to_vec();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn causal_mask_keeps_first_row_on_first_value() {
        let d = 2;
        let eye = t2(d, d, &[1.0, 0.0, 0.0, 1.0]);
        let zb = Tensor::zeros(vec![d]);
        let x = t2(3, d, &[1.0, 2.0, -3.0, 0.5, 4.0, -1.0]);
        let mask = BoolMat::causal(3);

        let mut g = Graph::new();
        let xq = g.constant(x);
        let nodes = AttnNodes {
            wq: g.constant(eye.clone()),
            bq: g.constant(zb.clone()),
            wk: g.constant(eye.clone()),
            wv: g.constant(eye.clone()),
            bv: g.constant(zb.clone()),
            wo: g.constant(eye.clone()),
            bo: g.constant(zb.clone()),
        };
        let out = attention_from_nodes(&mut g, nodes, 1, xq, xq, Some(&mask)).unwrap();
        // Row 0 sees only value row 0.
        let data = g.value(out).data();
        assert!((data[0] - 1.0).abs() < 1e-12);
        assert!((data[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gated_mlp_matches_manual_composition() {
        let mut g = Graph::new();
        let x = g.constant(t2(1, 2, &[0.5, -1.0]));
        let nodes = MlpNodes {
            wg: g.constant(t2(2, 3, &[0.2, -0.4, 1.0, 0.7, 0.3, -0.5])),
            bg: g.constant(Tensor::new(vec![3], vec![0.1, 0.0, -0.2]).unwrap()),
            wu: g.constant(t2(2, 3, &[1.0, 0.0, 0.5, -0.3, 0.8, 0.2])),
            bu: g.constant(Tensor::new(vec![3], vec![0.0, 0.25, 0.0]).unwrap()),
            wd: g.constant(t2(3, 2, &[0.6, -0.1, 0.2, 0.9, -0.7, 0.4])),
            bd: g.constant(Tensor::new(vec![2], vec![0.05, -0.05]).unwrap()),
        };
        let out = gated_mlp_from_nodes(&mut g, nodes, x).unwrap();

        // Manual: gate = xWg + bg, up = xWu + bu, out = (gelu(gate)⊙up)Wd + bd
        let gate = [
            0.5 * 0.2 + -1.0 * 0.7 + 0.1,
            0.5 * -0.4 + -1.0 * 0.3 + 0.0,
            0.5 * 1.0 + -1.0 * -0.5 - 0.2,
        ];
        let up = [
            0.5 * 1.0 + -1.0 * -0.3 + 0.0,
            0.5 * 0.0 + -1.0 * 0.8 + 0.25,
            0.5 * 0.5 + -1.0 * 0.2 + 0.0,
        ];
        let mixed: Vec<f64> = gate.iter().zip(&up).map(|(g_, u)| gelu_scalar(*g_) * u).collect();
        let want = [
            mixed[0] * 0.6 + mixed[1] * 0.2 + mixed[2] * -0.7 + 0.05,
            mixed[0] * -0.1 + mixed[1] * 0.9 + mixed[2] * 0.4 - 0.05,
        ];
        let got = g.value(out).data();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn multi_head_attention_gradient_checks() {
        let inputs = vec![
            ("x".to_string(), t2(3, 4, &[
                0.5, -1.0, 2.0, 0.25, 1.5, 0.0, -0.5, 1.0, -2.0, 0.75, 0.1, -0.3,
            ])),
            ("wq".to_string(), t2(4, 4, &[
                0.3, -0.2, 0.5, 0.1, -0.4, 0.6, 0.2, -0.1, 0.7, 0.05, -0.3, 0.4,
                0.15, -0.25, 0.35, -0.05,
            ])),
            ("wk".to_string(), t2(4, 4, &[
                -0.1, 0.4, -0.2, 0.3, 0.5, -0.3, 0.1, 0.2, -0.45, 0.25, 0.6, -0.15,
                0.05, 0.35, -0.5, 0.45,
            ])),
            ("wv".to_string(), t2(4, 4, &[
                0.2, 0.1, -0.3, 0.4, -0.2, 0.5, 0.15, -0.45, 0.3, -0.1, 0.25, 0.35,
                -0.05, 0.45, -0.4, 0.05,
            ])),
            ("wo".to_string(), t2(4, 2, &[
                0.6, -0.2, 0.1, 0.5, -0.4, 0.3, 0.25, -0.35,
            ])),
            ("bq".to_string(), Tensor::new(vec![4], vec![0.01, -0.02, 0.03, 0.04]).unwrap()),
            ("bo".to_string(), Tensor::new(vec![2], vec![0.1, -0.1]).unwrap()),
        ];
        let report = grad_check(
            &mut |g, ids| {
                let zb = g.constant(Tensor::zeros(vec![4]));
                let nodes = AttnNodes {
                    wq: ids[1],
                    bq: ids[5],
                    wk: ids[2],
                    wv: ids[3],
                    bv: zb,
                    wo: ids[4],
                    bo: ids[6],
                };
                let out = attention_from_nodes(g, nodes, 2, ids[0], ids[0], None)?;
                let sq = g.mul(out, out)?;
                Ok(g.sum_all(sq))
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(report.passes(1e-6), "{report}");
    }

    #[test]
    fn gated_mlp_gradient_checks() {
        let inputs = vec![
            ("x".to_string(), t2(2, 2, &[0.5, -1.0, 1.25, 0.75])),
            ("wg".to_string(), t2(2, 3, &[0.2, -0.4, 1.0, 0.7, 0.3, -0.5])),
            ("wu".to_string(), t2(2, 3, &[1.0, 0.0, 0.5, -0.3, 0.8, 0.2])),
            ("wd".to_string(), t2(3, 2, &[0.6, -0.1, 0.2, 0.9, -0.7, 0.4])),
            ("bg".to_string(), Tensor::new(vec![3], vec![0.1, 0.0, -0.2]).unwrap()),
        ];
        let report = grad_check(
            &mut |g, ids| {
                let zb3 = g.constant(Tensor::zeros(vec![3]));
                let zb2 = g.constant(Tensor::zeros(vec![2]));
                let nodes = MlpNodes {
                    wg: ids[1],
                    bg: ids[4],
                    wu: ids[2],
                    bu: zb3,
                    wd: ids[3],
                    bd: zb2,
                };
                let out = gated_mlp_from_nodes(g, nodes, ids[0])?;
                let sq = g.mul(out, out)?;
                Ok(g.sum_all(sq))
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(report.passes(1e-6), "{report}");
    }
}
