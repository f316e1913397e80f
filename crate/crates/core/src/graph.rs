//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operation records its
//! output value eagerly and, when any input requires gradients, a backward
//! closure that scatters the output gradient into the inputs' slots. Nodes
//! only ever reference earlier nodes, so walking the arena in reverse id
//! order is a valid reverse topological order.

use crate::scalar::Scalar;
use crate::tensor::{ShapeError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{op}: index {index} out of range {len}")]
    IndexRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

fn invalid(op: &'static str, msg: impl Into<String>) -> GraphError {
    GraphError::Invalid {
        op,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Feed-forward nonlinearity. One global default so the choice stays a
/// single-line swap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

pub const FFN_ACTIVATION: Activation = Activation::Gelu;

type BackFn<T> = Box<dyn Fn(&[T], &mut GradStore<T>)>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    back: Option<BackFn<T>>,
}

/// Gradient slots indexed by node id; allocated lazily on first accumulation.
pub struct GradStore<T: Scalar> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> GradStore<T> {
    fn slot(&mut self, id: NodeId, numel: usize) -> &mut [T] {
        let e = &mut self.slots[id.0];
        if e.is_none() {
            *e = Some(vec![T::zero(); numel]);
        }
        e.as_mut().unwrap()
    }

    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }
}

/// Result of [`Graph::backward`]: gradients of the root w.r.t. every leaf
/// that requires gradients. Interior-node gradients are dropped as soon as
/// they have been propagated.
pub struct Gradients<T: Scalar> {
    store: GradStore<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.store.get(id)
    }

    /// Gradient as a tensor of the given shape; zeros when the leaf was
    /// never reached by backpropagation.
    pub fn tensor(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        match self.store.get(id) {
            Some(g) => Tensor::new(shape.to_vec(), g.to_vec())
                .expect("gradient length always matches leaf shape"),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

enum Broadcast {
    Same,
    /// b is a row vector [n] applied to a [m,n].
    RowVec,
    /// b is a column [m,1] applied to a [m,n].
    ColVec,
    /// b is a single-element tensor.
    Scalar,
}

/// Resolves the supported broadcast forms of `b` onto `a`, or the swapped
/// orientation. Returns (kind, swapped).
fn resolve_broadcast(
    op: &'static str,
    sa: &[usize],
    sb: &[usize],
) -> Result<(Broadcast, bool), GraphError> {
    fn kind(sa: &[usize], sb: &[usize]) -> Option<Broadcast> {
        if sa == sb {
            return Some(Broadcast::Same);
        }
        if sb == [1] {
            return Some(Broadcast::Scalar);
        }
        if sa.len() == 2 && sb.len() == 1 && sb[0] == sa[1] {
            return Some(Broadcast::RowVec);
        }
        if sa.len() == 2 && sb.len() == 2 && sb[0] == sa[0] && sb[1] == 1 {
            return Some(Broadcast::ColVec);
        }
        None
    }
    if let Some(k) = kind(sa, sb) {
        return Ok((k, false));
    }
    if let Some(k) = kind(sb, sa) {
        return Ok((k, true));
    }
    Err(ShapeError::Mismatch {
        op,
        a: sa.to_vec(),
        b: sb.to_vec(),
    }
    .into())
}

/// Index of the broadcast operand's element feeding output position `idx`.
#[inline]
fn bcast_index(kind: &Broadcast, idx: usize, cols: usize) -> usize {
    match kind {
        Broadcast::Same => idx,
        Broadcast::RowVec => idx % cols,
        Broadcast::ColVec => idx / cols,
        Broadcast::Scalar => 0,
    }
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, back: Option<BackFn<T>>) -> NodeId {
        debug_assert!(back.is_none() || requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            back,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, None)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, false, None)
    }

    /// Propagates d(root)/d(node) to every gradient-requiring leaf.
    /// The root must be a scalar (single-element tensor).
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>, GraphError> {
        let root_shape = self.value(root).shape();
        if self.value(root).numel() != 1 {
            return Err(GraphError::NonScalarRoot(root_shape.to_vec()));
        }
        let mut store = GradStore {
            slots: vec![None; root.0 + 1],
        };
        if !self.requires_grad(root) {
            return Ok(Gradients { store });
        }
        store.slots[root.0] = Some(vec![T::one()]);
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(back) = &node.back else {
                continue; // leaf: keep its accumulated gradient
            };
            let Some(g) = store.slots[id].take() else {
                continue; // root does not depend on this node
            };
            back(&g, &mut store);
        }
        Ok(Gradients { store })
    }

    // ── elementwise / broadcast ──

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.add_sub_impl(a, b, false)
    }

    /// Same-shape subtraction (no broadcast forms needed by the model).
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(ShapeError::Mismatch {
                op: "sub",
                a: self.value(a).shape().to_vec(),
                b: self.value(b).shape().to_vec(),
            }
            .into());
        }
        self.add_sub_impl(a, b, true)
    }

    fn add_sub_impl(&mut self, a: NodeId, b: NodeId, negate_b: bool) -> Result<NodeId, GraphError> {
        let op: &'static str = if negate_b { "sub" } else { "add" };
        let (kind, swapped) =
            resolve_broadcast(op, self.value(a).shape(), self.value(b).shape())?;
        let (big, small) = if swapped { (b, a) } else { (a, b) };
        let bt = self.value(big).clone();
        let st = self.value(small).clone();
        let cols = *bt.shape().last().unwrap_or(&1);
        let sign = if negate_b { -T::one() } else { T::one() };
        let mut out = bt.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            let sv = st.data()[bcast_index(&kind, i, cols)];
            *o = if swapped {
                // small is `a`; sign applies to big (`b`)
                sv + sign * *o
            } else {
                *o + sign * sv
            };
        }
        let value = Tensor::new(bt.shape().to_vec(), out)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let back: Option<BackFn<T>> = if rg {
            let (big_rg, small_rg) = (self.requires_grad(big), self.requires_grad(small));
            let (big_n, small_n) = (bt.numel(), st.numel());
            // Gradient signs: out = big + sign*small (swap only relabels
            // which operand is which; sign always rides on `b` = on `small`
            // when !swapped, on `big` when swapped).
            let (big_sign, small_sign) = if swapped { (sign, T::one()) } else { (T::one(), sign) };
            Some(Box::new(move |g, store| {
                if big_rg {
                    let gb = store.slot(big, big_n);
                    for (gb_i, g_i) in gb.iter_mut().zip(g) {
                        *gb_i = *gb_i + big_sign * *g_i;
                    }
                }
                if small_rg {
                    let gs = store.slot(small, small_n);
                    for (i, g_i) in g.iter().enumerate() {
                        let j = bcast_index(&kind, i, cols);
                        gs[j] = gs[j] + small_sign * *g_i;
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (kind, swapped) =
            resolve_broadcast("mul", self.value(a).shape(), self.value(b).shape())?;
        let (big, small) = if swapped { (b, a) } else { (a, b) };
        let bt = self.value(big).clone();
        let st = self.value(small).clone();
        let cols = *bt.shape().last().unwrap_or(&1);
        let mut out = bt.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            *o = *o * st.data()[bcast_index(&kind, i, cols)];
        }
        let value = Tensor::new(bt.shape().to_vec(), out)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let back: Option<BackFn<T>> = if rg {
            let (big_rg, small_rg) = (self.requires_grad(big), self.requires_grad(small));
            let (big_n, small_n) = (bt.numel(), st.numel());
            Some(Box::new(move |g, store| {
                if big_rg {
                    let gb = store.slot(big, big_n);
                    for (i, g_i) in g.iter().enumerate() {
                        gb[i] = gb[i] + *g_i * st.data()[bcast_index(&kind, i, cols)];
                    }
                }
                if small_rg {
                    let gs = store.slot(small, small_n);
                    for (i, g_i) in g.iter().enumerate() {
                        let j = bcast_index(&kind, i, cols);
                        gs[j] = gs[j] + *g_i * bt.data()[i];
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let kt = T::from_f64(k);
        let at = self.value(a).clone();
        let out: Vec<T> = at.data().iter().map(|&v| v * kt).collect();
        let value = Tensor::new(at.shape().to_vec(), out).expect("same shape");
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            let n = at.numel();
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, n);
                for (ga_i, g_i) in ga.iter_mut().zip(g) {
                    *ga_i = *ga_i + kt * *g_i;
                }
            }))
        } else {
            None
        };
        self.push(value, rg, back)
    }

    // ── linear algebra ──

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let at = self.value(a).clone();
        let bt = self.value(b).clone();
        if at.rank() != 2 || bt.rank() != 2 || at.shape()[1] != bt.shape()[0] {
            return Err(ShapeError::Mismatch {
                op: "matmul",
                a: at.shape().to_vec(),
                b: bt.shape().to_vec(),
            }
            .into());
        }
        let (m, k) = (at.shape()[0], at.shape()[1]);
        let n = bt.shape()[1];
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            at.data(),
            k as isize,
            1,
            bt.data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
        );
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let back: Option<BackFn<T>> = if rg {
            let (a_rg, b_rg) = (self.requires_grad(a), self.requires_grad(b));
            Some(Box::new(move |g, store| {
                if a_rg {
                    // dA = G . B^T  (walk B transposed via strides)
                    let ga = store.slot(a, m * k);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        n as isize,
                        1,
                        bt.data(),
                        1,
                        n as isize,
                        T::one(),
                        ga,
                    );
                }
                if b_rg {
                    // dB = A^T . G
                    let gb = store.slot(b, k * n);
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        at.data(),
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        T::one(),
                        gb,
                    );
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    pub fn transpose2(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let at = self.value(a).clone();
        if at.rank() != 2 {
            return Err(ShapeError::Rank {
                expected: 2,
                shape: at.shape().to_vec(),
            }
            .into());
        }
        let (m, n) = (at.shape()[0], at.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = at.data()[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, m * n);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = ga[i * n + j] + g[j * m + i];
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, GraphError> {
        let value = self.value(a).reshaped(shape)?;
        let rg = self.requires_grad(a);
        let n = value.numel();
        let back: Option<BackFn<T>> = if rg {
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, n);
                for (ga_i, g_i) in ga.iter_mut().zip(g) {
                    *ga_i = *ga_i + *g_i;
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    pub fn slice_rows(&mut self, a: NodeId, r0: usize, r1: usize) -> Result<NodeId, GraphError> {
        let at = self.value(a);
        if at.rank() != 2 {
            return Err(ShapeError::Rank {
                expected: 2,
                shape: at.shape().to_vec(),
            }
            .into());
        }
        let (m, n) = (at.shape()[0], at.shape()[1]);
        if r0 >= r1 || r1 > m {
            return Err(invalid(
                "slice_rows",
                format!("row range {r0}..{r1} invalid for {m} rows"),
            ));
        }
        let out = at.data()[r0 * n..r1 * n].to_vec();
        let value = Tensor::new(vec![r1 - r0, n], out)?;
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, m * n);
                for (ga_i, g_i) in ga[r0 * n..r1 * n].iter_mut().zip(g) {
                    *ga_i = *ga_i + *g_i;
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    pub fn slice_cols(&mut self, a: NodeId, c0: usize, c1: usize) -> Result<NodeId, GraphError> {
        let at = self.value(a);
        if at.rank() != 2 {
            return Err(ShapeError::Rank {
                expected: 2,
                shape: at.shape().to_vec(),
            }
            .into());
        }
        let (m, n) = (at.shape()[0], at.shape()[1]);
        if c0 >= c1 || c1 > n {
            return Err(invalid(
                "slice_cols",
                format!("column range {c0}..{c1} invalid for {n} columns"),
            ));
        }
        let w = c1 - c0;
        let mut out = vec![T::zero(); m * w];
        for i in 0..m {
            out[i * w..(i + 1) * w].copy_from_slice(&at.data()[i * n + c0..i * n + c1]);
        }
        let value = Tensor::new(vec![m, w], out)?;
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, m * n);
                for i in 0..m {
                    for j in 0..w {
                        ga[i * n + c0 + j] = ga[i * n + c0 + j] + g[i * w + j];
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        if parts.is_empty() {
            return Err(invalid("concat_cols", "no inputs"));
        }
        let m = self.value(parts[0]).shape().first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != m {
                return Err(ShapeError::Mismatch {
                    op: "concat_cols",
                    a: vec![m, 0],
                    b: s.to_vec(),
                }
                .into());
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); m * total];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pd = self.value(p).data();
            for i in 0..m {
                out[i * total + col..i * total + col + w]
                    .copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            col += w;
        }
        let value = Tensor::new(vec![m, total], out)?;
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        let back: Option<BackFn<T>> = if rg {
            let spans: Vec<(NodeId, usize, usize, bool)> = {
                let mut col = 0;
                parts
                    .iter()
                    .zip(&widths)
                    .map(|(&p, &w)| {
                        let s = (p, col, w, self.requires_grad(p));
                        col += w;
                        s
                    })
                    .collect()
            };
            Some(Box::new(move |g, store| {
                for &(p, c0, w, p_rg) in &spans {
                    if !p_rg {
                        continue;
                    }
                    let gp = store.slot(p, m * w);
                    for i in 0..m {
                        for j in 0..w {
                            gp[i * w + j] = gp[i * w + j] + g[i * total + c0 + j];
                        }
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    /// Row lookup: `out[r] = table[idx[r]]`. Serves embedding lookups.
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId, GraphError> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(ShapeError::Rank {
                expected: 2,
                shape: tt.shape().to_vec(),
            }
            .into());
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        for &i in idx {
            if i >= v {
                return Err(GraphError::IndexRange {
                    op: "gather_rows",
                    index: i,
                    len: v,
                });
            }
        }
        let mut out = vec![T::zero(); idx.len() * d];
        for (r, &i) in idx.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&tt.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![idx.len(), d], out)?;
        let rg = self.requires_grad(table);
        let back: Option<BackFn<T>> = if rg {
            let idx = idx.to_vec();
            Some(Box::new(move |g, store| {
                let gt = store.slot(table, v * d);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] = gt[i * d + j] + g[r * d + j];
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    /// Sliding-window patch extraction on a [M, L] signal. Patch `t` covers
    /// timesteps [t*stride, t*stride+patch_len); row layout is channel-major
    /// then time: out[t, m*patch_len + j] = a[m, t*stride + j].
    pub fn patchify(
        &mut self,
        a: NodeId,
        patch_len: usize,
        stride: usize,
    ) -> Result<NodeId, GraphError> {
        let at = self.value(a).clone();
        if at.rank() != 2 {
            return Err(ShapeError::Rank {
                expected: 2,
                shape: at.shape().to_vec(),
            }
            .into());
        }
        let (m, l) = (at.shape()[0], at.shape()[1]);
        if patch_len == 0 || stride == 0 {
            return Err(invalid("patchify", "patch_len and stride must be >= 1"));
        }
        if l < patch_len {
            return Err(invalid(
                "patchify",
                format!(
                    "sequence length {l} shorter than patch length {patch_len}; \
                     pad the signal or choose a shorter patch"
                ),
            ));
        }
        let n_patches = (l - patch_len) / stride + 1;
        let width = m * patch_len;
        let mut out = vec![T::zero(); n_patches * width];
        for t in 0..n_patches {
            for ch in 0..m {
                let src = ch * l + t * stride;
                let dst = t * width + ch * patch_len;
                out[dst..dst + patch_len].copy_from_slice(&at.data()[src..src + patch_len]);
            }
        }
        let value = Tensor::new(vec![n_patches, width], out)?;
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, m * l);
                for t in 0..n_patches {
                    for ch in 0..m {
                        let src = t * width + ch * patch_len;
                        let dst = ch * l + t * stride;
                        for j in 0..patch_len {
                            ga[dst + j] = ga[dst + j] + g[src + j];
                        }
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    /// Grouped 1-D convolution with same-length zero padding.
    /// x: [C_in, L]; w: [C_out, C_in/groups, K] (K odd); bias: [C_out].
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        groups: usize,
    ) -> Result<NodeId, GraphError> {
        let xt = self.value(x).clone();
        let wt = self.value(w).clone();
        if xt.rank() != 2 {
            return Err(ShapeError::Rank {
                expected: 2,
                shape: xt.shape().to_vec(),
            }
            .into());
        }
        if wt.rank() != 3 {
            return Err(ShapeError::Rank {
                expected: 3,
                shape: wt.shape().to_vec(),
            }
            .into());
        }
        let (c_in, l) = (xt.shape()[0], xt.shape()[1]);
        let (c_out, c_per_g, k) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(invalid(
                "conv1d",
                format!("groups {groups} must divide C_in {c_in} and C_out {c_out}"),
            ));
        }
        if c_per_g != c_in / groups {
            return Err(invalid(
                "conv1d",
                format!(
                    "weight expects {c_per_g} channels per group, input provides {}",
                    c_in / groups
                ),
            ));
        }
        if k % 2 == 0 {
            return Err(invalid(
                "conv1d",
                format!("kernel size {k} must be odd for same-length padding"),
            ));
        }
        let bt = bias.map(|b| self.value(b).clone());
        if let Some(ref b) = bt {
            if b.shape() != [c_out] {
                return Err(ShapeError::Mismatch {
                    op: "conv1d bias",
                    a: vec![c_out],
                    b: b.shape().to_vec(),
                }
                .into());
            }
        }
        let off = k / 2;
        let out_per_g = c_out / groups;
        let mut out = vec![T::zero(); c_out * l];
        for oc in 0..c_out {
            let grp = oc / out_per_g;
            let base_in = grp * c_per_g;
            let orow = &mut out[oc * l..(oc + 1) * l];
            if let Some(ref b) = bt {
                let bv = b.data()[oc];
                orow.iter_mut().for_each(|o| *o = bv);
            }
            for icg in 0..c_per_g {
                let xrow = &xt.data()[(base_in + icg) * l..(base_in + icg + 1) * l];
                let wrow = &wt.data()[(oc * c_per_g + icg) * k..(oc * c_per_g + icg + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    // out[l'] += w[kk] * x[l' + kk - off] over the valid span
                    let shift = kk as isize - off as isize;
                    let (o0, x0) = if shift < 0 {
                        ((-shift) as usize, 0usize)
                    } else {
                        (0usize, shift as usize)
                    };
                    let span = l - o0.max(x0);
                    let ow = &mut orow[o0..o0 + span];
                    let xw = &xrow[x0..x0 + span];
                    for (o, &xv) in ow.iter_mut().zip(xw) {
                        *o = *o + wv * xv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![c_out, l], out)?;
        let rg = self.requires_grad(x)
            || self.requires_grad(w)
            || bias.map(|b| self.requires_grad(b)).unwrap_or(false);
        let back: Option<BackFn<T>> = if rg {
            let x_rg = self.requires_grad(x);
            let w_rg = self.requires_grad(w);
            let b_rg = bias.map(|b| self.requires_grad(b)).unwrap_or(false);
            Some(Box::new(move |g, store| {
                if x_rg {
                    let gx = store.slot(x, c_in * l);
                    for oc in 0..c_out {
                        let grp = oc / out_per_g;
                        let base_in = grp * c_per_g;
                        let grow = &g[oc * l..(oc + 1) * l];
                        for icg in 0..c_per_g {
                            let wrow = &wt.data()
                                [(oc * c_per_g + icg) * k..(oc * c_per_g + icg + 1) * k];
                            let gxrow = &mut gx[(base_in + icg) * l..(base_in + icg + 1) * l];
                            for (kk, &wv) in wrow.iter().enumerate() {
                                let shift = kk as isize - off as isize;
                                let (o0, x0) = if shift < 0 {
                                    ((-shift) as usize, 0usize)
                                } else {
                                    (0usize, shift as usize)
                                };
                                let span = l - o0.max(x0);
                                let gw_ = &grow[o0..o0 + span];
                                let gxw = &mut gxrow[x0..x0 + span];
                                for (gx_i, &g_i) in gxw.iter_mut().zip(gw_) {
                                    *gx_i = *gx_i + wv * g_i;
                                }
                            }
                        }
                    }
                }
                if w_rg {
                    let gw = store.slot(w, c_out * c_per_g * k);
                    for oc in 0..c_out {
                        let grp = oc / out_per_g;
                        let base_in = grp * c_per_g;
                        let grow = &g[oc * l..(oc + 1) * l];
                        for icg in 0..c_per_g {
                            let xrow = &xt.data()[(base_in + icg) * l..(base_in + icg + 1) * l];
                            for kk in 0..k {
                                let shift = kk as isize - off as isize;
                                let (o0, x0) = if shift < 0 {
                                    ((-shift) as usize, 0usize)
                                } else {
                                    (0usize, shift as usize)
                                };
                                let span = l - o0.max(x0);
                                let mut acc = T::zero();
                                for (g_i, x_i) in
                                    grow[o0..o0 + span].iter().zip(&xrow[x0..x0 + span])
                                {
                                    acc = acc + *g_i * *x_i;
                                }
                                let wi = (oc * c_per_g + icg) * k + kk;
                                gw[wi] = gw[wi] + acc;
                            }
                        }
                    }
                }
                if b_rg {
                    let b = bias.expect("b_rg implies bias present");
                    let gb = store.slot(b, c_out);
                    for oc in 0..c_out {
                        let mut acc = T::zero();
                        for &g_i in &g[oc * l..(oc + 1) * l] {
                            acc = acc + g_i;
                        }
                        gb[oc] = gb[oc] + acc;
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    // ── nonlinearities ──

    pub fn activation(&mut self, act: Activation, a: NodeId) -> NodeId {
        match act {
            Activation::Relu => self.relu(a),
            Activation::Gelu => self.gelu(a),
        }
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let at = self.value(a).clone();
        let out: Vec<T> = at
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let value = Tensor::new(at.shape().to_vec(), out).expect("same shape");
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            let n = at.numel();
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, n);
                for (i, g_i) in g.iter().enumerate() {
                    if at.data()[i] > T::zero() {
                        ga[i] = ga[i] + *g_i;
                    }
                }
            }))
        } else {
            None
        };
        self.push(value, rg, back)
    }

    /// Tanh-approximated GELU: 0.5 x (1 + tanh(√(2/π) (x + 0.044715 x³))).
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let at = self.value(a).clone();
        let ca = T::from_f64(0.7978845608028654); // sqrt(2/pi)
        let cb = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let three = T::from_f64(3.0);
        let gelu_of = move |x: T| {
            let u = ca * (x + cb * x * x * x);
            half * x * (T::one() + u.tanh())
        };
        let out: Vec<T> = at.data().iter().map(|&v| gelu_of(v)).collect();
        let value = Tensor::new(at.shape().to_vec(), out).expect("same shape");
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            let n = at.numel();
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, n);
                for (i, g_i) in g.iter().enumerate() {
                    let x = at.data()[i];
                    let u = ca * (x + cb * x * x * x);
                    let t = u.tanh();
                    let sech2 = T::one() - t * t;
                    let du = ca * (T::one() + three * cb * x * x);
                    let d = half * (T::one() + t) + half * x * sech2 * du;
                    ga[i] = ga[i] + *g_i * d;
                }
            }))
        } else {
            None
        };
        self.push(value, rg, back)
    }

    // ── row-wise normalizations ──

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let at = self.value(a);
        if at.rank() != 2 {
            return Err(ShapeError::Rank {
                expected: 2,
                shape: at.shape().to_vec(),
            }
            .into());
        }
        let (m, n) = (at.shape()[0], at.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &at.data()[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (v - mx).exp();
                sum = sum + *o;
            }
            for o in &mut out[i * n..(i + 1) * n] {
                *o = *o / sum;
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            let y = value.clone();
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, m * n);
                for i in 0..m {
                    let yr = &y.data()[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mut dot = T::zero();
                    for (y_j, g_j) in yr.iter().zip(gr) {
                        dot = dot + *y_j * *g_j;
                    }
                    for j in 0..n {
                        ga[i * n + j] = ga[i * n + j] + yr[j] * (gr[j] - dot);
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let at = self.value(a);
        if at.rank() != 2 {
            return Err(ShapeError::Rank {
                expected: 2,
                shape: at.shape().to_vec(),
            }
            .into());
        }
        let (m, n) = (at.shape()[0], at.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &at.data()[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &v in row {
                sum = sum + (v - mx).exp();
            }
            let lse = mx + sum.ln();
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            let y = value.clone();
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, m * n);
                for i in 0..m {
                    let yr = &y.data()[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mut gsum = T::zero();
                    for &g_j in gr {
                        gsum = gsum + g_j;
                    }
                    for j in 0..n {
                        ga[i * n + j] = ga[i * n + j] + gr[j] - yr[j].exp() * gsum;
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    /// Per-row standardization (population variance), no affine terms.
    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId, GraphError> {
        let at = self.value(a);
        if at.rank() != 2 {
            return Err(ShapeError::Rank {
                expected: 2,
                shape: at.shape().to_vec(),
            }
            .into());
        }
        let (m, n) = (at.shape()[0], at.shape()[1]);
        let epst = T::from_f64(eps);
        let nt = T::from_f64(n as f64);
        let mut out = vec![T::zero(); m * n];
        let mut invs = vec![T::zero(); m];
        for i in 0..m {
            let row = &at.data()[i * n..(i + 1) * n];
            let mut mu = T::zero();
            for &v in row {
                mu = mu + v;
            }
            mu = mu / nt;
            let mut var = T::zero();
            for &v in row {
                let d = v - mu;
                var = var + d * d;
            }
            var = var / nt;
            let inv = T::one() / (var + epst).sqrt();
            invs[i] = inv;
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (v - mu) * inv;
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            let y = value.clone();
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, m * n);
                for i in 0..m {
                    let yr = &y.data()[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mut gmean = T::zero();
                    let mut gydot = T::zero();
                    for (y_j, g_j) in yr.iter().zip(gr) {
                        gmean = gmean + *g_j;
                        gydot = gydot + *g_j * *y_j;
                    }
                    gmean = gmean / nt;
                    gydot = gydot / nt;
                    let inv = invs[i];
                    for j in 0..n {
                        ga[i * n + j] = ga[i * n + j] + inv * (gr[j] - gmean - yr[j] * gydot);
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(value, rg, back))
    }

    // ── reductions / loss ──

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let at = self.value(a).clone();
        let mut acc = T::zero();
        for &v in at.data() {
            acc = acc + v;
        }
        let rg = self.requires_grad(a);
        let back: Option<BackFn<T>> = if rg {
            let n = at.numel();
            Some(Box::new(move |g, store| {
                let ga = store.slot(a, n);
                for ga_i in ga.iter_mut() {
                    *ga_i = *ga_i + g[0];
                }
            }))
        } else {
            None
        };
        self.push(Tensor::scalar(acc), rg, back)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Masked negative log-likelihood, summed: -Σ_{i: mask} logp[i, targets[i]].
    pub fn nll_sum_masked(
        &mut self,
        logp: NodeId,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<NodeId, GraphError> {
        let lt = self.value(logp);
        if lt.rank() != 2 {
            return Err(ShapeError::Rank {
                expected: 2,
                shape: lt.shape().to_vec(),
            }
            .into());
        }
        let (m, v) = (lt.shape()[0], lt.shape()[1]);
        if targets.len() != m || mask.len() != m {
            return Err(invalid(
                "nll_sum_masked",
                format!(
                    "rows {m} vs targets {} vs mask {}",
                    targets.len(),
                    mask.len()
                ),
            ));
        }
        for &t in targets {
            if t >= v {
                return Err(GraphError::IndexRange {
                    op: "nll_sum_masked",
                    index: t,
                    len: v,
                });
            }
        }
        let mut acc = T::zero();
        for i in 0..m {
            if mask[i] {
                acc = acc - lt.data()[i * v + targets[i]];
            }
        }
        let rg = self.requires_grad(logp);
        let back: Option<BackFn<T>> = if rg {
            let targets = targets.to_vec();
            let mask = mask.to_vec();
            Some(Box::new(move |g, store| {
                let gl = store.slot(logp, m * v);
                for i in 0..m {
                    if mask[i] {
                        let j = i * v + targets[i];
                        gl[j] = gl[j] - g[0];
                    }
                }
            }))
        } else {
            None
        };
        Ok(self.push(Tensor::scalar(acc), rg, back))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_broadcast_forms() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[2, 3], &[1., 2., 3., 4., 5., 6.]), true);
        let row = g.leaf(t64(&[3], &[10., 20., 30.]), true);
        let col = g.leaf(t64(&[2, 1], &[100., 200.]), true);
        let r = g.add(a, row).unwrap();
        assert_eq!(g.value(r).data(), &[11., 22., 33., 14., 25., 36.]);
        let c = g.add(col, a).unwrap(); // swapped orientation
        assert_eq!(g.value(c).data(), &[101., 102., 103., 204., 205., 206.]);
        let s = g.sum_all(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(col).unwrap(), &[3., 3.]);
        assert_eq!(grads.get(a).unwrap(), &[1.; 6]);
    }

    #[test]
    fn mul_row_broadcast_gradients() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[2, 2], &[1., 2., 3., 4.]), true);
        let w = g.leaf(t64(&[2], &[5., 7.]), true);
        let m = g.mul(a, w).unwrap();
        assert_eq!(g.value(m).data(), &[5., 14., 15., 28.]);
        let s = g.sum_all(m);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[5., 7., 5., 7.]);
        assert_eq!(grads.get(w).unwrap(), &[4., 6.]); // column sums of a
    }

    #[test]
    fn matmul_forward_and_gradients() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[2, 3], &[1., 2., 3., 4., 5., 6.]), true);
        let b = g.leaf(t64(&[3, 2], &[7., 8., 9., 10., 11., 12.]), true);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[58., 64., 139., 154.]);
        let s = g.sum_all(c);
        let grads = g.backward(s).unwrap();
        // d/dA of sum(A.B) = ones . B^T -> row sums of B per column
        assert_eq!(grads.get(a).unwrap(), &[15., 19., 23., 15., 19., 23.]);
        assert_eq!(grads.get(b).unwrap(), &[5., 5., 7., 7., 9., 9.]);
    }

    #[test]
    fn patchify_boundaries() {
        let mut g = Graph::<f64>::new();
        // L=10, P=4, S=2 -> N=4 at offsets 0,2,4,6
        let x = g.leaf(Tensor::from_fn(vec![1, 10], |i| i as f64), false);
        let p = g.patchify(x, 4, 2).unwrap();
        assert_eq!(g.value(p).shape(), &[4, 4]);
        assert_eq!(&g.value(p).data()[0..4], &[0., 1., 2., 3.]);
        assert_eq!(&g.value(p).data()[12..16], &[6., 7., 8., 9.]);
        // L=P=7 -> single patch for any stride
        let y = g.leaf(Tensor::from_fn(vec![2, 7], |i| i as f64), false);
        for s in 1..=9 {
            let p = g.patchify(y, 7, s).unwrap();
            assert_eq!(g.value(p).shape(), &[1, 14]);
        }
        let err = g.patchify(y, 8, 1).unwrap_err();
        assert!(err.to_string().contains("shorter than patch length"));
    }

    #[test]
    fn patchify_channel_major_layout() {
        let mut g = Graph::<f64>::new();
        // rows: ch0 = 0..5, ch1 = 100..105
        let x = g.leaf(
            Tensor::from_fn(vec![2, 5], |i| if i < 5 { i as f64 } else { 95.0 + i as f64 }),
            false,
        );
        let p = g.patchify(x, 2, 3).unwrap(); // offsets 0, 3
        assert_eq!(g.value(p).shape(), &[2, 4]);
        assert_eq!(g.value(p).data(), &[0., 1., 100., 101., 3., 4., 103., 104.]);
    }

    #[test]
    fn conv1d_same_padding_identity_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[2, 5], &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10.]), false);
        // depthwise centered delta: out == in
        let w = g.leaf(t64(&[2, 1, 3], &[0., 1., 0., 0., 1., 0.]), false);
        let y = g.conv1d(x, w, None, 2).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        // shifted delta picks the previous sample, zero-padded at the edge
        let wshift = g.leaf(t64(&[2, 1, 3], &[1., 0., 0., 1., 0., 0.]), false);
        let ys = g.conv1d(x, wshift, None, 2).unwrap();
        assert_eq!(g.value(ys).data(), &[0., 1., 2., 3., 4., 0., 6., 7., 8., 9.]);
    }

    #[test]
    fn conv1d_grouped_channel_isolation() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[4, 3], &(0..12).map(|i| i as f64).collect::<Vec<_>>()), false);
        // 2 groups of 2 channels; weights mix only within a group
        let w = g.leaf(
            Tensor::from_fn(vec![4, 2, 1], |i| (i + 1) as f64),
            false,
        );
        let y = g.conv1d(x, w, None, 2).unwrap();
        // group 0 outputs depend on channels 0,1 only
        let d = g.value(y).data().to_vec();
        assert_eq!(d[0], 1. * 0. + 2. * 3.); // oc0 = 1*x0 + 2*x1 at l=0
        assert_eq!(d[6 + 0], 5. * 6. + 6. * 9.); // oc2 = 5*x2 + 6*x3 at l=0
    }

    #[test]
    fn conv1d_rejects_even_kernel_and_bad_groups() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(vec![4, 8]), false);
        let w_even = g.leaf(Tensor::zeros(vec![4, 1, 4]), false);
        assert!(g.conv1d(x, w_even, None, 4).is_err());
        let w = g.leaf(Tensor::zeros(vec![4, 1, 3]), false);
        assert!(g.conv1d(x, w, None, 3).is_err()); // 3 does not divide 4
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[2, 3], &[1., 2., 3., 1000., 1001., 1002.]), false);
        let y = g.softmax_rows(a).unwrap();
        let d = g.value(y).data();
        for i in 0..2 {
            let s: f64 = d[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // large-offset row equals small row: shift invariance + stability
        for j in 0..3 {
            assert!((d[j] - d[3 + j]).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_matches_softmax_log() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[1, 4], &[0.5, -1.0, 2.0, 0.0]), false);
        let ls = g.log_softmax_rows(a).unwrap();
        let sm = g.softmax_rows(a).unwrap();
        for j in 0..4 {
            assert!((g.value(ls).data()[j] - g.value(sm).data()[j].ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_zero_mean_unit_var() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[1, 4], &[1., 2., 3., 4.]), false);
        let y = g.layer_norm_rows(a, 1e-12).unwrap();
        let d = g.value(y).data();
        let mean: f64 = d.iter().sum::<f64>() / 4.0;
        let var: f64 = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nll_masking_excludes_rows() {
        let mut g = Graph::<f64>::new();
        let lp = g.leaf(t64(&[2, 3], &[-1., -2., -3., -4., -5., -6.]), true);
        let full = g.nll_sum_masked(lp, &[0, 2], &[true, true]).unwrap();
        assert_eq!(g.value(full).data()[0], 1.0 + 6.0);
        let masked = g.nll_sum_masked(lp, &[0, 2], &[true, false]).unwrap();
        assert_eq!(g.value(masked).data()[0], 1.0);
        let grads = g.backward(masked).unwrap();
        assert_eq!(grads.get(lp).unwrap(), &[-1., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[2, 2], &[1., 2., 3., 4.]), true);
        assert!(matches!(
            g.backward(a),
            Err(GraphError::NonScalarRoot(_))
        ));
    }

    #[test]
    fn gather_rows_accumulates_repeated_indices() {
        let mut g = Graph::<f64>::new();
        let table = g.leaf(t64(&[3, 2], &[1., 2., 3., 4., 5., 6.]), true);
        let picked = g.gather_rows(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(picked).data(), &[5., 6., 1., 2., 5., 6.]);
        let s = g.sum_all(picked);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(table).unwrap(), &[1., 1., 0., 0., 2., 2.]);
        assert!(g.gather_rows(table, &[3]).is_err());
    }

    #[test]
    fn concat_and_slice_cols_round_trip() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[2, 2], &[1., 2., 5., 6.]), true);
        let b = g.leaf(t64(&[2, 1], &[3., 7.]), true);
        let c = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 3., 5., 6., 7.]);
        let back_a = g.slice_cols(c, 0, 2).unwrap();
        assert_eq!(g.value(back_a).data(), g.value(a).data());
        let back_b = g.slice_cols(c, 2, 3).unwrap();
        let s = g.sum_all(back_b);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap(), &[1., 1.]);
        assert_eq!(grads.get(a).unwrap(), &[0., 0., 0., 0.]);
    }

    #[test]
    fn gelu_is_near_identity_for_large_inputs() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[1, 3], &[8.0, 12.0, 20.0]), false);
        let y = g.gelu(a);
        for (x, y) in g.value(a).data().iter().zip(g.value(y).data()) {
            assert!((x - y).abs() < 1e-13, "gelu({x}) = {y}");
        }
        // and gelu(0) = 0
        let z = g.leaf(t64(&[1, 1], &[0.0]), false);
        let yz = g.gelu(z);
        assert_eq!(g.value(yz).data()[0], 0.0);
    }
}
