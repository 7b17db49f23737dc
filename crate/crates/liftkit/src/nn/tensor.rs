//! Reverse-mode autodiff on dense n-dimensional arrays.
//!
//! Tensors form a DAG: each op produces a new node holding its output values,
//! handles to its parents, and a closure that maps the output gradient to
//! per-parent gradient contributions. `backward` on a scalar walks the graph
//! in reverse topological order and accumulates gradients into every tensor
//! that requires them. Gradients keep accumulating until explicitly zeroed.
//!
//! Training runs in `f32`; the same graph code instantiates with `f64` for
//! finite-difference verification.

use std::collections::HashSet;
use std::fmt::Debug;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Element type for tensors: `f32` for training, `f64` for gradient checks.
pub trait Scalar: Float + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Dense matrix multiply `C = alpha * A * B + beta * C` with explicit
    /// strides, delegated to the matrixmultiply kernels.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// How an operand is read by the gemm helper.
#[derive(Clone, Copy, PartialEq)]
enum Layout {
    Normal,
    Transposed,
}

/// `c += a(op) * b(op)` for row-major buffers, or overwrite when
/// `accumulate` is false. Dimensions are those of the logical product:
/// a is m x k, b is k x n after applying the layouts.
fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    la: Layout,
    b: &[S],
    lb: Layout,
    c: &mut [S],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = match la {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match lb {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    let beta = if accumulate { S::one() } else { S::zero() };
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(1);

type BackwardFn<S> = Box<dyn Fn(&[S]) -> Vec<Vec<S>> + Send + Sync>;

struct Node<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    values: RwLock<Vec<S>>,
    grad: RwLock<Option<Vec<S>>>,
    /// Leaf parameter: a gradient is wanted here.
    requires_grad: bool,
    /// Some tensor in this node's ancestry requires a gradient.
    tracked: bool,
    parents: Vec<Tensor<S>>,
    backward: Option<BackwardFn<S>>,
}

/// An n-dimensional array participating in reverse-mode differentiation.
/// Cloning is cheap: clones share the same storage and graph node.
pub struct Tensor<S: Scalar> {
    node: Arc<Node<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor { node: Arc::clone(&self.node) }
    }
}

impl<S: Scalar> Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

fn check_shape_values<S: Scalar>(shape: &[usize], values: &[S]) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("invalid tensor shape {shape:?}")));
    }
    let numel: usize = shape.iter().product();
    if numel != values.len() {
        return Err(Error::shape(format!(
            "shape {shape:?} wants {numel} values, got {}",
            values.len()
        )));
    }
    Ok(())
}

#[cfg(debug_assertions)]
fn debug_check_finite<S: Scalar>(values: &[S], op: &str) {
    debug_assert!(
        values.iter().all(|v| v.is_finite()),
        "non-finite output from {op}"
    );
}

#[cfg(not(debug_assertions))]
fn debug_check_finite<S: Scalar>(_values: &[S], _op: &str) {}

impl<S: Scalar> Tensor<S> {
    fn new_node(
        shape: Vec<usize>,
        values: Vec<S>,
        requires_grad: bool,
        parents: Vec<Tensor<S>>,
        backward: Option<BackwardFn<S>>,
    ) -> Tensor<S> {
        let tracked = requires_grad || parents.iter().any(|p| p.node.tracked);
        let (parents, backward) = if tracked { (parents, backward) } else { (Vec::new(), None) };
        Tensor {
            node: Arc::new(Node {
                id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values: RwLock::new(values),
                grad: RwLock::new(None),
                requires_grad,
                tracked,
                parents,
                backward,
            }),
        }
    }

    /// Constant tensor: participates in computation but receives no gradient.
    pub fn from_values(shape: &[usize], values: Vec<S>) -> Result<Tensor<S>> {
        check_shape_values(shape, &values)?;
        Ok(Self::new_node(shape.to_vec(), values, false, Vec::new(), None))
    }

    /// Trainable leaf: `backward` accumulates a gradient here.
    pub fn parameter(shape: &[usize], values: Vec<S>) -> Result<Tensor<S>> {
        check_shape_values(shape, &values)?;
        Ok(Self::new_node(shape.to_vec(), values, true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor<S>> {
        let numel: usize = shape.iter().product();
        Self::from_values(shape, vec![S::zero(); numel])
    }

    pub fn scalar(v: S) -> Tensor<S> {
        Self::from_values(&[1], vec![v]).expect("scalar shape is valid")
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn is_parameter(&self) -> bool {
        self.node.requires_grad
    }

    /// True when these two handles share one physical storage.
    pub fn same_storage(&self, other: &Tensor<S>) -> bool {
        Arc::ptr_eq(&self.node, &other.node)
    }

    pub fn values(&self) -> Vec<S> {
        self.node.values.read().unwrap().clone()
    }

    pub fn values_ref<R>(&self, f: impl FnOnce(&[S]) -> R) -> R {
        f(&self.node.values.read().unwrap())
    }

    /// Mutate the stored values in place (optimizer updates, perturbations).
    pub fn values_mut<R>(&self, f: impl FnOnce(&mut [S]) -> R) -> R {
        f(&mut self.node.values.write().unwrap())
    }

    pub fn set_values(&self, values: &[S]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::shape(format!(
                "set_values: expected {} values, got {}",
                self.numel(),
                values.len()
            )));
        }
        self.node.values.write().unwrap().copy_from_slice(values);
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.node.grad.read().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.write().unwrap() = None;
    }

    fn accumulate_grad(&self, contribution: &[S]) {
        let mut slot = self.node.grad.write().unwrap();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi = *gi + *ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar: fills `grad` on every reachable
    /// tensor that requires one. Gradients add onto any already present.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        // Post-order DFS gives a topological order of the reachable graph.
        let mut order: Vec<Tensor<S>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<S>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.node.id);
        while let Some((t, child_idx)) = stack.pop() {
            if child_idx < t.node.parents.len() {
                let parent = t.node.parents[child_idx].clone();
                stack.push((t, child_idx + 1));
                if visited.insert(parent.node.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(t);
            }
        }

        self.accumulate_grad(&[S::one()]);
        for t in order.iter().rev() {
            let Some(backward) = t.node.backward.as_ref() else { continue };
            let grad_out = t.node.grad.read().unwrap().clone();
            let Some(grad_out) = grad_out else { continue };
            let contributions = backward(&grad_out);
            debug_assert_eq!(contributions.len(), t.node.parents.len());
            for (parent, contrib) in t.node.parents.iter().zip(contributions) {
                if parent.node.tracked && !contrib.is_empty() {
                    parent.accumulate_grad(&contrib);
                }
            }
            // Intermediate gradients are only needed transiently.
            if !t.node.requires_grad && !t.same_storage(self) {
                *t.node.grad.write().unwrap() = None;
            }
        }
        Ok(())
    }

    // ---- elementwise and structural ops ----

    /// Elementwise sum. `rhs` may have a shape that is a trailing suffix of
    /// `self`'s shape, in which case it broadcasts over the leading dims.
    pub fn add(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        let ls = self.shape().to_vec();
        let rs = rhs.shape().to_vec();
        if rs.len() > ls.len() || ls[ls.len() - rs.len()..] != rs[..] {
            return Err(Error::shape(format!(
                "add: shape {rs:?} does not broadcast onto {ls:?}"
            )));
        }
        let rlen: usize = rs.iter().product();
        let out = self.values_ref(|a| {
            rhs.values_ref(|b| {
                let mut out = a.to_vec();
                for (chunk, _) in out.chunks_mut(rlen).zip(std::iter::repeat(())) {
                    for (o, bv) in chunk.iter_mut().zip(b) {
                        *o = *o + *bv;
                    }
                }
                out
            })
        });
        debug_check_finite(&out, "add");
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            let d_lhs = grad.to_vec();
            let mut d_rhs = vec![S::zero(); rlen];
            for chunk in grad.chunks(rlen) {
                for (d, g) in d_rhs.iter_mut().zip(chunk) {
                    *d = *d + *g;
                }
            }
            vec![d_lhs, d_rhs]
        });
        Ok(Self::new_node(ls, out, false, vec![self.clone(), rhs.clone()], Some(backward)))
    }

    /// Elementwise difference of same-shape tensors.
    pub fn sub(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(format!(
                "sub: shapes {:?} and {:?} differ",
                self.shape(),
                rhs.shape()
            )));
        }
        let out = self.values_ref(|a| {
            rhs.values_ref(|b| a.iter().zip(b).map(|(x, y)| *x - *y).collect::<Vec<S>>())
        });
        debug_check_finite(&out, "sub");
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            vec![grad.to_vec(), grad.iter().map(|g| -*g).collect()]
        });
        Ok(Self::new_node(
            self.shape().to_vec(),
            out,
            false,
            vec![self.clone(), rhs.clone()],
            Some(backward),
        ))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(format!(
                "mul: shapes {:?} and {:?} differ",
                self.shape(),
                rhs.shape()
            )));
        }
        let out = self.values_ref(|a| {
            rhs.values_ref(|b| a.iter().zip(b).map(|(x, y)| *x * *y).collect::<Vec<S>>())
        });
        debug_check_finite(&out, "mul");
        let lhs_vals = self.values();
        let rhs_vals = rhs.values();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            let d_lhs = grad.iter().zip(&rhs_vals).map(|(g, r)| *g * *r).collect();
            let d_rhs = grad.iter().zip(&lhs_vals).map(|(g, l)| *g * *l).collect();
            vec![d_lhs, d_rhs]
        });
        Ok(Self::new_node(
            self.shape().to_vec(),
            out,
            false,
            vec![self.clone(), rhs.clone()],
            Some(backward),
        ))
    }

    pub fn scale(&self, c: S) -> Tensor<S> {
        let out = self.values_ref(|a| a.iter().map(|x| *x * c).collect::<Vec<S>>());
        debug_check_finite(&out, "scale");
        let backward: BackwardFn<S> =
            Box::new(move |grad: &[S]| vec![grad.iter().map(|g| *g * c).collect()]);
        Self::new_node(self.shape().to_vec(), out, false, vec![self.clone()], Some(backward))
    }

    pub fn relu(&self) -> Tensor<S> {
        let out = self.values_ref(|a| {
            a.iter().map(|x| if *x > S::zero() { *x } else { S::zero() }).collect::<Vec<S>>()
        });
        let input = self.values();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            vec![grad
                .iter()
                .zip(&input)
                .map(|(g, x)| if *x > S::zero() { *g } else { S::zero() })
                .collect()]
        });
        Self::new_node(self.shape().to_vec(), out, false, vec![self.clone()], Some(backward))
    }

    pub fn sum_all(&self) -> Tensor<S> {
        let total = self.values_ref(|a| a.iter().fold(S::zero(), |acc, x| acc + *x));
        let numel = self.numel();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| vec![vec![grad[0]; numel]]);
        Self::new_node(vec![1], vec![total], false, vec![self.clone()], Some(backward))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape()
            )));
        }
        let out = self.values();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| vec![grad.to_vec()]);
        Ok(Self::new_node(shape.to_vec(), out, false, vec![self.clone()], Some(backward)))
    }

    /// Slice `[start, start+len)` of the last dimension.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Tensor<S>> {
        let d = *self.shape().last().unwrap();
        if start + len > d || len == 0 {
            return Err(Error::shape(format!(
                "slice_last: range {start}..{} out of last dim {d}",
                start + len
            )));
        }
        let lanes = self.numel() / d;
        let out = self.values_ref(|a| {
            let mut out = Vec::with_capacity(lanes * len);
            for lane in 0..lanes {
                out.extend_from_slice(&a[lane * d + start..lane * d + start + len]);
            }
            out
        });
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let full = self.numel();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            let mut dx = vec![S::zero(); full];
            for lane in 0..lanes {
                dx[lane * d + start..lane * d + start + len]
                    .copy_from_slice(&grad[lane * len..(lane + 1) * len]);
            }
            vec![dx]
        });
        Ok(Self::new_node(shape, out, false, vec![self.clone()], Some(backward)))
    }

    /// Concatenate along the last dimension. All parts must agree on the
    /// leading dimensions.
    pub fn concat_last(parts: &[Tensor<S>]) -> Result<Tensor<S>> {
        if parts.is_empty() {
            return Err(Error::shape("concat_last: no tensors"));
        }
        let lead = &parts[0].shape()[..parts[0].rank() - 1];
        for p in parts {
            if &p.shape()[..p.rank() - 1] != lead {
                return Err(Error::shape("concat_last: leading dimensions differ"));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let lanes: usize = lead.iter().product();
        let mut out = Vec::with_capacity(lanes * total);
        for lane in 0..lanes {
            for (p, &w) in parts.iter().zip(&widths) {
                p.values_ref(|a| out.extend_from_slice(&a[lane * w..(lane + 1) * w]));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let widths_for_bwd = widths.clone();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            let mut outs: Vec<Vec<S>> =
                widths_for_bwd.iter().map(|w| Vec::with_capacity(lanes * w)).collect();
            for lane in 0..lanes {
                let mut offset = lane * total;
                for (slot, &w) in outs.iter_mut().zip(&widths_for_bwd) {
                    slot.extend_from_slice(&grad[offset..offset + w]);
                    offset += w;
                }
            }
            outs
        });
        Ok(Self::new_node(shape, out, false, parts.to_vec(), Some(backward)))
    }

    /// Select one position along the second-to-last dimension:
    /// `[..., n, d] -> [..., d]`.
    pub fn select_position(&self, index: usize) -> Result<Tensor<S>> {
        if self.rank() < 2 {
            return Err(Error::shape("select_position needs rank >= 2"));
        }
        let d = *self.shape().last().unwrap();
        let n = self.shape()[self.rank() - 2];
        if index >= n {
            return Err(Error::shape(format!(
                "select_position: index {index} out of {n} positions"
            )));
        }
        let groups = self.numel() / (n * d);
        let out = self.values_ref(|a| {
            let mut out = Vec::with_capacity(groups * d);
            for g in 0..groups {
                let base = g * n * d + index * d;
                out.extend_from_slice(&a[base..base + d]);
            }
            out
        });
        let mut shape = self.shape().to_vec();
        shape.remove(self.rank() - 2);
        let full = self.numel();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            let mut dx = vec![S::zero(); full];
            for g in 0..groups {
                let base = g * n * d + index * d;
                dx[base..base + d].copy_from_slice(&grad[g * d..(g + 1) * d]);
            }
            vec![dx]
        });
        Ok(Self::new_node(shape, out, false, vec![self.clone()], Some(backward)))
    }

    // ---- matrix products ----

    /// Matrix product. Supported shapes:
    /// `[m,k] @ [k,n]`, `[B,m,k] @ [k,n]` (shared rhs), `[B,m,k] @ [B,k,n]`.
    pub fn matmul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        let ls = self.shape().to_vec();
        let rs = rhs.shape().to_vec();
        match (ls.len(), rs.len()) {
            (2, 2) | (3, 2) => {
                let k = *ls.last().unwrap();
                if rs[0] != k {
                    return Err(Error::shape(format!(
                        "matmul: inner dims differ, {ls:?} @ {rs:?}"
                    )));
                }
                let n = rs[1];
                let rows = self.numel() / k;
                let mut out = vec![S::zero(); rows * n];
                self.values_ref(|a| {
                    rhs.values_ref(|b| gemm(rows, k, n, a, Layout::Normal, b, Layout::Normal, &mut out, false))
                });
                debug_check_finite(&out, "matmul");
                let mut shape = ls.clone();
                *shape.last_mut().unwrap() = n;
                let a_vals = self.values();
                let b_vals = rhs.values();
                let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
                    let mut da = vec![S::zero(); rows * k];
                    gemm(rows, n, k, grad, Layout::Normal, &b_vals, Layout::Transposed, &mut da, false);
                    let mut db = vec![S::zero(); k * n];
                    gemm(k, rows, n, &a_vals, Layout::Transposed, grad, Layout::Normal, &mut db, false);
                    vec![da, db]
                });
                Ok(Self::new_node(shape, out, false, vec![self.clone(), rhs.clone()], Some(backward)))
            }
            (3, 3) => {
                let (bsz, m, k) = (ls[0], ls[1], ls[2]);
                if rs[0] != bsz || rs[1] != k {
                    return Err(Error::shape(format!(
                        "matmul: batched shapes incompatible, {ls:?} @ {rs:?}"
                    )));
                }
                let n = rs[2];
                let mut out = vec![S::zero(); bsz * m * n];
                self.values_ref(|a| {
                    rhs.values_ref(|b| {
                        for i in 0..bsz {
                            gemm(
                                m,
                                k,
                                n,
                                &a[i * m * k..(i + 1) * m * k],
                                Layout::Normal,
                                &b[i * k * n..(i + 1) * k * n],
                                Layout::Normal,
                                &mut out[i * m * n..(i + 1) * m * n],
                                false,
                            );
                        }
                    })
                });
                debug_check_finite(&out, "matmul");
                let a_vals = self.values();
                let b_vals = rhs.values();
                let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
                    let mut da = vec![S::zero(); bsz * m * k];
                    let mut db = vec![S::zero(); bsz * k * n];
                    for i in 0..bsz {
                        let g = &grad[i * m * n..(i + 1) * m * n];
                        gemm(
                            m,
                            n,
                            k,
                            g,
                            Layout::Normal,
                            &b_vals[i * k * n..(i + 1) * k * n],
                            Layout::Transposed,
                            &mut da[i * m * k..(i + 1) * m * k],
                            false,
                        );
                        gemm(
                            k,
                            m,
                            n,
                            &a_vals[i * m * k..(i + 1) * m * k],
                            Layout::Transposed,
                            g,
                            Layout::Normal,
                            &mut db[i * k * n..(i + 1) * k * n],
                            false,
                        );
                    }
                    vec![da, db]
                });
                Ok(Self::new_node(
                    vec![bsz, m, n],
                    out,
                    false,
                    vec![self.clone(), rhs.clone()],
                    Some(backward),
                ))
            }
            _ => Err(Error::shape(format!(
                "matmul: unsupported ranks {} @ {}",
                ls.len(),
                rs.len()
            ))),
        }
    }

    /// Matrix product against the transpose of `rhs`:
    /// `[B,m,k] @ [B,n,k]^T -> [B,m,n]` (also rank-2).
    pub fn matmul_nt(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        let ls = self.shape().to_vec();
        let rs = rhs.shape().to_vec();
        if ls.len() != rs.len() || !(ls.len() == 2 || ls.len() == 3) {
            return Err(Error::shape(format!(
                "matmul_nt: unsupported ranks {} vs {}",
                ls.len(),
                rs.len()
            )));
        }
        let (bsz, m, k) = if ls.len() == 2 { (1, ls[0], ls[1]) } else { (ls[0], ls[1], ls[2]) };
        let (rb, n, rk) = if rs.len() == 2 { (1, rs[0], rs[1]) } else { (rs[0], rs[1], rs[2]) };
        if rk != k || rb != bsz {
            return Err(Error::shape(format!("matmul_nt: {ls:?} @ {rs:?}^T")));
        }
        let mut out = vec![S::zero(); bsz * m * n];
        self.values_ref(|a| {
            rhs.values_ref(|b| {
                for i in 0..bsz {
                    gemm(
                        m,
                        k,
                        n,
                        &a[i * m * k..(i + 1) * m * k],
                        Layout::Normal,
                        &b[i * n * k..(i + 1) * n * k],
                        Layout::Transposed,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            })
        });
        debug_check_finite(&out, "matmul_nt");
        let mut shape = ls.clone();
        *shape.last_mut().unwrap() = n;
        let a_vals = self.values();
        let b_vals = rhs.values();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            let mut da = vec![S::zero(); bsz * m * k];
            let mut db = vec![S::zero(); bsz * n * k];
            for i in 0..bsz {
                let g = &grad[i * m * n..(i + 1) * m * n];
                // dA = dC @ B ; dB = dC^T @ A
                gemm(
                    m,
                    n,
                    k,
                    g,
                    Layout::Normal,
                    &b_vals[i * n * k..(i + 1) * n * k],
                    Layout::Normal,
                    &mut da[i * m * k..(i + 1) * m * k],
                    false,
                );
                gemm(
                    n,
                    m,
                    k,
                    g,
                    Layout::Transposed,
                    &a_vals[i * m * k..(i + 1) * m * k],
                    Layout::Normal,
                    &mut db[i * n * k..(i + 1) * n * k],
                    false,
                );
            }
            vec![da, db]
        });
        Ok(Self::new_node(shape, out, false, vec![self.clone(), rhs.clone()], Some(backward)))
    }

    // ---- normalization and activation over lanes ----

    /// Numerically stable softmax along the given axis.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(Error::shape(format!(
                "softmax: axis {axis} out of range for rank {}",
                self.rank()
            )));
        }
        let shape = self.shape().to_vec();
        let k = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = self.values();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * k * inner + i;
                let mut max = S::neg_infinity();
                for j in 0..k {
                    let v = out[base + j * inner];
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = S::zero();
                for j in 0..k {
                    let e = (out[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum = sum + e;
                }
                for j in 0..k {
                    out[base + j * inner] = out[base + j * inner] / sum;
                }
            }
        }
        debug_check_finite(&out, "softmax");
        let saved = out.clone();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            let mut dx = vec![S::zero(); saved.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * k * inner + i;
                    let mut dot = S::zero();
                    for j in 0..k {
                        let idx = base + j * inner;
                        dot = dot + grad[idx] * saved[idx];
                    }
                    for j in 0..k {
                        let idx = base + j * inner;
                        dx[idx] = saved[idx] * (grad[idx] - dot);
                    }
                }
            }
            vec![dx]
        });
        Ok(Self::new_node(shape, out, false, vec![self.clone()], Some(backward)))
    }

    /// Softmax over the last axis of `[..., q, k]` score matrices, with an
    /// optional causal mask that stops position `i` attending to `j > i`.
    /// Masked weights are exactly zero.
    pub fn attention_softmax(&self, causal: bool) -> Result<Tensor<S>> {
        if self.rank() < 2 {
            return Err(Error::shape("attention_softmax needs rank >= 2"));
        }
        let shape = self.shape().to_vec();
        let k = *shape.last().unwrap();
        let q = shape[shape.len() - 2];
        let groups = self.numel() / (q * k);
        let mut out = self.values();
        for g in 0..groups {
            for row in 0..q {
                let base = g * q * k + row * k;
                let limit = if causal { (row + 1).min(k) } else { k };
                let mut max = S::neg_infinity();
                for j in 0..limit {
                    if out[base + j] > max {
                        max = out[base + j];
                    }
                }
                let mut sum = S::zero();
                for j in 0..limit {
                    let e = (out[base + j] - max).exp();
                    out[base + j] = e;
                    sum = sum + e;
                }
                for j in 0..limit {
                    out[base + j] = out[base + j] / sum;
                }
                for j in limit..k {
                    out[base + j] = S::zero();
                }
            }
        }
        debug_check_finite(&out, "attention_softmax");
        let saved = out.clone();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            let mut dx = vec![S::zero(); saved.len()];
            for g in 0..groups {
                for row in 0..q {
                    let base = g * q * k + row * k;
                    let mut dot = S::zero();
                    for j in 0..k {
                        dot = dot + grad[base + j] * saved[base + j];
                    }
                    for j in 0..k {
                        dx[base + j] = saved[base + j] * (grad[base + j] - dot);
                    }
                }
            }
            vec![dx]
        });
        Ok(Self::new_node(shape, out, false, vec![self.clone()], Some(backward)))
    }

    /// Layer normalization over the last dimension with learned gain and bias.
    pub fn layer_norm(&self, gain: &Tensor<S>, bias: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
        let d = *self.shape().last().unwrap();
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::shape(format!(
                "layer_norm: gain/bias must be [{d}], got {:?} and {:?}",
                gain.shape(),
                bias.shape()
            )));
        }
        if d < 2 {
            return Err(Error::shape("layer_norm needs a feature dim of at least 2"));
        }
        let lanes = self.numel() / d;
        let eps = S::from_f64(eps);
        let df = S::from_f64(d as f64);
        let mut xhat = vec![S::zero(); self.numel()];
        let mut inv_std = vec![S::zero(); lanes];
        let out = self.values_ref(|x| {
            gain.values_ref(|g| {
                bias.values_ref(|b| {
                    let mut out = vec![S::zero(); x.len()];
                    for lane in 0..lanes {
                        let row = &x[lane * d..(lane + 1) * d];
                        let mean = row.iter().fold(S::zero(), |a, v| a + *v) / df;
                        let var = row
                            .iter()
                            .fold(S::zero(), |a, v| a + (*v - mean) * (*v - mean))
                            / df;
                        let inv = S::one() / (var + eps).sqrt();
                        inv_std[lane] = inv;
                        for j in 0..d {
                            let h = (row[j] - mean) * inv;
                            xhat[lane * d + j] = h;
                            out[lane * d + j] = g[j] * h + b[j];
                        }
                    }
                    out
                })
            })
        });
        debug_check_finite(&out, "layer_norm");
        let gain_vals = gain.values();
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            let mut dx = vec![S::zero(); xhat.len()];
            let mut dgain = vec![S::zero(); d];
            let mut dbias = vec![S::zero(); d];
            for lane in 0..lanes {
                let base = lane * d;
                let mut mean_g = S::zero();
                let mut mean_gh = S::zero();
                for j in 0..d {
                    let gd = grad[base + j] * gain_vals[j];
                    mean_g = mean_g + gd;
                    mean_gh = mean_gh + gd * xhat[base + j];
                    dgain[j] = dgain[j] + grad[base + j] * xhat[base + j];
                    dbias[j] = dbias[j] + grad[base + j];
                }
                mean_g = mean_g / df;
                mean_gh = mean_gh / df;
                for j in 0..d {
                    let gd = grad[base + j] * gain_vals[j];
                    dx[base + j] = inv_std[lane] * (gd - mean_g - xhat[base + j] * mean_gh);
                }
            }
            vec![dx, dgain, dbias]
        });
        Ok(Self::new_node(
            self.shape().to_vec(),
            out,
            false,
            vec![self.clone(), gain.clone(), bias.clone()],
            Some(backward),
        ))
    }

    /// Inverted dropout with a caller-supplied stream: elements are zeroed
    /// with probability `p` and survivors are scaled by `1/(1-p)`. Use only
    /// in training mode; inference paths skip the op entirely.
    pub fn dropout(&self, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor<S>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} must be in [0, 1)")));
        }
        if p == 0.0 {
            // Identity, but keep a node so graph structure is uniform.
            return self.reshape(&self.shape().to_vec());
        }
        let keep = S::from_f64(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < p { S::zero() } else { keep })
            .collect();
        let out = self.values_ref(|a| {
            a.iter().zip(&mask).map(|(x, m)| *x * *m).collect::<Vec<S>>()
        });
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            vec![grad.iter().zip(&mask).map(|(g, m)| *g * *m).collect()]
        });
        Ok(Self::new_node(self.shape().to_vec(), out, false, vec![self.clone()], Some(backward)))
    }

    /// Mean Euclidean distance between rows of 3D coordinates: interprets the
    /// last dimension (size 3) as a point, averages the distances to `target`
    /// over all leading dimensions. The gradient at coincident points is the
    /// zero subgradient.
    pub fn mpjpe_loss(&self, target: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape() != target.shape() {
            return Err(Error::shape(format!(
                "mpjpe_loss: shapes {:?} and {:?} differ",
                self.shape(),
                target.shape()
            )));
        }
        if *self.shape().last().unwrap() != 3 {
            return Err(Error::shape("mpjpe_loss expects a trailing dimension of 3"));
        }
        let rows = self.numel() / 3;
        let rows_f = S::from_f64(rows as f64);
        let mut diffs = vec![S::zero(); self.numel()];
        let mut norms = vec![S::zero(); rows];
        let total = self.values_ref(|p| {
            target.values_ref(|g| {
                let mut total = S::zero();
                for r in 0..rows {
                    let mut sq = S::zero();
                    for c in 0..3 {
                        let d = p[r * 3 + c] - g[r * 3 + c];
                        diffs[r * 3 + c] = d;
                        sq = sq + d * d;
                    }
                    let n = sq.sqrt();
                    norms[r] = n;
                    total = total + n;
                }
                total / rows_f
            })
        });
        let backward: BackwardFn<S> = Box::new(move |grad: &[S]| {
            let g0 = grad[0];
            let mut dp = vec![S::zero(); diffs.len()];
            for r in 0..rows {
                if norms[r] > S::zero() {
                    let f = g0 / (rows_f * norms[r]);
                    for c in 0..3 {
                        dp[r * 3 + c] = f * diffs[r * 3 + c];
                    }
                }
            }
            let dt = dp.iter().map(|v| -*v).collect();
            vec![dp, dt]
        });
        Ok(Self::new_node(
            vec![1],
            vec![total],
            false,
            vec![self.clone(), target.clone()],
            Some(backward),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    type T64 = Tensor<f64>;

    /// Central finite differences against the analytic gradient of `build`,
    /// a scalar-valued graph over a single parameter vector.
    fn finite_diff_check(
        shape: &[usize],
        values: Vec<f64>,
        build: impl Fn(&T64) -> T64,
        tol: f64,
    ) {
        let x = T64::parameter(shape, values.clone()).unwrap();
        let loss = build(&x);
        loss.backward().unwrap();
        let analytic = x.grad().expect("gradient missing");

        let h = 1e-6;
        for i in 0..values.len() {
            let mut plus = values.clone();
            plus[i] += h;
            let mut minus = values.clone();
            minus[i] -= h;
            let xp = T64::parameter(shape, plus).unwrap();
            let xm = T64::parameter(shape, minus).unwrap();
            let fp = build(&xp).values()[0];
            let fm = build(&xm).values()[0];
            let numeric = (fp - fm) / (2.0 * h);
            let denom = numeric.abs().max(analytic[i].abs()).max(1e-6);
            assert!(
                (numeric - analytic[i]).abs() / denom < tol,
                "coordinate {i}: numeric {numeric} vs analytic {}",
                analytic[i]
            );
        }
    }

    fn seeded_values(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn scalar_ops_and_backward_sum() {
        let x = T64::parameter(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let loss = x.sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn backward_of_half_squared_norm_is_x() {
        let vals = vec![1.5, -2.0, 0.25];
        let x = T64::parameter(&[3], vals.clone()).unwrap();
        let loss = x.mul(&x).unwrap().sum_all().scale(0.5);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vals);
    }

    #[test]
    fn backward_requires_scalar() {
        let x = T64::parameter(&[2], vec![1.0, 2.0]).unwrap();
        assert!(x.backward().is_err());
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = T64::parameter(&[2], vec![1.0, 1.0]).unwrap();
        x.sum_all().backward().unwrap();
        x.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn shared_storage_receives_summed_gradient() {
        // The same parameter used along two paths accumulates both.
        let w = T64::parameter(&[2], vec![3.0, 4.0]).unwrap();
        let a = w.scale(2.0);
        let b = w.scale(5.0);
        let loss = a.add(&b).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![7.0, 7.0]);
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let x = T64::from_values(&[2], vec![0.0, 0.0]).unwrap();
        assert_eq!(x.softmax(0).unwrap().values(), vec![0.5, 0.5]);

        let y = T64::from_values(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let shifted = T64::from_values(&[3], vec![0.3 + 7.5, -1.2 + 7.5, 2.0 + 7.5]).unwrap();
        let a = y.softmax(0).unwrap().values();
        let b = shifted.softmax(0).unwrap().values();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_log_weights() {
        let x = T64::from_values(&[3], vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        let s = x.softmax(0).unwrap().values();
        assert!((s[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((s[1] - 2.0 / 6.0).abs() < 1e-12);
        assert!((s[2] - 3.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_any_axis() {
        let vals = seeded_values(24, 3);
        let x = T64::from_values(&[2, 3, 4], vals).unwrap();
        for axis in 0..3 {
            let s = x.softmax(axis).unwrap();
            let v = s.values();
            let shape = [2usize, 3, 4];
            let k = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..axis].iter().product();
            for o in 0..outer {
                for i in 0..inner {
                    let sum: f64 = (0..k).map(|j| v[o * k * inner + j * inner + i]).sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn causal_softmax_is_lower_triangular_row_stochastic() {
        let vals = seeded_values(2 * 4 * 4, 5);
        let x = T64::from_values(&[2, 4, 4], vals).unwrap();
        let w = x.attention_softmax(true).unwrap().values();
        for g in 0..2 {
            for i in 0..4 {
                let row = &w[g * 16 + i * 4..g * 16 + i * 4 + 4];
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                for (j, &v) in row.iter().enumerate() {
                    if j > i {
                        assert_eq!(v, 0.0);
                    } else {
                        assert!(v > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = T64::from_values(&[2, 3], vec![0.0; 6]).unwrap();
        let b = T64::from_values(&[4, 2], vec![0.0; 8]).unwrap();
        assert!(a.matmul(&b).is_err());
        assert!(a.matmul_nt(&a.reshape(&[3, 2]).unwrap()).is_err());
    }

    #[test]
    fn matmul_small_known_product() {
        let a = T64::from_values(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = T64::from_values(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().values(), vec![19.0, 22.0, 43.0, 50.0]);
        // A @ B^T with B stored transposed gives the same product.
        let bt = T64::from_values(&[2, 2], vec![5.0, 7.0, 6.0, 8.0]).unwrap();
        assert_eq!(a.matmul_nt(&bt).unwrap().values(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn grad_matmul_2d() {
        let w_vals = seeded_values(12, 7);
        finite_diff_check(
            &[3, 4],
            w_vals,
            |w| {
                let x = T64::from_values(&[2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
                x.matmul(w).unwrap().mul(&x.matmul(w).unwrap()).unwrap().sum_all()
            },
            1e-6,
        );
    }

    #[test]
    fn grad_matmul_batched_and_nt() {
        let vals = seeded_values(2 * 3 * 2, 11);
        finite_diff_check(
            &[2, 3, 2],
            vals,
            |x| {
                let scores = x.matmul_nt(x).unwrap(); // [2,3,3]
                let w = scores.attention_softmax(false).unwrap();
                w.matmul(x).unwrap().sum_all()
            },
            1e-5,
        );
    }

    #[test]
    fn grad_broadcast_matmul_lhs_batched() {
        let vals = seeded_values(12, 13);
        finite_diff_check(
            &[4, 3],
            vals,
            |w| {
                let x = T64::from_values(&[2, 2, 4], seeded_values(16, 14)).unwrap();
                x.matmul(w).unwrap().relu().sum_all()
            },
            1e-6,
        );
    }

    #[test]
    fn grad_softmax() {
        let vals = seeded_values(6, 17);
        finite_diff_check(
            &[2, 3],
            vals,
            |x| {
                let probe = T64::from_values(&[2, 3], seeded_values(6, 18)).unwrap();
                x.softmax(1).unwrap().mul(&probe).unwrap().sum_all()
            },
            1e-6,
        );
    }

    #[test]
    fn grad_causal_softmax() {
        let vals = seeded_values(9, 19);
        finite_diff_check(
            &[3, 3],
            vals,
            |x| {
                let probe = T64::from_values(&[3, 3], seeded_values(9, 20)).unwrap();
                x.attention_softmax(true).unwrap().mul(&probe).unwrap().sum_all()
            },
            1e-6,
        );
    }

    #[test]
    fn layer_norm_normalized_row_passes_through() {
        let gain = T64::from_values(&[2], vec![1.0, 1.0]).unwrap();
        let bias = T64::from_values(&[2], vec![0.0, 0.0]).unwrap();
        let x = T64::from_values(&[1, 2], vec![1.0, -1.0]).unwrap();
        let y = x.layer_norm(&gain, &bias, 1e-5).unwrap().values();
        assert!((y[0] - 1.0).abs() < 1e-4);
        assert!((y[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_constant_row_yields_bias() {
        let gain = T64::from_values(&[3], vec![2.0, 2.0, 2.0]).unwrap();
        let bias = T64::from_values(&[3], vec![0.5, -0.5, 1.5]).unwrap();
        let x = T64::from_values(&[1, 3], vec![7.0, 7.0, 7.0]).unwrap();
        let y = x.layer_norm(&gain, &bias, 1e-5).unwrap().values();
        assert_eq!(y, vec![0.5, -0.5, 1.5]);
    }

    #[test]
    fn grad_layer_norm() {
        let vals = seeded_values(8, 23);
        finite_diff_check(
            &[2, 4],
            vals,
            |x| {
                let gain = T64::from_values(&[4], vec![1.1, 0.9, 1.3, 0.7]).unwrap();
                let bias = T64::from_values(&[4], vec![0.1, -0.2, 0.0, 0.3]).unwrap();
                let probe = T64::from_values(&[2, 4], seeded_values(8, 24)).unwrap();
                x.layer_norm(&gain, &bias, 1e-5).unwrap().mul(&probe).unwrap().sum_all()
            },
            1e-5,
        );
    }

    #[test]
    fn grad_layer_norm_gain_bias() {
        let vals = seeded_values(3, 25);
        finite_diff_check(
            &[3],
            vals,
            |gain| {
                let x = T64::from_values(&[2, 3], seeded_values(6, 26)).unwrap();
                let bias = T64::from_values(&[3], vec![0.0, 0.1, -0.1]).unwrap();
                x.layer_norm(gain, &bias, 1e-5).unwrap().sum_all()
            },
            1e-6,
        );
    }

    #[test]
    fn grad_structural_ops() {
        let vals = seeded_values(12, 29);
        finite_diff_check(
            &[2, 3, 2],
            vals,
            |x| {
                let left = x.slice_last(0, 1).unwrap();
                let right = x.slice_last(1, 1).unwrap();
                let merged = Tensor::concat_last(&[right, left]).unwrap();
                merged.select_position(1).unwrap().mul(&T64::from_values(&[2, 2], seeded_values(4, 30)).unwrap()).unwrap().sum_all()
            },
            1e-6,
        );
    }

    #[test]
    fn grad_add_broadcast() {
        let vals = seeded_values(3, 31);
        finite_diff_check(
            &[3],
            vals,
            |b| {
                let x = T64::from_values(&[2, 2, 3], seeded_values(12, 32)).unwrap();
                x.add(b).unwrap().relu().sum_all()
            },
            1e-6,
        );
    }

    #[test]
    fn grad_mpjpe_loss() {
        let vals: Vec<f64> = seeded_values(12, 33).iter().map(|v| v * 100.0).collect();
        finite_diff_check(
            &[2, 2, 3],
            vals,
            |x| {
                let target = T64::from_values(
                    &[2, 2, 3],
                    seeded_values(12, 34).iter().map(|v| v * 100.0).collect(),
                )
                .unwrap();
                x.mpjpe_loss(&target).unwrap()
            },
            1e-5,
        );
    }

    #[test]
    fn mpjpe_loss_values_and_coincident_subgradient() {
        let pred = T64::parameter(&[2, 3], vec![3.0, 4.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let gt = T64::from_values(&[2, 3], vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let loss = pred.mpjpe_loss(&gt).unwrap();
        assert!((loss.values()[0] - 2.5).abs() < 1e-12);
        loss.backward().unwrap();
        let g = pred.grad().unwrap();
        // Coincident second row gets the zero subgradient.
        assert_eq!(&g[3..], &[0.0, 0.0, 0.0]);
        assert!((g[0] - 3.0 / (5.0 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn dropout_identity_and_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let x = T64::from_values(&[100], vec![1.0; 100]).unwrap();
        let y = x.dropout(0.0, &mut rng).unwrap();
        assert_eq!(y.values(), vec![1.0; 100]);

        // Monte-Carlo: inverted dropout preserves the mean within 1%.
        let n = 100_000usize;
        let big = T64::from_values(&[n], vec![1.0; n]).unwrap();
        let dropped = big.dropout(0.3, &mut rng).unwrap();
        let mean: f64 = dropped.values().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(big.dropout(1.0, &mut rng).is_err());
    }

    #[test]
    fn grad_dropout_uses_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = T64::parameter(&[50], vec![2.0; 50]).unwrap();
        let y = x.dropout(0.5, &mut rng).unwrap();
        let loss = y.sum_all();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        let vals = y.values();
        for (gi, yi) in g.iter().zip(&vals) {
            if *yi == 0.0 {
                assert_eq!(*gi, 0.0);
            } else {
                assert_eq!(*gi, 2.0);
            }
        }
    }

    #[test]
    fn constant_subgraphs_are_not_tracked() {
        let a = T64::from_values(&[2], vec![1.0, 2.0]).unwrap();
        let b = a.scale(3.0);
        assert!(!b.node.tracked);
        assert!(b.node.backward.is_none());
    }
}
