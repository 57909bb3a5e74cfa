//! The autodiff tape.
//!
//! A `Tape` records one forward computation as a flat list of nodes in
//! topological order. `backward` walks the list in reverse, handing each
//! node's output gradient to a closure that accumulates into its operands.
//! Parameters lease nodes via [`Tape::param`]; the same parameter leased
//! twice returns the same node, so shared weights accumulate correctly.

use std::collections::HashMap;
use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::ArrayView2;

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(pub(crate) usize);

type BackFn = Box<dyn Fn(&[Tensor], &[f64], &mut GradStore)>;

/// Per-node gradient buffers, allocated lazily. Nodes that are neither
/// parameters nor produced by a recorded op (i.e. constants) are inactive:
/// accumulating into them is a no-op, which skips the work entirely since
/// each operand's backward pass runs inside its `accum` closure.
pub struct GradStore {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
    active: Vec<bool>,
}

impl GradStore {
    fn new(sizes: Vec<usize>, active: Vec<bool>) -> GradStore {
        GradStore {
            grads: (0..sizes.len()).map(|_| None).collect(),
            sizes,
            active,
        }
    }

    pub fn accum(&mut self, node: Node, f: impl FnOnce(&mut [f64])) {
        if !self.active[node.0] {
            return;
        }
        let buf = self.grads[node.0].get_or_insert_with(|| vec![0.0; self.sizes[node.0]]);
        f(buf);
    }

    pub fn take(&mut self, node: Node) -> Option<Vec<f64>> {
        self.grads[node.0].take()
    }

    pub fn get(&self, node: Node) -> Option<&[f64]> {
        self.grads[node.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    vals: Vec<Tensor>,
    backs: Vec<Option<BackFn>>,
    grad_enabled: bool,
    param_map: HashMap<usize, Node>,
    param_nodes: Vec<(usize, Node)>,
}

fn mat<'a>(t: &'a Tensor) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((t.rows(), t.cols()), &t.data).expect("contiguous 2d view")
}

fn mat_of<'a>(data: &'a [f64], r: usize, c: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((r, c), data).expect("contiguous 2d view")
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            grad_enabled: true,
            ..Default::default()
        }
    }

    /// Forward-only tape: skips recording backward closures.
    pub fn inference() -> Tape {
        Tape {
            grad_enabled: false,
            ..Default::default()
        }
    }

    pub fn value(&self, n: Node) -> &Tensor {
        &self.vals[n.0]
    }

    pub fn value_scalar(&self, n: Node) -> f64 {
        debug_assert_eq!(self.vals[n.0].len(), 1);
        self.vals[n.0].data[0]
    }

    fn push(&mut self, t: Tensor, back: Option<BackFn>) -> Node {
        self.vals.push(t);
        self.backs.push(if self.grad_enabled { back } else { None });
        Node(self.vals.len() - 1)
    }

    /// Leaf with no gradient.
    pub fn constant(&mut self, t: Tensor) -> Node {
        self.push(t, None)
    }

    /// Leaf tracked as parameter `store_idx`; memoized per tape.
    pub fn param(&mut self, store_idx: usize, t: &Tensor) -> Node {
        if let Some(&n) = self.param_map.get(&store_idx) {
            return n;
        }
        let n = self.push(t.clone(), None);
        self.param_map.insert(store_idx, n);
        self.param_nodes.push((store_idx, n));
        n
    }

    /// Run backprop from a scalar loss. Returns gradients for all leased
    /// parameters as `(store_idx, grad)` in lease order.
    pub fn backward(&self, loss: Node) -> Vec<(usize, Vec<f64>)> {
        assert!(self.grad_enabled, "backward on an inference tape");
        assert_eq!(self.vals[loss.0].len(), 1, "loss must be scalar");
        let sizes: Vec<usize> = self.vals.iter().map(|t| t.len()).collect();
        let mut active: Vec<bool> = self.backs.iter().map(|b| b.is_some()).collect();
        for &(_, node) in &self.param_nodes {
            active[node.0] = true;
        }
        let mut grads = GradStore::new(sizes, active);
        grads.accum(loss, |g| g[0] = 1.0);
        for i in (0..self.vals.len()).rev() {
            if let Some(back) = &self.backs[i] {
                if let Some(g) = grads.take(Node(i)) {
                    back(&self.vals, &g, &mut grads);
                }
            }
        }
        self.param_nodes
            .iter()
            .map(|&(idx, node)| {
                let g = grads
                    .take(node)
                    .unwrap_or_else(|| vec![0.0; self.vals[node.0].len()]);
                (idx, g)
            })
            .collect()
    }

    // ---- elementwise and broadcast ----

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(ta.shape, tb.shape, "add shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape.clone(), data);
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(a, |buf| buf.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                gs.accum(b, |buf| buf.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
            })),
        )
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Node {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(ta.shape, tb.shape, "mul shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape.clone(), data);
        self.push(
            t,
            Some(Box::new(move |vals, g, gs| {
                let (va, vb) = (&vals[a.0], &vals[b.0]);
                gs.accum(a, |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * vb.data[i];
                    }
                });
                gs.accum(b, |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * va.data[i];
                    }
                });
            })),
        )
    }

    pub fn scale(&mut self, a: Node, c: f64) -> Node {
        let ta = &self.vals[a.0];
        let t = Tensor::new(ta.shape.clone(), ta.data.iter().map(|x| x * c).collect());
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(a, |buf| {
                    for i in 0..g.len() {
                        buf[i] += c * g[i];
                    }
                });
            })),
        )
    }

    /// Add a `[1, d]` (or `[d]`-like) row vector to every row of `[n, d]`.
    pub fn add_row(&mut self, x: Node, r: Node) -> Node {
        let (tx, tr) = (&self.vals[x.0], &self.vals[r.0]);
        let (n, d) = (tx.rows(), tx.cols());
        assert_eq!(tr.len(), d, "row vector length mismatch");
        let mut data = tx.data.clone();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += tr.data[j];
            }
        }
        let t = Tensor::new(tx.shape.clone(), data);
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(x, |buf| buf.iter_mut().zip(g).for_each(|(b, &v)| *b += v));
                gs.accum(r, |buf| {
                    for i in 0..n {
                        for j in 0..d {
                            buf[j] += g[i * d + j];
                        }
                    }
                });
            })),
        )
    }

    // ---- matrix products ----

    /// `[n,k] x [k,m] -> [n,m]`
    pub fn matmul(&mut self, a: Node, b: Node) -> Node {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        assert_eq!(tb.rows(), k, "matmul inner dim mismatch");
        let mut out = ndarray::Array2::<f64>::zeros((n, m));
        general_mat_mul(1.0, &mat(ta), &mat(tb), 0.0, &mut out);
        let t = Tensor::new(vec![n, m], out.into_raw_vec_and_offset().0);
        self.push(
            t,
            Some(Box::new(move |vals, g, gs| {
                let (va, vb) = (&vals[a.0], &vals[b.0]);
                let gm = mat_of(g, n, m);
                gs.accum(a, |buf| {
                    let mut da = ndarray::Array2::<f64>::zeros((n, k));
                    general_mat_mul(1.0, &gm, &mat(vb).t(), 0.0, &mut da);
                    buf.iter_mut()
                        .zip(da.into_raw_vec_and_offset().0)
                        .for_each(|(d, v)| *d += v);
                });
                gs.accum(b, |buf| {
                    let mut db = ndarray::Array2::<f64>::zeros((k, m));
                    general_mat_mul(1.0, &mat(va).t(), &gm, 0.0, &mut db);
                    buf.iter_mut()
                        .zip(db.into_raw_vec_and_offset().0)
                        .for_each(|(d, v)| *d += v);
                });
            })),
        )
    }

    /// `[n,k] x [m,k]^T -> [n,m]` (second operand transposed).
    pub fn matmul_nt(&mut self, a: Node, b: Node) -> Node {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
        assert_eq!(tb.cols(), k, "matmul_nt inner dim mismatch");
        let mut out = ndarray::Array2::<f64>::zeros((n, m));
        general_mat_mul(1.0, &mat(ta), &mat(tb).t(), 0.0, &mut out);
        let t = Tensor::new(vec![n, m], out.into_raw_vec_and_offset().0);
        self.push(
            t,
            Some(Box::new(move |vals, g, gs| {
                let (va, vb) = (&vals[a.0], &vals[b.0]);
                let gm = mat_of(g, n, m);
                gs.accum(a, |buf| {
                    let mut da = ndarray::Array2::<f64>::zeros((n, k));
                    general_mat_mul(1.0, &gm, &mat(vb), 0.0, &mut da);
                    buf.iter_mut()
                        .zip(da.into_raw_vec_and_offset().0)
                        .for_each(|(d, v)| *d += v);
                });
                gs.accum(b, |buf| {
                    let mut db = ndarray::Array2::<f64>::zeros((m, k));
                    general_mat_mul(1.0, &gm.t(), &mat(va), 0.0, &mut db);
                    buf.iter_mut()
                        .zip(db.into_raw_vec_and_offset().0)
                        .for_each(|(d, v)| *d += v);
                });
            })),
        )
    }

    pub fn transpose(&mut self, a: Node) -> Node {
        let ta = &self.vals[a.0];
        let (n, m) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = ta.data[i * m + j];
            }
        }
        let t = Tensor::new(vec![m, n], data);
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(a, |buf| {
                    for i in 0..n {
                        for j in 0..m {
                            buf[i * m + j] += g[j * n + i];
                        }
                    }
                });
            })),
        )
    }

    /// Reinterpret the row-major data under a new `[rows, cols]` shape.
    pub fn reshape(&mut self, a: Node, rows: usize, cols: usize) -> Node {
        let ta = &self.vals[a.0];
        assert_eq!(ta.len(), rows * cols, "reshape must preserve element count");
        let t = Tensor::new(vec![rows, cols], ta.data.clone());
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(a, |buf| {
                    buf.iter_mut().zip(g.iter()).for_each(|(d, v)| *d += v);
                });
            })),
        )
    }

    // ---- nonlinearities ----

    fn unary(
        &mut self,
        a: Node,
        f: impl Fn(f64) -> f64,
        dfdx: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Node {
        let ta = &self.vals[a.0];
        let data: Vec<f64> = ta.data.iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape.clone(), data);
        let out_pending = self.vals.len();
        self.push(
            t,
            Some(Box::new(move |vals, g, gs| {
                let vx = &vals[a.0];
                let vy = &vals[out_pending];
                gs.accum(a, |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * dfdx(vx.data[i], vy.data[i]);
                    }
                });
            })),
        )
    }

    pub fn relu(&mut self, a: Node) -> Node {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, a: Node, slope: f64) -> Node {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&mut self, a: Node) -> Node {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, a: Node) -> Node {
        self.unary(a, |x| x.tanh(), |_, y| 1.0 - y * y)
    }

    pub fn silu(&mut self, a: Node) -> Node {
        self.unary(
            a,
            |x| x / (1.0 + (-x).exp()),
            |x, _| {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn abs(&mut self, a: Node) -> Node {
        self.unary(a, |x| x.abs(), |x, _| if x >= 0.0 { 1.0 } else { -1.0 })
    }

    /// `ln(x + eps)`, elementwise.
    pub fn log_eps(&mut self, a: Node, eps: f64) -> Node {
        self.unary(a, move |x| (x + eps).ln(), move |x, _| 1.0 / (x + eps))
    }

    // ---- softmax family ----

    pub fn softmax_rows(&mut self, a: Node) -> Node {
        let ta = &self.vals[a.0];
        let (n, d) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let row = &ta.data[i * d..(i + 1) * d];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..d {
                let e = (row[j] - mx).exp();
                data[i * d + j] = e;
                z += e;
            }
            for j in 0..d {
                data[i * d + j] /= z;
            }
        }
        let t = Tensor::new(ta.shape.clone(), data);
        let out_pending = self.vals.len();
        self.push(
            t,
            Some(Box::new(move |vals, g, gs| {
                let y = &vals[out_pending];
                gs.accum(a, |buf| {
                    for i in 0..n {
                        let yr = &y.data[i * d..(i + 1) * d];
                        let gr = &g[i * d..(i + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(&yy, &gg)| yy * gg).sum();
                        for j in 0..d {
                            buf[i * d + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            })),
        )
    }

    pub fn log_softmax_rows(&mut self, a: Node) -> Node {
        let ta = &self.vals[a.0];
        let (n, d) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let row = &ta.data[i * d..(i + 1) * d];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
            let lz = mx + z.ln();
            for j in 0..d {
                data[i * d + j] = row[j] - lz;
            }
        }
        let t = Tensor::new(ta.shape.clone(), data);
        let out_pending = self.vals.len();
        self.push(
            t,
            Some(Box::new(move |vals, g, gs| {
                let y = &vals[out_pending];
                gs.accum(a, |buf| {
                    for i in 0..n {
                        let yr = &y.data[i * d..(i + 1) * d];
                        let gr = &g[i * d..(i + 1) * d];
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..d {
                            buf[i * d + j] += gr[j] - yr[j].exp() * gsum;
                        }
                    }
                });
            })),
        )
    }

    // ---- normalization ----

    /// Row-wise layer norm with learned gain and bias (both length d).
    pub fn layer_norm(&mut self, x: Node, gain: Node, bias: Node, eps: f64) -> Node {
        let tx = &self.vals[x.0];
        let (n, d) = (tx.rows(), tx.cols());
        assert_eq!(self.vals[gain.0].len(), d);
        assert_eq!(self.vals[bias.0].len(), d);
        let gdat = &self.vals[gain.0].data;
        let bdat = &self.vals[bias.0].data;
        let mut data = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut xhat = vec![0.0; n * d];
        for i in 0..n {
            let row = &tx.data[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                xhat[i * d + j] = xh;
                data[i * d + j] = xh * gdat[j] + bdat[j];
            }
        }
        let t = Tensor::new(tx.shape.clone(), data);
        let inv_std = Rc::new(inv_std);
        let xhat = Rc::new(xhat);
        self.push(
            t,
            Some(Box::new(move |vals, g, gs| {
                let gn = &vals[gain.0].data;
                gs.accum(bias, |buf| {
                    for i in 0..n {
                        for j in 0..d {
                            buf[j] += g[i * d + j];
                        }
                    }
                });
                gs.accum(gain, |buf| {
                    for i in 0..n {
                        for j in 0..d {
                            buf[j] += g[i * d + j] * xhat[i * d + j];
                        }
                    }
                });
                gs.accum(x, |buf| {
                    for i in 0..n {
                        let mut mean_h = 0.0;
                        let mut mean_hx = 0.0;
                        for j in 0..d {
                            let h = g[i * d + j] * gn[j];
                            mean_h += h;
                            mean_hx += h * xhat[i * d + j];
                        }
                        mean_h /= d as f64;
                        mean_hx /= d as f64;
                        for j in 0..d {
                            let h = g[i * d + j] * gn[j];
                            buf[i * d + j] +=
                                (h - mean_h - xhat[i * d + j] * mean_hx) * inv_std[i];
                        }
                    }
                });
            })),
        )
    }

    // ---- gather / scatter ----

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Node, ids: &[usize]) -> Node {
        let tt = &self.vals[table.0];
        let (v, d) = (tt.rows(), tt.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embedding id {id} out of range {v}");
            data.extend_from_slice(&tt.data[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], data);
        let ids: Rc<Vec<usize>> = Rc::new(ids.to_vec());
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(table, |buf| {
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            buf[id * d + j] += g[i * d + j];
                        }
                    }
                });
            })),
        )
    }

    /// `out[i, 0] = x[i, cols[i]]`.
    pub fn select_cols(&mut self, x: Node, cols: &[usize]) -> Node {
        let tx = &self.vals[x.0];
        let (n, d) = (tx.rows(), tx.cols());
        assert_eq!(cols.len(), n);
        let data: Vec<f64> = cols
            .iter()
            .enumerate()
            .map(|(i, &c)| tx.data[i * d + c])
            .collect();
        let t = Tensor::new(vec![n, 1], data);
        let cols: Rc<Vec<usize>> = Rc::new(cols.to_vec());
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(x, |buf| {
                    for (i, &c) in cols.iter().enumerate() {
                        buf[i * d + c] += g[i];
                    }
                });
            })),
        )
    }

    pub fn slice_rows(&mut self, x: Node, start: usize, len: usize) -> Node {
        let tx = &self.vals[x.0];
        let (n, d) = (tx.rows(), tx.cols());
        assert!(start + len <= n, "slice_rows out of range");
        let data = tx.data[start * d..(start + len) * d].to_vec();
        let t = Tensor::new(vec![len, d], data);
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(x, |buf| {
                    for i in 0..len * d {
                        buf[start * d + i] += g[i];
                    }
                });
            })),
        )
    }

    pub fn slice_cols(&mut self, x: Node, start: usize, len: usize) -> Node {
        let tx = &self.vals[x.0];
        let (n, d) = (tx.rows(), tx.cols());
        assert!(start + len <= d, "slice_cols out of range");
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&tx.data[i * d + start..i * d + start + len]);
        }
        let t = Tensor::new(vec![n, len], data);
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(x, |buf| {
                    for i in 0..n {
                        for j in 0..len {
                            buf[i * d + start + j] += g[i * len + j];
                        }
                    }
                });
            })),
        )
    }

    /// `out[c, i] = x[c, offset + i * stride]`.
    pub fn stride_slice_cols(&mut self, x: Node, offset: usize, stride: usize) -> Node {
        let tx = &self.vals[x.0];
        let (n, d) = (tx.rows(), tx.cols());
        assert!(stride >= 1 && offset < d);
        let len = (d - offset - 1) / stride + 1;
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            for j in 0..len {
                data.push(tx.data[i * d + offset + j * stride]);
            }
        }
        let t = Tensor::new(vec![n, len], data);
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(x, |buf| {
                    for i in 0..n {
                        for j in 0..len {
                            buf[i * d + offset + j * stride] += g[i * len + j];
                        }
                    }
                });
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Node]) -> Node {
        assert!(!parts.is_empty());
        let d = self.vals[parts[0].0].cols();
        let mut data = Vec::new();
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let tp = &self.vals[p.0];
            assert_eq!(tp.cols(), d, "concat_rows col mismatch");
            lens.push(tp.rows());
            data.extend_from_slice(&tp.data);
        }
        let n: usize = lens.iter().sum();
        let t = Tensor::new(vec![n, d], data);
        let parts: Rc<Vec<Node>> = Rc::new(parts.to_vec());
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                let mut off = 0;
                for (pi, &p) in parts.iter().enumerate() {
                    let rows = lens[pi];
                    gs.accum(p, |buf| {
                        for i in 0..rows * d {
                            buf[i] += g[off * d + i];
                        }
                    });
                    off += rows;
                }
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Node]) -> Node {
        assert!(!parts.is_empty());
        let n = self.vals[parts[0].0].rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.vals[p.0].cols()).collect();
        for &p in parts {
            assert_eq!(self.vals[p.0].rows(), n, "concat_cols row mismatch");
        }
        let d: usize = widths.iter().sum();
        let mut data = vec![0.0; n * d];
        let mut off = 0;
        for (pi, &p) in parts.iter().enumerate() {
            let tp = &self.vals[p.0];
            let w = widths[pi];
            for i in 0..n {
                data[i * d + off..i * d + off + w].copy_from_slice(&tp.data[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let t = Tensor::new(vec![n, d], data);
        let parts: Rc<Vec<Node>> = Rc::new(parts.to_vec());
        let widths = Rc::new(widths);
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                let mut off = 0;
                for (pi, &p) in parts.iter().enumerate() {
                    let w = widths[pi];
                    gs.accum(p, |buf| {
                        for i in 0..n {
                            for j in 0..w {
                                buf[i * w + j] += g[i * d + off + j];
                            }
                        }
                    });
                    off += w;
                }
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Node) -> Node {
        let ta = &self.vals[a.0];
        let s: f64 = ta.data.iter().sum();
        let t = Tensor::scalar(s);
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(a, |buf| {
                    for v in buf.iter_mut() {
                        *v += g[0];
                    }
                });
            })),
        )
    }

    pub fn mean_all(&mut self, a: Node) -> Node {
        let n = self.vals[a.0].len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    // ---- convolutions ----

    /// 1-D convolution over `[C_in, L]` with weight `[C_out, C_in, k]`
    /// (flattened) and zero padding.
    #[allow(clippy::too_many_arguments)]
    pub fn conv1d(
        &mut self,
        x: Node,
        w: Node,
        b: Option<Node>,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Node {
        let tx = &self.vals[x.0];
        let (c_in, l) = (tx.rows(), tx.cols());
        assert_eq!(self.vals[w.0].len(), c_out * c_in * kernel, "conv1d weight size");
        let span = dilation * (kernel - 1) + 1;
        assert!(l + 2 * pad >= span, "conv1d input too short");
        let l_out = (l + 2 * pad - span) / stride + 1;
        let wd = &self.vals[w.0].data;
        let mut data = vec![0.0; c_out * l_out];
        for co in 0..c_out {
            for ci in 0..c_in {
                let wrow = &wd[(co * c_in + ci) * kernel..(co * c_in + ci + 1) * kernel];
                let xrow = &tx.data[ci * l..(ci + 1) * l];
                for lo in 0..l_out {
                    let base = lo * stride;
                    let mut acc = 0.0;
                    for j in 0..kernel {
                        let pos = base + j * dilation;
                        if pos >= pad && pos - pad < l {
                            acc += wrow[j] * xrow[pos - pad];
                        }
                    }
                    data[co * l_out + lo] += acc;
                }
            }
        }
        if let Some(bn) = b {
            let bd = &self.vals[bn.0].data;
            assert_eq!(bd.len(), c_out);
            for co in 0..c_out {
                for lo in 0..l_out {
                    data[co * l_out + lo] += bd[co];
                }
            }
        }
        let t = Tensor::new(vec![c_out, l_out], data);
        self.push(
            t,
            Some(Box::new(move |vals, g, gs| {
                let vx = &vals[x.0];
                let vw = &vals[w.0];
                gs.accum(w, |buf| {
                    for co in 0..c_out {
                        for ci in 0..c_in {
                            let xrow = &vx.data[ci * l..(ci + 1) * l];
                            for j in 0..kernel {
                                let mut acc = 0.0;
                                for lo in 0..l_out {
                                    let pos = lo * stride + j * dilation;
                                    if pos >= pad && pos - pad < l {
                                        acc += g[co * l_out + lo] * xrow[pos - pad];
                                    }
                                }
                                buf[(co * c_in + ci) * kernel + j] += acc;
                            }
                        }
                    }
                });
                gs.accum(x, |buf| {
                    for co in 0..c_out {
                        for ci in 0..c_in {
                            let wrow =
                                &vw.data[(co * c_in + ci) * kernel..(co * c_in + ci + 1) * kernel];
                            for lo in 0..l_out {
                                let gv = g[co * l_out + lo];
                                if gv == 0.0 {
                                    continue;
                                }
                                let base = lo * stride;
                                for j in 0..kernel {
                                    let pos = base + j * dilation;
                                    if pos >= pad && pos - pad < l {
                                        buf[ci * l + pos - pad] += gv * wrow[j];
                                    }
                                }
                            }
                        }
                    }
                });
                if let Some(bn) = b {
                    gs.accum(bn, |buf| {
                        for co in 0..c_out {
                            for lo in 0..l_out {
                                buf[co] += g[co * l_out + lo];
                            }
                        }
                    });
                }
            })),
        )
    }

    /// Depthwise 1-D convolution: weight `[C, k]`, each channel filtered
    /// independently, stride 1.
    pub fn depthwise_conv1d(&mut self, x: Node, w: Node, kernel: usize, pad: usize) -> Node {
        let tx = &self.vals[x.0];
        let (c, l) = (tx.rows(), tx.cols());
        assert_eq!(self.vals[w.0].len(), c * kernel);
        assert!(l + 2 * pad >= kernel);
        let l_out = l + 2 * pad - kernel + 1;
        let wd = &self.vals[w.0].data;
        let mut data = vec![0.0; c * l_out];
        for ci in 0..c {
            let xrow = &tx.data[ci * l..(ci + 1) * l];
            let wrow = &wd[ci * kernel..(ci + 1) * kernel];
            for lo in 0..l_out {
                let mut acc = 0.0;
                for j in 0..kernel {
                    let pos = lo + j;
                    if pos >= pad && pos - pad < l {
                        acc += wrow[j] * xrow[pos - pad];
                    }
                }
                data[ci * l_out + lo] = acc;
            }
        }
        let t = Tensor::new(vec![c, l_out], data);
        self.push(
            t,
            Some(Box::new(move |vals, g, gs| {
                let vx = &vals[x.0];
                let vw = &vals[w.0];
                gs.accum(w, |buf| {
                    for ci in 0..c {
                        let xrow = &vx.data[ci * l..(ci + 1) * l];
                        for j in 0..kernel {
                            let mut acc = 0.0;
                            for lo in 0..l_out {
                                let pos = lo + j;
                                if pos >= pad && pos - pad < l {
                                    acc += g[ci * l_out + lo] * xrow[pos - pad];
                                }
                            }
                            buf[ci * kernel + j] += acc;
                        }
                    }
                });
                gs.accum(x, |buf| {
                    for ci in 0..c {
                        let wrow = &vw.data[ci * kernel..(ci + 1) * kernel];
                        for lo in 0..l_out {
                            let gv = g[ci * l_out + lo];
                            if gv == 0.0 {
                                continue;
                            }
                            for j in 0..kernel {
                                let pos = lo + j;
                                if pos >= pad && pos - pad < l {
                                    buf[ci * l + pos - pad] += gv * wrow[j];
                                }
                            }
                        }
                    }
                });
            })),
        )
    }

    /// Transposed 1-D convolution over `[C_in, L]` with weight
    /// `[C_in, C_out, k]`. Output length `(L-1)*stride - 2*pad + k`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose1d(
        &mut self,
        x: Node,
        w: Node,
        b: Option<Node>,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Node {
        let tx = &self.vals[x.0];
        let (c_in, l) = (tx.rows(), tx.cols());
        assert_eq!(self.vals[w.0].len(), c_in * c_out * kernel);
        let l_full = (l - 1) * stride + kernel;
        assert!(l_full > 2 * pad, "conv_transpose1d padding too large");
        let l_out = l_full - 2 * pad;
        let wd = &self.vals[w.0].data;
        let mut data = vec![0.0; c_out * l_out];
        for ci in 0..c_in {
            let xrow = &tx.data[ci * l..(ci + 1) * l];
            for co in 0..c_out {
                let wrow = &wd[(ci * c_out + co) * kernel..(ci * c_out + co + 1) * kernel];
                for m in 0..l {
                    let xv = xrow[m];
                    if xv == 0.0 {
                        continue;
                    }
                    let base = m * stride;
                    for j in 0..kernel {
                        let pos = base + j;
                        if pos >= pad && pos - pad < l_out {
                            data[co * l_out + pos - pad] += xv * wrow[j];
                        }
                    }
                }
            }
        }
        if let Some(bn) = b {
            let bd = &self.vals[bn.0].data;
            for co in 0..c_out {
                for lo in 0..l_out {
                    data[co * l_out + lo] += bd[co];
                }
            }
        }
        let t = Tensor::new(vec![c_out, l_out], data);
        self.push(
            t,
            Some(Box::new(move |vals, g, gs| {
                let vx = &vals[x.0];
                let vw = &vals[w.0];
                gs.accum(x, |buf| {
                    for ci in 0..c_in {
                        for co in 0..c_out {
                            let wrow =
                                &vw.data[(ci * c_out + co) * kernel..(ci * c_out + co + 1) * kernel];
                            for m in 0..l {
                                let base = m * stride;
                                let mut acc = 0.0;
                                for j in 0..kernel {
                                    let pos = base + j;
                                    if pos >= pad && pos - pad < l_out {
                                        acc += g[co * l_out + pos - pad] * wrow[j];
                                    }
                                }
                                buf[ci * l + m] += acc;
                            }
                        }
                    }
                });
                gs.accum(w, |buf| {
                    for ci in 0..c_in {
                        let xrow = &vx.data[ci * l..(ci + 1) * l];
                        for co in 0..c_out {
                            for j in 0..kernel {
                                let mut acc = 0.0;
                                for m in 0..l {
                                    let pos = m * stride + j;
                                    if pos >= pad && pos - pad < l_out {
                                        acc += xrow[m] * g[co * l_out + pos - pad];
                                    }
                                }
                                buf[(ci * c_out + co) * kernel + j] += acc;
                            }
                        }
                    }
                });
                if let Some(bn) = b {
                    gs.accum(bn, |buf| {
                        for co in 0..c_out {
                            for lo in 0..l_out {
                                buf[co] += g[co * l_out + lo];
                            }
                        }
                    });
                }
            })),
        )
    }

    /// Average pooling over `[C, L]`, exact windows (no padding).
    pub fn avg_pool1d(&mut self, x: Node, kernel: usize, stride: usize) -> Node {
        let tx = &self.vals[x.0];
        let (c, l) = (tx.rows(), tx.cols());
        assert!(l >= kernel);
        let l_out = (l - kernel) / stride + 1;
        let mut data = vec![0.0; c * l_out];
        for ci in 0..c {
            for lo in 0..l_out {
                let s: f64 = tx.data[ci * l + lo * stride..ci * l + lo * stride + kernel]
                    .iter()
                    .sum();
                data[ci * l_out + lo] = s / kernel as f64;
            }
        }
        let t = Tensor::new(vec![c, l_out], data);
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(x, |buf| {
                    let inv = 1.0 / kernel as f64;
                    for ci in 0..c {
                        for lo in 0..l_out {
                            let gv = g[ci * l_out + lo] * inv;
                            for j in 0..kernel {
                                buf[ci * l + lo * stride + j] += gv;
                            }
                        }
                    }
                });
            })),
        )
    }

    /// Reflection padding along columns (no edge repeat). Needs
    /// `left, right <= L - 1`.
    pub fn reflect_pad_cols(&mut self, x: Node, left: usize, right: usize) -> Node {
        let tx = &self.vals[x.0];
        let (c, l) = (tx.rows(), tx.cols());
        assert!(l >= 2 && left <= l - 1 && right <= l - 1, "reflect pad too wide");
        let l_out = l + left + right;
        let map = move |i: usize| -> usize {
            let s = i as isize - left as isize;
            if s < 0 {
                (-s) as usize
            } else if s as usize >= l {
                2 * l - 2 - s as usize
            } else {
                s as usize
            }
        };
        let mut data = vec![0.0; c * l_out];
        for ci in 0..c {
            for i in 0..l_out {
                data[ci * l_out + i] = tx.data[ci * l + map(i)];
            }
        }
        let t = Tensor::new(vec![c, l_out], data);
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(x, |buf| {
                    for ci in 0..c {
                        for i in 0..l_out {
                            buf[ci * l + map(i)] += g[ci * l_out + i];
                        }
                    }
                });
            })),
        )
    }

    /// Per-row linear map with a constant matrix chosen per row:
    /// `out[i] = mats[assign[i]] * x[i]` where each matrix is
    /// `[out_cols, in_cols]` row-major.
    pub fn rowwise_linear(
        &mut self,
        x: Node,
        mats: Rc<Vec<Vec<f64>>>,
        assign: &[usize],
        out_cols: usize,
    ) -> Node {
        let tx = &self.vals[x.0];
        let (n, d) = (tx.rows(), tx.cols());
        assert_eq!(assign.len(), n);
        for m in mats.iter() {
            assert_eq!(m.len(), out_cols * d, "rowwise matrix shape");
        }
        let mut data = vec![0.0; n * out_cols];
        for i in 0..n {
            let m = &mats[assign[i]];
            let xr = &tx.data[i * d..(i + 1) * d];
            for o in 0..out_cols {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += m[o * d + j] * xr[j];
                }
                data[i * out_cols + o] = acc;
            }
        }
        let t = Tensor::new(vec![n, out_cols], data);
        let assign: Rc<Vec<usize>> = Rc::new(assign.to_vec());
        self.push(
            t,
            Some(Box::new(move |_vals, g, gs| {
                gs.accum(x, |buf| {
                    for i in 0..n {
                        let m = &mats[assign[i]];
                        let gr = &g[i * out_cols..(i + 1) * out_cols];
                        for j in 0..d {
                            let mut acc = 0.0;
                            for o in 0..out_cols {
                                acc += m[o * d + j] * gr[o];
                            }
                            buf[i * d + j] += acc;
                        }
                    }
                });
            })),
        )
    }
}
