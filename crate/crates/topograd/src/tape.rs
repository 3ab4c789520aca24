//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Define-by-run: a [`Tape`] is built fresh for each forward pass. Every op
//! appends a node holding the forward value and a backward rule; nodes are
//! therefore already in topological order, and [`Tape::backward`] replays
//! them in reverse, accumulating vector-Jacobian products.
//!
//! Every forward op validates shapes and checks its result for NaN/Inf, so a
//! non-finite value surfaces as an error at the op that produced it.

use crate::tensor::{conv2d_raw, matmul_raw, matmul_tb_raw};
use crate::{Error, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

/// Backward rule: upstream gradient in, one gradient per parent out.
type GradFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<ValueId>,
    grad_fn: Option<GradFn>,
    trainable: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a trainable leaf. Gradients are guaranteed for these after
    /// `backward` (zeros if the loss does not depend on the leaf).
    pub fn param(&mut self, value: Tensor) -> ValueId {
        self.push_leaf(value, true)
    }

    /// Record a non-trainable leaf (inputs, frozen weights).
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push_leaf(value, false)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { value, parents: vec![], grad_fn: None, trainable });
        id
    }

    /// Append an interior node. Fails if the forward value is non-finite.
    pub(crate) fn push_op(
        &mut self,
        op: &str,
        value: Tensor,
        parents: Vec<ValueId>,
        grad_fn: GradFn,
    ) -> Result<ValueId> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite result in {op}")));
        }
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { value, parents, grad_fn: Some(grad_fn), trainable: false });
        Ok(id)
    }

    fn binary_same_shape(
        &mut self,
        op: &'static str,
        a: ValueId,
        b: ValueId,
        fwd: impl Fn(f64, f64) -> f64,
        grad_fn: GradFn,
    ) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dim(format!(
                "{op}: shape {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| fwd(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push_op(op, value, vec![a, b], grad_fn)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Box::new(|g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape(
            "sub",
            a,
            b,
            |x, y| x - y,
            Box::new(|g| vec![g.clone(), g.map(|v| -v)]),
        )
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        self.binary_same_shape(
            "mul",
            a,
            b,
            |x, y| x * y,
            Box::new(move |g| {
                let da = zip_mul(g, &tb);
                let db = zip_mul(g, &ta);
                vec![da, db]
            }),
        )
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.value(b).data().iter().any(|&v| v == 0.0) {
            return Err(Error::Numeric("division by zero".into()));
        }
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        self.binary_same_shape(
            "div",
            a,
            b,
            |x, y| x / y,
            Box::new(move |g| {
                let da: Vec<f64> =
                    g.data().iter().zip(tb.data()).map(|(&gv, &bv)| gv / bv).collect();
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(ta.data().iter().zip(tb.data()))
                    .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                    .collect();
                vec![
                    Tensor::new(g.shape().to_vec(), da).unwrap(),
                    Tensor::new(g.shape().to_vec(), db).unwrap(),
                ]
            }),
        )
    }

    /// Multiply by a compile-time-known constant.
    pub fn scale(&mut self, x: ValueId, k: f64) -> Result<ValueId> {
        let value = self.value(x).map(|v| v * k);
        self.push_op("scale", value, vec![x], Box::new(move |g| vec![g.map(|v| v * k)]))
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        let tx = self.value(x).clone();
        let value = tx.map(|v| v.max(0.0));
        self.push_op(
            "relu",
            value,
            vec![x],
            Box::new(move |g| {
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![Tensor::new(g.shape().to_vec(), d).unwrap()]
            }),
        )
    }

    pub fn sqrt(&mut self, x: ValueId) -> Result<ValueId> {
        if self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric("sqrt of negative value".into()));
        }
        let value = self.value(x).map(f64::sqrt);
        let out = value.clone();
        self.push_op(
            "sqrt",
            value,
            vec![x],
            Box::new(move |g| {
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &sv)| gv * 0.5 / sv)
                    .collect();
                vec![Tensor::new(g.shape().to_vec(), d).unwrap()]
            }),
        )
    }

    /// Sum of all elements → shape `[1]`.
    pub fn sum(&mut self, x: ValueId) -> Result<ValueId> {
        let tx = self.value(x);
        let total: f64 = tx.data().iter().sum();
        let shape = tx.shape().to_vec();
        self.push_op(
            "sum",
            Tensor::scalar(total),
            vec![x],
            Box::new(move |g| vec![Tensor::full(&shape, g.item())]),
        )
    }

    /// Mean of all elements → shape `[1]`.
    pub fn mean(&mut self, x: ValueId) -> Result<ValueId> {
        let tx = self.value(x);
        let n = tx.len() as f64;
        let total: f64 = tx.data().iter().sum();
        let shape = tx.shape().to_vec();
        self.push_op(
            "mean",
            Tensor::scalar(total / n),
            vec![x],
            Box::new(move |g| vec![Tensor::full(&shape, g.item() / n)]),
        )
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let value = self.value(x).reshape(shape)?;
        let back_shape = self.value(x).shape().to_vec();
        self.push_op(
            "reshape",
            value,
            vec![x],
            Box::new(move |g| vec![g.reshape(back_shape.clone()).unwrap()]),
        )
    }

    /// Reshape to 1-D.
    pub fn flatten(&mut self, x: ValueId) -> Result<ValueId> {
        let n = self.value(x).len();
        self.reshape(x, vec![n])
    }

    /// `out[i] = x[indices[i]]`; backward scatter-adds.
    pub fn gather(&mut self, x: ValueId, indices: Vec<usize>, shape: Vec<usize>) -> Result<ValueId> {
        let tx = self.value(x);
        let src_len = tx.len();
        if indices.iter().any(|&i| i >= src_len) {
            return Err(Error::Dim("gather index out of range".into()));
        }
        let data: Vec<f64> = indices.iter().map(|&i| tx.data()[i]).collect();
        let value = Tensor::new(shape, data)?;
        let src_shape = tx.shape().to_vec();
        self.push_op(
            "gather",
            value,
            vec![x],
            Box::new(move |g| {
                let mut d = Tensor::zeros(&src_shape);
                for (&i, &gv) in indices.iter().zip(g.data()) {
                    d.data_mut()[i] += gv;
                }
                vec![d]
            }),
        )
    }

    /// `a [m×k] · b [k×n]`.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dim(format!("matmul: {sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = Tensor::new(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n))?;
        let (ca, cb) = (ta.clone(), tb.clone());
        self.push_op(
            "matmul",
            value,
            vec![a, b],
            Box::new(move |g| {
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                let da = matmul_tb_raw(g.data(), cb.data(), m, n, k);
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = ca.data()[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += av * g.data()[i * n + j];
                        }
                    }
                }
                vec![Tensor::new(vec![m, k], da).unwrap(), Tensor::new(vec![k, n], db).unwrap()]
            }),
        )
    }

    /// `a [m×k] · b [n×k]ᵀ` — linear layer `x · Wᵀ`.
    pub fn matmul_tb(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Dim(format!("matmul_tb: {sa:?} · {sb:?}ᵀ")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let value = Tensor::new(vec![m, n], matmul_tb_raw(ta.data(), tb.data(), m, k, n))?;
        let (ca, cb) = (ta.clone(), tb.clone());
        self.push_op(
            "matmul_tb",
            value,
            vec![a, b],
            Box::new(move |g| {
                // dA = dC · B, dB = dCᵀ · A
                let da = matmul_raw(g.data(), cb.data(), m, n, k);
                let mut db = vec![0.0; n * k];
                for i in 0..m {
                    for j in 0..n {
                        let gv = g.data()[i * n + j];
                        for p in 0..k {
                            db[j * k + p] += gv * ca.data()[i * k + p];
                        }
                    }
                }
                vec![Tensor::new(vec![m, k], da).unwrap(), Tensor::new(vec![n, k], db).unwrap()]
            }),
        )
    }

    /// Broadcast-add a `[n]` bias to every row of `x [m×n]`.
    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let sx = tx.shape().to_vec();
        if sx.len() != 2 || tb.shape() != [sx[1]] {
            return Err(Error::Dim(format!(
                "add_bias: {:?} + {:?}",
                tx.shape(),
                tb.shape()
            )));
        }
        let (m, n) = (sx[0], sx[1]);
        let data: Vec<f64> = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % n])
            .collect();
        self.push_op(
            "add_bias",
            Tensor::new(sx, data)?,
            vec![x, bias],
            Box::new(move |g| {
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += g.data()[i * n + j];
                    }
                }
                vec![g.clone(), Tensor::new(vec![n], db).unwrap()]
            }),
        )
    }

    /// Valid cross-correlation, stride 1, no padding.
    /// `x [c×h×w]` with `kernel [o×c×kh×kw]` → `[o×h'×w']`.
    pub fn conv2d(&mut self, x: ValueId, kernel: ValueId) -> Result<ValueId> {
        let (tx, tk) = (self.value(x), self.value(kernel));
        let (sx, sk) = (tx.shape(), tk.shape());
        if sx.len() != 3 || sk.len() != 4 || sx[0] != sk[1] {
            return Err(Error::Dim(format!("conv2d: input {sx:?}, kernel {sk:?}")));
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let (o, kh, kw) = (sk[0], sk[2], sk[3]);
        if kh > h || kw > w {
            return Err(Error::Dim(format!(
                "conv2d: kernel {kh}×{kw} larger than input {h}×{w}"
            )));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let value =
            Tensor::new(vec![o, oh, ow], conv2d_raw(tx.data(), (c, h, w), tk.data(), (o, kh, kw)))?;
        let (cx, ck) = (tx.clone(), tk.clone());
        self.push_op(
            "conv2d",
            value,
            vec![x, kernel],
            Box::new(move |g| {
                let mut dx = vec![0.0; c * h * w];
                let mut dk = vec![0.0; o * c * kh * kw];
                for oc in 0..o {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let gv = g.data()[(oc * oh + y) * ow + xo];
                            if gv == 0.0 {
                                continue;
                            }
                            for ic in 0..c {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let xi = (ic * h + y + ky) * w + xo + kx;
                                        let ki = ((oc * c + ic) * kh + ky) * kw + kx;
                                        dx[xi] += gv * ck.data()[ki];
                                        dk[ki] += gv * cx.data()[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::new(vec![c, h, w], dx).unwrap(),
                    Tensor::new(vec![o, c, kh, kw], dk).unwrap(),
                ]
            }),
        )
    }

    /// Stack 1-D rows of equal length into a `[rows.len() × n]` matrix.
    pub fn concat_rows(&mut self, rows: &[ValueId]) -> Result<ValueId> {
        if rows.is_empty() {
            return Err(Error::Dim("concat_rows: no rows".into()));
        }
        let n = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let t = self.value(r);
            if t.len() != n {
                return Err(Error::Dim("concat_rows: ragged rows".into()));
            }
            data.extend_from_slice(t.data());
        }
        let m = rows.len();
        let value = Tensor::new(vec![m, n], data)?;
        self.push_op(
            "concat_rows",
            value,
            rows.to_vec(),
            Box::new(move |g| {
                (0..m)
                    .map(|i| Tensor::new(vec![n], g.data()[i * n..(i + 1) * n].to_vec()).unwrap())
                    .collect()
            }),
        )
    }

    /// Mean cross-entropy between row-wise softmax of `logits [b×k]` and
    /// integer labels. Log-sum-exp stabilized.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let tl = self.value(logits);
        let s = tl.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dim(format!(
                "softmax_cross_entropy: logits {s:?}, {} labels",
                labels.len()
            )));
        }
        let (b, k) = (s[0], s[1]);
        if labels.iter().any(|&l| l >= k) {
            return Err(Error::Dim(format!("label out of range for {k} classes")));
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &tl.data()[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..k {
                let e = (row[j] - max).exp();
                probs[i * k + j] = e;
                denom += e;
            }
            for j in 0..k {
                probs[i * k + j] /= denom;
            }
            loss += denom.ln() + max - row[labels[i]];
        }
        loss /= b as f64;
        let labels = labels.to_vec();
        self.push_op(
            "softmax_cross_entropy",
            Tensor::scalar(loss),
            vec![logits],
            Box::new(move |g| {
                let scale = g.item() / b as f64;
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= 1.0;
                }
                for v in d.iter_mut() {
                    *v *= scale;
                }
                vec![Tensor::new(vec![b, k], d).unwrap()]
            }),
        )
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every node
    /// the loss depends on; trainable leaves read back as zeros when
    /// unreached. The tape itself is untouched (rebuild it for the next
    /// forward pass).
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dim("backward: loss must be a scalar".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let node = &self.nodes[id];
            let Some(grad_fn) = &node.grad_fn else { continue };
            let parent_grads = grad_fn(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (pid, pg) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(pg.shape(), self.nodes[pid.0].value.shape());
                match &mut grads[pid.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| if n.trainable { Some(n.value.shape().to_vec()) } else { None })
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Option<Vec<usize>>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for a trainable leaf; zeros if the loss never reached it.
    pub fn for_param(&self, id: ValueId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let shape = self.shapes[id.0]
                    .as_ref()
                    .expect("for_param called on non-trainable node");
                Tensor::zeros(shape)
            }
        }
    }
}

fn zip_mul(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

/// Max relative error between the tape gradient of `f` at `x` and central
/// finite differences: `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`,
/// maximized over coordinates. `f` must be deterministic.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, ValueId) -> Result<ValueId>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Numeric(format!("grad_check: eps {eps} outside (0, 1e-2]")));
    }
    let mut tape = Tape::new();
    let xid = tape.param(x.clone());
    let loss = f(&mut tape, xid)?;
    if self_check_scalar(&tape, loss).is_none() {
        return Err(Error::Dim("grad_check: f must return a scalar".into()));
    }
    let analytic = tape.backward(loss)?.for_param(xid);

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let id = t.constant(probe.clone());
        let l = f(&mut t, id)?;
        Ok(t.value(l).item())
    };
    let mut max_rel = 0.0_f64;
    for i in 0..x.len() {
        let mut hi = x.clone();
        hi.data_mut()[i] += eps;
        let mut lo = x.clone();
        lo.data_mut()[i] -= eps;
        let numeric = (eval(&hi)? - eval(&lo)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

fn self_check_scalar(tape: &Tape, id: ValueId) -> Option<f64> {
    let v = tape.value(id);
    (v.len() == 1).then(|| v.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn rand_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_case() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = t.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = t.matmul(i2, b).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_orthogonal_vectors() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        let b = t.constant(Tensor::new(vec![2, 1], vec![0.0, 5.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = SeededRng::new(7);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let mut t = Tape::new();
        let (ia, ib) = (t.constant(a.clone()), t.constant(b.clone()));
        let c = t.matmul(ia, ib).unwrap();
        // independent triple-loop oracle
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += a.at2(i, p) * b.at2(p, j);
                }
                assert!((t.value(c).at2(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(Error::Dim(_))));
    }

    #[test]
    fn conv2d_scalar_kernel_scales_input() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 3, 3], (1..=9).map(|i| i as f64).collect()).unwrap());
        let k = t.constant(Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap());
        let y = t.conv2d(x, k).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0]);
    }

    #[test]
    fn conv2d_all_ones_sums() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[1, 3, 3], 1.0));
        let k = t.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = t.conv2d(x, k).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1, 1]);
        assert_eq!(t.value(y).data(), &[9.0]);
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let mut rng = SeededRng::new(11);
        let x = rand_tensor(&mut rng, &[2, 5, 4]);
        let k = rand_tensor(&mut rng, &[3, 2, 2, 3]);
        let mut t = Tape::new();
        let (ix, ik) = (t.constant(x.clone()), t.constant(k.clone()));
        let y = t.conv2d(ix, ik).unwrap();
        assert_eq!(t.value(y).shape(), &[3, 4, 2]);
        for oc in 0..3 {
            for r in 0..4 {
                for c in 0..2 {
                    let mut acc = 0.0;
                    for ic in 0..2 {
                        for ky in 0..2 {
                            for kx in 0..3 {
                                acc += x.at3(ic, r + ky, c + kx)
                                    * k.data()[((oc * 2 + ic) * 2 + ky) * 3 + kx];
                            }
                        }
                    }
                    assert!((t.value(y).at3(oc, r, c) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv2d_kernel_too_large_errors() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 2, 2]));
        let k = t.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(matches!(t.conv2d(x, k), Err(Error::Dim(_))));
    }

    #[test]
    fn relu_of_negative_is_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(-1.0));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).item(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let mut t = Tape::new();
        let logits = t.constant(Tensor::zeros(&[1, 4]));
        let l = t.softmax_cross_entropy(logits, &[2]).unwrap();
        assert!((t.value(l).item() - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.for_param(x).data(), &[1.0; 6]);
    }

    #[test]
    fn division_by_zero_is_numeric_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(1.0));
        let b = t.constant(Tensor::scalar(0.0));
        assert!(matches!(t.div(a, b), Err(Error::Numeric(_))));
    }

    #[test]
    fn reshape_flatten_roundtrip_is_identity() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let f = t.flatten(x).unwrap();
        let r = t.reshape(f, vec![2, 3]).unwrap();
        assert_eq!(t.value(r), t.value(x));
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let mut rng = SeededRng::new(3);
        let x = rand_tensor(&mut rng, &[4, 3]);
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn grad_check_linear_is_exact() {
        let mut rng = SeededRng::new(4);
        let x = rand_tensor(&mut rng, &[5]);
        let err = grad_check(|t, x| t.sum(x), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|t, x| t.sum(x), &x, 0.0).is_err());
        assert!(grad_check(|t, x| t.sum(x), &x, 0.5).is_err());
    }

    /// Every registered op passes a finite-difference check on random
    /// small inputs (inputs kept away from kinks and singularities).
    #[test]
    fn grad_check_all_ops() {
        let mut rng = SeededRng::new(42);
        let away_from_zero = |t: &Tensor| t.map(|v| v + 0.5 * v.signum() + if v == 0.0 { 0.5 } else { 0.0 });

        let x = rand_tensor(&mut rng, &[3, 4]);
        let w = rand_tensor(&mut rng, &[4, 2]);
        let checks: Vec<(&str, f64)> = vec![
            ("matmul_a", {
                let w = w.clone();
                grad_check(move |t, x| { let b = t.constant(w.clone()); let y = t.matmul(x, b)?; let y2 = t.mul(y, y)?; t.sum(y2) }, &x, 1e-5).unwrap()
            }),
            ("matmul_b", {
                let a = x.clone();
                grad_check(move |t, w| { let a = t.constant(a.clone()); let y = t.matmul(a, w)?; let y2 = t.mul(y, y)?; t.sum(y2) }, &w, 1e-5).unwrap()
            }),
            ("matmul_tb", {
                let a = x.clone();
                grad_check(move |t, w| { let a = t.constant(a.clone()); let y = t.matmul_tb(a, w)?; let y2 = t.mul(y, y)?; t.sum(y2) }, &rand_tensor(&mut rng, &[2, 4]), 1e-5).unwrap()
            }),
            ("conv2d_x", {
                let k = rand_tensor(&mut rng, &[2, 1, 2, 2]);
                grad_check(move |t, x| { let k = t.constant(k.clone()); let y = t.conv2d(x, k)?; let y2 = t.mul(y, y)?; t.sum(y2) }, &rand_tensor(&mut rng, &[1, 4, 4]), 1e-5).unwrap()
            }),
            ("conv2d_k", {
                let x3 = rand_tensor(&mut rng, &[2, 4, 3]);
                grad_check(move |t, k| { let x = t.constant(x3.clone()); let y = t.conv2d(x, k)?; let y2 = t.mul(y, y)?; t.sum(y2) }, &rand_tensor(&mut rng, &[2, 2, 2, 2]), 1e-5).unwrap()
            }),
            ("add", {
                let b = rand_tensor(&mut rng, &[3, 4]);
                grad_check(move |t, x| { let b = t.constant(b.clone()); let y = t.add(x, b)?; let y2 = t.mul(y, y)?; t.sum(y2) }, &x, 1e-5).unwrap()
            }),
            ("sub", {
                let b = rand_tensor(&mut rng, &[3, 4]);
                grad_check(move |t, x| { let b = t.constant(b.clone()); let y = t.sub(b, x)?; let y2 = t.mul(y, y)?; t.sum(y2) }, &x, 1e-5).unwrap()
            }),
            ("mul", {
                let b = rand_tensor(&mut rng, &[3, 4]);
                grad_check(move |t, x| { let b = t.constant(b.clone()); let y = t.mul(x, b)?; t.sum(y) }, &x, 1e-5).unwrap()
            }),
            ("div", {
                let denom = away_from_zero(&rand_tensor(&mut rng, &[3, 4]));
                grad_check(move |t, x| { let d = t.constant(denom.clone()); let y = t.div(x, d)?; t.sum(y) }, &x, 1e-5).unwrap()
            }),
            ("relu", {
                let xr = away_from_zero(&rand_tensor(&mut rng, &[3, 4]));
                grad_check(|t, x| { let y = t.relu(x)?; let y2 = t.mul(y, y)?; t.sum(y2) }, &xr, 1e-5).unwrap()
            }),
            ("sqrt", {
                let xp = rand_tensor(&mut rng, &[6]).map(|v| v.abs() + 0.5);
                grad_check(|t, x| { let y = t.sqrt(x)?; t.sum(y) }, &xp, 1e-5).unwrap()
            }),
            ("mean", grad_check(|t, x| { let y = t.mul(x, x)?; t.mean(y) }, &x, 1e-5).unwrap()),
            ("add_bias", {
                let xb = rand_tensor(&mut rng, &[3, 4]);
                grad_check(move |t, b| { let x = t.constant(xb.clone()); let y = t.add_bias(x, b)?; let y2 = t.mul(y, y)?; t.sum(y2) }, &rand_tensor(&mut rng, &[4]), 1e-5).unwrap()
            }),
            ("gather", {
                grad_check(|t, x| { let g = t.gather(x, vec![0, 2, 2, 5], vec![4])?; let y = t.mul(g, g)?; t.sum(y) }, &rand_tensor(&mut rng, &[6]), 1e-5).unwrap()
            }),
            ("softmax_cross_entropy", {
                grad_check(|t, x| t.softmax_cross_entropy(x, &[1, 0, 3]), &rand_tensor(&mut rng, &[3, 4]), 1e-5).unwrap()
            }),
        ];
        for (name, err) in checks {
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = SeededRng::new(9);
        let a = rand_tensor(&mut rng, &[4, 4]);
        let b = rand_tensor(&mut rng, &[4, 4]);
        let run = || {
            let mut t = Tape::new();
            let (ia, ib) = (t.constant(a.clone()), t.constant(b.clone()));
            let m = t.matmul(ia, ib).unwrap();
            let r = t.relu(m).unwrap();
            let s = t.sum(r).unwrap();
            t.value(s).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn gradient_accumulates_across_consumers() {
        // y = x·2 + x·3 → dy/dx = 5
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(1.5));
        let a = t.scale(x, 2.0).unwrap();
        let b = t.scale(x, 3.0).unwrap();
        let y = t.add(a, b).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.for_param(x).item(), 5.0);
    }

    #[test]
    fn unreached_param_grad_is_zeros() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(&[2, 2]));
        let y = t.param(Tensor::scalar(3.0));
        let l = t.scale(y, 2.0).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.for_param(x).data(), &[0.0; 4]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn non_finite_forward_is_numeric_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(1e308));
        let y = t.mul(x, x); // overflows to inf
        assert!(matches!(y, Err(Error::Numeric(_))));
    }
}
