//! Immediate-mode computation graph with reverse-mode differentiation.
//!
//! Values are computed eagerly as ops are recorded; `backward` walks the
//! tape in reverse and accumulates gradients, which `flush_grads` hands
//! to the parameter store. Shape violations are programming errors and
//! panic.

use super::params::ParameterStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(String),
    Dense { x: Var, w: Var, b: Var },
    LayerNorm { x: Var, gain: Var, shift: Var, eps: f64 },
    Relu { x: Var },
    Mul { a: Var, b: Var },
    ConcatLast { parts: Vec<Var> },
    Gather { table: Var, indices: Vec<usize> },
    MaskRows { x: Var, mask: Vec<f64> },
    SplitHeads { x: Var, n_heads: usize },
    MergeHeads { x: Var, n_heads: usize },
    AttentionCore { q: Var, k: Var, v: Var, mask: Vec<f64>, scale: f64, probs: Vec<f64> },
    RowDot { a: Var, f: Var },
    Mean { x: Var },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

fn rows_of(shape: &[usize]) -> usize {
    shape[..shape.len() - 1].iter().product()
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node { op, shape, values });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }

    /// Attention probabilities of an `attention_core` node, shaped
    /// (batch, n_queries, n_keys); rows of fully masked queries are all
    /// zero.
    pub fn attention_probs(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].op {
            Op::AttentionCore { probs, .. } => probs,
            _ => panic!("node is not an attention core"),
        }
    }

    pub fn input(&mut self, shape: &[usize], values: Vec<f64>) -> Var {
        self.push(Op::Input, shape.to_vec(), values)
    }

    pub fn scalar_input(&mut self, value: f64) -> Var {
        self.input(&[1], vec![value])
    }

    /// Loads a named parameter as a leaf; its gradient reaches the store
    /// on `flush_grads`.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Var {
        let t: &Tensor = store.get(name);
        self.push(Op::Param(name.to_string()), t.shape().to_vec(), t.values().to_vec())
    }

    /// Affine map over the last axis: x(…, d_in) × w(d_in, d_out) + b.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (d_in, d_out) = {
            let ws = self.shape(w);
            assert_eq!(ws.len(), 2, "dense weight must be rank 2");
            (ws[0], ws[1])
        };
        assert_eq!(self.shape(x).last(), Some(&d_in), "dense input width");
        assert_eq!(self.shape(b), &[d_out], "dense bias width");
        let rows = rows_of(self.shape(x));
        let mut out = vec![0.0; rows * d_out];
        {
            let xs = self.value(x);
            let ws = self.value(w);
            let bs = self.value(b);
            for r in 0..rows {
                let xrow = &xs[r * d_in..(r + 1) * d_in];
                let orow = &mut out[r * d_out..(r + 1) * d_out];
                orow.copy_from_slice(bs);
                for (i, &xv) in xrow.iter().enumerate() {
                    if xv != 0.0 {
                        let wrow = &ws[i * d_out..(i + 1) * d_out];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = d_out;
        self.push(Op::Dense { x, w, b }, shape, out)
    }

    /// Standardizes each last-axis row to zero mean and unit variance,
    /// then applies elementwise gain and shift.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Var {
        let d = *self.shape(x).last().expect("layer_norm input rank");
        assert_eq!(self.shape(gain), &[d]);
        assert_eq!(self.shape(shift), &[d]);
        let rows = rows_of(self.shape(x));
        let mut out = vec![0.0; rows * d];
        {
            let xs = self.value(x);
            let gs = self.value(gain);
            let ss = self.value(shift);
            for r in 0..rows {
                let xrow = &xs[r * d..(r + 1) * d];
                let mean = xrow.iter().sum::<f64>() / d as f64;
                let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for i in 0..d {
                    out[r * d + i] = gs[i] * (xrow[i] - mean) * inv + ss[i];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::LayerNorm { x, gain, shift, eps }, shape, out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let values = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Relu { x }, shape, values)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul operand shapes");
        let values = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Mul { a, b }, shape, values)
    }

    /// Concatenates tensors with identical leading dimensions along the
    /// last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let lead = self.shape(parts[0])[..self.shape(parts[0]).len() - 1].to_vec();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.shape(p);
                assert_eq!(s[..s.len() - 1], lead[..], "concat leading dims");
                *s.last().unwrap()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        for r in 0..rows {
            let mut offset = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&self.value(p)[r * w..(r + 1) * w]);
                offset += w;
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(Op::ConcatLast { parts: parts.to_vec() }, shape, out)
    }

    /// Looks up rows of a (rows, width) table; the output has shape
    /// out_prefix + [width]. Backward scatter-adds into the table.
    pub fn gather(&mut self, table: Var, indices: &[usize], out_prefix: &[usize]) -> Var {
        let ts = self.shape(table);
        assert_eq!(ts.len(), 2, "gather table must be rank 2");
        let (rows, width) = (ts[0], ts[1]);
        assert_eq!(indices.len(), out_prefix.iter().product::<usize>());
        let mut out = vec![0.0; indices.len() * width];
        {
            let tv = self.value(table);
            for (r, &idx) in indices.iter().enumerate() {
                assert!(idx < rows, "gather index {idx} out of {rows}");
                out[r * width..(r + 1) * width].copy_from_slice(&tv[idx * width..(idx + 1) * width]);
            }
        }
        let mut shape = out_prefix.to_vec();
        shape.push(width);
        self.push(Op::Gather { table, indices: indices.to_vec() }, shape, out)
    }

    /// Scales each last-axis row by the matching mask entry (0 or 1);
    /// mask length must equal the number of rows.
    pub fn mask_rows(&mut self, x: Var, mask: &[f64]) -> Var {
        let d = *self.shape(x).last().unwrap();
        let rows = rows_of(self.shape(x));
        assert_eq!(mask.len(), rows, "row mask length");
        let xs = self.value(x);
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            if mask[r] != 0.0 {
                for i in 0..d {
                    out[r * d + i] = xs[r * d + i] * mask[r];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::MaskRows { x, mask: mask.to_vec() }, shape, out)
    }

    /// (b, n, d) -> (b·h, n, d/h), interleaving heads per batch element.
    pub fn split_heads(&mut self, x: Var, n_heads: usize) -> Var {
        let s = self.shape(x);
        assert_eq!(s.len(), 3, "split_heads input rank");
        let (b, n, d) = (s[0], s[1], s[2]);
        assert_eq!(d % n_heads, 0, "model dim {d} not divisible by {n_heads} heads");
        let dh = d / n_heads;
        let xs = self.value(x);
        let mut out = vec![0.0; xs.len()];
        for bi in 0..b {
            for h in 0..n_heads {
                for ni in 0..n {
                    for j in 0..dh {
                        out[(((bi * n_heads + h) * n) + ni) * dh + j] =
                            xs[(bi * n + ni) * d + h * dh + j];
                    }
                }
            }
        }
        self.push(Op::SplitHeads { x, n_heads }, vec![b * n_heads, n, dh], out)
    }

    /// Inverse of `split_heads`: (b·h, n, d/h) -> (b, n, d).
    pub fn merge_heads(&mut self, x: Var, n_heads: usize) -> Var {
        let s = self.shape(x);
        assert_eq!(s.len(), 3, "merge_heads input rank");
        assert_eq!(s[0] % n_heads, 0);
        let (b, n, dh) = (s[0] / n_heads, s[1], s[2]);
        let d = dh * n_heads;
        let xs = self.value(x);
        let mut out = vec![0.0; xs.len()];
        for bi in 0..b {
            for h in 0..n_heads {
                for ni in 0..n {
                    for j in 0..dh {
                        out[(bi * n + ni) * d + h * dh + j] =
                            xs[(((bi * n_heads + h) * n) + ni) * dh + j];
                    }
                }
            }
        }
        self.push(Op::MergeHeads { x, n_heads }, vec![b, n, d], out)
    }

    /// Scaled dot-product attention. q is (b, n_q, d), k and v are
    /// (b, n_kv, d), mask is b·n_kv entries with nonzero marking usable
    /// keys. Softmax runs over usable keys only; a query whose keys are
    /// all masked outputs a zero row.
    pub fn attention_core(&mut self, q: Var, k: Var, v: Var, mask: &[f64], scale: f64) -> Var {
        let (b, n_q, d) = {
            let s = self.shape(q);
            assert_eq!(s.len(), 3, "attention query rank");
            (s[0], s[1], s[2])
        };
        let n_kv = {
            let s = self.shape(k);
            assert_eq!(s, &[b, s[1], d], "attention key shape");
            s[1]
        };
        assert_eq!(self.shape(v), &[b, n_kv, d], "attention value shape");
        assert_eq!(mask.len(), b * n_kv, "attention mask length");
        let mut probs = vec![0.0; b * n_q * n_kv];
        let mut out = vec![0.0; b * n_q * d];
        {
            let qs = self.value(q);
            let ks = self.value(k);
            let vs = self.value(v);
            let mut logits = vec![0.0; n_kv];
            for bi in 0..b {
                let bmask = &mask[bi * n_kv..(bi + 1) * n_kv];
                for qi in 0..n_q {
                    let qrow = &qs[(bi * n_q + qi) * d..(bi * n_q + qi + 1) * d];
                    let mut max_logit = f64::NEG_INFINITY;
                    for j in 0..n_kv {
                        if bmask[j] != 0.0 {
                            let krow = &ks[(bi * n_kv + j) * d..(bi * n_kv + j + 1) * d];
                            let dot: f64 = qrow.iter().zip(krow).map(|(&a, &b)| a * b).sum();
                            logits[j] = dot * scale;
                            max_logit = max_logit.max(logits[j]);
                        }
                    }
                    if max_logit == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut z = 0.0;
                    let prow = &mut probs[(bi * n_q + qi) * n_kv..(bi * n_q + qi + 1) * n_kv];
                    for j in 0..n_kv {
                        if bmask[j] != 0.0 {
                            prow[j] = (logits[j] - max_logit).exp();
                            z += prow[j];
                        }
                    }
                    let orow = &mut out[(bi * n_q + qi) * d..(bi * n_q + qi + 1) * d];
                    for j in 0..n_kv {
                        if prow[j] != 0.0 {
                            prow[j] /= z;
                            let vrow = &vs[(bi * n_kv + j) * d..(bi * n_kv + j + 1) * d];
                            for (o, &vv) in orow.iter_mut().zip(vrow) {
                                *o += prow[j] * vv;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            Op::AttentionCore { q, k, v, mask: mask.to_vec(), scale, probs },
            vec![b, n_q, d],
            out,
        )
    }

    /// Per-row dot product: a(b, n, d) · f(b, d) -> (b, n).
    pub fn row_dot(&mut self, a: Var, f: Var) -> Var {
        let (b, n, d) = {
            let s = self.shape(a);
            assert_eq!(s.len(), 3, "row_dot left rank");
            (s[0], s[1], s[2])
        };
        assert_eq!(self.shape(f), &[b, d], "row_dot right shape");
        let mut out = vec![0.0; b * n];
        {
            let avs = self.value(a);
            let fvs = self.value(f);
            for bi in 0..b {
                let frow = &fvs[bi * d..(bi + 1) * d];
                for ni in 0..n {
                    let arow = &avs[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                    out[bi * n + ni] = arow.iter().zip(frow).map(|(&x, &y)| x * y).sum();
                }
            }
        }
        self.push(Op::RowDot { a, f }, vec![b, n], out)
    }

    /// Mean over all entries, as a single-value tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let m = self.value(x).iter().sum::<f64>() / n as f64;
        self.push(Op::Mean { x }, vec![1], vec![m])
    }

    /// Backpropagates from `out`, seeding its gradient with `seed`.
    /// Gradients of every node are (re)computed; parameter gradients
    /// reach the store via `flush_grads`.
    pub fn backward(&mut self, out: Var, seed: &[f64]) {
        assert_eq!(seed.len(), self.nodes[out.0].values.len(), "seed length");
        self.grads = self.nodes.iter().map(|n| vec![0.0; n.values.len()]).collect();
        self.grads[out.0].copy_from_slice(seed);
        for idx in (0..=out.0).rev() {
            let g = std::mem::take(&mut self.grads[idx]);
            self.propagate(idx, &g);
            self.grads[idx] = g;
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::Dense { x, w, b } => {
                let d_in = nodes[w.0].shape[0];
                let d_out = nodes[w.0].shape[1];
                let rows = g.len() / d_out;
                let xs = &nodes[x.0].values;
                let ws = &nodes[w.0].values;
                for r in 0..rows {
                    let grow = &g[r * d_out..(r + 1) * d_out];
                    let xrow = &xs[r * d_in..(r + 1) * d_in];
                    let gx = &mut grads[x.0][r * d_in..(r + 1) * d_in];
                    for i in 0..d_in {
                        let wrow = &ws[i * d_out..(i + 1) * d_out];
                        gx[i] += grow.iter().zip(wrow).map(|(&a, &b)| a * b).sum::<f64>();
                    }
                    let gw = &mut grads[w.0];
                    for (i, &xv) in xrow.iter().enumerate() {
                        if xv != 0.0 {
                            for (o, &gv) in grow.iter().enumerate() {
                                gw[i * d_out + o] += xv * gv;
                            }
                        }
                    }
                    let gb = &mut grads[b.0];
                    for (o, &gv) in grow.iter().enumerate() {
                        gb[o] += gv;
                    }
                }
            }
            Op::LayerNorm { x, gain, shift, eps } => {
                let d = *nodes[x.0].shape.last().unwrap();
                let rows = g.len() / d;
                let xs = &nodes[x.0].values;
                let gains = &nodes[gain.0].values;
                for r in 0..rows {
                    let xrow = &xs[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let mean = xrow.iter().sum::<f64>() / d as f64;
                    let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mut sum1 = 0.0;
                    let mut sum2 = 0.0;
                    for i in 0..d {
                        let xhat = (xrow[i] - mean) * inv;
                        let dxhat = grow[i] * gains[i];
                        sum1 += dxhat;
                        sum2 += dxhat * xhat;
                        grads[gain.0][i] += grow[i] * xhat;
                        grads[shift.0][i] += grow[i];
                    }
                    let gx = &mut grads[x.0][r * d..(r + 1) * d];
                    for i in 0..d {
                        let xhat = (xrow[i] - mean) * inv;
                        let dxhat = grow[i] * gains[i];
                        gx[i] += inv * (dxhat - sum1 / d as f64 - xhat * sum2 / d as f64);
                    }
                }
            }
            Op::Relu { x } => {
                let xs = &nodes[x.0].values;
                let gx = &mut grads[x.0];
                for (i, &gv) in g.iter().enumerate() {
                    if xs[i] > 0.0 {
                        gx[i] += gv;
                    }
                }
            }
            Op::Mul { a, b } => {
                let avs = &nodes[a.0].values;
                let bvs = &nodes[b.0].values;
                for (i, &gv) in g.iter().enumerate() {
                    grads[a.0][i] += gv * bvs[i];
                }
                for (i, &gv) in g.iter().enumerate() {
                    grads[b.0][i] += gv * avs[i];
                }
            }
            Op::ConcatLast { parts } => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|&p| *nodes[p.0].shape.last().unwrap())
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let gp = &mut grads[p.0];
                    for r in 0..rows {
                        for i in 0..w {
                            gp[r * w + i] += g[r * total + offset + i];
                        }
                    }
                    offset += w;
                }
            }
            Op::Gather { table, indices } => {
                let width = nodes[table.0].shape[1];
                let gt = &mut grads[table.0];
                for (r, &idx) in indices.iter().enumerate() {
                    for i in 0..width {
                        gt[idx * width + i] += g[r * width + i];
                    }
                }
            }
            Op::MaskRows { x, mask } => {
                let d = *nodes[x.0].shape.last().unwrap();
                let gx = &mut grads[x.0];
                for (r, &m) in mask.iter().enumerate() {
                    if m != 0.0 {
                        for i in 0..d {
                            gx[r * d + i] += g[r * d + i] * m;
                        }
                    }
                }
            }
            Op::SplitHeads { x, n_heads } => {
                let s = &nodes[x.0].shape;
                let (b, n, d) = (s[0], s[1], s[2]);
                let dh = d / n_heads;
                let gx = &mut grads[x.0];
                for bi in 0..b {
                    for h in 0..*n_heads {
                        for ni in 0..n {
                            for j in 0..dh {
                                gx[(bi * n + ni) * d + h * dh + j] +=
                                    g[(((bi * n_heads + h) * n) + ni) * dh + j];
                            }
                        }
                    }
                }
            }
            Op::MergeHeads { x, n_heads } => {
                let s = &nodes[x.0].shape;
                let (bh, n, dh) = (s[0], s[1], s[2]);
                let b = bh / n_heads;
                let d = dh * n_heads;
                let gx = &mut grads[x.0];
                for bi in 0..b {
                    for h in 0..*n_heads {
                        for ni in 0..n {
                            for j in 0..dh {
                                gx[(((bi * n_heads + h) * n) + ni) * dh + j] +=
                                    g[(bi * n + ni) * d + h * dh + j];
                            }
                        }
                    }
                }
            }
            Op::AttentionCore { q, k, v, mask, scale, probs } => {
                let s = &nodes[idx].shape;
                let (b, n_q, d) = (s[0], s[1], s[2]);
                let n_kv = nodes[k.0].shape[1];
                let qs = &nodes[q.0].values;
                let ks = &nodes[k.0].values;
                let vs = &nodes[v.0].values;
                let mut dlogits = vec![0.0; n_kv];
                for bi in 0..b {
                    let bmask = &mask[bi * n_kv..(bi + 1) * n_kv];
                    for qi in 0..n_q {
                        let prow = &probs[(bi * n_q + qi) * n_kv..(bi * n_q + qi + 1) * n_kv];
                        let grow = &g[(bi * n_q + qi) * d..(bi * n_q + qi + 1) * d];
                        let mut dp_dot = 0.0;
                        for j in 0..n_kv {
                            if bmask[j] == 0.0 {
                                dlogits[j] = 0.0;
                                continue;
                            }
                            let vrow = &vs[(bi * n_kv + j) * d..(bi * n_kv + j + 1) * d];
                            let dp: f64 = grow.iter().zip(vrow).map(|(&a, &b)| a * b).sum();
                            dlogits[j] = dp;
                            dp_dot += prow[j] * dp;
                            let gv = &mut grads[v.0][(bi * n_kv + j) * d..(bi * n_kv + j + 1) * d];
                            for (o, &gg) in gv.iter_mut().zip(grow) {
                                *o += prow[j] * gg;
                            }
                        }
                        let qrow = &qs[(bi * n_q + qi) * d..(bi * n_q + qi + 1) * d];
                        for j in 0..n_kv {
                            if bmask[j] == 0.0 {
                                continue;
                            }
                            let dl = prow[j] * (dlogits[j] - dp_dot) * scale;
                            if dl == 0.0 {
                                continue;
                            }
                            let krow = &ks[(bi * n_kv + j) * d..(bi * n_kv + j + 1) * d];
                            let gq = &mut grads[q.0][(bi * n_q + qi) * d..(bi * n_q + qi + 1) * d];
                            for (o, &kv) in gq.iter_mut().zip(krow) {
                                *o += dl * kv;
                            }
                            let gk = &mut grads[k.0][(bi * n_kv + j) * d..(bi * n_kv + j + 1) * d];
                            for (o, &qv) in gk.iter_mut().zip(qrow) {
                                *o += dl * qv;
                            }
                        }
                    }
                }
            }
            Op::RowDot { a, f } => {
                let s = &nodes[a.0].shape;
                let (b, n, d) = (s[0], s[1], s[2]);
                let avs = &nodes[a.0].values;
                let fvs = &nodes[f.0].values;
                for bi in 0..b {
                    for ni in 0..n {
                        let gv = g[bi * n + ni];
                        if gv == 0.0 {
                            continue;
                        }
                        let ga = &mut grads[a.0][(bi * n + ni) * d..(bi * n + ni + 1) * d];
                        let frow = &fvs[bi * d..(bi + 1) * d];
                        for (o, &fv) in ga.iter_mut().zip(frow) {
                            *o += gv * fv;
                        }
                        let gf = &mut grads[f.0][bi * d..(bi + 1) * d];
                        let arow = &avs[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                        for (o, &av) in gf.iter_mut().zip(arow) {
                            *o += gv * av;
                        }
                    }
                }
            }
            Op::Mean { x } => {
                let n = nodes[x.0].values.len();
                let gx = &mut grads[x.0];
                for o in gx.iter_mut() {
                    *o += g[0] / n as f64;
                }
            }
        }
    }

    /// Adds every parameter leaf's gradient into the store.
    pub fn flush_grads(&self, store: &mut ParameterStore) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                store.add_grad(name, &self.grads[idx]);
            }
        }
    }
}
