//! Reverse-mode differentiation over the fixed operator set used by the
//! transformer blocks, pooling and normalization.
//!
//! A [`Tape`] records every operation of one forward pass together with the
//! intermediates the backward pass needs. Parameters are referenced, not
//! copied; their gradients are returned separately from node gradients.

/// Dense row-major f64 matrix used for all trainable math.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Self { rows: 1, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a · b`, or with either operand transposed.
pub fn gemm(a: &Mat, trans_a: bool, b: &Mat, trans_b: bool) -> Mat {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "gemm inner dimension mismatch");
    let mut c = Mat::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and extents describe the owned buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBT(Var, Var),
    Add(Var, Var),
    /// adds a 1×n row to every row
    AddRow(Var, Var),
    Scale(Var, f64),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Softmax(Var),
    GatherRows { table: Var, idx: Vec<usize> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    MaxRows { x: Var, argmax: Vec<usize> },
    L2NormRows { x: Var, norms: Vec<f64> },
}

struct Node {
    op: Op,
    value: Option<Mat>,
}

/// Gradients from one backward pass.
pub struct Grads {
    nodes: Vec<Option<Mat>>,
    /// One entry per parameter; `None` when the parameter was not reached.
    pub params: Vec<Option<Mat>>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].as_ref()
    }
}

pub struct Tape<'p> {
    params: &'p [Mat],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Mat]) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(i), _) => &self.params[*i],
            (_, Some(m)) => m,
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Option<Mat>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(Op::Leaf, Some(m))
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.push(Op::Param(index), None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = gemm(self.value(a), false, self.value(b), false);
        self.push(Op::MatMul(a, b), Some(v))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = gemm(self.value(a), false, self.value(b), true);
        self.push(Op::MatMulBT(a, b), Some(v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(Op::Add(a, b), Some(v))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut v = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, v.cols), "add_row shape");
        for i in 0..v.rows {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(Op::AddRow(a, row), Some(v))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= s);
        self.push(Op::Scale(a, s), Some(v))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xm = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = xm.cols as f64;
        let mut xhat = vec![0.0; xm.len()];
        let mut inv_std = vec![0.0; xm.rows];
        let mut out = Mat::zeros(xm.rows, xm.cols);
        for i in 0..xm.rows {
            let row = xm.row(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            let xh = &mut xhat[i * xm.cols..(i + 1) * xm.cols];
            for (j, v) in row.iter().enumerate() {
                xh[j] = (v - mean) * is;
            }
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = xh[j] * g.data[j] + b.data[j];
            }
        }
        self.push(Op::LayerNorm { x, gamma, beta, xhat, inv_std }, Some(out))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for a in v.data.iter_mut() {
            let u = GELU_C * (*a + 0.044715 * *a * *a * *a);
            *a = 0.5 * *a * (1.0 + u.tanh());
        }
        self.push(Op::Gelu(x), Some(v))
    }

    /// Row-wise softmax; columns with `key_mask[j] == false` get exactly zero
    /// probability.
    pub fn softmax(&mut self, x: Var, key_mask: Option<&[bool]>) -> Var {
        let mut v = self.value(x).clone();
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let keep = |j: usize| key_mask.is_none_or(|m| m[j]);
            let max = row.iter().enumerate().filter(|(j, _)| keep(*j)).map(|(_, &a)| a).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, a) in row.iter_mut().enumerate() {
                if keep(j) {
                    *a = (*a - max).exp();
                    sum += *a;
                } else {
                    *a = 0.0;
                }
            }
            if sum > 0.0 {
                row.iter_mut().for_each(|a| *a /= sum);
            }
        }
        self.push(Op::Softmax(x), Some(v))
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros(idx.len(), t.cols);
        for (i, &r) in idx.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(r));
        }
        self.push(Op::GatherRows { table, idx: idx.to_vec() }, Some(v))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let m = self.value(x);
        let v = Mat::from_vec(len, m.cols, m.data[start * m.cols..(start + len) * m.cols].to_vec());
        self.push(Op::SliceRows { x, start }, Some(v))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let m = self.value(x);
        let mut v = Mat::zeros(m.rows, len);
        for i in 0..m.rows {
            v.row_mut(i).copy_from_slice(&m.row(i)[start..start + len]);
        }
        self.push(Op::SliceCols { x, start }, Some(v))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                v.row_mut(i)[off..off + m.cols].copy_from_slice(m.row(i));
            }
            off += m.cols;
        }
        self.push(Op::ConcatCols(parts.to_vec()), Some(v))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Op::ConcatRows(parts.to_vec()), Some(Mat::from_vec(rows, cols, data)))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let mut v = vec![0.0; m.cols];
        for i in 0..m.rows {
            for (a, b) in v.iter_mut().zip(m.row(i)) {
                *a += b;
            }
        }
        let n = m.rows as f64;
        v.iter_mut().for_each(|a| *a /= n);
        self.push(Op::MeanRows(x), Some(Mat::row_vector(v)))
    }

    /// Column-wise maximum over rows; ties resolve to the lowest row.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let mut argmax = vec![0usize; m.cols];
        let mut v = m.row(0).to_vec();
        for i in 1..m.rows {
            for (j, &a) in m.row(i).iter().enumerate() {
                if a > v[j] {
                    v[j] = a;
                    argmax[j] = i;
                }
            }
        }
        self.push(Op::MaxRows { x, argmax }, Some(Mat::row_vector(v)))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let mut norms = Vec::with_capacity(v.rows);
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|a| *a /= n);
            norms.push(n);
        }
        self.push(Op::L2NormRows { x, norms }, Some(v))
    }

    /// Propagates the seed gradients back through every recorded operation.
    pub fn backward(&self, seeds: &[(Var, Mat)]) -> Grads {
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pg: Vec<Option<Mat>> = (0..self.params.len()).map(|_| None).collect();
        for (v, m) in seeds {
            accumulate(&mut g[v.0], m.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => accumulate(&mut pg[*p], dy.clone()),
                Op::MatMul(a, b) => {
                    let da = gemm(&dy, false, self.value(*b), true);
                    let db = gemm(self.value(*a), true, &dy, false);
                    accumulate(&mut g[a.0], da);
                    accumulate(&mut g[b.0], db);
                }
                Op::MatMulBT(a, b) => {
                    let da = gemm(&dy, false, self.value(*b), false);
                    let db = gemm(&dy, true, self.value(*a), false);
                    accumulate(&mut g[a.0], da);
                    accumulate(&mut g[b.0], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g[a.0], dy.clone());
                    accumulate(&mut g[b.0], dy.clone());
                }
                Op::AddRow(a, r) => {
                    let mut dr = Mat::zeros(1, dy.cols);
                    for i in 0..dy.rows {
                        for (x, y) in dr.data.iter_mut().zip(dy.row(i)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut g[a.0], dy.clone());
                    accumulate(&mut g[r.0], dr);
                }
                Op::Scale(a, s) => {
                    let mut d = dy.clone();
                    d.data.iter_mut().for_each(|x| *x *= s);
                    accumulate(&mut g[a.0], d);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gm = self.value(*gamma);
                    let (rows, cols) = (dy.rows, dy.cols);
                    let n = cols as f64;
                    let mut dx = Mat::zeros(rows, cols);
                    let mut dg = Mat::zeros(1, cols);
                    let mut db = Mat::zeros(1, cols);
                    let mut dxh = vec![0.0; cols];
                    for i in 0..rows {
                        let xh = &xhat[i * cols..(i + 1) * cols];
                        let dyr = dy.row(i);
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..cols {
                            dg.data[j] += dyr[j] * xh[j];
                            db.data[j] += dyr[j];
                            dxh[j] = dyr[j] * gm.data[j];
                            s1 += dxh[j];
                            s2 += dxh[j] * xh[j];
                        }
                        let is = inv_std[i];
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = is / n * (n * dxh[j] - s1 - xh[j] * s2);
                        }
                    }
                    accumulate(&mut g[x.0], dx);
                    accumulate(&mut g[gamma.0], dg);
                    accumulate(&mut g[beta.0], db);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut d = dy.clone();
                    for (o, &a) in d.data.iter_mut().zip(&xv.data) {
                        let u = GELU_C * (a + 0.044715 * a * a * a);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * a * a);
                        *o *= 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * du;
                    }
                    accumulate(&mut g[x.0], d);
                }
                Op::Softmax(x) => {
                    let p = node.value.as_ref().unwrap();
                    let mut d = Mat::zeros(p.rows, p.cols);
                    for i in 0..p.rows {
                        let (pr, dr) = (p.row(i), dy.row(i));
                        let s: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                            *o = pr[j] * (dr[j] - s);
                        }
                    }
                    accumulate(&mut g[x.0], d);
                }
                Op::GatherRows { table, idx } => {
                    let t = self.value(*table);
                    let mut d = Mat::zeros(t.rows, t.cols);
                    for (i, &r) in idx.iter().enumerate() {
                        for (a, b) in d.row_mut(r).iter_mut().zip(dy.row(i)) {
                            *a += b;
                        }
                    }
                    accumulate(&mut g[table.0], d);
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let mut d = Mat::zeros(xv.rows, xv.cols);
                    d.data[start * xv.cols..start * xv.cols + dy.len()].copy_from_slice(&dy.data);
                    accumulate(&mut g[x.0], d);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut d = Mat::zeros(xv.rows, xv.cols);
                    for i in 0..dy.rows {
                        d.row_mut(i)[*start..start + dy.cols].copy_from_slice(dy.row(i));
                    }
                    accumulate(&mut g[x.0], d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = self.value(*p).cols;
                        let mut d = Mat::zeros(dy.rows, c);
                        for i in 0..dy.rows {
                            d.row_mut(i).copy_from_slice(&dy.row(i)[off..off + c]);
                        }
                        off += c;
                        accumulate(&mut g[p.0], d);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        let r = self.value(*p).rows;
                        accumulate(&mut g[p.0], Mat::from_vec(r, dy.cols, dy.data[off..off + n].to_vec()));
                        off += n;
                    }
                }
                Op::MeanRows(x) => {
                    let xv = self.value(*x);
                    let n = xv.rows as f64;
                    let mut d = Mat::zeros(xv.rows, xv.cols);
                    for i in 0..xv.rows {
                        for (a, b) in d.row_mut(i).iter_mut().zip(&dy.data) {
                            *a = b / n;
                        }
                    }
                    accumulate(&mut g[x.0], d);
                }
                Op::MaxRows { x, argmax } => {
                    let xv = self.value(*x);
                    let mut d = Mat::zeros(xv.rows, xv.cols);
                    for (j, &i) in argmax.iter().enumerate() {
                        d.data[i * xv.cols + j] = dy.data[j];
                    }
                    accumulate(&mut g[x.0], d);
                }
                Op::L2NormRows { x, norms } => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = Mat::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let (yr, dr) = (y.row(i), dy.row(i));
                        let s: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                            *o = (dr[j] - yr[j] * s) / norms[i];
                        }
                    }
                    accumulate(&mut g[x.0], d);
                }
            }
            g[idx] = Some(dy);
        }
        Grads { nodes: g, params: pg }
    }
}

fn accumulate(slot: &mut Option<Mat>, m: Mat) {
    match slot {
        Some(acc) => acc.add_assign(&m),
        None => *slot = Some(m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(rows: usize, cols: usize, salt: f64) -> Mat {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|i| ((i as f64 + salt) * 1.7).sin()).collect())
    }

    /// Central-difference check of d(sum(w ⊙ f(x)))/dx for a tape builder.
    fn check(build: impl Fn(&mut Tape, Var) -> Var, x: Mat) {
        let params: Vec<Mat> = vec![];
        let mut tape = Tape::new(&params);
        let xv = tape.leaf(x.clone());
        let y = build(&mut tape, xv);
        let out = tape.value(y).clone();
        let w = pseudo(out.rows, out.cols, 0.3);
        let grads = tape.backward(&[(y, w.clone())]);
        let gx = grads.of(xv).cloned().unwrap_or_else(|| Mat::zeros(x.rows, x.cols));
        let f = |xm: Mat| {
            let mut t = Tape::new(&params);
            let v = t.leaf(xm);
            let y = build(&mut t, v);
            t.value(y).data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in 0..x.len() {
            let eps = 1e-6;
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data[i] += eps;
            m.data[i] -= eps;
            let fd = (f(p) - f(m)) / (2.0 * eps);
            assert!((fd - gx.data[i]).abs() < 1e-6 * (1.0 + fd.abs()), "entry {i}: fd {fd} vs {}", gx.data[i]);
        }
    }

    #[test]
    fn gemm_transposes() {
        let a = pseudo(3, 4, 0.0);
        let b = pseudo(4, 2, 1.0);
        let c = gemm(&a, false, &b, false);
        let mut naive = Mat::zeros(3, 2);
        for i in 0..3 {
            for j in 0..2 {
                naive.data[i * 2 + j] = (0..4).map(|k| a.data[i * 4 + k] * b.data[k * 2 + j]).sum();
            }
        }
        for (x, y) in c.data.iter().zip(&naive.data) {
            assert!((x - y).abs() < 1e-12);
        }
        let bt = Mat::from_vec(2, 4, (0..8).map(|i| b.data[(i % 4) * 2 + i / 4]).collect());
        assert_eq!(gemm(&a, false, &bt, true).data.len(), 6);
    }

    #[test]
    fn op_gradients() {
        check(|t, x| t.gelu(x), pseudo(3, 5, 0.1));
        check(|t, x| t.softmax(x, None), pseudo(3, 4, 0.2));
        check(|t, x| t.softmax(x, Some(&[true, false, true, true])), pseudo(2, 4, 0.2));
        check(|t, x| t.l2_normalize_rows(x), pseudo(3, 4, 0.5));
        check(|t, x| t.mean_rows(x), pseudo(4, 3, 0.5));
        check(|t, x| t.max_rows(x), pseudo(4, 3, 0.9));
        check(
            |t, x| {
                let g = t.leaf(pseudo(1, 5, 2.0));
                let b = t.leaf(pseudo(1, 5, 3.0));
                t.layer_norm(x, g, b)
            },
            pseudo(3, 5, 0.7),
        );
        check(
            |t, x| {
                let a = t.slice_cols(x, 1, 2);
                let b = t.slice_rows(x, 0, 2);
                let c = t.matmul_bt(b, b);
                let d = t.matmul(c, a);
                let e = t.concat_cols(&[d, a]);
                t.scale(e, 0.5)
            },
            pseudo(2, 3, 1.1),
        );
        check(
            |t, x| {
                let r = t.slice_rows(x, 0, 1);
                let y = t.add_row(x, r);
                let z = t.concat_rows(&[y, r]);
                t.add(z, z)
            },
            pseudo(3, 2, 0.4),
        );
    }

    #[test]
    fn masked_softmax_zeroes_columns() {
        let params: Vec<Mat> = vec![];
        let mut t = Tape::new(&params);
        let x = t.leaf(pseudo(2, 3, 0.0));
        let p = t.softmax(x, Some(&[true, false, true]));
        let v = t.value(p);
        assert_eq!(v.data[1], 0.0);
        assert!((v.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gather_accumulates_into_table() {
        let params = vec![pseudo(4, 2, 0.0)];
        let mut t = Tape::new(&params);
        let table = t.param(0);
        let rows = t.gather_rows(table, &[1, 1, 3]);
        let g = t.backward(&[(rows, Mat::from_vec(3, 2, vec![1.0; 6]))]);
        let gt = g.params[0].as_ref().unwrap();
        assert_eq!(gt.data, vec![0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
    }
}
