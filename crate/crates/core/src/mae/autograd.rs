//! Minimal reverse-mode automatic differentiation over row-major matrices.
//! Each forward pass records nodes on a [`Tape`]; [`Tape::backward`] walks the
//! tape in reverse and accumulates adjoints.

pub type Var = usize;

const LN_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// `a b^T`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a + 1 b` with `b` a single row.
    AddRow(Var, Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    SoftmaxRows(Var),
    Scale(Var, f64),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Vec<(Var, usize)>),
    MeanSq(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::SoftmaxRows(_) => "softmax",
            Op::Scale(..) => "scale",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::GatherRows(_) => "gather_rows",
            Op::MeanSq(_) => "mean_sq",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `c += a b` for row-major `a [m,k]`, `b [k,n]`.
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c += a b^T` for `a [m,k]`, `b [n,k]`.
fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c += a^T b` for `a [m,k]`, `b [m,n]` giving `[k,n]`.
fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (cv, &bv) in c[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v].rows, self.nodes[v].cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v].value
    }

    /// Constant input (no gradient is reported for it).
    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        self.push(rows, cols, value, Op::Leaf)
    }

    /// Trainable input identified by `index` in [`Tape::param_grads`].
    pub fn param(&mut self, index: usize, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        self.push(rows, cols, value, Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul inner dims");
        let mut c = vec![0.0; m * n];
        gemm_acc(&self.nodes[a].value, &self.nodes[b].value, &mut c, m, k, n);
        self.push(m, n, c, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let ((m, k), (n, k2)) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul_nt inner dims");
        let mut c = vec![0.0; m * n];
        gemm_nt_acc(&self.nodes[a].value, &self.nodes[b].value, &mut c, m, k, n);
        self.push(m, n, c, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let v = self.nodes[a].value.iter().zip(&self.nodes[b].value).map(|(x, y)| x + y).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let v = self.nodes[a].value.iter().zip(&self.nodes[b].value).map(|(x, y)| x - y).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let ((r, c), (br, bc)) = (self.shape(a), self.shape(b));
        assert!(br == 1 && bc == c, "add_row shapes");
        let bias = &self.nodes[b].value;
        let v = self.nodes[a].value.iter().enumerate().map(|(i, x)| x + bias[i % c]).collect();
        self.push(r, c, v, Op::AddRow(a, b))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.shape(x);
        assert!(self.shape(gamma) == (1, c) && self.shape(beta) == (1, c), "layer_norm shapes");
        let (xv, g, b) = (&self.nodes[x].value, &self.nodes[gamma].value, &self.nodes[beta].value);
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        self.push(r, c, out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v =
            self.nodes[a].value.iter().map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut v = self.nodes[a].value.clone();
        for row in v.chunks_mut(c) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        self.push(r, c, v, Op::SoftmaxRows(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.nodes[a].value.iter().map(|x| x * s).collect();
        let (r, c) = self.shape(a);
        self.push(r, c, v, Op::Scale(a, s))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "slice_cols range");
        let v = (0..r).flat_map(|i| self.nodes[a].value[i * c + start..i * c + start + len].iter().copied()).collect();
        self.push(r, len, v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        assert!(parts.iter().all(|&p| self.shape(p).0 == r), "concat_cols rows");
        let total: usize = widths.iter().sum();
        let mut v = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                v.extend_from_slice(&self.nodes[p].value[i * w..(i + 1) * w]);
            }
        }
        self.push(r, total, v, Op::ConcatCols(parts.to_vec()))
    }

    /// Builds a matrix whose row `i` is row `rows[i].1` of node `rows[i].0`.
    pub fn gather_rows(&mut self, rows: &[(Var, usize)]) -> Var {
        let c = self.shape(rows[0].0).1;
        let mut v = Vec::with_capacity(rows.len() * c);
        for &(n, i) in rows {
            assert_eq!(self.shape(n).1, c, "gather_rows width");
            v.extend_from_slice(&self.nodes[n].value[i * c..(i + 1) * c]);
        }
        self.push(rows.len(), c, v, Op::GatherRows(rows.to_vec()))
    }

    /// Mean of squared entries, as a `1 x 1` node.
    pub fn mean_sq(&mut self, a: Var) -> Var {
        let x = &self.nodes[a].value;
        let v = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        self.push(1, 1, vec![v], Op::MeanSq(a))
    }

    /// First node with a non-finite value, with its operation name.
    pub fn first_non_finite(&self) -> Option<(Var, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.iter().any(|v| !v.is_finite()))
            .map(|(i, n)| (i, n.op.name()))
    }

    /// Adjoints of every node given `d output / d seed_node = weight` seeds.
    /// Nodes without a path to a seed get an empty vector.
    pub fn backward(&self, seeds: &[(Var, f64)]) -> Vec<Vec<f64>> {
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        for &(v, w) in seeds {
            let n = &self.nodes[v];
            if g[v].is_empty() {
                g[v] = vec![0.0; n.value.len()];
            }
            g[v].iter_mut().for_each(|x| *x += w);
        }
        fn acc<'g>(g: &'g mut [Vec<f64>], nodes: &[Node], v: Var) -> &'g mut Vec<f64> {
            if g[v].is_empty() {
                g[v] = vec![0.0; nodes[v].value.len()];
            }
            &mut g[v]
        }
        for id in (0..self.nodes.len()).rev() {
            if g[id].is_empty() {
                continue;
            }
            let dy = std::mem::take(&mut g[id]);
            let node = &self.nodes[id];
            let (r, c) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ((m, k), (_, n)) = (self.shape(*a), self.shape(*b));
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    // dA += dC B^T ; dB += A^T dC
                    gemm_nt_acc(&dy, bv, acc(&mut g, &self.nodes, *a), m, n, k);
                    gemm_tn_acc(av, &dy, acc(&mut g, &self.nodes, *b), m, k, n);
                }
                Op::MatMulNt(a, b) => {
                    let ((m, k), (n, _)) = (self.shape(*a), self.shape(*b));
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    // C = A B^T: dA += dC B ; dB += dC^T A
                    gemm_acc(&dy, bv, acc(&mut g, &self.nodes, *a), m, n, k);
                    gemm_tn_acc(&dy, av, acc(&mut g, &self.nodes, *b), m, n, k);
                }
                Op::Add(a, b) => {
                    for (x, d) in acc(&mut g, &self.nodes, *a).iter_mut().zip(&dy) {
                        *x += d;
                    }
                    for (x, d) in acc(&mut g, &self.nodes, *b).iter_mut().zip(&dy) {
                        *x += d;
                    }
                }
                Op::Sub(a, b) => {
                    for (x, d) in acc(&mut g, &self.nodes, *a).iter_mut().zip(&dy) {
                        *x += d;
                    }
                    for (x, d) in acc(&mut g, &self.nodes, *b).iter_mut().zip(&dy) {
                        *x -= d;
                    }
                }
                Op::AddRow(a, b) => {
                    for (x, d) in acc(&mut g, &self.nodes, *a).iter_mut().zip(&dy) {
                        *x += d;
                    }
                    let gb = acc(&mut g, &self.nodes, *b);
                    for (i, d) in dy.iter().enumerate() {
                        gb[i % c] += d;
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let gv = &self.nodes[*gamma].value;
                    {
                        let gg = acc(&mut g, &self.nodes, *gamma);
                        for i in 0..r {
                            for j in 0..c {
                                gg[j] += dy[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    {
                        let gbeta = acc(&mut g, &self.nodes, *beta);
                        for i in 0..r {
                            for j in 0..c {
                                gbeta[j] += dy[i * c + j];
                            }
                        }
                    }
                    let gx = acc(&mut g, &self.nodes, *x);
                    for i in 0..r {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let dh = dy[i * c + j] * gv[j];
                            m1 += dh;
                            m2 += dh * xhat[i * c + j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            let dh = dy[i * c + j] * gv[j];
                            gx[i * c + j] += rstd[i] * (dh - m1 - xhat[i * c + j] * m2);
                        }
                    }
                }
                Op::Gelu(a) => {
                    let xv = &self.nodes[*a].value;
                    let ga = acc(&mut g, &self.nodes, *a);
                    for ((gx, &x), d) in ga.iter_mut().zip(xv).zip(&dy) {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *gx += d * deriv;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let ga = acc(&mut g, &self.nodes, *a);
                    for i in 0..r {
                        let s: f64 = (0..c).map(|j| dy[i * c + j] * y[i * c + j]).sum();
                        for j in 0..c {
                            ga[i * c + j] += y[i * c + j] * (dy[i * c + j] - s);
                        }
                    }
                }
                Op::Scale(a, s) => {
                    for (x, d) in acc(&mut g, &self.nodes, *a).iter_mut().zip(&dy) {
                        *x += s * d;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ac = self.shape(*a).1;
                    let ga = acc(&mut g, &self.nodes, *a);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * ac + start + j] += dy[i * c + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        let gp = acc(&mut g, &self.nodes, p);
                        for i in 0..r {
                            for j in 0..w {
                                gp[i * w + j] += dy[i * c + off + j];
                            }
                        }
                        off += w;
                    }
                }
                Op::GatherRows(rows) => {
                    for (dst, &(src, i)) in rows.iter().enumerate() {
                        let gs = acc(&mut g, &self.nodes, src);
                        for j in 0..c {
                            gs[i * c + j] += dy[dst * c + j];
                        }
                    }
                }
                Op::MeanSq(a) => {
                    let xv = &self.nodes[*a].value;
                    let k = 2.0 * dy[0] / xv.len() as f64;
                    for (gx, &x) in acc(&mut g, &self.nodes, *a).iter_mut().zip(xv) {
                        *gx += k * x;
                    }
                }
            }
            g[id] = dy;
        }
        g
    }

    /// `(param index, gradient)` for every parameter node reached by `grads`.
    pub fn param_grads<'a>(&'a self, grads: &'a [Vec<f64>]) -> impl Iterator<Item = (usize, &'a [f64])> + 'a {
        self.nodes.iter().zip(grads).filter_map(|(n, g)| match n.op {
            Op::Param(i) if !g.is_empty() => Some((i, g.as_slice())),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Checks d(sum w * f(x)) / dx against central differences for a graph
    /// built by `f` from one input matrix.
    fn check(rows: usize, cols: usize, f: impl Fn(&mut Tape, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eval = |x: &[f64]| {
            let mut t = Tape::new();
            let v = t.param(0, rows, cols, x.to_vec());
            let out = f(&mut t, v);
            let sq = t.mean_sq(out);
            (t, v, sq)
        };
        let (t, v, sq) = eval(&x0);
        let g = t.backward(&[(sq, 1.0)]);
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp[i] += h;
            let mut xm = x0.clone();
            xm[i] -= h;
            let fp = eval(&xp).0.value(eval(&xp).2)[0];
            let fm = eval(&xm).0.value(eval(&xm).2)[0];
            let fd = (fp - fm) / (2.0 * h);
            let an = g[v][i];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "entry {i}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn op_gradients() {
        check(3, 4, |t, x| {
            let w = t.leaf(4, 2, vec![0.3, -0.2, 0.5, 0.1, -0.7, 0.4, 0.2, 0.9]);
            t.matmul(x, w)
        });
        check(3, 4, |t, x| t.matmul_nt(x, x));
        check(3, 4, |t, x| {
            let g = t.leaf(1, 4, vec![1.0, 0.5, -0.3, 2.0]);
            let b = t.leaf(1, 4, vec![0.1, 0.2, 0.3, 0.4]);
            t.layer_norm(x, g, b)
        });
        check(3, 4, |t, x| t.gelu(x));
        check(3, 4, |t, x| {
            let y = t.scale(x, 3.0);
            t.softmax_rows(y)
        });
        check(3, 4, |t, x| {
            let a = t.slice_cols(x, 1, 2);
            let b = t.slice_cols(x, 0, 1);
            t.concat_cols(&[a, b, a])
        });
        check(3, 4, |t, x| t.gather_rows(&[(x, 2), (x, 0), (x, 2)]));
        check(3, 4, |t, x| {
            let b = t.slice_cols(x, 0, 4);
            let r = t.gather_rows(&[(x, 1)]);
            let y = t.add_row(b, r);
            let z = t.sub(y, x);
            t.add(z, x)
        });
    }

    #[test]
    fn layer_norm_gamma_beta_grads() {
        for which in 0..2 {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eval = |p: &[f64]| {
                let mut t = Tape::new();
                let xv = t.leaf(3, 4, x.clone());
                let g = t.param(0, 1, 4, if which == 0 { p.to_vec() } else { vec![1.0, 0.5, -0.3, 2.0] });
                let b = t.param(1, 1, 4, if which == 1 { p.to_vec() } else { vec![0.1; 4] });
                let y = t.layer_norm(xv, g, b);
                let s = t.mean_sq(y);
                (t, if which == 0 { g } else { b }, s)
            };
            let p0 = vec![0.4, -0.6, 1.1, 0.2];
            let (t, v, s) = eval(&p0);
            let gr = t.backward(&[(s, 1.0)]);
            for i in 0..4 {
                let mut pp = p0.clone();
                pp[i] += 1e-6;
                let mut pm = p0.clone();
                pm[i] -= 1e-6;
                let (tp, _, sp) = eval(&pp);
                let (tm, _, sm) = eval(&pm);
                let fd = (tp.value(sp)[0] - tm.value(sm)[0]) / 2e-6;
                assert!((fd - gr[v][i]).abs() < 1e-7, "{which} {i}");
            }
        }
    }
}
