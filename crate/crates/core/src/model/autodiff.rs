//! Minimal reverse-mode differentiation over row-major f64 matrices.

use ndarray::{s, Array1, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Var(usize);

enum Op {
    Leaf,
    Gather { table: Var, ids: Vec<usize> },
    Scale(Var, f64),
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Softmax(Var),
    Relu(Var),
    LayerNorm { x: Var, g: Var, b: Var, xhat: Array2<f64>, inv_std: Array1<f64> },
    MulConst(Var, Array2<f64>),
    CrossEntropy { probs: Array2<f64>, logits: Var, targets: Vec<usize>, smoothing: f64 },
}

/// Records a forward computation. Parameters are borrowed and occupy the
/// first `params.len()` variable slots.
pub(crate) struct Tape<'p> {
    params: &'p [Array2<f64>],
    vals: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

const LN_EPS: f64 = 1e-5;

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Array2<f64>]) -> Self {
        Tape {
            params,
            vals: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn param(&self, i: usize) -> Var {
        debug_assert!(i < self.params.len());
        Var(i)
    }

    pub fn val(&self, v: Var) -> &Array2<f64> {
        let p = self.params.len();
        if v.0 < p {
            &self.params[v.0]
        } else {
            &self.vals[v.0 - p]
        }
    }

    fn push(&mut self, val: Array2<f64>, op: Op) -> Var {
        self.vals.push(val);
        self.ops.push(op);
        Var(self.params.len() + self.vals.len() - 1)
    }

    pub fn constant(&mut self, val: Array2<f64>) -> Var {
        self.push(val, Op::Leaf)
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.val(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.val(x) * c;
        self.push(out, Op::Scale(x, c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a) + self.val(b);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.val(a) + &self.val(row).row(0);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).dot(self.val(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).dot(&self.val(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.val(x).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.val(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise softmax of `x + mask`, where the mask holds 0 or −∞.
    pub fn softmax(&mut self, x: Var, mask: Option<&Array2<f64>>) -> Var {
        let mut out = self.val(x).clone();
        if let Some(m) = mask {
            out += m;
        }
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        self.push(out, Op::Softmax(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.val(x).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let xv = self.val(x);
        let n = xv.ncols() as f64;
        let mean = xv.mean_axis(Axis(1)).expect("nonempty");
        let mut xhat = xv - &mean.view().insert_axis(Axis(1));
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        xhat *= &inv_std.view().insert_axis(Axis(1));
        let out = &xhat * &self.val(g).row(0) + &self.val(b).row(0);
        self.push(out, Op::LayerNorm { x, g, b, xhat, inv_std })
    }

    pub fn mul_const(&mut self, x: Var, m: Array2<f64>) -> Var {
        let out = self.val(x) * &m;
        self.push(out, Op::MulConst(x, m))
    }

    /// Summed token cross-entropy against `targets`, with the target
    /// distribution mixed with uniform by `smoothing`. Returns a 1×1 value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Var {
        let lv = self.val(logits);
        let v = lv.ncols() as f64;
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (mut row, &y) in probs.rows_mut().into_iter().zip(targets) {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            let mean_logp = row.iter().map(|&x| x - lse).sum::<f64>() / v;
            loss -= (1.0 - smoothing) * (row[y] - lse) + smoothing * mean_logp;
            row.mapv_inplace(|x| (x - lse).exp());
        }
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                probs,
                logits,
                targets: targets.to_vec(),
                smoothing,
            },
        )
    }

    /// Gradients of the 1×1 output `out` with respect to every parameter.
    pub fn backward(self, out: Var) -> Vec<Array2<f64>> {
        let p = self.params.len();
        let mut pgrads: Vec<Array2<f64>> = self.params.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.vals.len()).map(|_| None).collect();
        grads[out.0 - p] = Some(Array2::ones((1, 1)));

        fn acc(pgrads: &mut [Array2<f64>], grads: &mut [Option<Array2<f64>>], p: usize, v: Var, g: Array2<f64>) {
            if v.0 < p {
                pgrads[v.0] += &g;
            } else {
                match &mut grads[v.0 - p] {
                    Some(x) => *x += &g,
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let Tape { params, vals, ops } = self;
        let val = |v: Var| if v.0 < p { &params[v.0] } else { &vals[v.0 - p] };
        for i in (0..ops.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &ops[i] {
                Op::Leaf => {}
                Op::Gather { table, ids } => {
                    let mut gt = Array2::zeros(val(*table).raw_dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = gt.row_mut(id);
                        row += &g.row(r);
                    }
                    acc(&mut pgrads, &mut grads, p, *table, gt);
                }
                Op::Scale(x, c) => acc(&mut pgrads, &mut grads, p, *x, g * *c),
                Op::Add(a, b) => {
                    acc(&mut pgrads, &mut grads, p, *a, g.clone());
                    acc(&mut pgrads, &mut grads, p, *b, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut pgrads, &mut grads, p, *row, gr);
                    acc(&mut pgrads, &mut grads, p, *a, g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&val(*b).t());
                    let gb = val(*a).t().dot(&g);
                    acc(&mut pgrads, &mut grads, p, *a, ga);
                    acc(&mut pgrads, &mut grads, p, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(val(*b));
                    let gb = g.t().dot(val(*a));
                    acc(&mut pgrads, &mut grads, p, *a, ga);
                    acc(&mut pgrads, &mut grads, p, *b, gb);
                }
                Op::SliceCols(x, start) => {
                    let mut gx = Array2::zeros(val(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut pgrads, &mut grads, p, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &part in parts {
                        let w = val(part).ncols();
                        acc(&mut pgrads, &mut grads, p, part, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::Softmax(x) => {
                    let y = &vals[i];
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let gx = y * &(&g - &dot);
                    acc(&mut pgrads, &mut grads, p, *x, gx);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(val(*x)).for_each(|d, &v| {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(&mut pgrads, &mut grads, p, *x, gx);
                }
                Op::LayerNorm { x, g: gamma, b, xhat, inv_std } => {
                    let n = xhat.ncols() as f64;
                    acc(&mut pgrads, &mut grads, p, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(
                        &mut pgrads,
                        &mut grads,
                        p,
                        *gamma,
                        (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let dxhat = &g * &val(*gamma).row(0);
                    let sum_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let mut gx = dxhat * n - &sum_d - &(xhat * &sum_dx);
                    gx *= &(inv_std / n).insert_axis(Axis(1));
                    acc(&mut pgrads, &mut grads, p, *x, gx);
                }
                Op::MulConst(x, m) => acc(&mut pgrads, &mut grads, p, *x, g * m),
                Op::CrossEntropy {
                    probs,
                    logits,
                    targets,
                    smoothing,
                } => {
                    let v = probs.ncols() as f64;
                    let mut gl = probs - smoothing / v;
                    for (r, &y) in targets.iter().enumerate() {
                        gl[[r, y]] -= 1.0 - smoothing;
                    }
                    gl *= g[[0, 0]];
                    acc(&mut pgrads, &mut grads, p, *logits, gl);
                }
            }
        }
        pgrads
    }
}
