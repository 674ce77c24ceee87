//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records the forward computation of one sentence. Parameters are
//! borrowed, never copied; [`Tape::backward`] returns one gradient per
//! registered parameter, in registration order.

use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(usize),
    /// Rows of a parameter table gathered by index.
    Embed { table: usize, ids: Vec<usize> },
    /// `x W^T + b`
    Affine { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Mul(Var, Var),
    /// Every row of the first operand times the single row of the second.
    MulRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    SelectRows { src: Var, idx: Vec<usize> },
    MeanRows { src: Var, idx: Vec<usize> },
    ColSlice { src: Var, start: usize },
    StackRows(Vec<Var>),
    ConcatCols(Var, Var),
    /// Scalar head whose local derivative with respect to `src` is precomputed.
    Head { src: Var, dsrc: Matrix<T> },
    SumScalars(Vec<Var>),
}

struct Node<T> {
    op: Op<T>,
    value: Option<Matrix<T>>,
}

pub struct Tape<'a, T: Scalar> {
    params: Vec<&'a Matrix<T>>,
    nodes: Vec<Node<T>>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            params: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn push(&mut self, op: Op<T>, value: Option<Matrix<T>>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params[*id],
            (_, Some(m)) => m,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).get(0, 0)
    }

    pub fn input(&mut self, m: Matrix<T>) -> Var {
        self.push(Op::Input, Some(m))
    }

    /// Registers a parameter; gradients come back in registration order.
    pub fn param(&mut self, m: &'a Matrix<T>) -> Var {
        self.params.push(m);
        let id = self.params.len() - 1;
        self.push(Op::Param(id), None)
    }

    /// Gathers rows of a registered parameter table.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let Op::Param(pid) = self.nodes[table.0].op else {
            panic!("embed expects a parameter node");
        };
        let value = self.params[pid].select_rows(ids);
        self.push(
            Op::Embed {
                table: pid,
                ids: ids.to_vec(),
            },
            Some(value),
        )
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let value = {
            let bm = b.map(|b| self.value(b));
            self.value(x).affine(self.value(w), bm)
        };
        self.push(Op::Affine { x, w, b }, Some(value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(Op::Add(a, b), Some(value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        debug_assert_eq!(ma.shape(), mb.shape());
        let data = ma
            .as_slice()
            .iter()
            .zip(mb.as_slice())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Matrix::from_vec(ma.rows(), ma.cols(), data).expect("same shape");
        self.push(Op::Mul(a, b), Some(value))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a).mul_row(self.value(row).row(0));
        self.push(Op::MulRow(a, row), Some(value))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(Scalar::sigmoid);
        self.push(Op::Sigmoid(a), Some(value))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        self.push(Op::Tanh(a), Some(value))
    }

    pub fn select_rows(&mut self, src: Var, idx: &[usize]) -> Var {
        let value = self.value(src).select_rows(idx);
        self.push(
            Op::SelectRows {
                src,
                idx: idx.to_vec(),
            },
            Some(value),
        )
    }

    pub fn row(&mut self, src: Var, r: usize) -> Var {
        self.select_rows(src, &[r])
    }

    pub fn mean_rows(&mut self, src: Var, idx: &[usize]) -> Var {
        let value = Matrix::row_vector(self.value(src).mean_rows(idx));
        self.push(
            Op::MeanRows {
                src,
                idx: idx.to_vec(),
            },
            Some(value),
        )
    }

    pub fn col_slice(&mut self, src: Var, start: usize, len: usize) -> Var {
        let m = self.value(src);
        let mut value = Matrix::zeros(m.rows(), len);
        for r in 0..m.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&m.row(r)[start..start + len]);
        }
        self.push(Op::ColSlice { src, start }, Some(value))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            debug_assert_eq!(m.cols(), cols);
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        let value = Matrix::from_vec(rows, cols, data).expect("consistent columns");
        self.push(Op::StackRows(parts.to_vec()), Some(value))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        debug_assert_eq!(ma.rows(), mb.rows());
        let cols = ma.cols() + mb.cols();
        let mut value = Matrix::zeros(ma.rows(), cols);
        for r in 0..ma.rows() {
            let row = value.row_mut(r);
            row[..ma.cols()].copy_from_slice(ma.row(r));
            row[ma.cols()..].copy_from_slice(mb.row(r));
        }
        self.push(Op::ConcatCols(a, b), Some(value))
    }

    /// Attaches a scalar objective `value` whose derivative with respect to
    /// every entry of `src` is given by `dsrc`.
    pub fn head(&mut self, src: Var, value: T, dsrc: Matrix<T>) -> Var {
        debug_assert_eq!(self.value(src).shape(), dsrc.shape());
        self.push(
            Op::Head { src, dsrc },
            Some(Matrix::filled(1, 1, value)),
        )
    }

    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|&p| self.scalar(p)).sum();
        self.push(
            Op::SumScalars(parts.to_vec()),
            Some(Matrix::filled(1, 1, total)),
        )
    }

    /// Back-propagates from the scalar `root`, scaling its seed gradient by
    /// `seed`. Returns gradients for every registered parameter, `None` when
    /// the parameter did not influence `root`.
    pub fn backward(&self, root: Var, seed: T) -> Vec<Option<Matrix<T>>> {
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads: Vec<Option<Matrix<T>>> = (0..self.params.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, seed));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(pid) => accumulate(&mut pgrads[*pid], g),
                Op::Embed { table, ids } => {
                    let t = self.params[*table];
                    let slot = pgrads[*table].get_or_insert_with(|| Matrix::zeros(t.rows(), t.cols()));
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, &b) in slot.row_mut(id).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                }
                Op::Affine { x, w, b } => {
                    let xm = self.value(*x);
                    let wm = self.value(*w);
                    // dx = g W
                    let mut dx = Matrix::zeros(xm.rows(), xm.cols());
                    for i in 0..g.rows() {
                        let gi = g.row(i);
                        let dxi = dx.row_mut(i);
                        for (j, &gij) in gi.iter().enumerate() {
                            if gij == T::zero() {
                                continue;
                            }
                            for (d, &wv) in dxi.iter_mut().zip(wm.row(j)) {
                                *d += gij * wv;
                            }
                        }
                    }
                    // dW = g^T x
                    let mut dw = Matrix::zeros(wm.rows(), wm.cols());
                    for i in 0..g.rows() {
                        let xi = xm.row(i);
                        for (j, &gij) in g.row(i).iter().enumerate() {
                            if gij == T::zero() {
                                continue;
                            }
                            for (d, &xv) in dw.row_mut(j).iter_mut().zip(xi) {
                                *d += gij * xv;
                            }
                        }
                    }
                    if let Some(b) = b {
                        let mut db = Matrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (d, &gv) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                                *d += gv;
                            }
                        }
                        accumulate(&mut grads[b.0], db);
                    }
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[w.0], dw);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::Mul(a, b) => {
                    let da = hadamard(&g, self.value(*b));
                    let db = hadamard(&g, self.value(*a));
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::MulRow(a, row) => {
                    let rv = self.value(*row).row(0);
                    let am = self.value(*a);
                    let da = g.mul_row(rv);
                    let mut drow = Matrix::zeros(1, rv.len());
                    for r in 0..g.rows() {
                        for ((d, &gv), &av) in
                            drow.row_mut(0).iter_mut().zip(g.row(r)).zip(am.row(r))
                        {
                            *d += gv * av;
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[row.0], drow);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[idx].value.as_ref().expect("value");
                    let d = zip_map(&g, y, |gv, yv| gv * yv * (T::one() - yv));
                    accumulate(&mut grads[a.0], d);
                }
                Op::Tanh(a) => {
                    let y = self.nodes[idx].value.as_ref().expect("value");
                    let d = zip_map(&g, y, |gv, yv| gv * (T::one() - yv * yv));
                    accumulate(&mut grads[a.0], d);
                }
                Op::SelectRows { src, idx: rows } => {
                    let sm = self.value(*src);
                    let mut d = Matrix::zeros(sm.rows(), sm.cols());
                    for (k, &r) in rows.iter().enumerate() {
                        for (a, &b) in d.row_mut(r).iter_mut().zip(g.row(k)) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads[src.0], d);
                }
                Op::MeanRows { src, idx: rows } => {
                    let sm = self.value(*src);
                    let k = T::lit(rows.len() as f64);
                    let mut d = Matrix::zeros(sm.rows(), sm.cols());
                    for &r in rows {
                        for (a, &b) in d.row_mut(r).iter_mut().zip(g.row(0)) {
                            *a += b / k;
                        }
                    }
                    accumulate(&mut grads[src.0], d);
                }
                Op::ColSlice { src, start } => {
                    let sm = self.value(*src);
                    let mut d = Matrix::zeros(sm.rows(), sm.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[src.0], d);
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.value(*p).shape();
                        let slice = g.as_slice()[offset * cols..(offset + rows) * cols].to_vec();
                        offset += rows;
                        accumulate(
                            &mut grads[p.0],
                            Matrix::from_vec(rows, cols, slice).expect("shape"),
                        );
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let mut da = Matrix::zeros(g.rows(), ca);
                    let mut db = Matrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Head { src, dsrc } => {
                    accumulate(&mut grads[src.0], dsrc.scale(g.get(0, 0)));
                }
                Op::SumScalars(parts) => {
                    for p in parts {
                        accumulate(&mut grads[p.0], g.clone());
                    }
                }
            }
        }
        pgrads
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Matrix<T>>, g: Matrix<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn hadamard<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Weighted sum of all entries, `sum(w ∘ x)`, as a tape head.
pub fn weighted_sum<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, weights: Matrix<T>) -> Var {
    let value = dot(tape.value(x).as_slice(), weights.as_slice());
    tape.head(x, value, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(
        f: &dyn Fn(&Matrix<f64>) -> f64,
        at: &Matrix<f64>,
        h: f64,
    ) -> Matrix<f64> {
        let mut out = Matrix::zeros(at.rows(), at.cols());
        for i in 0..at.len() {
            let mut plus = at.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = at.clone();
            minus.as_mut_slice()[i] -= h;
            out.as_mut_slice()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let denom = x.abs().max(y.abs()).max(1e-8);
            assert!((x - y).abs() / denom < tol || (x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    // Exercises every op once and compares against finite differences.
    fn composite(w: &Matrix<f64>, tbl: &Matrix<f64>) -> (f64, Vec<Option<Matrix<f64>>>) {
        let mut tape = Tape::new();
        let wv = tape.param(w);
        let tv = tape.param(tbl);
        let x = tape.embed(tv, &[2, 0, 2, 1]);
        let h = tape.affine(x, wv, None);
        let s = tape.sigmoid(h);
        let t = tape.tanh(h);
        let m = tape.mul(s, t);
        let a = tape.add(m, s);
        let r0 = tape.row(a, 1);
        let mr = tape.mul_row(a, r0);
        let left = tape.col_slice(mr, 0, 1);
        let right = tape.col_slice(mr, 1, 2);
        let cat = tape.concat_cols(right, left);
        let stacked = tape.stack_rows(&[cat, r0]);
        let sel = tape.select_rows(stacked, &[0, 3, 4]);
        let mean = tape.mean_rows(sel, &[0, 2]);
        let l1 = weighted_sum(&mut tape, mean, Matrix::row_vector(vec![1.0, -2.0, 0.5]));
        let l2 = weighted_sum(&mut tape, s, Matrix::filled(4, 3, 0.25));
        let root = tape.sum_scalars(&[l1, l2]);
        (tape.scalar(root), tape.backward(root, 1.0))
    }

    #[test]
    fn every_op_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w = Matrix::uniform(3, 2, 1.0, &mut rng);
        let tbl = Matrix::uniform(3, 2, 1.0, &mut rng);
        let (_, grads) = composite(&w, &tbl);
        let gw = grads[0].clone().unwrap();
        let gt = grads[1].clone().unwrap();
        let nw = numeric_grad(&|m| composite(m, &tbl).0, &w, 1e-6);
        let nt = numeric_grad(&|m| composite(&w, m).0, &tbl, 1e-6);
        assert_close(&gw, &nw, 1e-6);
        assert_close(&gt, &nt, 1e-6);
    }

    #[test]
    fn unused_parameter_has_no_gradient() {
        let a = Matrix::filled(1, 1, 2.0);
        let b = Matrix::filled(1, 1, 3.0);
        let mut tape = Tape::new();
        let av = tape.param(&a);
        let _bv = tape.param(&b);
        let s = tape.sigmoid(av);
        let root = weighted_sum(&mut tape, s, Matrix::filled(1, 1, 1.0));
        let g = tape.backward(root, 1.0);
        assert!(g[0].is_some());
        assert!(g[1].is_none());
    }
}
