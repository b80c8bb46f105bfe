//! Primitive differentiable operations.
//!
//! Every op validates shapes, computes its forward value with a fixed
//! row-major summation order, and tapes a closure that maps the upstream
//! gradient to per-input contributions. Backward closures skip inputs that
//! do not require gradients.

use super::{fl, Elem, Graph, Tensor};
use crate::error::{Error, Result};

// ---------- shape and broadcasting helpers ----------

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn require_rank2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() != 2 {
        return Err(Error::invalid(format!(
            "{op} expects a rank-2 tensor, got shape {shape:?}"
        )));
    }
    Ok((shape[0], shape[1]))
}

/// Trailing-aligned broadcast result shape; dimensions must match or be 1.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = Vec::with_capacity(rank);
    for axis in 0..rank {
        let da = if axis < rank - a.len() { 1 } else { a[axis - (rank - a.len())] };
        let db = if axis < rank - b.len() { 1 } else { b[axis - (rank - b.len())] };
        let d = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(shape_err(op, a, b));
        };
        out.push(d);
    }
    Ok(out)
}

/// Element strides of `in_shape` aligned to the axes of `out_shape`,
/// with stride 0 on broadcast (size-1) axes.
fn padded_strides(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..in_shape.len()).rev() {
        strides[offset + i] = if in_shape[i] == 1 { 0 } else { acc };
        acc *= in_shape[i];
    }
    strides
}

/// Elementwise combine with broadcasting, walking the output row-major with
/// an odometer over per-input strides (no per-element division).
fn broadcast_zip<F: Elem>(
    a: &[F],
    a_shape: &[usize],
    b: &[F],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(F, F) -> F,
) -> Vec<F> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let sa = padded_strides(a_shape, out_shape);
    let sb = padded_strides(b_shape, out_shape);
    let rank = out_shape.len();
    let total: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for count in 0..total {
        out.push(f(a[oa], b[ob]));
        if count + 1 == total {
            break;
        }
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            oa += sa[axis];
            ob += sb[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
            oa -= sa[axis] * out_shape[axis];
            ob -= sb[axis] * out_shape[axis];
        }
    }
    out
}

/// Sum `grad` (laid out as `out_shape`) down to `in_shape`, collapsing the
/// axes that were broadcast on the forward pass.
fn reduce_to<F: Elem>(grad: &[F], out_shape: &[usize], in_shape: &[usize]) -> Vec<F> {
    if out_shape == in_shape {
        return grad.to_vec();
    }
    let strides = padded_strides(in_shape, out_shape);
    let numel: usize = in_shape.iter().product();
    let mut out = vec![F::zero(); numel];
    let rank = out_shape.len();
    let total: usize = out_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for (count, g) in grad.iter().enumerate() {
        out[off] += *g;
        if count + 1 == total {
            break;
        }
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            off += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
            off -= strides[axis] * out_shape[axis];
        }
    }
    out
}

fn matmul_raw<F: Elem>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for kk in 0..k {
            // out[i, :] accumulates over kk in ascending order: deterministic.
            let av = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn rope_table(positions: &[usize], head_dim: usize, base: f64) -> Vec<(f64, f64)> {
    let half = head_dim / 2;
    let mut table = Vec::with_capacity(positions.len() * half);
    for &pos in positions {
        for pair in 0..half {
            let freq = base.powf(-((2 * pair) as f64) / head_dim as f64);
            let angle = pos as f64 * freq;
            table.push((angle.cos(), angle.sin()));
        }
    }
    table
}

/// Rotate adjacent pairs within each head by the per-(position, pair) angle.
/// `invert` applies the opposite rotation (used for the backward pass).
fn rope_apply<F: Elem>(
    x: &[F],
    rows: usize,
    width: usize,
    head_dim: usize,
    table: &[(f64, f64)],
    invert: bool,
) -> Vec<F> {
    let half = head_dim / 2;
    let heads = width / head_dim;
    let mut out = vec![F::zero(); x.len()];
    for i in 0..rows {
        for h in 0..heads {
            for pair in 0..half {
                let (c, s) = table[i * half + pair];
                let s = if invert { -s } else { s };
                let (c, s) = (fl::<F>(c), fl::<F>(s));
                let base_idx = i * width + h * head_dim + 2 * pair;
                let x0 = x[base_idx];
                let x1 = x[base_idx + 1];
                out[base_idx] = x0 * c - x1 * s;
                out[base_idx + 1] = x0 * s + x1 * c;
            }
        }
    }
    out
}

// ---------- operations ----------

impl<F: Elem> Graph<F> {
    pub fn add(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let (ash, bsh) = (a.shape(), b.shape());
        let out_shape = broadcast_shape("add", &ash, &bsh)?;
        let data = broadcast_zip(&a.data(), &ash, &b.data(), &bsh, &out_shape, |x, y| x + y);
        Ok(self.push(&[a, b], out_shape.clone(), data, move |ins, _out, d| {
            let ga = ins[0]
                .requires_grad()
                .then(|| reduce_to(d, &out_shape, &ins[0].shape()));
            let gb = ins[1]
                .requires_grad()
                .then(|| reduce_to(d, &out_shape, &ins[1].shape()));
            vec![ga, gb]
        }))
    }

    pub fn sub(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let (ash, bsh) = (a.shape(), b.shape());
        let out_shape = broadcast_shape("sub", &ash, &bsh)?;
        let data = broadcast_zip(&a.data(), &ash, &b.data(), &bsh, &out_shape, |x, y| x - y);
        Ok(self.push(&[a, b], out_shape.clone(), data, move |ins, _out, d| {
            let ga = ins[0]
                .requires_grad()
                .then(|| reduce_to(d, &out_shape, &ins[0].shape()));
            let gb = ins[1].requires_grad().then(|| {
                let neg: Vec<F> = d.iter().map(|&g| -g).collect();
                reduce_to(&neg, &out_shape, &ins[1].shape())
            });
            vec![ga, gb]
        }))
    }

    pub fn mul(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let (ash, bsh) = (a.shape(), b.shape());
        let out_shape = broadcast_shape("mul", &ash, &bsh)?;
        let data = broadcast_zip(&a.data(), &ash, &b.data(), &bsh, &out_shape, |x, y| x * y);
        Ok(self.push(&[a, b], out_shape.clone(), data, move |ins, _out, d| {
            let (ash, bsh) = (ins[0].shape(), ins[1].shape());
            let ga = ins[0].requires_grad().then(|| {
                let full =
                    broadcast_zip(d, &out_shape, &ins[1].data(), &bsh, &out_shape, |g, y| g * y);
                reduce_to(&full, &out_shape, &ash)
            });
            let gb = ins[1].requires_grad().then(|| {
                let full =
                    broadcast_zip(d, &out_shape, &ins[0].data(), &ash, &out_shape, |g, x| g * x);
                reduce_to(&full, &out_shape, &bsh)
            });
            vec![ga, gb]
        }))
    }

    pub fn div(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let (ash, bsh) = (a.shape(), b.shape());
        let out_shape = broadcast_shape("div", &ash, &bsh)?;
        let data = broadcast_zip(&a.data(), &ash, &b.data(), &bsh, &out_shape, |x, y| x / y);
        Ok(self.push(&[a, b], out_shape.clone(), data, move |ins, out, d| {
            let (ash, bsh) = (ins[0].shape(), ins[1].shape());
            let ga = ins[0].requires_grad().then(|| {
                let full =
                    broadcast_zip(d, &out_shape, &ins[1].data(), &bsh, &out_shape, |g, y| g / y);
                reduce_to(&full, &out_shape, &ash)
            });
            let gb = ins[1].requires_grad().then(|| {
                // d(a/b)/db = -a/b^2 = -out/b
                let dout: Vec<F> = d.iter().zip(out.data().iter()).map(|(&g, &o)| g * o).collect();
                let full =
                    broadcast_zip(&dout, &out_shape, &ins[1].data(), &bsh, &out_shape, |t, y| {
                        -(t / y)
                    });
                reduce_to(&full, &out_shape, &bsh)
            });
            vec![ga, gb]
        }))
    }

    /// Shared implementation for elementwise unary ops. `dfn(x, y)` is the
    /// local derivative given the input and output values.
    fn unary(
        &mut self,
        x: &Tensor<F>,
        fwd: impl Fn(F) -> F,
        dfn: impl Fn(F, F) -> F + 'static,
    ) -> Tensor<F> {
        let shape = x.shape();
        let data: Vec<F> = x.data().iter().map(|&v| fwd(v)).collect();
        self.push(&[x], shape, data, move |ins, out, d| {
            if !ins[0].requires_grad() {
                return vec![None];
            }
            let xs = ins[0].data();
            let ys = out.data();
            let g = d
                .iter()
                .zip(xs.iter().zip(ys.iter()))
                .map(|(&gi, (&xi, &yi))| gi * dfn(xi, yi))
                .collect();
            vec![Some(g)]
        })
    }

    pub fn exp(&mut self, x: &Tensor<F>) -> Tensor<F> {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn tanh(&mut self, x: &Tensor<F>) -> Tensor<F> {
        self.unary(x, |v| v.tanh(), |_, y| F::one() - y * y)
    }

    pub fn sigmoid(&mut self, x: &Tensor<F>) -> Tensor<F> {
        // Branch on sign so neither exp overflows.
        let fwd = |v: F| {
            if v >= F::zero() {
                F::one() / (F::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (F::one() + e)
            }
        };
        self.unary(x, fwd, |_, y| y * (F::one() - y))
    }

    pub fn neg(&mut self, x: &Tensor<F>) -> Tensor<F> {
        self.unary(x, |v| -v, |_, _| -F::one())
    }

    /// Elementwise power with a constant exponent. Fractional exponents
    /// require strictly positive inputs (callers guarantee this; the norm
    /// denominators this exists for are sums of squares plus an epsilon).
    pub fn powf(&mut self, x: &Tensor<F>, exponent: f64) -> Tensor<F> {
        let p = fl::<F>(exponent);
        self.unary(x, move |v| v.powf(p), move |xv, _| p * xv.powf(p - F::one()))
    }

    pub fn scale(&mut self, x: &Tensor<F>, factor: f64) -> Tensor<F> {
        let c = fl::<F>(factor);
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, x: &Tensor<F>, value: f64) -> Tensor<F> {
        let c = fl::<F>(value);
        self.unary(x, move |v| v + c, |_, _| F::one())
    }

    pub fn matmul(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let (ash, bsh) = (a.shape(), b.shape());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(shape_err("matmul", &ash, &bsh));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let data = matmul_raw(&a.data(), &b.data(), m, k, n);
        Ok(self.push(&[a, b], vec![m, n], data, move |ins, _out, d| {
            let ga = ins[0].requires_grad().then(|| {
                // dA = dC · B^T, accumulated over j ascending per element.
                let bd = ins[1].data();
                let mut g = vec![F::zero(); m * k];
                for i in 0..m {
                    for kk in 0..k {
                        let brow = &bd[kk * n..(kk + 1) * n];
                        let drow = &d[i * n..(i + 1) * n];
                        let mut acc = F::zero();
                        for j in 0..n {
                            acc += drow[j] * brow[j];
                        }
                        g[i * k + kk] = acc;
                    }
                }
                g
            });
            let gb = ins[1].requires_grad().then(|| {
                // dB = A^T · dC, accumulated over i ascending per element.
                let ad = ins[0].data();
                let mut g = vec![F::zero(); k * n];
                for i in 0..m {
                    let drow = &d[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let av = ad[i * k + kk];
                        let grow = &mut g[kk * n..(kk + 1) * n];
                        for j in 0..n {
                            grow[j] += av * drow[j];
                        }
                    }
                }
                g
            });
            vec![ga, gb]
        }))
    }

    pub fn transpose(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let sh = x.shape();
        let (m, n) = require_rank2("transpose", &sh)?;
        let xd = x.data();
        let mut data = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = xd[i * n + j];
            }
        }
        drop(xd);
        Ok(self.push(&[x], vec![n, m], data, move |ins, _out, d| {
            if !ins[0].requires_grad() {
                return vec![None];
            }
            let mut g = vec![F::zero(); m * n];
            for j in 0..n {
                for i in 0..m {
                    g[i * n + j] = d[j * m + i];
                }
            }
            vec![Some(g)]
        }))
    }

    pub fn sum_all(&mut self, x: &Tensor<F>) -> Tensor<F> {
        let total = x.data().iter().fold(F::zero(), |acc, &v| acc + v);
        self.push(&[x], vec![1], vec![total], |ins, _out, d| {
            if !ins[0].requires_grad() {
                return vec![None];
            }
            vec![Some(vec![d[0]; ins[0].numel()])]
        })
    }

    pub fn sum_rows(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let sh = x.shape();
        let (n, dim) = require_rank2("sum_rows", &sh)?;
        let xd = x.data();
        let data: Vec<F> = (0..n)
            .map(|i| xd[i * dim..(i + 1) * dim].iter().fold(F::zero(), |a, &v| a + v))
            .collect();
        drop(xd);
        Ok(self.push(&[x], vec![n, 1], data, move |ins, _out, d| {
            if !ins[0].requires_grad() {
                return vec![None];
            }
            let mut g = vec![F::zero(); n * dim];
            for i in 0..n {
                g[i * dim..(i + 1) * dim].fill(d[i]);
            }
            vec![Some(g)]
        }))
    }

    pub fn mean_rows(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let sh = x.shape();
        let (n, dim) = require_rank2("mean_rows", &sh)?;
        if dim == 0 {
            return Err(Error::invalid("mean_rows over zero columns"));
        }
        let inv = fl::<F>(1.0 / dim as f64);
        let xd = x.data();
        let data: Vec<F> = (0..n)
            .map(|i| xd[i * dim..(i + 1) * dim].iter().fold(F::zero(), |a, &v| a + v) * inv)
            .collect();
        drop(xd);
        Ok(self.push(&[x], vec![n, 1], data, move |ins, _out, d| {
            if !ins[0].requires_grad() {
                return vec![None];
            }
            let mut g = vec![F::zero(); n * dim];
            for i in 0..n {
                g[i * dim..(i + 1) * dim].fill(d[i] * inv);
            }
            vec![Some(g)]
        }))
    }

    /// Row-wise softmax with max-subtraction. Rows must contain at least one
    /// finite entry; `-inf` entries (additive masks) get exactly zero weight.
    pub fn softmax_rows(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let sh = x.shape();
        let (n, dim) = require_rank2("softmax_rows", &sh)?;
        let xd = x.data();
        let mut data = vec![F::zero(); n * dim];
        for i in 0..n {
            let row = &xd[i * dim..(i + 1) * dim];
            let m = row.iter().fold(F::neg_infinity(), |a, &v| if v > a { v } else { a });
            let out_row = &mut data[i * dim..(i + 1) * dim];
            let mut sum = F::zero();
            for (o, &v) in out_row.iter_mut().zip(row) {
                let e = (v - m).exp();
                *o = e;
                sum += e;
            }
            for o in out_row.iter_mut() {
                *o = *o / sum;
            }
        }
        drop(xd);
        Ok(self.push(&[x], vec![n, dim], data, move |ins, out, d| {
            if !ins[0].requires_grad() {
                return vec![None];
            }
            let ys = out.data();
            let mut g = vec![F::zero(); n * dim];
            for i in 0..n {
                let s = &ys[i * dim..(i + 1) * dim];
                let drow = &d[i * dim..(i + 1) * dim];
                let mut dot = F::zero();
                for j in 0..dim {
                    dot += drow[j] * s[j];
                }
                let grow = &mut g[i * dim..(i + 1) * dim];
                for j in 0..dim {
                    grow[j] = s[j] * (drow[j] - dot);
                }
            }
            vec![Some(g)]
        }))
    }

    /// Mean cross-entropy over the selected rows of `logits`, fused with the
    /// softmax for stability. Unselected rows contribute nothing to the loss
    /// and receive exactly zero gradient. `targets[i]` is only read where
    /// `selected[i]` is true.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: &Tensor<F>,
        targets: &[usize],
        selected: &[bool],
    ) -> Result<Tensor<F>> {
        let sh = logits.shape();
        let (n, vocab) = require_rank2("softmax_cross_entropy", &sh)?;
        if targets.len() != n || selected.len() != n {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: {} logit rows, {} targets, {} selection flags",
                n,
                targets.len(),
                selected.len()
            )));
        }
        let n_sel = selected.iter().filter(|&&s| s).count();
        if n_sel == 0 {
            return Err(Error::EmptySelection("softmax_cross_entropy"));
        }
        for i in 0..n {
            if selected[i] && targets[i] >= vocab {
                return Err(Error::invalid(format!(
                    "softmax_cross_entropy: target {} at row {i} out of range for {vocab} classes",
                    targets[i]
                )));
            }
        }

        let xd = logits.data();
        let mut loss_sum = F::zero();
        for i in 0..n {
            if !selected[i] {
                continue;
            }
            let row = &xd[i * vocab..(i + 1) * vocab];
            let m = row.iter().fold(F::neg_infinity(), |a, &v| if v > a { v } else { a });
            let mut sum = F::zero();
            for &v in row {
                sum += (v - m).exp();
            }
            loss_sum += sum.ln() + m - row[targets[i]];
        }
        let inv_sel = fl::<F>(1.0 / n_sel as f64);
        let loss = loss_sum * inv_sel;
        drop(xd);

        let targets = targets.to_vec();
        let selected = selected.to_vec();
        Ok(self.push(&[logits], vec![1], vec![loss], move |ins, _out, d| {
            if !ins[0].requires_grad() {
                return vec![None];
            }
            let xd = ins[0].data();
            let scale = d[0] * inv_sel;
            let mut g = vec![F::zero(); n * vocab];
            for i in 0..n {
                if !selected[i] {
                    continue; // exact zeros for unselected rows
                }
                let row = &xd[i * vocab..(i + 1) * vocab];
                let m = row.iter().fold(F::neg_infinity(), |a, &v| if v > a { v } else { a });
                let mut sum = F::zero();
                for &v in row {
                    sum += (v - m).exp();
                }
                let grow = &mut g[i * vocab..(i + 1) * vocab];
                for j in 0..vocab {
                    grow[j] = scale * (row[j] - m).exp() / sum;
                }
                grow[targets[i]] -= scale;
            }
            vec![Some(g)]
        }))
    }

    /// Gather rows of `table` at `ids`; gradients scatter-add back.
    pub fn embedding(&mut self, table: &Tensor<F>, ids: &[usize]) -> Result<Tensor<F>> {
        let sh = table.shape();
        let (vocab, dim) = require_rank2("embedding", &sh)?;
        if let Some((pos, &bad)) = ids.iter().enumerate().find(|&(_, &id)| id >= vocab) {
            return Err(Error::invalid(format!(
                "embedding: id {bad} at position {pos} out of range for table of {vocab} rows"
            )));
        }
        let td = table.data();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(&td[id * dim..(id + 1) * dim]);
        }
        drop(td);
        let ids = ids.to_vec();
        Ok(self.push(&[table], vec![ids.len(), dim], data, move |ins, _out, d| {
            if !ins[0].requires_grad() {
                return vec![None];
            }
            let mut g = vec![F::zero(); vocab * dim];
            for (row, &id) in ids.iter().enumerate() {
                let src = &d[row * dim..(row + 1) * dim];
                let dst = &mut g[id * dim..(id + 1) * dim];
                for (dv, &sv) in dst.iter_mut().zip(src) {
                    *dv += sv;
                }
            }
            vec![Some(g)]
        }))
    }

    pub fn slice_cols(&mut self, x: &Tensor<F>, start: usize, len: usize) -> Result<Tensor<F>> {
        let sh = x.shape();
        let (n, dim) = require_rank2("slice_cols", &sh)?;
        if len == 0 || start + len > dim {
            return Err(Error::invalid(format!(
                "slice_cols: columns {start}..{} out of range for width {dim}",
                start + len
            )));
        }
        let xd = x.data();
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&xd[i * dim + start..i * dim + start + len]);
        }
        drop(xd);
        Ok(self.push(&[x], vec![n, len], data, move |ins, _out, d| {
            if !ins[0].requires_grad() {
                return vec![None];
            }
            let mut g = vec![F::zero(); n * dim];
            for i in 0..n {
                g[i * dim + start..i * dim + start + len]
                    .copy_from_slice(&d[i * len..(i + 1) * len]);
            }
            vec![Some(g)]
        }))
    }

    pub fn concat_cols(&mut self, parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols of zero tensors"));
        }
        let first = parts[0].shape();
        let (n, _) = require_rank2("concat_cols", &first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let sh = p.shape();
            let (rows, w) = require_rank2("concat_cols", &sh)?;
            if rows != n {
                return Err(shape_err("concat_cols", &first, &sh));
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for (p, &w) in parts.iter().zip(&widths) {
                let pd = p.data();
                data.extend_from_slice(&pd[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(parts, vec![n, total], data, move |ins, _out, d| {
            let mut grads = Vec::with_capacity(ins.len());
            let mut offset = 0;
            for (input, &w) in ins.iter().zip(&widths) {
                if input.requires_grad() {
                    let mut g = vec![F::zero(); n * w];
                    for i in 0..n {
                        g[i * w..(i + 1) * w]
                            .copy_from_slice(&d[i * total + offset..i * total + offset + w]);
                    }
                    grads.push(Some(g));
                } else {
                    grads.push(None);
                }
                offset += w;
            }
            grads
        }))
    }

    /// Stack rank-2 tensors of equal width vertically.
    pub fn concat_rows(&mut self, parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_rows of zero tensors"));
        }
        let first = parts[0].shape();
        let (_, width) = require_rank2("concat_rows", &first)?;
        let mut row_counts = Vec::with_capacity(parts.len());
        for p in parts {
            let sh = p.shape();
            let (rows, w) = require_rank2("concat_rows", &sh)?;
            if w != width {
                return Err(shape_err("concat_rows", &first, &sh));
            }
            row_counts.push(rows);
        }
        let total: usize = row_counts.iter().sum();
        let mut data = Vec::with_capacity(total * width);
        for p in parts {
            data.extend_from_slice(&p.data());
        }
        Ok(self.push(parts, vec![total, width], data, move |ins, _out, d| {
            let mut grads = Vec::with_capacity(ins.len());
            let mut offset = 0;
            for (input, &rows) in ins.iter().zip(&row_counts) {
                let chunk = rows * width;
                grads.push(
                    input
                        .requires_grad()
                        .then(|| d[offset..offset + chunk].to_vec()),
                );
                offset += chunk;
            }
            grads
        }))
    }

    /// Rotary position encoding: within each `head_dim`-wide head, rotate
    /// adjacent value pairs by `position * base^(-2p/head_dim)` radians.
    /// Angles are computed in `f64` regardless of the element type.
    pub fn rope(
        &mut self,
        x: &Tensor<F>,
        positions: &[usize],
        base: f64,
        head_dim: usize,
    ) -> Result<Tensor<F>> {
        let sh = x.shape();
        let (rows, width) = require_rank2("rope", &sh)?;
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::invalid(format!(
                "rope: head_dim {head_dim} must be positive and even"
            )));
        }
        if width % head_dim != 0 {
            return Err(Error::invalid(format!(
                "rope: width {width} is not a multiple of head_dim {head_dim}"
            )));
        }
        if positions.len() != rows {
            return Err(Error::invalid(format!(
                "rope: {rows} rows but {} positions",
                positions.len()
            )));
        }
        if base <= 0.0 {
            return Err(Error::invalid(format!("rope: base {base} must be positive")));
        }
        let table = rope_table(positions, head_dim, base);
        let data = rope_apply(&x.data(), rows, width, head_dim, &table, false);
        Ok(self.push(&[x], vec![rows, width], data, move |ins, _out, d| {
            if !ins[0].requires_grad() {
                return vec![None];
            }
            // Rotation is orthogonal: the gradient rotates by the inverse angle.
            vec![Some(rope_apply(d, rows, width, head_dim, &table, true))]
        }))
    }
}
