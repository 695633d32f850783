//! Differentiable operations.
//!
//! Each op computes its forward value eagerly and, when the tape records and
//! an input is trainable, pushes a closure that maps the output gradient back
//! onto the inputs. Closures treat a missing output gradient as zero so dead
//! branches cost nothing at backward time.

use super::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};

fn matmul_kernel<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let row = &b[p * n..(p + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(row) {
                *d += av * bv;
            }
        }
    }
}

fn softmax_row<F: Scalar>(row: &[F], out: &mut [F]) {
    let mut max = row[0];
    for &v in row {
        if v > max {
            max = v;
        }
    }
    let mut sum = F::ZERO;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// Index of the row maximum; ties resolve to the lowest index.
pub fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl<F: Scalar> Tape<F> {
    /// Matrix product `[m×k]·[k×n] -> [m×n]`.
    pub fn matmul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, k) = a.dims2()?;
        let (k2, n) = b.dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions disagree, lhs {:?} vs rhs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut data = vec![F::ZERO; m * n];
        matmul_kernel(&a.borrow_data(), &b.borrow_data(), m, k, n, &mut data);
        let out = Tensor::from_vec(&[m, n], data)?;
        if self.track([a, b]) {
            out.set_requires_grad(true);
            let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                if a.requires_grad() {
                    // dA = dOut · Bᵀ
                    let mut da = vec![F::ZERO; m * k];
                    {
                        let bv = b.borrow_data();
                        for i in 0..m {
                            for j in 0..n {
                                let d = dout[i * n + j];
                                for p in 0..k {
                                    da[i * k + p] += d * bv[p * n + j];
                                }
                            }
                        }
                    }
                    a.accumulate_grad(&da);
                }
                if b.requires_grad() {
                    // dB = Aᵀ · dOut
                    let mut db = vec![F::ZERO; k * n];
                    {
                        let av = a.borrow_data();
                        for i in 0..m {
                            for p in 0..k {
                                let v = av[i * k + p];
                                for j in 0..n {
                                    db[p * n + j] += v * dout[i * n + j];
                                }
                            }
                        }
                    }
                    b.accumulate_grad(&db);
                }
                Ok(())
            });
        }
        Ok(out)
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (r, c) = x.dims2()?;
        let mut data = vec![F::ZERO; r * c];
        {
            let xv = x.borrow_data();
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = xv[i * c + j];
                }
            }
        }
        let out = Tensor::from_vec(&[c, r], data)?;
        if self.track([x]) {
            out.set_requires_grad(true);
            let (x, out_h) = (x.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let mut dx = vec![F::ZERO; r * c];
                for j in 0..c {
                    for i in 0..r {
                        dx[i * c + j] = dout[j * r + i];
                    }
                }
                x.accumulate_grad(&dx);
                Ok(())
            });
        }
        Ok(out)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        if a.shape() != b.shape() {
            return Err(Error::shape(format!(
                "add: shape {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let data: Vec<F> = a
            .borrow_data()
            .iter()
            .zip(b.borrow_data().iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(&a.shape(), data)?;
        if self.track([a, b]) {
            out.set_requires_grad(true);
            let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                a.accumulate_grad(&dout);
                b.accumulate_grad(&dout);
                Ok(())
            });
        }
        Ok(out)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        if a.shape() != b.shape() {
            return Err(Error::shape(format!(
                "mul: shape {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let data: Vec<F> = a
            .borrow_data()
            .iter()
            .zip(b.borrow_data().iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(&a.shape(), data)?;
        if self.track([a, b]) {
            out.set_requires_grad(true);
            let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                if a.requires_grad() {
                    let da: Vec<F> = dout
                        .iter()
                        .zip(b.borrow_data().iter())
                        .map(|(&d, &y)| d * y)
                        .collect();
                    a.accumulate_grad(&da);
                }
                if b.requires_grad() {
                    let db: Vec<F> = dout
                        .iter()
                        .zip(a.borrow_data().iter())
                        .map(|(&d, &x)| d * x)
                        .collect();
                    b.accumulate_grad(&db);
                }
                Ok(())
            });
        }
        Ok(out)
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, x: &Tensor<F>, factor: f64) -> Result<Tensor<F>> {
        let s = F::from_f64(factor);
        let data: Vec<F> = x.borrow_data().iter().map(|&v| v * s).collect();
        let out = Tensor::from_vec(&x.shape(), data)?;
        if self.track([x]) {
            out.set_requires_grad(true);
            let (x, out_h) = (x.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let dx: Vec<F> = dout.iter().map(|&d| d * s).collect();
                x.accumulate_grad(&dx);
                Ok(())
            });
        }
        Ok(out)
    }

    /// Add a bias vector to every row of a 2-D tensor (the one permitted
    /// broadcast).
    pub fn add_row_bias(&self, x: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
        let (r, c) = x.dims2()?;
        if bias.shape() != [c] {
            return Err(Error::shape(format!(
                "add_row_bias: bias shape {:?} does not match row width {c}",
                bias.shape()
            )));
        }
        let mut data = x.to_vec();
        {
            let bv = bias.borrow_data();
            for row in data.chunks_exact_mut(c) {
                for (v, &b) in row.iter_mut().zip(bv.iter()) {
                    *v += b;
                }
            }
        }
        let out = Tensor::from_vec(&[r, c], data)?;
        if self.track([x, bias]) {
            out.set_requires_grad(true);
            let (x, bias, out_h) = (x.clone(), bias.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                x.accumulate_grad(&dout);
                if bias.requires_grad() {
                    let mut db = vec![F::ZERO; c];
                    for row in dout.chunks_exact(c) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    bias.accumulate_grad(&db);
                }
                Ok(())
            });
        }
        Ok(out)
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum_all(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut total = F::ZERO;
        for &v in x.borrow_data().iter() {
            total += v;
        }
        let out = Tensor::from_vec(&[1], vec![total])?;
        if self.track([x]) {
            out.set_requires_grad(true);
            let (x, out_h) = (x.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let dx = vec![dout[0]; x.len()];
                x.accumulate_grad(&dx);
                Ok(())
            });
        }
        Ok(out)
    }

    /// Column means over all rows: `[r×c] -> [1×c]`.
    pub fn mean_rows(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (r, c) = x.dims2()?;
        let inv = F::from_f64(1.0 / r as f64);
        let mut data = vec![F::ZERO; c];
        for row in x.borrow_data().chunks_exact(c) {
            for (d, &v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        for d in data.iter_mut() {
            *d = *d * inv;
        }
        let out = Tensor::from_vec(&[1, c], data)?;
        if self.track([x]) {
            out.set_requires_grad(true);
            let (x, out_h) = (x.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let mut dx = vec![F::ZERO; r * c];
                for row in dx.chunks_exact_mut(c) {
                    for (d, &g) in row.iter_mut().zip(&dout) {
                        *d = g * inv;
                    }
                }
                x.accumulate_grad(&dx);
                Ok(())
            });
        }
        Ok(out)
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, x: &Tensor<F>, start: usize, end: usize) -> Result<Tensor<F>> {
        let (r, c) = x.dims2()?;
        if start >= end || end > r {
            return Err(Error::shape(format!(
                "slice_rows: range {start}..{end} out of bounds for {r} rows"
            )));
        }
        let data = x.borrow_data()[start * c..end * c].to_vec();
        let out = Tensor::from_vec(&[end - start, c], data)?;
        if self.track([x]) {
            out.set_requires_grad(true);
            let (x, out_h) = (x.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let mut dx = vec![F::ZERO; r * c];
                dx[start * c..end * c].copy_from_slice(&dout);
                x.accumulate_grad(&dx);
                Ok(())
            });
        }
        Ok(out)
    }

    /// Stack 2-D tensors with equal column counts along the row dimension.
    pub fn concat_rows(&self, parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows: no inputs"));
        }
        let (_, c) = parts[0].dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for part in parts {
            let (r_p, c_p) = part.dims2()?;
            if c_p != c {
                return Err(Error::shape(format!(
                    "concat_rows: column mismatch {:?} vs {:?}",
                    parts[0].shape(),
                    part.shape()
                )));
            }
            rows += r_p;
            data.extend_from_slice(&part.borrow_data());
        }
        let out = Tensor::from_vec(&[rows, c], data)?;
        if self.track(parts.iter().copied()) {
            out.set_requires_grad(true);
            let parts: Vec<Tensor<F>> = parts.iter().map(|p| (*p).clone()).collect();
            let out_h = out.clone();
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let mut offset = 0;
                for part in &parts {
                    let n = part.len();
                    part.accumulate_grad(&dout[offset..offset + n]);
                    offset += n;
                }
                Ok(())
            });
        }
        Ok(out)
    }

    /// Stack 2-D tensors with equal row counts along the column dimension.
    pub fn concat_cols(&self, parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols: no inputs"));
        }
        let (r, _) = parts[0].dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for part in parts {
            let (r_p, c_p) = part.dims2()?;
            if r_p != r {
                return Err(Error::shape(format!(
                    "concat_cols: row mismatch {:?} vs {:?}",
                    parts[0].shape(),
                    part.shape()
                )));
            }
            widths.push(c_p);
            total += c_p;
        }
        let mut data = vec![F::ZERO; r * total];
        let mut offset = 0;
        for (part, &w) in parts.iter().zip(&widths) {
            let pv = part.borrow_data();
            for i in 0..r {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let out = Tensor::from_vec(&[r, total], data)?;
        if self.track(parts.iter().copied()) {
            out.set_requires_grad(true);
            let parts: Vec<Tensor<F>> = parts.iter().map(|p| (*p).clone()).collect();
            let out_h = out.clone();
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let mut offset = 0;
                for (part, w) in parts.iter().map(|p| {
                    let w = p.dims2().expect("2-D checked at forward").1;
                    (p, w)
                }) {
                    if part.requires_grad() {
                        let mut dp = vec![F::ZERO; r * w];
                        for i in 0..r {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&dout[i * total + offset..i * total + offset + w]);
                        }
                        part.accumulate_grad(&dp);
                    }
                    offset += w;
                }
                Ok(())
            });
        }
        Ok(out)
    }

    /// Linear combination of same-shape tensors with constant weights.
    pub fn lincomb(&self, terms: &[(f64, &Tensor<F>)]) -> Result<Tensor<F>> {
        if terms.is_empty() {
            return Err(Error::contract("lincomb: no inputs"));
        }
        let shape = terms[0].1.shape();
        let mut data = vec![F::ZERO; terms[0].1.len()];
        for &(w, t) in terms {
            if t.shape() != shape {
                return Err(Error::shape(format!(
                    "lincomb: shape {:?} vs {:?}",
                    shape,
                    t.shape()
                )));
            }
            let wf = F::from_f64(w);
            for (d, &v) in data.iter_mut().zip(t.borrow_data().iter()) {
                *d += wf * v;
            }
        }
        let out = Tensor::from_vec(&shape, data)?;
        if self.track(terms.iter().map(|(_, t)| *t)) {
            out.set_requires_grad(true);
            let terms: Vec<(f64, Tensor<F>)> = terms.iter().map(|&(w, t)| (w, t.clone())).collect();
            let out_h = out.clone();
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                for (w, t) in &terms {
                    if t.requires_grad() {
                        let wf = F::from_f64(*w);
                        let dt: Vec<F> = dout.iter().map(|&d| d * wf).collect();
                        t.accumulate_grad(&dt);
                    }
                }
                Ok(())
            });
        }
        Ok(out)
    }

    /// Gaussian error linear unit (tanh approximation).
    pub fn gelu(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
        const CUBIC: f64 = 0.044715;
        let c = F::from_f64(SQRT_2_OVER_PI);
        let a = F::from_f64(CUBIC);
        let half = F::from_f64(0.5);
        let data: Vec<F> = x
            .borrow_data()
            .iter()
            .map(|&v| {
                let u = c * (v + a * v * v * v);
                half * v * (F::ONE + u.tanh())
            })
            .collect();
        let out = Tensor::from_vec(&x.shape(), data)?;
        if self.track([x]) {
            out.set_requires_grad(true);
            let (x, out_h) = (x.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let three = F::from_f64(3.0);
                let dx: Vec<F> = x
                    .borrow_data()
                    .iter()
                    .zip(&dout)
                    .map(|(&v, &d)| {
                        let u = c * (v + a * v * v * v);
                        let t = u.tanh();
                        let sech2 = F::ONE - t * t;
                        let du = c * (F::ONE + three * a * v * v);
                        d * (half * (F::ONE + t) + half * v * sech2 * du)
                    })
                    .collect();
                x.accumulate_grad(&dx);
                Ok(())
            });
        }
        Ok(out)
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (r, c) = x.dims2()?;
        let mut data = vec![F::ZERO; r * c];
        {
            let xv = x.borrow_data();
            for i in 0..r {
                softmax_row(&xv[i * c..(i + 1) * c], &mut data[i * c..(i + 1) * c]);
            }
        }
        let out = Tensor::from_vec(&[r, c], data)?;
        if self.track([x]) {
            out.set_requires_grad(true);
            let (x, out_h) = (x.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let y = out_h.to_vec();
                let mut dx = vec![F::ZERO; r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let dr = &dout[i * c..(i + 1) * c];
                    let mut dot = F::ZERO;
                    for (yv, dv) in yr.iter().zip(dr) {
                        dot += *yv * *dv;
                    }
                    for j in 0..c {
                        dx[i * c + j] = yr[j] * (dr[j] - dot);
                    }
                }
                x.accumulate_grad(&dx);
                Ok(())
            });
        }
        Ok(out)
    }

    /// Layer normalization over the last dimension with learned affine.
    /// `x` is treated as rows of `gain.len()` elements.
    pub fn layer_norm(
        &self,
        x: &Tensor<F>,
        gain: &Tensor<F>,
        bias: &Tensor<F>,
        eps: f64,
    ) -> Result<Tensor<F>> {
        let shape = x.shape();
        let d = *shape
            .last()
            .ok_or_else(|| Error::shape("layer_norm: 0-D input"))?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::shape(format!(
                "layer_norm: gain {:?} / bias {:?} must both be [{d}]",
                gain.shape(),
                bias.shape()
            )));
        }
        let rows = x.len() / d;
        let epsf = F::from_f64(eps);
        let inv_d = F::from_f64(1.0 / d as f64);
        let mut normed = vec![F::ZERO; x.len()];
        let mut inv_stds = vec![F::ZERO; rows];
        let mut data = vec![F::ZERO; x.len()];
        {
            let xv = x.borrow_data();
            let gv = gain.borrow_data();
            let bv = bias.borrow_data();
            for i in 0..rows {
                let row = &xv[i * d..(i + 1) * d];
                let mut mean = F::ZERO;
                for &v in row {
                    mean += v;
                }
                mean = mean * inv_d;
                let mut var = F::ZERO;
                for &v in row {
                    let dv = v - mean;
                    var += dv * dv;
                }
                var = var * inv_d;
                let inv_std = F::ONE / (var + epsf).sqrt();
                inv_stds[i] = inv_std;
                for j in 0..d {
                    let xn = (row[j] - mean) * inv_std;
                    normed[i * d + j] = xn;
                    data[i * d + j] = xn * gv[j] + bv[j];
                }
            }
        }
        let out = Tensor::from_vec(&shape, data)?;
        if self.track([x, gain, bias]) {
            out.set_requires_grad(true);
            let (x, gain, bias, out_h) = (x.clone(), gain.clone(), bias.clone(), out.clone());
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let gv = gain.to_vec();
                if x.requires_grad() {
                    let mut dx = vec![F::ZERO; rows * d];
                    for i in 0..rows {
                        let dy = &dout[i * d..(i + 1) * d];
                        let xn = &normed[i * d..(i + 1) * d];
                        // dxhat = dy * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                        let mut mean_dxhat = F::ZERO;
                        let mut mean_dxhat_xn = F::ZERO;
                        for j in 0..d {
                            let dxh = dy[j] * gv[j];
                            mean_dxhat += dxh;
                            mean_dxhat_xn += dxh * xn[j];
                        }
                        mean_dxhat = mean_dxhat * inv_d;
                        mean_dxhat_xn = mean_dxhat_xn * inv_d;
                        for j in 0..d {
                            let dxh = dy[j] * gv[j];
                            dx[i * d + j] =
                                inv_stds[i] * (dxh - mean_dxhat - xn[j] * mean_dxhat_xn);
                        }
                    }
                    x.accumulate_grad(&dx);
                }
                if gain.requires_grad() {
                    let mut dg = vec![F::ZERO; d];
                    for i in 0..rows {
                        for j in 0..d {
                            dg[j] += dout[i * d + j] * normed[i * d + j];
                        }
                    }
                    gain.accumulate_grad(&dg);
                }
                if bias.requires_grad() {
                    let mut db = vec![F::ZERO; d];
                    for row in dout.chunks_exact(d) {
                        for (b, &g) in db.iter_mut().zip(row) {
                            *b += g;
                        }
                    }
                    bias.accumulate_grad(&db);
                }
                Ok(())
            });
        }
        Ok(out)
    }

    /// Mean over the batch of `-log softmax(logits)[target]`, computed via
    /// log-sum-exp with max subtraction.
    pub fn cross_entropy_logits(&self, logits: &Tensor<F>, targets: &[usize]) -> Result<Tensor<F>> {
        let (batch, classes) = logits.dims2()?;
        if targets.len() != batch {
            return Err(Error::shape(format!(
                "cross_entropy_logits: {batch} logit rows but {} targets",
                targets.len()
            )));
        }
        for (i, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::Index(format!(
                    "cross_entropy_logits: target {t} at row {i} out of range for {classes} classes"
                )));
            }
        }
        let inv_batch = F::from_f64(1.0 / batch as f64);
        let mut probs = vec![F::ZERO; batch * classes];
        let mut total = F::ZERO;
        {
            let lv = logits.borrow_data();
            for i in 0..batch {
                let row = &lv[i * classes..(i + 1) * classes];
                let mut max = row[0];
                for &v in row {
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = F::ZERO;
                for &v in row {
                    sum += (v - max).exp();
                }
                let lse = max + sum.ln();
                total += lse - row[targets[i]];
                for j in 0..classes {
                    probs[i * classes + j] = (row[j] - lse).exp();
                }
            }
        }
        let out = Tensor::from_vec(&[1], vec![total * inv_batch])?;
        if self.track([logits]) {
            out.set_requires_grad(true);
            let (logits, out_h) = (logits.clone(), out.clone());
            let targets = targets.to_vec();
            self.record(&out, move || {
                let Some(dout) = out_h.grad() else {
                    return Ok(());
                };
                let scale = dout[0] * inv_batch;
                let mut dl = probs;
                for (i, &t) in targets.iter().enumerate() {
                    dl[i * classes + t] = dl[i * classes + t] - F::ONE;
                }
                for v in dl.iter_mut() {
                    *v = *v * scale;
                }
                logits.accumulate_grad(&dl);
                Ok(())
            });
        }
        Ok(out)
    }
}
