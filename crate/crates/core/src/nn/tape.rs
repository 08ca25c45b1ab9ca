//! Define-by-run reverse-mode differentiation tape.
//!
//! Each operation appends a node holding its output value and a closure that
//! maps the output gradient back to gradients for its parents. Calling
//! [`Tape::backward`] walks the nodes in reverse creation order, which is a
//! valid topological order because the tape is append-only.
//!
//! Every op validates shapes up front and rejects non-finite outputs, so a
//! numeric blow-up surfaces at the op that produced it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul_accum, matmul_nt_accum, matmul_tn_accum, Tensor};

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// grad_out, parent values, own value -> one gradient per parent.
type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor> + Send + Sync>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// Gradients produced by a backward pass.
pub struct Gradients {
    by_var: Vec<Option<Tensor>>,
    named: HashMap<String, Tensor>,
}

impl Gradients {
    /// Gradient of the loss with respect to a tape variable, if it was reached.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.by_var.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a named parameter, if the parameter participated.
    pub fn named(&self, name: &str) -> Option<&Tensor> {
        self.named.get(name)
    }

    pub fn into_named(self) -> HashMap<String, Tensor> {
        self.named
    }

    pub fn named_map(&self) -> &HashMap<String, Tensor> {
        &self.named
    }
}

/// The computation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, backward: Option<BackwardFn>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(
                "non-finite value produced on the tape".to_string(),
            ));
        }
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf input. Gradients with respect to it are tracked but unnamed.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, vec![], None)
    }

    /// A named parameter leaf. Repeated names reuse the existing variable so a
    /// parameter appears on the tape at most once and its gradients accumulate.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var> {
        if let Some(&var) = self.param_vars.get(name) {
            return Ok(var);
        }
        let var = self.push(value.clone(), vec![], None)?;
        self.param_vars.insert(name.to_string(), var);
        Ok(var)
    }

    fn expect_same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Error::Shape(format!(
                "{op}: shape mismatch {sa:?} vs {sb:?}"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_in_place(self.value(b));
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_same_shape(a, b, "sub")?;
        let mut data = self.value(a).data().to_vec();
        for (d, &bv) in data.iter_mut().zip(self.value(b).data()) {
            *d -= bv;
        }
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, _, _| {
                let mut neg = g.clone();
                neg.scale_in_place(-1.0);
                vec![g.clone(), neg]
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_same_shape(a, b, "mul")?;
        let mut data = self.value(a).data().to_vec();
        for (d, &bv) in data.iter_mut().zip(self.value(b).data()) {
            *d *= bv;
        }
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, parents, _| {
                let (av, bv) = (parents[0], parents[1]);
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&gv, &x)| gv * x)
                    .collect();
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gv, &x)| gv * x)
                    .collect();
                vec![
                    Tensor::from_vec(g.shape(), da).unwrap(),
                    Tensor::from_vec(g.shape(), db).unwrap(),
                ]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.scale_in_place(c);
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = g.clone();
                da.scale_in_place(c);
                vec![da]
            })),
        )
    }

    /// `a[m,n] + b[n]`, broadcasting `b` over rows.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.value(a).cols();
        if self.value(b).shape() != [n] {
            return Err(Error::Shape(format!(
                "add_row_broadcast: bias shape {:?} does not match row width {}",
                self.value(b).shape(),
                n
            )));
        }
        let mut data = self.value(a).data().to_vec();
        let bias = self.value(b).data();
        for row in data.chunks_mut(n) {
            for (d, &bv) in row.iter_mut().zip(bias) {
                *d += bv;
            }
        }
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g, _, _| {
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, &gv) in db.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
                vec![g.clone(), Tensor::from_vec(&[n], db).unwrap()]
            })),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = (self.value(a).rows(), self.value(a).cols());
        let (kb, n) = (self.value(b).rows(), self.value(b).cols());
        if k != kb {
            return Err(Error::Shape(format!(
                "matmul: inner dims {k} vs {kb} differ"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_accum(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let out = Tensor::from_vec(&[m, n], out)?;
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g, parents, _| {
                let (av, bv) = (parents[0], parents[1]);
                let mut da = vec![0.0; m * k];
                matmul_nt_accum(g.data(), bv.data(), &mut da, m, n, k);
                let mut db = vec![0.0; k * n];
                matmul_tn_accum(av.data(), g.data(), &mut db, k, m, n);
                vec![
                    Tensor::from_vec(&[m, k], da).unwrap(),
                    Tensor::from_vec(&[k, n], db).unwrap(),
                ]
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let out = Tensor::from_vec(&[n, m], out)?;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        da[i * n + j] = g.data()[j * m + i];
                    }
                }
                vec![Tensor::from_vec(&[m, n], da).unwrap()]
            })),
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total: f64 = self.value(a).data().iter().sum();
        let shape = self.value(a).shape().to_vec();
        self.push(
            Tensor::scalar(total),
            vec![a],
            Some(Box::new(move |g, _, _| {
                vec![Tensor::filled(&shape, g.item())]
            })),
        )
    }

    /// Column-wise mean over rows: [m,n] -> [n].
    pub fn mean_axis0(&mut self, a: Var) -> Result<Var> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        let mut out = vec![0.0; n];
        for row in self.value(a).data().chunks(n) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o /= m as f64;
        }
        let out = Tensor::from_vec(&[n], out)?;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = vec![0.0; m * n];
                for row in da.chunks_mut(n) {
                    for (d, &gv) in row.iter_mut().zip(g.data()) {
                        *d = gv / m as f64;
                    }
                }
                vec![Tensor::from_vec(&[m, n], da).unwrap()]
            })),
        )
    }

    /// Extract row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        if i >= m {
            return Err(Error::Shape(format!("row {i} out of range for {m} rows")));
        }
        let out = Tensor::from_vec(&[n], self.value(a).row(i).to_vec())?;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = vec![0.0; m * n];
                da[i * n..(i + 1) * n].copy_from_slice(g.data());
                vec![Tensor::from_vec(&[m, n], da).unwrap()]
            })),
        )
    }

    /// Rows `[start, start+len)` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        if start + len > m {
            return Err(Error::Shape(format!(
                "slice_rows [{start}, {}) out of range for {m} rows",
                start + len
            )));
        }
        let out = Tensor::from_vec(
            &[len, n],
            self.value(a).data()[start * n..(start + len) * n].to_vec(),
        )?;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = vec![0.0; m * n];
                da[start * n..(start + len) * n].copy_from_slice(g.data());
                vec![Tensor::from_vec(&[m, n], da).unwrap()]
            })),
        )
    }

    /// Columns `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        if start + len > n {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) out of range for {n} cols",
                start + len
            )));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len].copy_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let out = Tensor::from_vec(&[m, len], out)?;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    da[i * n + start..i * n + start + len]
                        .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                vec![Tensor::from_vec(&[m, n], da).unwrap()]
            })),
        )
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols: no parts".to_string()));
        }
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(Error::Shape("concat_cols: row counts differ".to_string()));
            }
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                out[i * n + offset..i * n + offset + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let out = Tensor::from_vec(&[m, n], out)?;
        self.push(
            out,
            parts.to_vec(),
            Some(Box::new(move |g, _, _| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut offset = 0;
                for &w in &widths {
                    let mut da = vec![0.0; m * w];
                    for i in 0..m {
                        da[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * n + offset..i * n + offset + w]);
                    }
                    grads.push(Tensor::from_vec(&[m, w], da).unwrap());
                    offset += w;
                }
                grads
            })),
        )
    }

    /// Concatenate matrices with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows: no parts".to_string()));
        }
        let n = self.value(parts[0]).cols();
        let heights: Vec<usize> = parts.iter().map(|&p| self.value(p).rows()).collect();
        for &p in parts {
            if self.value(p).cols() != n {
                return Err(Error::Shape("concat_rows: col counts differ".to_string()));
            }
        }
        let m: usize = heights.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(&[m, n], out)?;
        self.push(
            out,
            parts.to_vec(),
            Some(Box::new(move |g, _, _| {
                let mut grads = Vec::with_capacity(heights.len());
                let mut offset = 0;
                for &h in &heights {
                    let da = g.data()[offset * n..(offset + h) * n].to_vec();
                    grads.push(Tensor::from_vec(&[h, n], da).unwrap());
                    offset += h;
                }
                grads
            })),
        )
    }

    /// Row-wise softmax restricted to the columns where `mask` is true;
    /// masked columns get probability exactly zero. Every row must have at
    /// least one unmasked column.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        if mask.len() != n {
            return Err(Error::Shape(format!(
                "masked_softmax_rows: mask length {} != cols {n}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&x| x) {
            return Err(Error::Shape(
                "masked_softmax_rows: mask excludes every column".to_string(),
            ));
        }
        let mask_owned = mask.to_vec();
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for (j, &x) in row.iter().enumerate() {
                if mask_owned[j] && x > max {
                    max = x;
                }
            }
            let mut z = 0.0;
            let out_row = &mut out[i * n..(i + 1) * n];
            for (j, &x) in row.iter().enumerate() {
                if mask_owned[j] {
                    let e = (x - max).exp();
                    out_row[j] = e;
                    z += e;
                }
            }
            for o in out_row.iter_mut() {
                *o /= z;
            }
        }
        let out = Tensor::from_vec(&[m, n], out)?;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _, value| {
                let p = value.data();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let p_row = &p[i * n..(i + 1) * n];
                    let g_row = &g.data()[i * n..(i + 1) * n];
                    let inner: f64 = p_row.iter().zip(g_row).map(|(&pv, &gv)| pv * gv).sum();
                    let d_row = &mut da[i * n..(i + 1) * n];
                    for j in 0..n {
                        d_row[j] = p_row[j] * (g_row[j] - inner);
                    }
                }
                vec![Tensor::from_vec(&[m, n], da).unwrap()]
            })),
        )
    }

    /// Row-wise log-sum-exp over unmasked columns: [m,n] -> [m].
    /// Max-subtraction keeps it finite for logits up to ~1e3.
    pub fn masked_logsumexp_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        if mask.len() != m * n {
            return Err(Error::Shape(format!(
                "masked_logsumexp_rows: mask length {} != {}",
                mask.len(),
                m * n
            )));
        }
        let mask_owned = mask.to_vec();
        let src = self.value(a).data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let row_mask = &mask_owned[i * n..(i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for (j, &x) in row.iter().enumerate() {
                if row_mask[j] && x > max {
                    max = x;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::Shape(
                    "masked_logsumexp_rows: a row has no unmasked column".to_string(),
                ));
            }
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                if row_mask[j] {
                    z += (x - max).exp();
                }
            }
            out[i] = max + z.ln();
        }
        let out = Tensor::from_vec(&[m], out)?;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, parents, value| {
                let x = parents[0].data();
                let lse = value.data();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let gv = g.data()[i];
                    for j in 0..n {
                        if mask_owned[i * n + j] {
                            da[i * n + j] = (x[i * n + j] - lse[i]).exp() * gv;
                        }
                    }
                }
                vec![Tensor::from_vec(&[m, n], da).unwrap()]
            })),
        )
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm_rows(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        if self.value(gain).shape() != [n] || self.value(bias).shape() != [n] {
            return Err(Error::Shape(
                "layer_norm_rows: gain/bias must match row width".to_string(),
            ));
        }
        let src = self.value(a).data();
        let gain_data = self.value(gain).data().to_vec();
        let bias_data = self.value(bias).data().to_vec();
        let mut out = vec![0.0; m * n];
        let mut normed = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..n {
                let xh = (row[j] - mean) * istd;
                normed[i * n + j] = xh;
                out[i * n + j] = gain_data[j] * xh + bias_data[j];
            }
        }
        let out = Tensor::from_vec(&[m, n], out)?;
        self.push(
            out,
            vec![a, gain, bias],
            Some(Box::new(move |g, parents, _| {
                let gain_v = parents[1].data();
                let mut da = vec![0.0; m * n];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                for i in 0..m {
                    let g_row = &g.data()[i * n..(i + 1) * n];
                    let xh_row = &normed[i * n..(i + 1) * n];
                    let istd = inv_std[i];
                    // dxh = g * gain; dx via the standard layer-norm backward
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for j in 0..n {
                        let dxh = g_row[j] * gain_v[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh_row[j];
                        dgain[j] += g_row[j] * xh_row[j];
                        dbias[j] += g_row[j];
                    }
                    mean_dxh /= n as f64;
                    mean_dxh_xh /= n as f64;
                    let d_row = &mut da[i * n..(i + 1) * n];
                    for j in 0..n {
                        let dxh = g_row[j] * gain_v[j];
                        d_row[j] = istd * (dxh - mean_dxh - xh_row[j] * mean_dxh_xh);
                    }
                }
                vec![
                    Tensor::from_vec(&[m, n], da).unwrap(),
                    Tensor::from_vec(&[n], dgain).unwrap(),
                    Tensor::from_vec(&[n], dbias).unwrap(),
                ]
            })),
        )
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        const C: f64 = 0.7978845608028654; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| {
                let u = C * (x + A * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            })
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(
            out,
            vec![a],
            Some(Box::new(|g, parents, _| {
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(parents[0].data())
                    .map(|(&gv, &x)| {
                        let u = C * (x + A * x * x * x);
                        let t = u.tanh();
                        let du = C * (1.0 + 3.0 * A * x * x);
                        gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                vec![Tensor::from_vec(g.shape(), da).unwrap()]
            })),
        )
    }

    /// Elementwise natural log. Caller guarantees positive inputs.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x.ln()).collect();
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(
            out,
            vec![a],
            Some(Box::new(|g, parents, _| {
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(parents[0].data())
                    .map(|(&gv, &x)| gv / x)
                    .collect();
                vec![Tensor::from_vec(g.shape(), da).unwrap()]
            })),
        )
    }

    /// Elementwise exp.
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x.exp()).collect();
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(
            out,
            vec![a],
            Some(Box::new(|g, _, value| {
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(value.data())
                    .map(|(&gv, &y)| gv * y)
                    .collect();
                vec![Tensor::from_vec(g.shape(), da).unwrap()]
            })),
        )
    }

    /// Clamp to [lo, hi]. Gradient passes through strictly interior entries only.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x.clamp(lo, hi))
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, parents, _| {
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(parents[0].data())
                    .map(|(&gv, &x)| if x > lo && x < hi { gv } else { 0.0 })
                    .collect();
                vec![Tensor::from_vec(g.shape(), da).unwrap()]
            })),
        )
    }

    /// Divide every entry of `a` by the scalar variable `s`.
    pub fn div_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::Shape("div_scalar_var: divisor must be scalar".to_string()));
        }
        let sv = self.value(s).item();
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x / sv).collect();
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        self.push(
            out,
            vec![a, s],
            Some(Box::new(move |g, _, value| {
                let da: Vec<f64> = g.data().iter().map(|&gv| gv / sv).collect();
                // d/ds (a/s) = -a/s^2 = -y/s
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(value.data())
                    .map(|(&gv, &y)| -gv * y / sv)
                    .sum();
                vec![
                    Tensor::from_vec(g.shape(), da).unwrap(),
                    Tensor::scalar(ds),
                ]
            })),
        )
    }

    /// Sum of the main diagonal of a square matrix.
    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        if m != n {
            return Err(Error::Shape(format!("trace: matrix {m}x{n} not square")));
        }
        let src = self.value(a).data();
        let total: f64 = (0..m).map(|i| src[i * n + i]).sum();
        self.push(
            Tensor::scalar(total),
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = vec![0.0; m * n];
                let gv = g.item();
                for i in 0..m {
                    da[i * n + i] = gv;
                }
                vec![Tensor::from_vec(&[m, n], da).unwrap()]
            })),
        )
    }

    /// Gather rows of `table` by token id: [V,h] x ids[L] -> [L,h].
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, h) = (self.value(table).rows(), self.value(table).cols());
        for &id in ids {
            if id >= v {
                return Err(Error::Vocab(format!(
                    "token id {id} out of range for vocabulary of size {v}"
                )));
            }
        }
        let ids_owned = ids.to_vec();
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            out.extend_from_slice(&src[id * h..(id + 1) * h]);
        }
        let out = Tensor::from_vec(&[ids.len(), h], out)?;
        self.push(
            out,
            vec![table],
            Some(Box::new(move |g, _, _| {
                let mut dt = vec![0.0; v * h];
                for (l, &id) in ids_owned.iter().enumerate() {
                    let g_row = &g.data()[l * h..(l + 1) * h];
                    for (d, &gv) in dt[id * h..(id + 1) * h].iter_mut().zip(g_row) {
                        *d += gv;
                    }
                }
                vec![Tensor::from_vec(&[v, h], dt).unwrap()]
            })),
        )
    }

    /// Normalize each row to unit Euclidean length. An all-zero row is left
    /// as zeros (its gradient is zero there).
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        let mut norms = vec![0.0; m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let norm = row.iter().map(|&x| x * x).sum::<f64>().sqrt();
            norms[i] = norm;
            if norm > 0.0 {
                for j in 0..n {
                    out[i * n + j] = row[j] / norm;
                }
            }
        }
        let out = Tensor::from_vec(self.value(a).shape(), out)?;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _, value| {
                let y = value.data();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let norm = norms[i];
                    if norm == 0.0 {
                        continue;
                    }
                    let y_row = &y[i * n..(i + 1) * n];
                    let g_row = &g.data()[i * n..(i + 1) * n];
                    let inner: f64 = y_row.iter().zip(g_row).map(|(&yv, &gv)| yv * gv).sum();
                    let d_row = &mut da[i * n..(i + 1) * n];
                    for j in 0..n {
                        d_row[j] = (g_row[j] - y_row[j] * inner) / norm;
                    }
                }
                vec![Tensor::from_vec(g.shape(), da).unwrap()]
            })),
        )
    }

    /// Reverse pass from a scalar root with seed gradient 1.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape(
                "backward: root must be a scalar; use backward_with_seed otherwise".to_string(),
            ));
        }
        self.backward_with_seed(root, Tensor::scalar(1.0))
    }

    /// Reverse pass from any node with an explicit seed gradient.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::Shape(
                "backward seed shape does not match root".to_string(),
            ));
        }
        let mut by_var: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        by_var[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let grad = match by_var[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            if let Some(backward) = &node.backward {
                let parent_values: Vec<&Tensor> =
                    node.parents.iter().map(|&p| self.value(p)).collect();
                let parent_grads = backward(&grad, &parent_values, &node.value);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&parent, pg) in node.parents.iter().zip(parent_grads) {
                    if !pg.all_finite() {
                        return Err(Error::Numeric(
                            "non-finite gradient produced in backward pass".to_string(),
                        ));
                    }
                    match &mut by_var[parent.0] {
                        Some(existing) => existing.add_in_place(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            by_var[idx] = Some(grad);
        }
        let mut named = HashMap::new();
        for (name, &var) in &self.param_vars {
            if let Some(g) = &by_var[var.0] {
                named.insert(name.clone(), g.clone());
            }
        }
        Ok(Gradients { by_var, named })
    }
}
