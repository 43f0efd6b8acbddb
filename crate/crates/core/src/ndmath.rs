//! Dense row-major matrices, layers with hand-written backward passes, the
//! Adam optimizer, and a central-difference gradient checker.
//!
//! Batches are stored one sample per row. An affine layer with weight `W`
//! (`out x in`) maps a batch `X` (`n x in`) to `X W^T + b`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Dense {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Dense { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Dense {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Dense::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
        Dense { rows, cols, data }
    }

    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(lo..=hi)).collect();
        Dense { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Dense {
        Dense {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn same_shape(&self, other: &Dense, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Dense) -> Result<Dense> {
        self.same_shape(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn hadamard(&self, other: &Dense) -> Result<Dense> {
        self.same_shape(other, "hadamard")?;
        Ok(self.zip(other, |a, b| a * b))
    }

    fn zip(&self, other: &Dense, f: impl Fn(f64, f64) -> f64) -> Dense {
        Dense {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Dense) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Dense {
        self.map(|x| x * s)
    }

    pub fn transpose(&self) -> Dense {
        let mut t = Dense::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Dense) -> Result<Dense> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Dense::zeros(self.rows, other.cols);
        let m = other.cols;
        for i in 0..self.rows {
            let o = &mut out.data[i * m..(i + 1) * m];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b = &other.data[k * m..(k + 1) * m];
                for (x, &y) in o.iter_mut().zip(b) {
                    *x += a * y;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Dense) -> Result<Dense> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_t {:?} x {:?}^T",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Dense::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Dense) -> Result<Dense> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "t_matmul {:?}^T x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (p, m) = (self.cols, other.cols);
        let mut out = Dense::zeros(p, m);
        for r in 0..self.rows {
            let b = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * m..(i + 1) * m];
                for (x, &y) in o.iter_mut().zip(b) {
                    *x += a * y;
                }
            }
        }
        Ok(out)
    }

    /// Column sums as a `1 x cols` matrix.
    pub fn col_sums(&self) -> Dense {
        let mut out = Dense::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, &x) in out.data.iter_mut().zip(self.row(i)) {
                *o += x;
            }
        }
        out
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Dense {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Dense {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stack `self` on top of `other`.
    pub fn vstack(&self, other: &Dense) -> Result<Dense> {
        if self.cols != other.cols && self.rows > 0 && other.rows > 0 {
            return Err(Error::Shape(format!(
                "vstack {:?} over {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Dense {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Dense) -> f64 {
        dot(&self.data, &other.data)
    }
}

impl std::ops::Index<(usize, usize)> for Dense {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Dense {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct AffineLayer {
    pub weight: Dense,
    pub bias: Dense,
    input: Option<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub weight: Dense,
    pub bias: Dense,
}

impl AffineLayer {
    pub fn new(weight: Dense, bias: Dense) -> Result<Self> {
        if bias.shape() != (weight.rows(), 1) {
            return Err(Error::Shape(format!(
                "bias {:?} for weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(AffineLayer {
            weight,
            bias,
            input: None,
        })
    }

    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        AffineLayer {
            weight: Dense::glorot(out_dim, in_dim, rng),
            bias: Dense::zeros(out_dim, 1),
            input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Forward without caching.
    pub fn apply(&self, x: &Dense) -> Result<Dense> {
        let mut y = x.matmul_t(&self.weight).map_err(|_| {
            Error::Shape(format!(
                "affine input {:?} for weight {:?}",
                x.shape(),
                self.weight.shape()
            ))
        })?;
        add_row_bias(&mut y, &self.bias);
        Ok(y)
    }

    pub fn forward(&mut self, x: &Dense) -> Result<Dense> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Returns `(dL/dx, parameter gradients)` for the cached input.
    pub fn backward(&self, upstream: &Dense) -> Result<(Dense, AffineGrads)> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::invalid("affine backward before forward"))?;
        if upstream.shape() != (x.rows(), self.out_dim()) {
            return Err(Error::Shape(format!(
                "affine upstream {:?}, expected {:?}",
                upstream.shape(),
                (x.rows(), self.out_dim())
            )));
        }
        let dx = upstream.matmul(&self.weight)?;
        let dw = upstream.t_matmul(x)?;
        let db = upstream.col_sums().transpose();
        Ok((dx, AffineGrads { weight: dw, bias: db }))
    }

    pub fn params_mut(&mut self) -> [&mut Dense; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Add a `(cols x 1)` bias to every row.
pub(crate) fn add_row_bias(y: &mut Dense, bias: &Dense) {
    let c = y.cols();
    for i in 0..y.rows() {
        for (v, b) in y.row_mut(i).iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    debug_assert_eq!(c, bias.rows());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn forward(self, x: &Dense) -> Dense {
        match self {
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::Tanh => x.map(f64::tanh),
        }
    }

    /// `input` is the pre-activation and `output` the forward result; each
    /// activation uses whichever is cheaper. ReLU passes no gradient at 0.
    pub fn backward(self, input: &Dense, output: &Dense, upstream: &Dense) -> Result<Dense> {
        input.same_shape(upstream, "activation backward")?;
        Ok(match self {
            Activation::Relu => input.zip(upstream, |x, g| if x > 0.0 { g } else { 0.0 }),
            Activation::Tanh => output.zip(upstream, |y, g| g * (1.0 - y * y)),
        })
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Dense) -> Dense {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Backward of [`softmax_rows`] given its output.
pub fn softmax_rows_backward(probs: &Dense, upstream: &Dense) -> Result<Dense> {
    probs.same_shape(upstream, "softmax backward")?;
    let mut out = Dense::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let g = upstream.row(i);
        let s = dot(p, g);
        for (o, (&pi, &gi)) in out.row_mut(i).iter_mut().zip(p.iter().zip(g)) {
            *o = pi * (gi - s);
        }
    }
    Ok(out)
}

/// Mean cross-entropy of softmax(logits) over the `(row, class)` targets.
/// Returns the loss, the softmax probabilities, and `dL/dlogits` (rows without
/// a target get zero gradient).
pub fn softmax_cross_entropy(logits: &Dense, targets: &[(usize, usize)]) -> Result<(f64, Dense, Dense)> {
    let probs = softmax_rows(logits);
    let mut grad = Dense::zeros(logits.rows(), logits.cols());
    if targets.is_empty() {
        return Ok((0.0, probs, grad));
    }
    let scale = 1.0 / targets.len() as f64;
    let mut loss = 0.0;
    for &(i, c) in targets {
        if i >= logits.rows() || c >= logits.cols() {
            return Err(Error::Shape(format!(
                "target ({i}, {c}) outside {:?}",
                logits.shape()
            )));
        }
        // log-softmax directly, so confident rows stay finite.
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss -= (row[c] - lse) * scale;
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g += scale * (probs[(i, j)] - f64::from(u8::from(j == c)));
        }
    }
    Ok((loss, probs, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-element multipliers applied by inverted dropout (0 or `1/(1-rate)`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Dense>);

impl DropoutMask {
    pub fn backward(&self, upstream: &Dense) -> Result<Dense> {
        match &self.0 {
            None => Ok(upstream.clone()),
            Some(m) => m.hadamard(upstream),
        }
    }
}

/// Inverted dropout. Identity in infer mode or at rate 0.
pub fn dropout(x: &Dense, rate: f64, mode: Mode, rng: &mut Rng) -> Result<(Dense, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), DropoutMask(None)));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Dense {
        rows: x.rows,
        cols: x.cols,
        data: (0..x.data.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    };
    Ok((mask.hadamard(x)?, DropoutMask(Some(mask))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer. Moment buffers are allocated on
/// the first step and matched to parameters by position.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Dense>,
    second: Vec<Dense>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Dense], grads: &[&Dense]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters, {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            p.same_shape(g, "adam parameter/gradient")?;
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Dense::zeros(p.rows(), p.cols())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::Shape("adam state does not match parameters".into()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut())
                .zip(v.data.iter_mut())
            {
                let gi = gi + weight_decay * *pi;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Floor on the denominator of the relative error, so components whose true
/// gradient is essentially zero are judged on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compare `analytic` against central differences of `loss` around `params`.
/// Returns the largest `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn grad_check(
    params: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    eps: f64,
) -> Result<f64> {
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let base = loss(params);
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss {base} at the check point")));
    }
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = loss(&p);
        p[i] = orig - eps;
        let down = loss(&p);
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss not finite near parameter {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Flatten several matrices into one vector (for grad checks).
pub fn flatten(ms: &[&Dense]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.data.iter().copied()).collect()
}

/// Inverse of [`flatten`]: overwrite the matrices from a flat slice.
pub fn unflatten(flat: &[f64], ms: &mut [&mut Dense]) {
    let mut k = 0;
    for m in ms.iter_mut() {
        let n = m.data.len();
        m.data.copy_from_slice(&flat[k..k + n]);
        k += n;
    }
}
