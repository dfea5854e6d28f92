//! Numeric kernels shared by the encoder, the attribution code and the
//! evaluation harness. Everything here is a pure function of its inputs.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inputs above this are returned unchanged by softplus.
const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;

fn require_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.ndim() != 2 {
        return Err(Error::Dimension(format!(
            "{what} must be a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// Row-major matrix product. Accumulates over the inner index in ascending
/// order starting from zero, so results match a textbook triple loop bit for bit.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "left operand")?;
    let (k2, n) = require_matrix(b, "right operand")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents {k} and {k2} differ"
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "left operand")?;
    let (n, k2) = require_matrix(b, "right operand")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_nt inner extents {k} and {k2} differ"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &bd[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += ar[p] * br[p];
            }
            out[i * n + j] = s;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = require_matrix(a, "left operand")?;
    let (k2, n) = require_matrix(b, "right operand")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_tn inner extents {k} and {k2} differ"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let br = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let av = ad[p * m + i];
            let or = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let or = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
}

/// Adds `bias` to every row of `x` in place.
pub(crate) fn add_row_bias(x: &mut Tensor, bias: &Tensor) {
    let c = x.cols();
    debug_assert_eq!(bias.len(), c);
    for row in x.data_mut().chunks_mut(c) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
}

/// `x · w + b` for a batch of row vectors.
pub(crate) fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut y = matmul(x, w)?;
    if b.len() != y.cols() {
        return Err(Error::Dimension(format!(
            "bias length {} for output width {}",
            b.len(),
            y.cols()
        )));
    }
    add_row_bias(&mut y, b);
    Ok(y)
}

/// Softmax of `v / temperature`, stabilised by subtracting the maximum.
pub fn softmax_temp(v: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if v.is_empty() {
        return Err(Error::Dimension("softmax of empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out: Vec<f64> = v.iter().map(|x| x / temperature).collect();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Unit-temperature softmax in place. Entries equal to `-inf` get exactly zero
/// mass; at least one entry must be finite.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Layer normalization with population variance.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::Dimension(format!(
            "layer_norm: x {} gamma {} beta {}",
            x.len(),
            gamma.len(),
            beta.len()
        )));
    }
    if !(eps >= 0.0) {
        return Err(Error::Parameter(format!(
            "eps must be non-negative, got {eps}"
        )));
    }
    let (xhat, _) = normalize_row(x, eps);
    Ok(xhat
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(h, (g, b))| g * h + b)
        .collect())
}

/// Returns the standardized row and `1/sqrt(var + eps)`.
pub(crate) fn normalize_row(x: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softplus,
    Sigmoid,
    GeluTanh,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "softplus" => Ok(Self::Softplus),
            "sigmoid" => Ok(Self::Sigmoid),
            "gelu_tanh" => Ok(Self::GeluTanh),
            other => Err(Error::Parameter(format!("unknown activation {other:?}"))),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => relu(x),
            Self::Softplus => softplus(x),
            Self::Sigmoid => sigmoid(x),
            Self::GeluTanh => gelu_tanh(x),
        }
    }

    pub fn apply_tensor(self, t: &Tensor) -> Tensor {
        t.map(|v| self.apply(v))
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_tanh_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Trapezoidal integral of a curve sampled at `xs`, which must run strictly
/// upward from exactly 0 to exactly 1.
pub fn trapezoid_auc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Dimension(format!(
            "need at least two matching samples, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs[0] != 0.0 || xs[xs.len() - 1] != 1.0 {
        return Err(Error::Ordering(format!(
            "endpoints {} and {}",
            xs[0],
            xs[xs.len() - 1]
        )));
    }
    if let Some(w) = xs.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::Ordering(format!("{} then {}", w[0], w[1])));
    }
    Ok(xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum())
}

/// Min-max normalization followed by the power `1/beta`. A constant map
/// becomes all zeros.
pub fn minmax_gamma(map: &Tensor, beta: f64) -> Result<Tensor> {
    if !(beta >= 1.0) || !beta.is_finite() {
        return Err(Error::Parameter(format!("beta must be >= 1, got {beta}")));
    }
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi <= lo {
        return Ok(Tensor::zeros(map.shape().to_vec()));
    }
    let range = hi - lo;
    let exponent = 1.0 / beta;
    Ok(map.map(|v| {
        let u = (v - lo) / range;
        if beta == 1.0 {
            u
        } else {
            u.powf(exponent)
        }
    }))
}

/// Fractional ranks starting at 1, ties receive the average of their positions.
pub(crate) fn fractional_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "first input has zero rank variance",
        ));
    }
    if sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "second input has zero rank variance",
        ));
    }
    // sqrt(fl(x * x)) == |x|, so identical inputs correlate to exactly 1.
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson on fractional ranks).
pub fn spearman_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::Dimension(format!(
            "spearman needs equal lengths >= 3, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    pearson(&fractional_ranks(a), &fractional_ranks(b))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
