//! Layer specifications and the forward/backward kernels for each kind.
//!
//! Supported kinds: dense, conv2d (valid padding, NHWC), maxpool2d, relu,
//! sigmoid, softmax (over the last axis), flatten. Shapes are tracked
//! without the batch axis; every kernel takes batched tensors `[B, ...]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d { filters: usize, kernel: usize, stride: usize },
    MaxPool2d { size: usize, stride: usize },
    Relu,
    Sigmoid,
    Softmax,
    Flatten,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Output shape (batchless) for a given input shape, or an error when
    /// the layer cannot be applied to it.
    pub fn infer_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "dense expects a flat input, got shape {input:?}"
                    )));
                }
                if units == 0 {
                    return Err(Error::InvalidArgument("dense units must be > 0".into()));
                }
                Ok(vec![units])
            }
            LayerSpec::Conv2d { filters, kernel, stride } => {
                let [h, w, _c] = as_hwc(input, "conv2d")?;
                if stride < 1 {
                    return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
                }
                if filters == 0 || kernel == 0 {
                    return Err(Error::InvalidArgument(
                        "conv2d filters and kernel must be > 0".into(),
                    ));
                }
                if kernel > h || kernel > w {
                    return Err(Error::InvalidArgument(format!(
                        "conv2d kernel {kernel} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![(h - kernel) / stride + 1, (w - kernel) / stride + 1, filters])
            }
            LayerSpec::MaxPool2d { size, stride } => {
                let [h, w, c] = as_hwc(input, "maxpool2d")?;
                if stride < 1 || size < 1 {
                    return Err(Error::InvalidArgument(
                        "maxpool2d size and stride must be >= 1".into(),
                    ));
                }
                if size > h || size > w {
                    return Err(Error::InvalidArgument(format!(
                        "maxpool2d window {size} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![(h - size) / stride + 1, (w - size) / stride + 1, c])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Softmax => {
                if input.is_empty() {
                    return Err(Error::InvalidArgument("softmax needs at least one axis".into()));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }
}

fn as_hwc(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    if shape.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "{what} expects an HxWxC input, got shape {shape:?}"
        )));
    }
    Ok([shape[0], shape[1], shape[2]])
}

/// A layer instance: spec, resolved shapes and (for dense/conv) parameters.
///
/// Dense weights are stored `[in, out]` so the output axis is contiguous;
/// conv weights are `[ky, kx, c_in, filters]`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Cached state from a recording forward pass through one layer.
#[derive(Debug)]
pub enum LayerCache {
    /// Layer input (dense, conv, relu).
    Input(Tensor),
    /// Pooling keeps the flat input index of each selected maximum.
    MaxIndices(Vec<u32>),
    /// Sigmoid and softmax backward only need the layer output.
    Output(Tensor),
    /// Flatten is a reshape; nothing to cache.
    None,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        self.weights.as_ref().map_or(0, Tensor::len) + self.bias.as_ref().map_or(0, Tensor::len)
    }

    /// Forward one batch. When `record` is set the returned cache holds what
    /// backward needs.
    pub fn forward(&self, x: &Tensor, record: bool) -> Result<(Tensor, LayerCache)> {
        match self.spec {
            LayerSpec::Dense { units } => {
                let (b, d) = batch_flat(x);
                let w = self.weights.as_ref().unwrap();
                let bias = self.bias.as_ref().unwrap();
                let mut y = Tensor::zeros(&[b, units]);
                dense_forward(x.data(), w.data(), bias.data(), y.data_mut(), b, d, units);
                let cache = if record { LayerCache::Input(x.clone()) } else { LayerCache::None };
                Ok((y, cache))
            }
            LayerSpec::Conv2d { filters, kernel, stride } => {
                let w = self.weights.as_ref().unwrap();
                let bias = self.bias.as_ref().unwrap();
                let b = x.batch_len();
                let [h, wd, c] = as_hwc(&self.in_shape, "conv2d")?;
                let oh = self.out_shape[0];
                let ow = self.out_shape[1];
                let mut y = Tensor::zeros(&[b, oh, ow, filters]);
                conv_forward(
                    x.data(), w.data(), bias.data(), y.data_mut(),
                    b, h, wd, c, oh, ow, filters, kernel, stride,
                );
                let cache = if record { LayerCache::Input(x.clone()) } else { LayerCache::None };
                Ok((y, cache))
            }
            LayerSpec::MaxPool2d { size, stride } => {
                let b = x.batch_len();
                let [h, wd, c] = as_hwc(&self.in_shape, "maxpool2d")?;
                let oh = self.out_shape[0];
                let ow = self.out_shape[1];
                let mut y = Tensor::zeros(&[b, oh, ow, c]);
                let mut idx = if record { vec![0u32; b * oh * ow * c] } else { Vec::new() };
                maxpool_forward(
                    x.data(), y.data_mut(), &mut idx, record,
                    b, h, wd, c, oh, ow, size, stride,
                );
                let cache = if record { LayerCache::MaxIndices(idx) } else { LayerCache::None };
                Ok((y, cache))
            }
            LayerSpec::Relu => {
                let mut y = x.clone();
                for v in y.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let cache = if record { LayerCache::Input(x.clone()) } else { LayerCache::None };
                Ok((y, cache))
            }
            LayerSpec::Sigmoid => {
                let mut y = x.clone();
                for v in y.data_mut() {
                    *v = sigmoid(*v);
                }
                let cache = if record { LayerCache::Output(y.clone()) } else { LayerCache::None };
                Ok((y, cache))
            }
            LayerSpec::Softmax => {
                let cols = *self.in_shape.last().unwrap();
                let mut y = x.clone();
                for row in y.data_mut().chunks_mut(cols) {
                    softmax_row(row);
                }
                let cache = if record { LayerCache::Output(y.clone()) } else { LayerCache::None };
                Ok((y, cache))
            }
            LayerSpec::Flatten => {
                let b = x.batch_len();
                let y = x.clone().reshaped(&[b, self.out_shape[0]])?;
                Ok((y, LayerCache::None))
            }
        }
    }

    /// Backward one batch: upstream gradient -> (input gradient, parameter
    /// gradients for dense/conv).
    pub fn backward(
        &self,
        cache: &LayerCache,
        dy: &Tensor,
    ) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
        match self.spec {
            LayerSpec::Dense { units } => {
                let x = cache_input(cache)?;
                let (b, d) = batch_flat(x);
                let w = self.weights.as_ref().unwrap();
                let mut dx = Tensor::zeros(&[b, d]);
                let mut dw = Tensor::zeros(&[d, units]);
                let mut db = Tensor::zeros(&[units]);
                dense_backward(
                    x.data(), w.data(), dy.data(),
                    dx.data_mut(), dw.data_mut(), db.data_mut(),
                    b, d, units,
                );
                Ok((dx, Some((dw, db))))
            }
            LayerSpec::Conv2d { filters, kernel, stride } => {
                let x = cache_input(cache)?;
                let w = self.weights.as_ref().unwrap();
                let b = x.batch_len();
                let [h, wd, c] = as_hwc(&self.in_shape, "conv2d")?;
                let oh = self.out_shape[0];
                let ow = self.out_shape[1];
                let mut dx = Tensor::zeros(&[b, h, wd, c]);
                let mut dw = Tensor::zeros(&[kernel, kernel, c, filters]);
                let mut db = Tensor::zeros(&[filters]);
                conv_backward(
                    x.data(), w.data(), dy.data(),
                    dx.data_mut(), dw.data_mut(), db.data_mut(),
                    b, h, wd, c, oh, ow, filters, kernel, stride,
                );
                Ok((dx, Some((dw, db))))
            }
            LayerSpec::MaxPool2d { .. } => {
                let idx = match cache {
                    LayerCache::MaxIndices(v) => v,
                    _ => return Err(Error::InvalidArgument("maxpool cache missing".into())),
                };
                let b = dy.batch_len();
                let mut shape = vec![b];
                shape.extend_from_slice(&self.in_shape);
                let mut dx = Tensor::zeros(&shape);
                let dxd = dx.data_mut();
                for (g, &i) in dy.data().iter().zip(idx.iter()) {
                    dxd[i as usize] += *g;
                }
                Ok((dx, None))
            }
            LayerSpec::Relu => {
                let x = cache_input(cache)?;
                let mut dx = dy.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                Ok((dx, None))
            }
            LayerSpec::Sigmoid => {
                let y = cache_output(cache)?;
                let mut dx = dy.clone();
                for (g, &s) in dx.data_mut().iter_mut().zip(y.data()) {
                    *g *= s * (1.0 - s);
                }
                Ok((dx, None))
            }
            LayerSpec::Softmax => {
                let y = cache_output(cache)?;
                let cols = *self.out_shape.last().unwrap();
                let mut dx = dy.clone();
                for (grow, yrow) in dx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, p)| g * p).sum();
                    for (g, p) in grow.iter_mut().zip(yrow) {
                        *g = p * (*g - dot);
                    }
                }
                Ok((dx, None))
            }
            LayerSpec::Flatten => {
                let b = dy.batch_len();
                let mut shape = vec![b];
                shape.extend_from_slice(&self.in_shape);
                Ok((dy.clone().reshaped(&shape)?, None))
            }
        }
    }
}

fn cache_input(cache: &LayerCache) -> Result<&Tensor> {
    match cache {
        LayerCache::Input(t) => Ok(t),
        _ => Err(Error::InvalidArgument("layer cache missing input".into())),
    }
}

fn cache_output(cache: &LayerCache) -> Result<&Tensor> {
    match cache {
        LayerCache::Output(t) => Ok(t),
        _ => Err(Error::InvalidArgument("layer cache missing output".into())),
    }
}

fn batch_flat(x: &Tensor) -> (usize, usize) {
    (x.batch_len(), x.item_shape().iter().product())
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// In-place numerically stable softmax of one row.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn dense_forward(x: &[f64], w: &[f64], bias: &[f64], y: &mut [f64], b: usize, d: usize, units: usize) {
    for bi in 0..b {
        let xr = &x[bi * d..(bi + 1) * d];
        let yr = &mut y[bi * units..(bi + 1) * units];
        yr.copy_from_slice(bias);
        for (i, &xv) in xr.iter().enumerate() {
            if xv != 0.0 {
                let wr = &w[i * units..(i + 1) * units];
                for (yo, wo) in yr.iter_mut().zip(wr) {
                    *yo += xv * wo;
                }
            }
        }
    }
}

fn dense_backward(
    x: &[f64], w: &[f64], dy: &[f64],
    dx: &mut [f64], dw: &mut [f64], db: &mut [f64],
    b: usize, d: usize, units: usize,
) {
    for bi in 0..b {
        let dyr = &dy[bi * units..(bi + 1) * units];
        let xr = &x[bi * d..(bi + 1) * d];
        let dxr = &mut dx[bi * d..(bi + 1) * d];
        for (o, &g) in dyr.iter().enumerate() {
            db[o] += g;
        }
        for i in 0..d {
            let wr = &w[i * units..(i + 1) * units];
            let mut acc = 0.0;
            for (g, wo) in dyr.iter().zip(wr) {
                acc += g * wo;
            }
            dxr[i] = acc;
            let xv = xr[i];
            if xv != 0.0 {
                let dwr = &mut dw[i * units..(i + 1) * units];
                for (dwo, g) in dwr.iter_mut().zip(dyr) {
                    *dwo += xv * g;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64], w: &[f64], bias: &[f64], y: &mut [f64],
    b: usize, h: usize, wd: usize, c: usize,
    oh: usize, ow: usize, f: usize, k: usize, s: usize,
) {
    let x_img = h * wd * c;
    let y_img = oh * ow * f;
    for bi in 0..b {
        let xb = &x[bi * x_img..(bi + 1) * x_img];
        let yb = &mut y[bi * y_img..(bi + 1) * y_img];
        for oy in 0..oh {
            for ox in 0..ow {
                let yr = &mut yb[(oy * ow + ox) * f..(oy * ow + ox + 1) * f];
                yr.copy_from_slice(bias);
                for ky in 0..k {
                    let iy = oy * s + ky;
                    for kx in 0..k {
                        let ix = ox * s + kx;
                        let xoff = (iy * wd + ix) * c;
                        let woff = (ky * k + kx) * c * f;
                        for ci in 0..c {
                            let xv = xb[xoff + ci];
                            if xv != 0.0 {
                                let wr = &w[woff + ci * f..woff + (ci + 1) * f];
                                for (yo, wo) in yr.iter_mut().zip(wr) {
                                    *yo += xv * wo;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64], w: &[f64], dy: &[f64],
    dx: &mut [f64], dw: &mut [f64], db: &mut [f64],
    b: usize, h: usize, wd: usize, c: usize,
    oh: usize, ow: usize, f: usize, k: usize, s: usize,
) {
    let x_img = h * wd * c;
    let y_img = oh * ow * f;
    for bi in 0..b {
        let xb = &x[bi * x_img..(bi + 1) * x_img];
        let dxb = &mut dx[bi * x_img..(bi + 1) * x_img];
        let dyb = &dy[bi * y_img..(bi + 1) * y_img];
        for oy in 0..oh {
            for ox in 0..ow {
                let dyr = &dyb[(oy * ow + ox) * f..(oy * ow + ox + 1) * f];
                for (fi, &g) in dyr.iter().enumerate() {
                    db[fi] += g;
                }
                for ky in 0..k {
                    let iy = oy * s + ky;
                    for kx in 0..k {
                        let ix = ox * s + kx;
                        let xoff = (iy * wd + ix) * c;
                        let woff = (ky * k + kx) * c * f;
                        for ci in 0..c {
                            let wr = &w[woff + ci * f..woff + (ci + 1) * f];
                            let mut acc = 0.0;
                            for (g, wo) in dyr.iter().zip(wr) {
                                acc += g * wo;
                            }
                            dxb[xoff + ci] += acc;
                            let xv = xb[xoff + ci];
                            if xv != 0.0 {
                                let dwr = &mut dw[woff + ci * f..woff + (ci + 1) * f];
                                for (dwo, g) in dwr.iter_mut().zip(dyr) {
                                    *dwo += xv * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn maxpool_forward(
    x: &[f64], y: &mut [f64], idx: &mut [u32], record: bool,
    b: usize, h: usize, wd: usize, c: usize,
    oh: usize, ow: usize, size: usize, stride: usize,
) {
    let x_img = h * wd * c;
    let y_img = oh * ow * c;
    for bi in 0..b {
        let xbase = bi * x_img;
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for ky in 0..size {
                        let iy = oy * stride + ky;
                        for kx in 0..size {
                            let ix = ox * stride + kx;
                            let xi = xbase + (iy * wd + ix) * c + ci;
                            if x[xi] > best {
                                best = x[xi];
                                best_i = xi;
                            }
                        }
                    }
                    let yi = bi * y_img + (oy * ow + ox) * c + ci;
                    y[yi] = best;
                    if record {
                        idx[yi] = best_i as u32;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_inference() {
        let conv = LayerSpec::Conv2d { filters: 8, kernel: 3, stride: 1 };
        assert_eq!(conv.infer_shape(&[20, 20, 1]).unwrap(), vec![18, 18, 8]);
        let pool = LayerSpec::MaxPool2d { size: 2, stride: 2 };
        assert_eq!(pool.infer_shape(&[18, 18, 8]).unwrap(), vec![9, 9, 8]);
        assert_eq!(pool.infer_shape(&[7, 7, 16]).unwrap(), vec![3, 3, 16]);
        assert!(LayerSpec::Dense { units: 4 }.infer_shape(&[2, 2]).is_err());
        assert_eq!(LayerSpec::Flatten.infer_shape(&[3, 3, 16]).unwrap(), vec![144]);
    }

    #[test]
    fn softmax_row_sums_to_one() {
        let mut row = [0.0, 1.0, -2.0, 5.0];
        softmax_row(&mut row);
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_extremes_stay_finite() {
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
