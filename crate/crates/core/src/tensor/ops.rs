//! Forward kernels and their vector-Jacobian products.
//!
//! Every function here is pure. The `*_backward` functions take the upstream
//! gradient and return gradients for the differentiable inputs; the tape
//! wires them together.

use crate::error::{Error, Result};

use super::{ConvSpec, LinearSpec, Scalar, Shape, Tensor};

/// Output extent of a sliding window along one axis, or `None` when the
/// window does not fit into the padded input.
pub fn window_extent(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn window_shape(x: Shape, out_c: usize, kernel: usize, stride: usize, padding: usize, what: &str) -> Result<Shape> {
    match (
        window_extent(x.h, kernel, stride, padding),
        window_extent(x.w, kernel, stride, padding),
    ) {
        (Some(h), Some(w)) if x.h > 0 && x.w > 0 => Ok(Shape::new(x.n, out_c, h, w)),
        _ => Err(Error::shape(format!(
            "{what}: window {kernel}x{kernel} (stride {stride}, padding {padding}) does not fit input {x}"
        ))),
    }
}

/// Direct 2-D convolution with zero padding. `weight` is `(out, in, k, k)`.
pub fn conv2d_raw<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    if ws.c != xs.c {
        return Err(Error::config(format!(
            "conv2d expects {} input channels, got {}",
            ws.c, xs.c
        )));
    }
    if ws.h != ws.w {
        return Err(Error::config(format!("conv2d kernel must be square, got {}x{}", ws.h, ws.w)));
    }
    if let Some(b) = bias {
        if b.numel() != ws.n {
            return Err(Error::config(format!(
                "conv2d bias has {} entries for {} output channels",
                b.numel(),
                ws.n
            )));
        }
    }
    let k = ws.h;
    let os = window_shape(xs, ws.n, k, stride, padding, "conv2d")?;
    let mut out = vec![T::zero(); os.numel()];
    let xd = x.data();
    let wd = weight.data();
    for i in 0..xs.n {
        for oc in 0..os.c {
            let plane = &mut out[os.index(i, oc, 0, 0)..os.index(i, oc + 1, 0, 0)];
            if let Some(b) = bias {
                plane.iter_mut().for_each(|v| *v = b.data()[oc]);
            }
            for ic in 0..xs.c {
                let xin = &xd[xs.index(i, ic, 0, 0)..xs.index(i, ic + 1, 0, 0)];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wd[ws.index(oc, ic, ky, kx)];
                        for oy in 0..os.h {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                            let orow = &mut plane[oy * os.w..(oy + 1) * os.w];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix >= 0 && ix < xs.w as isize {
                                    *o = *o + wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, spec: &ConvSpec<T>) -> Result<Tensor<T>> {
    if x.shape().c != spec.in_channels {
        return Err(Error::config(format!(
            "conv2d expects {} input channels, got {}",
            spec.in_channels,
            x.shape().c
        )));
    }
    conv2d_raw(x, &spec.weight, spec.bias.as_ref(), spec.stride, spec.padding)
}

/// Gradients of `conv2d_raw` with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let xs = x.shape();
    let ws = weight.shape();
    let os = grad_out.shape();
    let k = ws.h;
    let mut gx = vec![T::zero(); xs.numel()];
    let mut gw = vec![T::zero(); ws.numel()];
    let mut gb = vec![T::zero(); ws.n];
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    for i in 0..xs.n {
        for oc in 0..os.c {
            let gplane = &gd[os.index(i, oc, 0, 0)..os.index(i, oc + 1, 0, 0)];
            gb[oc] = gplane.iter().fold(gb[oc], |a, &g| a + g);
            for ic in 0..xs.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ws.index(oc, ic, ky, kx);
                        let wv = wd[widx];
                        let mut acc = T::zero();
                        for oy in 0..os.h {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            for ox in 0..os.w {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                let g = gplane[oy * os.w + ox];
                                let xi = xs.index(i, ic, iy as usize, ix as usize);
                                acc = acc + g * xd[xi];
                                gx[xi] = gx[xi] + g * wv;
                            }
                        }
                        gw[widx] = gw[widx] + acc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(xs, gx).unwrap(),
        Tensor::from_vec(ws, gw).unwrap(),
        Tensor::from_vec([ws.n, 1, 1, 1], gb).unwrap(),
    )
}

/// Max pooling; padded positions count as negative infinity. Also returns,
/// for every output element, the flat input index it was taken from (the
/// first maximum in scan order on ties).
pub fn max_pool2d_with_indices<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::config(format!(
            "max_pool2d needs kernel >= 1 and stride >= 1, got kernel {kernel}, stride {stride}"
        )));
    }
    let xs = x.shape();
    let os = window_shape(xs, xs.c, kernel, stride, padding, "max_pool2d")?;
    let mut out = Vec::with_capacity(os.numel());
    let mut arg = Vec::with_capacity(os.numel());
    let xd = x.data();
    for i in 0..xs.n {
        for j in 0..xs.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= xs.h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= xs.w as isize {
                                continue;
                            }
                            let idx = xs.index(i, j, iy as usize, ix as usize);
                            if best_idx == usize::MAX || xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    if best_idx == usize::MAX {
                        return Err(Error::shape(format!(
                            "max_pool2d: output window ({oy}, {ox}) covers only padding of input {xs}"
                        )));
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    Ok((Tensor::from_vec(os, out)?, arg))
}

pub fn max_pool2d<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
    max_pool2d_with_indices(x, kernel, stride, padding).map(|(t, _)| t)
}

/// Scatters `grad_out` back to the recorded argmax positions.
pub fn scatter_backward<T: Scalar>(input: Shape, indices: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = vec![T::zero(); input.numel()];
    for (&idx, &go) in indices.iter().zip(grad_out.data()) {
        g[idx] = g[idx] + go;
    }
    Tensor::from_vec(input, g).unwrap()
}

fn require_spatial<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<()> {
    if x.shape().spatial() == 0 {
        return Err(Error::shape(format!("{what}: empty spatial extent in {}", x.shape())));
    }
    Ok(())
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    require_spatial(x, "global_avg_pool")?;
    let s = x.shape();
    let count = T::from_usize(s.spatial()).unwrap();
    let data = x
        .data()
        .chunks(s.spatial())
        .map(|plane| plane.iter().fold(T::zero(), |a, &v| a + v) / count)
        .collect();
    Tensor::from_vec([s.n, s.c, 1, 1], data)
}

pub fn global_avg_pool_backward<T: Scalar>(input: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let count = T::from_usize(input.spatial()).unwrap();
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / count, input.spatial()))
        .collect();
    Tensor::from_vec(input, data).unwrap()
}

pub fn global_max_pool_with_indices<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    require_spatial(x, "global_max_pool")?;
    let s = x.shape();
    let mut out = Vec::with_capacity(s.n * s.c);
    let mut arg = Vec::with_capacity(s.n * s.c);
    for (p, plane) in x.data().chunks(s.spatial()).enumerate() {
        let mut best = 0;
        for (k, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = k;
            }
        }
        out.push(plane[best]);
        arg.push(p * s.spatial() + best);
    }
    Ok((Tensor::from_vec([s.n, s.c, 1, 1], out)?, arg))
}

pub fn global_max_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    global_max_pool_with_indices(x).map(|(t, _)| t)
}

pub fn interpolate_nearest<T: Scalar>(x: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    if scale == 0 {
        return Err(Error::config("interpolate_nearest: scale must be >= 1"));
    }
    let s = x.shape();
    Ok(Tensor::from_fn([s.n, s.c, s.h * scale, s.w * scale], |i, j, y, xx| {
        x.at(i, j, y / scale, xx / scale)
    }))
}

pub fn interpolate_nearest_backward<T: Scalar>(input: Shape, scale: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let os = grad_out.shape();
    let mut g = vec![T::zero(); input.numel()];
    for i in 0..os.n {
        for j in 0..os.c {
            for y in 0..os.h {
                for x in 0..os.w {
                    let idx = input.index(i, j, y / scale, x / scale);
                    g[idx] = g[idx] + grad_out.at(i, j, y, x);
                }
            }
        }
    }
    Tensor::from_vec(input, g).unwrap()
}

/// `y = W x + b` for a single feature vector.
pub fn linear<T: Scalar>(x: &[T], spec: &LinearSpec<T>) -> Result<Vec<T>> {
    if x.len() != spec.in_features {
        return Err(Error::config(format!(
            "linear expects {} input features, got {}",
            spec.in_features,
            x.len()
        )));
    }
    let w = spec.weight.data();
    Ok((0..spec.out_features)
        .map(|o| {
            let row = &w[o * spec.in_features..(o + 1) * spec.in_features];
            let acc = row.iter().zip(x).fold(T::zero(), |a, (&wv, &xv)| a + wv * xv);
            match &spec.bias {
                Some(b) => acc + b.data()[o],
                None => acc,
            }
        })
        .collect())
}

/// Batched linear map over `(n, in, 1, 1)` feature tensors, weight `(out, in, 1, 1)`.
pub fn linear_batch<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.h != 1 || xs.w != 1 {
        return Err(Error::shape(format!("linear expects (n, features, 1, 1) input, got {xs}")));
    }
    conv2d_raw(x, weight, bias, 1, 0)
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: operand shapes differ, {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Elementwise (Hadamard) product.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, factor: T) -> Tensor<T> {
    x.map(|v| v * factor)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Scales every spatial position of channel `j` by `w[j]`, for all batch items.
pub fn mul_channelwise<T: Scalar>(x: &Tensor<T>, w: &[T]) -> Result<Tensor<T>> {
    let s = x.shape();
    if w.len() != s.c {
        return Err(Error::shape(format!(
            "mul_channelwise: {} weights for {} channels",
            w.len(),
            s.c
        )));
    }
    Ok(Tensor::from_fn(s, |i, j, y, xx| x.at(i, j, y, xx) * w[j]))
}

/// Per-sample channel scaling with weights shaped `(n, c, 1, 1)`.
pub fn scale_channels<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if w.shape() != Shape::new(s.n, s.c, 1, 1) {
        return Err(Error::shape(format!(
            "channel weights {} do not match feature map {s}",
            w.shape()
        )));
    }
    Ok(Tensor::from_fn(s, |i, j, y, xx| x.at(i, j, y, xx) * w.at(i, j, 0, 0)))
}

/// Gradients of `scale_channels` with respect to the map and the weights.
pub fn scale_channels_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let s = x.shape();
    let gx = Tensor::from_fn(s, |i, j, y, xx| grad_out.at(i, j, y, xx) * w.at(i, j, 0, 0));
    let gw_data = x
        .data()
        .chunks(s.spatial().max(1))
        .zip(grad_out.data().chunks(s.spatial().max(1)))
        .map(|(xp, gp)| xp.iter().zip(gp).fold(T::zero(), |a, (&xv, &gv)| a + xv * gv))
        .collect();
    (gx, Tensor::from_vec(w.shape(), gw_data).unwrap())
}

/// Rearranges `(n, C*r*r, h, w)` into `(n, C, r*h, r*w)`.
///
/// Output pixel `(row, col, ch)` reads input pixel `(row / r, col / r)` at
/// channel `C*r*(row % r) + C*(col % r) + ch`: the sub-pixel offset selects a
/// block of `C` channels.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::config(format!(
            "pixel_shuffle: channel count {} is not divisible by r^2 for r = {r}",
            s.c
        )));
    }
    let c_out = s.c / (r * r);
    Ok(Tensor::from_fn([s.n, c_out, s.h * r, s.w * r], |i, ch, y, xx| {
        x.at(i, c_out * (r * (y % r) + xx % r) + ch, y / r, xx / r)
    }))
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::shape(format!(
            "pixel_unshuffle: spatial extent {}x{} is not divisible by r = {r}",
            s.h, s.w
        )));
    }
    let c_in = s.c;
    Ok(Tensor::from_fn([s.n, c_in * r * r, s.h / r, s.w / r], |i, k, y, xx| {
        let offset = k / c_in;
        let ch = k % c_in;
        x.at(i, ch, y * r + offset / r, xx * r + offset % r)
    }))
}

/// Channels `start..start + len`.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if start + len > s.c {
        return Err(Error::shape(format!(
            "slice_channels: range {start}..{} exceeds {} channels",
            start + len,
            s.c
        )));
    }
    Ok(Tensor::from_fn([s.n, len, s.h, s.w], |i, j, y, xx| x.at(i, start + j, y, xx)))
}

pub fn slice_channels_backward<T: Scalar>(input: Shape, start: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let gs = grad_out.shape();
    Tensor::from_fn(input, |i, j, y, x| {
        if j >= start && j < start + gs.c {
            grad_out.at(i, j - start, y, x)
        } else {
            T::zero()
        }
    })
}

/// Top-left `h x w` window of every plane.
pub fn crop_spatial<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if h > s.h || w > s.w {
        return Err(Error::shape(format!("crop_spatial: {h}x{w} window exceeds input {s}")));
    }
    Ok(Tensor::from_fn([s.n, s.c, h, w], |i, j, y, xx| x.at(i, j, y, xx)))
}

pub fn crop_spatial_backward<T: Scalar>(input: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let gs = grad_out.shape();
    Tensor::from_fn(input, |i, j, y, x| {
        if y < gs.h && x < gs.w {
            grad_out.at(i, j, y, x)
        } else {
            T::zero()
        }
    })
}

/// Tiles an `(n, c, 1, 1)` tensor over an `h x w` grid.
pub fn broadcast_spatial<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::shape(format!("broadcast_spatial expects (n, c, 1, 1), got {s}")));
    }
    Ok(Tensor::from_fn([s.n, s.c, h, w], |i, j, _, _| x.at(i, j, 0, 0)))
}

pub fn spatial_sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let data = x
        .data()
        .chunks(s.spatial().max(1))
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v))
        .collect();
    Tensor::from_vec([s.n, s.c, 1, 1], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: [usize; 4], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_1x1_conv_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform([2, 3, 4, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::from_fn([3, 3, 1, 1], |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        let spec = ConvSpec::from_parts(w, Some(Tensor::zeros([3, 1, 1, 1])), 1, 0).unwrap();
        assert_eq!(conv2d(&x, &spec).unwrap(), x);
    }

    #[test]
    fn zero_input_conv_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Tensor::<f64>::uniform([2, 3, 3, 3], -1.0, 1.0, &mut rng);
        let b = t([2, 1, 1, 1], &[0.25, -3.0]);
        let spec = ConvSpec::from_parts(w, Some(b), 1, 1).unwrap();
        let y = conv2d(&Tensor::zeros([1, 3, 4, 4]), &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 4, 4));
        for yy in 0..4 {
            for xx in 0..4 {
                assert_eq!(y.at(0, 0, yy, xx), 0.25);
                assert_eq!(y.at(0, 1, yy, xx), -3.0);
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_names_both_counts() {
        let spec = ConvSpec::<f64>::zeros(4, 2, 3, true);
        let err = conv2d(&Tensor::zeros([1, 3, 4, 4]), &spec).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4') && msg.contains('3'), "{msg}");
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn strided_conv_output_extent() {
        let w = Tensor::<f64>::ones([1, 1, 3, 3]);
        let y = conv2d_raw(&Tensor::ones([1, 1, 7, 6]), &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 3));
        // corner window sees a 2x2 patch of ones
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn max_pool_single_window() {
        let y = max_pool2d(&t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), 2, 2, 0).unwrap();
        assert_eq!(y, t([1, 1, 1, 1], &[4.0]));
    }

    #[test]
    fn max_pool_constant_field() {
        let x = Tensor::<f64>::full([1, 2, 6, 6], 1.5);
        let y = max_pool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 3, 3));
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn max_pool_oversized_window_is_shape_error() {
        let err = max_pool2d(&Tensor::<f64>::zeros([1, 1, 2, 2]), 5, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(matches!(max_pool2d(&Tensor::<f64>::zeros([1, 1, 2, 2]), 0, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn max_pool_ties_route_to_first() {
        let x = t([1, 1, 2, 2], &[7.0, 7.0, 7.0, 7.0]);
        let (_, idx) = max_pool2d_with_indices(&x, 2, 2, 0).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn global_pools() {
        let x = t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        assert_eq!(global_max_pool(&x).unwrap().data(), &[4.0]);
        let c = Tensor::<f64>::full([2, 3, 3, 5], -0.75);
        assert!(global_avg_pool(&c).unwrap().data().iter().all(|&v| v == -0.75));
        assert!(global_max_pool(&c).unwrap().data().iter().all(|&v| v == -0.75));
        let empty = Tensor::<f64>::zeros([1, 1, 0, 3]);
        assert!(matches!(global_avg_pool(&empty), Err(Error::Shape(_))));
        assert!(matches!(global_max_pool(&empty), Err(Error::Shape(_))));
    }

    #[test]
    fn nearest_upsampling() {
        let x = t([1, 1, 1, 1], &[5.0]);
        assert_eq!(interpolate_nearest(&x, 2).unwrap(), Tensor::full([1, 1, 2, 2], 5.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = Tensor::<f64>::uniform([1, 2, 3, 3], -1.0, 1.0, &mut rng);
        assert_eq!(interpolate_nearest(&r, 1).unwrap(), r);
        assert!(matches!(interpolate_nearest(&r, 0), Err(Error::Config(_))));
    }

    #[test]
    fn linear_identity_and_bias() {
        let w = Tensor::from_fn([3, 3, 1, 1], |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        let spec = LinearSpec::from_parts(w, Some(t([3, 1, 1, 1], &[0.5, 1.0, -1.0]))).unwrap();
        assert_eq!(linear(&[0.0, 0.0, 0.0], &spec).unwrap(), vec![0.5, 1.0, -1.0]);
        let no_bias = LinearSpec::from_parts(spec.weight.clone(), None).unwrap();
        assert_eq!(linear(&[1.0, 2.0, 3.0], &no_bias).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(matches!(linear(&[1.0, 2.0], &spec), Err(Error::Config(_))));
    }

    #[test]
    fn elementwise_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::<f64>::uniform([1, 3, 2, 2], -1.0, 1.0, &mut rng);
        assert!(add(&a, &a.map(|v| -v)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(sigmoid(&Tensor::<f64>::zeros([1, 2, 2, 2])).data().iter().all(|&v| v == 0.5));
        assert_eq!(mul_channelwise(&a, &[1.0; 3]).unwrap(), a);
        assert!(matches!(mul_channelwise(&a, &[1.0; 2]), Err(Error::Shape(_))));
        assert!(matches!(add(&a, &Tensor::zeros([1, 3, 2, 1])), Err(Error::Shape(_))));
        assert_eq!(relu(&t([1, 1, 1, 2], &[-1.0, 2.0])).data(), &[0.0, 2.0]);
    }

    #[test]
    fn shuffle_shapes_and_errors() {
        let x = Tensor::<f64>::zeros([1, 8, 2, 2]);
        assert_eq!(pixel_shuffle(&x, 2).unwrap().shape(), Shape::new(1, 2, 4, 4));
        assert_eq!(pixel_unshuffle(&Tensor::<f64>::zeros([1, 2, 4, 4]), 2).unwrap().shape(), Shape::new(1, 8, 2, 2));
        let err = pixel_shuffle(&Tensor::<f64>::zeros([1, 6, 2, 2]), 2).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains('6') && err.to_string().contains("r = 2"));
        assert!(matches!(pixel_unshuffle(&Tensor::<f64>::zeros([1, 1, 3, 4]), 2), Err(Error::Shape(_))));
    }

    #[test]
    fn shuffle_with_unit_factor_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform([2, 3, 3, 2], -1.0, 1.0, &mut rng);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert_eq!(pixel_unshuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn shuffle_four_channels_by_hand() {
        // channel k goes to sub-pixel (k / 2, k % 2)
        let x = t([1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pixel_shuffle(&x, 2).unwrap(), t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    }
}
