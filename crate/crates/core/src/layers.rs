//! Convolutional building blocks on `[N, C, H, W]` tensors.
//!
//! Each layer is a [`Graph`] method that records its own backward rule. The raw
//! forward/backward loops live in [`kernels`] so tests can compare them against
//! direct-summation oracles.

use crate::scalar::Scalar;
use crate::tensor::{Graph, Op, Result, TensorError, TensorId};

/// Layer kinds exposed to the network builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    InstanceNorm,
    LeakyRelu,
    Sigmoid,
    AvgPool,
    Upsample,
    Concat,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Conv,
        LayerKind::InstanceNorm,
        LayerKind::LeakyRelu,
        LayerKind::Sigmoid,
        LayerKind::AvgPool,
        LayerKind::Upsample,
        LayerKind::Concat,
    ];
}

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "expected [N, C, H, W]".into(),
        }),
    }
}

impl<T: Scalar> Graph<T> {
    /// Zero-padded, stride-1 cross-correlation with an odd square kernel.
    ///
    /// `w` is `[Cout, Cin, k, k]`, `b` is `[Cout]`; spatial extents are preserved.
    pub fn conv2d(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let [n, cin, h, wd] = dims4("conv2d", self.shape(x))?;
        let [cout, wcin, k, k2] = dims4("conv2d", self.shape(w))?;
        if k != k2 || k % 2 == 0 {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                shape: self.shape(w).to_vec(),
                reason: "kernel must be odd and square".into(),
            });
        }
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: self.shape(x).to_vec(),
                right: self.shape(w).to_vec(),
            });
        }
        if self.shape(b) != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                left: self.shape(w).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let value = kernels::conv2d_forward(self.value(x), [n, cin, h, wd], self.value(w), cout, k, self.value(b));
        let rg = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        Ok(self.push(vec![n, cout, h, wd], value, rg, Op::Conv2d { x, w, b }))
    }

    /// Per-(sample, channel) plane normalization followed by a per-channel affine map.
    pub fn instance_norm(&mut self, x: TensorId, scale: TensorId, shift: TensorId, eps: T) -> Result<TensorId> {
        let dims = dims4("instance_norm", self.shape(x))?;
        for p in [scale, shift] {
            if self.shape(p) != [dims[1]] {
                return Err(TensorError::ShapeMismatch {
                    op: "instance_norm",
                    left: self.shape(x).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let (value, normalized, inv_std) =
            kernels::instance_norm_forward(self.value(x), dims, self.value(scale), self.value(shift), eps);
        let rg = self.requires_grad(x) || self.requires_grad(scale) || self.requires_grad(shift);
        let op = Op::InstanceNorm {
            x,
            scale,
            shift,
            normalized,
            inv_std,
        };
        Ok(self.push(dims.to_vec(), value, rg, op))
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: T) -> TensorId {
        let node = self.node(x);
        let value = node
            .value
            .iter()
            .map(|&v| if v >= T::zero() { v } else { slope * v })
            .collect();
        let (shape, rg) = (node.shape.clone(), node.requires_grad);
        self.push(shape, value, rg, Op::LeakyRelu(x, slope))
    }

    /// Logistic function, clamped so every output lies strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let node = self.node(x);
        let value = node.value.iter().map(|&v| kernels::sigmoid(v)).collect();
        let (shape, rg) = (node.shape.clone(), node.requires_grad);
        self.push(shape, value, rg, Op::Sigmoid(x))
    }

    /// Mean over non-overlapping 2x2 windows.
    pub fn avg_pool2(&mut self, x: TensorId) -> Result<TensorId> {
        let [n, c, h, w] = dims4("avg_pool2", self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidShape {
                op: "avg_pool2",
                shape: self.shape(x).to_vec(),
                reason: "spatial extents must be even".into(),
            });
        }
        let value = kernels::avg_pool2_forward(self.value(x), [n, c, h, w]);
        let rg = self.requires_grad(x);
        Ok(self.push(vec![n, c, h / 2, w / 2], value, rg, Op::AvgPool2(x)))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: TensorId) -> Result<TensorId> {
        let [n, c, h, w] = dims4("upsample2", self.shape(x))?;
        let value = kernels::upsample2_forward(self.value(x), [n, c, h, w]);
        let rg = self.requires_grad(x);
        Ok(self.push(vec![n, c, h * 2, w * 2], value, rg, Op::Upsample2(x)))
    }

    /// Channels of `a` followed by channels of `b`.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let [na, ca, ha, wa] = dims4("concat_channels", self.shape(a))?;
        let [nb, cb, hb, wb] = dims4("concat_channels", self.shape(b))?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let plane = ha * wa;
        let (va, vb) = (self.value(a), self.value(b));
        let mut value = Vec::with_capacity(na * (ca + cb) * plane);
        for i in 0..na {
            value.extend_from_slice(&va[i * ca * plane..(i + 1) * ca * plane]);
            value.extend_from_slice(&vb[i * cb * plane..(i + 1) * cb * plane]);
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(vec![na, ca + cb, ha, wa], value, rg, Op::Concat(a, b)))
    }

    /// Channels `start..start + len` of `x`.
    pub fn slice_channels(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let [n, c, h, w] = dims4("slice_channels", self.shape(x))?;
        if len == 0 || start + len > c {
            return Err(TensorError::InvalidShape {
                op: "slice_channels",
                shape: self.shape(x).to_vec(),
                reason: format!("channel range {start}..{} out of bounds", start + len),
            });
        }
        let plane = h * w;
        let src = self.value(x);
        let mut value = Vec::with_capacity(n * len * plane);
        for i in 0..n {
            let base = (i * c + start) * plane;
            value.extend_from_slice(&src[base..base + len * plane]);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(vec![n, len, h, w], value, rg, Op::SliceChannels { x, start }))
    }
}

/// Raw forward and backward loops over contiguous `[N, C, H, W]` buffers.
pub mod kernels {
    use crate::scalar::Scalar;

    /// Output index range `[lo, hi)` whose source `i + offset` stays inside `0..extent`.
    #[inline]
    fn valid_range(extent: usize, offset: isize) -> (usize, usize) {
        let lo = (-offset).max(0) as usize;
        let hi = (extent as isize - offset).clamp(0, extent as isize) as usize;
        (lo, hi.max(lo))
    }

    pub fn conv2d_forward<T: Scalar>(
        x: &[T],
        [n, cin, h, w]: [usize; 4],
        weight: &[T],
        cout: usize,
        k: usize,
        bias: &[T],
    ) -> Vec<T> {
        let hw = h * w;
        let pad = (k / 2) as isize;
        let mut out = vec![T::zero(); n * cout * hw];
        for ni in 0..n {
            for o in 0..cout {
                let out_plane = &mut out[(ni * cout + o) * hw..][..hw];
                out_plane.fill(bias[o]);
                for c in 0..cin {
                    let in_plane = &x[(ni * cin + c) * hw..][..hw];
                    let taps = &weight[(o * cin + c) * k * k..][..k * k];
                    for ky in 0..k {
                        let dy = ky as isize - pad;
                        let (y0, y1) = valid_range(h, dy);
                        for kx in 0..k {
                            let dx = kx as isize - pad;
                            let (x0, x1) = valid_range(w, dx);
                            let tap = taps[ky * k + kx];
                            let src0 = (x0 as isize + dx) as usize;
                            for y in y0..y1 {
                                let src_row = (y as isize + dy) as usize * w;
                                let dst = &mut out_plane[y * w + x0..y * w + x1];
                                let src = &in_plane[src_row + src0..][..x1 - x0];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += tap * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub struct ConvGrads<T> {
        pub x: Option<Vec<T>>,
        pub w: Option<Vec<T>>,
        pub b: Option<Vec<T>>,
    }

    pub fn conv2d_backward<T: Scalar>(
        x: &[T],
        x_shape: &[usize],
        weight: &[T],
        w_shape: &[usize],
        upstream: &[T],
        want_x: bool,
        want_params: bool,
    ) -> ConvGrads<T> {
        let (n, cin, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (cout, k) = (w_shape[0], w_shape[2]);
        let hw = h * w;
        let pad = (k / 2) as isize;
        let mut gx = want_x.then(|| vec![T::zero(); x.len()]);
        let mut gw = want_params.then(|| vec![T::zero(); weight.len()]);
        let mut gb = want_params.then(|| vec![T::zero(); cout]);
        for ni in 0..n {
            for o in 0..cout {
                let up = &upstream[(ni * cout + o) * hw..][..hw];
                if let Some(gb) = gb.as_mut() {
                    gb[o] += up.iter().copied().sum::<T>();
                }
                for c in 0..cin {
                    let in_base = (ni * cin + c) * hw;
                    let kbase = (o * cin + c) * k * k;
                    for ky in 0..k {
                        let dy = ky as isize - pad;
                        let (y0, y1) = valid_range(h, dy);
                        for kx in 0..k {
                            let dx = kx as isize - pad;
                            let (x0, x1) = valid_range(w, dx);
                            let src0 = (x0 as isize + dx) as usize;
                            let tap = weight[kbase + ky * k + kx];
                            let mut acc = T::zero();
                            for y in y0..y1 {
                                let src_row = in_base + (y as isize + dy) as usize * w + src0;
                                let g = &up[y * w + x0..y * w + x1];
                                if let Some(gx) = gx.as_mut() {
                                    let dst = &mut gx[src_row..src_row + (x1 - x0)];
                                    for (d, &gv) in dst.iter_mut().zip(g) {
                                        *d += tap * gv;
                                    }
                                }
                                if gw.is_some() {
                                    let src = &x[src_row..src_row + (x1 - x0)];
                                    for (&s, &gv) in src.iter().zip(g) {
                                        acc += s * gv;
                                    }
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                gw[kbase + ky * k + kx] += acc;
                            }
                        }
                    }
                }
            }
        }
        ConvGrads { x: gx, w: gw, b: gb }
    }

    /// Returns `(output, normalized input, per-plane inverse std)`.
    pub fn instance_norm_forward<T: Scalar>(
        x: &[T],
        [n, c, h, w]: [usize; 4],
        scale: &[T],
        shift: &[T],
        eps: T,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let hw = h * w;
        let count = T::of(hw as f64);
        let mut out = vec![T::zero(); x.len()];
        let mut normalized = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); n * c];
        for p in 0..n * c {
            let ch = p % c;
            let plane = &x[p * hw..][..hw];
            // Shifted by the first value so a constant plane centres to exact zeros.
            let pivot = plane[0];
            let offset = plane.iter().map(|&v| v - pivot).sum::<T>() / count;
            let var = plane.iter().map(|&v| (v - pivot - offset).powi(2)).sum::<T>() / count;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[p] = inv;
            let xn = &mut normalized[p * hw..][..hw];
            let y = &mut out[p * hw..][..hw];
            for ((xn, y), &v) in xn.iter_mut().zip(y.iter_mut()).zip(plane) {
                *xn = (v - pivot - offset) * inv;
                *y = scale[ch] * *xn + shift[ch];
            }
        }
        (out, normalized, inv_std)
    }

    pub struct NormGrads<T> {
        pub x: Option<Vec<T>>,
        pub scale: Vec<T>,
        pub shift: Vec<T>,
    }

    pub fn instance_norm_backward<T: Scalar>(
        shape: &[usize],
        scale: &[T],
        normalized: &[T],
        inv_std: &[T],
        upstream: &[T],
        want_x: bool,
    ) -> NormGrads<T> {
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let count = T::of(hw as f64);
        let mut gscale = vec![T::zero(); c];
        let mut gshift = vec![T::zero(); c];
        let mut gx = want_x.then(|| vec![T::zero(); upstream.len()]);
        for p in 0..n * c {
            let ch = p % c;
            let up = &upstream[p * hw..][..hw];
            let xn = &normalized[p * hw..][..hw];
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for (&g, &v) in up.iter().zip(xn) {
                sum_g += g;
                sum_gx += g * v;
            }
            gshift[ch] += sum_g;
            gscale[ch] += sum_gx;
            if let Some(gx) = gx.as_mut() {
                // dxhat = g * scale; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                let s = scale[ch];
                let mean_d = s * sum_g / count;
                let mean_dx = s * sum_gx / count;
                let dst = &mut gx[p * hw..][..hw];
                for ((d, &g), &v) in dst.iter_mut().zip(up).zip(xn) {
                    *d = inv_std[p] * (s * g - mean_d - v * mean_dx);
                }
            }
        }
        NormGrads {
            x: gx,
            scale: gscale,
            shift: gshift,
        }
    }

    #[inline]
    pub fn sigmoid<T: Scalar>(v: T) -> T {
        let y = if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
        let hi = T::one() - T::epsilon() / T::of(2.0);
        y.max(T::min_positive_value()).min(hi)
    }

    pub fn avg_pool2_forward<T: Scalar>(x: &[T], [n, c, h, w]: [usize; 4]) -> Vec<T> {
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::of(0.25);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in x.chunks(h * w).take(n * c) {
            for y in 0..oh {
                let r0 = &plane[2 * y * w..][..w];
                let r1 = &plane[(2 * y + 1) * w..][..w];
                for xo in 0..ow {
                    out.push((r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1]) * quarter);
                }
            }
        }
        out
    }

    pub fn avg_pool2_backward<T: Scalar>(in_shape: &[usize], upstream: &[T]) -> Vec<T> {
        let (h, w) = (in_shape[2], in_shape[3]);
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::of(0.25);
        let mut g = vec![T::zero(); upstream.len() * 4];
        for (p, up) in upstream.chunks(oh * ow).enumerate() {
            let plane = &mut g[p * h * w..][..h * w];
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] = up[(y / 2) * ow + x / 2] * quarter;
                }
            }
        }
        g
    }

    pub fn upsample2_forward<T: Scalar>(x: &[T], [n, c, h, w]: [usize; 4]) -> Vec<T> {
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in x.chunks(h * w).take(n * c) {
            for y in 0..oh {
                let row = &plane[(y / 2) * w..][..w];
                for xo in 0..ow {
                    out.push(row[xo / 2]);
                }
            }
        }
        out
    }

    pub fn upsample2_backward<T: Scalar>(in_shape: &[usize], upstream: &[T]) -> Vec<T> {
        let (h, w) = (in_shape[2], in_shape[3]);
        let ow = 2 * w;
        let mut g = vec![T::zero(); upstream.len() / 4];
        for (p, up) in upstream.chunks(4 * h * w).enumerate() {
            let plane = &mut g[p * h * w..][..h * w];
            for (i, &u) in up.iter().enumerate() {
                let (y, x) = (i / ow, i % ow);
                plane[(y / 2) * w + x / 2] += u;
            }
        }
        g
    }

    pub fn concat_backward<T: Scalar>(a_shape: &[usize], b_shape: &[usize], upstream: &[T]) -> (Vec<T>, Vec<T>) {
        let n = a_shape[0];
        let plane = a_shape[2] * a_shape[3];
        let (la, lb) = (a_shape[1] * plane, b_shape[1] * plane);
        let mut ga = Vec::with_capacity(n * la);
        let mut gb = Vec::with_capacity(n * lb);
        for chunk in upstream.chunks(la + lb) {
            ga.extend_from_slice(&chunk[..la]);
            gb.extend_from_slice(&chunk[la..]);
        }
        (ga, gb)
    }

    pub fn slice_channels_backward<T: Scalar>(
        in_shape: &[usize],
        start: usize,
        out_shape: &[usize],
        upstream: &[T],
    ) -> Vec<T> {
        let (n, c) = (in_shape[0], in_shape[1]);
        let plane = in_shape[2] * in_shape[3];
        let len = out_shape[1];
        let mut g = vec![T::zero(); n * c * plane];
        for i in 0..n {
            let dst = (i * c + start) * plane;
            g[dst..dst + len * plane].copy_from_slice(&upstream[i * len * plane..(i + 1) * len * plane]);
        }
        g
    }
}
