//! 2-D cross-correlation with stride, zero padding, dilation and channel
//! groups. Regular, grouped, depthwise and pointwise convolutions are all the
//! same kernel with different [`ConvSpec`]s.
//!
//! The kernels loop `sample → group → out channel → in channel → tap → row`,
//! with contiguous inner loops over output columns. The loop order is fixed,
//! so results are bitwise reproducible, and a grouped convolution computes
//! exactly what its independent per-group convolutions would.

use alloc::vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Dense convolution, stride 1, no padding, no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
            has_bias: false,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1)
    }

    /// 3×3-style depthwise convolution with "same" padding for its dilation.
    pub fn depthwise(channels: usize, kernel: usize, dilation: usize) -> Self {
        Self::new(channels, channels, kernel)
            .groups(channels)
            .dilation(dilation)
            .same_padding()
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    /// Padding `dilation·(k−1)/2`, which preserves H×W at stride 1 for odd k.
    pub fn same_padding(mut self) -> Self {
        self.padding = self.dilation * (self.kernel - 1) / 2;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.in_channels == self.out_channels
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
            groups,
            ..
        } = *self;
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || dilation == 0 || groups == 0 {
            bail!(Spec, "conv spec has a zero field: {self:?}");
        }
        if in_channels % groups != 0 || out_channels % groups != 0 {
            bail!(
                Spec,
                "channels {in_channels}->{out_channels} are not divisible by {groups} groups"
            );
        }
        Ok(())
    }

    /// `[out, in / groups, k, k]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.kernel, self.kernel]
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Output extent along one axis: `⌊(len + 2p − d(k−1) − 1)/s⌋ + 1`.
    pub fn output_len(&self, len: usize) -> Result<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        if padded < span {
            bail!(
                Shape,
                "input extent {len} with padding {} is smaller than the dilated kernel span {span}",
                self.padding
            );
        }
        Ok((padded - span) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.output_len(h)?, self.output_len(w)?))
    }
}

/// Output indices `o` in `[lo, hi)` whose input index `o·stride + offset`
/// falls inside `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let last = in_len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(out_len as isize) };
    let lo = lo.min(out_len as isize) as usize;
    (lo, (hi as usize).max(lo))
}

/// Plane geometry; a 1×1 stride-1 unpadded conv is flattened to one long row.
#[derive(Clone, Copy)]
struct Geom {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    s: usize,
    p: isize,
    d: usize,
}

impl Geom {
    fn new(spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize) -> Self {
        if spec.kernel == 1 && spec.stride == 1 && spec.padding == 0 {
            return Self {
                h: 1,
                w: h * w,
                oh: 1,
                ow: h * w,
                s: 1,
                p: 0,
                d: 1,
            };
        }
        Self {
            h,
            w,
            oh,
            ow,
            s: spec.stride,
            p: spec.padding as isize,
            d: spec.dilation,
        }
    }

    /// Calls `f(out_row_start, in_row_start, out_col_range, in_col_start)` for
    /// every output row touched by tap `(kh, kw)`.
    #[inline]
    fn for_rows(&self, kh: usize, kw: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let row_off = (kh * self.d) as isize - self.p;
        let col_off = (kw * self.d) as isize - self.p;
        let (oh_lo, oh_hi) = valid_range(self.oh, self.h, self.s, row_off);
        let (ow_lo, ow_hi) = valid_range(self.ow, self.w, self.s, col_off);
        if ow_lo >= ow_hi {
            return;
        }
        let iw_lo = (ow_lo as isize * self.s as isize + col_off) as usize;
        for oh in oh_lo..oh_hi {
            let ih = (oh as isize * self.s as isize + row_off) as usize;
            f(oh * self.ow, ih * self.w, ow_lo, ow_hi, iw_lo);
        }
    }
}

fn check_inputs<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    spec.validate()?;
    let (n, c, h, wd) = x.dims4()?;
    if c != spec.in_channels {
        bail!(Shape, "conv expects {} input channels, got {c}", spec.in_channels);
    }
    if w.shape() != spec.weight_shape() {
        bail!(Shape, "conv weight shape {:?} != expected {:?}", w.shape(), spec.weight_shape());
    }
    match (b, spec.has_bias) {
        (Some(b), true) if b.shape() == [spec.out_channels] => {}
        (None, false) => {}
        (b, _) => bail!(
            Shape,
            "bias {:?} inconsistent with spec (has_bias = {}, {} out channels)",
            b.map(|t| t.shape().to_vec()),
            spec.has_bias,
            spec.out_channels
        ),
    }
    let (oh, ow) = spec.output_hw(h, wd)?;
    Ok((n, c, h, wd, oh, ow))
}

/// Direct convolution forward pass.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (n, cin, h, wd, oh, ow) = check_inputs(x, w, b, spec)?;
    let cout = spec.out_channels;
    let geom = Geom::new(spec, h, wd, oh, ow);
    let (cin_g, cout_g) = (cin / spec.groups, cout / spec.groups);
    let k = spec.kernel;
    let (in_plane, out_plane) = (h * wd, oh * ow);
    let xs = x.data();
    let ws = w.data();
    let mut out = vec![T::zero(); n * cout * out_plane];
    for s in 0..n {
        for g in 0..spec.groups {
            for oc in g * cout_g..(g + 1) * cout_g {
                let dst = &mut out[(s * cout + oc) * out_plane..][..out_plane];
                if let Some(b) = b {
                    dst.fill(b.data()[oc]);
                }
                for icg in 0..cin_g {
                    let ic = g * cin_g + icg;
                    let src = &xs[(s * cin + ic) * in_plane..][..in_plane];
                    let wbase = (oc * cin_g + icg) * k * k;
                    for kh in 0..k {
                        for kw in 0..k {
                            let wv = ws[wbase + kh * k + kw];
                            if geom.s == 1 {
                                geom.for_rows(kh, kw, |orow, irow, lo, hi, ilo| {
                                    let o = &mut dst[orow + lo..orow + hi];
                                    let i = &src[irow + ilo..irow + ilo + (hi - lo)];
                                    for (ov, &iv) in o.iter_mut().zip(i) {
                                        *ov += wv * iv;
                                    }
                                });
                            } else {
                                let st = geom.s;
                                geom.for_rows(kh, kw, |orow, irow, lo, hi, ilo| {
                                    for (j, ocol) in (lo..hi).enumerate() {
                                        dst[orow + ocol] += wv * src[irow + ilo + j * st];
                                    }
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, cout, oh, ow], out))
}

pub(crate) fn conv2d_backward_input<T: Scalar>(
    x_shape: &[usize],
    w: &Tensor<T>,
    grad: &Tensor<T>,
    spec: &ConvSpec,
) -> Tensor<T> {
    let (n, cin, h, wd) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (_, cout, oh, ow) = grad.dims4().expect("rank 4");
    let geom = Geom::new(spec, h, wd, oh, ow);
    let (cin_g, cout_g) = (cin / spec.groups, cout / spec.groups);
    let k = spec.kernel;
    let (in_plane, out_plane) = (h * wd, oh * ow);
    let ws = w.data();
    let gs = grad.data();
    let mut gx = vec![T::zero(); n * cin * in_plane];
    for s in 0..n {
        for g in 0..spec.groups {
            for oc in g * cout_g..(g + 1) * cout_g {
                let go = &gs[(s * cout + oc) * out_plane..][..out_plane];
                for icg in 0..cin_g {
                    let ic = g * cin_g + icg;
                    let dst = &mut gx[(s * cin + ic) * in_plane..][..in_plane];
                    let wbase = (oc * cin_g + icg) * k * k;
                    for kh in 0..k {
                        for kw in 0..k {
                            let wv = ws[wbase + kh * k + kw];
                            if geom.s == 1 {
                                geom.for_rows(kh, kw, |orow, irow, lo, hi, ilo| {
                                    let o = &go[orow + lo..orow + hi];
                                    let i = &mut dst[irow + ilo..irow + ilo + (hi - lo)];
                                    for (iv, &ov) in i.iter_mut().zip(o) {
                                        *iv += wv * ov;
                                    }
                                });
                            } else {
                                let st = geom.s;
                                geom.for_rows(kh, kw, |orow, irow, lo, hi, ilo| {
                                    for (j, ocol) in (lo..hi).enumerate() {
                                        dst[irow + ilo + j * st] += wv * go[orow + ocol];
                                    }
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(x_shape.to_vec(), gx)
}

pub(crate) fn conv2d_backward_weight<T: Scalar>(
    x: &Tensor<T>,
    w_shape: &[usize],
    grad: &Tensor<T>,
    spec: &ConvSpec,
) -> Tensor<T> {
    let (n, cin, h, wd) = x.dims4().expect("rank 4");
    let (_, cout, oh, ow) = grad.dims4().expect("rank 4");
    let geom = Geom::new(spec, h, wd, oh, ow);
    let (cin_g, cout_g) = (cin / spec.groups, cout / spec.groups);
    let k = spec.kernel;
    let (in_plane, out_plane) = (h * wd, oh * ow);
    let xs = x.data();
    let gs = grad.data();
    let mut gw = vec![T::zero(); w_shape.iter().product()];
    for s in 0..n {
        for g in 0..spec.groups {
            for oc in g * cout_g..(g + 1) * cout_g {
                let go = &gs[(s * cout + oc) * out_plane..][..out_plane];
                for icg in 0..cin_g {
                    let ic = g * cin_g + icg;
                    let src = &xs[(s * cin + ic) * in_plane..][..in_plane];
                    let wbase = (oc * cin_g + icg) * k * k;
                    for kh in 0..k {
                        for kw in 0..k {
                            let mut acc = T::zero();
                            if geom.s == 1 {
                                geom.for_rows(kh, kw, |orow, irow, lo, hi, ilo| {
                                    let o = &go[orow + lo..orow + hi];
                                    let i = &src[irow + ilo..irow + ilo + (hi - lo)];
                                    let mut row = T::zero();
                                    for (&ov, &iv) in o.iter().zip(i) {
                                        row += ov * iv;
                                    }
                                    acc += row;
                                });
                            } else {
                                let st = geom.s;
                                geom.for_rows(kh, kw, |orow, irow, lo, hi, ilo| {
                                    for (j, ocol) in (lo..hi).enumerate() {
                                        acc += go[orow + ocol] * src[irow + ilo + j * st];
                                    }
                                });
                            }
                            gw[wbase + kh * k + kw] += acc;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(w_shape.to_vec(), gw)
}

pub(crate) fn conv2d_backward_bias<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = grad.dims4().expect("rank 4");
    let plane = h * w;
    let mut gb = vec![T::zero(); c];
    for s in 0..n {
        for (ch, acc) in gb.iter_mut().enumerate() {
            let base = (s * c + ch) * plane;
            *acc += grad.data()[base..base + plane].iter().fold(T::zero(), |a, &v| a + v);
        }
    }
    Tensor::from_parts(vec![c], gb)
}

impl<T: Scalar> Graph<T> {
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, spec: *spec }))
    }

    /// Depthwise `k×k` convolution with "same" padding at `dilation`, then a
    /// 1×1 pointwise convolution. Both convolutions are bias-free.
    pub fn depthwise_separable(&mut self, x: Var, dw: Var, pw: Var, dilation: usize) -> Result<Var> {
        let c = self.shape(x).get(1).copied().unwrap_or(0);
        let dw_shape = self.shape(dw);
        if dw_shape.len() != 4 || dw_shape[1] != 1 || dw_shape[2] != dw_shape[3] {
            bail!(Shape, "depthwise weight must be [C, 1, k, k], got {dw_shape:?}");
        }
        let k = dw_shape[2];
        let pw_shape = self.shape(pw);
        if pw_shape.len() != 4 || pw_shape[2] != 1 || pw_shape[3] != 1 {
            bail!(Shape, "pointwise weight must be [Cout, Cin, 1, 1], got {pw_shape:?}");
        }
        let cout = pw_shape[0];
        let mid = self.conv2d(x, dw, None, &ConvSpec::depthwise(c, k, dilation))?;
        self.conv2d(mid, pw, None, &ConvSpec::pointwise(c, cout))
    }
}
