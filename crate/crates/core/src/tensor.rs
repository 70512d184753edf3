//! Dense row-major `f64` tensors and the raw kernels the autodiff graph is
//! built on. Nothing here tracks gradients.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    /// Panics if `data.len()` does not match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected 4-d tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected 3-d tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.shape.len());
        let st = strides(&self.shape);
        self.data[idx.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>()]
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn into_reshaped(self, shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Slice `[b]` along the leading axis.
    pub fn index0(&self, b: usize) -> Tensor {
        let inner = numel(&self.shape[1..]);
        Tensor::from_vec(&self.shape[1..], self.data[b * inner..(b + 1) * inner].to_vec())
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty());
        let inner = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * numel(&inner));
        for t in items {
            assert_eq!(t.shape, inner, "stack shape mismatch");
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Tensor::from_vec(&shape, data)
    }
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside the broadcast shape `out` (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                own[i - off]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of the broadcast shape.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for lin in 0..total {
        f(lin, oa, ob);
        // increment multi-index
        let mut d = nd;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape == b.shape {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(&a.shape, &b.shape)
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape, b.shape));
    let sa = broadcast_strides(&a.shape, &out);
    let sb = broadcast_strides(&b.shape, &out);
    let mut data = vec![0.0; numel(&out)];
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| {
        data[o] = f(a.data[ia], b.data[ib]);
    });
    Tensor::from_vec(&out, data)
}

/// Sums a broadcast-shaped gradient back down to `shape`.
pub fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape == shape {
        return grad.clone();
    }
    let out = grad.shape.clone();
    let st = broadcast_strides(shape, &out);
    let zero = vec![0; out.len()];
    let mut data = vec![0.0; numel(shape)];
    for_each_broadcast(&out, &st, &zero, |o, i, _| {
        data[i] += grad.data[o];
    });
    Tensor::from_vec(shape, data)
}

/// Generic axis permutation; `perm[i]` names the source axis of output axis `i`.
pub fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
    assert_eq!(perm.len(), x.ndim());
    let src_st = strides(&x.shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape[p]).collect();
    let st: Vec<usize> = perm.iter().map(|&p| src_st[p]).collect();
    let zero = vec![0; out_shape.len()];
    let mut data = vec![0.0; x.numel()];
    for_each_broadcast(&out_shape, &st, &zero, |o, i, _| data[o] = x.data[i]);
    Tensor::from_vec(&out_shape, data)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `c = alpha * a * b + beta * c` on strided row-major views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the views described by (m,k,rsa,csa), (k,n,rsb,csb) lie within
    // `a` and `b` by construction at every call site, and `c` holds m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Batched matmul: `a` is `[..., m, k]`; `b` is either `[k, n]` (shared) or
/// `[..., k, n]` with the same leading dims.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = last2(&a.shape);
    let (kb, n) = last2(&b.shape);
    assert_eq!(k, kb, "matmul inner dims {:?} x {:?}", a.shape, b.shape);
    let batch_shape = &a.shape[..a.ndim() - 2];
    let batch = numel(batch_shape);
    let mut out_shape = batch_shape.to_vec();
    out_shape.extend([m, n]);
    let mut out = vec![0.0; batch * m * n];
    if b.ndim() == 2 {
        gemm(
            batch * m,
            k,
            n,
            &a.data,
            k as isize,
            1,
            &b.data,
            n as isize,
            1,
            0.0,
            &mut out,
        );
    } else {
        assert_eq!(
            &b.shape[..b.ndim() - 2],
            batch_shape,
            "matmul batch dims {:?} x {:?}",
            a.shape,
            b.shape
        );
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data[i * m * k..],
                k as isize,
                1,
                &b.data[i * k * n..],
                n as isize,
                1,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
    }
    Tensor::from_vec(&out_shape, out)
}

/// Gradients of `matmul(a, b)` given upstream `dc`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> (Tensor, Tensor) {
    let (m, k) = last2(&a.shape);
    let n = b.shape[b.ndim() - 1];
    let batch = numel(&a.shape[..a.ndim() - 2]);
    let mut da = vec![0.0; a.numel()];
    let mut db = vec![0.0; b.numel()];
    if b.ndim() == 2 {
        let rows = batch * m;
        // da = dc · bᵀ
        gemm(rows, n, k, &dc.data, n as isize, 1, &b.data, 1, n as isize, 0.0, &mut da);
        // db = aᵀ · dc
        gemm(k, rows, n, &a.data, 1, k as isize, &dc.data, n as isize, 1, 0.0, &mut db);
    } else {
        for i in 0..batch {
            gemm(
                m,
                n,
                k,
                &dc.data[i * m * n..],
                n as isize,
                1,
                &b.data[i * k * n..],
                1,
                n as isize,
                0.0,
                &mut da[i * m * k..(i + 1) * m * k],
            );
            gemm(
                k,
                m,
                n,
                &a.data[i * m * k..],
                1,
                k as isize,
                &dc.data[i * m * n..],
                n as isize,
                1,
                0.0,
                &mut db[i * k * n..(i + 1) * k * n],
            );
        }
    }
    (
        Tensor::from_vec(&a.shape, da),
        Tensor::from_vec(&b.shape, db),
    )
}

fn last2(shape: &[usize]) -> (usize, usize) {
    assert!(shape.len() >= 2, "matmul needs >= 2 dims, got {shape:?}");
    (shape[shape.len() - 2], shape[shape.len() - 1])
}

/// Geometry of a 2-d convolution with square kernel, stride and zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// im2col for one image `[c, h, w]` into `[c*k*k, ho*wo]`.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: ConvGeom, cols: &mut [f64]) {
    let (ho, wo) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: ConvGeom, dx: &mut [f64]) {
    let (ho, wo) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `x: [b, cin, h, w]`, `w: [cout, cin, k, k]`, optional `bias: [cout]`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: ConvGeom) -> Tensor {
    let (b, cin, h, wd) = x.dims4();
    let (cout, wcin, kh, kw) = w.dims4();
    assert_eq!(cin, wcin, "conv2d channel mismatch {:?} vs {:?}", x.shape, w.shape);
    assert!(kh == g.kernel && kw == g.kernel, "conv2d kernel mismatch");
    let (ho, wo) = (g.out_size(h), g.out_size(wd));
    let kk = cin * g.kernel * g.kernel;
    let mut out = vec![0.0; b * cout * ho * wo];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * ho * wo]
    };
    for bi in 0..b {
        let xin = &x.data[bi * cin * h * wd..(bi + 1) * cin * h * wd];
        let colref: &[f64] = if g.is_pointwise() {
            xin
        } else {
            im2col(xin, cin, h, wd, g, &mut cols);
            &cols
        };
        let dst = &mut out[bi * cout * ho * wo..(bi + 1) * cout * ho * wo];
        gemm(
            cout,
            kk,
            ho * wo,
            &w.data,
            kk as isize,
            1,
            colref,
            (ho * wo) as isize,
            1,
            0.0,
            dst,
        );
        if let Some(bias) = bias {
            for (co, chunk) in dst.chunks_mut(ho * wo).enumerate() {
                let bv = bias.data[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::from_vec(&[b, cout, ho, wo], out)
}

/// Returns `(dx, dw, dbias)`; `dx` is only computed when `need_dx`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (b, cin, h, wd) = x.dims4();
    let (cout, _, _, _) = w.dims4();
    let (_, _, ho, wo) = dy.dims4();
    let kk = cin * g.kernel * g.kernel;
    let mut dw = vec![0.0; w.numel()];
    let mut db = vec![0.0; cout];
    let mut dx = if need_dx {
        vec![0.0; x.numel()]
    } else {
        Vec::new()
    };
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * ho * wo]
    };
    let mut dcols = vec![0.0; if need_dx { kk * ho * wo } else { 0 }];
    for bi in 0..b {
        let xin = &x.data[bi * cin * h * wd..(bi + 1) * cin * h * wd];
        let dyb = &dy.data[bi * cout * ho * wo..(bi + 1) * cout * ho * wo];
        for (co, chunk) in dyb.chunks(ho * wo).enumerate() {
            db[co] += chunk.iter().sum::<f64>();
        }
        let colref: &[f64] = if g.is_pointwise() {
            xin
        } else {
            im2col(xin, cin, h, wd, g, &mut cols);
            &cols
        };
        // dw += dy · colsᵀ
        gemm(
            cout,
            ho * wo,
            kk,
            dyb,
            (ho * wo) as isize,
            1,
            colref,
            1,
            (ho * wo) as isize,
            1.0,
            &mut dw,
        );
        if need_dx {
            let dxb = &mut dx[bi * cin * h * wd..(bi + 1) * cin * h * wd];
            if g.is_pointwise() {
                // dx = wᵀ · dy directly
                gemm(
                    kk,
                    cout,
                    ho * wo,
                    &w.data,
                    1,
                    kk as isize,
                    dyb,
                    (ho * wo) as isize,
                    1,
                    0.0,
                    dxb,
                );
            } else {
                gemm(
                    kk,
                    cout,
                    ho * wo,
                    &w.data,
                    1,
                    kk as isize,
                    dyb,
                    (ho * wo) as isize,
                    1,
                    0.0,
                    &mut dcols,
                );
                col2im(&dcols, cin, h, wd, g, dxb);
            }
        }
    }
    (
        need_dx.then(|| Tensor::from_vec(&x.shape, dx)),
        Tensor::from_vec(&w.shape, dw),
        Tensor::from_vec(&[cout], db),
    )
}

/// Source taps for one output coordinate of a bilinear resize.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

/// Half-pixel (align-corners disabled) source coordinates, clamped at the borders.
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            Tap {
                i0,
                i1,
                frac: src - i0 as f64,
            }
        })
        .collect()
}

/// Bilinear resize of the last two axes of a `[b, c, h, w]` tensor.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (b, c, h, w) = x.dims4();
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0; b * c * oh * ow];
    for p in 0..b * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, y) in ty.iter().enumerate() {
            let r0 = &src[y.i0 * w..(y.i0 + 1) * w];
            let r1 = &src[y.i1 * w..(y.i1 + 1) * w];
            for (ox, xt) in tx.iter().enumerate() {
                let top = r0[xt.i0] * (1.0 - xt.frac) + r0[xt.i1] * xt.frac;
                let bot = r1[xt.i0] * (1.0 - xt.frac) + r1[xt.i1] * xt.frac;
                dst[oy * ow + ox] = top * (1.0 - y.frac) + bot * y.frac;
            }
        }
    }
    Tensor::from_vec(&[b, c, oh, ow], out)
}

pub fn resize_bilinear_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let (b, c, oh, ow) = dy.dims4();
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut dx = vec![0.0; b * c * h * w];
    for p in 0..b * c {
        let g = &dy.data[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, y) in ty.iter().enumerate() {
            for (ox, xt) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (1.0 - y.frac);
                let bot = v * y.frac;
                d[y.i0 * w + xt.i0] += top * (1.0 - xt.frac);
                d[y.i0 * w + xt.i1] += top * xt.frac;
                d[y.i1 * w + xt.i0] += bot * (1.0 - xt.frac);
                d[y.i1 * w + xt.i1] += bot * xt.frac;
            }
        }
    }
    Tensor::from_vec(&[b, c, h, w], dx)
}

/// Non-overlapping `k×k` average pooling of a `[b, c, h, w]` tensor.
pub fn avg_pool(x: &Tensor, k: usize) -> Tensor {
    let (b, c, h, w) = x.dims4();
    assert!(h % k == 0 && w % k == 0, "avg_pool {k} does not divide {h}x{w}");
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; b * c * oh * ow];
    for p in 0..b * c {
        for y in 0..h {
            for xx in 0..w {
                out[p * oh * ow + (y / k) * ow + xx / k] += x.data[(p * h + y) * w + xx] * inv;
            }
        }
    }
    Tensor::from_vec(&[b, c, oh, ow], out)
}

pub fn avg_pool_backward(dy: &Tensor, k: usize) -> Tensor {
    let (b, c, oh, ow) = dy.dims4();
    let (h, w) = (oh * k, ow * k);
    let inv = 1.0 / (k * k) as f64;
    Tensor::from_fn(&[b, c, h, w], |i| {
        let xx = i % w;
        let y = (i / w) % h;
        let p = i / (h * w);
        dy.data[p * oh * ow + (y / k) * ow + xx / k] * inv
    })
}

/// Concatenates along `axis`.
pub fn concat(items: &[&Tensor], axis: usize) -> Tensor {
    assert!(!items.is_empty());
    let first = items[0].shape();
    let outer = numel(&first[..axis]);
    let inner = numel(&first[axis + 1..]);
    let mut total_axis = 0;
    for t in items {
        assert_eq!(t.ndim(), first.len(), "concat rank mismatch");
        for (d, (&a, &b)) in t.shape().iter().zip(first).enumerate() {
            assert!(d == axis || a == b, "concat shape mismatch {:?} vs {:?}", t.shape(), first);
        }
        total_axis += t.shape()[axis];
    }
    let mut shape = first.to_vec();
    shape[axis] = total_axis;
    let mut data = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for t in items {
            let len = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data[o * len..(o + 1) * len]);
        }
    }
    Tensor::from_vec(&shape, data)
}

/// Slice `[start, start+len)` along `axis`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let shape = x.shape();
    assert!(start + len <= shape[axis], "narrow out of range");
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * shape[axis] + start) * inner;
        data.extend_from_slice(&x.data[base..base + len * inner]);
    }
    Tensor::from_vec(&out_shape, data)
}

/// Adds `dy` into the `[start, start+len)` slab of a zero tensor shaped like `full`.
pub fn narrow_backward(dy: &Tensor, full: &[usize], axis: usize, start: usize) -> Tensor {
    let len = dy.shape()[axis];
    let outer = numel(&full[..axis]);
    let inner = numel(&full[axis + 1..]);
    let mut data = vec![0.0; numel(full)];
    for o in 0..outer {
        let base = (o * full[axis] + start) * inner;
        data[base..base + len * inner]
            .copy_from_slice(&dy.data[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_vec(full, data)
}

/// Row-wise softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Tensor {
    let n = *x.shape().last().expect("softmax on scalar");
    let mut data = x.data.clone();
    for row in data.chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::from_vec(x.shape(), data)
}
