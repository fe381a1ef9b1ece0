//! 2D cross-correlation over rank-3 feature maps, with stride and padding,
//! plus its input and kernel gradients.
//!
//! The hot path lowers each window to a row of a patch matrix and runs one
//! matrix product per batch; the kernel stack layout doubles as the weight
//! matrix so no reshuffling happens on either side.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use ndarray::{Array2, ArrayView2};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding chosen so the output grid has ceil(in/stride) positions,
    /// split evenly with the extra pixel after.
    Same,
    /// No padding; windows must fit entirely inside the input.
    Valid,
}

impl Padding {
    pub fn parse(name: &str) -> Option<Padding> {
        match name {
            "same" => Some(Padding::Same),
            "valid" => Some(Padding::Valid),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }
}

/// Filter weights of one convolution: `f_out` stacks of `f_in` square kernels.
/// Layout is `[out][in][kernel_row][kernel_col]`, row-major, which is exactly
/// the `f_out x (f_in * support * support)` weight matrix the patch product
/// needs.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelStack {
    pub f_out: usize,
    pub f_in: usize,
    pub support: usize,
    pub data: Vec<f64>,
}

impl KernelStack {
    pub fn zeros(f_out: usize, f_in: usize, support: usize) -> Self {
        KernelStack {
            f_out,
            f_in,
            support,
            data: vec![0.0; f_out * f_in * support * support],
        }
    }

    #[inline]
    pub fn idx(&self, out: usize, inp: usize, kr: usize, kc: usize) -> usize {
        ((out * self.f_in + inp) * self.support + kr) * self.support + kc
    }

    #[inline]
    pub fn at(&self, out: usize, inp: usize, kr: usize, kc: usize) -> f64 {
        self.data[self.idx(out, inp, kr, kc)]
    }

    #[inline]
    pub fn at_mut(&mut self, out: usize, inp: usize, kr: usize, kc: usize) -> &mut f64 {
        let i = self.idx(out, inp, kr, kc);
        &mut self.data[i]
    }

    fn cols(&self) -> usize {
        self.f_in * self.support * self.support
    }

    fn as_matrix(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.f_out, self.cols()), &self.data).unwrap()
    }
}

/// Output length along one spatial axis.
pub fn out_dim(in_dim: usize, support: usize, stride: usize, padding: Padding) -> Result<usize> {
    if stride == 0 {
        return Err(Error::BadStride);
    }
    match padding {
        Padding::Same => Ok(in_dim.div_ceil(stride)),
        Padding::Valid => {
            if in_dim < support {
                return Err(Error::ShapeMismatch(format!(
                    "valid padding needs input >= kernel, got {in_dim} < {support}"
                )));
            }
            Ok((in_dim - support) / stride + 1)
        }
    }
}

/// Zero rows/cols inserted before the first input pixel along one axis.
fn pad_before(in_dim: usize, out: usize, support: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Valid => 0,
        Padding::Same => {
            let needed = ((out - 1) * stride + support).saturating_sub(in_dim);
            needed / 2
        }
    }
}

struct ConvGeometry {
    out_rows: usize,
    out_cols: usize,
    pad_top: usize,
    pad_left: usize,
}

fn geometry(
    rows: usize,
    cols: usize,
    support: usize,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    let out_rows = out_dim(rows, support, stride, padding)?;
    let out_cols = out_dim(cols, support, stride, padding)?;
    Ok(ConvGeometry {
        out_rows,
        out_cols,
        pad_top: pad_before(rows, out_rows, support, stride, padding),
        pad_left: pad_before(cols, out_cols, support, stride, padding),
    })
}

fn check_batch(inputs: &[Tensor], kernels: &KernelStack) -> Result<()> {
    let first = inputs.first().ok_or(Error::EmptyBatch)?;
    if first.features != kernels.f_in {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, kernels expect {}",
            first.features, kernels.f_in
        )));
    }
    for t in inputs {
        if !t.same_shape(first) {
            return Err(Error::ShapeMismatch(format!(
                "batch mixes shapes {:?} and {:?}",
                first.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Lowers every output window of every sample to one row of a dense matrix.
/// Row b * (out_rows*out_cols) + r*out_cols + c holds the patch for sample b
/// at output position (r, c); column (i*S + kr)*S + kc holds input feature i
/// at kernel offset (kr, kc), zero where the window hangs over the border.
fn im2col(
    inputs: &[Tensor],
    support: usize,
    stride: usize,
    geo: &ConvGeometry,
) -> Array2<f64> {
    let t0 = &inputs[0];
    let (rows, cols, f_in) = t0.shape();
    let pix = geo.out_rows * geo.out_cols;
    let width = f_in * support * support;
    let mut m = Array2::<f64>::zeros((inputs.len() * pix, width));
    for (b, t) in inputs.iter().enumerate() {
        for orow in 0..geo.out_rows {
            let base_r = (orow * stride) as isize - geo.pad_top as isize;
            for ocol in 0..geo.out_cols {
                let base_c = (ocol * stride) as isize - geo.pad_left as isize;
                let row_idx = b * pix + orow * geo.out_cols + ocol;
                let mut out_row = m.row_mut(row_idx);
                let dst = out_row.as_slice_mut().unwrap();
                for kr in 0..support {
                    let in_r = base_r + kr as isize;
                    if in_r < 0 || in_r >= rows as isize {
                        continue;
                    }
                    for kc in 0..support {
                        let in_c = base_c + kc as isize;
                        if in_c < 0 || in_c >= cols as isize {
                            continue;
                        }
                        let src = (in_r as usize * cols + in_c as usize) * f_in;
                        for i in 0..f_in {
                            dst[(i * support + kr) * support + kc] = t.data[src + i];
                        }
                    }
                }
            }
        }
    }
    m
}

/// Scatters patch-matrix gradients back onto input tensors; the exact adjoint
/// of [`im2col`].
fn col2im(
    grad_cols: &Array2<f64>,
    batch: usize,
    rows: usize,
    cols: usize,
    f_in: usize,
    support: usize,
    stride: usize,
    geo: &ConvGeometry,
) -> Vec<Tensor> {
    let pix = geo.out_rows * geo.out_cols;
    let mut grads = vec![Tensor::zeros(rows, cols, f_in); batch];
    for b in 0..batch {
        let g = &mut grads[b];
        for orow in 0..geo.out_rows {
            let base_r = (orow * stride) as isize - geo.pad_top as isize;
            for ocol in 0..geo.out_cols {
                let base_c = (ocol * stride) as isize - geo.pad_left as isize;
                let row = grad_cols.row(b * pix + orow * geo.out_cols + ocol);
                let src = row.as_slice().unwrap();
                for kr in 0..support {
                    let in_r = base_r + kr as isize;
                    if in_r < 0 || in_r >= rows as isize {
                        continue;
                    }
                    for kc in 0..support {
                        let in_c = base_c + kc as isize;
                        if in_c < 0 || in_c >= cols as isize {
                            continue;
                        }
                        let dst = (in_r as usize * cols + in_c as usize) * f_in;
                        for i in 0..f_in {
                            g.data[dst + i] += src[(i * support + kr) * support + kc];
                        }
                    }
                }
            }
        }
    }
    grads
}

/// Cross-correlates a batch of equally shaped inputs with one kernel stack.
/// Output position (r, c) reads input rows r*stride - pad + kr, so kernels
/// are applied unflipped.
pub fn conv2d_batch(
    inputs: &[Tensor],
    kernels: &KernelStack,
    stride: usize,
    padding: Padding,
) -> Result<Vec<Tensor>> {
    check_batch(inputs, kernels)?;
    let (rows, cols, _) = inputs[0].shape();
    let geo = geometry(rows, cols, kernels.support, stride, padding)?;
    let m = im2col(inputs, kernels.support, stride, &geo);
    let out = m.dot(&kernels.as_matrix().t());
    let pix = geo.out_rows * geo.out_cols;
    let flat = out.into_raw_vec_and_offset().0;
    Ok((0..inputs.len())
        .map(|b| Tensor {
            rows: geo.out_rows,
            cols: geo.out_cols,
            features: kernels.f_out,
            data: flat[b * pix * kernels.f_out..(b + 1) * pix * kernels.f_out].to_vec(),
        })
        .collect())
}

pub fn conv2d(
    input: &Tensor,
    kernels: &KernelStack,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    Ok(conv2d_batch(std::slice::from_ref(input), kernels, stride, padding)?
        .pop()
        .unwrap())
}

/// Gradients of a batched cross-correlation: per-sample input gradients and
/// the kernel gradient summed over the whole batch.
pub fn conv2d_backward_batch(
    inputs: &[Tensor],
    kernels: &KernelStack,
    stride: usize,
    padding: Padding,
    grad_outs: &[Tensor],
) -> Result<(Vec<Tensor>, KernelStack)> {
    check_batch(inputs, kernels)?;
    if inputs.len() != grad_outs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs but {} output gradients",
            inputs.len(),
            grad_outs.len()
        )));
    }
    let (rows, cols, f_in) = inputs[0].shape();
    let geo = geometry(rows, cols, kernels.support, stride, padding)?;
    let pix = geo.out_rows * geo.out_cols;
    for g in grad_outs {
        if g.rows != geo.out_rows || g.cols != geo.out_cols || g.features != kernels.f_out {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?}, expected ({}, {}, {})",
                g.shape(),
                geo.out_rows,
                geo.out_cols,
                kernels.f_out
            )));
        }
    }

    let mut stacked = Array2::<f64>::zeros((inputs.len() * pix, kernels.f_out));
    for (b, g) in grad_outs.iter().enumerate() {
        let dst = &mut stacked.as_slice_mut().unwrap()
            [b * pix * kernels.f_out..(b + 1) * pix * kernels.f_out];
        dst.copy_from_slice(&g.data);
    }

    let m = im2col(inputs, kernels.support, stride, &geo);
    let grad_k = stacked.t().dot(&m);
    let mut grad_kernels = KernelStack::zeros(kernels.f_out, f_in, kernels.support);
    grad_kernels
        .data
        .copy_from_slice(grad_k.as_standard_layout().as_slice().unwrap());

    let grad_cols = stacked.dot(&kernels.as_matrix());
    let grad_inputs = col2im(
        &grad_cols,
        inputs.len(),
        rows,
        cols,
        f_in,
        kernels.support,
        stride,
        &geo,
    );
    Ok((grad_inputs, grad_kernels))
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &KernelStack,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor,
) -> Result<(Tensor, KernelStack)> {
    let (mut gi, gk) = conv2d_backward_batch(
        std::slice::from_ref(input),
        kernels,
        stride,
        padding,
        std::slice::from_ref(grad_out),
    )?;
    Ok((gi.pop().unwrap(), gk))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Direct quadruple-loop cross-correlation; the reference the lowered
    /// path must reproduce exactly.
    fn conv2d_naive(
        input: &Tensor,
        kernels: &KernelStack,
        stride: usize,
        padding: Padding,
    ) -> Tensor {
        let geo = geometry(input.rows, input.cols, kernels.support, stride, padding).unwrap();
        let mut out = Tensor::zeros(geo.out_rows, geo.out_cols, kernels.f_out);
        for orow in 0..geo.out_rows {
            for ocol in 0..geo.out_cols {
                for j in 0..kernels.f_out {
                    let mut acc = 0.0;
                    for i in 0..input.features {
                        for kr in 0..kernels.support {
                            let in_r =
                                (orow * stride + kr) as isize - geo.pad_top as isize;
                            if in_r < 0 || in_r >= input.rows as isize {
                                continue;
                            }
                            for kc in 0..kernels.support {
                                let in_c =
                                    (ocol * stride + kc) as isize - geo.pad_left as isize;
                                if in_c < 0 || in_c >= input.cols as isize {
                                    continue;
                                }
                                acc += input.at(in_r as usize, in_c as usize, i)
                                    * kernels.at(j, i, kr, kc);
                            }
                        }
                    }
                    *out.at_mut(orow, ocol, j) = acc;
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut Rng, rows: usize, cols: usize, features: usize) -> Tensor {
        let mut t = Tensor::zeros(rows, cols, features);
        for v in &mut t.data {
            *v = rng.normal();
        }
        t
    }

    fn random_stack(rng: &mut Rng, f_out: usize, f_in: usize, support: usize) -> KernelStack {
        let mut k = KernelStack::zeros(f_out, f_in, support);
        for v in &mut k.data {
            *v = rng.normal();
        }
        k
    }

    #[test]
    fn output_dims() {
        assert_eq!(out_dim(28, 7, 1, Padding::Same).unwrap(), 28);
        assert_eq!(out_dim(28, 7, 2, Padding::Same).unwrap(), 14);
        assert_eq!(out_dim(27, 7, 2, Padding::Same).unwrap(), 14);
        assert_eq!(out_dim(28, 7, 1, Padding::Valid).unwrap(), 22);
        assert_eq!(out_dim(28, 7, 2, Padding::Valid).unwrap(), 11);
        assert!(out_dim(5, 7, 1, Padding::Valid).is_err());
        assert!(matches!(out_dim(28, 7, 0, Padding::Same), Err(Error::BadStride)));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = Rng::new(7);
        let x = random_tensor(&mut rng, 6, 5, 1);
        let mut k = KernelStack::zeros(1, 1, 3);
        *k.at_mut(0, 0, 1, 1) = 1.0;
        let y = conv2d(&x, &k, 1, Padding::Same).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn kernels_apply_unflipped() {
        // A kernel with its only weight above center shifts the image down:
        // out(r, c) reads in(r - 1, c).
        let mut rng = Rng::new(8);
        let x = random_tensor(&mut rng, 5, 5, 1);
        let mut k = KernelStack::zeros(1, 1, 3);
        *k.at_mut(0, 0, 0, 1) = 1.0;
        let y = conv2d(&x, &k, 1, Padding::Same).unwrap();
        for r in 1..5 {
            for c in 0..5 {
                assert_eq!(y.at(r, c, 0), x.at(r - 1, c, 0));
            }
        }
        for c in 0..5 {
            assert_eq!(y.at(0, c, 0), 0.0);
        }
    }

    #[test]
    fn valid_three_by_three_dot_product() {
        let x = Tensor::from_vec(3, 3, 1, (1..=9).map(f64::from).collect()).unwrap();
        let mut k = KernelStack::zeros(1, 1, 3);
        for (i, v) in k.data.iter_mut().enumerate() {
            *v = (i + 1) as f64 * 0.1;
        }
        let y = conv2d(&x, &k, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), (1, 1, 1));
        let want: f64 = (1..=9).map(|i| i as f64 * i as f64 * 0.1).sum();
        assert!((y.data[0] - want).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = Rng::new(99);
        let cases = [
            (9, 9, 1, 4, 7, 1, Padding::Same),
            (9, 8, 2, 3, 3, 2, Padding::Same),
            (10, 10, 3, 2, 5, 2, Padding::Valid),
            (7, 11, 2, 2, 7, 1, Padding::Valid),
            (5, 5, 4, 4, 1, 1, Padding::Same),
            (6, 6, 1, 1, 5, 3, Padding::Same),
        ];
        for (rows, cols, f_in, f_out, s, stride, pad) in cases {
            let x = random_tensor(&mut rng, rows, cols, f_in);
            let k = random_stack(&mut rng, f_out, f_in, s);
            let fast = conv2d(&x, &k, stride, pad).unwrap();
            let slow = conv2d_naive(&x, &k, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b} ({rows}x{cols} s={s})");
            }
        }
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = Rng::new(3);
        let xs: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut rng, 8, 7, 3)).collect();
        let k = random_stack(&mut rng, 5, 3, 3);
        let batch = conv2d_batch(&xs, &k, 2, Padding::Same).unwrap();
        for (x, y) in xs.iter().zip(&batch) {
            let single = conv2d(x, &k, 2, Padding::Same).unwrap();
            assert_eq!(y, &single);
        }
    }

    #[test]
    fn backward_is_bilinear_adjoint() {
        // conv is linear in the input and in the kernels, so
        // <g, conv(x, W)> must equal both <grad_x, x> and <grad_W, W>.
        let mut rng = Rng::new(42);
        for (stride, pad) in [(1, Padding::Same), (2, Padding::Same), (1, Padding::Valid)] {
            let x = random_tensor(&mut rng, 9, 8, 3);
            let k = random_stack(&mut rng, 4, 3, 5);
            let y = conv2d(&x, &k, stride, pad).unwrap();
            let g = random_tensor(&mut rng, y.rows, y.cols, y.features);
            let (gx, gk) = conv2d_backward(&x, &k, stride, pad, &g).unwrap();
            let lhs: f64 = g.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
            let via_x: f64 = gx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
            let via_k: f64 = gk.data.iter().zip(&k.data).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {via_x}");
            assert!((lhs - via_k).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {via_k}");
        }
    }

    #[test]
    fn backward_kernel_gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let x = random_tensor(&mut rng, 6, 6, 2);
        let k = random_stack(&mut rng, 3, 2, 3);
        let g = {
            let y = conv2d(&x, &k, 2, Padding::Same).unwrap();
            random_tensor(&mut rng, y.rows, y.cols, y.features)
        };
        let (_, gk) = conv2d_backward(&x, &k, 2, Padding::Same, &g).unwrap();
        let h = 1e-6;
        let loss = |k: &KernelStack| -> f64 {
            let y = conv2d(&x, k, 2, Padding::Same).unwrap();
            y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum()
        };
        for probe in [0, 7, k.data.len() / 2, k.data.len() - 1] {
            let mut kp = k.clone();
            kp.data[probe] += h;
            let mut km = k.clone();
            km.data[probe] -= h;
            let fd = (loss(&kp) - loss(&km)) / (2.0 * h);
            assert!(
                (gk.data[probe] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "kernel grad [{probe}]: analytic {}, fd {fd}",
                gk.data[probe]
            );
        }
    }

    #[test]
    fn backward_batch_sums_kernel_gradients() {
        let mut rng = Rng::new(6);
        let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut rng, 6, 6, 2)).collect();
        let k = random_stack(&mut rng, 2, 2, 3);
        let gs: Vec<Tensor> = xs
            .iter()
            .map(|x| {
                let y = conv2d(x, &k, 1, Padding::Same).unwrap();
                random_tensor(&mut rng, y.rows, y.cols, y.features)
            })
            .collect();
        let (gxs, gk) = conv2d_backward_batch(&xs, &k, 1, Padding::Same, &gs).unwrap();
        let mut want = KernelStack::zeros(2, 2, 3);
        for (b, (x, g)) in xs.iter().zip(&gs).enumerate() {
            let (gx, gk1) = conv2d_backward(x, &k, 1, Padding::Same, g).unwrap();
            for (a, b2) in want.data.iter_mut().zip(&gk1.data) {
                *a += b2;
            }
            for (a, b2) in gxs[b].data.iter().zip(&gx.data) {
                assert!((a - b2).abs() <= 1e-12);
            }
        }
        for (a, b) in gk.data.iter().zip(&want.data) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(5, 5, 2);
        let k = KernelStack::zeros(1, 3, 3);
        assert!(matches!(
            conv2d(&x, &k, 1, Padding::Same),
            Err(Error::ShapeMismatch(_))
        ));
        let empty: Vec<Tensor> = vec![];
        let k2 = KernelStack::zeros(1, 2, 3);
        assert!(matches!(
            conv2d_batch(&empty, &k2, 1, Padding::Same),
            Err(Error::EmptyBatch)
        ));
    }
}
