//! NHWC convolution kernels built on im2col + GEMM.
//!
//! Kernels are laid out `[kh, kw, cin, cout]`. A transposed convolution with
//! kernel `[kh, kw, cx, cy]` maps a `cy`-channel map to a `cx`-channel map and
//! is exactly the input-gradient of the forward convolution with the same
//! kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Element};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Geometry of a forward convolution `[n,h,w,cin] -> [n,oh,ow,cout]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// Output extent and leading pad for one spatial axis.
fn out_extent(len: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Some((out, total / 2))
        }
        Padding::Valid => (len >= k).then(|| ((len - k) / stride + 1, 0)),
    }
}

/// Extent produced by a transposed convolution along one axis.
pub(crate) fn transpose_extent(len: usize, k: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => len * stride,
        Padding::Valid => (len - 1) * stride + k,
    }
}

impl ConvGeom {
    pub fn forward(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let mismatch = || {
            Error::shape(
                "conv2d",
                format!("input {input:?} incompatible with kernel {kernel:?} (stride {stride})"),
            )
        };
        if input.len() != 4 || kernel.len() != 4 || stride == 0 || input[3] != kernel[2] {
            return Err(mismatch());
        }
        let (oh, pad_top) =
            out_extent(input[1], kernel[0], stride, padding).ok_or_else(mismatch)?;
        let (ow, pad_left) =
            out_extent(input[2], kernel[1], stride, padding).ok_or_else(mismatch)?;
        Ok(ConvGeom {
            n: input[0],
            h: input[1],
            w: input[2],
            cin: input[3],
            kh: kernel[0],
            kw: kernel[1],
            cout: kernel[3],
            stride,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    /// Geometry of the forward convolution whose input-gradient is the
    /// transposed convolution of `input` (`[n,ih,iw,cy]`) by `kernel`
    /// (`[kh,kw,cx,cy]`).
    pub fn transpose(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let mismatch = || {
            Error::shape(
                "conv_transpose2d",
                format!("input {input:?} incompatible with kernel {kernel:?} (stride {stride})"),
            )
        };
        if input.len() != 4 || kernel.len() != 4 || stride == 0 || input[3] != kernel[3] {
            return Err(mismatch());
        }
        if padding == Padding::Valid && (input[1] == 0 || input[2] == 0) {
            return Err(mismatch());
        }
        let h = transpose_extent(input[1], kernel[0], stride, padding);
        let w = transpose_extent(input[2], kernel[1], stride, padding);
        let geom = Self::forward(&[input[0], h, w, kernel[2]], kernel, stride, padding)?;
        debug_assert_eq!((geom.oh, geom.ow), (input[1], input[2]));
        Ok(geom)
    }

    pub fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.cin]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.oh, self.ow, self.cout]
    }

    /// Visits every (row, patch offset, input offset) triple that lands
    /// inside the image; padded taps are skipped.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let patch = self.patch();
        for b in 0..self.n {
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let row = (b * self.oh + oy) * self.ow + ox;
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let src =
                                ((b * self.h + iy as usize) * self.w + ix as usize) * self.cin;
                            let dst = row * patch + (ky * self.kw + kx) * self.cin;
                            f(row, dst, src);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn im2col<T: Element>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let mut cols = vec![T::zero(); g.rows() * g.patch()];
    let cin = g.cin;
    g.for_each_tap(|_, dst, src| {
        cols[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
    });
    cols
}

pub(crate) fn col2im<T: Element>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let mut x = vec![T::zero(); g.n * g.h * g.w * g.cin];
    let cin = g.cin;
    g.for_each_tap(|_, dst, src| {
        for (xv, &cv) in x[src..src + cin].iter_mut().zip(&cols[dst..dst + cin]) {
            *xv = *xv + cv;
        }
    });
    x
}

/// Returns the output and the im2col buffer (kept for the backward pass).
pub(crate) fn conv2d_forward<T: Element>(x: &[T], kernel: &[T], g: &ConvGeom) -> (Vec<T>, Vec<T>) {
    let cols = im2col(x, g);
    let mut out = vec![T::zero(); g.rows() * g.cout];
    gemm(
        g.rows(),
        g.patch(),
        g.cout,
        &cols,
        false,
        kernel,
        false,
        T::zero(),
        &mut out,
    );
    (out, cols)
}

pub(crate) fn conv2d_input_grad<T: Element>(gout: &[T], kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let mut dcols = vec![T::zero(); g.rows() * g.patch()];
    gemm(
        g.rows(),
        g.cout,
        g.patch(),
        gout,
        false,
        kernel,
        true,
        T::zero(),
        &mut dcols,
    );
    col2im(&dcols, g)
}

pub(crate) fn conv2d_kernel_grad<T: Element>(cols: &[T], gout: &[T], g: &ConvGeom) -> Vec<T> {
    let mut dk = vec![T::zero(); g.patch() * g.cout];
    gemm(
        g.patch(),
        g.rows(),
        g.cout,
        cols,
        true,
        gout,
        false,
        T::zero(),
        &mut dk,
    );
    dk
}
